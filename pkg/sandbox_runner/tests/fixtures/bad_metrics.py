"""Candidate that writes a metrics document that is not JSON."""
import pathlib

pathlib.Path("metrics.json").write_text("accuracy: high", encoding="utf-8")
