"""Candidate that floods stdout to exercise the log tail bound."""
import json
import pathlib

for i in range(20000):
    print(f"step {i:06d} loss nan-adjacent noise padding padding padding")
print("FINALexpected-tail-markerLINE")
pathlib.Path("metrics.json").write_text(json.dumps({"loss": 0.1}), encoding="utf-8")
