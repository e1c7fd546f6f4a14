"""Report rendering: delimited summary and figure files."""

from __future__ import annotations

import csv
from pathlib import Path

import pytest

import fixture_pipeline as fx
from reprograph.agent_io import MockAgentBackend
from reprograph.errors import ReprographError
from reprograph.pipeline import RunConfig, reproduce_all
from reprograph.report import (
    CSV_COLUMNS,
    generate_report,
    read_sweep_csv,
    render_bound_sweep,
    render_code_breakdown,
    render_gap_trajectory,
    write_report_csv,
)
from reprograph.ssgp import BoundSimConfig, sweep_rows, write_sweep_csv

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("run")
    graph_path = fx.build_corpus(root / "corpus")
    cfg = RunConfig(
        graph_path=str(graph_path),
        output_dir=str(root / "out"),
        seed=7,
        attempts=1,
        budget=3,
        reviewers=3,
    )
    backend = MockAgentBackend(seed=7, profile=fx.profile())
    reproduce_all(cfg, backend=backend)
    return Path(cfg.output_dir)


def test_generate_report_writes_csv_and_figures(completed_run, tmp_path):
    out_dir = tmp_path / "report"
    written = generate_report(completed_run, out_dir)

    csv_path = Path(written["csv"])
    assert csv_path == out_dir / "report.csv"
    with csv_path.open(newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [tuple(row) for row in [rows[0]]][0] == CSV_COLUMNS
    assert len(rows) == 1
    row = rows[0]
    assert row["target"] == fx.TARGET
    assert float(row["final_gap"]) == 0.0
    assert float(row["initial_gap"]) == 100.0
    total = float(row["reuse_pct"]) + float(row["adapt_pct"]) + float(row["new_pct"])
    assert abs(total - 100.0) < 0.1

    figures = [Path(p) for p in written["figures"]]
    assert out_dir / f"gap_trajectory_{fx.TARGET}.png" in figures
    assert out_dir / "code_breakdown.png" in figures
    for path in figures:
        assert path.read_bytes()[:8] == PNG_MAGIC, path


def test_generate_report_requires_report_json(tmp_path):
    with pytest.raises(ReprographError, match="report.json"):
        generate_report(tmp_path)


def test_render_gap_trajectory_single_target(completed_run, tmp_path):
    out = render_gap_trajectory(completed_run, fx.TARGET, tmp_path / "traj.png")
    assert out.read_bytes()[:8] == PNG_MAGIC


def test_render_code_breakdown_rejects_empty_report(tmp_path):
    with pytest.raises(ReprographError, match="no targets"):
        render_code_breakdown({"targets": {}}, tmp_path / "x.png")


def test_write_report_csv_orders_targets(tmp_path):
    entry = {
        "initial_gap": 100.0,
        "refined_gap": 5.0,
        "final_gap": 5.0,
        "iterations": 2,
        "converged": True,
        "degraded": False,
        "code_breakdown": {"reuse_pct": 50.0, "adapt_pct": 25.0, "new_pct": 25.0},
    }
    report = {"targets": {"p_b": entry, "p_a": entry}}
    path = write_report_csv(report, tmp_path / "report.csv")
    with path.open(newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [row["target"] for row in rows] == ["p_a", "p_b"]


def test_bound_sweep_roundtrip_and_figure(tmp_path):
    configs = [
        BoundSimConfig(noise_family=family, lam=lam, k=k, trials=2_000, seed=3)
        for family in ("bounded_variance", "sub_gaussian")
        for lam in (1.0, 2.0)
        for k in (1, 5)
    ]
    rows = sweep_rows(configs)
    csv_path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, csv_path)

    parsed = read_sweep_csv(csv_path)
    assert len(parsed) == len(rows)
    assert parsed[0]["family"] == "bounded_variance"
    assert {row["K"] for row in parsed} == {1, 5}

    figure = render_bound_sweep(csv_path, tmp_path / "bound_sweep.png")
    assert figure.read_bytes()[:8] == PNG_MAGIC


def test_read_sweep_csv_rejects_empty(tmp_path):
    path = tmp_path / "sweep.csv"
    path.write_text("family,lambda,K,trials,empirical,bound,stderr\n")
    with pytest.raises(ReprographError, match="empty"):
        read_sweep_csv(path)
