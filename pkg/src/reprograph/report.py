"""Run-report rendering: delimited summary plus matplotlib figures.

Consumes the artifact tree a reproduction run persists (report.json,
per-target refinement/injection histories) and writes, side by side in one
directory: report.csv, a gap-trajectory figure per target, a code-origin
breakdown chart, and optionally bound-sweep curves from a simulation CSV.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")  # file rendering only; no display server in scope

import matplotlib.pyplot as plt

from .errors import ReprographError
from .serialize import read_json

CSV_COLUMNS = (
    "target",
    "initial_gap",
    "refined_gap",
    "final_gap",
    "iterations",
    "converged",
    "degraded",
    "reuse_pct",
    "adapt_pct",
    "new_pct",
)

_KIND_COLORS = {"reuse": "#2a9d8f", "adapt": "#e9c46a", "new": "#e76f51"}


def _report_rows(report: Mapping[str, Any]) -> list[dict[str, Any]]:
    rows = []
    for target in sorted(report["targets"]):
        entry = report["targets"][target]
        breakdown = entry["code_breakdown"]
        rows.append(
            {
                "target": target,
                "initial_gap": entry["initial_gap"],
                "refined_gap": entry["refined_gap"],
                "final_gap": entry["final_gap"],
                "iterations": entry["iterations"],
                "converged": entry["converged"],
                "degraded": entry["degraded"],
                "reuse_pct": breakdown["reuse_pct"],
                "adapt_pct": breakdown["adapt_pct"],
                "new_pct": breakdown["new_pct"],
            }
        )
    return rows


def write_report_csv(report: Mapping[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(_report_rows(report))
    return path


def _trajectory(run_dir: Path, target: str) -> list[tuple[int, float]]:
    """Gap per executed iteration: best refinement attempt, then the
    injected pass appended with continuing iteration numbers."""
    target_dir = run_dir / "targets" / target
    refinement = read_json(target_dir / "refinement.json")
    best = refinement["attempts"][refinement["best_attempt"]]
    points = [(step["iteration"], step["gap"]) for step in best["history"]]
    injection_path = target_dir / "injection.json"
    if injection_path.is_file():
        injection = read_json(injection_path)
        extra = injection.get("final_history") or []
        offset = points[-1][0] + 1 if points else 0
        points.extend(
            (offset + step["iteration"], step["gap"]) for step in extra
        )
    return points


def render_gap_trajectory(run_dir: str | Path, target: str, out_path: str | Path) -> Path:
    run_dir, out_path = Path(run_dir), Path(out_path)
    points = _trajectory(run_dir, target)
    if not points:
        raise ReprographError(f"target {target!r} has no executed iterations")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    xs, ys = zip(*points)
    ax.plot(xs, ys, marker="o", color="#264653")
    ax.set_xlabel("executed iteration")
    ax.set_ylabel("performance gap (%)")
    ax.set_ylim(-5, 105)
    ax.set_title(f"gap trajectory: {target}")
    ax.grid(True, alpha=0.3)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_code_breakdown(report: Mapping[str, Any], out_path: str | Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = _report_rows(report)
    if not rows:
        raise ReprographError("report contains no targets")
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(rows)), 4))
    targets = [row["target"] for row in rows]
    bottoms = [0.0] * len(rows)
    for kind in ("reuse", "adapt", "new"):
        values = [row[f"{kind}_pct"] for row in rows]
        ax.bar(targets, values, bottom=bottoms, label=kind, color=_KIND_COLORS[kind])
        bottoms = [b + v for b, v in zip(bottoms, values)]
    ax.set_ylabel("share of final code lines (%)")
    ax.set_ylim(0, 105)
    ax.set_title("code origin per target")
    ax.legend()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def read_sweep_csv(path: str | Path) -> list[dict[str, Any]]:
    with Path(path).open(encoding="utf-8", newline="") as handle:
        rows = list(csv.DictReader(handle))
    if not rows:
        raise ReprographError(f"sweep file {path} is empty")
    return [
        {
            "family": row["family"],
            "lambda": float(row["lambda"]),
            "K": int(row["K"]),
            "trials": int(row["trials"]),
            "empirical": float(row["empirical"]),
            "bound": float(row["bound"]),
            "stderr": float(row["stderr"]),
        }
        for row in rows
    ]


def render_bound_sweep(sweep_csv: str | Path, out_path: str | Path) -> Path:
    """Empirical violation rate vs the analytic bound, one panel per noise
    family, one line pair per ensemble size."""
    rows = read_sweep_csv(sweep_csv)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    families = sorted({row["family"] for row in rows})
    fig, axes = plt.subplots(
        1, len(families), figsize=(5.5 * len(families), 4), squeeze=False
    )
    for ax, family in zip(axes[0], families):
        subset = [row for row in rows if row["family"] == family]
        for k in sorted({row["K"] for row in subset}):
            line = sorted(
                (row for row in subset if row["K"] == k),
                key=lambda row: row["lambda"],
            )
            lams = [row["lambda"] for row in line]
            ax.plot(
                lams, [row["empirical"] for row in line],
                marker="o", label=f"empirical K={k}",
            )
            ax.plot(
                lams, [row["bound"] for row in line],
                linestyle="--", label=f"bound K={k}",
            )
        ax.set_yscale("log")
        ax.set_xlabel("risk-aversion weight")
        ax.set_ylabel("violation probability")
        ax.set_title(family)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def generate_report(
    run_dir: str | Path,
    out_dir: str | Path | None = None,
    sweep_csv: str | Path | None = None,
) -> dict[str, Any]:
    """Render everything for one completed run; returns the written paths."""
    run_dir = Path(run_dir)
    report_path = run_dir / "report.json"
    if not report_path.is_file():
        raise ReprographError(f"no report.json under {run_dir}")
    report = read_json(report_path)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    written: dict[str, Any] = {"figures": []}
    written["csv"] = str(write_report_csv(report, out_dir / "report.csv"))
    for target in sorted(report["targets"]):
        fig_path = render_gap_trajectory(
            run_dir, target, out_dir / f"gap_trajectory_{target}.png"
        )
        written["figures"].append(str(fig_path))
    written["figures"].append(
        str(render_code_breakdown(report, out_dir / "code_breakdown.png"))
    )
    if sweep_csv is not None:
        written["figures"].append(
            str(render_bound_sweep(sweep_csv, out_dir / "bound_sweep.png"))
        )
    return written
