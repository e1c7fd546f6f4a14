"""Command-line surface.

Subcommands run the pipeline (whole or up to a named stage), train knowledge
bases, simulate the pruning bound, and render reports. A config file supplies
RunConfig fields; any flag given on the command line overrides the file.
Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 validation
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from itertools import product
from pathlib import Path
from typing import Any

import yaml

from .errors import PipelineConfigError, ReprographError, StageFailureError
from .pipeline import RunConfig, config_from_mapping, reproduce, reproduce_all, train_knowledge
from .serialize import canonical_dumps, read_json
from .ssgp import NOISE_FAMILIES, BoundSimConfig, sweep_rows, write_sweep_csv

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_VALIDATION = 4

# flag destination -> RunConfig field
_FLAG_FIELDS = (
    "graph_path",
    "output_dir",
    "backend",
    "seed",
    "reviewers",
    "lam",
    "k_keep",
    "beta",
    "budget",
    "threshold",
    "attempts",
    "exec_timeout",
    "epochs",
    "top_k",
    "min_val_runs",
    "retries",
    "entry_file",
    "knowledge_dir",
    "mock_profile",
    "sandbox_command",
    "strict_split",
    "live_base_url",
    "live_model",
    "live_auth_env",
    "live_timeout",
    "live_temperature",
)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML/JSON file of run settings")
    parser.add_argument("--graph", dest="graph_path", help="graph JSONL file")
    parser.add_argument("--out", dest="output_dir", help="artifact directory")
    parser.add_argument("--target", action="append", default=None,
                        help="target paper id (repeatable)")
    parser.add_argument("--backend", choices=("mock", "live"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--reviewers", type=int)
    parser.add_argument("--lam", type=float, help="risk-aversion weight")
    parser.add_argument("--k-keep", dest="k_keep", type=int)
    parser.add_argument("--beta", type=float, help="reuse bias")
    parser.add_argument("--budget", type=int, help="repair rounds per attempt")
    parser.add_argument("--threshold", type=float, help="convergence gap (%%)")
    parser.add_argument("--attempts", type=int)
    parser.add_argument("--exec-timeout", dest="exec_timeout", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--top-k", dest="top_k", type=int)
    parser.add_argument("--min-val-runs", dest="min_val_runs", type=int)
    parser.add_argument("--retries", type=int)
    parser.add_argument("--entry-file", dest="entry_file")
    parser.add_argument("--knowledge-dir", dest="knowledge_dir")
    parser.add_argument("--mock-profile", dest="mock_profile",
                        help="JSON behavior profile for the mock backend")
    parser.add_argument("--sandbox-command", dest="sandbox_command",
                        help="comma-separated external runner argv")
    parser.add_argument("--strict-split", dest="strict_split",
                        action="store_const", const=True, default=None)
    parser.add_argument("--live-base-url", dest="live_base_url")
    parser.add_argument("--live-model", dest="live_model")
    parser.add_argument("--live-auth-env", dest="live_auth_env")
    parser.add_argument("--live-timeout", dest="live_timeout", type=float)
    parser.add_argument("--live-temperature", dest="live_temperature", type=float)


def _load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise PipelineConfigError(f"cannot read config file: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise PipelineConfigError(f"malformed config file {path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise PipelineConfigError(f"config file {path} must hold a key-value map")
    return doc


def resolve_config(args: argparse.Namespace) -> RunConfig:
    doc = _load_config_file(args.config)
    overrides: dict[str, Any] = {
        name: getattr(args, name, None) for name in _FLAG_FIELDS
    }
    if getattr(args, "target", None):
        overrides["targets"] = tuple(args.target)
    return config_from_mapping(doc, overrides)


def _single_target(cfg: RunConfig) -> str:
    if len(cfg.targets) != 1:
        raise PipelineConfigError(
            f"this subcommand needs exactly one --target, got {len(cfg.targets)}"
        )
    return cfg.targets[0]


def _emit(doc: Any) -> None:
    print(canonical_dumps(doc))


def _cmd_prune(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    target = _single_target(cfg)
    reproduce(cfg, target, stop_after="ssgp")
    _emit(read_json(Path(cfg.output_dir) / "targets" / target / "neighborhood.json"))
    return EXIT_OK


def _cmd_aggregate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    target = _single_target(cfg)
    reproduce(cfg, target, stop_after="aggregate")
    _emit(read_json(Path(cfg.output_dir) / "targets" / target / "aggregation.json"))
    return EXIT_OK


def _cmd_refine(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    target = _single_target(cfg)
    reproduce(cfg, target, stop_after="refine")
    doc = read_json(Path(cfg.output_dir) / "targets" / target / "refinement.json")
    _emit(
        {
            "target": target,
            "initial_gap": doc["initial_gap"],
            "refined_gap": doc["refined_gap"],
            "iterations": doc["iterations"],
            "converged": doc["converged"],
        }
    )
    return EXIT_OK


def _cmd_reproduce(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    report = reproduce_all(cfg)
    _emit(
        {
            "report": str(Path(cfg.output_dir) / "report.json"),
            "targets": sorted(report["targets"]),
            "mean_final_gap": report["mean_final_gap"],
        }
    )
    return EXIT_OK


def _cmd_train_kb(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    manifest = train_knowledge(cfg, task_name=args.task, domain=args.domain)
    _emit(
        {
            "manifest": str(Path(cfg.output_dir) / "training" / "manifest.json"),
            "best_epoch": manifest["best_epoch"],
            "epochs": [
                {"epoch": e["epoch"], "mean_val_gap": e["mean_val_gap"]}
                for e in manifest["epochs"]
            ],
        }
    )
    return EXIT_OK


def _floats(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part]


def _ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _cmd_simulate_bounds(args: argparse.Namespace) -> int:
    families = [part for part in args.families.split(",") if part]
    for family in families:
        if family not in NOISE_FAMILIES:
            raise PipelineConfigError(
                f"unknown noise family {family!r}; pick from {NOISE_FAMILIES}"
            )
    lams, ks = _floats(args.lambdas), _ints(args.ks)
    if not families or not lams or not ks:
        raise PipelineConfigError("families, lambdas, and ks must be non-empty")
    configs = [
        BoundSimConfig(
            noise_family=family,
            lam=lam,
            k=k,
            trials=args.trials,
            seed=args.seed,
            tail_exponent=args.tail_exponent,
            scale_c=args.scale_c,
        )
        for family, lam, k in product(families, lams, ks)
    ]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = sweep_rows(configs)
    csv_path = out_dir / "sweep.csv"
    write_sweep_csv(rows, csv_path)
    figure_path = None
    if args.figure:
        from .report import render_bound_sweep

        figure_path = str(render_bound_sweep(csv_path, out_dir / "bound_sweep.png"))
    _emit(
        {
            "csv": str(csv_path),
            "figure": figure_path,
            "rows": len(rows),
            "violations_above_bound": sum(
                1 for row in rows if row["empirical"] > row["bound"] + 3 * row["stderr"]
            ),
        }
    )
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    from .report import generate_report

    written = generate_report(args.run, args.out, sweep_csv=args.sweep)
    _emit(written)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reprograph",
        description=(
            "Graph-guided reproduction pipeline: prune citation neighbors, "
            "aggregate their code, refine against execution feedback, and "
            "inject induced knowledge."
        ),
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, doc in (
        ("prune", _cmd_prune, "rank, prune, and weight one target's neighbors"),
        ("aggregate", _cmd_aggregate, "assemble the initial implementation"),
        ("refine", _cmd_refine, "run the execution-feedback repair loop"),
        ("reproduce", _cmd_reproduce, "run the full pipeline for the targets"),
        ("train-kb", _cmd_train_kb, "induce knowledge bases over epochs"),
    ):
        cmd = sub.add_parser(name, help=doc)
        _add_run_flags(cmd)
        if name == "train-kb":
            cmd.add_argument("--task", default="training")
            cmd.add_argument("--domain", default="unknown")
        cmd.set_defaults(func=func)

    bounds = sub.add_parser(
        "simulate-bounds", help="Monte Carlo check of the pruning tail bound"
    )
    bounds.add_argument("--families", default=",".join(NOISE_FAMILIES))
    bounds.add_argument("--lambdas", default="0.5,1,2,3")
    bounds.add_argument("--ks", default="1,5,10")
    bounds.add_argument("--trials", type=int, default=100_000)
    bounds.add_argument("--seed", type=int, default=0)
    bounds.add_argument("--tail-exponent", dest="tail_exponent",
                        type=float, default=3.0)
    bounds.add_argument("--scale-c", dest="scale_c", type=float, default=1.0)
    bounds.add_argument("--out", required=True, help="output directory")
    bounds.add_argument("--no-figure", dest="figure",
                        action="store_false", default=True)
    bounds.set_defaults(func=_cmd_simulate_bounds)

    report = sub.add_parser(
        "report", help="render CSV and figures for a completed run"
    )
    report.add_argument("--run", required=True, help="run output directory")
    report.add_argument("--out", default=None, help="report directory")
    report.add_argument("--sweep", default=None,
                        help="optional sweep.csv to plot alongside")
    report.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PipelineConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailureError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ReprographError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
