"""Command-line surface: subcommands, config precedence, exit codes."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

import fixture_pipeline as fx
from reprograph.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, EXIT_VALIDATION, main


@pytest.fixture()
def corpus(tmp_path) -> dict[str, str]:
    graph_path = fx.build_corpus(tmp_path / "corpus")
    profile_path = fx.write_profile(tmp_path / "corpus", plan_repeats=10)
    return {
        "graph": str(graph_path),
        "profile": str(profile_path),
        "out": str(tmp_path / "out"),
    }


def run_flags(corpus: dict[str, str]) -> list[str]:
    return [
        "--graph", corpus["graph"],
        "--out", corpus["out"],
        "--seed", "7",
        "--mock-profile", corpus["profile"],
        "--attempts", "1",
        "--budget", "3",
        "--reviewers", "3",
    ]


def test_reproduce_subcommand_runs_full_pipeline(corpus, capsys):
    code = main(["reproduce", *run_flags(corpus)])
    assert code == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["targets"] == [fx.TARGET]
    assert out["mean_final_gap"] == 0.0
    assert Path(out["report"]).is_file()


def test_prune_subcommand_emits_neighborhood(corpus, capsys):
    code = main(["prune", *run_flags(corpus), "--target", fx.TARGET])
    assert code == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["target_id"] == fx.TARGET
    assert len(doc["members"]) == 3
    assert abs(sum(m["weight"] for m in doc["members"]) - 1.0) < 1e-9


def test_prune_requires_exactly_one_target(corpus, capsys):
    assert main(["prune", *run_flags(corpus)]) == EXIT_CONFIG
    assert (
        main(
            ["prune", *run_flags(corpus),
             "--target", fx.TARGET, "--target", fx.NEIGHBOR_ENCODER]
        )
        == EXIT_CONFIG
    )
    assert "exactly one" in capsys.readouterr().err


def test_aggregate_subcommand_emits_selections(corpus, capsys):
    code = main(["aggregate", *run_flags(corpus), "--target", fx.TARGET])
    assert code == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    chosen = {row["unit_name"]: row for row in doc["selected"]}
    assert chosen["build_encoder"]["kind"] == "reuse"
    assert [row["unit_name"] for row in doc["deferred"]] == ["training_loop"]


def test_refine_subcommand_reports_gaps(corpus, capsys):
    code = main(["refine", *run_flags(corpus), "--target", fx.TARGET])
    assert code == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc == {
        "target": fx.TARGET,
        "initial_gap": 100.0,
        "refined_gap": 0.0,
        "iterations": 1,
        "converged": True,
    }


def test_config_file_supplies_fields_and_flags_override(corpus, tmp_path, capsys):
    config = tmp_path / "run.yaml"
    config.write_text(
        "\n".join(
            [
                f"graph_path: {corpus['graph']}",
                f"output_dir: {corpus['out']}",
                f"mock_profile: {corpus['profile']}",
                "seed: 999",
                "attempts: 1",
                "budget: 3",
                "reviewers: 3",
                f"targets: [{fx.TARGET}]",
            ]
        ),
        encoding="utf-8",
    )
    code = main(["reproduce", "--config", str(config), "--seed", "7"])
    assert code == EXIT_OK
    capsys.readouterr()
    report = json.loads(
        (Path(corpus["out"]) / "report.json").read_text(encoding="utf-8")
    )
    assert report["config"]["seed"] == 7  # flag beat the file value


def test_config_file_unknown_key_is_config_error(corpus, tmp_path, capsys):
    config = tmp_path / "run.yaml"
    config.write_text("grph_path: nowhere\n", encoding="utf-8")
    assert main(["reproduce", "--config", str(config)]) == EXIT_CONFIG
    assert "unknown config keys" in capsys.readouterr().err


def test_missing_seed_for_mock_is_config_error(corpus, capsys):
    flags = [f for f in run_flags(corpus) if f not in ("--seed", "7")]
    assert main(["reproduce", *flags]) == EXIT_CONFIG
    assert "seed" in capsys.readouterr().err


def test_stage_failure_exit_code(corpus, capsys):
    graph_path = Path(corpus["graph"])
    records = [json.loads(line) for line in graph_path.read_text().splitlines()]
    for record in records:
        record.pop("official_metrics", None)
    graph_path.write_text(
        "\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n"
    )
    assert main(["reproduce", *run_flags(corpus)]) == EXIT_STAGE
    assert "stage failure" in capsys.readouterr().err


def test_unknown_target_is_validation_failure(corpus, capsys):
    code = main(["reproduce", *run_flags(corpus), "--target", "p_missing"])
    assert code == EXIT_VALIDATION
    assert "validation failure" in capsys.readouterr().err


def test_train_kb_subcommand(corpus, capsys):
    code = main(["train-kb", *run_flags(corpus), "--epochs", "1"])
    assert code == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["best_epoch"] == 1
    assert Path(doc["manifest"]).is_file()


def test_simulate_bounds_subcommand(tmp_path, capsys):
    code = main(
        [
            "simulate-bounds",
            "--out", str(tmp_path / "bounds"),
            "--lambdas", "1,2",
            "--ks", "1,5",
            "--trials", "2000",
            "--seed", "3",
        ]
    )
    assert code == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["rows"] == 8
    assert doc["violations_above_bound"] == 0
    assert Path(doc["csv"]).is_file()
    assert Path(doc["figure"]).read_bytes()[:4] == b"\x89PNG"


def test_simulate_bounds_rejects_unknown_family(tmp_path, capsys):
    code = main(
        [
            "simulate-bounds",
            "--out", str(tmp_path / "bounds"),
            "--families", "cauchy",
            "--trials", "10",
        ]
    )
    assert code == EXIT_CONFIG
    assert "cauchy" in capsys.readouterr().err


def test_report_subcommand_renders_run(corpus, tmp_path, capsys):
    assert main(["reproduce", *run_flags(corpus)]) == EXIT_OK
    capsys.readouterr()
    report_dir = tmp_path / "rendered"
    code = main(["report", "--run", corpus["out"], "--out", str(report_dir)])
    assert code == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert Path(doc["csv"]).is_file()
    assert (report_dir / "code_breakdown.png").is_file()
    assert (report_dir / f"gap_trajectory_{fx.TARGET}.png").is_file()


def test_report_subcommand_missing_run_is_validation_failure(tmp_path, capsys):
    code = main(["report", "--run", str(tmp_path / "nowhere")])
    assert code == EXIT_VALIDATION


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == EXIT_CONFIG


def test_entry_point_is_wired():
    from reprograph import cli

    assert callable(cli.main)
