"""Command-line behavior: exit codes, artifacts, determinism, agreement."""

import csv
import filecmp
import json
import shutil

import pytest

from aerograph import cli
from aerograph.manifest import load_manifest


def run_cli(*argv):
    return cli.main(list(argv))


# ---------------------------------------------------------------------------
# Usage and exit codes


def test_no_command_is_usage_error(capsys):
    assert run_cli() == 1
    assert "usage error" in capsys.readouterr().err


def test_unknown_command_is_usage_error():
    assert run_cli("conjure") == 1


def test_missing_required_flag_is_usage_error():
    assert run_cli("ingest", "--cases", "x.csv") == 1


def test_bad_synth_days_is_usage_error(tmp_path):
    assert run_cli("synth", "--out", str(tmp_path), "--days", "5") == 1


def test_missing_dataset_is_data_error(tmp_path, capsys):
    code = run_cli(
        "ingest", "--cases", str(tmp_path / "nope.csv"),
        "--flights", str(tmp_path / "nope2.csv"),
    )
    assert code == 2


def test_malformed_dataset_is_data_error(tmp_path, demo_data):
    bad = tmp_path / "cases.csv"
    bad.write_text("date,region,cases\n2023-01-01,Narnia,5\n")
    code = run_cli(
        "ingest", "--cases", str(bad), "--flights", str(demo_data / "flights.csv")
    )
    assert code == 2


def test_missing_run_dir_is_data_error(tmp_path):
    assert run_cli("bias", "--run", str(tmp_path / "ghost")) == 2


# ---------------------------------------------------------------------------
# ingest / synth


def test_ingest_reports_window_count(demo_data, capsys):
    assert run_cli(
        "ingest", "--cases", str(demo_data / "cases.csv"),
        "--flights", str(demo_data / "flights.csv"),
    ) == 0
    out = capsys.readouterr().out
    assert "training windows" in out
    count = int(next(line for line in out.splitlines() if "training windows" in line).split()[0])
    assert count > 40


def test_env_data_dir_resolves_relative_paths(demo_data, monkeypatch):
    monkeypatch.setenv("AEROGRAPH_DATA_DIR", str(demo_data))
    assert run_cli("ingest", "--cases", "cases.csv", "--flights", "flights.csv") == 0


def test_synth_is_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert run_cli("synth", "--out", str(tmp_path / sub), "--days", "40",
                       "--seed", "11") == 0
    assert filecmp.cmp(tmp_path / "a" / "cases.csv", tmp_path / "b" / "cases.csv",
                       shallow=False)
    assert filecmp.cmp(tmp_path / "a" / "flights.csv", tmp_path / "b" / "flights.csv",
                       shallow=False)


# ---------------------------------------------------------------------------
# train and the run directory


def test_run_directory_layout(demo_run):
    assert (demo_run / "manifest.json").exists()
    for i in range(2):
        assert (demo_run / "checkpoints" / f"model_{i:03d}.ckpt").exists()
        assert (demo_run / "checkpoints" / f"report_{i:03d}.json").exists()
    assert (demo_run / "bias_factors.json").exists()
    assert (demo_run / "sensitivity.csv").exists()
    assert (demo_run / "sensitivity.json").exists()
    assert (demo_run / "policy.csv").exists()
    assert (demo_run / "policy_sweep.json").exists()


def test_artifacts_embed_manifest_hash(demo_run):
    manifest = load_manifest(str(demo_run))
    for name in ("bias_factors.json", "sensitivity.json", "policy_sweep.json"):
        with open(demo_run / name) as fh:
            assert json.load(fh)["manifest_hash"] == manifest.hash


def test_train_twice_gives_byte_identical_checkpoints(demo_data, tmp_path):
    args = [
        "train", "--cases", str(demo_data / "cases.csv"),
        "--flights", str(demo_data / "flights.csv"),
        "--ensemble", "1", "--seed", "5", "--epochs", "6",
    ]
    assert run_cli(*args, "--out", str(tmp_path / "r1")) == 0
    assert run_cli(*args, "--out", str(tmp_path / "r2")) == 0
    assert filecmp.cmp(
        tmp_path / "r1" / "checkpoints" / "model_000.ckpt",
        tmp_path / "r2" / "checkpoints" / "model_000.ckpt",
        shallow=False,
    )
    # created_at differs between the runs, the content hash must not
    assert load_manifest(str(tmp_path / "r1")).hash == load_manifest(str(tmp_path / "r2")).hash


def test_tampered_artifact_is_rejected(demo_run, tmp_path):
    copy = tmp_path / "run"
    shutil.copytree(demo_run, copy)
    path = copy / "bias_factors.json"
    blob = json.loads(path.read_text())
    blob["manifest_hash"] = "0" * 64
    path.write_text(json.dumps(blob))
    assert run_cli("forecast", "--run", str(copy), "--days", "5") == 2


# ---------------------------------------------------------------------------
# forecast export


def test_forecast_csv_schema(demo_run, tmp_path, capsys):
    out = tmp_path / "forecast.csv"
    assert run_cli("forecast", "--run", str(demo_run), "--days", "3",
                   "--models", "1", "--out", str(out)) == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == [
        "window_start", "model_index", "day", "region",
        "raw_prediction", "corrected_prediction",
    ]
    assert len(rows) % (3 * 10) == 0 and rows
    days = {int(r["day"]) for r in rows}
    assert days == {1, 2, 3}
    assert all(float(r["corrected_prediction"]) >= 0 for r in rows[:100])


# ---------------------------------------------------------------------------
# sensitivity export


def test_sensitivity_csv_schema(demo_run):
    with open(demo_run / "sensitivity.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["window_start", "region", "mu", "mu_normalized", "rank"]
    assert len(rows) % 10 == 0
    norms = [float(r["mu_normalized"]) for r in rows]
    assert min(norms) >= 0.0 and max(norms) <= 1.0
    ranks = {int(r["rank"]) for r in rows}
    assert min(ranks) == 1 and max(ranks) <= 10


def test_sensitivity_json_has_raw_scores(demo_run):
    with open(demo_run / "sensitivity.json") as fh:
        blob = json.load(fh)
    assert blob["ensemble_size"] == 2
    assert all(len(rec["scores"]) == 2 for rec in blob["records"])
    assert len(blob["overall_ranking"]) == 10


# ---------------------------------------------------------------------------
# policy sweep and single evaluation


def test_policy_sweep_csv(demo_run, capsys):
    with open(demo_run / "policy.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == [
        "policy_id", "reductions", "avg_daily_flight_reduction", "impact", "quadrant",
    ]
    assert len(rows) == 15  # (3 levels + zero)^2 - 1
    assert all(r["quadrant"] in ("Q1", "Q2", "Q3", "Q4") for r in rows)
    impacts = [float(r["impact"]) for r in rows]
    assert max(impacts) == 1.0
    by_id = {r["policy_id"]: r for r in rows}
    assert by_id["NA=0.50,WE=0.75"]["reductions"] == "NA:0.50;WE:0.75"


def test_policy_enumeration_message(demo_run, tmp_path, capsys):
    assert run_cli(
        "policy", "--run", str(demo_run), "--nodes", "WE,NA",
        "--levels", "25,50,75", "--days", "5", "--models", "1",
        "--out", str(tmp_path),
    ) == 0
    assert "15 policies evaluated" in capsys.readouterr().out


def test_policy_single_evaluation_prints_json(demo_run, capsys):
    assert run_cli(
        "policy", "--run", str(demo_run), "--reductions", "WE=75,NA=50",
        "--days", "5", "--models", "2",
    ) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["policy_id"] == "NA=0.50,WE=0.75"
    assert payload["models_used"] == 2
    assert payload["quadrant"] in ("Q1", "Q2", "Q3", "Q4")
    assert len(payload["series"]) == 10
    for series in payload["series"].values():
        assert len(series["unperturbed"]) == 5
        assert len(series["perturbed"]) == 5


def test_policy_single_evaluation_is_deterministic(demo_run, capsys):
    argv = ["policy", "--run", str(demo_run), "--reductions", "WE=25",
            "--days", "4", "--models", "2"]
    assert run_cli(*argv) == 0
    first = capsys.readouterr().out
    assert run_cli(*argv) == 0
    assert capsys.readouterr().out == first


def test_policy_bad_reduction_syntax_is_usage_error(demo_run):
    assert run_cli("policy", "--run", str(demo_run), "--reductions", "WE:75") == 1
    assert run_cli("policy", "--run", str(demo_run), "--reductions", "WE=140") == 1


def test_policy_unknown_region_is_validation_error(demo_run, capsys):
    code = run_cli("policy", "--run", str(demo_run), "--reductions", "Atlantis=50",
                   "--days", "5")
    assert code == 2
    assert "reductions.Atlantis" in capsys.readouterr().err


def test_policy_without_cached_sweep_is_conflict(demo_run, tmp_path, capsys):
    copy = tmp_path / "run"
    shutil.copytree(demo_run, copy)
    (copy / "policy_sweep.json").unlink()
    code = run_cli("policy", "--run", str(copy), "--reductions", "WE=50", "--days", "5")
    assert code == 2
    assert "sweep" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# plots


def test_plots_emit_series(demo_run, tmp_path):
    out = tmp_path / "plots"
    assert run_cli("plots", "--run", str(demo_run), "--out", str(out),
                   "--days", "3", "--models", "1") == 0
    names = {
        "training_curves.json", "gradient_flow.json", "bias_factors.json",
        "sensitivity_rankings.json", "policy_map.json", "forecast_vs_actual.json",
    }
    assert {p.name for p in out.iterdir()} == names
    manifest = load_manifest(str(demo_run))
    for name in names:
        with open(out / name) as fh:
            assert json.load(fh)["manifest_hash"] == manifest.hash


def test_plots_before_bias_emits_only_training_series(tmp_path, demo_data, capsys):
    run = tmp_path / "fresh_run"
    assert run_cli(
        "train", "--cases", str(demo_data / "cases.csv"),
        "--flights", str(demo_data / "flights.csv"), "--out", str(run),
        "--ensemble", "1", "--seed", "1", "--epochs", "3",
    ) == 0
    capsys.readouterr()
    assert run_cli("plots", "--run", str(run)) == 0
    out = capsys.readouterr().out
    assert "training_curves" in out
    assert "bias_factors" not in out
    assert "policy_map" not in out
