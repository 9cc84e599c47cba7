"""Shared fixtures: a small trained run directory used by CLI and service tests."""

import pytest

from aerograph import cli


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    """Train a tiny ensemble and provision every derived artifact.

    Small on purpose (80 days, 2 members, 15 epochs, 5-day horizon): the
    interface tests exercise plumbing, not forecast quality.
    """
    root = tmp_path_factory.mktemp("demo")
    data = root / "data"
    run = root / "run"
    steps = [
        ["synth", "--out", str(data), "--days", "80", "--seed", "3"],
        ["train", "--cases", str(data / "cases.csv"), "--flights",
         str(data / "flights.csv"), "--out", str(run), "--ensemble", "2",
         "--seed", "7", "--epochs", "15"],
        ["bias", "--run", str(run), "--days", "5"],
        ["sensitivity", "--run", str(run), "--days", "5"],
        ["policy", "--run", str(run), "--nodes", "WE,NA",
         "--levels", "25,50,75", "--days", "5"],
    ]
    for argv in steps:
        code = cli.main(argv)
        assert code == 0, f"fixture step {argv[0]} exited {code}"
    return run


@pytest.fixture(scope="session")
def demo_data(demo_run):
    return demo_run.parent / "data"
