"""Record API responses and CLI output as test fixtures for the UI.

Builds a small run directory from scratch (synthetic data, tiny ensemble),
serves it through the in-process test client, and snapshots the JSON bodies
the browser code is tested against.  The same three policy scenarios are
also captured from the command line so the agreement tests can check that
the UI shows exactly the numbers the CLI prints.

Everything is seeded, so re-running the script reproduces the files byte
for byte.  Run it from the frontend directory after installing the Python
package:

    python3 scripts/record_fixtures.py
"""

import contextlib
import io
import json
import os
import shutil
import sys
import tempfile
import warnings

# the test client import itself warns about the httpx shim
warnings.filterwarnings("ignore", category=DeprecationWarning)

from fastapi.testclient import TestClient  # noqa: E402

from aerograph import cli  # noqa: E402
from aerograph.forecast import qualifying_windows  # noqa: E402
from aerograph.manifest import load_run  # noqa: E402
from aerograph.service import build_app  # noqa: E402

FIXTURES = os.path.normpath(
    os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "tests", "fixtures")
)
DAYS = 5

# scenario tag -> reductions, both for POST /v1/policy/evaluate and the CLI
SCENARIOS = {
    "null": {},
    "we75": {"WE": 0.75},
    "we75_na50": {"WE": 0.75, "NA": 0.5},
}


def run_cli(*argv: str) -> str:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli.main(list(argv))
    if code != 0:
        raise SystemExit(f"cli {argv[0]} exited {code}:\n{buf.getvalue()}")
    return buf.getvalue()


def save(name: str, payload) -> None:
    path = os.path.join(FIXTURES, name)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    print(f"wrote {os.path.relpath(path)}")


def build_run(scratch: str) -> str:
    data = os.path.join(scratch, "data")
    run = os.path.join(scratch, "run")
    run_cli("synth", "--out", data, "--days", "80", "--seed", "3")
    run_cli(
        "train",
        "--cases", os.path.join(data, "cases.csv"),
        "--flights", os.path.join(data, "flights.csv"),
        "--out", run, "--ensemble", "2", "--seed", "7", "--epochs", "15",
    )
    run_cli("bias", "--run", run, "--days", str(DAYS))
    run_cli("sensitivity", "--run", run, "--days", str(DAYS))
    run_cli("policy", "--run", run, "--nodes", "WE,NA", "--days", str(DAYS))
    return run


def cli_reductions_arg(reductions: dict[str, float]) -> str:
    if not reductions:
        # an explicit zero still evaluates: it names the null policy
        return "NA=0"
    return ",".join(f"{code}={round(frac * 100)}" for code, frac in reductions.items())


def record(run: str) -> None:
    state = load_run(run)
    window = qualifying_windows(state.graphs, state.windows, DAYS)[0][0].start.isoformat()

    client = TestClient(build_app(run))
    save("regions.json", client.get("/v1/regions").json())
    save("rankings_overall.json", client.get("/v1/sensitivity/rankings").json())
    save("sweep.json", client.get("/v1/policy/sweep").json())

    for tag, reductions in SCENARIOS.items():
        resp = client.post(
            "/v1/policy/evaluate",
            json={"reductions": reductions, "window_start": window, "days": DAYS},
        )
        if resp.status_code != 200:
            raise SystemExit(f"evaluate {tag} returned {resp.status_code}: {resp.text}")
        save(f"evaluate_{tag}.json", resp.json())

        out = run_cli(
            "policy", "--run", run,
            "--reductions", cli_reductions_arg(reductions),
            "--window", window, "--days", str(DAYS),
        )
        save(f"cli_{tag}.json", json.loads(out))

    # a run with no sensitivity or sweep artifacts, for the 409 paths
    bare = os.path.join(os.path.dirname(run), "bare")
    shutil.copytree(run, bare)
    for name in ("sensitivity.json", "policy_sweep.json", "policy.csv"):
        path = os.path.join(bare, name)
        if os.path.exists(path):
            os.remove(path)
    bare_client = TestClient(build_app(bare))
    for name, url in (
        ("rankings_409.json", "/v1/sensitivity/rankings"),
        ("sweep_409.json", "/v1/policy/sweep"),
    ):
        resp = bare_client.get(url)
        save(name, {"status": resp.status_code, "body": resp.json()})


def main() -> int:
    os.makedirs(FIXTURES, exist_ok=True)
    scratch = tempfile.mkdtemp(prefix="aerograph-fixtures-")
    try:
        record(build_run(scratch))
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
