"""Run manifests: the provenance record tying artifacts to their inputs.

A training run leaves behind a directory with a manifest.json, checkpoints,
and (after further commands) bias factors, sensitivity rankings, and policy
sweeps. The manifest records the dataset paths, a content hash of the data,
the training configuration, and where the derived files live. Downstream
artifacts embed the manifest hash so that factors fitted against one run
cannot silently be applied to another.

The manifest hash covers the deterministic fields only; the creation
timestamp is recorded but excluded, so re-running an identical build yields
the same hash.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
from dataclasses import dataclass, field

from .analysis import PolicySweep, SensitivitySweep
from .dataio import DailyGraph, WindowSample, load_cases, load_flights, make_windows, preprocess
from .forecast import BiasFactors
from .model import DcsageModel, load_checkpoint, model_from_checkpoint
from .training import TrainConfig, member_paths

MANIFEST_NAME = "manifest.json"
CHECKPOINT_DIR = "checkpoints"
BIAS_NAME = "bias_factors.json"
SENSITIVITY_JSON = "sensitivity.json"
SENSITIVITY_CSV = "sensitivity.csv"
POLICY_JSON = "policy_sweep.json"
POLICY_CSV = "policy.csv"
FORECAST_CSV = "forecast.csv"


class ManifestError(Exception):
    pass


def hash_dataset(cases_path: str, flights_path: str) -> str:
    """SHA-256 over the raw bytes of both CSV files, cases first."""
    digest = hashlib.sha256()
    for path in (cases_path, flights_path):
        try:
            with open(path, "rb") as fh:
                while chunk := fh.read(1 << 20):
                    digest.update(chunk)
        except OSError as exc:
            raise ManifestError(f"cannot hash dataset file {path}: {exc}") from exc
    return digest.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    cases_path: str
    flights_path: str
    data_hash: str
    train_config: TrainConfig
    checkpoint_dir: str  # relative to the run directory
    bias_path: str  # relative to the run directory
    created_at: str

    def to_json(self) -> dict:
        return {
            "cases_path": self.cases_path,
            "flights_path": self.flights_path,
            "data_hash": self.data_hash,
            "train_config": self.train_config.to_json(),
            "checkpoint_dir": self.checkpoint_dir,
            "bias_path": self.bias_path,
            "created_at": self.created_at,
        }

    @staticmethod
    def from_json(data: dict) -> "RunManifest":
        try:
            return RunManifest(
                cases_path=data["cases_path"],
                flights_path=data["flights_path"],
                data_hash=data["data_hash"],
                train_config=TrainConfig.from_json(data["train_config"]),
                checkpoint_dir=data["checkpoint_dir"],
                bias_path=data["bias_path"],
                created_at=data["created_at"],
            )
        except KeyError as exc:
            raise ManifestError(f"manifest is missing field {exc}") from exc

    @property
    def hash(self) -> str:
        """Hash of everything except created_at, stable across rebuilds."""
        content = self.to_json()
        del content["created_at"]
        canonical = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def new_manifest(cases_path: str, flights_path: str, config: TrainConfig) -> RunManifest:
    return RunManifest(
        cases_path=os.path.abspath(cases_path),
        flights_path=os.path.abspath(flights_path),
        data_hash=hash_dataset(cases_path, flights_path),
        train_config=config,
        checkpoint_dir=CHECKPOINT_DIR,
        bias_path=BIAS_NAME,
        created_at=dt.datetime.now(dt.timezone.utc).isoformat(),
    )


def save_manifest(run_dir: str, manifest: RunManifest) -> str:
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, MANIFEST_NAME)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest.to_json(), fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def load_manifest(run_dir: str) -> RunManifest:
    path = os.path.join(run_dir, MANIFEST_NAME)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ManifestError(f"no manifest at {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest at {path} is not valid JSON: {exc}") from exc
    return RunManifest.from_json(data)


def check_artifact_hash(artifact: dict, manifest: RunManifest, what: str) -> None:
    """Reject artifacts recorded under a different manifest."""
    found = artifact.get("manifest_hash")
    if found != manifest.hash:
        raise ManifestError(
            f"{what} was produced under manifest {found}, "
            f"but this run's manifest hash is {manifest.hash}"
        )


def verify_dataset(manifest: RunManifest) -> None:
    """Confirm the dataset files still match the recorded content hash."""
    current = hash_dataset(manifest.cases_path, manifest.flights_path)
    if current != manifest.data_hash:
        raise ManifestError(
            "dataset content changed since training: "
            f"recorded {manifest.data_hash}, found {current}"
        )


@dataclass
class RunState:
    """Everything a run directory provides, loaded and cross-checked.

    The optional artifacts (sensitivity rankings, policy sweep) are None
    until their commands have been run; the bias factors are mandatory for
    any forecasting work and their manifest hash is always verified.
    """

    run_dir: str
    manifest: RunManifest
    graphs: list[DailyGraph]
    windows: list[WindowSample]
    models: list[DcsageModel]
    factors: BiasFactors | None
    sensitivity: SensitivitySweep | None = None
    sweep: PolicySweep | None = None
    window_by_start: dict[str, WindowSample] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.window_by_start = {w.start.isoformat(): w for w in self.windows}


def _load_json_artifact(path: str, manifest: RunManifest, what: str) -> dict | None:
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        data = json.load(fh)
    check_artifact_hash(data, manifest, what)
    return data


def load_run(run_dir: str, require_bias: bool = True) -> RunState:
    """Load manifest, dataset, checkpoints, and derived artifacts."""
    manifest = load_manifest(run_dir)
    verify_dataset(manifest)
    graphs = preprocess(
        load_cases(manifest.cases_path), load_flights(manifest.flights_path)
    ).graphs
    windows = make_windows(graphs)

    ckpt_dir = os.path.join(run_dir, manifest.checkpoint_dir)
    models = []
    for i in range(manifest.train_config.ensemble_size):
        ckpt_path, _ = member_paths(ckpt_dir, i)
        if not os.path.exists(ckpt_path):
            raise ManifestError(
                f"run has {i} checkpoints but the manifest promises "
                f"{manifest.train_config.ensemble_size}; training did not finish"
            )
        models.append(model_from_checkpoint(load_checkpoint(ckpt_path)))

    bias_path = os.path.join(run_dir, manifest.bias_path)
    bias_blob = _load_json_artifact(bias_path, manifest, "bias factors")
    if bias_blob is None and require_bias:
        raise ManifestError(
            f"no bias factors at {bias_path}; run the `bias` command first"
        )
    factors = BiasFactors.from_json(bias_blob) if bias_blob is not None else None

    sens_blob = _load_json_artifact(
        os.path.join(run_dir, SENSITIVITY_JSON), manifest, "sensitivity rankings"
    )
    sweep_blob = _load_json_artifact(
        os.path.join(run_dir, POLICY_JSON), manifest, "policy sweep"
    )
    return RunState(
        run_dir=run_dir,
        manifest=manifest,
        graphs=graphs,
        windows=windows,
        models=models,
        factors=factors,
        sensitivity=SensitivitySweep.from_json(sens_blob) if sens_blob else None,
        sweep=PolicySweep.from_json(sweep_blob) if sweep_blob else None,
    )
