"""The graph-recurrent forecaster.

Per day, node features (one scalar per region: the transformed smoothed case
count) pass through two weighted GraphSAGE layers, each followed by graph
normalization. The two embeddings are concatenated (a one-hop skip) and fed,
day by day, through two stacked LSTM cells whose weights are shared across
nodes. The readout concatenates both final hidden states with the node's own
seven input values (an input skip), applies ReLU, and projects to one scalar
per node: the prediction for day 8 in the transformed domain.

``forward_batch`` runs many windows at once: each distinct calendar day's
graph embedding is computed a single time even when consecutive windows
overlap on it, and the recurrent stack treats (window, node) pairs as rows of
one big batch. A single window is simply a batch of one, so batched and
unbatched paths cannot drift apart.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nx
from .numerics import Tensor

CHECKPOINT_FORMAT = "aerograph-checkpoint"
CHECKPOINT_VERSION = 1


class ModelError(Exception):
    """Configuration or input does not fit the model's contract."""


class CheckpointError(Exception):
    """A checkpoint file is malformed or inconsistent."""


@dataclass(frozen=True)
class ModelConfig:
    num_regions: int = 10
    input_days: int = 7
    sage_dim: int = 10
    hidden_dim: int = 16
    norm_enabled: bool = True
    norm_eps: float = 1e-5

    def validate(self) -> None:
        if self.num_regions < 2:
            raise ModelError("num_regions must be at least 2")
        if self.input_days < 1 or self.sage_dim < 1 or self.hidden_dim < 1:
            raise ModelError("input_days, sage_dim and hidden_dim must be positive")


@dataclass(frozen=True)
class FeatureDay:
    """A day handed to the model directly as tensors (used by tests)."""

    features: Tensor  # (regions,)
    adjacency: np.ndarray  # (regions, regions)


def expected_param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every trainable tensor, in a fixed order."""
    d, h, k = config.sage_dim, config.hidden_dim, config.input_days
    shapes: dict[str, tuple[int, ...]] = {
        "sage1.w_self": (d, 1),
        "sage1.w_neigh": (d, 1),
        "norm1.gamma": (d,),
        "norm1.beta": (d,),
        "norm1.alpha": (d,),
        "sage2.w_self": (d, d),
        "sage2.w_neigh": (d, d),
        "norm2.gamma": (d,),
        "norm2.beta": (d,),
        "norm2.alpha": (d,),
    }
    for cell, in_dim in (("lstm1", 2 * d), ("lstm2", h)):
        for gate in ("f", "i", "o", "c"):
            shapes[f"{cell}.w_{gate}"] = (h, h + in_dim)
        for gate in ("f", "i", "o", "c"):
            shapes[f"{cell}.b_{gate}"] = (h,)
    shapes["head.w"] = (1, 2 * h + k)
    shapes["head.b"] = (1,)
    return shapes


@dataclass(frozen=True)
class DcsageModel:
    config: ModelConfig
    params: dict[str, Tensor]

    def with_params(self, params: dict[str, Tensor]) -> "DcsageModel":
        return replace(self, params=params)


def initialize(config: ModelConfig, seed: int) -> DcsageModel:
    """Fresh model: Kaiming uniform for the graph and head linear maps,
    U(-1/sqrt(h), 1/sqrt(h)) for the recurrent cells, identity-like
    normalization (gamma=1, beta=0, alpha=1)."""
    config.validate()
    rng = np.random.default_rng(seed)
    d, h, k = config.sage_dim, config.hidden_dim, config.input_days
    params: dict[str, Tensor] = {}
    params["sage1.w_self"] = nx.kaiming_uniform((d, 1), fan_in=1, rng=rng)
    params["sage1.w_neigh"] = nx.kaiming_uniform((d, 1), fan_in=1, rng=rng)
    params["sage2.w_self"] = nx.kaiming_uniform((d, d), fan_in=d, rng=rng)
    params["sage2.w_neigh"] = nx.kaiming_uniform((d, d), fan_in=d, rng=rng)
    for which in ("norm1", "norm2"):
        params[f"{which}.gamma"] = Tensor(np.ones(d))
        params[f"{which}.beta"] = Tensor(np.zeros(d))
        params[f"{which}.alpha"] = Tensor(np.ones(d))
    bound = 1.0 / np.sqrt(h)
    for cell, in_dim in (("lstm1", 2 * d), ("lstm2", h)):
        for gate in ("f", "i", "o", "c"):
            params[f"{cell}.w_{gate}"] = nx.uniform_symmetric((h, h + in_dim), bound, rng)
        for gate in ("f", "i", "o", "c"):
            params[f"{cell}.b_{gate}"] = nx.uniform_symmetric((h,), bound, rng)
    params["head.w"] = nx.kaiming_uniform((1, 2 * h + k), fan_in=2 * h + k, rng=rng)
    params["head.b"] = Tensor(np.zeros(1))

    # Order params canonically so reports and checkpoints are stable.
    ordered = {name: params[name] for name in expected_param_shapes(config)}
    return DcsageModel(config=config, params=ordered)


# ---------------------------------------------------------------------------
# Layer forwards


def neighbor_operator(adjacency: np.ndarray, num_regions: int) -> np.ndarray:
    """Constant matrix M with M[v, u] = A[u, v] / |N(v)|.

    N(v) is the set of in-neighbors of v (positive-weight incoming edges);
    rows for nodes with no in-neighbors are zero, so their aggregate is the
    zero vector rather than a division artifact.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.shape != (num_regions, num_regions):
        raise ModelError(f"adjacency must be {(num_regions, num_regions)}, got {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ModelError("adjacency must be finite and non-negative")
    if np.any(np.diagonal(a) != 0):
        raise ModelError("adjacency must have a zero diagonal")
    incoming = a.T.copy()  # row v lists weights from each u into v
    counts = (incoming > 0).sum(axis=1).astype(np.float64)
    nonzero = counts > 0
    incoming[nonzero] /= counts[nonzero, None]
    incoming[~nonzero] = 0.0
    return incoming


def sage_forward(
    w_self: Tensor, w_neigh: Tensor, h: Tensor, adjacency: np.ndarray
) -> Tensor:
    """One weighted-mean GraphSAGE layer: relu(W_self h_v + W_neigh h_N(v)).

    The neighborhood vector h_N(v) is the mean over in-neighbors u of the
    edge-weighted embedding A[u, v] * h_u. The adjacency itself is constant
    data, not a differentiable input.
    """
    n = h.shape[0]
    m = neighbor_operator(adjacency, n)
    h_neigh = nx.matmul(Tensor(m), h)
    return nx.relu(
        nx.matmul(h, nx.transpose(w_self)) + nx.matmul(h_neigh, nx.transpose(w_neigh))
    )


def graph_norm(
    gamma: Tensor, beta: Tensor, alpha: Tensor, h: Tensor, eps: float = 1e-5
) -> Tensor:
    """Normalize each embedding column across the graph's nodes.

    out[:, j] = gamma_j * (h[:, j] - alpha_j * mu_j) / sigma_j + beta_j with
    mu_j the column mean and sigma_j = sqrt(var_j + eps) the plain column
    standard deviation over nodes.
    """
    n = h.shape[0]
    mu = nx.sum_rows(h) * (1.0 / n)
    centered = h - nx.tile_rows(alpha * mu, n)
    dev = h - nx.tile_rows(mu, n)
    var = nx.sum_rows(dev * dev) * (1.0 / n)
    sigma = nx.sqrt(var + eps)
    scaled = centered / nx.tile_rows(sigma, n)
    return nx.tile_rows(gamma, n) * scaled + nx.tile_rows(beta, n)


def lstm_step(
    params: dict[str, Tensor],
    cell: str,
    h_prev: Tensor,
    c_prev: Tensor,
    x: Tensor,
) -> tuple[Tensor, Tensor]:
    """Standard LSTM cell update for a batch of rows."""
    m = x.shape[0]
    z = nx.concat([h_prev, x], axis=1)

    def gate(name: str, squash) -> Tensor:
        w = params[f"{cell}.w_{name}"]
        b = params[f"{cell}.b_{name}"]
        return squash(nx.matmul(z, nx.transpose(w)) + nx.tile_rows(b, m))

    f = gate("f", nx.sigmoid)
    i = gate("i", nx.sigmoid)
    o = gate("o", nx.sigmoid)
    g = gate("c", nx.tanh)
    c = f * c_prev + i * g
    h = o * nx.tanh(c)
    return h, c


# ---------------------------------------------------------------------------
# Full forward


def _day_feature(day, config: ModelConfig) -> tuple[Tensor, np.ndarray]:
    if isinstance(day, FeatureDay):
        x, a = day.features, day.adjacency
    else:
        x, a = Tensor(day.cases), day.flights
    if x.shape != (config.num_regions,):
        raise ModelError(
            f"day features must have shape ({config.num_regions},), got {x.shape}"
        )
    return x, a


def _embed_day(model: DcsageModel, day, cache: dict) -> tuple[Tensor, Tensor]:
    """(x column, concat of both normalized embeddings) for one day, cached
    by day object identity so overlapping windows share the computation.

    Entries store the day object itself: id() values can be recycled once a
    day is garbage collected, so a hit counts only if it is the same object.
    """
    hit = cache.get(id(day))
    if hit is not None and hit[0] is day:
        return hit[1]
    cfg = model.config
    p = model.params
    x, adjacency = _day_feature(day, cfg)
    x_col = nx.reshape(x, (cfg.num_regions, 1))
    s1 = sage_forward(p["sage1.w_self"], p["sage1.w_neigh"], x_col, adjacency)
    if cfg.norm_enabled:
        s1 = graph_norm(p["norm1.gamma"], p["norm1.beta"], p["norm1.alpha"], s1, cfg.norm_eps)
    s2 = sage_forward(p["sage2.w_self"], p["sage2.w_neigh"], s1, adjacency)
    if cfg.norm_enabled:
        s2 = graph_norm(p["norm2.gamma"], p["norm2.beta"], p["norm2.alpha"], s2, cfg.norm_eps)
    entry = (x_col, nx.concat([s1, s2], axis=1))
    cache[id(day)] = (day, entry)
    return entry


def forward_batch(
    model: DcsageModel,
    windows,
    day_cache: dict | None = None,
) -> Tensor:
    """Predictions for many windows at once, shape (windows, regions).

    ``windows`` is a sequence of day sequences, each ``input_days`` long.
    Passing a persistent ``day_cache`` lets recursive forecasting reuse day
    embeddings across calls; that is only sound when no gradient tape is
    active and the parameters have not changed between calls.
    """
    cfg = model.config
    if not windows:
        raise ModelError("forward_batch needs at least one window")
    for days in windows:
        if len(days) != cfg.input_days:
            raise ModelError(
                f"each window must contain {cfg.input_days} days, got {len(days)}"
            )
    if day_cache is not None and nx.active_tape() is not None:
        raise ModelError("a persistent day cache cannot be used under a gradient tape")
    cache = {} if day_cache is None else day_cache

    n = cfg.num_regions
    rows = len(windows) * n
    embeds = [[_embed_day(model, day, cache) for day in days] for days in windows]

    h1 = c1 = Tensor(np.zeros((rows, cfg.hidden_dim)))
    h2 = c2 = Tensor(np.zeros((rows, cfg.hidden_dim)))
    x_cols = []
    for k in range(cfg.input_days):
        if len(windows) == 1:
            step_in = embeds[0][k][1]
            x_cols.append(embeds[0][k][0])
        else:
            step_in = nx.concat([e[k][1] for e in embeds], axis=0)
            x_cols.append(nx.concat([e[k][0] for e in embeds], axis=0))
        h1, c1 = lstm_step(model.params, "lstm1", h1, c1, step_in)
        h2, c2 = lstm_step(model.params, "lstm2", h2, c2, h1)

    skip = nx.concat(x_cols, axis=1)  # (rows, input_days)
    z = nx.relu(nx.concat([h1, h2, skip], axis=1))
    y = nx.matmul(z, nx.transpose(model.params["head.w"]))
    y = y + nx.tile_rows(model.params["head.b"], rows)
    return nx.reshape(y, (len(windows), n))


def forward(model: DcsageModel, days) -> Tensor:
    """Single-window forward pass; returns a (regions,) tensor."""
    out = forward_batch(model, [days])
    return nx.reshape(out, (model.config.num_regions,))


def predict(model: DcsageModel, days) -> np.ndarray:
    """Inference-only forward pass, returning plain values."""
    return forward(model, days).values


def predict_batch(model: DcsageModel, windows, day_cache: dict | None = None) -> np.ndarray:
    return forward_batch(model, windows, day_cache=day_cache).values


# ---------------------------------------------------------------------------
# Checkpoints


def config_metadata(config: ModelConfig) -> dict:
    return {
        "num_regions": config.num_regions,
        "input_days": config.input_days,
        "sage_dim": config.sage_dim,
        "hidden_dim": config.hidden_dim,
        "norm_enabled": config.norm_enabled,
        "norm_eps": config.norm_eps,
    }


def config_from_metadata(meta: dict) -> ModelConfig:
    try:
        return ModelConfig(
            num_regions=int(meta["num_regions"]),
            input_days=int(meta["input_days"]),
            sage_dim=int(meta["sage_dim"]),
            hidden_dim=int(meta["hidden_dim"]),
            norm_enabled=bool(meta["norm_enabled"]),
            norm_eps=float(meta["norm_eps"]),
        )
    except KeyError as missing:
        raise CheckpointError(f"checkpoint metadata lacks {missing}") from None


def save_checkpoint(path: str, model: DcsageModel, metadata: dict | None = None) -> None:
    """Write parameters losslessly: a length-prefixed JSON header describing
    each tensor, then their raw little-endian float64 bytes. The write goes
    to a temporary file first and is renamed into place."""
    meta = dict(metadata or {})
    meta["model"] = config_metadata(model.config)
    tensors = []
    offset = 0
    payload = bytearray()
    for name, t in model.params.items():
        data = np.ascontiguousarray(t.values, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(t.shape), "offset": offset})
        payload.extend(data)
        offset += len(data)
    header = json.dumps(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "metadata": meta,
            "tensors": tensors,
        },
        sort_keys=True,
    ).encode("utf-8")
    blob = len(header).to_bytes(8, "little") + header + bytes(payload)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


@dataclass(frozen=True)
class Checkpoint:
    params: dict[str, Tensor]
    metadata: dict


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise CheckpointError(f"{path}: truncated checkpoint")
    header_len = int.from_bytes(blob[:8], "little")
    if len(blob) < 8 + header_len:
        raise CheckpointError(f"{path}: header runs past end of file")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad checkpoint header: {exc}") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    payload = blob[8 + header_len :]
    params: dict[str, Tensor] = {}
    for spec in header["tensors"]:
        shape = tuple(int(s) for s in spec["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = int(spec["offset"])
        end = start + 8 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: tensor {spec['name']!r} overruns payload")
        arr = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape).copy()
        params[spec["name"]] = Tensor(arr)
    return Checkpoint(params=params, metadata=header["metadata"])


def model_from_checkpoint(ckpt: Checkpoint) -> DcsageModel:
    config = config_from_metadata(ckpt.metadata.get("model", {}))
    expected = expected_param_shapes(config)
    missing = sorted(set(expected) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(expected))
    if missing or extra:
        raise CheckpointError(
            f"checkpoint parameters do not match the model: missing {missing}, unexpected {extra}"
        )
    for name, shape in expected.items():
        if ckpt.params[name].shape != shape:
            raise CheckpointError(
                f"checkpoint tensor {name!r} has shape {ckpt.params[name].shape}, expected {shape}"
            )
    ordered = {name: ckpt.params[name] for name in expected}
    return DcsageModel(config=config, params=ordered)
