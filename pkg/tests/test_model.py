"""Model-layer tests.

Each layer is checked against a deliberately naive loop-based reference
implementation, the full forward pass against a reference that composes
those loops, and gradients against finite differences. Reach/isolation
invariants run with normalization disabled, since the graph-wide column
statistics otherwise couple every node by construction.
"""

import numpy as np
import pytest

from aerograph import model as md
from aerograph import numerics as nx
from aerograph.model import (
    Checkpoint,
    CheckpointError,
    DcsageModel,
    FeatureDay,
    ModelConfig,
    ModelError,
    expected_param_shapes,
    forward,
    forward_batch,
    graph_norm,
    initialize,
    load_checkpoint,
    lstm_step,
    model_from_checkpoint,
    neighbor_operator,
    predict,
    predict_batch,
    sage_forward,
    save_checkpoint,
)
from aerograph.numerics import GradientTape, Tensor, backward, tensor


def small_config(**overrides) -> ModelConfig:
    base = dict(num_regions=4, input_days=3, sage_dim=3, hidden_dim=4)
    base.update(overrides)
    return ModelConfig(**base)


def random_adjacency(rng, n, density=0.6):
    a = rng.uniform(0.5, 3.0, size=(n, n))
    a *= rng.random(size=(n, n)) < density
    np.fill_diagonal(a, 0.0)
    return a


def make_day(rng, config, adjacency=None):
    a = random_adjacency(rng, config.num_regions) if adjacency is None else adjacency
    return FeatureDay(
        features=tensor(rng.uniform(0.0, 4.0, size=config.num_regions)), adjacency=a
    )


def make_window(rng, config, adjacency=None):
    return [make_day(rng, config, adjacency) for _ in range(config.input_days)]


# ---------------------------------------------------------------------------
# Reference implementations (independent, loop-based)


def ref_sage(w_self, w_neigh, h, a):
    n, out_dim = h.shape[0], w_self.shape[0]
    out = np.zeros((n, out_dim))
    for v in range(n):
        neigh = [u for u in range(n) if a[u, v] > 0]
        if neigh:
            agg = np.mean([a[u, v] * h[u] for u in neigh], axis=0)
        else:
            agg = np.zeros(h.shape[1])
        out[v] = w_self @ h[v] + w_neigh @ agg
    return np.maximum(out, 0.0)


def ref_graph_norm(gamma, beta, alpha, h, eps=1e-5):
    mu = h.mean(axis=0)
    var = ((h - mu) ** 2).mean(axis=0)
    sigma = np.sqrt(var + eps)
    return gamma * (h - alpha * mu) / sigma + beta


def ref_lstm_step(p, cell, h_prev, c_prev, x):
    z = np.concatenate([h_prev, x], axis=1)

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    f = sig(z @ p[f"{cell}.w_f"].values.T + p[f"{cell}.b_f"].values)
    i = sig(z @ p[f"{cell}.w_i"].values.T + p[f"{cell}.b_i"].values)
    o = sig(z @ p[f"{cell}.w_o"].values.T + p[f"{cell}.b_o"].values)
    g = np.tanh(z @ p[f"{cell}.w_c"].values.T + p[f"{cell}.b_c"].values)
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def ref_forward(model: DcsageModel, days) -> np.ndarray:
    cfg, p = model.config, model.params
    n = cfg.num_regions
    h1 = c1 = np.zeros((n, cfg.hidden_dim))
    h2 = c2 = np.zeros((n, cfg.hidden_dim))
    feats = []
    for day in days:
        x = day.features.values.reshape(n, 1)
        feats.append(x)
        s1 = ref_sage(p["sage1.w_self"].values, p["sage1.w_neigh"].values, x, day.adjacency)
        if cfg.norm_enabled:
            s1 = ref_graph_norm(
                p["norm1.gamma"].values, p["norm1.beta"].values, p["norm1.alpha"].values,
                s1, cfg.norm_eps,
            )
        s2 = ref_sage(p["sage2.w_self"].values, p["sage2.w_neigh"].values, s1, day.adjacency)
        if cfg.norm_enabled:
            s2 = ref_graph_norm(
                p["norm2.gamma"].values, p["norm2.beta"].values, p["norm2.alpha"].values,
                s2, cfg.norm_eps,
            )
        h1, c1 = ref_lstm_step(p, "lstm1", h1, c1, np.concatenate([s1, s2], axis=1))
        h2, c2 = ref_lstm_step(p, "lstm2", h2, c2, h1)
    z = np.maximum(np.concatenate([h1, h2, np.concatenate(feats, axis=1)], axis=1), 0.0)
    return (z @ model.params["head.w"].values.T + model.params["head.b"].values).reshape(n)


# ---------------------------------------------------------------------------
# Layer-level checks


def test_neighbor_operator_hand_values():
    a = np.array([[0.0, 2.0], [3.0, 0.0]])
    m = neighbor_operator(a, 2)
    np.testing.assert_array_equal(m, [[0.0, 3.0], [2.0, 0.0]])


def test_neighbor_operator_empty_neighborhood_is_zero_row():
    a = np.zeros((3, 3))
    a[0, 1] = 5.0  # only node 1 has an in-neighbor
    m = neighbor_operator(a, 3)
    np.testing.assert_array_equal(m[0], 0.0)
    np.testing.assert_array_equal(m[2], 0.0)
    np.testing.assert_array_equal(m[1], [5.0, 0.0, 0.0])


def test_neighbor_operator_rejects_bad_adjacency():
    with pytest.raises(ModelError):
        neighbor_operator(np.eye(3), 3)  # self-loops
    with pytest.raises(ModelError):
        neighbor_operator(np.full((3, 3), -1.0), 3)
    with pytest.raises(ModelError):
        neighbor_operator(np.zeros((2, 3)), 3)


def test_sage_forward_matches_reference():
    rng = np.random.default_rng(0)
    for _ in range(5):
        h = rng.normal(size=(5, 3))
        a = random_adjacency(rng, 5)
        w_self = rng.normal(size=(4, 3))
        w_neigh = rng.normal(size=(4, 3))
        got = sage_forward(tensor(w_self), tensor(w_neigh), tensor(h), a)
        np.testing.assert_allclose(got.values, ref_sage(w_self, w_neigh, h, a), rtol=1e-12)


def test_sage_forward_isolated_node_uses_self_term_only():
    h = np.array([[1.0], [2.0]])
    a = np.zeros((2, 2))
    w_self = np.array([[2.0]])
    w_neigh = np.array([[100.0]])
    out = sage_forward(tensor(w_self), tensor(w_neigh), tensor(h), a)
    np.testing.assert_array_equal(out.values, [[2.0], [4.0]])


def test_graph_norm_matches_reference_and_worked_example():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(6, 4))
    gamma = rng.normal(size=4)
    beta = rng.normal(size=4)
    alpha = rng.normal(size=4)
    got = graph_norm(tensor(gamma), tensor(beta), tensor(alpha), tensor(h))
    np.testing.assert_allclose(got.values, ref_graph_norm(gamma, beta, alpha, h), rtol=1e-12)

    # With gamma=1, beta=0, alpha=0 the layer reduces to H[:, j] / sigma_j.
    ones, zeros = np.ones(4), np.zeros(4)
    got = graph_norm(tensor(ones), tensor(zeros), tensor(zeros), tensor(h))
    sigma = np.sqrt(h.var(axis=0) + 1e-5)
    np.testing.assert_allclose(got.values, h / sigma, rtol=1e-12)


def test_graph_norm_standardizes_columns():
    rng = np.random.default_rng(2)
    h = rng.normal(loc=3.0, scale=2.0, size=(8, 5))
    out = graph_norm(
        tensor(np.ones(5)), tensor(np.zeros(5)), tensor(np.ones(5)), tensor(h)
    ).values
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-2)


def test_lstm_step_matches_reference():
    rng = np.random.default_rng(3)
    cfg = small_config()
    m = initialize(cfg, seed=5)
    rows, h, d_in = 6, cfg.hidden_dim, 2 * cfg.sage_dim
    h_prev = rng.normal(size=(rows, h))
    c_prev = rng.normal(size=(rows, h))
    x = rng.normal(size=(rows, d_in))
    got_h, got_c = lstm_step(m.params, "lstm1", tensor(h_prev), tensor(c_prev), tensor(x))
    ref_h, ref_c = ref_lstm_step(m.params, "lstm1", h_prev, c_prev, x)
    np.testing.assert_allclose(got_h.values, ref_h, rtol=1e-12)
    np.testing.assert_allclose(got_c.values, ref_c, rtol=1e-12)


# ---------------------------------------------------------------------------
# Full forward


def test_forward_matches_loop_reference():
    rng = np.random.default_rng(4)
    for norm in (True, False):
        cfg = small_config(norm_enabled=norm)
        m = initialize(cfg, seed=9)
        days = make_window(rng, cfg)
        np.testing.assert_allclose(
            forward(m, days).values, ref_forward(m, days), rtol=1e-10, atol=1e-12
        )


def test_forward_full_size_shape_and_determinism():
    rng = np.random.default_rng(5)
    cfg = ModelConfig()
    m = initialize(cfg, seed=0)
    days = make_window(rng, cfg)
    out1 = predict(m, days)
    out2 = predict(m, days)
    assert out1.shape == (10,)
    np.testing.assert_array_equal(out1, out2)


def test_batched_forward_matches_per_window():
    rng = np.random.default_rng(6)
    cfg = small_config(num_regions=5)
    m = initialize(cfg, seed=1)
    windows = [make_window(rng, cfg) for _ in range(7)]
    batched = predict_batch(m, windows)
    assert batched.shape == (7, 5)
    for i, w in enumerate(windows):
        np.testing.assert_allclose(batched[i], predict(m, w), rtol=1e-12, atol=1e-14)


def test_batched_forward_shares_overlapping_days():
    rng = np.random.default_rng(7)
    cfg = small_config()
    days = [make_day(rng, cfg) for _ in range(6)]
    m = initialize(cfg, seed=2)
    overlapping = [days[0:3], days[1:4], days[2:5], days[3:6]]
    batched = predict_batch(m, overlapping)
    for i, w in enumerate(overlapping):
        np.testing.assert_allclose(batched[i], predict(m, w), rtol=1e-12, atol=1e-14)


def test_persistent_day_cache_is_reused_and_guarded():
    rng = np.random.default_rng(8)
    cfg = small_config()
    m = initialize(cfg, seed=3)
    days = make_window(rng, cfg)
    cache: dict = {}
    first = predict_batch(m, [days], day_cache=cache)
    assert len(cache) == cfg.input_days
    second = predict_batch(m, [days], day_cache=cache)
    np.testing.assert_array_equal(first, second)

    with GradientTape() as tape:
        tape.watch(m.params["head.w"])
        with pytest.raises(ModelError):
            forward_batch(m, [days], day_cache=cache)


def test_forward_input_validation():
    cfg = small_config()
    m = initialize(cfg, seed=0)
    rng = np.random.default_rng(9)
    with pytest.raises(ModelError):
        forward_batch(m, [])
    with pytest.raises(ModelError):
        forward(m, make_window(rng, cfg)[:2])  # too few days
    bad = [
        FeatureDay(features=tensor(np.zeros(3)), adjacency=np.zeros((4, 4)))
    ] * cfg.input_days
    with pytest.raises(ModelError):
        forward(m, bad)


# ---------------------------------------------------------------------------
# Gradients through the whole model


def test_full_model_gradient_matches_finite_differences():
    rng = np.random.default_rng(10)
    cfg = small_config()
    m = initialize(cfg, seed=4)
    windows = [make_window(rng, cfg) for _ in range(2)]

    tape = GradientTape()
    with tape:
        tape.watch(*m.params.values())
        for w in windows:
            for day in w:
                tape.watch(day.features)
        loss = nx.sum_all(forward_batch(m, windows))
    grads = backward(loss, tape)

    def loss_with(params) -> float:
        return float(forward_batch(m.with_params(params), windows).values.sum())

    eps = 1e-5
    for name in m.params:
        p = m.params[name]
        analytic = grads[p].values
        numeric = np.zeros_like(p.values)
        flat_num = numeric.reshape(-1)
        for j in range(flat_num.size):
            for sign in (+1.0, -1.0):
                bumped = p.values.copy()
                bumped.reshape(-1)[j] += sign * eps
                trial = dict(m.params)
                trial[name] = Tensor(bumped)
                flat_num[j] += sign * loss_with(trial) / (2.0 * eps)
        denom = np.maximum(np.abs(numeric), 1e-5)
        assert np.max(np.abs(analytic - numeric) / denom) < 1e-3, name

    # also the day features of one window
    day = windows[0][1]
    analytic = grads[day.features].values
    numeric = np.zeros_like(analytic)
    for j in range(numeric.size):
        for sign in (+1.0, -1.0):
            feats = day.features.values.copy()
            feats[j] += sign * eps
            patched = [
                [
                    FeatureDay(tensor(feats), d.adjacency) if d is day else d
                    for d in w
                ]
                for w in windows
            ]
            numeric[j] += sign * float(
                forward_batch(m, patched).values.sum()
            ) / (2.0 * eps)
    denom = np.maximum(np.abs(numeric), 1e-5)
    assert np.max(np.abs(analytic - numeric) / denom) < 1e-3


# ---------------------------------------------------------------------------
# Structural invariants (normalization off: column statistics couple nodes)


def chain_adjacency(n):
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = 1.5
    return a


def jacobian_entry(model, days, out_node, in_day, in_node):
    """d prediction[out_node] / d features[in_day][in_node] via the tape."""
    tape = GradientTape()
    with tape:
        for d in days:
            tape.watch(d.features)
        out = forward(model, days)
        pick = np.zeros(model.config.num_regions)
        pick[out_node] = 1.0
        loss = nx.sum_all(out * tensor(pick))
    grads = backward(loss, tape)
    return grads[days[in_day].features].values[in_node]


def test_two_hop_reach_limit_without_norm():
    cfg = small_config(norm_enabled=False)
    m = initialize(cfg, seed=11)
    rng = np.random.default_rng(12)
    a = chain_adjacency(cfg.num_regions)  # 0 -> 1 -> 2 -> 3
    days = make_window(rng, cfg, adjacency=a)
    for k in range(cfg.input_days):
        assert jacobian_entry(m, days, out_node=3, in_day=k, in_node=0) == 0.0
    # two hops away is within reach
    assert any(
        jacobian_entry(m, days, out_node=3, in_day=k, in_node=1) != 0.0
        for k in range(cfg.input_days)
    )


def test_norm_couples_nodes_beyond_two_hops():
    cfg = small_config(norm_enabled=True)
    m = initialize(cfg, seed=11)
    rng = np.random.default_rng(12)
    days = make_window(rng, cfg, adjacency=chain_adjacency(cfg.num_regions))
    coupled = any(
        jacobian_entry(m, days, out_node=3, in_day=k, in_node=0) != 0.0
        for k in range(cfg.input_days)
    )
    assert coupled


def test_zero_adjacency_isolates_nodes_without_norm():
    cfg = small_config(norm_enabled=False)
    m = initialize(cfg, seed=13)
    rng = np.random.default_rng(14)
    a = np.zeros((cfg.num_regions, cfg.num_regions))
    days = make_window(rng, cfg, adjacency=a)
    base = predict(m, days)

    bumped_days = []
    for d in days:
        feats = d.features.values.copy()
        feats[0] += 1.0  # change only node 0's inputs
        bumped_days.append(FeatureDay(tensor(feats), d.adjacency))
    bumped = predict(m, bumped_days)
    np.testing.assert_array_equal(base[1:], bumped[1:])
    assert base[0] != bumped[0]


# ---------------------------------------------------------------------------
# Initialization


def test_initialize_shapes_bounds_and_determinism():
    cfg = ModelConfig()
    m1 = initialize(cfg, seed=21)
    m2 = initialize(cfg, seed=21)
    m3 = initialize(cfg, seed=22)
    shapes = expected_param_shapes(cfg)
    assert set(m1.params) == set(shapes)
    different = 0
    for name, shape in shapes.items():
        assert m1.params[name].shape == shape
        np.testing.assert_array_equal(m1.params[name].values, m2.params[name].values)
        if not np.array_equal(m1.params[name].values, m3.params[name].values):
            different += 1
    assert different > 10  # seeds genuinely diverge

    bound = 1.0 / np.sqrt(cfg.hidden_dim)
    for gate in ("f", "i", "o", "c"):
        assert np.abs(m1.params[f"lstm1.w_{gate}"].values).max() <= bound
    assert np.abs(m1.params["sage2.w_self"].values).max() <= np.sqrt(6.0 / cfg.sage_dim)
    np.testing.assert_array_equal(m1.params["norm1.gamma"].values, np.ones(cfg.sage_dim))
    np.testing.assert_array_equal(m1.params["norm1.beta"].values, np.zeros(cfg.sage_dim))
    np.testing.assert_array_equal(m1.params["norm1.alpha"].values, np.ones(cfg.sage_dim))


# ---------------------------------------------------------------------------
# Checkpoints


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    cfg = small_config()
    m = initialize(cfg, seed=33)
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(path, m, metadata={"seed": 33, "note": "round-trip"})
    ckpt = load_checkpoint(path)
    assert ckpt.metadata["seed"] == 33
    assert set(ckpt.params) == set(m.params)
    for name, t in m.params.items():
        assert ckpt.params[name].values.tobytes() == t.values.tobytes()
    rebuilt = model_from_checkpoint(ckpt)
    assert rebuilt.config == cfg

    rng = np.random.default_rng(0)
    days = make_window(rng, cfg)
    np.testing.assert_array_equal(predict(rebuilt, days), predict(m, days))


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"\x07")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))
    path.write_bytes((10**6).to_bytes(8, "little") + b"{}")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))
    header = b'{"format": "something-else", "version": 1, "metadata": {}, "tensors": []}'
    path.write_bytes(len(header).to_bytes(8, "little") + header)
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_model_from_checkpoint_validates_params(tmp_path):
    cfg = small_config()
    m = initialize(cfg, seed=1)
    incomplete = dict(m.params)
    incomplete.pop("head.w")
    ckpt = Checkpoint(params=incomplete, metadata={"model": md.config_metadata(cfg)})
    with pytest.raises(CheckpointError, match="head.w"):
        model_from_checkpoint(ckpt)

    wrong = dict(m.params)
    wrong["head.w"] = tensor(np.zeros((2, 2)))
    ckpt = Checkpoint(params=wrong, metadata={"model": md.config_metadata(cfg)})
    with pytest.raises(CheckpointError, match="shape"):
        model_from_checkpoint(ckpt)
