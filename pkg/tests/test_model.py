import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.config import FederationConfig
from fedsim.data import batch_indices
from fedsim.errors import CheckpointFormatError, DegenerateDatasetError, EmptyBatchError, ShapeError
from fedsim.model import (
    ArchSpec,
    MlpModel,
    OptimizerState,
    bce_loss,
    data_center_update,
    deserialize_checkpoint,
    forward,
    loss_and_gradient,
    loss_gradient,
    model_from_layers,
    optimizer_step,
    serialize_checkpoint,
)

from conftest import finite_difference, random_model


def reference_forward(model, x):
    """Loop-based forward pass, independent of the vectorized one."""
    widths = model.arch.layer_widths
    p = model.params
    a = list(x)
    pos = 0
    for li in range(len(widths) - 1):
        n_in, n_out = widths[li], widths[li + 1]
        W = [[p[pos + r * n_in + c] for c in range(n_in)] for r in range(n_out)]
        pos += n_in * n_out
        b = [p[pos + r] for r in range(n_out)]
        pos += n_out
        z = [sum(W[r][c] * a[c] for c in range(n_in)) + b[r] for r in range(n_out)]
        if li < len(widths) - 2:
            a = [max(v, 0.0) for v in z]
        else:
            a = z
    return 1.0 / (1.0 + np.exp(-a[0]))


def test_arch_param_count():
    assert ArchSpec((8, 16, 8, 1)).num_params == 8 * 16 + 16 + 16 * 8 + 8 + 8 + 1
    with pytest.raises(Exception):
        ArchSpec((4, 2))


def test_forward_zero_params_is_half():
    arch = ArchSpec((5, 4, 1))
    m = MlpModel(arch, np.zeros(arch.num_params))
    assert forward(m, np.arange(5.0)) == 0.5


def test_forward_logistic_regression():
    w, b = np.array([0.3, -1.2, 2.0]), 0.7
    m = model_from_layers([(w[None, :], [b])])
    x = np.array([1.0, 0.5, -0.25])
    assert forward(m, x) == pytest.approx(1 / (1 + np.exp(-(w @ x + b))), abs=1e-15)


def test_forward_matches_reference():
    m = random_model((8, 16, 8, 1), seed=0)
    x = np.random.default_rng(0).normal(size=8)
    assert abs(forward(m, x) - reference_forward(m, x)) < 1e-12


def test_forward_batch_and_shape_error():
    m = random_model((3, 4, 1), seed=1)
    X = np.random.default_rng(1).normal(size=(5, 3))
    batch = forward(m, X)
    assert batch.shape == (5,)
    assert all(batch[i] == forward(m, X[i]) for i in range(5))
    with pytest.raises(ShapeError):
        forward(m, np.zeros(4))


def test_bce_examples():
    assert bce_loss([0.5], [1]) == pytest.approx(np.log(2), abs=1e-15)
    assert bce_loss([0.9, 0.1], [1, 0]) == pytest.approx(-np.log(0.9), abs=1e-15)
    with pytest.raises(EmptyBatchError):
        bce_loss([], [])
    with pytest.raises(ShapeError):
        bce_loss([0.5, 0.5], [1])


def test_bce_matches_per_sample_sum():
    rng = np.random.default_rng(4)
    s = rng.uniform(0.01, 0.99, 16)
    y = rng.integers(0, 2, 16)
    terms = [-(np.log(si) if yi == 1 else np.log(1 - si)) for si, yi in zip(s, y)]
    assert abs(bce_loss(s, y) - sum(terms) / 16) < 1e-12


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=30))
def test_bce_non_negative(pairs):
    s, y = zip(*pairs)
    assert bce_loss(s, y) >= 0


def test_bce_approaches_zero():
    assert bce_loss([1 - 1e-15, 1e-15], [1, 0]) < 1e-11


def test_gradient_single_linear_unit():
    m = model_from_layers([(np.zeros((1, 1)), [0.0])])
    g = loss_gradient(m, (np.array([[1.0]]), np.array([1])))
    assert np.array_equal(g, [-0.5, -0.5])


def test_gradient_vanishes_at_confident_fit():
    m = model_from_layers([(np.array([[40.0]]), [0.0])])
    g = loss_gradient(m, (np.array([[1.0]]), np.array([1])))
    assert np.linalg.norm(g) < 1e-6


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_gradient_matches_finite_differences(seed, activation):
    rng = np.random.default_rng(100 + seed)
    widths = [int(rng.integers(2, 6)), int(rng.integers(2, 7)), int(rng.integers(2, 5)), 1]
    m = random_model(widths, seed, activation)
    # nonzero biases keep pre-activations off the relu kink at exactly 0
    m = m.with_params(m.params + rng.normal(scale=0.1, size=m.params.size))
    X = rng.normal(size=(int(rng.integers(3, 20)), widths[0]))
    y = rng.integers(0, 2, X.shape[0])
    analytic = loss_gradient(m, (X, y))
    numeric = finite_difference(lambda p: bce_loss(forward(m.with_params(p), X), y), m.params)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
    ok = (rel < 1e-5) | (np.abs(analytic - numeric) < 1e-8)
    assert ok.all(), rel.max()


def test_loss_and_gradient_reports_loss(small_center):
    m = random_model((8, 16, 8, 1), 0)
    loss, _ = loss_and_gradient(m, small_center.features, small_center.labels)
    assert loss == bce_loss(forward(m, small_center.features), small_center.labels)


def test_plain_gd_step():
    p, s = optimizer_step(np.array([1.0, 2.0]), np.array([0.5, 0.5]), OptimizerState.fresh("plain-gd", 2), 0.1)
    assert np.array_equal(p, [0.95, 1.95])
    assert s.step_count == 1


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.floats(0, 10))
def test_plain_gd_literal_contract(vals, eta):
    p = np.array(vals)
    g = np.array(vals[::-1])
    new, _ = optimizer_step(p, g, OptimizerState.fresh("plain-gd", p.size), eta)
    assert new.tobytes() == (p - eta * g).tobytes()


def test_adam_zero_grad_is_identity():
    p = np.array([0.3, -2.0, 5.0])
    new, s = optimizer_step(p, np.zeros(3), OptimizerState.fresh("adam", 3), 0.01)
    assert np.array_equal(new, p)
    assert s.step_count == 1


def test_adam_matches_hand_transcript():
    # scalar recurrence written out step by step
    b1, b2, eps, eta = 0.9, 0.999, 1e-8, 0.01
    grads = [0.5, -0.2, 0.1]
    p, m, v = 1.0, 0.0, 0.0
    expected = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - eta * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        expected.append(p)
    params = np.array([1.0])
    state = OptimizerState.fresh("adam", 1)
    for g, want in zip(grads, expected):
        params, state = optimizer_step(params, np.array([g]), state, eta)
        assert abs(params[0] - want) < 1e-12
    assert state.step_count == 3


def test_optimizer_shape_error():
    with pytest.raises(ShapeError):
        optimizer_step(np.zeros(2), np.zeros(3), OptimizerState.fresh("plain-gd", 2), 0.1)


def test_data_center_update_zero_lr_is_identity(small_center):
    cfg = FederationConfig(learning_rate=0.0, optimizer="adam")
    g = random_model((8, 16, 8, 1), 0).params
    out = data_center_update(g, small_center, cfg, np.random.default_rng(0))
    assert np.array_equal(out, g)


def test_data_center_update_full_batch_single_step(small_center):
    cfg = FederationConfig(optimizer="plain-gd", batch_size=1000, local_epochs=1, learning_rate=0.05)
    m = random_model((8, 16, 8, 1), 3)
    g = m.params.copy()
    out = data_center_update(g, small_center, cfg, np.random.default_rng(9))
    grad = loss_gradient(m, (small_center.features, small_center.labels))
    want, _ = optimizer_step(g, grad, OptimizerState.fresh("plain-gd", g.size), 0.05)
    assert out.tobytes() == want.tobytes()
    assert np.array_equal(g, m.params)


@pytest.mark.parametrize("optimizer", ["adam", "plain-gd"])
def test_local_training_matches_functional_steps(small_center, optimizer):
    cfg = FederationConfig(optimizer=optimizer, batch_size=16, local_epochs=2, learning_rate=0.03)
    m = random_model((8, 16, 8, 1), 2)
    out = data_center_update(m.params, small_center, cfg, np.random.default_rng(6))
    rng = np.random.default_rng(6)
    p, state = m.params, OptimizerState.fresh(optimizer, m.params.size)
    for _ in range(2):
        for idx in batch_indices(len(small_center), 16, rng):
            grad = loss_gradient(m.with_params(p), (small_center.features[idx], small_center.labels[idx]))
            p, state = optimizer_step(p, grad, state, 0.03)
    assert out.tobytes() == p.tobytes()


def test_data_center_update_deterministic(small_center):
    cfg = FederationConfig()
    g = random_model((8, 16, 8, 1), 0).params
    a = data_center_update(g, small_center, cfg, np.random.default_rng(5))
    b = data_center_update(g, small_center, cfg, np.random.default_rng(5))
    assert a.tobytes() == b.tobytes()


def test_data_center_update_rejects_single_class(small_center):
    real_only = small_center.subset(small_center.labels == 1)
    with pytest.raises(DegenerateDatasetError):
        data_center_update(np.zeros(297), real_only, FederationConfig(), np.random.default_rng(0))


@settings(max_examples=25)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=3), st.integers(0, 2**32 - 1))
def test_checkpoint_round_trip(hidden, seed):
    m = random_model((3, *hidden, 1), seed)
    m.params[0] = -0.0
    back = deserialize_checkpoint(serialize_checkpoint(m))
    assert back.arch == m.arch
    assert back.params.tobytes() == m.params.tobytes()


def test_checkpoint_layout():
    m = random_model((2, 3, 1), 0)
    blob = serialize_checkpoint(m)
    assert blob[:4] == b"FEDW" and blob[4] == 1
    assert int.from_bytes(blob[5:9], "little") == 3
    assert [int.from_bytes(blob[9 + 4 * i:13 + 4 * i], "little") for i in range(3)] == [2, 3, 1]
    assert np.frombuffer(blob[21:], "<f8").tobytes() == m.params.tobytes()


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b[:-3],
        lambda b: b"FEDX" + b[4:],
        lambda b: b[:4] + b"\x02" + b[5:],
        lambda b: b + b"\x00" * 8,
        lambda b: b[:12],
        lambda b: b[:-8] + np.array([np.nan]).tobytes(),
    ],
    ids=["truncated", "magic", "version", "trailing", "short-header", "nan"],
)
def test_checkpoint_corruption(mutate):
    blob = serialize_checkpoint(random_model((2, 3, 1), 0))
    with pytest.raises(CheckpointFormatError):
        deserialize_checkpoint(mutate(blob))


def test_checkpoint_refuses_non_finite():
    m = random_model((2, 3, 1), 0)
    m.params[2] = np.inf
    with pytest.raises(CheckpointFormatError):
        serialize_checkpoint(m)
