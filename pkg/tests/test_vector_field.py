import numpy as np
import pytest

from driftlab import flow_core as fc
from driftlab.exceptions import ConfigError, DimensionError, NumericError
from driftlab.memory import ModelInput
from driftlab.vector_field import (
    AdamState,
    GradientRecord,
    VelocityField,
    adam_step,
    load_checkpoint,
    save_checkpoint,
    time_embedding,
)

D, P, T = 6, 3, 5


def make_batch(seed, B=4, d=D, p=P):
    rng = np.random.default_rng(seed)
    inp = ModelInput(rng.normal(size=(B, T, d)), rng.normal(size=(B, T, p)),
                     rng.normal(size=(B, T, d)), rng.uniform(size=B))
    return inp, rng


def fd_check(field, inp, target, n_coords=64, h=1e-5, seed=0):
    """Central differences on randomly chosen coordinates; returns max relative error."""
    theta = field.get_flat_params()
    analytic = field.loss_and_grad(inp, target).grad
    coords = np.random.default_rng(seed).choice(theta.size, size=n_coords, replace=False)
    worst = 0.0
    for i in coords:
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        lp = field.set_flat_params(tp).loss_and_grad(inp, target).loss
        lm = field.set_flat_params(tm).loss_and_grad(inp, target).loss
        numeric = (lp - lm) / (2 * h)
        worst = max(worst, abs(numeric - analytic[i]) / max(abs(numeric), abs(analytic[i]), 1e-8))
    field.set_flat_params(theta)
    return worst


@pytest.fixture
def field():
    return VelocityField(hidden_width=16, random_state=3).initialize(D, P)


def test_time_embedding_shape():
    emb = time_embedding(np.array([0.0, 0.5]), 4)
    assert emb.shape == (2, 8)
    np.testing.assert_allclose(emb[0], [0, 0, 0, 0, 1, 1, 1, 1], atol=1e-15)


def test_zero_field_outputs_zero():
    f = VelocityField(hidden_width=8).initialize(D, P, zero=True)
    inp, _ = make_batch(0)
    np.testing.assert_array_equal(f.predict(inp), 0.0)


def test_evaluation_is_deterministic_and_shaped(field):
    inp, _ = make_batch(1)
    a, b = field.predict(inp), field.predict(inp)
    np.testing.assert_array_equal(a, b)
    assert a.shape == inp.state.shape
    single = ModelInput(inp.state[0], inp.poses[0], inp.context[0], inp.t[0])
    np.testing.assert_allclose(field.predict(single), a[0], atol=1e-14)


def test_output_is_sensitive_to_inputs(field):
    inp, _ = make_batch(2)
    base = field.predict(inp)
    for which in ("state", "context", "poses"):
        arrays = {"state": inp.state.copy(), "context": inp.context.copy(), "poses": inp.poses.copy()}
        arrays[which][0, 2, 1] += 1e-4
        moved = field.predict(ModelInput(arrays["state"], arrays["poses"], arrays["context"], inp.t))
        assert np.max(np.abs(moved - base)) > 1e-9, which


def test_shape_errors(field):
    with pytest.raises(DimensionError):
        field.predict(ModelInput(np.zeros((T, D + 1)), np.zeros((T, P)), np.zeros((T, D + 1)), 0.3))
    inp, _ = make_batch(3)
    with pytest.raises(DimensionError):
        field.loss_and_grad(inp, np.zeros((4, T, D + 1)))


def test_loss_zero_at_prediction(field):
    inp, _ = make_batch(4)
    rec = field.loss_and_grad(inp, field.predict(inp))
    assert rec.loss == 0.0
    np.testing.assert_array_equal(rec.grad, 0.0)


def test_doubling_residual_quadruples_loss(field):
    inp, rng = make_batch(5)
    pred = field.predict(inp)
    delta = rng.normal(size=pred.shape)
    l1 = field.loss_and_grad(inp, pred + delta).loss
    l2 = field.loss_and_grad(inp, pred + 2 * delta).loss
    assert l2 == pytest.approx(4 * l1, rel=1e-12)


def test_gradient_matches_finite_differences_fm(field):
    inp, rng = make_batch(6)
    x0, x1 = rng.normal(size=(2,) + inp.state.shape)
    assert fd_check(field, inp, fc.fm_velocity(x0, x1)) < 1e-4


def test_gradient_matches_finite_differences_rfm(field):
    inp, rng = make_batch(7)
    x0, x1, x1t = rng.normal(size=(3,) + inp.state.shape)
    target = np.stack([fc.restorative_velocity(x0[b], x1[b], x1t[b], inp.t[b]) for b in range(len(x0))])
    assert fd_check(field, inp, target, seed=1) < 1e-4


@pytest.mark.parametrize("block", ["pose_w", "pose_b", "w1", "b1", "w2", "b2", "w3", "b3"])
def test_gradient_per_block(field, block):
    inp, rng = make_batch(8)
    target = rng.normal(size=inp.state.shape)
    theta = field.get_flat_params()
    sl = field.block_slices()[block]
    analytic = field.loss_and_grad(inp, target).grad[sl]
    idx = np.random.default_rng(0).choice(sl.stop - sl.start, size=min(8, sl.stop - sl.start), replace=False)
    for j in idx:
        i = sl.start + j
        tp, tm = theta.copy(), theta.copy()
        tp[i] += 1e-5
        tm[i] -= 1e-5
        num = (field.set_flat_params(tp).loss_and_grad(inp, target).loss
               - field.set_flat_params(tm).loss_and_grad(inp, target).loss) / 2e-5
        assert abs(num - analytic[j]) / max(abs(num), abs(analytic[j]), 1e-8) < 1e-4
    field.set_flat_params(theta)


def test_nonfinite_forward_raises(field):
    theta = field.get_flat_params()
    theta[field.block_slices()["b3"]] = np.inf
    field.set_flat_params(theta)
    inp, _ = make_batch(9)
    with pytest.raises(NumericError):
        field.predict(inp)


def test_adam_zero_grad_and_zero_lr(field):
    theta = field.get_flat_params()
    state = adam_step(field, GradientRecord(0.0, np.zeros_like(theta)), AdamState.zeros(theta.size), lr=1e-2)
    np.testing.assert_array_equal(field.get_flat_params(), theta)
    inp, rng = make_batch(10)
    rec = field.loss_and_grad(inp, rng.normal(size=inp.state.shape))
    adam_step(field, rec, state, lr=0.0)
    np.testing.assert_array_equal(field.get_flat_params(), theta)
    with pytest.raises(NumericError):
        adam_step(field, GradientRecord(0.0, np.full_like(theta, np.nan)), state, lr=1e-3)


def test_adam_decreases_loss_on_frozen_batch(field):
    inp, rng = make_batch(11)
    target = rng.normal(size=inp.state.shape)
    state = AdamState.zeros(field.n_params)
    losses = []
    for _ in range(10):
        rec = field.loss_and_grad(inp, target)
        losses.append(rec.loss)
        state = adam_step(field, rec, state, lr=1e-3)
    assert losses[-1] < losses[0]


def test_adam_fits_linear_target():
    f = VelocityField(hidden_width=32, random_state=0).initialize(D, P)
    inp, rng = make_batch(12, B=8)
    M = rng.normal(scale=0.3, size=(D, D))
    target = inp.state @ M.T + 0.5 * inp.context
    state = AdamState.zeros(f.n_params)
    first = f.loss_and_grad(inp, target).loss
    for _ in range(200):
        state = adam_step(f, f.loss_and_grad(inp, target), state, lr=1e-2)
    assert f.loss_and_grad(inp, target).loss <= 0.1 * first


def test_parameter_trajectory_is_reproducible():
    runs = []
    for _ in range(2):
        f = VelocityField(hidden_width=8, random_state=4).initialize(D, P)
        inp, rng = make_batch(13)
        target = rng.normal(size=inp.state.shape)
        state = AdamState.zeros(f.n_params)
        for _ in range(5):
            state = adam_step(f, f.loss_and_grad(inp, target), state, lr=1e-3)
        runs.append(f.get_flat_params())
    np.testing.assert_array_equal(runs[0], runs[1])


def test_checkpoint_round_trip(tmp_path, field):
    field.n_iter_ = 17
    path = tmp_path / "ckpt.txt"
    save_checkpoint(field, path, meta={"seed": 3})
    back, header = load_checkpoint(path)
    np.testing.assert_array_equal(back.get_flat_params(), field.get_flat_params())
    assert header["iterations"] == 17 and header["meta"] == {"seed": 3}
    assert back.hidden_width == 16
    lines = path.read_text().splitlines()
    lines[0] = lines[0].replace('"version": 1', '"version": 99')
    path.write_text("\n".join(lines))
    with pytest.raises(ConfigError):
        load_checkpoint(path)


def test_sklearn_params(field):
    params = field.get_params()
    assert params["hidden_width"] == 16 and params["random_state"] == 3
