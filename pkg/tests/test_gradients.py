import numpy as np
import pytest

from lemkit.baselines import lstm_backward, lstm_forward_sequence, lstm_init_params
from lemkit.cell import LemParams, LemState, _step, forward_sequence, init_params
from lemkit.gradients import (
    backward, eta, finite_difference_gradient, gradient_contribution, gradient_contributions,
    gradient_report, immediate_state_derivative, interleave, max_relative_error, prop2_bound,
    state_jacobian,
)
from lemkit.losses import sequence_loss


def _grads(params, u, targets, loss_kind="mse", readout="per-step"):
    out, caches = forward_sequence(params, u)
    _, g = sequence_loss(out, targets, loss_kind, readout)
    return backward(params, caches, g)


@pytest.mark.parametrize("readout", ["per-step", "last-step"])
def test_backward_matches_finite_differences(rng, readout):
    p = init_params(3, 2, 2, 0.4, seed=1)
    u = rng.uniform(-1, 1, size=(6, 2))
    tgt = rng.uniform(-1, 1, size=(6, 2) if readout == "per-step" else 2)
    exact = _grads(p, u, tgt, "mse", readout).flatten()
    fd = finite_difference_gradient(p, u, tgt, "mse", 1e-4, readout, richardson=True,
                                    extended=True).flatten()
    assert max_relative_error(exact, fd) < 1e-6


def test_backward_cross_entropy_batched(rng):
    p = init_params(3, 2, 4, 0.7, seed=2)
    u = rng.uniform(-1, 1, size=(5, 3, 2))
    ids = np.array([0, 3, 1])
    exact = _grads(p, u, ids, "cross_entropy", "last-step").flatten()
    fd = finite_difference_gradient(p, u, ids, "cross_entropy", 1e-4, "last-step",
                                    richardson=True, extended=True).flatten()
    assert max_relative_error(exact, fd) < 1e-6


def test_batch_gradient_is_mean_of_singles(rng):
    p = init_params(3, 2, 1, 0.5, seed=3)
    u = rng.normal(size=(4, 2, 2))
    tgt = rng.normal(size=(2, 1))
    g = _grads(p, u, tgt, "mse", "last-step").flatten()
    singles = [_grads(p, u[:, b], tgt[b], "mse", "last-step").flatten() for b in range(2)]
    assert np.allclose(g, np.mean(singles, axis=0), atol=1e-14)


def test_lstm_backward_matches_finite_differences(rng):
    p = lstm_init_params(3, 2, 2, seed=4)
    u = rng.uniform(-1, 1, size=(6, 2))
    tgt = rng.uniform(-1, 1, size=(6, 2))
    out, caches = lstm_forward_sequence(p, u)
    _, g = sequence_loss(out, tgt, "mse", "per-step")
    exact = lstm_backward(p, caches, g).flatten()
    fd = finite_difference_gradient(p, u, tgt, "mse", 1e-4, "per-step", richardson=True,
                                    extended=True).flatten()
    assert max_relative_error(exact, fd) < 1e-6


def test_finite_difference_rejects_bad_epsilon(small_lem):
    with pytest.raises(ValueError):
        finite_difference_gradient(small_lem, np.zeros((2, 3)), np.zeros((2, 2)), epsilon=0.0)


def _unbatched_cache(p, y0, z0, u):
    return _step(p, y0, z0, u)


def test_state_jacobian_matches_finite_differences(rng):
    p = init_params(4, 2, 1, 0.6, seed=5).map(lambda a: 2 * a)
    y0, z0, u = rng.normal(size=4), rng.normal(size=4), rng.normal(size=2)
    J = state_jacobian(p, _step(p, y0, z0, u))
    x0 = interleave(z0, y0)
    h = 1e-6
    fd = np.zeros((8, 8))
    for j in range(8):
        for sgn in (1, -1):
            x = x0.copy()
            x[j] += sgn * h
            c = _step(p, x[1::2], x[0::2], u)
            fd[:, j] += sgn * interleave(c.next_state.z, c.next_state.y) / (2 * h)
    assert np.allclose(J, fd, atol=1e-8)


def test_interleave_layout():
    assert np.array_equal(interleave(np.array([1, 2]), np.array([10, 20])), [1, 10, 2, 20])


@pytest.mark.parametrize("theta", [("Wz", 1, 2), ("Wy", 0, 3), ("W1", 2, 0), ("W2", 3, 1),
                                   ("V1", 1, 0), ("Vy", 2, 1), ("b2", 3), ("bz", 0)])
def test_contributions_sum_to_bptt(rng, theta):
    p = init_params(4, 2, 4, 0.3, seed=6).replace(Wout=np.eye(4))
    n = 9
    u = rng.uniform(-1, 1, size=(n, 2))
    tgt = rng.uniform(-1, 1, size=(n, 4))
    _, caches = forward_sequence(p, u)
    # loss E_n alone: per-step gradient only at step n, undo the 1/N mean
    grads_out = np.zeros((n, 4))
    grads_out[n - 1] = caches[n - 1].next_state.y - tgt[n - 1]
    full = getattr(backward(p, caches, grads_out), theta[0])[theta[1:]]
    parts = gradient_contributions(p, caches, n, theta, tgt)
    assert parts.sum() == pytest.approx(full, rel=1e-10, abs=1e-14)
    assert gradient_contribution(p, caches, n, 3, theta, tgt) == parts[2]
    with pytest.raises(IndexError):
        gradient_contribution(p, caches, n, n + 1, theta, tgt)


def test_wz_contribution_at_first_step_is_zero():
    p = init_params(3, 1, 3, 0.1, seed=0).replace(Wout=np.eye(3))
    _, caches = forward_sequence(p, np.ones((5, 1)))
    d = immediate_state_derivative(p, caches[0], ("Wz", 0, 1))
    assert np.all(d == 0)


def test_prop2_bound_zero_weights():
    p = LemParams.zeros(3, 2, 3, 0.1)
    assert eta(p) == 0.0
    small, uncond = prop2_bound(p, 1.0)
    assert uncond == pytest.approx((3 + np.sqrt(3)) * (1 + np.e))
    assert small == pytest.approx((3 + np.sqrt(3)) * 3)


def test_gradient_report(rng):
    p = init_params(3, 2, 3, 0.1, seed=1).replace(Wout=np.eye(3))
    rep = gradient_report(p, rng.uniform(-1, 1, (10, 2)), rng.uniform(-1, 1, (10, 3)))
    assert rep.passed and rep.empirical_max_abs <= rep.bound_unconditional
    assert set(rep.to_dict()) == {"eta", "x_hat", "bound_small_dt", "bound_unconditional",
                                  "empirical_max_abs", "pass"}
    with pytest.raises(ValueError):
        gradient_report(init_params(3, 2, 3, 0.1, 1), np.zeros((2, 2)), np.zeros((2, 3)))


def test_zero_model_zero_targets_zero_gradients():
    p = LemParams.zeros(2, 1, 2, 0.1).replace(Wout=np.eye(2))
    rep = gradient_report(p, np.zeros((10, 1)), np.zeros((10, 2)))
    assert rep.empirical_max_abs == 0.0
