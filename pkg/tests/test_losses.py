import numpy as np
import pytest

from lemkit.losses import accuracy, cross_entropy_loss, mean_squared_error, mse_loss, sequence_loss


def _fd(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fn(xp) - fn(xm)) / (2 * h)
    return g


@pytest.mark.parametrize("readout", ["per-step", "last-step"])
def test_mse_gradients(rng, readout):
    out = rng.normal(size=(5, 3, 2))
    tgt = rng.normal(size=out.shape if readout == "per-step" else out.shape[1:])
    loss, grad = mse_loss(out, tgt, readout)
    assert np.allclose(grad, _fd(lambda o: mse_loss(o, tgt, readout)[0], out), atol=1e-8)
    if readout == "last-step":
        assert loss == pytest.approx(0.5 * np.sum((out[-1] - tgt) ** 2) / 3)
        assert np.all(grad[:-1] == 0)


def test_mse_per_step_is_mean_of_half_squares(rng):
    out = rng.normal(size=(4, 2))
    tgt = rng.normal(size=(4, 2))
    loss, _ = mse_loss(out, tgt, "per-step")
    assert loss == pytest.approx(np.mean(0.5 * np.sum((out - tgt) ** 2, axis=1)))


def test_cross_entropy_gradient_and_stability(rng):
    logits = rng.normal(size=(4, 5))
    ids = np.array([0, 3, 4, 1])
    _, grad = cross_entropy_loss(logits, ids)
    assert np.allclose(grad, _fd(lambda z: cross_entropy_loss(z, ids)[0], logits), atol=1e-8)
    loss, _ = cross_entropy_loss(np.array([1000.0, 0.0]), 0)
    assert np.isfinite(loss) and loss == pytest.approx(0.0)
    with pytest.raises(ValueError):
        cross_entropy_loss(logits, np.array([0, 5, 1, 1]))


def test_sequence_loss_rules(rng):
    out = rng.normal(size=(3, 2, 4))
    with pytest.raises(ValueError):
        sequence_loss(out, np.array([0, 1]), "cross_entropy", "per-step")
    with pytest.raises(ValueError):
        sequence_loss(out, out, "hinge")
    _, g = sequence_loss(out, np.array([0, 1]), "cross_entropy", "last-step")
    assert g.shape == out.shape


def test_metrics():
    assert mean_squared_error([1.0, 2.0], [1.0, 4.0]) == 2.0
    assert accuracy(np.array([[0, 1.0], [2.0, 0]]), [1, 1]) == 0.5
