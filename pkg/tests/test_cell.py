import numpy as np
import pytest

from lemkit._paramset import CheckpointError
from lemkit.baselines import lstm_param_count
from lemkit.cell import (
    LemParams, LemState, forward_sequence, forward_step, init_params, load_params, param_count,
    predict, save_params,
)
from lemkit.numerics import sigma_hat


def test_param_count_table_values():
    assert param_count(128, 1, 10) == 67_840
    assert param_count(128, 96, 10) == 116_480


def test_param_count_matches_containers_and_lstm():
    for d in range(1, 11):
        for m in range(1, 11):
            for o in (1, 2, 10):
                assert param_count(d, m, o) == lstm_param_count(d, m, o)
    assert init_params(5, 2, 3, 0.1, 0).n_params() == param_count(5, 2, 3)


def test_init_bounds_and_determinism():
    p = init_params(16, 3, 2, 0.5, seed=3)
    bound = 1 / 4
    assert all(np.all(np.abs(v) <= bound) for _, v in p.items())
    q = init_params(16, 3, 2, 0.5, seed=3)
    assert p.to_bytes() == q.to_bytes()


def test_step_against_hand_computation(small_lem, rng):
    p = small_lem
    y0, z0 = rng.normal(size=4), rng.normal(size=4)
    u = rng.normal(size=3)
    state, cache = forward_step(p, LemState(y0, z0), u)
    dt = p.delta_t * sigma_hat(p.W1 @ y0 + p.V1 @ u + p.b1)
    dtb = p.delta_t * sigma_hat(p.W2 @ y0 + p.V2 @ u + p.b2)
    z = (1 - dt) * z0 + dt * np.tanh(p.Wz @ y0 + p.Vz @ u + p.bz)
    y = (1 - dtb) * y0 + dtb * np.tanh(p.Wy @ z + p.Vy @ u + p.by)
    assert np.allclose(state.z, z, atol=1e-15)
    assert np.allclose(state.y, y, atol=1e-15)
    assert np.allclose(cache.D, p.Wy @ z + p.Vy @ u + p.by)


def test_zero_params_keep_zero_state():
    p = LemParams.zeros(3, 2, 1, 0.5)
    out, caches = forward_sequence(p, np.ones((10, 2)))
    assert np.all(out == 0)
    assert np.all(caches[-1].next_state.z == 0)


def test_batched_matches_unbatched(small_lem, rng):
    u = rng.normal(size=(7, 5, 3))
    out_b, _ = forward_sequence(small_lem, u)
    for b in range(5):
        out, _ = forward_sequence(small_lem, u[:, b])
        assert np.allclose(out, out_b[:, b], atol=1e-14)
    assert np.allclose(predict(small_lem, u), out_b, atol=0)


def test_forward_rejects_bad_input(small_lem):
    with pytest.raises(ValueError):
        forward_sequence(small_lem, np.ones((4, 2)))
    with pytest.raises(ValueError):
        forward_sequence(small_lem, np.array([[np.nan, 0, 0]]))
    with pytest.raises(ValueError):
        forward_step(small_lem, LemState.zeros(4), np.array([np.inf, 0, 0]))
    with pytest.raises(ValueError):
        init_params(3, 1, 1, 0.0, 0)


def test_checkpoint_round_trip(tmp_path, small_lem):
    path = tmp_path / "p.bin"
    save_params(small_lem, path)
    back = load_params(path)
    assert back.to_bytes() == small_lem.to_bytes()
    assert back.delta_t == small_lem.delta_t
    raw = path.read_bytes()
    assert raw[:4] == b"LEM1"
    path.write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        load_params(path)
    path.write_bytes(b"LSTM1" + raw[4:])
    with pytest.raises(CheckpointError):
        load_params(path)


def test_flatten_unflatten(small_lem):
    flat = small_lem.flatten()
    assert flat.size == small_lem.n_params()
    assert small_lem.unflatten(flat).to_bytes() == small_lem.to_bytes()
    with pytest.raises(ValueError):
        small_lem.unflatten(np.zeros(flat.size + 1))
