import gzip
import json

import numpy as np
import pytest

from lemkit.tasks import (
    BASELINE_MSE, DatasetFormatError, FhnConfig, SequenceBatch, adding_problem, fhn_generate,
    fhn_rhs, load_dataset, mnist_load_idx, noise_padded_classification, save_dataset, write_idx,
)


def test_adding_structure():
    b = adding_problem(50, 100, 0)
    assert b.inputs.shape == (100, 50, 2) and b.targets.shape == (100, 1)
    markers = b.inputs[:, :, 1]
    assert np.all(markers[:, :25].sum(axis=1) == 1) and np.all(markers[:, 25:].sum(axis=1) == 1)
    marked = (b.inputs[:, :, 0] * markers).sum(axis=1)
    assert np.allclose(marked, b.targets[:, 0])
    assert np.all((b.inputs[:, :, 0] >= 0) & (b.inputs[:, :, 0] < 1))


def test_adding_baseline_variance():
    b = adding_problem(10, 20000, 3)
    assert np.mean((b.targets - 1.0) ** 2) == pytest.approx(BASELINE_MSE, abs=0.005)


def test_adding_seeding_and_errors():
    a = adding_problem(20, 5, 9)
    assert np.array_equal(a.inputs, adding_problem(20, 5, 9).inputs)
    # per-sample seeds: a prefix of a larger batch is the smaller batch
    assert np.array_equal(a.inputs, adding_problem(20, 8, 9).inputs[:5])
    with pytest.raises(ValueError):
        adding_problem(1, 5, 0)
    with pytest.raises(ValueError):
        adding_problem(10, 0, 0)


def test_dataset_round_trip(tmp_path):
    b = adding_problem(8, 4, 1)
    npz, sidecar = save_dataset(b, tmp_path / "set")
    desc = json.loads(sidecar.read_text())
    assert desc["count"] == 4 and desc["n_steps"] == 8
    back = load_dataset(npz)
    assert np.array_equal(back.inputs, b.inputs) and back.meta["task"] == "adding"
    npz.write_bytes(b"garbage")
    with pytest.raises(DatasetFormatError):
        load_dataset(npz)


def test_sequence_batch_validation():
    with pytest.raises(ValueError):
        SequenceBatch(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        SequenceBatch(np.full((1, 2, 1), np.nan), np.zeros(1))
    b = SequenceBatch(np.zeros((5, 3, 1)), np.arange(5))
    assert b.is_classification
    assert [len(s) for s in b.split(2, 2)] == [2, 2, 1]


def test_fhn_tau_scaling():
    y = np.array([0.3, -0.2])
    base = fhn_rhs(FhnConfig())(0.0, y)
    doubled = fhn_rhs(FhnConfig(tau=0.04))(0.0, y)
    assert doubled[1] == pytest.approx(2 * base[1])
    assert doubled[0] == base[0]


def test_fhn_generate_defaults():
    cfg = FhnConfig()
    assert (cfg.tau, cfg.i_ext, cfg.a, cfg.b, cfg.t_end, cfg.n_points) == (0.02, 0.5, 0.7, 0.8, 400.0, 1000)
    b = fhn_generate(cfg, 16, 0)
    assert b.inputs.shape == (16, 1000, 2) and b.targets.shape == (16, 1000, 2)
    c = b.inputs[:, 0, 1]
    assert np.all(np.abs(c) <= 1) and np.allclose(b.targets[:, 0, 0], c) and np.all(b.targets[:, 0, 1] == 0)
    assert np.all(np.abs(b.targets[:, :, 0]) <= 2.5)
    assert np.array_equal(b.targets, fhn_generate(cfg, 16, 0).targets)
    with pytest.raises(ValueError):
        FhnConfig(n_points=1)


def test_noisepad():
    with pytest.raises(ValueError):
        noise_padded_classification(8, 8, 2, 3, 4, 0)
    b = noise_padded_classification(8, 40, 2, 3, 50, 0)
    assert b.inputs.shape == (50, 40, 2) and b.targets.shape == (50,)
    tail = b.inputs[:, 8:]
    assert np.all((tail >= 0) & (tail < 1))


def test_noisepad_prefix_mean_separates_two_classes():
    templates = np.stack([np.full((10, 1), 0.2), np.full((10, 1), 0.8)])
    b = noise_padded_classification(10, 100, 1, 2, 400, 5, noise_scale=0.1, templates=templates)
    pred = (b.inputs[:, :10, 0].mean(axis=1) > 0.5).astype(int)
    assert np.mean(pred == b.targets) >= 0.99


def test_mnist_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    labels = np.array([1, 2, 3, 4, 5], dtype=np.uint8)
    write_idx(images, labels, tmp_path / "img", tmp_path / "lbl")
    b = mnist_load_idx(tmp_path / "img", tmp_path / "lbl")
    assert b.inputs.shape == (5, 784, 1)
    assert np.allclose(b.inputs[2, :, 0], images[2].ravel() / 255.0)
    assert b.inputs.min() >= 0 and b.inputs.max() <= 1
    p1 = mnist_load_idx(tmp_path / "img", tmp_path / "lbl", permutation_seed=3)
    p2 = mnist_load_idx(tmp_path / "img", tmp_path / "lbl", permutation_seed=3)
    assert np.array_equal(p1.inputs, p2.inputs)
    assert np.allclose(np.sort(p1.inputs[0, :, 0]), np.sort(b.inputs[0, :, 0]))
    # gzip is accepted as well
    (tmp_path / "img.gz").write_bytes(gzip.compress((tmp_path / "img").read_bytes()))
    assert np.array_equal(mnist_load_idx(tmp_path / "img.gz", tmp_path / "lbl").inputs, b.inputs)


def test_mnist_format_errors(tmp_path):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    write_idx(images, np.zeros(3), tmp_path / "img", tmp_path / "lbl")
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "bad").write_bytes(raw[:4].replace(b"\x08\x03", b"\x08\x01") + raw[4:])
    with pytest.raises(DatasetFormatError):
        mnist_load_idx(tmp_path / "bad", tmp_path / "lbl")
    (tmp_path / "short").write_bytes(raw[:-1])
    with pytest.raises(DatasetFormatError):
        mnist_load_idx(tmp_path / "short", tmp_path / "lbl")
    write_idx(images[:2], np.zeros(2), tmp_path / "img2", tmp_path / "lbl2")
    with pytest.raises(DatasetFormatError):
        mnist_load_idx(tmp_path / "img", tmp_path / "lbl2")
