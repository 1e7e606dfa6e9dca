"""Optimizers, the mini-batch training loop and checkpoint persistence."""

from __future__ import annotations

import csv
import io
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import baselines, cell, gradients
from ._paramset import CheckpointError
from .losses import accuracy, mean_squared_error, sequence_loss
from .tasks.base import SequenceBatch


class TrainingDivergence(RuntimeError):
    """Loss or parameters became non-finite."""


class ModelOps(NamedTuple):
    params_type: type
    init: Callable
    forward: Callable
    backward: Callable
    predict: Callable


def _lem_init(d, m, o, delta_t, seed):
    return cell.init_params(d, m, o, delta_t, seed)


def _lstm_init(d, m, o, delta_t, seed):
    return baselines.lstm_init_params(d, m, o, seed)


MODELS = {
    "lem": ModelOps(cell.LemParams, _lem_init, cell.forward_sequence, gradients.backward, cell.predict),
    "lstm": ModelOps(baselines.LstmParams, _lstm_init, baselines.lstm_forward_sequence,
                     baselines.lstm_backward, baselines.lstm_predict),
}


def model_ops(params_or_kind) -> ModelOps:
    if isinstance(params_or_kind, str):
        if params_or_kind not in MODELS:
            raise ValueError(f"unknown model {params_or_kind!r}; choose from {sorted(MODELS)}")
        return MODELS[params_or_kind]
    for ops in MODELS.values():
        if isinstance(params_or_kind, ops.params_type):
            return ops
    raise TypeError(f"unknown parameter container {type(params_or_kind).__name__}")


@dataclass
class TrainConfig:
    model: str = "lem"
    d: int = 32
    delta_t: float = 1.0
    learning_rate: float = 2.6e-3
    batch_size: int = 50
    epochs: int = 10
    lr_decay_factor: float = 0.1
    # one epoch or a list of epochs; the rate is multiplied by lr_decay_factor at each
    lr_decay_epoch: int | list | None = None
    grad_clip: float | None = None
    seed: int = 0
    loss: str = "mse"
    readout: str = "last-step"
    optimizer: str = "adam"
    deterministic: bool = True
    # test-set evaluation interval; the test set is also scored whenever validation improves
    test_every: int = 1

    def __post_init__(self):
        model_ops(self.model)
        if self.d < 1 or self.batch_size < 1 or self.epochs < 1 or self.test_every < 1:
            raise ValueError("d, batch_size, epochs and test_every must be positive")
        if not self.delta_t > 0 or self.learning_rate < 0:
            raise ValueError("delta_t must be positive and learning_rate non-negative")
        if self.loss not in ("mse", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.readout not in ("last-step", "per-step"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if isinstance(self.lr_decay_epoch, (list, tuple)):
            self.lr_decay_epoch = sorted(int(e) for e in self.lr_decay_epoch) or None
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive when given")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        if self.lr_decay_epoch is None:
            return self.learning_rate
        milestones = self.lr_decay_epoch if isinstance(self.lr_decay_epoch, list) else [self.lr_decay_epoch]
        passed = sum(epoch >= e for e in milestones)
        return self.learning_rate * self.lr_decay_factor ** passed

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- optimizers -------------------------------------------------------------

ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class OptimizerState:
    kind: str
    step: int = 0
    m: object = None
    v: object = None
    epoch: int = 0

    @classmethod
    def create(cls, kind: str, params) -> "OptimizerState":
        if kind == "adam":
            return cls(kind, 0, params.zeros_like(), params.zeros_like())
        if kind == "sgd":
            return cls(kind, 0)
        raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(state: OptimizerState, params, grads, lr: float):
    """One update; ``state`` is advanced in place and new params returned."""
    state.step += 1
    if state.kind == "sgd":
        return params.replace(**{k: v - lr * getattr(grads, k) for k, v in params.items()})
    if state.kind != "adam":
        raise ValueError(f"unknown optimizer {state.kind!r}")
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    new, m_new, v_new = {}, {}, {}
    for k, theta in params.items():
        g = getattr(grads, k)
        m = ADAM_BETA1 * getattr(state.m, k) + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * getattr(state.v, k) + (1.0 - ADAM_BETA2) * g * g
        new[k] = theta - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        m_new[k], v_new[k] = m, v
    state.m = state.m.replace(**m_new)
    state.v = state.v.replace(**v_new)
    return params.replace(**new)


def clip_gradients(grads, max_norm: float):
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for _, g in grads.items())))
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return grads.map(lambda g: g * scale), norm


# -- checkpoints ------------------------------------------------------------

_OPT_HEADER = b"OPT1"
_NO_OPT = b"NOPT"


def checkpoint_bytes(params, optimizer: OptimizerState | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(params.to_bytes())
    if optimizer is None:
        buf.write(_NO_OPT)
    else:
        buf.write(_OPT_HEADER)
        buf.write(optimizer.kind.encode().ljust(4, b"_"))
        buf.write(struct.pack("<2q", optimizer.step, optimizer.epoch))
        if optimizer.kind == "adam":
            buf.write(optimizer.m.to_bytes())
            buf.write(optimizer.v.to_bytes())
    return buf.getvalue()


def checkpoint_save(path, params, optimizer: OptimizerState | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, optimizer))


def checkpoint_from_bytes(data: bytes, expect: str | None = None):
    """Parse a checkpoint; ``expect`` ("lem"/"lstm") enforces the model kind."""
    if expect is not None:
        types = [model_ops(expect).params_type]
    else:
        types = [ops.params_type for ops in MODELS.values()]
    ptype = next((t for t in types if data.startswith(t.HEADER)), None)
    if ptype is None:
        wanted = " or ".join(repr(t.HEADER) for t in types)
        raise CheckpointError(f"expected header {wanted}, found {data[:5]!r}")
    stream = io.BytesIO(data)
    params = ptype.from_stream(stream)
    tag = stream.read(4)
    optimizer = None
    if tag == _OPT_HEADER:
        kind = stream.read(4).decode(errors="replace").rstrip("_")
        raw = stream.read(16)
        if len(raw) != 16 or kind not in ("adam", "sgd"):
            raise CheckpointError("corrupt optimizer section")
        step, epoch = struct.unpack("<2q", raw)
        optimizer = OptimizerState(kind, step, epoch=epoch)
        if kind == "adam":
            optimizer.m = ptype.from_stream(stream)
            optimizer.v = ptype.from_stream(stream)
    elif tag != _NO_OPT:
        raise CheckpointError("missing optimizer section")
    if stream.read(1):
        raise CheckpointError("trailing bytes in checkpoint")
    return params, optimizer


def checkpoint_load(path, expect: str | None = None):
    return checkpoint_from_bytes(Path(path).read_bytes(), expect)


# -- training loop ----------------------------------------------------------

@dataclass
class Metrics:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    test_metric: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    metric_name: str = "mse"
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    best_test_loss: float = float("nan")
    best_test_metric: float = float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_metric", "test_metric", "seconds"])
            for row in zip(self.epochs, self.train_loss, self.val_metric, self.test_metric, self.seconds):
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])

    def summary(self) -> dict:
        return {
            "metric": self.metric_name,
            "epochs": len(self.epochs),
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "best_test_loss": self.best_test_loss,
            "best_test_metric": self.best_test_metric,
            "final_train_loss": self.train_loss[-1] if self.train_loss else None,
        }


@dataclass
class TrainResult:
    best_params: object
    final_params: object
    optimizer: OptimizerState
    metrics: Metrics


def evaluate(params, data: SequenceBatch, loss_kind: str, readout: str, chunk: int = 256):
    """(loss, metric) on a dataset; metric is accuracy for classification, plain MSE otherwise."""
    predict = model_ops(params).predict
    outs = [predict(params, data.subset(slice(i, i + chunk)).time_major())
            for i in range(0, len(data), chunk)]
    outputs = np.concatenate(outs, axis=1)
    targets = data.time_major_targets()
    loss, _ = sequence_loss(outputs, targets, loss_kind, readout)
    if loss_kind == "cross_entropy":
        return loss, accuracy(outputs[-1], targets)
    pred = outputs if readout == "per-step" else outputs[-1]
    return loss, mean_squared_error(pred, targets)


def _output_dim(config: TrainConfig, data: SequenceBatch) -> int:
    if config.loss == "cross_entropy":
        return int(data.meta.get("n_classes", int(np.max(data.targets)) + 1))
    return data.targets.shape[-1]


def train_run(config: TrainConfig, train: SequenceBatch, val: SequenceBatch, test: SequenceBatch,
              resume: tuple | None = None, log: Callable[[str], None] | None = None) -> TrainResult:
    """Mini-batch training with per-epoch shuffling and best-on-validation selection.

    ``resume`` is (params, optimizer_state) from a checkpoint; training picks up
    at ``optimizer_state.epoch``. Epoch shuffles draw from a generator seeded
    with (seed, epoch) so resumed and uninterrupted runs see the same batches.
    """
    if min(len(train), len(val), len(test)) == 0:
        raise ValueError("train, validation and test sets must be nonempty")
    ops = model_ops(config.model)
    if resume is None:
        params = ops.init(config.d, train.n_features, _output_dim(config, train),
                          config.delta_t, [config.seed, 0])
        opt = OptimizerState.create(config.optimizer, params)
    else:
        params, opt = resume
        opt = opt or OptimizerState.create(config.optimizer, params)
    metrics = Metrics(metric_name="accuracy" if config.loss == "cross_entropy" else "mse")
    best = params
    better = (lambda a, b: a < b)
    for epoch in range(opt.epoch, config.epochs):
        t0 = time.perf_counter()
        lr = config.lr_at(epoch)
        order = np.random.default_rng([config.seed, 1, epoch]).permutation(len(train))
        losses = []
        for start in range(0, len(train), config.batch_size):
            batch = train.subset(order[start:start + config.batch_size])
            outputs, caches = ops.forward(params, batch.time_major())
            loss, gout = sequence_loss(outputs, batch.time_major_targets(), config.loss, config.readout)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch + 1}, step {opt.step + 1}")
            grads = ops.backward(params, caches, gout)
            if config.grad_clip is not None:
                grads, _ = clip_gradients(grads, config.grad_clip)
            params = optimizer_step(opt, params, grads, lr)
            losses.append(loss)
        if not params.all_finite():
            raise TrainingDivergence(f"non-finite parameters after epoch {epoch + 1}")
        opt.epoch = epoch + 1
        val_loss, val_metric = evaluate(params, val, config.loss, config.readout)
        improved = better(val_loss, metrics.best_val_loss)
        if improved or (epoch + 1) % config.test_every == 0 or epoch + 1 == config.epochs:
            test_loss, test_metric = evaluate(params, test, config.loss, config.readout)
        else:
            test_loss = test_metric = float("nan")
        elapsed = 0.0 if config.deterministic else time.perf_counter() - t0
        metrics.epochs.append(epoch + 1)
        metrics.train_loss.append(float(np.mean(losses)))
        metrics.val_loss.append(val_loss)
        metrics.val_metric.append(val_metric)
        metrics.test_loss.append(test_loss)
        metrics.test_metric.append(test_metric)
        metrics.seconds.append(elapsed)
        if improved:
            metrics.best_val_loss = val_loss
            metrics.best_epoch = epoch + 1
            metrics.best_test_loss, metrics.best_test_metric = test_loss, test_metric
            best = params
        if log is not None:
            log(f"epoch {epoch + 1:4d}  lr {lr:.2e}  train {metrics.train_loss[-1]:.5f}  "
                f"val {val_metric:.5f}  test {test_metric:.5f}")
    return TrainResult(best, params, opt, metrics)


def train(config: TrainConfig, train_set: SequenceBatch, val: SequenceBatch, test: SequenceBatch):
    """Returns (best-on-validation params, Metrics)."""
    result = train_run(config, train_set, val, test)
    return result.best_params, result.metrics
