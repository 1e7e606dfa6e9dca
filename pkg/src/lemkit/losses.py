"""Loss heads returning (loss, dloss/doutputs).

Outputs are time-major: shape [N, o] or [N, batch, o]. Gradients come back
in that same shape so they can be handed straight to a backward pass.
"""

from __future__ import annotations

import numpy as np

from .numerics import DTYPE

READOUTS = ("per-step", "last-step")
LOSSES = ("mse", "cross_entropy")


def mse_loss(outputs, targets, readout: str = "per-step"):
    """Half squared error.

    per-step: mean over steps (and batch) of 0.5 * ||w_n - target_n||^2,
    targets shaped like outputs. last-step: 0.5 * ||w_N - target||^2 averaged
    over the batch, targets shaped like outputs[-1].
    """
    outputs = np.asarray(outputs, dtype=DTYPE)
    targets = np.asarray(targets, dtype=DTYPE)
    batch = outputs.shape[1] if outputs.ndim == 3 else 1
    grads = np.zeros_like(outputs)
    if readout == "per-step":
        if targets.shape != outputs.shape:
            raise ValueError(f"targets {targets.shape} do not match outputs {outputs.shape}")
        diff = outputs - targets
        scale = 1.0 / (outputs.shape[0] * batch)
        return 0.5 * float(np.sum(diff * diff)) * scale, diff * scale
    if readout == "last-step":
        if targets.shape != outputs.shape[1:]:
            raise ValueError(f"targets {targets.shape} do not match final output {outputs.shape[1:]}")
        diff = outputs[-1] - targets
        grads[-1] = diff / batch
        return 0.5 * float(np.sum(diff * diff)) / batch, grads
    raise ValueError(f"unknown readout {readout!r}")


def _log_softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cross_entropy_loss(logits, class_ids):
    """Mean softmax cross-entropy; logits [o] or [batch, o]."""
    logits = np.asarray(logits, dtype=DTYPE)
    ids = np.asarray(class_ids)
    single = logits.ndim == 1
    if single:
        logits, ids = logits[None, :], ids.reshape(1)
    if ids.shape != logits.shape[:1]:
        raise ValueError("need one class id per row of logits")
    if np.any(ids < 0) or np.any(ids >= logits.shape[1]) or not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"class ids must be integers in [0, {logits.shape[1]})")
    logp = _log_softmax(logits)
    rows = np.arange(len(ids))
    loss = -float(np.mean(logp[rows, ids]))
    grad = np.exp(logp)
    grad[rows, ids] -= 1.0
    grad /= len(ids)
    return loss, (grad[0] if single else grad)


def sequence_loss(outputs, targets, loss_kind: str = "mse", readout: str = "per-step"):
    """Dispatch to a loss head and return gradients shaped like ``outputs``."""
    if loss_kind == "mse":
        return mse_loss(outputs, targets, readout)
    if loss_kind == "cross_entropy":
        if readout != "last-step":
            raise ValueError("cross-entropy is only defined on the last-step readout")
        loss, g_last = cross_entropy_loss(np.asarray(outputs)[-1], targets)
        grads = np.zeros_like(np.asarray(outputs, dtype=DTYPE))
        grads[-1] = g_last
        return loss, grads
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def mean_squared_error(pred, target) -> float:
    """Plain MSE (no 1/2), the metric quoted for regression tasks."""
    diff = np.asarray(pred, dtype=DTYPE) - np.asarray(target, dtype=DTYPE)
    return float(np.mean(diff * diff))


def accuracy(logits, class_ids) -> float:
    return float(np.mean(np.argmax(logits, axis=-1) == np.asarray(class_ids)))
