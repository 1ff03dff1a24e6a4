"""Classification losses returning ``(loss, d loss / d logits)``."""

from __future__ import annotations

import numpy as np


def _check(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError(f"logits must be (batch, C) with C >= 2, got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"label out of range [0, {logits.shape[1]})")
    return logits, labels.astype(np.int64)


def hinge_loss(logits, labels, squared: bool = False):
    """Per-class hinge ``mean_{n,c} max(0, 1 - y_c * logit_c)``, ``y_c = +-1``.

    The subgradient at the kink is taken as 0.
    """
    logits, labels = _check(logits, labels)
    y = -np.ones_like(logits)
    y[np.arange(len(labels)), labels] = 1.0
    margin = 1.0 - y * logits
    active = margin > 0
    scale = 1.0 / logits.size
    if squared:
        loss = np.sum(np.where(active, margin, 0.0) ** 2) * scale
        grad = np.where(active, -2.0 * y * margin, 0.0) * scale
    else:
        loss = np.sum(np.where(active, margin, 0.0)) * scale
        grad = np.where(active, -y, 0.0) * scale
    return float(loss), grad


def cross_entropy_loss(logits, labels):
    logits, labels = _check(logits, labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


LOSSES = {"hinge": hinge_loss, "cross_entropy": cross_entropy_loss}


def get_loss(name: str):
    try:
        return LOSSES[name]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; expected one of {sorted(LOSSES)}") from None
