"""Exact-match accuracy and per-type recall of perception vectors."""

from __future__ import annotations

import numpy as np

from ..degrade import LABEL_NAMES


class LengthMismatch(ValueError):
    pass


class Empty(ValueError):
    pass


class EmptyClass(ValueError):
    pass


def _stack(preds, labels) -> tuple[np.ndarray, np.ndarray]:
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(labels)} labels")
    if len(preds) == 0:
        raise Empty("no samples")
    p = np.asarray([np.asarray(v, dtype=bool) for v in preds]).reshape(len(preds), -1)
    y = np.asarray([np.asarray(v, dtype=bool) for v in labels]).reshape(len(labels), -1)
    if p.shape[1] != len(LABEL_NAMES) or y.shape[1] != len(LABEL_NAMES):
        raise ValueError(f"vectors must have {len(LABEL_NAMES)} bits")
    return p, y


def macc(preds, labels) -> float:
    """Fraction of samples whose 10-bit prediction matches the label exactly."""
    p, y = _stack(preds, labels)
    return float((p == y).all(axis=1).mean())


def dacc(preds, labels, i: int) -> float:
    """Recall of bit ``i``: among samples labelled with it, the fraction predicted with it."""
    p, y = _stack(preds, labels)
    mask = y[:, i]
    if not mask.any():
        raise EmptyClass(f"no sample carries {LABEL_NAMES[i]}")
    return float(p[mask, i].mean())


def precision(preds, labels, i: int) -> float | None:
    """Precision of bit ``i``; None when it is never predicted. Reported alongside, not a DACC."""
    p, y = _stack(preds, labels)
    mask = p[:, i]
    if not mask.any():
        return None
    return float(y[mask, i].mean())
