"""Segmentation overlap and running-average comparison of per-frame scores."""
from __future__ import annotations

import numpy as np


def dice(pred, gt) -> float:
    """2|A & B| / (|A| + |B|); two empty masks agree perfectly and score 1."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"dice: mask shapes differ, {pred.shape} vs {gt.shape}")
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / total


def cumulative_dice_diff(series_a, series_b) -> np.ndarray:
    """``out[m-1] = mean(a[:m]) - mean(b[:m])`` for m = 1..len."""
    a = np.asarray(series_a, dtype=np.float64)
    b = np.asarray(series_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"cumulative_dice_diff: series shapes differ, {a.shape} vs {b.shape}")
    # prefix means via np.mean so the last entry equals mean(a) - mean(b) exactly
    return np.array([a[:m].mean() - b[:m].mean() for m in range(1, len(a) + 1)])
