"""Score-prediction and tool-selection metrics.

Undefined values (Pearson on a constant series, accuracy on an empty set of
unequal pairs) are returned as ``None`` and rendered as ``n/a``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument


def _pair(pred: Sequence[float], truth: Sequence[float], min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.ndim != 1 or t.ndim != 1 or p.shape != t.shape:
        raise InvalidArgument(f"length mismatch: {p.shape} vs {t.shape}")
    if len(p) < min_len:
        raise InvalidArgument(f"need at least {min_len} values, got {len(p)}")
    return p, t


def mae(pred: Sequence[float], truth: Sequence[float]) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def rmse(pred: Sequence[float], truth: Sequence[float]) -> float:
    p, t = _pair(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def pearson(pred: Sequence[float], truth: Sequence[float]) -> float | None:
    p, t = _pair(pred, truth, min_len=2)
    dp = p - p.mean()
    dt = t - t.mean()
    sp = float(np.sum(dp * dp))
    st = float(np.sum(dt * dt))
    if sp == 0.0 or st == 0.0:
        return None
    return float(np.sum(dp * dt) / np.sqrt(sp * st))


@dataclass(frozen=True)
class SelectionMetrics:
    f1_lt: float
    f1_gt: float
    acc: float | None
    d_size: int
    tp_lt: int = 0
    p_lt: int = 0
    r_lt: int = 0
    tp_gt: int = 0
    p_gt: int = 0
    r_gt: int = 0

    @property
    def degenerate(self) -> bool:
        return self.d_size == 0


def selection_metrics(pairs: Iterable[tuple[int, int, int, int]]) -> SelectionMetrics:
    """Metrics over ``(truth_a, truth_b, pred_a, pred_b)`` tuples.

    Only pairs with unequal ground truth count. A predicted tie is neither
    ``<`` nor ``>``, so it lowers recall without adding a false positive.
    """
    tp_lt = p_lt = r_lt = tp_gt = p_gt = r_gt = d = 0
    for sa, sb, pa, pb in pairs:
        for v in (sa, sb, pa, pb):
            if isinstance(v, bool) or v not in (1, 2, 3, 4, 5):
                raise InvalidArgument(f"score {v!r} not in 1..5")
        if sa == sb:
            continue
        d += 1
        r_lt += sa < sb
        r_gt += sa > sb
        p_lt += pa < pb
        p_gt += pa > pb
        tp_lt += sa < sb and pa < pb
        tp_gt += sa > sb and pa > pb
    f1_lt = 2 * tp_lt / (p_lt + r_lt) if p_lt + r_lt else 0.0
    f1_gt = 2 * tp_gt / (p_gt + r_gt) if p_gt + r_gt else 0.0
    acc = (tp_lt + tp_gt) / d if d else None
    return SelectionMetrics(f1_lt, f1_gt, acc, d, tp_lt, p_lt, r_lt, tp_gt, p_gt, r_gt)


def fmt(value: float | None, digits: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"
