"""Correlation, calibration, and reranking-quality metrics.

All operations are pure functions over plain sequences / numpy arrays and are
safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import CandidatePool


class UndefinedCorrelationError(ValueError):
    """Raised when a correlation is requested on a zero-variance input."""


@dataclass(frozen=True)
class CurvePoint:
    """One point of a sweep curve: x is a cost fraction or deferral rate."""

    x: float
    y: float
    label: str = ""


@dataclass(frozen=True)
class CalibrationConfig:
    n_bins: int = 100
    binning: str = "equal-mass"

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if self.binning != "equal-mass":
            raise ValueError(f"unsupported binning {self.binning!r}")


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation.

    Requires equal lengths >= 2 and non-zero variance on both sides.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ValueError("inputs must be 1-d sequences of equal length")
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0 or not np.isfinite(denom):
        raise UndefinedCorrelationError("zero variance in correlation input")
    if np.array_equal(x, y):  # exact +1 for identical inputs
        return 1.0
    return float(min(1.0, max(-1.0, (dx @ dy) / denom)))


def rank_average_ties(xs: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(xs, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson of average ranks."""
    return pearson(rank_average_ties(xs), rank_average_ties(ys))


def macro_average(values_by_group: Mapping[str, float]) -> float:
    """Unweighted mean over groups."""
    if not values_by_group:
        raise ValueError("macro_average of an empty map")
    return float(np.mean(list(values_by_group.values())))


def equal_mass_bin_sizes(n_samples: int, n_bins: int) -> list[int]:
    """Bin sizes differing by at most 1; the remainder goes to leading bins."""
    base, remainder = divmod(n_samples, n_bins)
    return [base + 1 if i < remainder else base for i in range(n_bins)]


def calibration_curve(
    predicted_errors: Sequence[float],
    true_errors: Sequence[float],
    cfg: CalibrationConfig = CalibrationConfig(),
) -> list[tuple[float, float]]:
    """Equal-mass calibration bins over (predicted error, true error) pairs.

    Samples are sorted by predicted error ascending and split into
    ``cfg.n_bins`` equal-mass bins; returns per-bin (mean predicted error,
    mean true absolute error) in bin order.
    """
    pred = np.asarray(predicted_errors, dtype=np.float64)
    true = np.asarray(true_errors, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError("inputs must be 1-d sequences of equal length")
    if pred.size < cfg.n_bins:
        raise ValueError(f"need at least n_bins={cfg.n_bins} samples, got {pred.size}")
    order = np.argsort(pred, kind="mergesort")
    pred = pred[order]
    true = true[order]
    curve: list[tuple[float, float]] = []
    start = 0
    for size in equal_mass_bin_sizes(pred.size, cfg.n_bins):
        stop = start + size
        curve.append((float(pred[start:stop].mean()), float(true[start:stop].mean())))
        start = stop
    return curve


def rerank_quality(
    pools: Sequence[CandidatePool], selections: Mapping[str, int]
) -> tuple[float, float]:
    """(average final score of selections, fraction of pools where the
    selection attains the pool-maximum final score; ties count as top-1)."""
    if not pools:
        raise ValueError("no pools")
    finals = []
    top1 = 0
    for pool in pools:
        if pool.source_id not in selections:
            raise ValueError(f"missing selection for pool {pool.source_id!r}")
        pool_finals = pool.final_scores()
        chosen = float(pool_finals[selections[pool.source_id]])
        finals.append(chosen)
        if chosen >= float(pool_finals.max()):
            top1 += 1
    return float(np.mean(finals)), top1 / len(pools)


def write_curves_csv(path: str | Path, points: Iterable[CurvePoint]) -> None:
    """Serialize curve points as ``label,x,y`` CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label,x,y\n")
        for p in points:
            fh.write(f"{p.label},{p.x!r},{p.y!r}\n")
