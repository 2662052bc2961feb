"""Early-exit policies over layer trajectories and budget sweeps.

Three policies decide at which layer to stop reading a trajectory:

* constant: always stop at layer k;
* variance: stop at the first layer where the population variance of the
  last ``window`` (default 3) scores falls strictly below a threshold;
* confidence: stop at the first layer whose predicted error falls strictly
  below a threshold.

Cost is counted in layer units (cost of exiting at layer i is i).  Negative
predicted errors are legal inputs and pass through unclamped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import LayerTrajectory, SegmentRecord
from .metrics import CurvePoint, pearson

KIND_CONSTANT = "constant"
KIND_VARIANCE = "variance"
KIND_CONFIDENCE = "confidence"
POLICY_KINDS = (KIND_CONSTANT, KIND_VARIANCE, KIND_CONFIDENCE)


@dataclass(frozen=True)
class ExitPolicyConfig:
    kind: str
    k: int | None = None
    tau: float | None = None
    window: int = 3

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == KIND_CONSTANT and (self.k is None or self.k < 1):
            raise ValueError("constant policy needs k >= 1")
        if self.kind in (KIND_VARIANCE, KIND_CONFIDENCE) and self.tau is None:
            raise ValueError(f"{self.kind} policy needs tau")
        if self.window < 2:
            raise ValueError("window must be >= 2")


@dataclass(frozen=True)
class ExitResult:
    score: float
    exit_layer: int
    cost: int  # layer units; always equals exit_layer


def constant_exit(t: LayerTrajectory, k: int) -> ExitResult:
    """Stop at layer k unconditionally."""
    if not 1 <= k <= t.n_layers:
        raise ValueError(f"k must be in [1, {t.n_layers}], got {k}")
    return ExitResult(score=float(t.scores[k - 1]), exit_layer=k, cost=k)


def variance_exit(t: LayerTrajectory, tau: float, window: int = 3) -> ExitResult:
    """Stop once the last ``window`` scores have population variance < tau.

    Trajectories shorter than the window never exit early.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    n = t.n_layers
    for i in range(window, n + 1):
        chunk = t.scores[i - window : i]
        mean = float(np.sum(chunk)) / window
        var = float(np.sum((chunk - mean) ** 2)) / window
        if var < tau:
            return ExitResult(score=float(t.scores[i - 1]), exit_layer=i, cost=i)
    return ExitResult(score=float(t.scores[-1]), exit_layer=n, cost=n)


def confidence_exit(t: LayerTrajectory, tau: float) -> ExitResult:
    """Stop at the first layer whose predicted error is < tau."""
    for i in range(1, t.n_layers + 1):
        if t.errors[i - 1] < tau:
            return ExitResult(score=float(t.scores[i - 1]), exit_layer=i, cost=i)
    n = t.n_layers
    return ExitResult(score=float(t.scores[-1]), exit_layer=n, cost=n)


def apply_policy(t: LayerTrajectory, cfg: ExitPolicyConfig) -> ExitResult:
    if cfg.kind == KIND_CONSTANT:
        return constant_exit(t, cfg.k)
    if cfg.kind == KIND_VARIANCE:
        return variance_exit(t, cfg.tau, cfg.window)
    return confidence_exit(t, cfg.tau)


@dataclass(frozen=True)
class SweepPoint:
    policy: str
    parameter: float
    cost_fraction: float
    corr_final: float
    corr_human: float


def _record_matrices(records: Sequence[SegmentRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not records:
        raise ValueError("no records")
    layer_counts = {r.trajectory.n_layers for r in records}
    if len(layer_counts) > 1:
        raise ValueError(f"records disagree in layer count: {sorted(layer_counts)}")
    for r in records:
        if r.human_score is None:
            raise ValueError(f"human_score missing for segment {r.segment_id!r}")
    scores = np.stack([r.trajectory.scores for r in records])
    errors = np.stack([r.trajectory.errors for r in records])
    humans = np.array([r.human_score for r in records], dtype=np.float64)
    return scores, errors, humans


def _exit_indices(
    scores: np.ndarray, errors: np.ndarray, kind: str, parameter: float, window: int
) -> np.ndarray:
    """0-based exit layer per record, vectorized; matches the scalar policies."""
    n, n_layers = scores.shape
    if kind == KIND_CONSTANT:
        k = int(parameter)
        if not 1 <= k <= n_layers:
            raise ValueError(f"k must be in [1, {n_layers}], got {k}")
        return np.full(n, k - 1, dtype=np.int64)
    if kind == KIND_CONFIDENCE:
        hit = errors < parameter
    else:
        hit = np.zeros_like(scores, dtype=bool)
        for i in range(window, n_layers + 1):
            chunk = scores[:, i - window : i]
            mean = np.sum(chunk, axis=1) / window
            var = np.sum((chunk - mean[:, None]) ** 2, axis=1) / window
            hit[:, i - 1] = var < parameter
    first = np.argmax(hit, axis=1)
    first[~hit.any(axis=1)] = n_layers - 1
    return first


def budget_sweep(
    records: Sequence[SegmentRecord],
    kind: str,
    parameters: Sequence[float],
    window: int = 3,
) -> list[SweepPoint]:
    """Cost/correlation curve of one policy family over a parameter grid.

    For each parameter the policy runs on every record; the point carries the
    total cost as a fraction of full evaluation, the Pearson correlation of
    exited scores with final-layer scores, and with human scores.  Points are
    sorted by cost fraction.
    """
    scores, errors, humans = _record_matrices(records)
    n, n_layers = scores.shape
    finals = scores[:, -1]
    points = []
    for parameter in parameters:
        idx = _exit_indices(scores, errors, kind, parameter, window)
        exited = scores[np.arange(n), idx]
        cost_fraction = float(np.sum(idx + 1)) / (n * n_layers)
        points.append(
            SweepPoint(
                policy=kind,
                parameter=float(parameter),
                cost_fraction=cost_fraction,
                corr_final=pearson(exited, finals),
                corr_human=pearson(exited, humans),
            )
        )
    points.sort(key=lambda p: p.cost_fraction)
    return points


def sweep_to_curves(points: Sequence[SweepPoint]) -> tuple[list[CurvePoint], list[CurvePoint]]:
    """Split sweep points into (cost, corr-vs-final) and (cost, corr-vs-human)."""
    vs_final = [CurvePoint(p.cost_fraction, p.corr_final, f"{p.policy}-vs-final") for p in points]
    vs_human = [CurvePoint(p.cost_fraction, p.corr_human, f"{p.policy}-vs-human") for p in points]
    return vs_final, vs_human
