"""Composite regression-head losses and a small deterministic trainer.

The score head is trained with squared error against the target at every
layer (or only the final layer, for the baseline mode).  The confidence head
is trained to predict how far each layer's score is from the final layer's.
Two stop-gradient rules apply:

* the joint score+error loss never backpropagates through the score via its
  error term;
* the per-layer confidence target |score_i - score_final| is treated as a
  constant, so confidence training never pollutes the score head.

Losses are pure functions; the trainer is full-batch gradient descent with a
halve-step fallback, deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .rng import substream

MODE_PER_LAYER = "per-layer-supervised"
MODE_FINAL_ONLY = "final-only"


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class LossConfig:
    """Weight of the error-prediction term in the joint loss."""

    beta: float = 0.75

    def __post_init__(self):
        if not math.isfinite(self.beta) or self.beta < 0:
            raise ValueError("beta must be finite and >= 0")


@dataclass(frozen=True)
class ToyLayerStack:
    """Per-layer feature vectors standing in for encoder embeddings."""

    features: np.ndarray  # (layers, dim)

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        if self.features.ndim != 2:
            raise ValueError("features must be (layers, dim)")

    @property
    def n_layers(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ToyRegressorHead:
    """Linear head with two outputs: score and predicted error.

    Shared head: weights (dim, 2), biases (2,).  With separate per-layer
    heads: weights (layers, dim, 2), biases (layers, 2).
    """

    weights: np.ndarray
    biases: np.ndarray

    @property
    def separate(self) -> bool:
        return self.weights.ndim == 3

    def outputs(self, features: np.ndarray) -> np.ndarray:
        """(n, layers, 2) outputs for a (n, layers, dim) feature batch."""
        if self.separate:
            return np.einsum("nld,ldo->nlo", features, self.weights) + self.biases[None]
        return features @ self.weights + self.biases


def instant_confidence_loss(
    y: float, y_hat: float, e_hat: float, cfg: LossConfig
) -> tuple[float, float, float]:
    """Joint score+error loss with its (stop-gradient) partial derivatives.

    loss = (y - y_hat)^2 + beta * (|y - y_hat| - e_hat)^2.  The second term
    does not contribute to d/d y_hat.
    """
    residual = y - y_hat
    gap = abs(residual) - e_hat
    loss = residual * residual + cfg.beta * gap * gap
    d_y_hat = 2.0 * (y_hat - y)
    d_e_hat = 2.0 * cfg.beta * (e_hat - abs(residual))
    return float(loss), float(d_y_hat), float(d_e_hat)


def cumulative_layer_loss(y: float, y_hats: Sequence[float]) -> float:
    """Sum of squared errors of every layer's score against the target."""
    arr = np.asarray(y_hats, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("y_hats must be non-empty")
    return float(np.sum((y - arr) ** 2))


def self_confidence_loss(y_hats: Sequence[float], e_hats: Sequence[float]) -> float:
    """Squared error of each layer's predicted distance to the final score.

    The target |y_hat_i - y_hat_final| is a constant for differentiation
    purposes; this function only evaluates the loss.
    """
    scores = np.asarray(y_hats, dtype=np.float64)
    errors = np.asarray(e_hats, dtype=np.float64)
    if scores.size == 0 or scores.size != errors.size:
        raise ValueError("y_hats and e_hats must be non-empty and equally long")
    targets = np.abs(scores - scores[-1])
    return float(np.sum((targets - errors) ** 2))


def finite_diff_check(
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    step: float,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(params)`` must return (loss, gradient).  The relative error uses
    max(|analytic|, 1e-8) as denominator.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    params = np.asarray(params, dtype=np.float64)
    _, grad = fn(params)
    grad = np.asarray(grad, dtype=np.float64)
    worst = 0.0
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] += step
        hi, _ = fn(bumped)
        bumped[i] -= 2.0 * step
        lo, _ = fn(bumped)
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise ArithmeticError("non-finite loss during finite differences")
        fd = (hi - lo) / (2.0 * step)
        worst = max(worst, float(abs(fd - grad[i]) / max(abs(grad[i]), 1e-8)))
    return worst


@dataclass(frozen=True)
class TrainLogEntry:
    epoch: int
    learning_rate: float
    total_loss: float
    score_loss: float
    confidence_loss: float
    halvings: int


@dataclass(frozen=True)
class TrainResult:
    head: ToyRegressorHead
    log: tuple[TrainLogEntry, ...]


def _stack_features(stacks: Sequence[ToyLayerStack]) -> np.ndarray:
    if len(stacks) < 2:
        raise ValueError("need at least 2 training examples")
    shapes = {(s.n_layers, s.dim) for s in stacks}
    if len(shapes) > 1:
        raise ValueError(f"stacks disagree in shape: {sorted(shapes)}")
    return np.stack([s.features for s in stacks])


def _mean_losses(outputs: np.ndarray, y: np.ndarray, mode: str) -> tuple[float, float]:
    scores = outputs[..., 0]
    errors = outputs[..., 1]
    n = y.size
    if mode == MODE_FINAL_ONLY:
        score_loss = float(np.sum((scores[:, -1] - y) ** 2) / n)
        return score_loss, 0.0
    score_loss = float(np.sum((scores - y[:, None]) ** 2) / n)
    targets = np.abs(scores - scores[:, -1:])
    conf_loss = float(np.sum((errors - targets) ** 2) / n)
    return score_loss, conf_loss


def _gradients(
    features: np.ndarray, outputs: np.ndarray, y: np.ndarray, mode: str, separate: bool
) -> tuple[np.ndarray, np.ndarray]:
    n, n_layers, _ = outputs.shape
    scores = outputs[..., 0]
    errors = outputs[..., 1]
    d_scores = np.zeros_like(scores)
    d_errors = np.zeros_like(errors)
    if mode == MODE_FINAL_ONLY:
        d_scores[:, -1] = 2.0 * (scores[:, -1] - y) / n
    else:
        d_scores = 2.0 * (scores - y[:, None]) / n
        targets = np.abs(scores - scores[:, -1:])
        d_errors = 2.0 * (errors - targets) / n
    d_out = np.stack([d_scores, d_errors], axis=-1)  # (n, layers, 2)
    if separate:
        d_w = np.einsum("nld,nlo->ldo", features, d_out)
        d_b = d_out.sum(axis=0)
    else:
        d_w = np.einsum("nld,nlo->do", features, d_out)
        d_b = d_out.sum(axis=(0, 1))
    return d_w, d_b


def train_toy_heads(
    stacks: Sequence[ToyLayerStack],
    targets: Sequence[float],
    cfg: LossConfig = LossConfig(),
    mode: str = MODE_PER_LAYER,
    epochs: int = 500,
    learning_rate: float = 0.05,
    seed: int = 0,
    separate_heads: bool = False,
) -> TrainResult:
    """Full-batch gradient descent on the per-layer training signal.

    ``mode`` selects the per-layer supervision (cumulative score loss plus
    confidence loss) or the final-layer-only baseline.  If an epoch would
    increase the loss, the step is retried with a halved learning rate (the
    reduction is permanent and logged).
    """
    if mode not in (MODE_PER_LAYER, MODE_FINAL_ONLY):
        raise ValueError(f"unknown mode {mode!r}")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    features = _stack_features(stacks)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != (features.shape[0],):
        raise ValueError("targets must match the number of stacks")
    _, n_layers, dim = features.shape

    rng = substream(seed, "toyheads-init")
    if separate_heads:
        weights = 0.01 * rng.standard_normal((n_layers, dim, 2))
        biases = np.zeros((n_layers, 2))
    else:
        weights = 0.01 * rng.standard_normal((dim, 2))
        biases = np.zeros(2)

    def evaluate(w, b):
        head = ToyRegressorHead(weights=w, biases=b)
        outputs = head.outputs(features)
        score_loss, conf_loss = _mean_losses(outputs, y, mode)
        return outputs, score_loss, conf_loss

    log: list[TrainLogEntry] = []
    lr = float(learning_rate)
    outputs, score_loss, conf_loss = evaluate(weights, biases)
    total = score_loss + conf_loss
    for epoch in range(1, epochs + 1):
        if not math.isfinite(total):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        d_w, d_b = _gradients(features, outputs, y, mode, separate_heads)
        halvings = 0
        while True:
            new_w = weights - lr * d_w
            new_b = biases - lr * d_b
            new_outputs, new_score, new_conf = evaluate(new_w, new_b)
            new_total = new_score + new_conf
            if not math.isfinite(new_total):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            if new_total <= total or halvings >= 60:
                break
            lr *= 0.5
            halvings += 1
        weights, biases = new_w, new_b
        outputs, score_loss, conf_loss, total = new_outputs, new_score, new_conf, new_total
        log.append(TrainLogEntry(epoch, lr, total, score_loss, conf_loss, halvings))
    return TrainResult(head=ToyRegressorHead(weights=weights, biases=biases), log=tuple(log))


def head_scores(head: ToyRegressorHead, stacks: Sequence[ToyLayerStack]) -> np.ndarray:
    """(n, layers) score outputs of a trained head over a stack set."""
    features = np.stack([s.features for s in stacks])
    return head.outputs(features)[..., 0]


def write_training_log_csv(path: str | Path, log: Sequence[TrainLogEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,learning_rate,total_loss,score_loss,confidence_loss,halvings\n")
        for e in log:
            fh.write(
                f"{e.epoch},{e.learning_rate!r},{e.total_loss!r},"
                f"{e.score_loss!r},{e.confidence_loss!r},{e.halvings}\n"
            )


def make_stack_fixture(
    n: int, layers: int, seed: int, dim: int = 3
) -> tuple[list[ToyLayerStack], np.ndarray]:
    """Stacks where mid-layer features are informative but a shortcut feature
    works only at the final layer.

    Channel 0 carries the target at every layer with depth-increasing gain;
    channel 1 is pure noise except at the final layer, where it is an almost
    clean copy of the target; remaining channels are distractor noise.
    Final-layer-only training latches onto channel 1 and transfers poorly to
    intermediate layers; per-layer supervision must rely on channel 0.
    """
    if dim < 3:
        raise ValueError("fixture needs dim >= 3")
    rng = substream(seed, "stack-fixture")
    y = rng.standard_normal(n)
    gain = 0.3 + 0.7 * (np.arange(1, layers + 1) / layers)
    features = np.zeros((n, layers, dim))
    features[..., 0] = y[:, None] * gain[None, :] + 0.35 * rng.standard_normal((n, layers))
    features[..., 1] = rng.standard_normal((n, layers))
    features[:, -1, 1] = y + 0.05 * rng.standard_normal(n)
    for ch in range(2, dim):
        features[..., ch] = 0.5 * rng.standard_normal((n, layers))
    return [ToyLayerStack(features[i]) for i in range(n)], y


def make_realizable_stacks(
    n: int, layers: int, seed: int
) -> tuple[list[ToyLayerStack], np.ndarray]:
    """Stacks a single shared linear head can fit exactly (zero loss)."""
    rng = substream(seed, "realizable-stacks")
    y = rng.standard_normal(n)
    features = np.zeros((n, layers, 2))
    features[..., 0] = y[:, None]
    features[..., 1] = 0.1 * rng.standard_normal((n, layers))
    return [ToyLayerStack(features[i]) for i in range(n)], y
