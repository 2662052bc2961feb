"""Calibrated synthetic trajectories, pools, and QE datasets.

The simulator draws a ground-truth final score per segment and per-layer
estimates that converge to it geometrically.  Error heads are half-normal
calibrated: with ``miscalibration=0`` the predicted absolute error at layer i
equals the true expected absolute deviation, so rescaling by sqrt(pi/2)
recovers the true noise standard deviation exactly.  All draws come from
named Philox substreams (see :mod:`layerqe.rng`), so generation is
reproducible and parallelizable across segments.

Draw order within one batch is fixed and frozen by golden tests:
final scores, difficulty multipliers, layer noise, error-head perturbations,
human-noise scales, human noise.

Declared defaults (the nominal score unit is a 0-100 quality scale, but every
downstream algorithm is scale-covariant):

* ``noise_sd_layer1=8.0, noise_decay=0.85`` — layer-1 estimates are weakly
  informative, near-final by layer ~12.
* ``difficulty_sd`` — optional per-segment lognormal noise multiplier
  (mean 1).  At 0 every segment at a given layer shares the same predicted
  error; above 0 confidences become informative per segment.
* ``human_noise_spread`` — optional lognormal spread of the per-segment
  human noise scale (mean 1).  Above 0 the final-layer error estimate is set
  to the calibrated expected human error instead of 0, modelling a scorer
  whose last-layer confidence targets the human score.
* logprob link: ``logprob_avg = -1.2 + 0.01 * (final - score mean) + noise``
  with noise sd 0.1, then ``logprob_sum = logprob_avg * tgt_len``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dataset import CandidatePool, LayerTrajectory, SegmentRecord
from .rng import substream

HALF_NORMAL_MAE = math.sqrt(2.0 / math.pi)  # E|N(0,1)|

LOGPROB_BASE = -1.2
LOGPROB_SLOPE = 0.01
LOGPROB_NOISE_SD = 0.1


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    layers: int = 24
    n_segments: int = 1000
    n_candidates: int = 200
    final_score_mean: float = 75.0
    final_score_sd: float = 5.0
    noise_sd_layer1: float = 8.0
    noise_decay: float = 0.85
    human_noise_sd: float = 4.0
    miscalibration: float = 0.0
    difficulty_sd: float = 0.0
    human_noise_spread: float = 0.0

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.n_segments < 1 or self.n_candidates < 1:
            raise ValueError("n_segments and n_candidates must be >= 1")
        if self.noise_sd_layer1 < 0:
            raise ValueError("noise_sd_layer1 must be >= 0")
        if not (0.0 < self.noise_decay < 1.0):
            raise ValueError("noise_decay must be in (0, 1)")
        if self.human_noise_sd < 0 or self.miscalibration < 0:
            raise ValueError("human_noise_sd and miscalibration must be >= 0")
        if self.difficulty_sd < 0 or self.human_noise_spread < 0:
            raise ValueError("difficulty_sd and human_noise_spread must be >= 0")

    def layer_noise_sds(self) -> np.ndarray:
        """Noise sd per layer 1..L-1 (layer L is exact)."""
        i = np.arange(self.layers - 1, dtype=np.float64)
        return self.noise_sd_layer1 * self.noise_decay**i


@dataclass(frozen=True)
class TrajectoryBatch:
    """Vectorized draw of n trajectories plus their ground truth."""

    scores: np.ndarray  # (n, layers)
    errors: np.ndarray  # (n, layers)
    finals: np.ndarray  # (n,)
    humans: np.ndarray  # (n,)

    def trajectory(self, i: int) -> LayerTrajectory:
        return LayerTrajectory(self.scores[i], self.errors[i])


@dataclass(frozen=True)
class TrajectoryDraw:
    trajectory: LayerTrajectory
    final_truth: float
    human_score: float


@dataclass(frozen=True)
class PartialDraw:
    """Generator-side scores of one candidate at several prefix fractions."""

    final_truth: float
    scores: dict[float, float]


def _mean_one_lognormal(sd: float, z: np.ndarray) -> np.ndarray:
    """exp-normal multiplier with mean exactly 1 (identically 1 at sd=0)."""
    return np.exp(sd * z - 0.5 * sd * sd)


def sample_trajectories(cfg: SynthConfig, rng: np.random.Generator, n: int) -> TrajectoryBatch:
    """Draw n independent trajectories from one stream (fixed draw order)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    L = cfg.layers
    finals = cfg.final_score_mean + cfg.final_score_sd * rng.standard_normal(n)
    difficulty = _mean_one_lognormal(cfg.difficulty_sd, rng.standard_normal(n))

    sds = cfg.layer_noise_sds()[None, :] * difficulty[:, None]  # (n, L-1)
    scores = np.empty((n, L), dtype=np.float64)
    scores[:, : L - 1] = finals[:, None] + sds * rng.standard_normal((n, L - 1))
    scores[:, L - 1] = finals

    perturb = 1.0 + cfg.miscalibration * rng.standard_normal((n, L - 1))
    errors = np.empty((n, L), dtype=np.float64)
    errors[:, : L - 1] = sds * HALF_NORMAL_MAE * perturb

    human_scale = _mean_one_lognormal(cfg.human_noise_spread, rng.standard_normal(n))
    human_sds = cfg.human_noise_sd * human_scale
    humans = finals + human_sds * rng.standard_normal(n)
    if cfg.human_noise_spread > 0:
        errors[:, L - 1] = human_sds * HALF_NORMAL_MAE
    else:
        errors[:, L - 1] = 0.0
    return TrajectoryBatch(scores=scores, errors=errors, finals=finals, humans=humans)


def generate_trajectory(cfg: SynthConfig, rng: np.random.Generator) -> TrajectoryDraw:
    """Draw one trajectory with its ground truth and human score."""
    batch = sample_trajectories(cfg, rng, 1)
    return TrajectoryDraw(
        trajectory=batch.trajectory(0),
        final_truth=float(batch.finals[0]),
        human_score=float(batch.humans[0]),
    )


def _draw_lengths(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    src = 1 + rng.poisson(19.0, size=n)
    ratio = rng.normal(1.1, 0.15, size=n)
    tgt = np.maximum(1, np.rint(src * ratio)).astype(np.int64)
    return src.astype(np.int64), tgt


def generate_pool(
    cfg: SynthConfig,
    rng: np.random.Generator,
    source_id: str = "pool0",
    lang_pair: str = "en-de",
) -> CandidatePool:
    """One pool of ``cfg.n_candidates`` independent candidates.

    Candidate logprob fields follow the declared linear+noise link with the
    final truth, so logprob baselines are informative but imperfect.
    """
    n = cfg.n_candidates
    batch = sample_trajectories(cfg, rng, n)
    src, tgt = _draw_lengths(rng, n)
    logprob_avg = (
        LOGPROB_BASE
        + LOGPROB_SLOPE * (batch.finals - cfg.final_score_mean)
        + LOGPROB_NOISE_SD * rng.standard_normal(n)
    )
    logprob_sum = logprob_avg * tgt
    candidates = tuple(
        SegmentRecord(
            segment_id=f"{source_id}:c{i:04d}",
            lang_pair=lang_pair,
            system_id=f"c{i:04d}",
            src_len=int(src[i]),
            tgt_len=int(tgt[i]),
            trajectory=batch.trajectory(i),
            logprob_sum=float(logprob_sum[i]),
            logprob_avg=float(logprob_avg[i]),
            source_id=source_id,
        )
        for i in range(n)
    )
    return CandidatePool(source_id=source_id, candidates=candidates)


def generate_pools(cfg: SynthConfig, n_pools: int, lang_pair: str = "en-de") -> list[CandidatePool]:
    """Independent pools via per-pool substreams of ``cfg.seed``."""
    return [
        generate_pool(cfg, substream(cfg.seed, "pool", i), source_id=f"src{i:05d}",
                      lang_pair=lang_pair)
        for i in range(n_pools)
    ]


def generate_segments(
    cfg: SynthConfig,
    lang_pairs: Sequence[str] = ("en-de",),
    systems: Sequence[str] = ("sys00",),
    system_quality_sd: float = 0.0,
) -> list[SegmentRecord]:
    """A QE dataset: ``cfg.n_segments`` segments per (language, system).

    Each system gets a quality offset drawn once per (language, system), so
    system rankings are meaningful for deferral experiments.  Segments use
    per-segment substreams and can be generated in any order.
    """
    records: list[SegmentRecord] = []
    for lang in lang_pairs:
        for system in systems:
            offset = 0.0
            if system_quality_sd > 0:
                offset = float(
                    substream(cfg.seed, "system", lang, system).normal(0.0, system_quality_sd)
                )
            seg_cfg = replace(cfg, final_score_mean=cfg.final_score_mean + offset)
            for i in range(cfg.n_segments):
                rng = substream(cfg.seed, "segment", lang, system, i)
                batch = sample_trajectories(seg_cfg, rng, 1)
                src, tgt = _draw_lengths(rng, 1)
                records.append(
                    SegmentRecord(
                        segment_id=f"{lang}:{system}:{i:05d}",
                        lang_pair=lang,
                        system_id=system,
                        src_len=int(src[0]),
                        tgt_len=int(tgt[0]),
                        trajectory=batch.trajectory(0),
                        human_score=float(batch.humans[0]),
                    )
                )
    return records


def partial_noise_sd(cfg: SynthConfig, fraction: float) -> float:
    """Noise sd of a prefix score; decreasing in the revealed fraction."""
    return cfg.noise_sd_layer1 * (1.0 - fraction)


def generate_partial_scores(
    cfg: SynthConfig, fractions: Sequence[float], rng: np.random.Generator
) -> list[PartialDraw]:
    """Prefix scores for ``cfg.n_candidates`` candidates.

    ``fractions`` must be sorted ascending with the last equal to 1.0; the
    score at 1.0 is the candidate's exact final truth.
    """
    fracs = [float(f) for f in fractions]
    if not fracs:
        raise ValueError("fractions must be non-empty")
    if any(not (0.0 < f <= 1.0) for f in fracs):
        raise ValueError("fractions must lie in (0, 1]")
    if any(b <= a for a, b in zip(fracs, fracs[1:])):
        raise ValueError("fractions must be sorted strictly ascending")
    if fracs[-1] != 1.0:
        raise ValueError("last fraction must be 1.0")
    n = cfg.n_candidates
    finals = cfg.final_score_mean + cfg.final_score_sd * rng.standard_normal(n)
    sds = np.array([partial_noise_sd(cfg, f) for f in fracs])
    noise = rng.standard_normal((n, len(fracs))) * sds[None, :]
    noise[:, -1] = 0.0
    return [
        PartialDraw(
            final_truth=float(finals[i]),
            scores={f: float(finals[i] + noise[i, j]) for j, f in enumerate(fracs)},
        )
        for i in range(n)
    ]
