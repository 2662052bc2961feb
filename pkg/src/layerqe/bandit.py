"""Budgeted candidate reranking: UCB bandit, baselines, and staged pruning.

The bandit treats candidates as arms; pulling an arm computes one more
scorer layer for that candidate at unit cost.  Costs are not additive across
layers: advancing a candidate from layer i to i+1 always costs exactly one
unit, because earlier layers are cached.  Remaining-budget bookkeeping,
trace recording, and all tie-breaking (lowest candidate index) are
deterministic, so identical inputs give identical selections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import CandidatePool
from .rng import substream

SIGMA_PER_MAE = math.sqrt(math.pi / 2.0)

BASELINE_RANDOM = "random"
BASELINE_LOGPROB_SUM = "logprob_sum"
BASELINE_LOGPROB_AVG = "logprob_avg"
BASELINE_MODES = (BASELINE_RANDOM, BASELINE_LOGPROB_SUM, BASELINE_LOGPROB_AVG)


def mae_to_sigma(e: float) -> float:
    """Rescale a mean-absolute-error estimate to a standard deviation.

    Under a half-normal error assumption, sigma = e * sqrt(pi / 2).
    Negative inputs pass through the same formula.
    """
    return e * SIGMA_PER_MAE


def ucb_score(y_hat: float, sigma: float, gamma: float) -> float:
    """Optimistic candidate value: score plus gamma times its uncertainty."""
    return y_hat + gamma * sigma


def budget_units(fraction: float, n_candidates: int, n_layers: int) -> int:
    """Convert a budget fraction of full evaluation cost to layer units."""
    if fraction <= 0:
        raise ValueError("budget fraction must be > 0")
    return int(math.floor(fraction * n_candidates * n_layers + 1e-9))


@dataclass(frozen=True)
class BanditConfig:
    budget: int
    gamma: float = 1.0
    start_layer: int = 1
    snapshot_fractions: tuple[float, ...] = ()

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.start_layer < 1:
            raise ValueError("start_layer must be >= 1")
        if any(not (0.0 < f <= 1.0) for f in self.snapshot_fractions):
            raise ValueError("snapshot fractions must lie in (0, 1]")


@dataclass(frozen=True)
class BanditPull:
    """One budget unit spent after initialization.

    ``step`` is the total spent budget after this pull; ``layer`` is the new
    deepest layer of ``candidate``.
    """

    step: int
    candidate: int
    layer: int


@dataclass(frozen=True)
class BanditTrace:
    n_candidates: int
    n_layers: int
    start_layer: int
    budget: int
    pulls: tuple[BanditPull, ...]


@dataclass
class BanditState:
    """Mutable loop state: deepest explored layer and cached head outputs."""

    depth: list[int]
    remaining: list[int]
    spent: int
    cached_score: list[float]
    cached_sigma: list[float]


@dataclass(frozen=True)
class BanditResult:
    selected: int
    cost: int
    trace: BanditTrace


def _init_state(pool: CandidatePool, cfg: BanditConfig) -> tuple[BanditState, np.ndarray, np.ndarray]:
    n, n_layers = pool.n_candidates, pool.n_layers
    if cfg.start_layer > n_layers:
        raise ValueError(f"start_layer {cfg.start_layer} exceeds layer count {n_layers}")
    min_cost = n * cfg.start_layer
    if cfg.budget < min_cost:
        raise ValueError(
            f"budget {cfg.budget} below minimum {min_cost} (candidates x start layer)"
        )
    scores = pool.score_matrix()
    sigmas = pool.error_matrix() * SIGMA_PER_MAE
    j = cfg.start_layer - 1
    state = BanditState(
        depth=[cfg.start_layer] * n,
        remaining=[c for c in range(n)] if cfg.start_layer < n_layers else [],
        spent=min_cost,
        cached_score=[float(scores[c, j]) for c in range(n)],
        cached_sigma=[float(sigmas[c, j]) for c in range(n)],
    )
    return state, scores, sigmas


def bandit_rerank(pool: CandidatePool, cfg: BanditConfig) -> BanditResult:
    """Select a candidate under a layer-unit budget via UCB exploration.

    All candidates are first evaluated to ``start_layer``.  While budget
    remains, the candidate with the highest upper confidence bound advances
    one layer; fully evaluated candidates drop out of the running.  The
    returned candidate maximizes the deepest-layer score over all candidates,
    confidences ignored.  Ties always break toward the lowest index.
    """
    state, scores, sigmas = _init_state(pool, cfg)
    n_layers = pool.n_layers
    pulls: list[BanditPull] = []
    while state.spent < cfg.budget and state.remaining:
        best = -1
        best_ucb = -math.inf
        for c in state.remaining:
            u = state.cached_score[c] + cfg.gamma * state.cached_sigma[c]
            if u > best_ucb:
                best, best_ucb = c, u
        depth = state.depth[best] + 1
        state.depth[best] = depth
        state.spent += 1
        state.cached_score[best] = float(scores[best, depth - 1])
        state.cached_sigma[best] = float(sigmas[best, depth - 1])
        pulls.append(BanditPull(step=state.spent, candidate=best, layer=depth))
        if depth == n_layers:
            state.remaining.remove(best)
    selected = 0
    selected_score = state.cached_score[0]
    for c in range(1, pool.n_candidates):
        if state.cached_score[c] > selected_score:
            selected, selected_score = c, state.cached_score[c]
    trace = BanditTrace(
        n_candidates=pool.n_candidates,
        n_layers=n_layers,
        start_layer=cfg.start_layer,
        budget=cfg.budget,
        pulls=tuple(pulls),
    )
    return BanditResult(selected=selected, cost=state.spent, trace=trace)


def rerank_pools(pools: Sequence[CandidatePool], cfg: BanditConfig) -> list[tuple[int, int]]:
    """Run the bandit over many same-shaped pools in lockstep (no traces).

    Equivalent to ``bandit_rerank`` per pool but vectorized across pools;
    every pool performs the same number of pulls, which makes the loop a
    fixed sequence of array operations.  Falls back to the sequential
    implementation for heterogeneous pool shapes.
    """
    if not pools:
        return []
    shapes = {(p.n_candidates, p.n_layers) for p in pools}
    if len(shapes) > 1:
        return [(r.selected, r.cost) for r in (bandit_rerank(p, cfg) for p in pools)]
    n, n_layers = shapes.pop()
    if cfg.start_layer > n_layers:
        raise ValueError(f"start_layer {cfg.start_layer} exceeds layer count {n_layers}")
    min_cost = n * cfg.start_layer
    if cfg.budget < min_cost:
        raise ValueError(
            f"budget {cfg.budget} below minimum {min_cost} (candidates x start layer)"
        )
    n_pools = len(pools)
    scores = np.stack([p.score_matrix() for p in pools])  # (P, C, L)
    sigmas = np.stack([p.error_matrix() for p in pools]) * SIGMA_PER_MAE
    rows = np.arange(n_pools)
    depth = np.full((n_pools, n), cfg.start_layer, dtype=np.int64)
    cur_score = scores[:, :, cfg.start_layer - 1].copy()
    cur_sigma = sigmas[:, :, cfg.start_layer - 1].copy()
    ucb = cur_score + cfg.gamma * cur_sigma
    if cfg.start_layer == n_layers:
        ucb[:] = -np.inf
    n_pulls = min(cfg.budget, n * n_layers) - min_cost
    for _ in range(n_pulls):
        chosen = np.argmax(ucb, axis=1)
        depth[rows, chosen] += 1
        new_depth = depth[rows, chosen]
        cur_score[rows, chosen] = scores[rows, chosen, new_depth - 1]
        cur_sigma[rows, chosen] = sigmas[rows, chosen, new_depth - 1]
        new_ucb = cur_score[rows, chosen] + cfg.gamma * cur_sigma[rows, chosen]
        ucb[rows, chosen] = np.where(new_depth == n_layers, -np.inf, new_ucb)
    cost = min_cost + n_pulls
    return [(int(c), cost) for c in np.argmax(cur_score, axis=1)]


def baseline_select(
    pool: CandidatePool, mode: str, budget: int, seed: int = 0
) -> tuple[int, int]:
    """Evaluate a budget-proportional subset fully and pick its best.

    Subset size is floor(budget / layers), clamped to [1, candidates].  The
    subset is a seeded uniform sample (random mode) or the top candidates by
    the named logprob field.  Returns (selected index, cost in layer units).
    """
    if mode not in BASELINE_MODES:
        raise ValueError(f"unknown baseline mode {mode!r}")
    n, n_layers = pool.n_candidates, pool.n_layers
    if budget < n_layers:
        raise ValueError(f"budget {budget} below one full evaluation ({n_layers})")
    k = min(budget // n_layers, n)
    if mode == BASELINE_RANDOM:
        rng = substream(seed, "baseline-random")
        subset = np.sort(rng.choice(n, size=k, replace=False))
    else:
        values = []
        for c in pool.candidates:
            value = getattr(c, mode)
            if value is None:
                raise ValueError(f"{mode} missing for candidate {c.segment_id!r}")
            values.append(value)
        order = np.argsort(-np.asarray(values, dtype=np.float64), kind="mergesort")
        subset = np.sort(order[:k])
    finals = pool.final_scores()[subset]
    selected = int(subset[int(np.argmax(finals))])
    return selected, k * n_layers


def layer_snapshot(
    trace: BanditTrace, fractions: Sequence[float]
) -> dict[float, dict[int, int]]:
    """Deepest-layer histograms at given fractions of the spent budget.

    A pull is included when its running cost is within floor(f * budget).
    """
    out: dict[float, dict[int, int]] = {}
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError("snapshot fractions must lie in (0, 1]")
        cutoff = int(math.floor(f * trace.budget + 1e-9))
        depth = [trace.start_layer] * trace.n_candidates
        for pull in trace.pulls:
            if pull.step > cutoff:
                break
            depth[pull.candidate] = pull.layer
        hist: dict[int, int] = {}
        for d in depth:
            hist[d] = hist.get(d, 0) + 1
        out[float(f)] = hist
    return out


def prefix_cutoff(src_len: int, fraction: float, fertility: float) -> int:
    """Token count of a target prefix sized from the source length.

    Rounds half up; never below one token.
    """
    if src_len < 1:
        raise ValueError("src_len must be >= 1")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    raw = fertility * src_len * fraction
    return max(1, int(math.floor(raw + 0.5 + 1e-9)))


_STAGE_FRACTIONS = (0.25, 0.5, 0.75)
_SEGMENT_EDGES = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class PruneSchedule:
    """Keep fractions applied at intermediate target-length checkpoints."""

    stages: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple((float(f), float(k)) for f, k in self.stages))
        fracs = [f for f, _ in self.stages]
        if any(f not in _STAGE_FRACTIONS for f in fracs):
            raise ValueError(f"stage fractions must be among {_STAGE_FRACTIONS}")
        if any(b <= a for a, b in zip(fracs, fracs[1:])):
            raise ValueError("stage fractions must be strictly increasing")
        if any(not (0.0 < k <= 1.0) for _, k in self.stages):
            raise ValueError("keep fractions must lie in (0, 1]")

    def keep_at(self, fraction: float) -> float | None:
        for f, k in self.stages:
            if f == fraction:
                return k
        return None


def staged_prune(
    partial_scores: Sequence[Mapping[float, float]], schedule: PruneSchedule
) -> tuple[int, float]:
    """Prune candidates at intermediate generation checkpoints.

    ``partial_scores`` maps revealed fraction to score, per candidate; the
    score at 1.0 is the candidate's final score.  At each scheduled stage the
    alive candidates are ranked by the stage's partial score and the top
    ceil(keep * alive) survive (at least one).  Returns (survivor index,
    generation cost as a fraction of generating every candidate fully).
    Generation cost charges each length segment by the number of candidates
    alive while it is generated.
    """
    n = len(partial_scores)
    if n < 1:
        raise ValueError("no candidates")

    def score_at(c: int, fraction: float) -> float:
        scores = partial_scores[c]
        if fraction not in scores:
            raise ValueError(f"partial score at fraction {fraction} missing for candidate {c}")
        return float(scores[fraction])

    alive = list(range(n))
    cost = 0.0
    for lo, hi in zip(_SEGMENT_EDGES, _SEGMENT_EDGES[1:]):
        cost += len(alive) * (hi - lo)
        keep = schedule.keep_at(hi) if hi < 1.0 else None
        if keep is not None:
            count = max(1, math.ceil(len(alive) * keep))
            ranked = sorted(alive, key=lambda c: (-score_at(c, hi), c))
            alive = sorted(ranked[:count])
    survivor = max(alive, key=lambda c: (score_at(c, 1.0), -c))
    return survivor, cost / n
