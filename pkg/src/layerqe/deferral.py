"""Mixed human-metric annotation: deferral policies and system rankings.

A deferral policy picks which segments a human should score; the rest keep
their metric (final-layer) scores.  Deferral curves measure how well system
rankings under the combined annotation agree with fully human rankings, as
the deferral rate grows.  Metric and human scores are mixed raw, without
rescaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from .dataset import SegmentRecord
from .metrics import CurvePoint, macro_average, pearson, spearman
from .rng import derive_seed, substream

POLICY_RANDOM = "random"
POLICY_LOW_SCORE = "low_score"
POLICY_LOW_CONFIDENCE = "low_confidence"
POLICY_ORACLE_LOW_HUMAN = "oracle_low_human"
POLICY_ORACLE_HIGH_ERROR = "oracle_high_error"
DEFERRAL_KINDS = (
    POLICY_RANDOM,
    POLICY_LOW_SCORE,
    POLICY_LOW_CONFIDENCE,
    POLICY_ORACLE_LOW_HUMAN,
    POLICY_ORACLE_HIGH_ERROR,
)


@dataclass(frozen=True)
class DeferralPolicy:
    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFERRAL_KINDS:
            raise ValueError(f"unknown deferral policy {self.kind!r}")


def _require_human(record: SegmentRecord) -> float:
    if record.human_score is None:
        raise ValueError(f"human_score missing for segment {record.segment_id!r}")
    return record.human_score


def defer_select(
    records: Sequence[SegmentRecord], policy: DeferralPolicy, rate: float
) -> set[str]:
    """Segment ids to route to human annotation at the given rate.

    Selects round(rate * N) segments (half-up).  Value ties break by
    segment_id order.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    n = len(records)
    k = min(n, int(math.floor(rate * n + 0.5 + 1e-9)))
    if k == 0:
        return set()
    if policy.kind == POLICY_RANDOM:
        rng = substream(policy.seed, "defer-random")
        chosen = rng.choice(n, size=k, replace=False)
        return {records[int(i)].segment_id for i in chosen}
    if policy.kind == POLICY_LOW_SCORE:
        keyed = [(r.trajectory.final_score, r.segment_id) for r in records]
    elif policy.kind == POLICY_LOW_CONFIDENCE:
        keyed = [(-r.trajectory.final_error, r.segment_id) for r in records]
    elif policy.kind == POLICY_ORACLE_LOW_HUMAN:
        keyed = [(_require_human(r), r.segment_id) for r in records]
    else:  # oracle_high_error
        keyed = [
            (-abs(r.trajectory.final_score - _require_human(r)), r.segment_id) for r in records
        ]
    keyed.sort()
    return {segment_id for _, segment_id in keyed[:k]}


def _by_lang(records: Sequence[SegmentRecord]) -> dict[str, list[SegmentRecord]]:
    groups: dict[str, list[SegmentRecord]] = {}
    for r in records:
        groups.setdefault(r.lang_pair, []).append(r)
    return groups


def _system_means(
    records: Sequence[SegmentRecord], deferred: set[str]
) -> tuple[list[float], list[float]]:
    """(combined, human) per-system mean scores, systems in stable order."""
    systems: dict[str, list[SegmentRecord]] = {}
    for r in records:
        systems.setdefault(r.system_id, []).append(r)
    combined, human = [], []
    for segs in systems.values():
        human_scores = [_require_human(r) for r in segs]
        mixed = [
            h if r.segment_id in deferred else r.trajectory.final_score
            for r, h in zip(segs, human_scores)
        ]
        combined.append(sum(mixed) / len(mixed))
        human.append(sum(human_scores) / len(human_scores))
    return combined, human


def deferral_curve(
    records: Sequence[SegmentRecord],
    policy: DeferralPolicy,
    rates: Sequence[float],
) -> list[CurvePoint]:
    """Macro system-ranking agreement of combined annotation vs fully human.

    Per language: deferred segments contribute human scores, the rest metric
    scores; systems are ranked by mean combined score and compared (Spearman)
    against the fully-human ranking; results macro-average over languages.
    Deferral selection runs per language with a language-derived stream.
    """
    by_lang = _by_lang(records)
    if not by_lang:
        raise ValueError("no records")
    for lang, segs in by_lang.items():
        if len({r.system_id for r in segs}) < 2:
            raise ValueError(f"language {lang!r} needs at least 2 systems")
    points = []
    for rate in rates:
        correlations: dict[str, float] = {}
        for lang, segs in by_lang.items():
            lang_policy = replace(policy, seed=derive_seed(policy.seed, "lang", lang))
            deferred = defer_select(segs, lang_policy, rate)
            combined, human = _system_means(segs, deferred)
            correlations[lang] = spearman(combined, human)
        points.append(CurvePoint(x=float(rate), y=macro_average(correlations), label=policy.kind))
    return points


def length_bias(records: Sequence[SegmentRecord]) -> tuple[float, float]:
    """Macro Pearson of (metric score, target length) and (predicted error,
    target length) across languages."""
    by_lang = _by_lang(records)
    if not by_lang:
        raise ValueError("no records")
    score_corr: dict[str, float] = {}
    error_corr: dict[str, float] = {}
    for lang, segs in by_lang.items():
        if len(segs) < 2:
            raise ValueError(f"language {lang!r} needs at least 2 records")
        lengths = [float(r.tgt_len) for r in segs]
        score_corr[lang] = pearson([r.trajectory.final_score for r in segs], lengths)
        error_corr[lang] = pearson([r.trajectory.final_error for r in segs], lengths)
    return macro_average(score_corr), macro_average(error_corr)
