from __future__ import annotations

import numpy as np

from layerqe.dataset import CandidatePool, LayerTrajectory, SegmentRecord


def make_record(
    segment_id="s1",
    lang_pair="en-de",
    system_id="sysA",
    scores=(1.0, 2.0, 3.0),
    errors=(0.5, 0.2, 0.0),
    src_len=10,
    tgt_len=11,
    human_score=None,
    logprob_sum=None,
    logprob_avg=None,
    source_id=None,
):
    return SegmentRecord(
        segment_id=segment_id,
        lang_pair=lang_pair,
        system_id=system_id,
        src_len=src_len,
        tgt_len=tgt_len,
        trajectory=LayerTrajectory(np.asarray(scores), np.asarray(errors)),
        human_score=human_score,
        logprob_sum=logprob_sum,
        logprob_avg=logprob_avg,
        source_id=source_id,
    )


def make_pool(score_rows, error_rows=None, source_id="src0", logprob_avgs=None):
    """Pool from per-candidate score rows (and optional error rows)."""
    score_rows = [list(map(float, row)) for row in score_rows]
    if error_rows is None:
        error_rows = [[0.0] * len(row) for row in score_rows]
    candidates = []
    for i, (srow, erow) in enumerate(zip(score_rows, error_rows)):
        avg = None if logprob_avgs is None else float(logprob_avgs[i])
        candidates.append(
            SegmentRecord(
                segment_id=f"{source_id}:c{i}",
                lang_pair="en-de",
                system_id=f"c{i}",
                src_len=10,
                tgt_len=10,
                trajectory=LayerTrajectory(np.asarray(srow), np.asarray(erow)),
                logprob_avg=avg,
                logprob_sum=None if avg is None else avg * 10,
                source_id=source_id,
            )
        )
    return CandidatePool(source_id=source_id, candidates=tuple(candidates))
