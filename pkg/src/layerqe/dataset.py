"""Record data model and file formats.

A dataset is a UTF-8 text file with one JSON object per line, one object per
scored segment.  Schema (optional fields may be omitted or null):

    segment_id    str   unique within a file
    lang_pair     str   e.g. "en-de"
    system_id     str
    source_id     str   optional; shared by all candidates of one source
    src_len       int   source token count, >= 1
    tgt_len       int   translation token count, >= 1
    human_score   float optional
    logprob_sum   float optional
    logprob_avg   float optional; must equal logprob_sum / tgt_len when both set
    layer_scores  [float]  per-layer quality estimates, layer 1..L
    layer_errors  [float]  per-layer predicted absolute errors, same length

Loaded records are immutable; share them freely across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DatasetError(Exception):
    """Base class for record-file problems."""


class ParseError(DatasetError):
    """A line could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ValidationError(DatasetError):
    """A record violates an invariant; names the offending field."""

    def __init__(self, field_name: str, message: str, segment_id: str | None = None):
        where = f" (segment {segment_id})" if segment_id else ""
        super().__init__(f"{field_name}: {message}{where}")
        self.field_name = field_name
        self.segment_id = segment_id


@dataclass(frozen=True, eq=False)
class LayerTrajectory:
    """Per-layer (score, predicted absolute error) pairs, layer 1..L."""

    scores: np.ndarray
    errors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        object.__setattr__(self, "errors", np.asarray(self.errors, dtype=np.float64))
        if self.scores.ndim != 1 or self.errors.ndim != 1:
            raise ValidationError("trajectory", "scores and errors must be 1-dimensional")
        if self.scores.size < 1:
            raise ValidationError("trajectory", "must have at least one layer")
        if self.scores.size != self.errors.size:
            raise ValidationError(
                "trajectory",
                f"trajectory length mismatch: {self.scores.size} scores vs {self.errors.size} errors",
            )
        if not np.all(np.isfinite(self.scores)) or not np.all(np.isfinite(self.errors)):
            raise ValidationError("trajectory", "non-finite value in trajectory")

    @property
    def n_layers(self) -> int:
        return int(self.scores.size)

    @property
    def final_score(self) -> float:
        return float(self.scores[-1])

    @property
    def final_error(self) -> float:
        return float(self.errors[-1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, LayerTrajectory):
            return NotImplemented
        return np.array_equal(self.scores, other.scores) and np.array_equal(
            self.errors, other.errors
        )


@dataclass(frozen=True)
class SegmentRecord:
    """One (source, translation) evaluation unit."""

    segment_id: str
    lang_pair: str
    system_id: str
    src_len: int
    tgt_len: int
    trajectory: LayerTrajectory
    human_score: float | None = None
    logprob_sum: float | None = None
    logprob_avg: float | None = None
    source_id: str | None = None

    def __post_init__(self):
        if not self.segment_id:
            raise ValidationError("segment_id", "must be non-empty")
        for name in ("src_len", "tgt_len"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValidationError(name, f"must be a positive integer, got {value!r}",
                                      self.segment_id)
        for name in ("human_score", "logprob_sum", "logprob_avg"):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise ValidationError(name, "must be finite", self.segment_id)
        if self.logprob_sum is not None and self.logprob_avg is not None:
            expected = self.logprob_sum / self.tgt_len
            if not math.isclose(self.logprob_avg, expected, rel_tol=1e-6, abs_tol=1e-9):
                raise ValidationError(
                    "logprob_avg",
                    f"{self.logprob_avg} != logprob_sum / tgt_len = {expected}",
                    self.segment_id,
                )


@dataclass(frozen=True)
class CandidatePool:
    """All candidate translations of one source segment."""

    source_id: str
    candidates: tuple[SegmentRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise ValidationError("candidates", "pool must be non-empty", self.source_id)
        layers = {c.trajectory.n_layers for c in self.candidates}
        if len(layers) > 1:
            raise ValidationError(
                "trajectory",
                f"mixed layer counts within pool: {sorted(layers)}",
                self.source_id,
            )

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    @property
    def n_layers(self) -> int:
        return self.candidates[0].trajectory.n_layers

    def score_matrix(self) -> np.ndarray:
        """(n_candidates, n_layers) layer scores."""
        return np.stack([c.trajectory.scores for c in self.candidates])

    def error_matrix(self) -> np.ndarray:
        """(n_candidates, n_layers) predicted errors."""
        return np.stack([c.trajectory.errors for c in self.candidates])

    def final_scores(self) -> np.ndarray:
        return self.score_matrix()[:, -1]


@dataclass(frozen=True)
class FertilityTable:
    """Expected target/source length ratio per language pair."""

    factors: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for pair, factor in self.factors.items():
            if not (factor > 0 and math.isfinite(factor)):
                raise ValidationError("fertility", f"factor for {pair!r} must be > 0, got {factor}")


DEFAULT_FERTILITY = 1.0


def fertility_lookup(table: FertilityTable, lang_pair: str) -> float:
    """Fertility factor for a language pair; 1.0 when unlisted."""
    return table.factors.get(lang_pair, DEFAULT_FERTILITY)


def load_fertility_table(path: str | Path) -> FertilityTable:
    """Read a two-column ``lang_pair<TAB>factor`` file."""
    factors: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(line_no, f"expected 'lang_pair<TAB>factor', got {raw!r}")
            try:
                factors[parts[0]] = float(parts[1])
            except ValueError as exc:
                raise ParseError(line_no, f"bad factor {parts[1]!r}") from exc
    return FertilityTable(factors)


_OPTIONAL_FLOAT_FIELDS = ("human_score", "logprob_sum", "logprob_avg")


def record_to_json(record: SegmentRecord) -> dict:
    obj: dict = {
        "segment_id": record.segment_id,
        "lang_pair": record.lang_pair,
        "system_id": record.system_id,
        "src_len": record.src_len,
        "tgt_len": record.tgt_len,
    }
    if record.source_id is not None:
        obj["source_id"] = record.source_id
    for name in _OPTIONAL_FLOAT_FIELDS:
        value = getattr(record, name)
        if value is not None:
            obj[name] = value
    obj["layer_scores"] = record.trajectory.scores.tolist()
    obj["layer_errors"] = record.trajectory.errors.tolist()
    return obj


def record_from_json(obj: dict) -> SegmentRecord:
    if not isinstance(obj, dict):
        raise ValidationError("record", f"expected object, got {type(obj).__name__}")
    segment_id = obj.get("segment_id")
    for name in ("segment_id", "lang_pair", "system_id"):
        value = obj.get(name)
        if not isinstance(value, str) or not value:
            raise ValidationError(name, "must be a non-empty string",
                                  segment_id if isinstance(segment_id, str) else None)
    for name in ("layer_scores", "layer_errors"):
        if name not in obj:
            raise ValidationError(name, "missing", obj["segment_id"])
    trajectory = LayerTrajectory(obj["layer_scores"], obj["layer_errors"])
    kwargs = {}
    for name in _OPTIONAL_FLOAT_FIELDS:
        value = obj.get(name)
        kwargs[name] = float(value) if value is not None else None
    source_id = obj.get("source_id")
    if source_id is not None and not isinstance(source_id, str):
        raise ValidationError("source_id", "must be a string", obj["segment_id"])
    return SegmentRecord(
        segment_id=obj["segment_id"],
        lang_pair=obj["lang_pair"],
        system_id=obj["system_id"],
        src_len=obj.get("src_len"),
        tgt_len=obj.get("tgt_len"),
        trajectory=trajectory,
        source_id=source_id,
        **kwargs,
    )


def load_records(path: str | Path) -> list[SegmentRecord]:
    """Load and validate a record file; order preserved.

    Raises ParseError (with line number) for malformed lines and
    ValidationError (naming field and segment_id) for invariant violations.
    """
    records: list[SegmentRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc.msg}") from exc
            record = record_from_json(obj)
            if record.segment_id in seen:
                raise ValidationError("segment_id", "duplicate within file", record.segment_id)
            seen.add(record.segment_id)
            records.append(record)
    return records


def save_records(path: str | Path, records: Iterable[SegmentRecord]) -> None:
    """Write records in the line-delimited format (deterministic bytes)."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record)) + "\n")


def group_pools(records: Sequence[SegmentRecord], key: str = "source_id") -> list[CandidatePool]:
    """Group records into candidate pools by the named source-bearing field.

    Pool order follows first occurrence; within-pool order follows input.
    """
    if records and not hasattr(records[0], key):
        raise ValueError(f"unknown grouping field {key!r}")
    groups: dict[str, list[SegmentRecord]] = {}
    for record in records:
        value = getattr(record, key)
        if value is None:
            raise ValidationError(key, "missing grouping value", record.segment_id)
        groups.setdefault(value, []).append(record)
    return [CandidatePool(source_id=k, candidates=tuple(v)) for k, v in groups.items()]
