"""Memory layer: deduplicated knowledge store with vector and temporal recall.

Writes funnel through ``add_knowledge``, which applies a two-stage dedup:
an exact SHA-256 content hash check, then a nearest-neighbor similarity
check at a configurable threshold. Near-duplicates are arbitrated by a
pluggable backend into skip, replace, or merge. All mutations are atomic
with respect to arbitration failures: if the arbiter raises or returns an
unknown action, the store is left untouched.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Callable, Optional

import numpy as np

from foresight.embedding import cosine, embed

logger = logging.getLogger(__name__)

MEMORY_KINDS = ("profile_attr", "entity_fact", "conversation_summary", "research_fact", "artifact")

EMOTION_LABELS = ("surprise", "anger", "sadness", "joy", "fear", "neutral", "disgust")

DEFAULT_NEAR_DUP_THRESHOLD = 0.88
DEFAULT_COVERAGE_THRESHOLD = 0.80


class ArbitrationError(RuntimeError):
    """Arbiter backend failed or returned an out-of-vocabulary action."""


class AddOutcome(str, Enum):
    ADDED = "added"
    DUPLICATE = "duplicate"
    SKIPPED = "skipped"
    REPLACED = "replaced"
    MERGED = "merged"


def content_hash(content: str) -> str:
    """Lowercase hex SHA-256 of the UTF-8 content."""
    return hashlib.sha256(content.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Emotion:
    label: str
    intensity: float

    def __post_init__(self) -> None:
        if self.label not in EMOTION_LABELS:
            raise ValueError(f"unknown emotion label {self.label!r}")
        if not -1.0 <= self.intensity <= 1.0:
            raise ValueError(f"emotion intensity out of range: {self.intensity}")


@dataclass
class MemoryRecord:
    id: str
    kind: str
    content: str
    content_hash: str
    embedding: np.ndarray = field(compare=False, repr=False)
    created_at: datetime = field(default_factory=lambda: datetime(2026, 1, 1, tzinfo=timezone.utc))
    updated_at: datetime = field(default_factory=lambda: datetime(2026, 1, 1, tzinfo=timezone.utc))
    status: str = "active"  # active | merged
    merged_into: Optional[str] = None
    merged_from: tuple[str, ...] = ()
    emotion: Optional[Emotion] = None


@dataclass(frozen=True)
class ArbiterVerdict:
    """Arbitration result: action in {skip, replace, merge}; merge carries content."""

    action: str
    merged_content: Optional[str] = None


# Arbiter backends receive the incoming content and the conflicting record.
Arbiter = Callable[[str, MemoryRecord], ArbiterVerdict]


@dataclass(frozen=True)
class AddResult:
    outcome: AddOutcome
    record_id: Optional[str]


@dataclass(frozen=True)
class ExtractedFact:
    entity: str
    type: str
    attribute: str
    relationship: str

    def render(self) -> str:
        return f"{self.entity} | {self.type} | {self.attribute} | {self.relationship}"


@dataclass(frozen=True)
class TurnUpdate:
    profile_updates: dict[str, str] = field(default_factory=dict)
    updated_summary: str = ""
    key_info: tuple[str, ...] = ()
    user_sentiment: Optional[Emotion] = None
    extracted_facts: tuple[ExtractedFact, ...] = ()


@dataclass(frozen=True)
class GapCandidate:
    topic: str
    reason: str  # stale | incomplete | weakly_supported | missing
    related_record_ids: tuple[str, ...]


@dataclass(frozen=True)
class CoverageReport:
    level: str  # high | partial | low
    missing_subtopics: tuple[str, ...]
    supporting_record_ids: tuple[str, ...]


@dataclass(frozen=True)
class TemporalResult:
    in_window: tuple[MemoryRecord, ...]
    closest: Optional[MemoryRecord]


class LogicalClock:
    """Deterministic timestamp source: fixed epoch, fixed step per tick."""

    def __init__(self, start: Optional[datetime] = None, step_seconds: float = 1.0) -> None:
        self._now = start or datetime(2026, 1, 1, tzinfo=timezone.utc)
        self._step = timedelta(seconds=step_seconds)

    def now(self) -> datetime:
        return self._now

    def tick(self) -> datetime:
        current = self._now
        self._now = self._now + self._step
        return current


class MemoryState:
    """Single-writer memory for one conversation run."""

    def __init__(
        self,
        near_dup_threshold: float = DEFAULT_NEAR_DUP_THRESHOLD,
        coverage_threshold: float = DEFAULT_COVERAGE_THRESHOLD,
        clock: Optional[LogicalClock] = None,
    ) -> None:
        self.near_dup_threshold = near_dup_threshold
        self.coverage_threshold = coverage_threshold
        self.clock = clock or LogicalClock()
        self.records: dict[str, MemoryRecord] = {}
        self.hash_index: dict[str, str] = {}  # digest -> record id, active records only
        self.profile: dict[str, str] = {}
        self.rolling_summary: str = ""
        self._counter = 0

    # -- identity ---------------------------------------------------------

    def _new_id(self) -> str:
        self._counter += 1
        return f"m{self._counter:06d}"

    def active_records(self) -> list[MemoryRecord]:
        return [r for r in self.records.values() if r.status == "active"]

    # -- write path -------------------------------------------------------

    def add_knowledge(self, kind: str, content: str, arbiter: Arbiter) -> AddResult:
        """Deduplicated insert. See module docstring for the full protocol."""
        if kind not in MEMORY_KINDS:
            raise ValueError(f"unknown memory kind {kind!r}")
        if not content:
            raise ValueError("content must be non-empty")

        digest = content_hash(content)
        if digest in self.hash_index:
            return AddResult(AddOutcome.DUPLICATE, self.hash_index[digest])

        neighbors = self.vector_search(content, k=1, threshold=self.near_dup_threshold)
        if not neighbors:
            record = self._store_new(kind, content, digest)
            return AddResult(AddOutcome.ADDED, record.id)

        neighbor, _sim = neighbors[0]
        try:
            verdict = arbiter(content, neighbor)
        except ArbitrationError:
            raise
        except Exception as exc:  # arbiter backend fault: state must not change
            raise ArbitrationError(f"arbiter backend failed: {exc}") from exc
        if verdict.action not in ("skip", "replace", "merge"):
            raise ArbitrationError(f"arbiter returned unknown action {verdict.action!r}")

        if verdict.action == "skip":
            return AddResult(AddOutcome.SKIPPED, neighbor.id)

        if verdict.action == "replace":
            # In-place rewrite; step 1 guarantees the new digest is unindexed.
            del self.hash_index[neighbor.content_hash]
            neighbor.content = content
            neighbor.content_hash = digest
            neighbor.embedding = embed(content)
            neighbor.updated_at = self.clock.tick()
            self.hash_index[digest] = neighbor.id
            return AddResult(AddOutcome.REPLACED, neighbor.id)

        merged_content = verdict.merged_content if verdict.merged_content else f"{neighbor.content}\n{content}"
        merged_digest = content_hash(merged_content)
        existing_id = self.hash_index.get(merged_digest)
        if existing_id is not None and existing_id != neighbor.id:
            # Merged text already present on another active record: reuse it
            # as the merge target instead of violating hash uniqueness.
            target = self.records[existing_id]
            self._retire(neighbor, into=target.id)
            target.merged_from = tuple(list(target.merged_from) + [neighbor.id])
            target.updated_at = self.clock.tick()
            return AddResult(AddOutcome.MERGED, target.id)

        self._retire(neighbor, into=None)  # merged_into patched after the new id exists
        merged = self._store_new(kind, merged_content, merged_digest, merged_from=(neighbor.id,))
        neighbor.merged_into = merged.id
        return AddResult(AddOutcome.MERGED, merged.id)

    def _store_new(
        self, kind: str, content: str, digest: str, merged_from: tuple[str, ...] = ()
    ) -> MemoryRecord:
        stamp = self.clock.tick()
        record = MemoryRecord(
            id=self._new_id(),
            kind=kind,
            content=content,
            content_hash=digest,
            embedding=embed(content),
            created_at=stamp,
            updated_at=stamp,
            merged_from=merged_from,
        )
        self.records[record.id] = record
        self.hash_index[digest] = record.id
        return record

    def _retire(self, record: MemoryRecord, into: Optional[str]) -> None:
        record.status = "merged"
        record.merged_into = into
        record.updated_at = self.clock.tick()
        self.hash_index.pop(record.content_hash, None)

    # -- read paths -------------------------------------------------------

    def vector_search(
        self, query: str, k: int = 5, threshold: float = 0.0
    ) -> list[tuple[MemoryRecord, float]]:
        """Top-k active records by cosine, ties broken by ascending id."""
        qvec = embed(query)
        scored = [(record, cosine(qvec, record.embedding)) for record in self.active_records()]
        scored = [(r, s) for r, s in scored if s >= threshold]
        scored.sort(key=lambda pair: (-pair[1], pair[0].id))
        return scored[:k]

    def temporal_query(self, at: datetime, window: timedelta) -> TemporalResult:
        """Records created within window/2 of ``at``; closest over all records."""
        half = window / 2
        everything = sorted(self.records.values(), key=lambda r: (r.created_at, r.id))
        in_window = tuple(r for r in everything if abs(r.created_at - at) <= half)
        closest = None
        if everything:
            closest = min(everything, key=lambda r: (abs(r.created_at - at), r.created_at, r.id))
        return TemporalResult(in_window=in_window, closest=closest)

    def coverage_check(self, retrieval_query: str, subtopics: tuple[str, ...] = ()) -> CoverageReport:
        """How much of a retrieval plan existing memory already covers."""
        if not retrieval_query:
            raise ValueError("retrieval_query must be non-empty")
        plan = tuple(subtopics) if subtopics else (retrieval_query,)
        missing: list[str] = []
        supporting: list[str] = []
        for subtopic in plan:
            hits = self.vector_search(subtopic, k=1, threshold=self.coverage_threshold)
            if hits:
                supporting.append(hits[0][0].id)
            else:
                missing.append(subtopic)
        if not missing:
            level = "high"
        elif len(missing) == len(plan):
            level = "low"
        else:
            level = "partial"
        return CoverageReport(level=level, missing_subtopics=tuple(missing), supporting_record_ids=tuple(supporting))

    # -- turn maintenance ---------------------------------------------------

    def apply_turn_update(self, update: TurnUpdate, arbiter: Arbiter) -> None:
        for key, value in update.profile_updates.items():
            self.profile[key] = value
        summary_record_id: Optional[str] = None
        if update.updated_summary:
            self.rolling_summary = update.updated_summary
            result = self.add_knowledge("conversation_summary", update.updated_summary, arbiter)
            summary_record_id = result.record_id
        for item in update.key_info:
            self.add_knowledge("entity_fact", item, arbiter)
        for extracted in update.extracted_facts:
            self.add_knowledge("entity_fact", extracted.render(), arbiter)
        if update.user_sentiment is not None and summary_record_id is not None:
            self.records[summary_record_id].emotion = update.user_sentiment

    # -- gap detection ------------------------------------------------------

    def detect_gaps(self, now: datetime, staleness: timedelta) -> list[GapCandidate]:
        """Conservative gap scan: stale, weakly supported, or marked content."""
        gaps: list[GapCandidate] = []
        actives = sorted(self.active_records(), key=lambda r: r.id)
        for record in actives:
            if now - record.updated_at > staleness:
                gaps.append(GapCandidate(topic=record.content, reason="stale", related_record_ids=(record.id,)))
            if "TBD" in record.content:
                gaps.append(GapCandidate(topic=record.content, reason="incomplete", related_record_ids=(record.id,)))
            if record.kind == "research_fact" and not record.merged_from:
                supported = False
                for other in actives:
                    if other.id == record.id:
                        continue
                    if cosine(record.embedding, other.embedding) >= self.coverage_threshold:
                        supported = True
                        break
                if not supported:
                    gaps.append(
                        GapCandidate(topic=record.content, reason="weakly_supported", related_record_ids=(record.id,))
                    )
        return gaps

    # -- persistence --------------------------------------------------------

    def to_snapshot(self) -> dict:
        records = []
        for record in sorted(self.records.values(), key=lambda r: r.id):
            records.append(
                {
                    "id": record.id,
                    "kind": record.kind,
                    "content": record.content,
                    "content_hash": record.content_hash,
                    "embedding": [float(x) for x in record.embedding],
                    "created_at": record.created_at.isoformat(),
                    "updated_at": record.updated_at.isoformat(),
                    "status": record.status,
                    "merged_into": record.merged_into,
                    "merged_from": list(record.merged_from),
                    "emotion": (
                        {"label": record.emotion.label, "intensity": record.emotion.intensity}
                        if record.emotion
                        else None
                    ),
                }
            )
        return {"records": records, "profile": dict(self.profile), "rolling_summary": self.rolling_summary}

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_snapshot(), fh, ensure_ascii=False, indent=2)

    @classmethod
    def from_snapshot(cls, snapshot: dict, **kwargs) -> "MemoryState":
        state = cls(**kwargs)
        highest = 0
        for rd in snapshot["records"]:
            emotion = rd.get("emotion")
            record = MemoryRecord(
                id=rd["id"],
                kind=rd["kind"],
                content=rd["content"],
                content_hash=rd["content_hash"],
                embedding=np.asarray(rd["embedding"], dtype=np.float64),
                created_at=datetime.fromisoformat(rd["created_at"]),
                updated_at=datetime.fromisoformat(rd["updated_at"]),
                status=rd["status"],
                merged_into=rd.get("merged_into"),
                merged_from=tuple(rd.get("merged_from", ())),
                emotion=Emotion(**emotion) if emotion else None,
            )
            state.records[record.id] = record
            if record.status == "active":
                state.hash_index[record.content_hash] = record.id
            digits = record.id.lstrip("m")
            if digits.isdigit():
                highest = max(highest, int(digits))
        state._counter = highest
        state.profile = dict(snapshot.get("profile", {}))
        state.rolling_summary = snapshot.get("rolling_summary", "")
        return state

    @classmethod
    def load(cls, path: str, **kwargs) -> "MemoryState":
        with open(path, encoding="utf-8") as fh:
            return cls.from_snapshot(json.load(fh), **kwargs)


__all__ = [
    "AddOutcome",
    "AddResult",
    "ArbitrationError",
    "Arbiter",
    "ArbiterVerdict",
    "CoverageReport",
    "EMOTION_LABELS",
    "Emotion",
    "ExtractedFact",
    "GapCandidate",
    "LogicalClock",
    "MEMORY_KINDS",
    "MemoryRecord",
    "MemoryState",
    "TemporalResult",
    "TurnUpdate",
    "content_hash",
]
