"""Locatability stratification and implicit-cue augmentation of reasoning trajectories."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

from .locatability import DistancePair, LocatabilityParams, Stratum, score_record
from .names import normalize_text
from .rewards import EntitySet, GeoLocation, GroundingProvider

log = logging.getLogger(__name__)

IMPLICIT_THRESHOLD = 0.3
MIN_SUPPORT = 2
N_CANDIDATES = 3
HISTOGRAM_BINS = 10


class RecordError(ValueError):
    """A dataset record violates the schema or its invariants."""


class CoverageError(ValueError):
    """A step lacks grounding confidences for some retrieved candidates."""


class StepClass(str, enum.Enum):
    IMPLICIT = "Implicit"
    EXPLICIT_REMOVED = "ExplicitRemoved"


@dataclass
class ReasoningStep:
    text: str
    entities: EntitySet = field(default_factory=EntitySet)
    confidence_per_candidate: dict[str, float] = field(default_factory=dict)
    own_image_confidence: float | None = None

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "entities": self.entities.to_list(),
            "confidence_per_candidate": dict(self.confidence_per_candidate),
            "own_image_confidence": self.own_image_confidence,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReasoningStep":
        if not isinstance(data, dict) or "text" not in data:
            raise RecordError("reasoning step needs a 'text' field")
        confs = {str(k): _unit(v, f"confidence for candidate {k}") for k, v in (data.get("confidence_per_candidate") or {}).items()}
        own = data.get("own_image_confidence")
        return cls(
            text=str(data["text"]),
            entities=EntitySet(data.get("entities") or []),
            confidence_per_candidate=confs,
            own_image_confidence=None if own is None else _unit(own, "own_image_confidence"),
        )


def _unit(value, what: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise RecordError(f"{what} is not a number: {value!r}") from None
    if not 0.0 <= v <= 1.0:
        raise RecordError(f"{what} = {v} outside [0, 1]")
    return v


def _distance(value, what: str) -> float | None:
    if value is None:
        return None
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise RecordError(f"{what} is not a number: {value!r}") from None
    if not math.isfinite(v) or v < 0:
        raise RecordError(f"{what} = {v} must be a finite non-negative distance")
    return v


@dataclass
class DatasetRecord:
    image_id: str
    l_visual: float
    d_rag: float | None
    d_reason: float | None
    ground_truth: GeoLocation | None = None
    candidate_ids: list[str] = field(default_factory=list)
    standard_steps: list[ReasoningStep] = field(default_factory=list)
    candidate_steps: list[ReasoningStep] = field(default_factory=list)
    stratum: Stratum | None = None
    augmented_steps: list[ReasoningStep] | None = None
    scores: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetRecord":
        if not isinstance(data, dict):
            raise RecordError("record must be a JSON object")
        image_id = data.get("image_id")
        if not image_id:
            raise RecordError("record has no image_id")
        try:
            if "l_visual" not in data:
                raise RecordError("missing l_visual")
            candidate_ids = [str(c) for c in data.get("candidate_ids") or []]
            rec = cls(
                image_id=str(image_id),
                l_visual=_unit(data["l_visual"], "l_visual"),
                d_rag=_distance(data.get("d_rag"), "d_rag"),
                d_reason=_distance(data.get("d_reason"), "d_reason"),
                ground_truth=GeoLocation.from_dict(data["ground_truth"]) if data.get("ground_truth") else None,
                candidate_ids=candidate_ids,
                standard_steps=[ReasoningStep.from_dict(s) for s in data.get("standard_steps") or []],
                candidate_steps=[ReasoningStep.from_dict(s) for s in data.get("candidate_steps") or []],
                stratum=Stratum(data["stratum"]) if data.get("stratum") else None,
                augmented_steps=None,
            )
        except RecordError as exc:
            raise RecordError(f"{image_id}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordError(f"{image_id}: malformed field: {exc}") from None
        known = set(candidate_ids)
        for step in rec.standard_steps + rec.candidate_steps:
            extra = set(step.confidence_per_candidate) - known
            if extra:
                raise RecordError(f"{image_id}: step {step.text!r} has confidences for unknown candidates {sorted(extra)}")
        return rec

    def to_dict(self) -> dict:
        d = {
            "image_id": self.image_id,
            "l_visual": self.l_visual,
            "ground_truth": self.ground_truth.to_dict() if self.ground_truth else None,
            "d_rag": self.d_rag,
            "d_reason": self.d_reason,
            "candidate_ids": list(self.candidate_ids),
            "standard_steps": [s.to_dict() for s in self.standard_steps],
            "candidate_steps": [s.to_dict() for s in self.candidate_steps],
            "stratum": self.stratum.value if self.stratum else None,
        }
        d.update(self.scores)
        if self.augmented_steps is not None:
            d["augmented_steps"] = [s.to_dict() for s in self.augmented_steps]
        return d


@dataclass
class Stratification:
    standard: list[DatasetRecord]
    rag_superior: list[DatasetRecord]
    rejected: list[tuple[str, str]] = field(default_factory=list)

    def __iter__(self):
        return iter((self.standard, self.rag_superior))


def stratify(records: Iterable[DatasetRecord], params: LocatabilityParams) -> Stratification:
    """Score every record and split it into the standard or RAG-superior subset.

    Records without both distances are rejected (and logged by id). Each
    accepted record gets its stratum and locatability scores set in place.
    Within each subset the input order is kept.
    """
    out = Stratification([], [])
    for rec in records:
        if rec.d_rag is None or rec.d_reason is None:
            log.warning("rejecting %s: missing d_rag/d_reason", rec.image_id)
            out.rejected.append((rec.image_id, "missing d_rag/d_reason"))
            continue
        res, stratum = score_record(rec.l_visual, DistancePair(rec.d_rag, rec.d_reason), params)
        rec.stratum = stratum
        rec.scores = {"l_base": res.l_base, "l_gap": res.l_gap, "l_reason": res.l_reason, "l_opt": res.l_opt}
        (out.rag_superior if stratum is Stratum.RAG_SUPERIOR else out.standard).append(rec)
    log.info("stratified: %d standard, %d rag-superior, %d rejected",
             len(out.standard), len(out.rag_superior), len(out.rejected))
    return out


def classify_step(step: ReasoningStep, threshold: float = IMPLICIT_THRESHOLD) -> StepClass:
    """Implicit iff the step's cue is weakly grounded in the record's own image."""
    if step.own_image_confidence is None:
        raise ValueError(f"step {step.text!r} has no own-image confidence")
    if step.own_image_confidence < threshold:
        return StepClass.IMPLICIT
    return StepClass.EXPLICIT_REMOVED


def validate_implicit(
    step: ReasoningStep,
    threshold: float = IMPLICIT_THRESHOLD,
    min_support: int = MIN_SUPPORT,
    candidate_ids: Sequence[str] | None = None,
) -> bool:
    """True iff the step applies (confidence >= threshold) to at least ``min_support`` candidates."""
    confs = step.confidence_per_candidate
    if candidate_ids is not None:
        missing = [c for c in candidate_ids if c not in confs]
        if missing:
            raise CoverageError(f"step {step.text!r} has no confidence for candidates {missing}")
        values = [confs[c] for c in candidate_ids]
    else:
        values = list(confs.values())
    if len(values) < N_CANDIDATES:
        raise CoverageError(f"step {step.text!r} covers {len(values)} of {N_CANDIDATES} candidates")
    return sum(v >= threshold for v in values) >= min_support


class VerificationProvider(Protocol):
    def verify(self, record: DatasetRecord, step: ReasoningStep) -> bool: ...


class AcceptAllVerifier:
    """Default verification hook: accepts every validated step."""

    def verify(self, record: DatasetRecord, step: ReasoningStep) -> bool:
        return True


@dataclass(frozen=True)
class MergeStats:
    offered: int
    inserted: int
    collisions: int


def merge_trajectories(record: DatasetRecord, validated_implicit: Sequence[ReasoningStep]) -> MergeStats:
    """Insert validated implicit steps into the record's standard chain.

    A step goes right after the last standard step sharing an entity with it,
    or at the end. Steps whose normalized text is already present are skipped.
    Sets ``record.augmented_steps`` and returns the counts.
    """
    if record.stratum is not Stratum.RAG_SUPERIOR:
        raise ValueError(f"{record.image_id}: can only merge into RAG-superior records")
    standard = record.standard_steps
    seen = {normalize_text(s.text) for s in standard}
    after: dict[int, list[ReasoningStep]] = {}
    collisions = 0
    for step in validated_implicit:
        key = normalize_text(step.text)
        if key in seen:
            collisions += 1
            continue
        seen.add(key)
        anchor = len(standard) - 1
        for i in range(len(standard) - 1, -1, -1):
            if standard[i].entities & step.entities:
                anchor = i
                break
        after.setdefault(anchor, []).append(step)

    merged = list(after.get(-1, []))  # empty standard chain
    for i, s in enumerate(standard):
        merged.append(s)
        merged.extend(after.get(i, []))
    record.augmented_steps = merged
    return MergeStats(len(validated_implicit), len(validated_implicit) - collisions, collisions)


def ground_step(step: ReasoningStep, image_id: str, candidate_ids: Sequence[str], provider: GroundingProvider) -> ReasoningStep:
    """Fill missing confidences as the max entity-grounding confidence per image."""

    def best(img: str) -> float:
        return max((provider.query(e, img) for e in sorted(step.entities)), default=0.0)

    confs = dict(step.confidence_per_candidate)
    for cid in candidate_ids:
        confs.setdefault(cid, best(cid))
    own = step.own_image_confidence if step.own_image_confidence is not None else best(image_id)
    return ReasoningStep(step.text, step.entities, confs, own)


@dataclass
class CurationConfig:
    implicit_threshold: float = IMPLICIT_THRESHOLD
    min_support: int = MIN_SUPPORT
    locatability: LocatabilityParams = field(default_factory=LocatabilityParams)


@dataclass
class CurationResult:
    standard: list[DatasetRecord]
    rag_superior: list[DatasetRecord]
    rejected: list[tuple[str, str]]
    per_record: list[dict]

    def summary(self) -> dict:
        accepted = self.standard + self.rag_superior
        return {
            "counts": {
                "accepted": len(accepted),
                "rejected": len(self.rejected),
                "standard": len(self.standard),
                "rag_superior": len(self.rag_superior),
                "augmented_records": sum(1 for r in self.per_record if r["inserted"] > 0),
                "implicit_steps_inserted": sum(r["inserted"] for r in self.per_record),
            },
            "l_opt_histogram": l_opt_histogram([r.scores["l_opt"] for r in accepted]),
            "rejected": [{"image_id": i, "reason": why} for i, why in self.rejected],
            "records": self.per_record,
        }


    def audit(self) -> dict:
        """Counts, rejections, per-record step bookkeeping and augmented step texts."""
        summary = self.summary()
        return {
            "counts": summary["counts"],
            "rejected": summary["rejected"],
            "records": summary["records"],
            "augmented": {r.image_id: [s.text for s in r.augmented_steps] for r in self.rag_superior},
        }


def l_opt_histogram(values: Sequence[float], bins: int = HISTOGRAM_BINS) -> dict:
    """Counts over equal-width bins of [0, 1]; the last bin includes 1.0."""
    counts = [0] * bins
    for v in values:
        counts[min(int(v * bins), bins - 1)] += 1
    edges = [i / bins for i in range(bins + 1)]
    return {"edges": edges, "counts": counts}


def curate(
    records: Iterable[DatasetRecord],
    cfg: CurationConfig | None = None,
    verifier: VerificationProvider | None = None,
    provider: GroundingProvider | None = None,
) -> CurationResult:
    """Stratify, then augment each RAG-superior record with validated implicit cues.

    Outputs are ordered by image_id so results do not depend on input order.
    """
    cfg = cfg or CurationConfig()
    verifier = verifier or AcceptAllVerifier()
    strat = stratify(records, cfg.locatability)
    rejected = list(strat.rejected)

    standard = sorted(strat.standard, key=lambda r: r.image_id)
    for rec in standard:
        rec.candidate_ids = []
        rec.candidate_steps = []

    rag_superior = []
    per_record = {}
    for rec in sorted(strat.rag_superior, key=lambda r: r.image_id):
        if len(rec.candidate_ids) != N_CANDIDATES:
            why = f"RAG-superior record needs {N_CANDIDATES} candidate ids, has {len(rec.candidate_ids)}"
            log.warning("rejecting %s: %s", rec.image_id, why)
            rejected.append((rec.image_id, why))
            continue
        steps = rec.candidate_steps
        if provider is not None:
            steps = [ground_step(s, rec.image_id, rec.candidate_ids, provider) for s in steps]
            rec.candidate_steps = steps
        implicit, explicit, coverage = [], 0, 0
        for step in steps:
            if step.own_image_confidence is None:
                coverage += 1
                continue
            if classify_step(step, cfg.implicit_threshold) is StepClass.IMPLICIT:
                implicit.append(step)
            else:
                explicit += 1
        validated = []
        for step in implicit:
            try:
                ok = validate_implicit(step, cfg.implicit_threshold, cfg.min_support, rec.candidate_ids)
            except CoverageError as exc:
                log.warning("%s: %s", rec.image_id, exc)
                coverage += 1
                continue
            if ok:
                validated.append(step)
        verified = [s for s in validated if verifier.verify(rec, s)]
        stats = merge_trajectories(rec, verified)
        per_record[rec.image_id] = {
            "image_id": rec.image_id,
            "stratum": rec.stratum.value,
            "candidate_steps": len(steps),
            "implicit": len(implicit),
            "explicit_removed": explicit,
            "coverage_errors": coverage,
            "validated": len(validated),
            "verified": len(verified),
            "collisions": stats.collisions,
            "inserted": stats.inserted,
            "standard_steps": len(rec.standard_steps),
            "augmented_steps": len(rec.augmented_steps),
        }
        rag_superior.append(rec)

    for rec in standard:
        per_record[rec.image_id] = {
            "image_id": rec.image_id,
            "stratum": rec.stratum.value,
            "candidate_steps": 0,
            "implicit": 0,
            "explicit_removed": 0,
            "coverage_errors": 0,
            "validated": 0,
            "verified": 0,
            "collisions": 0,
            "inserted": 0,
            "standard_steps": len(rec.standard_steps),
            "augmented_steps": 0,
        }
    rejected.sort()
    return CurationResult(standard, rag_superior, rejected, [per_record[k] for k in sorted(per_record)])


def dumps_jsonl(records: Iterable[DatasetRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in records)
