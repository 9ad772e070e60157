"""Reward functions for adaptive depth, visual grounding and hierarchical geo accuracy."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .geodesy import GeoCoord, haversine_km
from .names import UNKNOWN, NameNormalizer, normalize_text

_DEFAULT_NORMALIZER = NameNormalizer()


@dataclass(frozen=True)
class GeoLocation:
    """Country, city and coordinates. Empty names become the unknown marker."""

    country: str
    city: str
    coord: GeoCoord

    def __post_init__(self) -> None:
        for name in ("country", "city"):
            value = getattr(self, name)
            cleaned = normalize_text(value or "")
            object.__setattr__(self, name, value.strip() if cleaned else UNKNOWN)

    def to_dict(self) -> dict:
        return {"country": self.country, "city": self.city, "coord": self.coord.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "GeoLocation":
        return cls(data.get("country") or "", data.get("city") or "", GeoCoord.from_dict(data["coord"]))


class EntitySet(frozenset):
    """Deduplicated set of normalized entity strings."""

    def __new__(cls, entities: Iterable[str] = ()):
        normed = (normalize_text(e) for e in entities)
        return super().__new__(cls, (e for e in normed if e))

    def to_list(self) -> list[str]:
        return sorted(self)


class GroundingProvider(Protocol):
    def query(self, entity: str, image_id: str) -> float: ...


class TableGroundingProvider:
    """Grounding confidences from a lookup table keyed by (image_id, entity).

    Pairs absent from the table score 0. The table is read-only after
    construction, so concurrent queries are safe.
    """

    def __init__(self, table: dict[tuple[str, str], float] | None = None):
        self._table: dict[tuple[str, str], float] = {}
        for (image_id, entity), conf in (table or {}).items():
            self.add(image_id, entity, conf)

    def add(self, image_id: str, entity: str, confidence: float) -> None:
        confidence = float(confidence)
        if not 0.0 <= confidence <= 1.0:
            raise ValueError(f"confidence {confidence} for ({image_id}, {entity}) outside [0, 1]")
        self._table[(str(image_id), normalize_text(entity))] = confidence

    def query(self, entity: str, image_id: str) -> float:
        return self._table.get((str(image_id), normalize_text(entity)), 0.0)

    def __len__(self) -> int:
        return len(self._table)

    def items(self):
        return sorted(self._table.items())

    @classmethod
    def from_file(cls, path: str | Path) -> "TableGroundingProvider":
        """Load a tab-separated (image_id, entity, confidence) or JSON-lines table."""
        provider = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    if line.startswith("{"):
                        row = json.loads(line)
                        provider.add(row["image_id"], row["entity"], row["confidence"])
                    else:
                        image_id, entity, conf = line.split("\t")
                        provider.add(image_id, entity, float(conf))
                except (ValueError, KeyError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad grounding row: {exc}") from exc
        return provider


_WORD = r"[A-Z][\w'’-]*(?:\.[A-Za-z][\w'’-]*)*"
_CAP_SPAN = re.compile(rf"\b{_WORD}(?:[ \t]+(?:(?:of|de|del|la|le|da|di|van|von)[ \t]+)?{_WORD})*")
_LEADING_STOPWORDS = frozenset(
    "the a an this that these those it its there here in on at by from we i my our "
    "phase step however based given".split()
)


class RuleEntityExtractor:
    """Deterministic entity extractor: capitalized spans plus gazetteer hits.

    Capitalized spans lose leading function words ("The Eiffel Tower" ->
    "eiffel tower"); single-token spans that are only a stopword are dropped.
    Gazetteer phrases are matched case-insensitively on word boundaries.
    """

    def __init__(self, gazetteer: Iterable[str] = ()):
        self.gazetteer = sorted({normalize_text(g) for g in gazetteer if normalize_text(g)})
        self._gaz_patterns = [re.compile(r"\b" + re.escape(g) + r"\b") for g in self.gazetteer]

    def __call__(self, text: str) -> EntitySet:
        found = []
        for match in _CAP_SPAN.finditer(text):
            words = match.group(0).split()
            while words and normalize_text(words[0]) in _LEADING_STOPWORDS:
                words.pop(0)
            if words:
                found.append(" ".join(words))
        lowered = normalize_text(text)
        for phrase, pattern in zip(self.gazetteer, self._gaz_patterns):
            if pattern.search(lowered):
                found.append(phrase)
        return EntitySet(found)


@dataclass(frozen=True)
class RewardParams:
    w1: float = 0.5
    w2: float = 0.5
    lambda1: float = 0.3
    lambda2: float = 0.7
    sigma: float = 100.0

    def __post_init__(self) -> None:
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("stage-1 weights must be non-negative")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("tier weights must be non-negative")
        if not math.isclose(self.lambda1 + self.lambda2, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"lambda1 + lambda2 must equal 1, got {self.lambda1 + self.lambda2}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class VisualReward:
    r_grounding: float
    r_alignment: float
    r_vis: float
    no_entities: bool = False


@dataclass
class RewardBreakdown:
    r_depth: int | None = None
    r_grounding: float | None = None
    r_alignment: float | None = None
    r_vis: float | None = None
    no_entities: bool = False
    distance_km: float | None = None
    r_coord: float | None = None
    r_geo: float | None = None
    r_stage1: float | None = None
    r_stage2: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "r_depth": self.r_depth,
            "r_grounding": self.r_grounding,
            "r_alignment": self.r_alignment,
            "r_vis": self.r_vis,
            "no_entities": self.no_entities,
            "distance_km": self.distance_km,
            "r_coord": self.r_coord,
            "r_geo": self.r_geo,
            "r_stage1": self.r_stage1,
            "r_stage2": self.r_stage2,
        }
        d.update(self.extra)
        return d


def depth_reward(predicted_label: int, true_label: int) -> int:
    if predicted_label not in (0, 1) or true_label not in (0, 1):
        raise ValueError(f"depth labels must be 0 or 1, got {predicted_label}, {true_label}")
    return int(predicted_label == true_label)


def jaccard(a: frozenset, b: frozenset) -> float:
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def visual_reward(
    predicted_entities: EntitySet,
    reference_entities: EntitySet,
    image_id: str,
    provider: GroundingProvider,
) -> VisualReward:
    """Mean grounding confidence of predicted entities times their Jaccard overlap with the reference.

    An empty prediction has no defined mean confidence; it scores zero and
    sets ``no_entities`` so it can be told apart from ungrounded entities.
    """
    alignment = jaccard(predicted_entities, reference_entities)
    if not predicted_entities:
        return VisualReward(0.0, alignment, 0.0, no_entities=True)
    confs = []
    for entity in sorted(predicted_entities):
        c = float(provider.query(entity, image_id))
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"provider returned confidence {c} for {entity!r}")
        confs.append(c)
    grounding = math.fsum(confs) / len(confs)
    return VisualReward(grounding, alignment, grounding * alignment)


def coord_reward(d: float, sigma: float) -> float:
    if d < 0:
        raise ValueError(f"negative distance {d}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return math.exp(-d / sigma)


def hierarchical_geo_reward(
    pred: GeoLocation,
    truth: GeoLocation,
    p: RewardParams,
    normalizer: NameNormalizer | None = None,
) -> float:
    return geo_reward_parts(pred, truth, p, normalizer)[2]


def geo_reward_parts(
    pred: GeoLocation,
    truth: GeoLocation,
    p: RewardParams,
    normalizer: NameNormalizer | None = None,
) -> tuple[float, float, float]:
    """Return ``(distance_km, r_coord, r_geo)`` for one prediction."""
    norm = normalizer or _DEFAULT_NORMALIZER
    d = haversine_km(pred.coord, truth.coord)
    r_coord = coord_reward(d, p.sigma)
    if not norm.same(pred.country, truth.country):
        return d, r_coord, 0.0
    if not norm.same(pred.city, truth.city):
        return d, r_coord, p.lambda1 * r_coord
    return d, r_coord, p.lambda1 + p.lambda2 * r_coord


def stage1_reward(b: RewardBreakdown, p: RewardParams) -> float:
    if b.r_depth is None or b.r_vis is None:
        raise ValueError("stage-1 reward needs r_depth and r_vis")
    return p.w1 * b.r_depth + p.w2 * b.r_vis


def stage2_reward(b: RewardBreakdown) -> float:
    if b.r_geo is None:
        raise ValueError("stage-2 reward needs r_geo")
    return b.r_geo


def full_breakdown(
    *,
    predicted_label: int,
    true_label: int,
    predicted_entities: EntitySet,
    reference_entities: EntitySet,
    image_id: str,
    provider: GroundingProvider,
    pred: GeoLocation,
    truth: GeoLocation,
    params: RewardParams,
    normalizer: NameNormalizer | None = None,
) -> RewardBreakdown:
    b = RewardBreakdown()
    b.r_depth = depth_reward(predicted_label, true_label)
    vis = visual_reward(predicted_entities, reference_entities, image_id, provider)
    b.r_grounding, b.r_alignment, b.r_vis, b.no_entities = (
        vis.r_grounding, vis.r_alignment, vis.r_vis, vis.no_entities,
    )
    b.distance_km, b.r_coord, b.r_geo = geo_reward_parts(pred, truth, params, normalizer)
    b.r_stage1 = stage1_reward(b, params)
    b.r_stage2 = stage2_reward(b)
    return b
