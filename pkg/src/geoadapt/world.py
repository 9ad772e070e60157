"""Desk-scale synthetic geo-world used to exercise the GRPO curriculum.

Each image belongs to one geo-cell (a city). Its feature vector carries a noisy
one-hot of the cell, a depth cue whose sign is the true stratum, and a bias
term. Actions are ``(depth bit, cell)`` pairs flattened as ``depth * K + cell``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .geodesy import GeoCoord
from .locatability import Stratum
from .names import NameNormalizer
from .rewards import (
    EntitySet,
    GeoLocation,
    RewardParams,
    TableGroundingProvider,
    depth_reward,
    hierarchical_geo_reward,
    visual_reward,
)

BUNDLED_WORLD_SEED = 2024

# (country, centre lat, centre lon, [city names])
_COUNTRIES = [
    ("Avaloria", 48.0, 10.0, ["Brenhold", "Castamir"]),
    ("Borduria", -15.0, -50.0, ["Dunmere", "Eskavale"]),
    ("Carpania", 35.0, 105.0, ["Fenwick", "Galdor"]),
    ("Drovania", -25.0, 135.0, ["Harrowgate", "Istvana"]),
]
_CITY_OFFSETS = [(0.8, -0.8), (-0.8, 0.8)]


@dataclass(frozen=True)
class Cell:
    index: int
    location: GeoLocation
    entities: EntitySet
    implicit_cues: EntitySet


@dataclass(frozen=True)
class SyntheticImage:
    image_id: str
    features: np.ndarray
    truth: GeoLocation
    cell: int
    stratum: Stratum
    reference_entities: EntitySet
    split: str


class SyntheticGeoWorld:
    def __init__(self, cells: list[Cell], images: list[SyntheticImage], grounding: TableGroundingProvider):
        self.cells = cells
        self.images = images
        self.grounding = grounding
        self.normalizer = NameNormalizer()
        for img in images:
            if not np.all(np.isfinite(img.features)):
                raise ValueError(f"non-finite features for {img.image_id}")
            if not 0 <= img.cell < len(cells):
                raise ValueError(f"{img.image_id} refers to unknown cell {img.cell}")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_actions(self) -> int:
        return 2 * len(self.cells)

    @property
    def feature_dim(self) -> int:
        return int(self.images[0].features.shape[0])

    def split(self, name: str) -> list[int]:
        return [i for i, img in enumerate(self.images) if img.split == name]

    def decode_action(self, action: int) -> tuple[int, int]:
        depth, cell = divmod(int(action), self.n_cells)
        return depth, cell

    def predicted_entities(self, depth: int, cell: int) -> EntitySet:
        c = self.cells[cell]
        return EntitySet(c.entities | c.implicit_cues) if depth else c.entities

    def stage1_reward(self, img: SyntheticImage, action: int, params: RewardParams) -> float:
        depth, cell = self.decode_action(action)
        r_depth = depth_reward(depth, img.stratum.label)
        vis = visual_reward(self.predicted_entities(depth, cell), img.reference_entities, img.image_id, self.grounding)
        return params.w1 * r_depth + params.w2 * vis.r_vis

    def stage2_reward(self, img: SyntheticImage, action: int, params: RewardParams) -> float:
        _, cell = self.decode_action(action)
        return hierarchical_geo_reward(self.cells[cell].location, img.truth, params, self.normalizer)

    def to_dict(self) -> dict:
        return {
            "cells": [
                {
                    "index": c.index,
                    "location": c.location.to_dict(),
                    "entities": c.entities.to_list(),
                    "implicit_cues": c.implicit_cues.to_list(),
                }
                for c in self.cells
            ],
            "images": [
                {
                    "image_id": img.image_id,
                    "features": [float(v) for v in img.features],
                    "truth": img.truth.to_dict(),
                    "cell": img.cell,
                    "stratum": img.stratum.value,
                    "reference_entities": img.reference_entities.to_list(),
                    "split": img.split,
                }
                for img in self.images
            ],
            "grounding": [
                {"image_id": image_id, "entity": entity, "confidence": conf}
                for (image_id, entity), conf in self.grounding.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticGeoWorld":
        cells = [
            Cell(
                index=c["index"],
                location=GeoLocation.from_dict(c["location"]),
                entities=EntitySet(c["entities"]),
                implicit_cues=EntitySet(c["implicit_cues"]),
            )
            for c in data["cells"]
        ]
        images = [
            SyntheticImage(
                image_id=m["image_id"],
                features=np.asarray(m["features"], dtype=float),
                truth=GeoLocation.from_dict(m["truth"]),
                cell=int(m["cell"]),
                stratum=Stratum(m["stratum"]),
                reference_entities=EntitySet(m["reference_entities"]),
                split=m["split"],
            )
            for m in data["images"]
        ]
        grounding = TableGroundingProvider()
        for row in data["grounding"]:
            grounding.add(row["image_id"], row["entity"], row["confidence"])
        return cls(cells, images, grounding)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticGeoWorld":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def bundled(cls) -> "SyntheticGeoWorld":
        text = resources.files("geoadapt").joinpath("data/synthetic_world.json").read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


def build_world(
    n_images: int = 200,
    seed: int = BUNDLED_WORLD_SEED,
    rag_superior_fraction: float = 0.4,
    feature_noise: float = 0.2,
    heldout_every: int = 5,
) -> SyntheticGeoWorld:
    """Generate a world whose depth labels are linearly separable in feature space.

    Every ``heldout_every``-th image goes to the held-out split.
    """
    rng = np.random.default_rng(seed)
    cells = []
    for country, lat0, lon0, cities in _COUNTRIES:
        cues = EntitySet([f"{country} roof style", f"{country} roadside vegetation"])
        for city, (dlat, dlon) in zip(cities, _CITY_OFFSETS):
            loc = GeoLocation(country, city, GeoCoord(lat0 + dlat, lon0 + dlon))
            cells.append(Cell(len(cells), loc, EntitySet([city, f"{city} clock tower"]), cues))
    k = len(cells)

    grounding = TableGroundingProvider()
    images = []
    for i in range(n_images):
        image_id = f"syn-{i:04d}"
        cell_idx = int(rng.integers(k))
        cell = cells[cell_idx]
        rag_superior = bool(rng.random() < rag_superior_fraction)
        stratum = Stratum.RAG_SUPERIOR if rag_superior else Stratum.STANDARD

        jitter = rng.uniform(-0.05, 0.05, size=2)
        coord = GeoCoord(cell.location.coord.lat + jitter[0], cell.location.coord.lon + jitter[1])
        truth = GeoLocation(cell.location.country, cell.location.city, coord)

        onehot = np.zeros(k)
        onehot[cell_idx] = 1.0
        onehot += rng.normal(0.0, feature_noise, size=k)
        depth_cue = (1.0 if rag_superior else -1.0) * rng.uniform(0.5, 1.5)
        features = np.concatenate([onehot, [depth_cue, 1.0]])

        reference = EntitySet(cell.entities | cell.implicit_cues) if rag_superior else cell.entities
        # RAG-superior scenes are harder: explicit cues ground less confidently
        lo, hi = (0.35, 0.6) if rag_superior else (0.6, 0.95)
        for entity in cell.entities.to_list():
            grounding.add(image_id, entity, round(float(rng.uniform(lo, hi)), 4))
        for entity in cell.implicit_cues.to_list():
            grounding.add(image_id, entity, round(float(rng.uniform(0.05, 0.25)), 4))

        split = "heldout" if i % heldout_every == 0 else "train"
        images.append(SyntheticImage(image_id, features, truth, cell_idx, stratum, reference, split))
    return SyntheticGeoWorld(cells, images, grounding)
