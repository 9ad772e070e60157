"""Spherical-earth coordinates and great-circle distances."""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_KM = 6371.0


def _normalize_lon(lon: float) -> float:
    # map into [-180, 180); +180 and -180 name the same meridian
    wrapped = math.fmod(lon + 180.0, 360.0)
    if wrapped < 0:
        wrapped += 360.0
    return wrapped - 180.0


@dataclass(frozen=True)
class GeoCoord:
    """A point on the sphere in decimal degrees.

    Latitude must lie in [-90, 90]. Longitude is wrapped into [-180, 180)
    on construction, so ``GeoCoord(0, 180) == GeoCoord(0, -180)``.
    """

    lat: float
    lon: float

    def __post_init__(self) -> None:
        lat = float(self.lat)
        lon = float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", _normalize_lon(lon))

    def to_dict(self) -> dict:
        return {"lat": self.lat, "lon": self.lon}

    @classmethod
    def from_dict(cls, data: dict) -> "GeoCoord":
        return cls(float(data["lat"]), float(data["lon"]))


def haversine_km(a: GeoCoord, b: GeoCoord) -> float:
    """Great-circle distance between two coordinates in kilometers."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    # rounding can push h marginally past 1 for antipodes
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def within_threshold(d: float, t: float) -> bool:
    """Inclusive distance test: ``d <= t``."""
    if d < 0:
        raise ValueError(f"negative distance {d}")
    if t <= 0:
        raise ValueError(f"threshold must be positive, got {t}")
    return d <= t
