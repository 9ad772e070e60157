"""Distance-threshold and name accuracies for geo-localization predictions."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .geodesy import haversine_km, within_threshold
from .names import NameNormalizer
from .rewards import GeoLocation

THRESHOLDS_KM = (1.0, 25.0, 200.0, 750.0, 2500.0)
SCALE_NAMES = ("Street", "City", "Region", "Country", "Continent")
CSV_HEADER = (
    "n_records",
    "street_1km",
    "city_25km",
    "region_200km",
    "country_750km",
    "continent_2500km",
    "city_name_acc",
    "country_name_acc",
)
FORMATS = ("json", "csv", "table")


class EmptyEvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    predicted: GeoLocation
    truth: GeoLocation

    @classmethod
    def from_dict(cls, data: dict) -> "EvalRecord":
        return cls(str(data["image_id"]), GeoLocation.from_dict(data["predicted"]), GeoLocation.from_dict(data["truth"]))


@dataclass(frozen=True)
class MetricReport:
    threshold_acc: tuple[float, ...]
    city_name_acc: float
    country_name_acc: float
    n_records: int

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "threshold_acc": {f"{int(t)}km": a for t, a in zip(THRESHOLDS_KM, self.threshold_acc)},
            "city_name_acc": self.city_name_acc,
            "country_name_acc": self.country_name_acc,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        acc = tuple(float(data["threshold_acc"][f"{int(t)}km"]) for t in THRESHOLDS_KM)
        return cls(acc, float(data["city_name_acc"]), float(data["country_name_acc"]), int(data["n_records"]))


def _check(records: Sequence[EvalRecord]) -> None:
    if not records:
        raise EmptyEvaluationError("cannot evaluate an empty record set")
    ids = [r.image_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids in evaluation set")


def threshold_accuracies(records: Sequence[EvalRecord], thresholds: Sequence[float] = THRESHOLDS_KM) -> tuple[float, ...]:
    _check(records)
    dists = [haversine_km(r.predicted.coord, r.truth.coord) for r in records]
    return tuple(100.0 * sum(within_threshold(d, t) for d in dists) / len(dists) for t in thresholds)


def name_accuracies(records: Sequence[EvalRecord], normalizer: NameNormalizer | None = None) -> tuple[float, float]:
    """Return ``(city %, country %)``. Unknown predictions always miss."""
    _check(records)
    norm = normalizer or NameNormalizer()
    n = len(records)
    city = sum(norm.same(r.predicted.city, r.truth.city) for r in records)
    country = sum(norm.same(r.predicted.country, r.truth.country) for r in records)
    return 100.0 * city / n, 100.0 * country / n


def evaluate(records: Sequence[EvalRecord], normalizer: NameNormalizer | None = None) -> MetricReport:
    city, country = name_accuracies(records, normalizer)
    return MetricReport(threshold_accuracies(records), city, country, len(records))


def emit_report(report: MetricReport, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerow([report.n_records, *(repr(a) for a in report.threshold_acc),
                         repr(report.city_name_acc), repr(report.country_name_acc)])
        return buf.getvalue()
    if fmt == "table":
        return _table(report)
    raise ValueError(f"unknown report format {fmt!r}; choose from {', '.join(FORMATS)}")


def _table(report: MetricReport) -> str:
    heads = [f"{name} {int(t)}km" for name, t in zip(SCALE_NAMES, THRESHOLDS_KM)]
    heads += ["City Name Acc.", "Country Name Acc."]
    cells = [f"{a:.1f}" for a in report.threshold_acc]
    cells += [f"{report.city_name_acc:.1f}", f"{report.country_name_acc:.1f}"]
    widths = [max(len(h), len(c)) for h, c in zip(heads, cells)]
    line = " | ".join(h.rjust(w) for h, w in zip(heads, widths))
    sep = "-+-".join("-" * w for w in widths)
    row = " | ".join(c.rjust(w) for c, w in zip(cells, widths))
    return f"{line}\n{sep}\n{row}\n(n = {report.n_records})\n"


def load_records(lines: Iterable[str]) -> list[EvalRecord]:
    return [EvalRecord.from_dict(json.loads(ln)) for ln in lines if ln.strip()]
