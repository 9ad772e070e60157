"""Reasoning and optimized locatability scores, and the RAG-superior label."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class Stratum(str, enum.Enum):
    STANDARD = "Standard"
    RAG_SUPERIOR = "RagSuperior"

    @property
    def label(self) -> int:
        """Binary depth label: 1 for RAG-superior, 0 for standard."""
        return 1 if self is Stratum.RAG_SUPERIOR else 0


@dataclass(frozen=True)
class DistancePair:
    d_rag: float
    d_reason: float

    def __post_init__(self) -> None:
        for name in ("d_rag", "d_reason"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a finite non-negative distance, got {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class LocatabilityParams:
    gamma1: float = 0.01
    gamma2: float = 0.01
    alpha: float = 0.6
    tau_margin: float = 50.0

    def __post_init__(self) -> None:
        if not (self.gamma1 > 0 and self.gamma2 > 0):
            raise ValueError("gamma1 and gamma2 must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tau_margin < 0:
            raise ValueError(f"tau_margin must be non-negative, got {self.tau_margin}")


@dataclass(frozen=True)
class LocatabilityResult:
    l_base: float
    l_gap: float
    l_reason: float
    l_opt: float | None = None


def reason_score(d: DistancePair, p: LocatabilityParams) -> LocatabilityResult:
    """Reasoning locatability: absolute accuracy term times RAG-gap penalty.

    The gap term only penalizes the case where reasoning is worse than
    retrieval; when ``d_reason <= d_rag`` it is exactly 1.
    """
    l_base = math.exp(-p.gamma1 * d.d_reason)
    l_gap = math.exp(-p.gamma2 * max(0.0, d.d_reason - d.d_rag))
    return LocatabilityResult(l_base=l_base, l_gap=l_gap, l_reason=l_base * l_gap)


def optimized_score(l_visual: float, l_reason: float, alpha: float) -> float:
    for name, v in (("l_visual", l_visual), ("l_reason", l_reason), ("alpha", alpha)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    # same as l_visual * ((1 - alpha) + alpha * l_reason), arranged so the
    # factor never rounds above 1 and l_opt <= l_visual holds in floating point
    return l_visual * (1.0 - alpha * (1.0 - l_reason))


def stratum_label(d: DistancePair, tau_margin: float) -> Stratum:
    """RAG-superior iff reasoning trails retrieval by strictly more than the margin."""
    if d.d_reason > d.d_rag + tau_margin:
        return Stratum.RAG_SUPERIOR
    return Stratum.STANDARD


def score_record(l_visual: float, d: DistancePair, p: LocatabilityParams) -> tuple[LocatabilityResult, Stratum]:
    res = reason_score(d, p)
    l_opt = optimized_score(l_visual, res.l_reason, p.alpha)
    return (
        LocatabilityResult(res.l_base, res.l_gap, res.l_reason, l_opt),
        stratum_label(d, p.tau_margin),
    )
