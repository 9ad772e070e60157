import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoadapt.locatability import (
    DistancePair,
    LocatabilityParams,
    Stratum,
    optimized_score,
    reason_score,
    score_record,
    stratum_label,
)

P = LocatabilityParams()
dist = st.floats(0, 20000)
unit = st.floats(0, 1)


def test_defaults():
    assert (P.gamma1, P.gamma2, P.alpha, P.tau_margin) == (0.01, 0.01, 0.6, 50.0)


def test_zero_error_is_perfect():
    r = reason_score(DistancePair(0, 0), P)
    assert (r.l_base, r.l_gap, r.l_reason) == (1.0, 1.0, 1.0)


def test_reasoning_beats_rag():
    r = reason_score(DistancePair(d_rag=500, d_reason=100), P)
    assert r.l_base == pytest.approx(0.367879, abs=1e-6)
    assert r.l_gap == 1.0
    assert r.l_reason == pytest.approx(0.367879, abs=1e-6)


def test_reasoning_trails_rag():
    r = reason_score(DistancePair(d_rag=0, d_reason=100), P)
    assert r.l_reason == pytest.approx(0.135335, abs=1e-6)
    assert r.l_reason == pytest.approx(math.exp(-2), abs=1e-15)


def test_optimized_score_examples():
    for alpha in (0.0, 0.3, 0.6, 1.0):
        assert optimized_score(0.8, 1.0, alpha) == pytest.approx(0.8, abs=1e-15)
    assert optimized_score(0.8, 0.123, 0.0) == 0.8
    assert optimized_score(0.8, 0.25, 0.6) == pytest.approx(0.44, abs=1e-12)


def test_optimized_score_rejects_out_of_range():
    with pytest.raises(ValueError):
        optimized_score(1.2, 0.5, 0.6)


@pytest.mark.parametrize(
    "d_reason, d_rag, expected",
    [(200, 100, Stratum.RAG_SUPERIOR), (150, 100, Stratum.STANDARD), (0, 0, Stratum.STANDARD)],
)
def test_stratum_label(d_reason, d_rag, expected):
    assert stratum_label(DistancePair(d_rag, d_reason), 50) is expected


def test_params_validation():
    with pytest.raises(ValueError):
        LocatabilityParams(gamma1=0)
    with pytest.raises(ValueError):
        LocatabilityParams(alpha=1.5)
    with pytest.raises(ValueError):
        DistancePair(-1, 0)


@given(dist, dist, dist)
def test_non_increasing_in_reason_error(d_rag, d1, d2):
    lo, hi = sorted((d1, d2))
    assert reason_score(DistancePair(d_rag, hi), P).l_reason <= reason_score(DistancePair(d_rag, lo), P).l_reason


@given(dist, dist, dist)
def test_gap_non_decreasing_in_rag_error(d_reason, r1, r2):
    lo, hi = sorted((r1, r2))
    assert reason_score(DistancePair(lo, d_reason), P).l_gap <= reason_score(DistancePair(hi, d_reason), P).l_gap


@given(dist, dist)
def test_no_penalty_regime(a, b):
    d_reason, d_rag = sorted((a, b))
    assert reason_score(DistancePair(d_rag, d_reason), P).l_gap == 1.0


@given(unit, unit, unit)
def test_optimized_bound(l_visual, l_reason, alpha):
    l_opt = optimized_score(l_visual, l_reason, alpha)
    assert 0.0 <= l_opt <= l_visual


@given(dist, dist, st.floats(1e-4, 1.0), st.floats(0, 500))
def test_label_implies_gap_penalty(d_rag, d_reason, gamma2, tau):
    p = LocatabilityParams(gamma2=gamma2, tau_margin=tau)
    d = DistancePair(d_rag, d_reason)
    if stratum_label(d, tau) is Stratum.RAG_SUPERIOR:
        gap, bound = reason_score(d, p).l_gap, math.exp(-gamma2 * tau)
        assert gap <= bound
        # strictness is only observable once the excess survives rounding
        if gamma2 * (d_reason - d_rag - tau) > 1e-9 and bound > 0:
            assert gap < bound


def test_score_record_fills_everything():
    res, stratum = score_record(0.8, DistancePair(0, 100), P)
    assert res.l_opt == pytest.approx(0.8 * (0.4 + 0.6 * math.exp(-2)))
    assert stratum is Stratum.RAG_SUPERIOR
