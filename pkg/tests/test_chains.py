import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volflow import catalog_field
from volflow.chains import (
    EpsTChain,
    TorusRecurrenceOracle,
    build_chain_via_recurrence,
    chain_transitivity_test,
    concatenate_chains,
    reverse_chain,
    verify_chain,
)
from volflow.dynamics import IntegratorConfig, integrate
from volflow.exceptions import (
    ChainVerificationError,
    DensityFailure,
    InvalidParameter,
    RequiresVerifiedInput,
)

from conftest import TORUS_FREQ, torus_dist

EPS, TMIN = 0.05, 1.0
TIGHT = IntegratorConfig(rtol=1e-12, atol=1e-14)
# frozen from an integer lattice search: smallest k > 1 with |k omega mod 1| < eps/8
FROZEN_RETURN_TIME = 4109.0


@pytest.fixture(scope="module")
def oracle():
    return TorusRecurrenceOracle(TORUS_FREQ, EPS / 8, TMIN, EPS / 8)


def test_oracle_return_time(oracle):
    assert oracle.return_time == FROZEN_RETURN_TIME
    d = FROZEN_RETURN_TIME * np.array(TORUS_FREQ)
    assert np.linalg.norm(d - np.round(d)) < EPS / 8
    node, t = oracle(np.array([0.33, 0.71, 0.02]))
    assert t == FROZEN_RETURN_TIME
    assert torus_dist(node, [0.33, 0.71, 0.02]) <= math.sqrt(3) * EPS / 16 + 1e-12


def test_chain_validation():
    with pytest.raises(InvalidParameter):
        EpsTChain(np.zeros((1, 3)), [], 0.1, 1.0)
    with pytest.raises(InvalidParameter):
        EpsTChain(np.zeros((2, 3)), [1.0, 2.0], 0.1, 1.0)
    with pytest.raises(InvalidParameter):
        EpsTChain(np.zeros((2, 3)), [1.0], 0.0, 1.0)


def test_exact_hop_verifies(torus):
    p = np.array([0.1, 0.2, 0.3])
    q = integrate(torus, p, 2.5).end
    ch = verify_chain(torus, EpsTChain(np.array([p, q]), [2.5], 1e-6, 1.0))
    assert ch.passed and ch.defect <= 1e-9


def test_short_hop_fails_time_constraint(torus):
    p = np.array([0.1, 0.2, 0.3])
    q = integrate(torus, p, 0.5).end
    ch = verify_chain(torus, EpsTChain(np.array([p, q]), [0.5], 0.1, 1.0))
    assert not ch.passed and ch.defect <= 1e-9


def test_verify_escape_reports_hop(saddle):
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    ch = EpsTChain(pts, [1.0, 10.0], 0.1, 1.0)
    with pytest.raises(ChainVerificationError) as exc:
        verify_chain(saddle, ch)
    assert exc.value.details["hop"] == 1


def test_degenerate_two_point_chain(torus, oracle):
    p = np.array([0.4, 0.1, 0.9])
    q = integrate(torus, p, 1.5 * TMIN).end
    ch = build_chain_via_recurrence(torus, p, q, EPS, TMIN, oracle)
    assert len(ch) == 2 and ch.passed


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_torus_chain(torus, oracle, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.random(3), rng.random(3)
    ch = build_chain_via_recurrence(torus, p, q, EPS, TMIN, oracle)
    assert ch.passed and ch.defect < EPS
    assert np.all(ch.hop_times >= TMIN)
    assert np.array_equal(ch.points[0], p) and np.array_equal(ch.points[-1], q)
    # independent re-verification at a tighter tolerance
    again = verify_chain(torus, ch, TIGHT)
    assert again.passed and abs(again.defect - ch.defect) <= 1e-6


def test_torus_chain_with_pair_list(torus):
    # explicit list: one recurrent grid node per eps/8 cell along the path
    rng = np.random.default_rng(11)
    p = rng.random(3)
    q = torus.chart.wrap(integrate(torus, p, 1.5).end + np.array([0.1, 0.0, 0.0]))
    oracle = TorusRecurrenceOracle(TORUS_FREQ, EPS / 8, TMIN, EPS / 8)
    y0 = torus.chart.wrap(integrate(torus, p, 1.5).end)
    path = y0 + np.linspace(0, 1, 41)[:, None] * np.array([0.1, 0.0, 0.0])
    pairs = [oracle(y) for y in path]
    ch = build_chain_via_recurrence(torus, p, q, EPS, TMIN, pairs)
    assert ch.passed and len(ch) <= 2 + len(pairs)


def test_saddle_pair_density_failure(saddle_pair):
    g = np.arange(0.0, 1.0, 0.05)
    pairs = [(np.array([0.0, 0.0, z]), 1.0) for z in g] + [(np.array([1.0, 0.0, z]), 1.0) for z in g]
    with pytest.raises(DensityFailure) as exc:
        build_chain_via_recurrence(saddle_pair, np.array([0.99, 0.0, 0.1]),
                                   np.array([0.01, 0.0, 0.1]), 0.01, 1.0, pairs)
    assert len(exc.value.gap) == 3


def test_reverse_requires_verified(torus):
    ch = EpsTChain(np.zeros((2, 3)), [1.0], 0.1, 1.0)
    with pytest.raises(RequiresVerifiedInput):
        reverse_chain(torus, ch)


def test_reverse_single_hop(torus):
    rev = torus.reversed()
    b = np.array([0.2, 0.5, 0.7])
    a = integrate(rev, b, 2.0).end
    ch = verify_chain(rev, EpsTChain(np.array([b, a]), [2.0], 1e-6, 1.0))
    fwd = reverse_chain(torus, ch)
    assert fwd.passed and fwd.defect <= 1e-9
    assert torus_dist(fwd.points[0], a) <= 1e-9


def test_reverse_three_hop(torus, oracle):
    rev = torus.reversed()
    rev_oracle = TorusRecurrenceOracle(-np.array(TORUS_FREQ), EPS / 8, TMIN, EPS / 8)
    rng = np.random.default_rng(5)
    b = rng.random(3)
    a = torus.chart.wrap(integrate(rev, b, 1.5).end + np.array([0.0, 0.05, 0.0]))
    ch = build_chain_via_recurrence(rev, b, a, EPS, TMIN, rev_oracle)
    assert ch.passed
    fwd = reverse_chain(torus, ch)
    assert fwd.passed and fwd.defect <= 2 * ch.defect + 1e-9
    assert np.array_equal(fwd.hop_times, ch.hop_times[::-1])
    assert torus_dist(fwd.points[0], a) < EPS
    twice = reverse_chain(rev, fwd)
    assert np.array_equal(twice.hop_times, ch.hop_times)
    assert torus_dist(twice.points[-1], fwd.points[0]) <= 1e-12


def test_concatenate(torus, oracle):
    p, r, q = np.array([0.1, 0.1, 0.1]), np.array([0.5, 0.5, 0.5]), np.array([0.8, 0.2, 0.6])
    a = build_chain_via_recurrence(torus, p, r, EPS, TMIN, oracle)
    b = build_chain_via_recurrence(torus, r, q, EPS, TMIN, oracle)
    c = concatenate_chains(a, b)
    assert c.passed and len(c) == len(a) + len(b) - 1
    assert verify_chain(torus, c).passed


def test_holds_at_monotone(torus):
    p = np.array([0.1, 0.2, 0.3])
    q = integrate(torus, p, 2.5).end
    ch = verify_chain(torus, EpsTChain(np.array([p, q]), [2.5], 1e-3, 2.0))
    assert ch.holds_at(1e-2, 1.0) and ch.holds_at(1e-3, 2.0)
    assert not ch.holds_at(1e-3, 3.0)


def test_transitivity_periodic_orbit():
    X = catalog_field("constant-vertical", 3, period=1.0)
    cloud = np.column_stack([np.zeros(50), np.zeros(50), np.arange(50) / 50])
    rep = chain_transitivity_test(X, cloud, 0.05, 1.0, 3.0)
    assert rep["strongly_connected"] and len(rep["components"]) == 1


def test_transitivity_torus_grid(torus):
    g = (np.arange(6) + 0.5) / 6
    cloud = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    rep = chain_transitivity_test(torus, cloud, 0.1, 1.0, 60.0)
    assert rep["strongly_connected"]


def test_transitivity_bad_input(torus):
    with pytest.raises(InvalidParameter):
        chain_transitivity_test(torus, np.zeros((0, 3)), 0.1, 1.0)


@settings(max_examples=8, deadline=None)
@given(st.lists(st.floats(0, 0.999), min_size=6, max_size=6))
def test_chain_property(coords):
    torus = catalog_field("linear-torus", frequencies=TORUS_FREQ)
    oracle = TorusRecurrenceOracle(TORUS_FREQ, EPS / 8, TMIN, EPS / 8)
    p, q = np.array(coords[:3]), np.array(coords[3:])
    ch = build_chain_via_recurrence(torus, p, q, EPS, TMIN, oracle)
    assert ch.passed and ch.holds_at(2 * EPS, TMIN / 2)
