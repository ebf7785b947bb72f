import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from volflow import IntegratorConfig, catalog_field, flow_jacobian, integrate, liouville_check
from volflow.dynamics import integrate_batch, orbit_to_csv
from volflow.exceptions import IntegrationEscape, InvalidParameter

A = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def test_linear_flow_matches_expm():
    f = catalog_field("affine", matrix=A)
    x0 = np.array([1.0, 0.5, 0.2])
    ref = expm(2.0 * A) @ x0
    assert integrate(f, x0, 2.0).end == pytest.approx(ref, abs=1e-9)


def test_rk4_fourth_order():
    f = catalog_field("affine", matrix=A)
    x0 = np.array([1.0, 0.0, 0.0])
    ref = expm(3.0 * A) @ x0
    errs = [np.linalg.norm(integrate(f, x0, 3.0, IntegratorConfig("rk4", step=h)).end - ref)
            for h in (0.1, 0.05)]
    assert 12.0 <= errs[0] / errs[1] <= 20.0


def test_negative_time_runs_backward(torus):
    x0 = np.array([0.1, 0.2, 0.3])
    orb = integrate(torus, x0, -1.5)
    assert orb.times[-1] == pytest.approx(-1.5)
    assert orb.end == pytest.approx(x0 - 1.5 * np.array(torus.params["frequencies"]), abs=1e-10)
    assert orb.at(-0.5) == pytest.approx(x0 - 0.5 * np.array(torus.params["frequencies"]), abs=1e-10)


def test_escape_raises_with_partial_orbit(saddle):
    with pytest.raises(IntegrationEscape) as info:
        integrate(saddle, np.array([0.1, 0.0, 0.0]), 10.0)
    orb = info.value.orbit
    assert orb.escaped
    assert orb.T == pytest.approx(math.log(20.0), abs=1e-6)


def test_escape_ignore_keeps_going(saddle):
    cfg = IntegratorConfig(escape="ignore")
    assert integrate(saddle, np.array([0.1, 0.0, 0.0]), 4.0, cfg).end[0] == pytest.approx(
        0.1 * math.exp(4.0), rel=1e-9)


def test_invalid_inputs(torus):
    with pytest.raises(InvalidParameter):
        integrate(torus, np.zeros(2), 1.0)
    with pytest.raises(InvalidParameter):
        integrate(torus, np.zeros(3), float("nan"))
    with pytest.raises(InvalidParameter):
        IntegratorConfig("euler")


def test_flow_jacobian_methods_agree():
    f = catalog_field("affine", matrix=[[1.0, 0, 0], [0, -1.0, 0], [0, 0, 0]])
    J = flow_jacobian(f, np.array([0.1, 0.2, 0.3]), 1.0)
    assert J == pytest.approx(np.diag([math.e, 1 / math.e, 1.0]), abs=1e-9)
    Jd = flow_jacobian(f, np.array([0.1, 0.2, 0.3]), 1.0, method="differences")
    assert np.max(np.abs(J - Jd)) < 1e-6


def test_liouville_div_one_field():
    f = catalog_field("affine", matrix=np.diag([1.0, 0.0, 0.0]))
    rep = liouville_check(f, np.array([0.1, 0.2, 0.3]), 0.5)
    assert rep["det_jacobian"] == pytest.approx(math.exp(0.5), abs=1e-4)
    assert rep["abs_difference"] < 1e-8


def test_batch_matches_single(torus):
    X0 = np.random.default_rng(0).random((5, 3))
    _, dense = integrate_batch(torus, X0, 2.0)
    for i, x in enumerate(X0):
        assert dense([2.0])[0, i] == pytest.approx(integrate(torus, x, 2.0).end, abs=1e-10)


def test_orbit_csv(tmp_path, catmap):
    orb = integrate(catmap, np.array([0.3, 0.4, 0.0]), 1.5)
    path = tmp_path / "o.csv"
    orbit_to_csv(orb, path, canonical=True)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x1", "x2", "x3"]
    assert len(rows) == len(orb) + 1
    vals = np.array(rows[1:], dtype=float)
    assert np.all((vals[:, 1:3] >= 0) & (vals[:, 1:3] < 1))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 1.5), st.floats(0.05, 1.5), st.floats(-0.4, 0.4), st.floats(-0.4, 0.4))
def test_flow_property(s, t, x, y):
    f = catalog_field("saddle-pair-demo")
    x0 = np.array([x, y * 0.5, 0.2])
    cfg = IntegratorConfig(rtol=1e-12, atol=1e-14, escape="ignore")
    a = integrate(f, integrate(f, x0, s, cfg).end, t, cfg).end
    b = integrate(f, x0, s + t, cfg).end
    assert np.linalg.norm(a - b) <= 1e-8 * max(1.0, np.linalg.norm(b))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 2.0), st.lists(st.floats(-0.3, 0.3), min_size=3, max_size=3))
def test_reversibility(T, x):
    f = catalog_field("saddle-pair-demo")
    x0 = np.array(x) + np.array([0.0, 0.0, 0.5])
    cfg = IntegratorConfig(rtol=1e-12, atol=1e-14, escape="ignore")
    fwd = integrate(f, x0, T, cfg).end
    assert integrate(f, fwd, -T, cfg).end == pytest.approx(x0, abs=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3), st.floats(0.1, 1.0))
def test_divergence_free_flows_preserve_volume(x, T):
    f = catalog_field("saddle-pair-demo")
    cfg = IntegratorConfig(rtol=1e-12, atol=1e-14, escape="ignore")
    J = flow_jacobian(f, np.array(x) * [1.0, 0.5, 1.0], T, cfg)
    assert abs(np.linalg.det(J) - 1.0) < 1e-7
