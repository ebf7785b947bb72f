import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volflow import catalog_field
from volflow.core import BoxChart
from volflow.exceptions import InvalidDensity, InvalidInput
from volflow.flowbox import (
    DensityField,
    build_flowbox,
    build_graph_translation,
    build_xi,
    check_density_invariance,
    gauss_legendre_fibers,
    verify_flowbox,
)


def vertical(n=3):
    return catalog_field("constant-vertical", n)


def test_invariance_examples():
    assert check_density_invariance(DensityField(3, "constant"))
    assert check_density_invariance(DensityField(3, "sincos"))
    assert not check_density_invariance(DensityField(3, "exp-last"))


def test_invariance_rejects_nonpositive():
    psi = DensityField(3, "constant", {"value": -1.0})
    with pytest.raises(InvalidDensity):
        check_density_invariance(psi)


def test_unknown_density_kind():
    with pytest.raises(InvalidDensity):
        DensityField(3, "nope")


def test_xi_identity_and_scaling():
    rng = np.random.default_rng(1)
    Z = rng.uniform(-1, 1, (50, 4))
    assert np.allclose(build_xi(DensityField(4))(Z), Z, atol=1e-12)
    out = build_xi(DensityField(4, "constant", {"value": 2.0}))(Z)
    expect = Z.copy()
    expect[:, 2] *= 2
    assert np.allclose(out, expect, atol=1e-12)


def test_xi_quadratic_closed_form():
    # hand antiderivative: (1 + z1^2) * z_{n-1}
    rng = np.random.default_rng(2)
    Z = rng.uniform(-1, 1, (100, 3))
    out = build_xi(DensityField(3, "quadratic"))(Z)
    assert np.max(np.abs(out[:, 1] - (1 + Z[:, 0] ** 2) * Z[:, 1])) <= 1e-10


def test_xi_sincos_closed_form():
    # int_0^x (1 + a sin z1 cos t) dt = x + a sin z1 sin x
    rng = np.random.default_rng(3)
    Z = rng.uniform(-1, 1, (100, 3))
    out = build_xi(DensityField(3, "sincos"))(Z)
    ref = Z[:, 1] + 0.25 * np.sin(Z[:, 0]) * np.sin(Z[:, 1])
    assert np.max(np.abs(out[:, 1] - ref)) <= 1e-10


def test_xi_fixes_other_coordinates_bitwise():
    rng = np.random.default_rng(4)
    Z = rng.uniform(-1, 1, (40, 5))
    out = build_xi(DensityField(5, "sincos"))(Z)
    keep = [0, 1, 2, 4]
    assert np.array_equal(out[:, keep], Z[:, keep])


def test_xi_rejects_exp_last():
    with pytest.raises(InvalidDensity):
        build_xi(DensityField(3, "exp-last"))


def test_gauss_legendre_oscillatory():
    f = lambda zp: np.cos(5 * zp[:, -1])
    upper = np.array([0.9, -0.7])
    got = gauss_legendre_fibers(f, np.zeros((2, 1)), upper, 1e-12)
    assert np.allclose(got, np.sin(5 * upper) / 5, atol=1e-11)


def test_graph_translation_examples():
    rng = np.random.default_rng(5)
    Y = rng.uniform(-1, 1, (100, 3))
    assert np.array_equal(build_graph_translation(lambda yp: 0.0)(Y), Y)
    out = build_graph_translation(lambda yp: 0.3)(Y)
    assert np.allclose(out[:, -1], Y[:, -1] - 0.3, atol=1e-15)
    g = lambda yp: np.sin(yp[:, 0]) + yp[:, 1] ** 2
    Yp = Y[:, :2]
    graph = np.column_stack([Yp, g(Yp)])
    assert np.max(np.abs(build_graph_translation(g)(graph)[:, -1])) == 0.0


def test_graph_translation_inverse():
    g = lambda yp: np.cos(3 * yp[:, 0]) * yp[:, 1]
    G = build_graph_translation(g)
    Y = np.random.default_rng(6).uniform(-1, 1, (200, 3))
    assert np.max(np.abs(G.inverse()(G(Y)) - Y)) <= 1e-14


def test_pushforward_and_det():
    psi = DensityField(3, "sincos")
    chart = build_flowbox(psi)
    Z = np.random.default_rng(7).uniform(-1, 1, (200, 3))
    eps = 1e-4
    e = np.array([0, 0, eps])
    assert np.max(np.abs(chart.xi(Z + e) - chart.xi(Z) - e)) <= 1e-9
    # finite-difference Jacobian determinant against f(z')
    h = 1e-5
    J = np.empty((200, 3, 3))
    for j in range(3):
        d = np.zeros(3)
        d[j] = h
        J[:, :, j] = (chart.xi(Z + d) - chart.xi(Z - d)) / (2 * h)
    f = 1 + 0.25 * np.sin(Z[:, 0]) * np.cos(Z[:, 1])
    assert np.max(np.abs(np.linalg.det(J) - f)) <= 1e-8


def test_det_at_origin_positive():
    chart = build_flowbox(DensityField(3, "quadratic"))
    assert chart.xi.jacobian_det(np.zeros(3)) == pytest.approx(1.0)


def test_verify_identity_chart():
    rep = verify_flowbox(build_flowbox(DensityField(3)), vertical(), DensityField(3), boxes=5,
                         mc_samples=5000)
    assert rep["pass"]
    assert rep["pushforward_defect"] <= 1e-9
    assert rep["volume_rel_error"] <= 1e-12
    assert rep["section_defect"] == 0.0


def test_verify_sincos():
    psi = DensityField(3, "sincos")
    rep = verify_flowbox(build_flowbox(psi), vertical(), psi, boxes=10, mc_samples=20_000)
    assert rep["pass"]
    assert rep["pushforward_defect"] <= 1e-6
    assert rep["volume_rel_error"] <= 1e-3


def test_volume_oracle_closed_form():
    # exact integral of the sincos density over a box against the xi image volume
    psi = DensityField(3, "sincos")
    xi = build_xi(psi)
    lo, hi = np.array([-0.3, -0.8, 0.1]), np.array([0.5, 0.4, 0.6])
    exact = (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]) + 0.25 * (
        math.cos(lo[0]) - math.cos(hi[0])) * (math.sin(hi[1]) - math.sin(lo[1])) * (hi[2] - lo[2])
    # image of the box is a region between two graphs in coordinate n-1
    x = np.linspace(lo[0], hi[0], 2001)
    top = xi(np.column_stack([x, np.full_like(x, hi[1]), np.zeros_like(x)]))[:, 1]
    bot = xi(np.column_stack([x, np.full_like(x, lo[1]), np.zeros_like(x)]))[:, 1]
    w = np.full_like(x, x[1] - x[0])
    w[[0, -1]] /= 2
    image = float(np.sum(w * (top - bot))) * (hi[2] - lo[2])
    assert image == pytest.approx(exact, rel=1e-6)


def test_verify_section_graph():
    psi = DensityField(3)
    chart = build_flowbox(psi, g=lambda yp: 0.1 * np.sin(yp[:, 0]))
    rep = verify_flowbox(chart, vertical(), psi, boxes=3, mc_samples=2000)
    assert rep["section_defect"] <= 1e-15


def test_verify_rejects_non_vertical(torus):
    psi = DensityField(3)
    with pytest.raises(InvalidInput):
        verify_flowbox(build_flowbox(psi), torus, psi, boxes=1, mc_samples=100)


def test_density_roundtrip():
    psi = DensityField(4, "sincos", {"amplitude": 0.1})
    back = DensityField.from_dict(psi.to_dict())
    z = np.array([0.2, -0.4, 0.1, 0.3])
    assert back(z) == psi(z)
    with pytest.raises(InvalidDensity):
        DensityField(3, "custom", {"function": lambda Z: np.ones(len(Z))}).to_dict()


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(0.01, 0.5))
def test_xi_additivity(z1, a, b, amp):
    # integral over [0, a] plus [a, b] equals integral over [0, b]
    psi = DensityField(3, "sincos", {"amplitude": amp})
    xi = build_xi(psi, chart=BoxChart.cube(3, -1.0, 1.0))
    ia = xi(np.array([z1, a, 0.0]))[1]
    ib = xi(np.array([z1, b, 0.0]))[1]
    direct = (b - a) + amp * math.sin(z1) * (math.sin(b) - math.sin(a))
    assert ib - ia == pytest.approx(direct, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(-2, 2))
def test_xi_commutes_with_vertical_shift(z, s):
    xi = build_xi(DensityField(3, "sincos"))
    z = np.array(z)
    e = np.array([0, 0, s])
    assert np.allclose(xi(z + e), xi(z) + e, atol=1e-14)
