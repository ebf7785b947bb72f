"""Volume-normalizing flow box for a straightened vertical field.

Given the pulled-back volume density ``psi`` of a chart in which the field is
``(0, ..., 0, 1)``, the map ``xi`` integrates ``psi`` along coordinate ``n-1``
so that the volume becomes Lebesgue, and a graph shear flattens a section.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .core import BoxChart, VectorFieldSpec, evaluate
from .exceptions import InvalidDensity, InvalidInput, InvalidParameter

__all__ = [
    "DensityField",
    "XiMap",
    "GraphTranslation",
    "FlowBoxChart",
    "check_density_invariance",
    "build_xi",
    "build_graph_translation",
    "build_flowbox",
    "verify_flowbox",
    "gauss_legendre_fibers",
]

DENSITY_KINDS = ("constant", "sincos", "exp-last", "quadratic", "custom")


@dataclass(frozen=True, eq=False)
class DensityField:
    """Positive density on a chart, given by a catalog rule."""

    dim: int
    kind: str = "constant"
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DENSITY_KINDS:
            raise InvalidDensity(f"unknown density rule {self.kind!r}")
        if self.dim < 3:
            raise InvalidParameter("dimension must be at least 3")

    def __call__(self, z):
        Z = np.asarray(z, dtype=float)
        single = Z.ndim == 1
        Z = np.atleast_2d(Z)
        k, p = self.kind, self.params
        if k == "constant":
            out = np.full(len(Z), float(p.get("value", 1.0)))
        elif k == "sincos":
            out = 1.0 + float(p.get("amplitude", 0.25)) * np.sin(Z[:, 0]) * np.cos(Z[:, 1])
        elif k == "exp-last":
            out = np.exp(Z[:, -1])
        elif k == "quadratic":
            out = 1.0 + Z[:, 0] ** 2
        else:
            out = np.asarray(p["function"](Z), dtype=float).reshape(len(Z))
        return float(out[0]) if single else out

    def to_dict(self):
        if self.kind == "custom":
            raise InvalidDensity("custom densities cannot be serialized")
        return {"dim": self.dim, "kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["dim"]), d["kind"], dict(d.get("params", {})))


def _sample_box(rng, chart: BoxChart, m):
    return chart.lo + (chart.hi - chart.lo) * rng.random((m, chart.dim))


def check_density_invariance(psi: DensityField, tol: float = 1e-8, samples: int = 200,
                             chart: Optional[BoxChart] = None, seed: int = 0) -> bool:
    """True iff ``|d psi / d z_n| <= tol`` (central difference, step 1e-5) at every sample."""
    chart = chart or BoxChart.cube(psi.dim, -1.0, 1.0)
    rng = np.random.default_rng(seed)
    Z = _sample_box(rng, chart, samples)
    vals = psi(Z)
    if np.any(~(vals > 0)):
        raise InvalidDensity("density must be positive at every sample")
    e = np.zeros(psi.dim)
    e[-1] = 1e-5
    d = (psi(Z + e) - psi(Z - e)) / 2e-5
    return bool(np.max(np.abs(d)) <= tol)


_GL_CACHE: dict = {}


def _gl(m):
    if m not in _GL_CACHE:
        _GL_CACHE[m] = np.polynomial.legendre.leggauss(m)
    return _GL_CACHE[m]


def gauss_legendre_fibers(f: Callable, prefix: np.ndarray, upper: np.ndarray,
                          tol: float = 1e-10, nodes: int = 10, max_panels: int = 1024):
    """``int_0^{upper_i} f(prefix_i, t) dt`` for a batch, by composite Gauss-Legendre.

    Panels double until two successive estimates agree to ``tol``; node
    placement depends only on ``upper`` so results are reproducible.
    """
    prefix = np.atleast_2d(prefix)
    upper = np.asarray(upper, dtype=float)
    x, w = _gl(nodes)

    def composite(panels):
        width = upper / panels
        j = np.arange(panels)[:, None]
        # nodes laid out as (panel, node) per point
        t = width[:, None, None] * (j[None, :, :] + 0.5 * (x[None, None, :] + 1.0))
        m, k = len(upper), panels * len(x)
        pts = np.concatenate([np.repeat(prefix, k, axis=0), t.reshape(m * k, 1)], axis=1)
        vals = f(pts).reshape(m, panels, len(x))
        return 0.5 * width * np.einsum("mpk,k->m", vals, w)

    panels = 1
    prev = composite(panels)
    while panels < max_panels:
        panels *= 2
        cur = composite(panels)
        if np.max(np.abs(cur - prev)) <= tol:
            return cur
        prev = cur
    return prev


class XiMap:
    """``xi(z) = (z_1..z_{n-2}, int_0^{z_{n-1}} f(z_1..z_{n-2}, t) dt, z_n)`` with ``f = psi|_{z_n=0}``."""

    def __init__(self, psi: DensityField, tol: float = 1e-10):
        self.psi = psi
        self.tol = tol
        self.dim = psi.dim

    def f(self, zp):
        """``psi`` on the slice ``z_n = 0`` (argument holds the first ``n-1`` coordinates)."""
        zp = np.atleast_2d(zp)
        return self.psi(np.column_stack([zp, np.zeros(len(zp))]))

    def __call__(self, z):
        Z = np.asarray(z, dtype=float)
        single = Z.ndim == 1
        Z = np.atleast_2d(Z)
        out = Z.copy()
        out[:, -2] = gauss_legendre_fibers(self.f, Z[:, :-2], Z[:, -2], self.tol)
        return out[0] if single else out

    def jacobian_det(self, z):
        Z = np.atleast_2d(np.asarray(z, dtype=float))
        d = self.f(Z[:, :-1])
        return float(d[0]) if np.ndim(z) == 1 else d


class GraphTranslation:
    """Shear ``(y', y_n) -> (y', y_n - g(y'))`` flattening the graph of ``g``."""

    def __init__(self, g: Callable, sign: float = 1.0):
        self.g = g
        self.sign = sign

    def _g(self, yp):
        val = self.g(yp)
        return np.broadcast_to(np.asarray(val, dtype=float), (len(yp),))

    def __call__(self, y):
        Y = np.asarray(y, dtype=float)
        single = Y.ndim == 1
        Y = np.atleast_2d(Y).copy()
        Y[:, -1] = Y[:, -1] - self.sign * self._g(Y[:, :-1])
        return Y[0] if single else Y

    def inverse(self):
        return GraphTranslation(self.g, -self.sign)


@dataclass(eq=False)
class FlowBoxChart:
    xi: XiMap
    translation: GraphTranslation
    domain: BoxChart

    def __call__(self, z):
        return self.translation(self.xi(z))


def build_xi(psi: DensityField, tol: float = 1e-10, invariance_tol: float = 1e-8,
             chart: Optional[BoxChart] = None) -> XiMap:
    if not check_density_invariance(psi, invariance_tol, chart=chart):
        raise InvalidDensity("density depends on the flow coordinate z_n")
    return XiMap(psi, tol)


def build_graph_translation(g: Callable) -> GraphTranslation:
    return GraphTranslation(g)


def build_flowbox(psi: DensityField, g: Optional[Callable] = None,
                  domain: Optional[BoxChart] = None) -> FlowBoxChart:
    domain = domain or BoxChart.cube(psi.dim, -1.0, 1.0)
    xi = build_xi(psi, chart=domain)
    det0 = xi.jacobian_det(np.zeros(psi.dim))
    if not det0 > 0:
        raise InvalidDensity("det of the xi Jacobian at the origin must be positive")
    return FlowBoxChart(xi, build_graph_translation(g if g is not None else (lambda yp: 0.0)), domain)


def _fd_det(fmap, Z, step=1e-5):
    n = Z.shape[1]
    J = np.empty((len(Z), n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        J[:, :, j] = (fmap(Z + e) - fmap(Z - e)) / (2 * step)
    return np.linalg.det(J)


def verify_flowbox(chart: FlowBoxChart, field: VectorFieldSpec, psi: DensityField,
                   samples: int = 200, tol: float = 1e-6, seed: int = 0,
                   boxes: int = 50, mc_samples: int = 50_000, volume_tol: float = 1e-3) -> dict:
    """Check the three flow-box properties on random samples.

    (i) the composed map carries the vertical field to itself; (ii) the
    integral of ``psi`` over random sub-boxes equals the volume of their image
    (paired Monte Carlo); (iii) the section graph lands in ``{x_n = 0}``.
    """
    n = psi.dim
    dom = chart.domain
    rng = np.random.default_rng(seed)
    Z = _sample_box(rng, dom, samples)
    vertical = np.zeros(n)
    vertical[-1] = 1.0
    if field.dim != n or np.max(np.abs(evaluate(field, Z) - vertical)) != 0.0:
        raise InvalidInput("field must be the straightened vertical field on the chart")
    if not check_density_invariance(psi, 1e-8, samples, dom, seed):
        raise InvalidDensity("density depends on the flow coordinate z_n")

    eps = 1e-4
    push = np.max(np.linalg.norm(chart(Z + eps * vertical) - chart(Z) - eps * vertical, axis=1)) / eps

    dets = _fd_det(chart.xi, Z)
    det_defect = float(np.max(np.abs(dets - chart.xi.jacobian_det(Z))))
    det_min = float(np.min(dets))

    worst = 0.0
    for _ in range(boxes):
        width = 0.1 + 0.4 * rng.random(n)
        lo = dom.lo + (dom.hi - dom.lo - width) * rng.random(n)
        hi = lo + width
        box_seed = int(rng.integers(2**32))
        U = np.random.default_rng(box_seed).random((mc_samples, n))
        P = lo + width * U
        lhs = np.prod(width) * float(np.mean(psi(P)))
        top = P.copy()
        top[:, -2] = hi[-2]
        bot = P.copy()
        bot[:, -2] = lo[-2]
        fiber = chart.xi(top)[:, -2] - chart.xi(bot)[:, -2]
        rhs = np.prod(np.delete(width, n - 2)) * float(np.mean(fiber))
        worst = max(worst, abs(lhs - rhs) / abs(rhs))

    Yp = dom.lo[:-1] + (dom.hi[:-1] - dom.lo[:-1]) * rng.random((samples, n - 1))
    gvals = chart.translation._g(Yp)
    section = chart.translation(np.column_stack([Yp, gvals]))
    section_defect = float(np.max(np.abs(section[:, -1])))

    return {
        "pushforward_defect": float(push),
        "volume_rel_error": float(worst),
        "section_defect": section_defect,
        "det_min": det_min,
        "det_defect": det_defect,
        "pass": bool(push <= tol and worst <= volume_tol and section_defect <= tol and det_min > 0),
    }
