"""Charts, bump functions, cylinder rings and the vector-field catalog.

Points are plain float arrays of shape ``(n,)`` (or ``(N, n)`` for batches),
expressed in the coordinates of a :class:`BoxChart`.  Fields are evaluated in
*lifted* coordinates: integration never wraps, and :meth:`BoxChart.wrap` maps a
lifted point to its canonical representative when needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
from scipy import integrate

from .exceptions import InvalidArgument, InvalidField, InvalidParameter

__all__ = [
    "BoxChart",
    "BumpPair",
    "CylinderRingSpec",
    "Patch",
    "VectorFieldSpec",
    "bump_lambda",
    "bump_gamma",
    "in_cylinder_ring",
    "evaluate",
    "jacobian",
    "divergence",
    "catalog_field",
    "field_to_dict",
    "patch_to_dict",
    "field_from_dict",
    "CATALOG",
]

CATALOG = (
    "constant-vertical",
    "linear-torus",
    "catmap-suspension",
    "rotation-suspension",
    "translation-suspension",
    "saddle-demo",
    "saddle-pair-demo",
    "affine",
    "custom",
)

CAT_MATRIX = np.array([[2.0, 1.0], [1.0, 1.0]])


def _reduce(v, lo, L):
    """``lo + (v - lo) mod L`` landing in ``[lo, lo + L)`` despite rounding."""
    out = lo + np.mod(v - lo, L)
    return np.where(out >= lo + L, lo, out)


def _as_points(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


# ---------------------------------------------------------------------------
# charts


@dataclass(frozen=True, eq=False)
class BoxChart:
    """Axis-aligned box, optionally periodic per axis.

    ``gluing`` is an affine map ``(G, b)`` on the first ``n - 1`` coordinates
    applied whenever the last (periodic) axis wraps upward; this realizes
    suspension manifolds such as the mapping torus of the cat map.
    """

    lo: np.ndarray
    hi: np.ndarray
    periodic: np.ndarray
    gluing: Optional[tuple] = None
    chart_id: str = "box"

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        per = np.broadcast_to(np.asarray(self.periodic, dtype=bool), lo.shape).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidParameter("chart bounds must be matching 1-d arrays")
        if np.any(lo >= hi):
            raise InvalidParameter("chart needs lo < hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "periodic", per)
        if self.gluing is not None:
            G, b = self.gluing
            G = np.asarray(G, dtype=float)
            b = np.zeros(lo.size - 1) if b is None else np.asarray(b, dtype=float)
            if G.shape != (lo.size - 1, lo.size - 1) or not per[-1]:
                raise InvalidParameter("gluing needs an (n-1)x(n-1) matrix and a periodic last axis")
            object.__setattr__(self, "gluing", (G, b))

    @classmethod
    def cube(cls, n, lo=-2.0, hi=2.0, periodic=False, **kw):
        return cls(np.full(n, lo), np.full(n, hi), np.full(n, periodic), **kw)

    @property
    def dim(self):
        return self.lo.size

    @property
    def lengths(self):
        return self.hi - self.lo

    def _glue_power(self, k):
        G, _ = self.gluing
        if k >= 0:
            return np.linalg.matrix_power(G, k)
        return np.linalg.matrix_power(np.linalg.inv(G), -k)

    def _apply_glue(self, xh, k):
        # k upward wraps: x -> G x + b (inverse for k < 0), reducing periodic axes each time
        G, b = self.gluing
        per = self.periodic[:-1]
        lo, L = self.lo[:-1][per], self.lengths[:-1][per]
        M = G if k > 0 else np.linalg.inv(G)
        for _ in range(abs(k)):
            xh = xh @ M.T + b if k > 0 else (xh - b) @ M.T
            if per.any():
                xh[:, per] = _reduce(xh[:, per], lo, L)
        return xh

    def wrap_count(self, x):
        """Number of upward wraps of the last axis (0 without gluing)."""
        X, single = _as_points(x)
        if self.gluing is None:
            k = np.zeros(len(X), dtype=int)
        else:
            k = np.floor((X[:, -1] - self.lo[-1]) / self.lengths[-1]).astype(int)
        return int(k[0]) if single else k

    def wrap(self, x):
        """Canonical representative of a lifted point (periodic axes reduced)."""
        X, single = _as_points(x)
        X = X.copy()
        if self.gluing is not None:
            k = np.floor((X[:, -1] - self.lo[-1]) / self.lengths[-1]).astype(int)
            for kk in np.unique(k):
                if kk == 0:
                    continue
                sel = k == kk
                X[sel, :-1] = self._apply_glue(X[sel, :-1], int(kk))
                X[sel, -1] -= kk * self.lengths[-1]
        per = self.periodic
        if per.any():
            X[:, per] = _reduce(X[:, per], self.lo[per], self.lengths[per])
        return X[0] if single else X

    def frame(self, k):
        """Matrix taking canonical tangent vectors to the lifted frame after ``k`` wraps."""
        T = np.eye(self.dim)
        if self.gluing is not None and k != 0:
            T[:-1, :-1] = self._glue_power(-int(k))
        return T

    def displacement(self, x, y):
        """``y - x`` with the minimal representative on periodic axes."""
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        per = self.periodic
        if per.any():
            L = self.lengths
            d = np.array(d, copy=True)
            d[..., per] = d[..., per] - L[per] * np.round(d[..., per] / L[per])
        return d

    def distance(self, x, y):
        return np.linalg.norm(self.displacement(self.wrap(x), self.wrap(y)), axis=-1)

    def contains(self, x):
        """True where every non-periodic coordinate lies in the closed box."""
        X, single = _as_points(x)
        free = ~self.periodic
        ok = np.all((X[:, free] >= self.lo[free]) & (X[:, free] <= self.hi[free]), axis=1)
        ok &= np.all(np.isfinite(X), axis=1)
        return bool(ok[0]) if single else ok


# ---------------------------------------------------------------------------
# bumps


@dataclass(frozen=True)
class BumpPair:
    """Height profile ``lambda`` on ``(0, h)`` and radial profile ``gamma`` on ``(delta-xi, delta+xi)``."""

    h: float
    delta: float
    xi: float
    log_c: float = dc_field(init=False)

    def __post_init__(self):
        if not self.h > 0:
            raise InvalidParameter(f"h must be positive, got {self.h}")
        if not (0 < self.xi < self.delta):
            raise InvalidParameter(f"need 0 < xi < delta, got xi={self.xi}, delta={self.delta}")
        object.__setattr__(self, "log_c", _lambda_log_normalizer(float(self.h)))

    def lam(self, s):
        return bump_lambda(s, self.h, self.log_c)

    def dlam(self, s):
        s = np.asarray(s, dtype=float)
        h = self.h
        inside = (s > 0) & (s < h)
        ss = np.where(inside, s, 0.5 * h)
        q = ss * (h - ss)
        out = np.exp(self.log_c - 1.0 / q) * (h - 2 * ss) / q**2
        return np.where(inside, out, 0.0)

    def gam(self, r):
        return bump_gamma(r, self.delta, self.xi)

    def dgam(self, r):
        r = np.asarray(r, dtype=float)
        u = (r - self.delta) / self.xi
        inside = np.abs(u) < 1
        uu = np.where(inside, u, 0.0)
        w = 1.0 - uu * uu
        out = math.e * np.exp(-1.0 / w) * (-2.0 * uu / w**2) / self.xi
        return np.where(inside, out, 0.0)

    def lam_integral(self, a, b):
        """``int_a^b lambda(s) ds`` (signed)."""
        lo, hi = max(min(a, b), 0.0), min(max(a, b), self.h)
        if hi <= lo:
            return 0.0
        if lo == 0.0 and hi == self.h:
            val = 1.0
        else:
            val, _ = integrate.quad(self.lam, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)
        return val if b >= a else -val


_NORMALIZERS: dict = {}


def _lambda_log_normalizer(h):
    """``log c`` with ``c * int_0^h exp(-1/(s(h-s))) ds = 1``, computed relative
    to the peak value ``exp(-4/h^2)`` so that small ``h`` does not underflow."""
    if h not in _NORMALIZERS:
        peak = 4.0 / (h * h)
        raw, _ = integrate.quad(
            lambda s: math.exp(peak - 1.0 / (s * (h - s))) if 0 < s < h else 0.0,
            0.0, h, epsabs=1e-14, epsrel=1e-12, limit=200,
        )
        _NORMALIZERS[h] = peak - math.log(raw)
    return _NORMALIZERS[h]


def bump_lambda(s, h, log_c=None):
    """Normalized smooth bump on ``(0, h)``: ``c * exp(-1 / (s (h - s)))``."""
    if not h > 0:
        raise InvalidParameter(f"h must be positive, got {h}")
    log_c = _lambda_log_normalizer(float(h)) if log_c is None else log_c
    s_arr = np.asarray(s, dtype=float)
    inside = (s_arr > 0) & (s_arr < h)
    ss = np.where(inside, s_arr, 0.5 * h)
    out = np.where(inside, np.exp(log_c - 1.0 / (ss * (h - ss))), 0.0)
    return float(out) if out.ndim == 0 else out


def bump_gamma(r, delta, xi):
    """Radial bump equal to 1 at ``delta``, supported in ``(delta - xi, delta + xi)``."""
    if not (0 < xi < delta):
        raise InvalidParameter(f"need 0 < xi < delta, got xi={xi}, delta={delta}")
    r_arr = np.asarray(r, dtype=float)
    u = (r_arr - delta) / xi
    inside = np.abs(u) < 1
    uu = np.where(inside, u, 0.0)
    out = np.where(inside, math.e * np.exp(-1.0 / (1.0 - uu * uu)), 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# cylinder rings and patches


@dataclass(frozen=True, eq=False)
class CylinderRingSpec:
    """Ring of radius ``delta`` and half-width ``xi`` around a cylinder of height ``h``.

    ``center`` is the center of the bottom face, ``axis`` the flow direction and
    ``cross_plane`` a 2 x n orthonormal basis (u, v) of the rotation plane.
    The radial distance is measured in the full complement of ``axis``.
    """

    delta: float
    h: float
    xi: float
    center: np.ndarray
    axis: np.ndarray
    cross_plane: np.ndarray

    def __post_init__(self):
        if not (0 < self.xi < self.delta):
            raise InvalidParameter(f"need 0 < xi < delta, got xi={self.xi}, delta={self.delta}")
        if not self.h > 0:
            raise InvalidParameter(f"h must be positive, got {self.h}")
        c = np.asarray(self.center, dtype=float)
        a = np.asarray(self.axis, dtype=float)
        P = np.asarray(self.cross_plane, dtype=float)
        if c.ndim != 1 or c.size < 3 or a.shape != c.shape or P.shape != (2, c.size):
            raise InvalidParameter("ring geometry has inconsistent dimensions")
        if abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise InvalidParameter("axis must have unit length")
        B = np.vstack([P, a])
        if np.max(np.abs(B @ B.T - np.eye(3))) > 1e-12:
            raise InvalidParameter("cross_plane must be orthonormal and orthogonal to axis")
        for name, val in (("center", c), ("axis", a), ("cross_plane", P)):
            object.__setattr__(self, name, val)

    @classmethod
    def canonical(cls, n, delta, h, xi):
        """Ring at the origin with the flow along the last axis, rotating in the
        last two non-flow coordinates."""
        eye = np.eye(n)
        return cls(delta, h, xi, np.zeros(n), eye[n - 1], eye[[n - 3, n - 2]])

    @property
    def dim(self):
        return self.center.size

    def local(self, x):
        """Return ``(height, a, b, rho, w)`` of points relative to the ring."""
        w = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        s = w @ self.axis
        perp = w - s[:, None] * self.axis
        rho = np.linalg.norm(perp, axis=1)
        ab = w @ self.cross_plane.T
        return s, ab[:, 0], ab[:, 1], rho, w

    def bounding_box(self):
        r = self.delta + self.xi
        corners = []
        for e in (self.center, self.center + self.h * self.axis):
            corners.append(e - r)
            corners.append(e + r)
        corners = np.array(corners)
        return corners.min(axis=0), corners.max(axis=0)


def in_cylinder_ring(p, ring: CylinderRingSpec):
    """True iff the radial distance is in ``(delta - xi, delta + xi)`` and height in ``[0, h]``."""
    P, single = _as_points(p)
    if P.shape[1] != ring.dim:
        raise InvalidArgument(f"point dimension {P.shape[1]} != ring dimension {ring.dim}")
    s, _, _, rho, _ = ring.local(P)
    out = (rho > ring.delta - ring.xi) & (rho < ring.delta + ring.xi) & (s >= 0) & (s <= ring.h)
    return bool(out[0]) if single else out


@dataclass(frozen=True, eq=False)
class Patch:
    """Divergence-free rotational deviation ``theta * lambda * gamma * (-b u + a v)``.

    The rotation rate constant equals ``theta`` so that the flow through the
    ring turns the bottom point ``center + delta u`` by exactly ``theta``.
    """

    ring: CylinderRingSpec
    theta: float
    bumps: BumpPair = dc_field(init=False)

    def __post_init__(self):
        if not (-math.pi < self.theta <= math.pi):
            raise InvalidParameter(f"theta must lie in (-pi, pi], got {self.theta}")
        object.__setattr__(self, "bumps", BumpPair(self.ring.h, self.ring.delta, self.ring.xi))

    def support_mask(self, X):
        return in_cylinder_ring(X, self.ring)

    def deviation(self, X):
        X = np.atleast_2d(X)
        out = np.zeros_like(X)
        mask = self.support_mask(X)
        if not mask.any():
            return out
        r = self.ring
        s, a, b, rho, _ = r.local(X[mask])
        amp = self.theta * self.bumps.lam(s) * self.bumps.gam(rho)
        out[mask] = amp[:, None] * (-b[:, None] * r.cross_plane[0] + a[:, None] * r.cross_plane[1])
        return out

    def deviation_jacobian(self, X):
        X = np.atleast_2d(X)
        n = X.shape[1]
        out = np.zeros((len(X), n, n))
        mask = self.support_mask(X)
        if not mask.any():
            return out
        r = self.ring
        u, v, e = r.cross_plane[0], r.cross_plane[1], r.axis
        s, a, b, rho, w = r.local(X[mask])
        lam, dlam = self.bumps.lam(s), self.bumps.dlam(s)
        gam, dgam = self.bumps.gam(rho), self.bumps.dgam(rho)
        perp = w - s[:, None] * e
        rho_safe = np.where(rho > 0, rho, 1.0)
        grad_amp = self.theta * (
            (gam * dlam)[:, None] * e + (lam * dgam / rho_safe)[:, None] * perp
        )
        direction = -b[:, None] * u + a[:, None] * v
        J = direction[:, :, None] * grad_amp[:, None, :]
        amp = self.theta * lam * gam
        J += amp[:, None, None] * (np.outer(v, u) - np.outer(u, v))[None]
        out[mask] = J
        return out


# ---------------------------------------------------------------------------
# vector fields


@dataclass(frozen=True, eq=False)
class VectorFieldSpec:
    """A catalog vector field plus additive patches, on a chart.

    ``sign = -1`` gives the reversed field ``-X`` (its flow is the time reversal).
    """

    dim: int
    kind: str
    params: dict
    chart: BoxChart
    patches: tuple = ()
    sign: float = 1.0
    conservative: bool = True

    def __post_init__(self):
        if self.kind not in CATALOG:
            raise InvalidField(f"unknown catalog id {self.kind!r}")
        if self.dim < 3:
            raise InvalidParameter("dimension must be at least 3")
        if self.chart.dim != self.dim:
            raise InvalidParameter("chart dimension does not match field dimension")
        object.__setattr__(self, "patches", tuple(self.patches))
        for p in self.patches:
            if p.ring.dim != self.dim:
                raise InvalidParameter("patch dimension does not match field dimension")
            lo, hi = p.ring.bounding_box()
            free = ~self.chart.periodic
            if np.any(lo[free] < self.chart.lo[free]) or np.any(hi[free] > self.chart.hi[free]):
                raise InvalidParameter("patch support leaves the chart")

    def with_patches(self, patches):
        return VectorFieldSpec(self.dim, self.kind, self.params, self.chart,
                               tuple(patches), self.sign, self.conservative)

    def reversed(self):
        return VectorFieldSpec(self.dim, self.kind, self.params, self.chart,
                               self.patches, -self.sign, self.conservative)

    def base(self):
        """Same field without its patches."""
        return self.with_patches(())

    def __call__(self, x):
        return evaluate(self, x)


_VERTICAL_KINDS = ("constant-vertical", "catmap-suspension", "rotation-suspension",
                   "translation-suspension")
_CONSTANT_KINDS = _VERTICAL_KINDS + ("linear-torus",)


def _catalog_eval(field: VectorFieldSpec, X):
    kind, prm, n = field.kind, field.params, field.dim
    if kind in _VERTICAL_KINDS:
        out = np.zeros_like(X)
        out[:, -1] = 1.0
        return out
    if kind == "linear-torus":
        return np.broadcast_to(np.asarray(prm["frequencies"], dtype=float), X.shape).copy()
    if kind == "saddle-demo":
        return X * np.array([1.0, 1.0, -2.0])
    if kind == "saddle-pair-demo":
        x, y = X[:, 0], X[:, 1]
        return np.column_stack([np.sin(np.pi * x), -np.pi * np.cos(np.pi * x) * y, np.ones_like(x)])
    if kind == "affine":
        A = np.asarray(prm["matrix"], dtype=float)
        b = np.asarray(prm.get("offset", np.zeros(n)), dtype=float)
        return X @ A.T + b
    if kind == "custom":
        return np.asarray(prm["function"](X), dtype=float).reshape(X.shape)
    raise InvalidField(f"unknown catalog id {kind!r}")


def _catalog_jac(field: VectorFieldSpec, X):
    kind, prm, n = field.kind, field.params, field.dim
    J = np.zeros((len(X), n, n))
    if kind == "saddle-demo":
        J[:] = np.diag([1.0, 1.0, -2.0])
    elif kind == "saddle-pair-demo":
        x, y = X[:, 0], X[:, 1]
        J[:, 0, 0] = np.pi * np.cos(np.pi * x)
        J[:, 1, 0] = np.pi**2 * np.sin(np.pi * x) * y
        J[:, 1, 1] = -np.pi * np.cos(np.pi * x)
    elif kind == "affine":
        J[:] = np.asarray(prm["matrix"], dtype=float)
    elif kind == "custom":
        jac = prm.get("jacobian")
        if jac is None:
            return _fd_jacobian(lambda Y: _catalog_eval(field, Y), X)
        J[:] = np.asarray(jac(X), dtype=float).reshape(J.shape)
    return J


def _fd_jacobian(f, X, step=1e-6):
    n = X.shape[1]
    J = np.empty((len(X), n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        J[:, :, j] = (f(X + e) - f(X - e)) / (2 * step)
    return J


def _to_lifted(field, X, V, k_all):
    if field.chart.gluing is None:
        return V
    # purely vertical vectors are unchanged by the gluing frame
    moving = np.any(V[:, :-1] != 0.0, axis=1)
    for kk in np.unique(k_all[moving]):
        if kk != 0:
            sel = moving & (k_all == kk)
            V[sel] = V[sel] @ field.chart.frame(kk).T
    return V


def evaluate(field: VectorFieldSpec, x):
    """Field value at lifted point(s): catalog value plus every patch deviation."""
    X, single = _as_points(x)
    if X.shape[1] != field.dim:
        raise InvalidArgument(f"point dimension {X.shape[1]} != field dimension {field.dim}")
    if not field.patches and field.kind in _CONSTANT_KINDS:
        # position-independent and vertical or gluing-free: no wrapping needed
        V = _catalog_eval(field, X)
    else:
        C = field.chart.wrap(X)
        V = _catalog_eval(field, C)
        for p in field.patches:
            V = V + p.deviation(C)
        if field.chart.gluing is not None:
            V = _to_lifted(field, X, V, field.chart.wrap_count(X))
    if field.sign != 1.0:
        V = field.sign * V
    return V[0] if single else V


def jacobian(field: VectorFieldSpec, x):
    """Analytic Jacobian matrix (central differences for callables without one)."""
    X, single = _as_points(x)
    C = field.chart.wrap(X)
    J = _catalog_jac(field, C)
    for p in field.patches:
        J = J + p.deviation_jacobian(C)
    if field.chart.gluing is not None:
        k_all = field.chart.wrap_count(X)
        active = np.any(J != 0.0, axis=(1, 2))
        for kk in np.unique(k_all[active]):
            if kk != 0:
                T = field.chart.frame(kk)
                sel = active & (k_all == kk)
                J[sel] = T @ J[sel] @ np.linalg.inv(T)
    J = field.sign * J
    return J[0] if single else J


def divergence(field: VectorFieldSpec, x):
    J = jacobian(field, x)
    return np.trace(J, axis1=-2, axis2=-1)


def max_speed(field: VectorFieldSpec, points):
    return float(np.max(np.linalg.norm(evaluate(field, np.atleast_2d(points)), axis=1)))


# ---------------------------------------------------------------------------
# catalog


def _chart_override(params, default: BoxChart):
    if "intervals" not in params:
        return default
    iv = np.asarray(params["intervals"], dtype=float)
    per = params.get("periodic", False)
    return BoxChart(iv[:, 0], iv[:, 1], per, gluing=default.gluing, chart_id=default.chart_id)


def catalog_field(kind, dim=3, **params) -> VectorFieldSpec:
    """Build a catalog field.  ``intervals``/``periodic`` override the default chart."""
    if kind not in CATALOG:
        raise InvalidField(f"unknown catalog id {kind!r}")
    conservative = True
    if kind == "constant-vertical":
        per = np.zeros(dim, dtype=bool)
        lo, hi = np.full(dim, -2.0), np.full(dim, 2.0)
        if params.get("period"):
            per[-1] = True
            lo[-1], hi[-1] = 0.0, float(params["period"])
        chart = BoxChart(lo, hi, per, chart_id="box")
    elif kind == "linear-torus":
        freq = np.asarray(params["frequencies"], dtype=float)
        dim = freq.size
        params["frequencies"] = freq.tolist()
        chart = BoxChart.cube(dim, 0.0, 1.0, True, chart_id="torus")
    elif kind == "catmap-suspension":
        dim = 3
        chart = BoxChart(np.array([0.0, 0.0, -0.5]), np.array([1.0, 1.0, 0.5]), True,
                         gluing=(CAT_MATRIX, None), chart_id="catmap-suspension")
    elif kind == "rotation-suspension":
        dim = 3
        ang = float(params.setdefault("angle", 0.3 * 2 * math.pi))
        R = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
        chart = BoxChart(np.array([-2.0, -2.0, -0.5]), np.array([2.0, 2.0, 0.5]),
                         np.array([False, False, True]), gluing=(R, None),
                         chart_id="rotation-suspension")
    elif kind == "translation-suspension":
        L = float(params.setdefault("period", 4.0))
        shift = np.asarray(params["shift"], dtype=float)
        dim = shift.size + 1
        params["shift"] = shift.tolist()
        chart = BoxChart.cube(dim, -L / 2, L / 2, True, gluing=(np.eye(dim - 1), shift),
                              chart_id="translation-suspension")
    elif kind == "saddle-demo":
        dim = 3
        chart = BoxChart.cube(3, -2.0, 2.0, False, chart_id="box")
    elif kind == "saddle-pair-demo":
        dim = 3
        chart = BoxChart(np.array([-1.5, -1.0, 0.0]), np.array([1.5, 1.0, 1.0]),
                         np.array([False, False, True]), chart_id="saddle-pair")
    elif kind == "affine":
        A = np.asarray(params["matrix"], dtype=float)
        dim = A.shape[0]
        params["matrix"] = A.tolist()
        conservative = abs(np.trace(A)) < 1e-14
        chart = BoxChart.cube(dim, -1e6, 1e6, False, chart_id="box")
    else:  # custom
        conservative = bool(params.get("conservative", False))
        chart = BoxChart.cube(dim, -1e6, 1e6, False, chart_id="box")
    chart = _chart_override(params, chart)
    return VectorFieldSpec(dim, kind, params, chart, (), 1.0, conservative)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def patch_to_dict(p: Patch) -> dict:
    return {
        "delta": p.ring.delta,
        "h": p.ring.h,
        "xi": p.ring.xi,
        "center": p.ring.center.tolist(),
        "axis": p.ring.axis.tolist(),
        "theta": p.theta,
        "rotation": p.ring.cross_plane.tolist(),
    }


def field_to_dict(field: VectorFieldSpec) -> dict:
    if field.kind == "custom":
        raise InvalidField("custom fields hold callables and cannot be serialized")
    patches = [patch_to_dict(p) for p in field.patches]
    out = {"dim": field.dim, "kind": field.kind, "params": _jsonable(dict(field.params)),
           "patches": patches}
    if field.sign != 1.0:
        out["reversed"] = True
    return out


def field_from_dict(d: dict) -> VectorFieldSpec:
    try:
        kind = d["kind"]
        dim = int(d.get("dim", 3))
        params = dict(d.get("params", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidField(f"malformed field description: {exc}") from exc
    base = catalog_field(kind, dim, **params)
    patches = []
    for p in d.get("patches", []):
        ring = CylinderRingSpec(float(p["delta"]), float(p["h"]), float(p["xi"]),
                                np.asarray(p["center"], float), np.asarray(p["axis"], float),
                                np.asarray(p["rotation"], float))
        patches.append(Patch(ring, float(p["theta"])))
    field = base.with_patches(patches)
    return field.reversed() if d.get("reversed") else field
