"""Divergence-free cylinder-ring perturbations of the vertical field.

The perturbation rotates the two coordinates of a distinguished plane while
the flow climbs the cylinder, so the orbit through ``p`` on the bottom circle
is carried to ``q`` on the top circle.  In dimension above three the radial
bump depends on the whole non-flow radius, which keeps the remaining
coordinates invariant.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    CylinderRingSpec,
    Patch,
    VectorFieldSpec,
    catalog_field,
    evaluate,
)
from .dynamics import IntegratorConfig, integrate
from .exceptions import InvalidEndpoints, InvalidParameter, UnsupportedOrder

__all__ = [
    "PerturbationSpec",
    "DeviationEndpoints",
    "SampleGrid",
    "build_perturbation",
    "closed_form_flow",
    "verify_deviation",
    "cr_norm_estimate",
    "cr_norm_profile",
    "align_endpoints",
    "fd_divergence",
]


@dataclass(frozen=True, eq=False)
class PerturbationSpec:
    """Ring geometry plus the turning angle.  The rotation rate constant is ``theta``."""

    ring: CylinderRingSpec
    theta: float
    rotation: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (-math.pi < self.theta <= math.pi):
            raise InvalidParameter(f"theta must lie in (-pi, pi], got {self.theta}")
        if self.rotation is not None:
            R = np.asarray(self.rotation, dtype=float)
            if np.max(np.abs(R @ R.T - np.eye(R.shape[0]))) > 1e-12:
                raise InvalidParameter("rotation is not orthogonal")
            object.__setattr__(self, "rotation", R)

    @classmethod
    def canonical(cls, n, delta, h, xi, theta):
        return cls(CylinderRingSpec.canonical(n, delta, h, xi), theta)

    @property
    def ambient_dim(self):
        return self.ring.dim

    @property
    def k(self):
        return self.theta

    def endpoints(self):
        """Bottom point ``p`` and its target ``q`` on the top circle."""
        r = self.ring
        u, v = r.cross_plane
        p = r.center + r.delta * u
        q = r.center + r.h * r.axis + r.delta * (math.cos(self.theta) * u + math.sin(self.theta) * v)
        return DeviationEndpoints(p, q, self.theta, r)


@dataclass(frozen=True, eq=False)
class DeviationEndpoints:
    p: np.ndarray
    q: np.ndarray
    theta: float
    ring: CylinderRingSpec

    def __post_init__(self):
        r = self.ring
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        sp, ap, bp, rp, _ = r.local(p)
        sq, aq, bq, rq, _ = r.local(q)
        if abs(rp[0] - r.delta) > 1e-12 or abs(rq[0] - r.delta) > 1e-12:
            raise InvalidEndpoints("endpoints must lie on the ring's circles")
        if abs(sp[0]) > 1e-12 or abs(sq[0] - r.h) > 1e-12:
            raise InvalidEndpoints("p must be on the bottom face and q on the top face")
        ang = math.atan2(ap[0] * bq[0] - bp[0] * aq[0], ap[0] * aq[0] + bp[0] * bq[0])
        if abs(_wrap_angle(ang - self.theta)) > 1e-12:
            raise InvalidEndpoints(f"stored angle {self.theta} disagrees with geometry {ang}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)


def _wrap_angle(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def build_perturbation(spec: PerturbationSpec, base: Optional[VectorFieldSpec] = None) -> VectorFieldSpec:
    """Vertical field (or ``base``) with the ring perturbation added.

    A zero angle returns the unpatched field.
    """
    n = spec.ambient_dim
    if base is None:
        base = catalog_field("constant-vertical", n)
    if base.dim != n:
        raise InvalidParameter("base field dimension does not match the perturbation")
    if spec.theta == 0:
        return base
    return base.with_patches(base.patches + (Patch(spec.ring, spec.theta),))


def closed_form_flow(spec: PerturbationSpec, x0, t: float):
    """Exact time-``t`` flow of the perturbed vertical field (any batch of points)."""
    X = np.atleast_2d(np.asarray(x0, dtype=float))
    r = spec.ring
    u, v = r.cross_plane
    patch = Patch(r, spec.theta) if spec.theta != 0 else None
    out = X + t * r.axis
    if patch is None:
        return out[0] if np.ndim(x0) == 1 else out
    s, a, b, rho, _ = r.local(X)
    g = patch.bumps.gam(rho)
    for i in range(len(X)):
        r2 = math.hypot(a[i], b[i])
        if r2 == 0.0 or g[i] == 0.0:
            continue
        turn = spec.theta * g[i] * patch.bumps.lam_integral(s[i], s[i] + t)
        if turn == 0.0:
            continue
        phi = math.atan2(b[i], a[i]) + turn
        out[i] += (r2 * math.cos(phi) - a[i]) * u + (r2 * math.sin(phi) - b[i]) * v
    return out[0] if np.ndim(x0) == 1 else out


def verify_deviation(spec: PerturbationSpec, endpoints: Optional[DeviationEndpoints] = None,
                     tol: float = 1e-6, cfg: Optional[IntegratorConfig] = None) -> dict:
    """Check that ``p`` reaches ``q`` after time ``h``, both in closed form and numerically."""
    if endpoints is None:
        endpoints = spec.endpoints()
    cfg = cfg or IntegratorConfig(rtol=1e-12, atol=1e-14)
    field = build_perturbation(spec)
    h = spec.ring.h
    cf = closed_form_flow(spec, endpoints.p, h)
    orbit = integrate(field, endpoints.p, h, cfg)
    report = {
        "closed_form_distance": float(np.linalg.norm(cf - endpoints.q)),
        "numeric_distance": float(np.linalg.norm(orbit.end - endpoints.q)),
    }
    n = spec.ambient_dim
    if n > 3:
        # coordinates outside the rotation plane and the axis must not move
        r = spec.ring
        B = np.vstack([r.cross_plane, r.axis])
        comp = np.eye(n) - B.T @ B
        drift = (orbit.states - endpoints.p) @ comp.T
        report["invariant_plane_defect"] = float(np.max(np.abs(drift)))
    report["pass"] = bool(report["closed_form_distance"] <= 1e-12
                          and report["numeric_distance"] <= tol
                          and report.get("invariant_plane_defect", 0.0) <= max(tol, 1e-9))
    return report


@dataclass(frozen=True)
class SampleGrid:
    """Deterministic sample grid.

    Without ``rings`` it is a tensor grid with ``resolution`` points per axis
    on the box ``[lo, hi]``.  With ``rings`` it is a cylindrical grid on each
    closed ring (radius, height and angle, ``resolution`` values each) in its
    rotation plane, which resolves the narrow support far better.
    """

    lo: tuple
    hi: tuple
    resolution: int = 40
    rings: tuple = ()

    def points(self):
        if self.rings:
            return np.vstack([_ring_grid(r, self.resolution) for r in self.rings])
        axes = [np.linspace(a, b, self.resolution) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @classmethod
    def around(cls, fields, resolution=40, pad=0.0, box=False):
        lo, hi, rings = None, None, []
        for f in fields:
            for p in f.patches:
                a, b = p.ring.bounding_box()
                lo = a if lo is None else np.minimum(lo, a)
                hi = b if hi is None else np.maximum(hi, b)
                rings.append(p.ring)
        if lo is None:
            n = fields[0].dim
            lo, hi = -np.ones(n), np.ones(n)
        return cls(tuple(lo - pad), tuple(hi + pad), resolution, () if box else tuple(rings))


def _ring_grid(ring, m):
    rho = np.linspace(ring.delta - ring.xi, ring.delta + ring.xi, m)
    s = np.linspace(0.0, ring.h, m)
    ang = 2 * np.pi * np.arange(m) / m
    R, S, A = np.meshgrid(rho, s, ang, indexing="ij")
    u, v = ring.cross_plane
    return (ring.center + S.reshape(-1, 1) * ring.axis
            + (R * np.cos(A)).reshape(-1, 1) * u + (R * np.sin(A)).reshape(-1, 1) * v)


# central-difference weights for derivative orders 1..4, offsets -2..2
_STENCILS = {
    1: {-1: -0.5, 1: 0.5},
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    3: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5},
    4: {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0},
}


def _multi_indices(n, order):
    for combo in itertools.combinations_with_replacement(range(n), order):
        alpha = [0] * n
        for j in combo:
            alpha[j] += 1
        yield tuple(alpha)


def cr_norm_profile(field_a: VectorFieldSpec, field_b: VectorFieldSpec, r: int,
                    grid: Optional[SampleGrid] = None) -> list:
    """Estimates of the C^0..C^r distance in one pass (entry ``k`` is the C^k value).

    Central differences use step 1e-3 for first derivatives and 1e-2 above.
    These are estimates, not certified bounds.
    """
    if r > 4 or r < 0:
        raise UnsupportedOrder(f"orders 0..4 are supported, got {r}")
    if field_a.dim != field_b.dim:
        raise InvalidParameter("fields must share a dimension")
    if grid is None:
        grid = SampleGrid.around([field_a, field_b])
    X = grid.points()
    n = field_a.dim
    cache = {}

    def diff(off):
        key = tuple(np.round(off, 12))
        if key not in cache:
            Y = X + off
            cache[key] = evaluate(field_a, Y) - evaluate(field_b, Y)
        return cache[key]

    best = float(np.max(np.abs(diff(np.zeros(n)))))
    out = [best]
    for order in range(1, r + 1):
        step = 1e-3 if order == 1 else 1e-2
        for alpha in _multi_indices(n, order):
            terms = [(np.zeros(n), 1.0)]
            for j, m in enumerate(alpha):
                if m == 0:
                    continue
                new = []
                for off, w in terms:
                    for k, c in _STENCILS[m].items():
                        o = off.copy()
                        o[j] += k * step
                        new.append((o, w * c))
                terms = new
            acc = np.zeros_like(X)
            for off, w in terms:
                acc += w * diff(off)
            acc /= step**order
            best = max(best, float(np.max(np.abs(acc))))
        out.append(best)
    return out


def cr_norm_estimate(field_a: VectorFieldSpec, field_b: VectorFieldSpec, r: int,
                     grid: Optional[SampleGrid] = None) -> float:
    """Sampled sup of all partial derivatives of ``A - B`` up to order ``r``."""
    return cr_norm_profile(field_a, field_b, r, grid)[-1]


def fd_divergence(field: VectorFieldSpec, X, step: float = 1e-4):
    """Divergence by the fourth-order central stencil with spacing ``step``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    total = np.zeros(len(X))
    for j in range(field.dim):
        e = np.zeros(field.dim)
        e[j] = step

        def f(Y):
            return evaluate(field, Y)[:, j]

        total += (8 * (f(X + e) - f(X - e)) - (f(X + 2 * e) - f(X - 2 * e))) / (12 * step)
    return total


def align_endpoints(p, q, ring: CylinderRingSpec, tol: float = 1e-9):
    """Orthogonal map taking ``p - C`` to ``delta e_u`` and ``q - C - h e`` to angle ``theta``.

    Returns ``(R, theta, cross_plane)`` where ``R`` acts on displacements from the
    bottom center, the canonical frame being ``e_{n-3}, e_{n-2}`` (rotation
    plane) and ``e_{n-1}`` (flow), and ``cross_plane`` is the user-frame basis
    ``(u, v)`` the perturbation must rotate in.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = ring.dim
    e = ring.axis
    wp = p - ring.center
    wq = q - ring.center - ring.h * e
    if abs(wp @ e) > tol or abs(wq @ e) > tol:
        raise InvalidEndpoints("p must be on the bottom face and q on the top face")
    if abs(np.linalg.norm(wp) - ring.delta) > tol or abs(np.linalg.norm(wq) - ring.delta) > tol:
        raise InvalidEndpoints("p and q must lie on circles of radius delta")
    u = wp / np.linalg.norm(wp)
    u0, v0 = ring.cross_plane
    wq_perp = wq - (wq @ u) * u - (wq @ e) * e
    cands = [wq_perp] if np.linalg.norm(wq_perp) > 1e-6 * ring.delta else []
    cands += [v0, u0] + list(np.eye(n))
    for c in cands:
        # twice for numerical orthogonality
        for _ in range(2):
            c = c - (c @ u) * u - (c @ e) * e
        if np.linalg.norm(c) > 1e-6:
            v = c / np.linalg.norm(c)
            break
    # orient (u, v) like the ring's own rotation plane so theta keeps its sign
    if (u @ u0) * (v @ v0) - (u @ v0) * (v @ u0) < -1e-12:
        v = -v
    theta = math.atan2(float(wq @ v), float(wq @ u))
    canon = np.eye(n)
    user = [u, v, e]
    targets = [canon[n - 3], canon[n - 2], canon[n - 1]]
    # complete both frames with the remaining canonical axes
    rest_t = [canon[j] for j in range(n) if j not in (n - 3, n - 2, n - 1)]
    basis = list(user)
    for c in rest_t:
        w = c - sum((c @ b) * b for b in basis)
        w = w - sum((w @ b) * b for b in basis)
        basis.append(w / np.linalg.norm(w))
    U = np.array(basis)
    Tm = np.array(targets + rest_t)
    R = Tm.T @ U
    return R, theta, np.array([u, v])
