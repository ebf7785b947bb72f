"""Joining orbits to recurrent points with cylinder-ring patches to lengthen
return times, on a straightened suspension of a translation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .core import (
    CylinderRingSpec,
    Patch,
    VectorFieldSpec,
    catalog_field,
    evaluate,
    in_cylinder_ring,
    patch_to_dict,
)
from .dynamics import IntegratorConfig, integrate
from .exceptions import (
    AngleBudgetExceeded,
    IntegrationEscape,
    InvalidParameter,
    InvalidRadii,
    NoCircle,
    OracleFailure,
    PatchCollision,
    ReturnTimeNotReached,
)
from .poincare import SectionSpec, detect_recurrence, first_return

__all__ = [
    "ShiftRecurrenceOracle",
    "ReturnScenario",
    "translation_scenario",
    "find_circle_through",
    "join_to_recurrent",
    "free_return",
    "extend_return_time",
    "verify_return_lemma",
    "multi_point_join",
    "rings_disjoint",
]

LEMMA_CONFIG = IntegratorConfig(rtol=1e-12, atol=1e-14)
STRIDE = 0.01


class ShiftRecurrenceOracle:
    """Recurrent points of the suspension of a translation by ``shift`` on a torus of side ``period``.

    Every point has the same return times, so the oracle returns a point at a
    requested distance from the query along a seeded direction near the first
    horizontal axis, together with the smallest exact-or-``tol`` return time
    ``k * period`` found by lattice search.
    """

    def __init__(self, shift, period: float = 4.0, seed: int = 0, tol: float = 1e-9,
                 max_tilt: float = math.pi / 8, search_limit: int = 100_000):
        self.shift = np.asarray(shift, dtype=float)
        self.period = float(period)
        self.seed = int(seed)
        self.max_tilt = float(max_tilt)
        k = np.arange(1, search_limit + 1, dtype=float)
        d = k[:, None] * self.shift / self.period
        d = self.period * np.linalg.norm(d - np.round(d), axis=1)
        hit = np.nonzero(d <= tol)[0]
        if hit.size == 0:
            raise OracleFailure("no return time found within the search limit")
        self.return_time = float(k[hit[0]] * self.period)
        self.return_defect = float(d[hit[0]])
        self._calls = 0

    def reset(self):
        self._calls = 0

    def __call__(self, y, distance: float):
        """Recurrent point at ``distance`` from ``y`` in the section, and its return time."""
        rng = np.random.default_rng([self.seed, self._calls])
        self._calls += 1
        phi = self.max_tilt * (2.0 * rng.random() - 1.0)
        d = np.zeros_like(np.asarray(y, dtype=float))
        d[0], d[1] = math.cos(phi), math.sin(phi)
        return np.asarray(y, dtype=float) + distance * d, self.return_time


@dataclass(eq=False)
class ReturnScenario:
    """Straightened field on ``V`` with the unit box ``W`` marked.

    ``p`` lies on the section plane ``{x_n = 0}``; ``sigma_radius`` is the
    radius of the section disk around ``p``; ``delta0``, ``xi_ratio`` and
    ``h0`` are the first tube's ring radius, ring half-width ratio and height.
    """

    base_field: VectorFieldSpec
    p: np.ndarray
    oracle: ShiftRecurrenceOracle
    sigma_radius: float = 0.99
    w_half: float = 1.0
    delta0: float = 0.1
    xi_ratio: float = 0.4
    h0: float = 0.5
    theta_budget: float = 0.2
    section: SectionSpec = dc_field(init=False)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        xi = self.xi_ratio * self.delta0
        if not (0 < xi < self.delta0 < 1.0 / 3.0):
            raise InvalidParameter("need 0 < xi < delta < 1/3")
        if not (0 < self.h0 < 1):
            raise InvalidParameter("need 0 < h < 1")
        if self.p.shape != (self.base_field.dim,) or self.p[-1] != 0.0:
            raise InvalidParameter("p must lie on the section plane x_n = 0")
        n = self.base_field.dim
        self.section = SectionSpec(self.p, np.eye(n)[n - 1], self.sigma_radius, 1)

    @property
    def dim(self):
        return self.base_field.dim

    def schedule(self, j):
        """Ring radius, half-width and height of the ``j``-th tube (halved each step)."""
        s = 0.5 ** j
        return self.delta0 * s, self.xi_ratio * self.delta0 * s, self.h0 * s

    def in_U(self, X, tau):
        """Membership in the flowed section ``{|x' - p'| < R, 0 <= x_n <= tau}``."""
        C = self.base_field.chart.wrap(np.atleast_2d(X))
        d = self.base_field.chart.displacement(self.p, C)
        horiz = np.linalg.norm(d[:, :-1], axis=1)
        return (horiz < self.sigma_radius) & (d[:, -1] >= 0.0) & (d[:, -1] <= tau)


def translation_scenario(shift=(0.3, 0.0), seed: int = 0, **kw) -> ReturnScenario:
    shift = np.asarray(shift, dtype=float)
    field = catalog_field("translation-suspension", shift=shift, period=4.0)
    oracle = ShiftRecurrenceOracle(shift, 4.0, seed)
    return ReturnScenario(field, np.zeros(field.dim), oracle, **kw)


def _plane_axes(n, d):
    """Gram-Schmidt of ``(d, first free horizontal axis)``."""
    u1 = d / np.linalg.norm(d)
    for i in range(n - 1):
        e = np.zeros(n)
        e[i] = 1.0
        w = e - (e @ u1) * u1
        if np.linalg.norm(w) > 1e-8:
            return u1, w / np.linalg.norm(w)
    raise NoCircle("no free axis to span a plane")


def find_circle_through(p0, q0, delta: float):
    """Center ``O`` with ``|O - p0| = |O - q0| = delta`` and the angle ``p0 O q0``.

    The plane is spanned by ``q0 - p0`` and the first free horizontal axis; of
    the two centers the one giving a positive signed angle is returned, as
    ``(center, angle, (u1, u2))``.
    """
    p0 = np.asarray(p0, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    n = p0.size
    d = float(np.linalg.norm(q0 - p0))
    if d >= 2 * delta:
        raise NoCircle(f"points are {d:.6g} apart, need less than 2*delta = {2 * delta:.6g}")
    if d == 0.0:
        e = np.zeros(n)
        e[0] = 1.0
        u1, u2 = e, _plane_axes(n, e)[1]
        return p0 + delta * u1, 0.0, (u1, u2)
    u1, u2 = _plane_axes(n, q0 - p0)
    height = math.sqrt(delta * delta - 0.25 * d * d)
    center = 0.5 * (p0 + q0) + height * u2
    return center, 2.0 * math.asin(d / (2.0 * delta)), (u1, u2)


def rings_disjoint(a: CylinderRingSpec, b: CylinderRingSpec) -> bool:
    """Exact test for vertical rings: separated footprints or separated height ranges."""
    axis = a.axis
    if not np.allclose(axis, b.axis):
        return False
    da, db = a.center @ axis, b.center @ axis
    if da + a.h < db or db + b.h < da:
        return True
    w = b.center - a.center
    horiz = np.linalg.norm(w - (w @ axis) * axis)
    # the rings are annuli, so one may also sit inside the other's hole
    if horiz >= a.delta + a.xi + b.delta + b.xi:
        return True
    if horiz + b.delta + b.xi <= a.delta - a.xi or horiz + a.delta + a.xi <= b.delta - b.xi:
        return True
    return False


@dataclass(frozen=True)
class JoinRecord:
    site: np.ndarray
    recurrent_point: np.ndarray
    recurrent_return_time: float
    patch: Optional[Patch]
    angle: float


def join_to_recurrent(scenario: ReturnScenario, K: VectorFieldSpec, site, q_prime,
                      delta: float, h: float, xi: float,
                      theta_budget: Optional[float] = None, return_time: float = float("nan")):
    """Install a ring patch turning ``site`` onto the orbit of ``q_prime``.

    Returns ``(K', record)``.  The patched orbit of ``site`` reaches
    ``q_prime + h e_n`` at time ``h``.
    """
    theta_budget = scenario.theta_budget if theta_budget is None else theta_budget
    site = np.asarray(site, dtype=float)
    q_prime = np.asarray(q_prime, dtype=float)
    n = scenario.dim
    dist = float(np.linalg.norm(q_prime - site))
    if dist >= theta_budget * delta / 2:
        raise AngleBudgetExceeded(
            f"recurrent point is {dist:.3g} away, budget allows {theta_budget * delta / 2:.3g}")
    if np.any(np.abs(q_prime[:-1]) >= scenario.w_half) or q_prime[-1] != site[-1]:
        raise InvalidParameter("recurrent point must lie in the section inside W")
    if dist == 0.0:
        return K, JoinRecord(site, q_prime, return_time, None, 0.0)
    center, angle, _ = find_circle_through(site, q_prime, delta)
    u = (site - center) / delta
    v = ((q_prime - center) / delta - math.cos(angle) * u) / math.sin(angle)
    v = v - (v @ u) * u
    v /= np.linalg.norm(v)
    axis = np.eye(n)[n - 1]
    ring = CylinderRingSpec(delta, h, xi, center, axis, np.vstack([u, v]))
    lo, hi = ring.bounding_box()
    if np.any(lo <= -scenario.w_half) or np.any(hi >= scenario.w_half):
        raise PatchCollision("patch would leave W")
    for old in K.patches:
        if not rings_disjoint(old.ring, ring):
            raise PatchCollision("new patch intersects an earlier one",
                                 center=center.tolist())
    patch = Patch(ring, angle)
    return K.with_patches(K.patches + (patch,)), JoinRecord(site, q_prime, return_time, patch, angle)


def _in_footprints(K, x):
    for p in K.patches:
        r = p.ring
        w = x - r.center
        horiz = np.linalg.norm(w - (w @ r.axis) * r.axis)
        if horiz < r.delta + r.xi:
            return True
    return False


def free_return(scenario: ReturnScenario, K: VectorFieldSpec, horizon: float = 50.0,
                cfg: IntegratorConfig = LEMMA_CONFIG):
    """First return of ``p`` to the section disk at a point outside every patch footprint.

    Returns ``(time, point)`` or ``(inf, None)`` if none occurs within ``horizon``.
    """
    x = scenario.p.copy()
    t = 0.0
    while t < horizon:
        r = first_return(K, scenario.section, x, maxT=horizon - t, cfg=cfg)
        if r is None:
            return float("inf"), None
        t += r.return_time
        x = K.chart.wrap(r.exit)
        if not _in_footprints(K, x):
            return t, x
    return float("inf"), None


def extend_return_time(scenario: ReturnScenario, target_T: float, max_iter: int = 5,
                       cfg: IntegratorConfig = LEMMA_CONFIG):
    """Join successive returns of ``p`` to recurrent points until the return time exceeds ``target_T``.

    Returns ``(K, trail)`` where each trail entry records the patch, the
    angle used and the return time of ``p`` after that step.
    """
    scenario.oracle.reset()
    K = scenario.base_field
    horizon = target_T + 4.0 * scenario.oracle.period
    t_ret, _ = free_return(scenario, K, horizon, cfg)
    if t_ret > target_T:
        return K, []
    trail = []
    site = scenario.p.copy()
    for j in range(max_iter):
        delta, xi, h = scenario.schedule(j)
        q_prime, rt = scenario.oracle(site, scenario.theta_budget * delta / 4)
        K, rec = join_to_recurrent(scenario, K, site, q_prime, delta, h, xi, return_time=rt)
        t_ret, nxt = free_return(scenario, K, horizon, cfg)
        trail.append({
            "patch": None if rec.patch is None else patch_to_dict(rec.patch),
            "angle_used": rec.angle,
            "site": site.tolist(),
            "recurrent_point": q_prime.tolist(),
            "recurrent_return_time": rt,
            "return_time_after": t_ret,
        })
        if t_ret > target_T:
            return K, trail
        site = nxt
    raise ReturnTimeNotReached(f"return time still <= {target_T} after {max_iter} iterations",
                               trail=trail)


def _backward_orbit(field, z, T, cfg):
    try:
        return integrate(field, z, -T, cfg)
    except IntegrationEscape as exc:
        return exc.orbit


def _backward_deviation(K, base, z, T, count, cfg):
    """Max distance of the two backward orbits over their common lifetime; inf if the lifetimes differ."""
    bk, bb = _backward_orbit(K, z, T, cfg), _backward_orbit(base, z, T, cfg)
    if bk is None or bb is None or abs(bk.T - bb.T) > 1e-9:
        return float("inf")
    tb = np.linspace(0.0, bk.T, count)
    return float(np.max(np.linalg.norm(bk.at(tb) - bb.at(tb), axis=1)))


def _tau(K):
    return max((p.ring.h for p in K.patches), default=0.0) + 2 * STRIDE


def verify_return_lemma(K: VectorFieldSpec, base: VectorFieldSpec, scenario: ReturnScenario,
                        T: float, samples: int = 100_000, seed: int = 0, horizon: float = 40.0,
                        cfg: IntegratorConfig = LEMMA_CONFIG) -> dict:
    """Report on: (1a) ``K = base`` outside ``U``; (1b) patches inside the flowed
    section ``X_[0,tau](Sigma_0)``; (2) the ``K``-orbit of ``p`` is in ``U`` at
    some ``t > T``; (3) backward orbits of ``p`` agree over ``[-T, 0]``."""
    tau = _tau(K)
    chart = base.chart
    rng = np.random.default_rng(seed)
    X = chart.lo + (chart.hi - chart.lo) * rng.random((samples, K.dim))
    # extra samples around each patch, where a violation would live
    for p in K.patches:
        lo, hi = p.ring.bounding_box()
        X = np.vstack([X, lo + (hi - lo) * rng.random((samples // 10, K.dim))])
    X = X[~scenario.in_U(X, tau)]
    diff = np.abs(evaluate(K, X) - evaluate(base, X))
    item_1a = bool(np.max(diff, initial=0.0) == 0.0)

    item_1b = True
    for p in K.patches:
        r = p.ring
        w = r.center - scenario.p
        horiz = np.linalg.norm(w[:-1])
        z0 = w[-1]
        if horiz + r.delta + r.xi > scenario.sigma_radius or z0 < 0 or z0 + r.h > tau:
            item_1b = False

    try:
        orb = integrate(K, scenario.p, T + horizon, cfg)
        escaped_fwd = False
    except IntegrationEscape as exc:
        orb, escaped_fwd = exc.orbit, True
    ts = np.arange(T + STRIDE, orb.T, STRIDE)
    hits = ts[scenario.in_U(orb.at(ts), tau)] if ts.size else ts
    item_2 = bool(hits.size > 0)

    back_dev = _backward_deviation(K, base, scenario.p, T, 2001, cfg)
    item_3 = bool(back_dev <= 1e-8)

    return {
        "T": T,
        "tau": tau,
        "patches": len(K.patches),
        "item_1a": item_1a,
        "item_1b": item_1b,
        "item_2": item_2,
        "item_3": item_3,
        "outside_samples": int(len(X)),
        "first_return_to_U_after_T": float(hits[0]) if hits.size else None,
        "forward_escaped": escaped_fwd,
        "backward_deviation": back_dev,
        "pass": item_1a and item_1b and item_2 and item_3,
    }


def multi_point_join(scenario: ReturnScenario, Z, radii, m: int,
                     cfg: IntegratorConfig = LEMMA_CONFIG):
    """Join each ``z_j`` to a recurrent point inside its ball ``B(z_j, delta_j)``.

    Each patch has radius ``delta_j / 4`` and height ``delta_j / 2`` and must
    avoid earlier patches and the first-return arcs of all points.  Returns
    ``(Y, report)``; the report checks, per point, that backward orbits are
    unchanged and that ``Y_t(z)`` comes within ``1/m`` of ``z`` for some ``t > m``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    if len(radii) != len(Z):
        raise InvalidRadii("one radius per point is required")
    if np.any(radii <= 0) or np.any(radii >= 1.0 / m):
        raise InvalidRadii("every radius must lie in (0, 1/m)")
    chart = scenario.base_field.chart
    for i in range(len(Z)):
        for j in range(i + 1, len(Z)):
            if chart.distance(Z[i], Z[j]) <= radii[i] + radii[j]:
                raise InvalidRadii(f"balls {i} and {j} overlap")
    base = scenario.base_field
    scenario.oracle.reset()
    # first-return arcs of all points, sampled
    arcs = []
    for z in Z:
        r = first_return(base, SectionSpec(z, scenario.section.normal, 1.0), z, maxT=20.0, cfg=cfg)
        span = r.return_time if r is not None else 4.0
        o = integrate(base, z, span, cfg)
        arcs.append(o.at(np.arange(0.0, span, STRIDE * 0.5)))
    Y = base
    records = []
    for j, (z, dj) in enumerate(zip(Z, radii)):
        delta, h = dj / 4.0, dj / 2.0
        xi = scenario.xi_ratio * delta
        q_prime, rt = scenario.oracle(z, scenario.theta_budget * delta / 4)
        Y, rec = join_to_recurrent(scenario, Y, z, q_prime, delta, h, xi, return_time=rt)
        if rec.patch is not None:
            for i, arc in enumerate(arcs):
                if i == j:
                    continue
                if np.any(in_cylinder_ring(chart.wrap(arc), rec.patch.ring)):
                    raise PatchCollision(f"patch of point {j} meets the first-return arc of point {i}")
        records.append(rec)
    per_point = [_point_report(base, Y, z, m, rec, cfg) for z, rec in zip(Z, records)]
    return Y, {
        "m": m,
        "points": per_point,
        "pass": all(p["backward_ok"] and p["recurrence_ok"] for p in per_point),
    }


def _point_report(base, Y, z, m, rec, cfg):
    T = float(m) + 4.0
    dev = _backward_deviation(Y, base, z, T, 401, cfg)
    maxT = (rec.recurrent_return_time if np.isfinite(rec.recurrent_return_time) else 100.0) + 4.0
    hit = detect_recurrence(Y, z, 1.0 / m, float(m), maxT, cfg)
    return {
        "z": z.tolist(),
        "patch": None if rec.patch is None else patch_to_dict(rec.patch),
        "angle_used": rec.angle,
        "backward_deviation": dev,
        "backward_ok": bool(dev <= 1e-8),
        "recurrence_time": None if hit is None else hit.t,
        "recurrence_distance": None if hit is None else hit.distance,
        "recurrence_ok": hit is not None,
    }
