"""Sections, return maps, hyperbolic critical elements and genericity checks."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .core import BoxChart, VectorFieldSpec, evaluate, jacobian
from .dynamics import IntegratorConfig, integrate
from .exceptions import (
    EscapeBeforeReturn,
    HyperbolicityRequired,
    IntegrationEscape,
    InvalidInput,
    InvalidParameter,
    NotAFixedPoint,
    TangencyError,
)

__all__ = [
    "SectionSpec",
    "ReturnMapSample",
    "LinearizedReturn",
    "CriticalElement",
    "FundamentalDomainSample",
    "first_return",
    "return_map",
    "linearized_return",
    "periodic_element",
    "singularity_element",
    "fundamental_domain_sample",
    "patch_domain",
    "grow_invariant_manifold",
    "detect_recurrence",
    "check_genericity_conditions",
]

TANGENCY = 1e-8
RETURN_CONFIG = IntegratorConfig(rtol=1e-11, atol=1e-13)


def _complement_basis(normal):
    n = normal.size
    Q, _ = np.linalg.qr(np.column_stack([normal, np.eye(n)]))
    B = Q[:, 1:n].T
    # deterministic orientation: largest entry of each row positive
    for i in range(len(B)):
        j = np.argmax(np.abs(B[i]))
        if B[i, j] < 0:
            B[i] = -B[i]
    return B


@dataclass(frozen=True, eq=False)
class SectionSpec:
    """Disk of ``radius`` in the hyperplane through ``base`` orthogonal to ``normal``.

    Crossings count when the orbit moves along ``orientation * normal``.
    """

    base: np.ndarray
    normal: np.ndarray
    radius: float
    orientation: int = 1
    basis: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        nrm = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(nrm) - 1.0) > 1e-12:
            raise InvalidParameter("section normal must have unit length")
        if self.orientation not in (1, -1) or not self.radius > 0:
            raise InvalidParameter("orientation must be +-1 and radius positive")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "normal", nrm)
        object.__setattr__(self, "basis", _complement_basis(nrm))

    @classmethod
    def transversal(cls, field: VectorFieldSpec, base, normal=None, radius=0.5):
        """Section through ``base``; orthogonal to the field there unless ``normal`` is given."""
        base = np.asarray(base, dtype=float)
        v = evaluate(field, base)
        if normal is None:
            normal = v / np.linalg.norm(v)
        normal = np.asarray(normal, dtype=float)
        normal = normal / np.linalg.norm(normal)
        flux = float(v @ normal)
        if abs(flux) <= 1e-12 * np.linalg.norm(v):
            raise InvalidInput("section is not transversal to the field at its base")
        return cls(base, normal, radius, 1 if flux > 0 else -1)

    def flipped(self):
        return SectionSpec(self.base, self.normal, self.radius, -self.orientation)

    def offset(self, chart: BoxChart, x):
        """Minimal displacement from ``base`` to (wrapped) ``x``."""
        return chart.displacement(self.base, chart.wrap(x))

    def height(self, chart, x):
        return self.offset(chart, x) @ self.normal

    def coords(self, chart, x):
        """In-plane coordinates of ``x`` relative to ``base``."""
        return self.offset(chart, x) @ self.basis.T

    def embed(self, c):
        return self.base + np.asarray(c) @ self.basis


@dataclass(frozen=True)
class ReturnMapSample:
    entry: np.ndarray
    exit: np.ndarray
    return_time: float


def first_return(field: VectorFieldSpec, section: SectionSpec, x, maxT: float = 10.0,
                 cfg: IntegratorConfig = RETURN_CONFIG, min_time: float = 1e-6,
                 scan_stride: float = 0.01) -> Optional[ReturnMapSample]:
    """First oriented crossing of the section disk after ``min_time``, or ``None``.

    Crossings are bracketed on the dense output and refined by bisection to
    1e-10 in time.  Orbits that leave a non-periodic chart never return.
    """
    x = np.asarray(x, dtype=float)
    chart = field.chart
    try:
        orbit = integrate(field, x, maxT, cfg)
    except IntegrationEscape as exc:
        orbit = exc.orbit
        if orbit is None or len(orbit) < 2:
            return None
    T_end = orbit.T
    ts = np.union1d(orbit.times, np.arange(min_time, T_end, scan_stride))
    ts = ts[(ts >= min_time) & (ts <= T_end)]
    if ts.size < 2:
        return None
    states = orbit.at(ts)
    g = section.orientation * section.height(chart, states)

    def gfun(t):
        return section.orientation * float(section.height(chart, orbit.at(t)))

    idx = np.nonzero((g[:-1] < 0) & (g[1:] >= 0))[0]
    for i in idx:
        t0, t1 = ts[i], ts[i + 1]
        if g[i + 1] == 0.0:
            tc = t1
        else:
            tc = optimize.brentq(gfun, t0, t1, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=200)
        xc = orbit.at(tc)
        if abs(gfun(tc)) > 1e-7:
            continue  # periodic wrap of the height, not a crossing
        inplane = section.coords(chart, xc)
        if np.linalg.norm(inplane) > section.radius:
            continue
        flux = float(evaluate(field, xc) @ section.normal)
        if abs(flux) < TANGENCY:
            raise TangencyError(f"tangential crossing at t={tc:.6g}")
        exit_pt = section.embed(inplane)
        return ReturnMapSample(x.copy(), exit_pt, float(tc))
    return None


def return_map(field, section, x, maxT=10.0, cfg=RETURN_CONFIG):
    r = first_return(field, section, x, maxT, cfg)
    if r is None:
        raise InvalidInput("no return to the section before maxT")
    return r.exit


@dataclass(frozen=True)
class LinearizedReturn:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    hyperbolic: bool
    elementary: bool
    period: float


def linearized_return(field: VectorFieldSpec, section: SectionSpec, fixed, step: float = 1e-6,
                      maxT: float = 10.0, cfg: IntegratorConfig = RETURN_CONFIG) -> LinearizedReturn:
    """Differential of the return map at a fixed point, in section coordinates."""
    fixed = np.asarray(fixed, dtype=float)
    chart = field.chart
    r0 = first_return(field, section, fixed, maxT, cfg)
    if r0 is None or np.linalg.norm(chart.displacement(chart.wrap(fixed), chart.wrap(r0.exit))) > 1e-6:
        raise NotAFixedPoint("the point does not return to itself on the section")
    m = section.basis.shape[0]
    M = np.empty((m, m))
    for j in range(m):
        d = step * section.basis[j]
        plus = return_map(field, section, fixed + d, maxT, cfg)
        minus = return_map(field, section, fixed - d, maxT, cfg)
        M[:, j] = (chart.displacement(chart.wrap(minus), chart.wrap(plus)) @ section.basis.T) / (2 * step)
    ev = np.linalg.eigvals(M)
    hyperbolic = bool(np.all(np.abs(np.abs(ev) - 1.0) > 1e-6))
    elementary = bool(np.all(np.abs(ev - 1.0) > 1e-6))
    return LinearizedReturn(M, ev, hyperbolic, elementary, r0.return_time)


@dataclass(frozen=True, eq=False)
class CriticalElement:
    """Periodic orbit (seed, period, section) or singularity (point)."""

    kind: str
    point: np.ndarray
    period: Optional[float] = None
    section: Optional[SectionSpec] = None
    linearization: Optional[np.ndarray] = None
    spectrum: Optional[np.ndarray] = None
    hyperbolic: bool = False

    def to_dict(self):
        return {"kind": self.kind, "point": self.point.tolist(), "period": self.period,
                "hyperbolic": self.hyperbolic,
                "spectrum": None if self.spectrum is None else
                [[float(z.real), float(z.imag)] for z in self.spectrum]}


def periodic_element(field: VectorFieldSpec, seed, period: float, radius: float = 0.5,
                     normal=None, cfg: IntegratorConfig = RETURN_CONFIG) -> CriticalElement:
    seed = np.asarray(seed, dtype=float)
    end = integrate(field, seed, period, cfg).end
    if field.chart.distance(end, seed) > 1e-7:
        raise InvalidInput("seed does not close up after one period")
    section = SectionSpec.transversal(field, seed, normal, radius)
    lin = linearized_return(field, section, seed, maxT=1.5 * period, cfg=cfg)
    return CriticalElement("periodic", seed, float(period), section, lin.matrix, lin.eigenvalues,
                           lin.hyperbolic)


def singularity_element(field: VectorFieldSpec, point) -> CriticalElement:
    point = np.asarray(point, dtype=float)
    if np.linalg.norm(evaluate(field, point)) > 1e-10:
        raise InvalidInput("field does not vanish at the point")
    J = jacobian(field, point)
    ev = np.linalg.eigvals(J)
    return CriticalElement("singularity", point, None, None, J, ev,
                           bool(np.all(np.abs(ev.real) > 1e-6)))


def _real_subspace(M, select):
    ev, V = np.linalg.eig(M)
    cols = []
    for i in np.nonzero(select(ev))[0]:
        if abs(ev[i].imag) < 1e-12:
            cols.append(V[:, i].real)
        elif ev[i].imag > 0:
            cols.extend([V[:, i].real, V[:, i].imag])
    if not cols:
        return np.zeros((M.shape[0], 0))
    Q, _ = np.linalg.qr(np.column_stack(cols))
    for j in range(Q.shape[1]):
        k = np.argmax(np.abs(Q[:, j]))
        if Q[k, j] < 0:
            Q[:, j] = -Q[:, j]
    return Q


def _directions(k, count):
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        a = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(a), np.sin(a)])
    g = np.random.default_rng(0).normal(size=(count, k))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(eq=False)
class FundamentalDomainSample:
    """Finite sample of a fundamental domain with a mesher for density checks.

    ``mesher(spacing)`` returns a reference mesh of the whole domain whose
    neighbouring points are at most about ``spacing`` apart.
    """

    element: Optional[CriticalElement]
    side: str
    points: np.ndarray
    open_interior: bool
    mesher: Callable
    r0: float = 0.05
    verified: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.points)


def fundamental_domain_sample(field: VectorFieldSpec, element: CriticalElement,
                              side: str = "unstable", count: int = 16,
                              open_interior: bool = True, r0: float = 0.05,
                              cfg: IntegratorConfig = RETURN_CONFIG) -> FundamentalDomainSample:
    """Points of ``P(disk) - disk`` (periodic orbit) or of the sphere slice (singularity).

    The stable side is the unstable side of the reversed field.
    """
    if side not in ("unstable", "stable"):
        raise InvalidParameter(f"side must be 'unstable' or 'stable', got {side!r}")
    if not element.hyperbolic:
        raise HyperbolicityRequired("fundamental domains need a hyperbolic element")
    if side == "stable":
        rev = field.reversed()
        if element.kind == "periodic":
            rel = CriticalElement("periodic", element.point, element.period, element.section.flipped(),
                                  hyperbolic=True)
            rel = _relinearize(rev, rel, cfg)
        else:
            rel = singularity_element(rev, element.point)
        dom = fundamental_domain_sample(rev, rel, "unstable", count, open_interior, r0, cfg)
        dom.side = "stable"
        dom.element = element
        return dom
    if element.kind == "singularity":
        return _singularity_domain(field, element, count, open_interior, r0)
    return _periodic_domain(field, element, count, open_interior, r0, cfg)


def _relinearize(field, element, cfg):
    lin = linearized_return(field, element.section, element.point, maxT=1.5 * element.period, cfg=cfg)
    return CriticalElement("periodic", element.point, element.period, element.section,
                           lin.matrix, lin.eigenvalues, lin.hyperbolic)


def _singularity_domain(field, element, count, open_interior, r0):
    E = _real_subspace(element.linearization, lambda ev: ev.real > 0)
    k = E.shape[1]
    if k == 0:
        raise HyperbolicityRequired("no unstable directions at the singularity")
    dirs = _directions(k, count)
    pts = element.point + r0 * dirs @ E.T

    def mesher(spacing):
        if k == 1:
            d = _directions(1, 2)
        else:
            m = max(8, int(np.ceil(2 * np.pi * r0 / spacing)) * (k - 1))
            d = _directions(k, m)
        return element.point + r0 * d @ E.T

    return FundamentalDomainSample(element, "unstable", pts, open_interior, mesher, r0,
                                   np.ones(len(pts), dtype=bool))


def _periodic_domain(field, element, count, open_interior, r0, cfg):
    sec = element.section
    chart = field.chart
    L = element.linearization
    E = _real_subspace(L, lambda ev: np.abs(ev) > 1)
    k = E.shape[1]
    if k == 0:
        raise HyperbolicityRequired("no unstable directions for the return map")
    maxT = 1.5 * element.period
    ndir = 2 if k == 1 else max(4, count // 4)
    dirs = _directions(k, ndir) @ E.T  # section coordinates
    growth = np.linalg.norm(dirs @ L.T, axis=1)
    per_dir = max(1, int(np.ceil(count / len(dirs))))

    def seeds(m, closed_outer):
        out = []
        for u, gk in zip(dirs, growth):
            lo = r0 / gk
            if closed_outer:
                fr = (np.arange(m) + 1.0) / m
            else:
                fr = (np.arange(m) + 0.5) / m
            for f in fr:
                out.append(sec.embed((lo + (r0 - lo) * f) * u))
        return np.array(out)

    def image(S):
        return np.array([return_map(field, sec, s, maxT, cfg) for s in S])

    S = seeds(per_dir, not open_interior)[:count]
    P = image(S)
    radii = np.linalg.norm(sec.coords(chart, P), axis=1)
    keep = radii > r0
    if open_interior:
        keep &= radii - r0 > 1e-6
    P = P[keep]

    rev = field.reversed()
    back_sec = sec.flipped()
    verified = np.array([
        (lambda r: r is not None and np.linalg.norm(sec.coords(chart, r.exit)) < r0)(
            first_return(rev, back_sec, p, maxT, cfg))
        for p in P
    ], dtype=bool)

    def mesher(spacing):
        length = float(np.max(growth) - 1.0) * r0
        m = max(2, int(np.ceil(length / spacing)) + 1)
        # include both boundary curves of the domain
        out = []
        for u, gk in zip(dirs, growth):
            lo = r0 / gk
            for f in np.linspace(0.0, 1.0, m):
                out.append(sec.embed((lo + (r0 - lo) * f) * u))
        return image(np.array(out))

    return FundamentalDomainSample(element, "unstable", P, open_interior, mesher, r0, verified)


def patch_domain(center, axes, size: float, per_axis: int, open_interior: bool = True,
                 gap=None) -> FundamentalDomainSample:
    """Grid sample of a flat square patch spanned by orthonormal ``axes``.

    Used for domains that are not attached to a hyperbolic element (for example
    sections of a minimal torus flow).  ``gap=(lo, hi)`` removes the band of the
    first patch parameter in ``[lo, hi]`` from the sample but not from the mesh.
    """
    center = np.asarray(center, dtype=float)
    axes = np.atleast_2d(np.asarray(axes, dtype=float))
    k = axes.shape[0]
    if open_interior:
        ticks = (np.arange(per_axis) + 0.5) / per_axis
    else:
        ticks = np.linspace(0.0, 1.0, per_axis)
    grids = np.meshgrid(*([ticks] * k), indexing="ij")
    params = np.stack([g.ravel() for g in grids], axis=1)
    if gap is not None:
        params = params[(params[:, 0] < gap[0]) | (params[:, 0] > gap[1])]
    pts = center + (params - 0.5) * size @ axes

    def mesher(spacing):
        m = max(2, int(np.ceil(size / spacing)) + 1)
        t = np.linspace(0.0, 1.0, m)
        g = np.meshgrid(*([t] * k), indexing="ij")
        pr = np.stack([x.ravel() for x in g], axis=1)
        return center + (pr - 0.5) * size @ axes

    return FundamentalDomainSample(None, "patch", pts, open_interior, mesher, 0.0,
                                   np.ones(len(pts), dtype=bool))


def grow_invariant_manifold(field: VectorFieldSpec, dom: FundamentalDomainSample, T: float,
                            stride: float, cfg: IntegratorConfig = RETURN_CONFIG):
    """Orbit samples of every domain point for ``t`` in ``[-T, T]`` (canonical coordinates).

    Returns ``(cloud, complete)``; ``complete`` is False if some orbit left the chart.
    """
    if T == 0:
        return field.chart.wrap(dom.points).copy(), True
    ts = np.arange(-T, T + 0.5 * stride, stride)
    ts = np.clip(ts, -T, T)
    fwd, bwd = ts[ts >= 0], ts[ts < 0]
    chunks = []
    complete = True
    for p in dom.points:
        for times, TT in ((bwd, -T), (fwd, T)):
            if times.size == 0:
                continue
            try:
                orb = integrate(field, p, TT, cfg)
                chunks.append(orb.at(times))
            except IntegrationEscape as exc:
                complete = False
                orb = exc.orbit
                if orb is not None and len(orb) > 1:
                    lim = abs(orb.T)
                    ok = times[np.abs(times) <= lim]
                    if ok.size:
                        chunks.append(orb.at(ok))
    return field.chart.wrap(np.concatenate(chunks)), complete


@dataclass(frozen=True)
class Recurrence:
    t: float
    distance: float


def detect_recurrence(field: VectorFieldSpec, z, eps: float, minT: float, maxT: float,
                      cfg: IntegratorConfig = RETURN_CONFIG, on_escape: str = "none"):
    """First time after ``minT`` at which the orbit of ``z`` is within ``eps`` of ``z``.

    Scans the dense output at stride ``eps / (2 * max speed)`` and refines the
    first hit by local minimization of the distance.  Returns a
    :class:`Recurrence` or ``None``.  ``on_escape="raise"`` turns a chart
    escape into :class:`EscapeBeforeReturn` instead of ``None``.
    """
    if not eps > 0 or not maxT > minT:
        raise InvalidParameter("need eps > 0 and maxT > minT")
    z = np.asarray(z, dtype=float)
    chart = field.chart
    try:
        orbit = integrate(field, z, maxT, cfg)
    except IntegrationEscape as exc:
        if on_escape == "raise":
            raise EscapeBeforeReturn("orbit left the chart before returning") from exc
        orbit = exc.orbit
        if orbit is None or orbit.T <= minT:
            return None
    speed = float(np.max(np.linalg.norm(evaluate(field, orbit.states), axis=1))) + 1e-12
    stride = eps / (2.0 * speed)
    zc = chart.wrap(z)
    T_end = orbit.T
    t0 = minT + stride
    chunk = 20000
    while t0 < T_end:
        ts = t0 + stride * np.arange(chunk)
        ts = ts[ts <= T_end]
        if ts.size == 0:
            break
        d = chart.distance(orbit.at(ts), zc)
        hit = np.nonzero(d < eps)[0]
        if hit.size:
            i = hit[0]
            lo = max(minT, ts[i] - stride)
            hi = min(T_end, ts[i] + stride)
            res = optimize.minimize_scalar(lambda t: float(chart.distance(orbit.at(t), zc)),
                                           bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-10})
            if res.fun < d[i] and res.x > minT:
                return Recurrence(float(res.x), float(res.fun))
            return Recurrence(float(ts[i]), float(d[i]))
        t0 = ts[-1] + stride
    if orbit.escaped and on_escape == "raise":
        raise EscapeBeforeReturn("orbit left the chart before returning")
    return None


def check_genericity_conditions(field: VectorFieldSpec, element: Optional[CriticalElement],
                                k: int, m: int, dom: FundamentalDomainSample,
                                maxT: Optional[float] = None,
                                cfg: IntegratorConfig = RETURN_CONFIG) -> dict:
    """Density (1/k) of the domain sample and (1/m, > m)-recurrence of each of its points."""
    if element is not None:
        want_open = element.kind == "periodic"
        if dom.open_interior != want_open:
            raise InvalidInput("periodic orbits need the open domain, singularities the closed one")
    chart = field.chart
    mesh = chart.wrap(dom.mesher(1.0 / (4 * k)))
    pts = chart.wrap(dom.points)
    defect = 0.0
    for i in range(0, len(mesh), 2048):
        block = mesh[i:i + 2048]
        d = np.linalg.norm(chart.displacement(block[:, None, :], pts[None, :, :]), axis=2)
        defect = max(defect, float(np.max(np.min(d, axis=1))))
    eps = 1.0 / m
    maxT = maxT if maxT is not None else 50.0 * m
    per_point = []
    ok = True
    for z in dom.points:
        rec = detect_recurrence(field, z, eps, float(m), maxT, cfg)
        per_point.append({"z": np.asarray(z).tolist(),
                          "t": None if rec is None else rec.t,
                          "dist": None if rec is None else rec.distance})
        ok &= rec is not None
    return {
        "element": None if element is None else element.to_dict(),
        "k": k,
        "m": m,
        "density_defect": defect,
        "pass_A1": bool(defect < 1.0 / k),
        "pass_A2": bool(ok),
        "per_point": per_point,
    }
