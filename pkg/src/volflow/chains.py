"""(eps, t)-chains: verification, construction from recurrent points, reversal and
chain transitivity of sampled sets."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import networkx as nx
import numpy as np
from scipy.spatial import cKDTree

from .core import VectorFieldSpec, evaluate
from .dynamics import IntegratorConfig, integrate, integrate_batch
from .exceptions import (
    ChainVerificationError,
    DensityFailure,
    IntegrationEscape,
    InvalidEndpoints,
    InvalidParameter,
    OracleFailure,
    RequiresVerifiedInput,
)

__all__ = [
    "EpsTChain",
    "TorusRecurrenceOracle",
    "verify_chain",
    "build_chain_via_recurrence",
    "reverse_chain",
    "concatenate_chains",
    "chain_transitivity_test",
]

CHAIN_CONFIG = IntegratorConfig(rtol=1e-11, atol=1e-13)


@dataclass(frozen=True, eq=False)
class EpsTChain:
    """Points ``x_0..x_m`` with hop times ``t_0..t_{m-1}``.

    ``defect`` and ``passed`` are ``None`` until :func:`verify_chain` fills them.
    """

    points: np.ndarray
    hop_times: np.ndarray
    eps: float
    t_min: float
    defect: Optional[float] = None
    passed: Optional[bool] = None
    hop_defects: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        hops = np.atleast_1d(np.asarray(self.hop_times, dtype=float))
        if len(pts) < 2 or len(hops) != len(pts) - 1:
            raise InvalidParameter("a chain needs m+1 >= 2 points and m hop times")
        if not (self.eps > 0 and self.t_min > 0):
            raise InvalidParameter("eps and t_min must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "hop_times", hops)

    @property
    def verified(self):
        return bool(self.passed)

    def __len__(self):
        return len(self.points)

    def holds_at(self, eps, t_min):
        """Monotonicity: a verified chain is also an ``(eps', t')``-chain for ``eps' >= eps``, ``t' <= t``."""
        return bool(self.passed and self.defect < eps and np.all(self.hop_times >= t_min))

    def to_dict(self):
        return {
            "eps": self.eps,
            "t_min": self.t_min,
            "points": self.points.tolist(),
            "hop_times": self.hop_times.tolist(),
            "defect": self.defect,
            "pass": self.passed,
        }


def verify_chain(field: VectorFieldSpec, chain: EpsTChain,
                 cfg: IntegratorConfig = CHAIN_CONFIG) -> EpsTChain:
    """Integrate every hop and fill the defect.

    Raises :class:`ChainVerificationError` with the hop index if a hop leaves
    the chart.  Failures of the distance or time constraints are reported on
    the returned chain (``passed=False``).
    """
    chart = field.chart
    defects = np.empty(len(chain.hop_times))
    for i, (x, t) in enumerate(zip(chain.points[:-1], chain.hop_times)):
        try:
            end = integrate(field, x, t, cfg).end
        except IntegrationEscape as exc:
            raise ChainVerificationError(f"hop {i} left the chart", hop=i) from exc
        defects[i] = float(chart.distance(end, chain.points[i + 1]))
    defect = float(np.max(defects))
    ok = defect < chain.eps and bool(np.all(chain.hop_times >= chain.t_min))
    return replace(chain, defect=defect, passed=ok, hop_defects=defects)


class TorusRecurrenceOracle:
    """Recurrent points of a linear torus flow on a lattice of the given spacing.

    Every point of a minimal linear flow is recurrent with the same return
    times, so a single return time serves the whole lattice: the smallest
    integer ``k > t_min`` whose orbit displacement ``k * omega`` is within
    ``defect`` of the origin on the torus.
    """

    def __init__(self, frequencies, spacing: float, t_min: float, defect: float,
                 search_limit: int = 5_000_000):
        self.omega = np.asarray(frequencies, dtype=float)
        self.spacing = float(spacing)
        self.t_min = float(t_min)
        self.defect_bound = float(defect)
        k0 = int(np.floor(t_min)) + 1
        block = 200_000
        found = None
        for start in range(k0, k0 + search_limit, block):
            k = np.arange(start, start + block, dtype=float)
            d = k[:, None] * self.omega
            d = np.linalg.norm(d - np.round(d), axis=1)
            hit = np.nonzero(d < defect)[0]
            if hit.size:
                found = (float(k[hit[0]]), float(d[hit[0]]))
                break
        if found is None:
            raise OracleFailure("no return time found within the search limit")
        self.return_time, self.defect = found

    def __call__(self, y):
        node = np.round(np.asarray(y, dtype=float) / self.spacing) * self.spacing
        return np.mod(node, 1.0), self.return_time


Recurrent = Union[Sequence, Callable]


def _snap(chart, y, recurrent, radius):
    if callable(recurrent):
        got = recurrent(y)
        if got is None:
            return None
        x, t = got
        x = np.asarray(x, dtype=float)
        return (x, float(t)) if chart.distance(x, y) < radius else None
    pts, times = recurrent
    d = chart.distance(pts, y)
    inside = np.nonzero(d < radius)[0]
    if inside.size == 0:
        return None
    # nearest, then lexicographic
    order = np.lexsort(tuple(pts[inside].T[::-1]) + (d[inside],))
    j = inside[order[0]]
    return pts[j], float(times[j])


def build_chain_via_recurrence(field: VectorFieldSpec, p, q, eps: float, t_min: float,
                               recurrent: Recurrent,
                               cfg: IntegratorConfig = CHAIN_CONFIG) -> EpsTChain:
    """Chain from ``p`` to ``q`` through recurrent points near a straight path.

    ``recurrent`` is a list of ``(point, return_time)`` pairs or a callable
    mapping a point to a nearby ``(point, return_time)``.  Recurrent points must
    return within ``eps/8`` after a time of at least ``t_min``; path steps are
    below ``eps/4`` and snapping radius is ``eps/4``, so every hop is below
    ``eps``.  The returned chain is verified.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (field.dim,) or q.shape != (field.dim,):
        raise InvalidEndpoints("endpoints must be points of the field's dimension")
    if not (eps > 0 and t_min > 0):
        raise InvalidParameter("eps and t_min must be positive")
    chart = field.chart
    if not callable(recurrent):
        pairs = list(recurrent)
        if pairs:
            pts = chart.wrap(np.array([np.asarray(a, dtype=float) for a, _ in pairs]))
            times = np.array([float(b) for _, b in pairs])
            if np.any(times < t_min):
                raise InvalidParameter("recurrent return times must be at least t_min")
        else:
            pts, times = np.empty((0, field.dim)), np.empty(0)
        recurrent = (pts, times)

    t_first = 1.5 * t_min
    try:
        y0 = chart.wrap(integrate(field, p, t_first, cfg).end)
    except IntegrationEscape as exc:
        raise DensityFailure("orbit of p leaves the chart before t_min",
                             gap=p.tolist()) from exc
    qc = chart.wrap(q)
    gap = chart.displacement(y0, qc)
    dist = float(np.linalg.norm(gap))
    if dist < eps / 4:
        chain = EpsTChain(np.array([p, q]), np.array([t_first]), eps, t_min)
        return verify_chain(field, chain, cfg)
    steps = int(np.floor(dist / (eps / 4))) + 1
    path = y0 + np.linspace(0.0, 1.0, steps + 1)[:, None] * gap
    points, hops = [p], [t_first]
    for y in path[1:-1]:
        got = _snap(chart, chart.wrap(y), recurrent, eps / 4)
        if got is None:
            raise DensityFailure(f"no recurrent point within eps/4 of {np.round(chart.wrap(y), 6).tolist()}",
                                 gap=chart.wrap(y).tolist())
        x, t = got
        if len(points) > 1 and chart.distance(points[-1], x) == 0.0:
            continue  # consecutive snaps to the same point collapse
        points.append(x)
        hops.append(t)
    points.append(q)
    chain = EpsTChain(np.array(points), np.array(hops), eps, t_min)
    chain = verify_chain(field, chain, cfg)
    return chain


def reverse_chain(field: VectorFieldSpec, chain: EpsTChain,
                  cfg: IntegratorConfig = CHAIN_CONFIG) -> EpsTChain:
    """Turn a verified chain ``b -> a`` of the reversed field into a chain ``a' -> b`` of ``field``.

    With ``psi`` the reversed flow, the output is
    ``[psi_{t_{m-1}}(x_{m-1}), ..., psi_{t_0}(x_0), b]`` with hop times
    ``t_{m-1}, ..., t_0``; its first point ``a'`` is within ``eps`` of ``a``.
    """
    if not chain.passed:
        raise RequiresVerifiedInput("reverse_chain needs a verified chain")
    rev = field.reversed()
    m = len(chain.hop_times)
    images = [integrate(rev, chain.points[i], chain.hop_times[i], cfg).end for i in range(m)]
    pts = [images[i] for i in range(m - 1, -1, -1)] + [chain.points[0]]
    hops = chain.hop_times[::-1].copy()
    out = EpsTChain(np.array(pts), hops, chain.eps, chain.t_min)
    return verify_chain(field, out, cfg)


def concatenate_chains(a: EpsTChain, b: EpsTChain) -> EpsTChain:
    """Join a chain ending at ``r`` with one starting at ``r``."""
    if not np.array_equal(a.points[-1], b.points[0]):
        raise InvalidEndpoints("chains do not share the junction point")
    eps = max(a.eps, b.eps)
    out = EpsTChain(np.vstack([a.points, b.points[1:]]),
                    np.concatenate([a.hop_times, b.hop_times]), eps, min(a.t_min, b.t_min))
    if a.passed and b.passed:
        return replace(out, defect=max(a.defect, b.defect), passed=True,
                       hop_defects=np.concatenate([a.hop_defects, b.hop_defects]))
    return out


def chain_transitivity_test(field: VectorFieldSpec, cloud, eps: float, t_min: float,
                            t_max: float = 60.0, max_samples: int = 10_000,
                            cfg: IntegratorConfig = CHAIN_CONFIG) -> dict:
    """Reachability graph of a sampled set: ``i -> j`` iff a sampled flow time in
    ``[t_min, t_max]`` carries node ``i`` within ``eps`` of node ``j``."""
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    if len(cloud) == 0 or not t_max > t_min:
        raise InvalidParameter("need a nonempty cloud and t_max > t_min")
    chart = field.chart
    speed = float(np.max(np.linalg.norm(evaluate(field, cloud), axis=1)))
    n_samples = int(min(max_samples, np.ceil((t_max - t_min) * 2.0 * max(speed, 1e-12) / eps) + 1))
    ts = np.linspace(t_min, t_max, n_samples)
    _, dense = integrate_batch(field, cloud, t_max, cfg)
    nodes = chart.wrap(cloud)
    if not np.all(chart.contains(nodes)):
        raise InvalidParameter("cloud points must lie inside the chart")
    G = nx.DiGraph()
    G.add_nodes_from(range(len(cloud)))
    flagged = []
    reach = np.zeros((len(cloud), len(cloud)), dtype=bool)
    # periodic KD-tree: shift to [0, L) and make free axes too wide to wrap
    L = np.where(chart.periodic, chart.lengths, 3.0 * chart.lengths + 4.0 * eps)
    top = np.nextafter(L, 0.0)

    def shifted(P):
        return np.minimum(np.mod(P - chart.lo, L), top)

    node_pts = shifted(nodes)
    for start in range(0, n_samples, 2048):
        states = dense(ts[start:start + 2048])  # (k, N, n)
        bad = ~np.all(np.isfinite(states), axis=(0, 2))
        if np.any(bad):
            flagged.extend(np.nonzero(bad)[0].tolist())
        inside = chart.contains(states.reshape(-1, field.dim)).reshape(states.shape[:2])
        W = chart.wrap(states.reshape(-1, field.dim)).reshape(states.shape)
        for i in range(len(cloud)):
            Wi = W[:, i][inside[:, i]]
            if Wi.size == 0:
                continue
            tree = cKDTree(shifted(Wi), boxsize=L)
            d, _ = tree.query(node_pts, k=1, distance_upper_bound=eps)
            reach[i] |= d < eps
    G.add_edges_from(zip(*np.nonzero(reach)))
    C = nx.condensation(G)
    comps = [sorted(int(v) for v in C.nodes[c]["members"]) for c in C.nodes]
    order = sorted(range(len(comps)), key=lambda c: comps[c][0])
    relabel = {c: k for k, c in enumerate(order)}
    sources = sorted(relabel[c] for c in C.nodes if C.in_degree(c) == 0)
    sinks = sorted(relabel[c] for c in C.nodes if C.out_degree(c) == 0)
    return {
        "nodes": int(len(cloud)),
        "edges": int(G.number_of_edges()),
        "components": [{"members": comps[c]} for c in order],
        "strongly_connected": bool(nx.is_strongly_connected(G)),
        "sources": sources,
        "sinks": sinks,
        "flagged": sorted(set(flagged)),
    }
