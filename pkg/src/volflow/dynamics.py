"""Orbit integration, flow Jacobians and Liouville checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import integrate as spi

from .core import VectorFieldSpec, divergence, evaluate, jacobian
from .exceptions import IntegrationEscape, InvalidParameter

__all__ = [
    "IntegratorConfig",
    "Orbit",
    "integrate",
    "integrate_batch",
    "flow_jacobian",
    "liouville_check",
    "orbit_to_csv",
]


@dataclass(frozen=True)
class IntegratorConfig:
    """``method`` is ``"rk4"`` (fixed ``step``) or ``"adaptive"`` (DOP853, ``rtol``/``atol``).

    ``escape`` is ``"stop"`` (raise on leaving a non-periodic chart) or
    ``"ignore"``.  ``max_step`` bounds adaptive steps.
    """

    method: str = "adaptive"
    step: float = 1e-3
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float = np.inf
    max_time: float = 1e7
    escape: str = "stop"

    def __post_init__(self):
        if self.method not in ("rk4", "adaptive"):
            raise InvalidParameter(f"unknown integrator {self.method!r}")
        if self.method == "rk4" and not self.step > 0:
            raise InvalidParameter("step must be positive")
        if self.method == "adaptive" and not (self.rtol > 0 and self.atol > 0):
            raise InvalidParameter("tolerances must be positive")
        if self.escape not in ("stop", "ignore"):
            raise InvalidParameter(f"unknown escape policy {self.escape!r}")

    def tighter(self, factor=10.0):
        return IntegratorConfig(self.method, self.step / factor, self.rtol / factor,
                                self.atol / factor, self.max_step, self.max_time, self.escape)

    def describe(self):
        if self.method == "rk4":
            return {"method": "rk4", "step": self.step}
        return {"method": "adaptive-dop853", "rtol": self.rtol, "atol": self.atol}


DEFAULT_CONFIG = IntegratorConfig()


class Orbit:
    """Integrated trajectory in lifted coordinates.

    ``times`` runs from 0 to ``T`` (descending when ``T < 0``); ``at(t)``
    evaluates the dense output anywhere in that range.
    """

    def __init__(self, field, x0, times, states, dense, integrator, escaped=False):
        self.field = field
        self.x0 = np.asarray(x0, dtype=float)
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self._dense = dense
        self.integrator = integrator
        self.escaped = escaped

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def end(self):
        return self.states[-1]

    def at(self, t):
        t = np.asarray(t, dtype=float)
        sign = 1.0 if self.T >= 0 else -1.0
        return self._dense(sign * t)

    def canonical(self):
        return self.field.chart.wrap(self.states)

    def __len__(self):
        return len(self.times)


def _hermite_dense(ts, ys, fs):
    ts = np.asarray(ts)
    ys = np.asarray(ys)
    fs = np.asarray(fs)

    def dense(t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        i = np.clip(np.searchsorted(ts, t_arr, side="right") - 1, 0, len(ts) - 2)
        h = ts[i + 1] - ts[i]
        s = ((t_arr - ts[i]) / h)[:, None]
        h = h[:, None]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        out = h00 * ys[i] + h10 * h * fs[i] + h01 * ys[i + 1] + h11 * h * fs[i + 1]
        return out[0] if np.ndim(t) == 0 else out

    return dense


def _escape_margin(chart, y, dim):
    free = ~chart.periodic
    if not free.any():
        return np.inf
    X = y.reshape(-1, dim)[:, free]
    return float(np.min(np.minimum(X - chart.lo[free], chart.hi[free] - X)))


def _solve(rhs, y0, T, cfg: IntegratorConfig, chart=None, dim=None):
    """Integrate ``y' = rhs(y)`` over ``[0, T]``, ``T >= 0``.

    Returns ``(ts, ys, dense, escaped)``; ``chart`` enables the escape check
    on every ``dim``-block of the state.
    """
    y0 = np.asarray(y0, dtype=float)
    check = chart is not None and cfg.escape == "stop" and (~chart.periodic).any()
    if T == 0:
        ts, ys = np.array([0.0]), y0[None]
        return ts, ys, (lambda t: np.broadcast_to(y0, np.shape(t) + y0.shape).copy()), False
    if cfg.method == "rk4":
        nsteps = int(np.ceil(T / cfg.step - 1e-9))
        h = T / nsteps
        ts = [0.0]
        ys = [y0]
        fs = [rhs(y0)]
        y = y0
        escaped = False
        for k in range(nsteps):
            f1 = fs[-1]
            f2 = rhs(y + 0.5 * h * f1)
            f3 = rhs(y + 0.5 * h * f2)
            f4 = rhs(y + h * f3)
            y = y + (h / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4)
            ts.append((k + 1) * h)
            ys.append(y)
            fs.append(rhs(y))
            if check and _escape_margin(chart, y, dim) < 0:
                escaped = True
                break
        ts, ys, fs = np.array(ts), np.array(ys), np.array(fs)
        if len(ts) == 1:
            return ts, ys, (lambda t: ys[0]), escaped
        return ts, ys, _hermite_dense(ts, ys, fs), escaped

    events = None
    if check:
        def leave(t, y):
            return _escape_margin(chart, y, dim)
        leave.terminal = True
        leave.direction = -1
        events = leave
    sol = spi.solve_ivp(lambda t, y: rhs(y), (0.0, T), y0, method="DOP853",
                        rtol=cfg.rtol, atol=cfg.atol, max_step=cfg.max_step,
                        dense_output=True, events=events)
    if sol.status == -1:
        raise IntegrationEscape(f"integrator failure: {sol.message}")
    escaped = sol.status == 1
    dense = sol.sol

    def dense_eval(t):
        t_arr = np.asarray(t, dtype=float)
        out = dense(np.atleast_1d(t_arr))
        return out[:, 0] if t_arr.ndim == 0 else out.T

    return sol.t, sol.y.T, dense_eval, escaped


def integrate(field: VectorFieldSpec, x0, T: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> Orbit:
    """Orbit of ``x0`` over ``[0, T]``; negative ``T`` integrates the reversed field."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (field.dim,) or not np.all(np.isfinite(x0)):
        raise InvalidParameter("x0 must be a finite point of the field's dimension")
    if not np.isfinite(T):
        raise InvalidParameter("T must be finite")
    if abs(T) > cfg.max_time:
        raise InvalidParameter(f"|T| exceeds max_time {cfg.max_time}")
    f = field if T >= 0 else field.reversed()
    ts, ys, dense, escaped = _solve(lambda y: evaluate(f, y), x0, abs(T), cfg,
                                    chart=field.chart, dim=field.dim)
    sign = 1.0 if T >= 0 else -1.0
    orbit = Orbit(field, x0, sign * ts, ys, dense, cfg.describe(), escaped)
    if escaped:
        raise IntegrationEscape(f"orbit left the chart at t={sign * ts[-1]:.6g}", orbit=orbit)
    return orbit


def integrate_batch(field: VectorFieldSpec, X0, T: float, cfg: IntegratorConfig = DEFAULT_CONFIG):
    """Integrate many initial points together; returns ``(ts, dense)`` with
    ``dense(t)`` of shape ``(len(t), N, n)``.  Escapes are not checked here."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    N, n = X0.shape
    f = field if T >= 0 else field.reversed()
    loose = IntegratorConfig(cfg.method, cfg.step, cfg.rtol, cfg.atol, cfg.max_step,
                             cfg.max_time, "ignore")
    ts, ys, dense, _ = _solve(lambda y: evaluate(f, y.reshape(N, n)).ravel(), X0.ravel(),
                              abs(T), loose)

    def dense_batch(t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        return np.asarray(dense(np.abs(t_arr))).reshape(len(t_arr), N, n)

    return ts, dense_batch


def flow_jacobian(field: VectorFieldSpec, x0, T: float, cfg: IntegratorConfig = DEFAULT_CONFIG,
                  method: str = "variational", step: float = 1e-6):
    """Derivative of the time-``T`` map at ``x0``.

    ``method="variational"`` integrates the variational equation with the
    field's analytic Jacobian; ``"differences"`` uses central differences of
    :func:`integrate` with displacement ``step``.
    """
    x0 = np.asarray(x0, dtype=float)
    n = field.dim
    f = field if T >= 0 else field.reversed()
    if method == "differences":
        J = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = step
            xp = integrate(field, x0 + e, T, cfg).end
            xm = integrate(field, x0 - e, T, cfg).end
            J[:, j] = (xp - xm) / (2 * step)
        return J
    if method != "variational":
        raise InvalidParameter(f"unknown Jacobian method {method!r}")

    def rhs(y):
        x = y[:n]
        Phi = y[n:].reshape(n, n)
        return np.concatenate([evaluate(f, x), (jacobian(f, x) @ Phi).ravel()])

    y0 = np.concatenate([x0, np.eye(n).ravel()])
    _, ys, _, _ = _solve(rhs, y0, abs(T), cfg)
    if cfg.escape == "stop" and not field.chart.contains(ys[-1, :n]):
        raise IntegrationEscape("orbit left the chart while computing the flow Jacobian")
    return ys[-1, n:].reshape(n, n)


def liouville_check(field: VectorFieldSpec, x0, T: float, cfg: IntegratorConfig = DEFAULT_CONFIG,
                    density=None) -> dict:
    """Compare ``det D(flow_T)`` with ``exp`` of the divergence integral along the orbit.

    With ``density`` (a callable ``psi`` with optional ``gradient``) both sides
    are taken with respect to the volume ``psi dz``: the determinant picks up
    ``psi(end)/psi(x0)`` and the divergence gains ``grad psi . X / psi``.
    """
    x0 = np.asarray(x0, dtype=float)
    J = flow_jacobian(field, x0, T, cfg)
    det = float(np.linalg.det(J))
    orbit = integrate(field, x0, T, cfg)

    def div_at(t):
        x = orbit.at(t)
        d = float(divergence(field, x))
        if density is not None:
            grad = _density_gradient(density, x)
            d += float(grad @ evaluate(field, x)) / float(density(x))
        return d

    lo, hi = (0.0, T) if T >= 0 else (T, 0.0)
    val, _ = spi.quad(div_at, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200)
    integral = val if T >= 0 else -val
    if density is not None:
        det *= float(density(orbit.end)) / float(density(x0))
    expo = float(np.exp(integral))
    return {"det_jacobian": det, "exp_integral_divergence": expo,
            "abs_difference": abs(det - expo)}


def _density_gradient(density, x, step=1e-6):
    grad = getattr(density, "gradient", None)
    if grad is not None:
        return np.asarray(grad(x), dtype=float)
    n = x.size
    g = np.empty(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        g[j] = (float(density(x + e)) - float(density(x - e))) / (2 * step)
    return g


def orbit_to_csv(orbit: Orbit, path, canonical: bool = False):
    states = orbit.canonical() if canonical else orbit.states
    n = states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)])
        for t, s in zip(orbit.times, states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in s])
