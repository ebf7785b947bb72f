"""Command-line entry point: ``volflow <verb> [options]``.

Exit codes: 0 pass, 1 check failed, 2 invalid input, 3 construction impossible.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import chains, flowbox, perturb, poincare, returnlemma
from .core import catalog_field, divergence, field_from_dict, field_to_dict, in_cylinder_ring
from .dynamics import IntegratorConfig, flow_jacobian, integrate, orbit_to_csv
from .exceptions import (
    AngleBudgetExceeded,
    DensityFailure,
    EscapeBeforeReturn,
    IntegrationEscape,
    InvalidInput,
    NoCircle,
    OracleFailure,
    PatchCollision,
    ReturnTimeNotReached,
    VolflowError,
)

EXIT_PASS, EXIT_FAIL, EXIT_INVALID, EXIT_IMPOSSIBLE = 0, 1, 2, 3

CONSTRUCTION_ERRORS = (DensityFailure, PatchCollision, OracleFailure, ReturnTimeNotReached,
                       EscapeBeforeReturn, IntegrationEscape, NoCircle, AngleBudgetExceeded)

TORUS_FREQUENCIES = [1.0, math.sqrt(2.0), math.sqrt(3.0)]


def _floats(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def load_field(source: str, dim: int = 3):
    """Catalog id or path to a JSON field description."""
    path = Path(source)
    if path.suffix == ".json" or path.exists():
        with open(path) as fh:
            return field_from_dict(json.load(fh))
    if source == "linear-torus":
        return catalog_field("linear-torus", frequencies=TORUS_FREQUENCIES)
    if source == "translation-suspension":
        return catalog_field("translation-suspension", shift=[0.3, 0.0])
    return catalog_field(source, dim)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def _rows_to_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _flatten(report, prefix=""):
    out = []
    for k in sorted(report):
        v = report[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.extend(_flatten(v, key + "."))
        elif not isinstance(v, list):
            out.append((key, v))
    return out


def emit(args, report, csv_text=None):
    """Write the report (sorted-key JSON, or CSV) to ``--out`` or stdout."""
    if args.format == "csv":
        text = csv_text if csv_text is not None else _rows_to_csv(
            ["key", "value"], [(k, json.dumps(_clean(v))) for k, v in _flatten(report)])
    else:
        text = json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _orbit_path(args, tag):
    base = Path(args.out) if args.out else Path("volflow")
    return base.with_name(f"{base.stem}_{tag}.csv")


# ---------------------------------------------------------------------------
# verbs


def cmd_verify_perturb(args):
    tol = args.tol if args.tol is not None else 1e-6
    spec = perturb.PerturbationSpec.canonical(args.dim, args.delta, args.h, args.xi, args.theta)
    base = catalog_field("constant-vertical", args.dim)
    Z = perturb.build_perturbation(spec, base)
    rng = np.random.default_rng(args.seed)
    ring = spec.ring
    lo, hi = ring.bounding_box()
    lo, hi = lo - 0.1, hi + 0.1
    X = lo + (hi - lo) * rng.random((args.samples, args.dim))
    outside = X[~np.asarray(in_cylinder_ring(X, ring))]
    support_defect = float(np.max(np.abs(Z(outside) - base(outside)), initial=0.0))
    Y = lo + (hi - lo) * rng.random((min(args.samples, 10_000), args.dim))
    div = float(np.max(np.abs(divergence(Z, Y))))
    fd_div = float(np.max(np.abs(perturb.fd_divergence(Z, Y))))
    dev = perturb.verify_deviation(spec, tol=tol)
    grid = perturb.SampleGrid.around([Z], 40)
    cr = {str(r): v for r, v in enumerate(perturb.cr_norm_profile(Z, base, 2, grid))}
    p = spec.endpoints().p
    det = float(np.linalg.det(flow_jacobian(Z, p, 2 * args.h, IntegratorConfig(rtol=1e-11, atol=1e-13))))
    report = {
        "parameters": {"dim": args.dim, "delta": args.delta, "h": args.h, "xi": args.xi,
                       "theta": args.theta, "seed": args.seed},
        "support_defect": support_defect,
        "outside_samples": int(len(outside)),
        "divergence_max": div,
        "fd_divergence_max": fd_div,
        "deviation": dev,
        "cr_norm": cr,
        "liouville_det_defect": abs(det - 1.0),
    }
    report["pass"] = bool(support_defect == 0.0 and div <= 1e-9 and fd_div <= 1e-5
                          and dev["pass"] and abs(det - 1.0) <= 1e-5)
    emit(args, report)
    if args.emit_orbits:
        orbit_to_csv(integrate(Z, p, args.h), _orbit_path(args, "deviation"))
    return EXIT_PASS if report["pass"] else EXIT_FAIL


def cmd_flowbox(args):
    tol = args.tol if args.tol is not None else 1e-6
    psi = flowbox.DensityField(args.dim, args.density)
    chart = flowbox.build_flowbox(psi)
    field = catalog_field("constant-vertical", args.dim)
    report = flowbox.verify_flowbox(chart, field, psi, tol=tol, seed=args.seed,
                                    boxes=args.boxes, mc_samples=args.mc_samples)
    report["density"] = psi.to_dict()
    emit(args, report)
    return EXIT_PASS if report["pass"] else EXIT_FAIL


def _recurrence_source(field, eps, t_min):
    if field.kind == "linear-torus":
        return chains.TorusRecurrenceOracle(field.params["frequencies"], eps / 8, t_min, eps / 8)
    if field.kind == "saddle-pair-demo":
        z = np.arange(0.0, 1.0, eps / 8)
        period = math.ceil(t_min)
        pts = [(np.array([x, 0.0, zz]), float(period)) for x in (0.0, 1.0) for zz in z]
        return pts
    return []


def cmd_chain(args):
    field = load_field(args.field or "linear-torus", args.dim)
    eps = args.tol if args.tol is not None else args.eps
    rng = np.random.default_rng(args.seed)
    chart = field.chart
    p = np.array(args.p) if args.p else chart.lo + (chart.hi - chart.lo) * rng.random(field.dim)
    q = np.array(args.q) if args.q else chart.lo + (chart.hi - chart.lo) * rng.random(field.dim)
    rec = _recurrence_source(field, eps, args.t_min)
    try:
        chain = chains.build_chain_via_recurrence(field, p, q, eps, args.t_min, rec)
    except DensityFailure as exc:
        emit(args, {"error": str(exc), "gap": exc.gap, "pass": False,
                    "p": p, "q": q, "eps": eps, "t_min": args.t_min})
        return EXIT_IMPOSSIBLE
    report = chain.to_dict()
    report["field"] = field_to_dict(field)
    if args.format == "csv":
        rows = [list(x) + [t] for x, t in zip(chain.points, list(chain.hop_times) + [float("nan")])]
        header = [f"x{i + 1}" for i in range(field.dim)] + ["hop_time"]
        emit(args, report, _rows_to_csv(header, rows))
    else:
        emit(args, report)
    if args.emit_orbits:
        for i, (x, t) in enumerate(zip(chain.points[:-1], chain.hop_times)):
            orbit_to_csv(integrate(field, x, t), _orbit_path(args, f"hop{i}"), canonical=True)
    return EXIT_PASS if chain.passed else EXIT_FAIL


def cmd_return_demo(args):
    sc = returnlemma.translation_scenario(seed=args.seed)
    K, trail = returnlemma.extend_return_time(sc, args.target_T, args.max_iter)
    ver = returnlemma.verify_return_lemma(K, sc.base_field, sc, args.target_T, seed=args.seed)
    increments = np.diff([4.0] + [t["return_time_after"] for t in trail])[1:] if trail else []
    report = {
        "target_T": args.target_T,
        "trail": trail,
        "verification": ver,
        "field": field_to_dict(K),
        "increments_ok": bool(all(d >= 2 - 1e-6 for d in increments)),
    }
    report["pass"] = bool(ver["pass"] and report["increments_ok"] and len(trail) <= 5)
    emit(args, report)
    if args.emit_orbits:
        orbit_to_csv(integrate(K, sc.p, args.target_T + 4.0), _orbit_path(args, "orbit"),
                     canonical=True)
    return EXIT_PASS if report["pass"] else EXIT_FAIL


def _critical_element(field):
    if field.kind == "catmap-suspension":
        return poincare.periodic_element(field, np.zeros(3), 1.0)
    if field.kind in ("saddle-demo", "affine"):
        return poincare.singularity_element(field, np.zeros(field.dim))
    raise InvalidInput(f"no critical element known for field {field.kind!r}")


def _patch_domain_for(field, per_axis):
    n = field.dim
    if field.kind == "catmap-suspension":
        return poincare.patch_domain([0.5, 0.5, 0.0], np.eye(3)[:2], 0.6, per_axis)
    if field.kind == "linear-torus":
        center = np.full(n, 0.5)
        return poincare.patch_domain(center, np.eye(n)[1:3], 0.6, per_axis)
    raise InvalidInput(f"no torus-backed domain for field {field.kind!r}")


def cmd_genericity(args):
    field = load_field(args.field or "catmap-suspension", args.dim)
    if args.domain == "patch":
        element = None
        dom = _patch_domain_for(field, args.per_axis)
    else:
        element = _critical_element(field)
        dom = poincare.fundamental_domain_sample(field, element, "unstable", args.count,
                                                 open_interior=element.kind == "periodic")
    report = poincare.check_genericity_conditions(field, element, args.k, args.m, dom,
                                                  maxT=args.max_time)
    emit(args, report)
    return EXIT_PASS if report["pass_A1"] and report["pass_A2"] else EXIT_FAIL


def cmd_manifold(args):
    field = load_field(args.field or "saddle-demo", args.dim)
    element = _critical_element(field)
    dom = poincare.fundamental_domain_sample(field, element, args.side, args.count,
                                             open_interior=element.kind == "periodic")
    cloud, complete = poincare.grow_invariant_manifold(field, dom, args.T, args.stride)
    report = {"element": element.to_dict(), "side": args.side, "T": args.T,
              "stride": args.stride, "complete": complete, "points": cloud}
    header = [f"x{i + 1}" for i in range(field.dim)]
    emit(args, report, _rows_to_csv(header, cloud) if args.format == "csv" else None)
    return EXIT_PASS if complete else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--field", help="catalog id or path to a JSON field description")
    common.add_argument("--dim", type=int, default=3)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="report path (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--tol", type=float, default=None, help="override the verb's main tolerance")
    common.add_argument("--emit-orbits", action="store_true", help="write orbit CSVs next to --out")

    parser = argparse.ArgumentParser(prog="volflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("verify-perturb", parents=[common], help="check a ring perturbation")
    s.add_argument("--delta", type=float, default=0.25)
    s.add_argument("--h", type=float, default=0.5)
    s.add_argument("--xi", type=float, default=0.1)
    s.add_argument("--theta", type=float, default=0.2)
    s.add_argument("--samples", type=int, default=100_000)
    s.set_defaults(run=cmd_verify_perturb)

    s = sub.add_parser("flowbox", parents=[common], help="build and verify a flow box")
    s.add_argument("--density", default="sincos", choices=flowbox.DENSITY_KINDS[:-1])
    s.add_argument("--boxes", type=int, default=50)
    s.add_argument("--mc-samples", type=int, default=50_000)
    s.set_defaults(run=cmd_flowbox)

    s = sub.add_parser("chain", parents=[common], help="build an (eps, t)-chain between two points")
    s.add_argument("--eps", type=float, default=0.05)
    s.add_argument("--t-min", type=float, default=1.0)
    s.add_argument("--p", type=_floats)
    s.add_argument("--q", type=_floats)
    s.set_defaults(run=cmd_chain)

    s = sub.add_parser("return-demo", parents=[common], help="lengthen a return time by patching")
    s.add_argument("--target-T", dest="target_T", type=float, default=10.0)
    s.add_argument("--max-iter", type=int, default=5)
    s.set_defaults(run=cmd_return_demo)

    s = sub.add_parser("genericity", parents=[common], help="check density and recurrence conditions")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--m", type=int, default=3)
    s.add_argument("--domain", choices=("patch", "element"), default="patch")
    s.add_argument("--per-axis", type=int, default=8)
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--max-time", type=float, default=None)
    s.set_defaults(run=cmd_genericity)

    s = sub.add_parser("manifold", parents=[common], help="grow an invariant manifold")
    s.add_argument("--side", choices=("unstable", "stable"), default="unstable")
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--stride", type=float, default=0.1)
    s.set_defaults(run=cmd_manifold)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_PASS
    try:
        return args.run(args)
    except CONSTRUCTION_ERRORS as exc:
        print(f"volflow: {exc}", file=sys.stderr)
        return EXIT_IMPOSSIBLE
    except (VolflowError, ValueError) as exc:
        print(f"volflow: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc, ValueError) else EXIT_FAIL
    except OSError as exc:
        print(f"volflow: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
