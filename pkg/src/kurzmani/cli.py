"""Command-line front-end: config parsing, subcommands, CSV/JSON artifacts.

One JSON config file describes a run in three blocks: ``system`` (the
coefficients, jumps and nonlinearity), ``solver`` (window, horizon, grids,
tolerances), and ``output`` (directory and file prefix).  Matrices are
row-major nested lists; time-dependent entries are declarative path specs
(constant / polynomial coefficients / named presets / piecewise), never
embedded code.

Exit codes: 0 success, 1 config or usage error, 2 certified failure (a
cross-check mismatch, a failed hypothesis, no dichotomy), 3 numerical
non-convergence.  Every output file carries a metadata header with the
config hash, the library version and the effective tolerance, and floats are
written with shortest round-trip formatting, so identical configs produce
byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .apps import (HypothesisError, IdeSpec, MdeSpec, check_hypotheses,
                   ide_to_context, mde_to_context)
from .dichotomy import SplittingError
from .funcspace import PiecewisePath, StieltjesMeasure
from .kurzweil import IntegrationError, cross_check
from .linsys import LinearSystemSpec, PropagationError
from .lp_manifold import (NonContractionError, NonlinearitySpec, SolveError,
                          classify_initial, contraction_estimate,
                          manifold_graph)

log = logging.getLogger("kurzmani")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CERTIFIED_FAIL = 2
EXIT_NONCONVERGENCE = 3


class ConfigError(ValueError):
    pass


def _sane_tol(tol):
    if not (0.0 < tol <= 1e-2):
        raise ConfigError("tolerance %g outside the sane range (0, 1e-2]" % tol)


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def _matrix(value, what):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ConfigError("%s must be a (nested) matrix, got shape %r"
                          % (what, arr.shape))
    return arr


def parse_path(node, what, scalar=False):
    """Build a path from its declarative spec."""
    if isinstance(node, (int, float)):
        return PiecewisePath.constant(float(node) if scalar else _matrix(node, what))
    if not isinstance(node, dict) or len(node) != 1:
        raise ConfigError("%s: path spec needs exactly one of "
                          "constant/poly/preset/piecewise" % what)
    kind, body = next(iter(node.items()))
    conv = (lambda v: float(v)) if scalar else (lambda v: _matrix(v, what))
    if kind == "constant":
        return PiecewisePath.constant(conv(body))
    if kind == "poly":
        return PiecewisePath.polynomial([conv(c) for c in body])
    if kind == "preset":
        return PiecewisePath.preset(body["kind"], conv(body.get("amp", 1.0)),
                                    tuple(body["params"]))
    if kind == "piecewise":
        segs = []
        for seg in body["segments"]:
            piece = parse_path(seg, what, scalar=scalar)
            if piece.breakpoints:
                raise ConfigError("%s: piecewise segments must be simple specs" % what)
            segs.append(piece.segments[0])
        return PiecewisePath.from_segments([float(t) for t in body["times"]], segs)
    raise ConfigError("%s: unknown path spec kind %r" % (what, kind))


def parse_measure(node, what):
    if not isinstance(node, dict):
        raise ConfigError("%s must be a measure spec object" % what)
    density = parse_path(node.get("density", 0.0), what + ".density", scalar=True)
    atoms = [(float(t), float(w)) for t, w in node.get("atoms", [])]
    return StieltjesMeasure(density, atoms,
                            nondecreasing=bool(node.get("nondecreasing", False)))


def parse_nonlinearity(node, u=None):
    if node is None:
        raise ConfigError("system.nonlinearity is required for this subcommand")
    kind = node.get("kind", "ide_pointwise" if u is None else "mde_kernel")
    params = {}
    raw = node.get("params", {})
    for key, val in raw.items():
        if key in ("mats",):
            params[key] = [np.asarray(m, dtype=float) for m in val]
        elif key in ("coef", "gain"):
            params[key] = np.asarray(val, dtype=float)
        else:
            params[key] = val
    gamma = node.get("gamma")
    if isinstance(gamma, dict):
        gamma = parse_path(gamma, "nonlinearity.gamma", scalar=True)
    try:
        return NonlinearitySpec(
            kind, node["registry"], params, rho=float(node.get("rho", 0.5)),
            measure=u, gamma=gamma, M_H=node.get("M_H"), L_H=node.get("L_H"))
    except KeyError as exc:
        raise ConfigError("nonlinearity spec: %s" % exc)


def parse_system(cfg):
    sysblock = cfg.get("system")
    if not isinstance(sysblock, dict):
        raise ConfigError("config needs a 'system' block")
    kind = sysblock.get("kind")
    if kind not in ("ide", "mde", "linear"):
        raise ConfigError("system.kind must be one of ide/mde/linear")
    n = int(sysblock.get("n", 0))
    if n <= 0:
        raise ConfigError("system.n must be a positive integer")
    A = parse_path(sysblock.get("A", 0.0), "system.A")
    if A.shape != (n, n):
        raise ConfigError("system.A has shape %r, expected (%d, %d)"
                          % (A.shape, n, n))
    impulses = tuple((float(e["time"]), _matrix(e["B"], "impulse B"))
                     for e in sysblock.get("impulses", []))
    if kind == "ide":
        f = parse_nonlinearity(sysblock.get("nonlinearity"))
        return IdeSpec(n, A, impulses, f)
    if kind == "mde":
        u = parse_measure(sysblock.get("u", {}), "system.u")
        C = parse_path(sysblock.get("C", 0.0), "system.C")
        H = parse_nonlinearity(sysblock.get("nonlinearity"), u=u)
        return MdeSpec(n, A, C, u, H)
    measure_part = None
    if "u" in sysblock:
        u = parse_measure(sysblock["u"], "system.u")
        C = parse_path(sysblock.get("C", 0.0), "system.C")
        measure_part = (C, u)
    return LinearSystemSpec(n, A, impulses=impulses, measure_part=measure_part,
                            t0=float(sysblock.get("t0", 0.0)))


def solver_block(cfg):
    return dict(cfg.get("solver", {}))


def parse_grid(node, default):
    if node is None:
        return default
    if isinstance(node, dict):
        return np.linspace(float(node["start"]), float(node["stop"]),
                           int(node["count"]))
    return np.asarray([float(x) for x in node])


def normalize_config(cfg):
    """Canonical form: plain types, sorted keys (via json round-trip)."""
    return json.loads(json.dumps(cfg, sort_keys=True))


def serialize_config(cfg):
    return json.dumps(normalize_config(cfg), sort_keys=True, indent=2) + "\n"


def config_hash(cfg):
    payload = json.dumps(normalize_config(cfg), sort_keys=True,
                         separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config parse error at line %d column %d: %s"
                          % (exc.lineno, exc.colno, exc.msg))


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, meta, columns, rows):
    lines = ["# %s=%s" % (k, _fmt(v)) for k, v in sorted(meta.items())]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_json(path, meta, payload):
    doc = {"meta": {k: _plain(v) for k, v in sorted(meta.items())}}
    doc.update(_plain(payload))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def error_json(kind, message, **extra):
    doc = {"error": kind, "message": str(message)}
    doc.update({k: _plain(v) for k, v in extra.items()})
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _meta(cfg, args, **extra):
    meta = {"config_sha256": config_hash(cfg), "version": __version__}
    meta.update(extra)
    return meta


def _outpath(cfg, args, suffix):
    out = args.out or cfg.get("output", {}).get("dir", ".")
    os.makedirs(out, exist_ok=True)
    prefix = cfg.get("output", {}).get("prefix", "kurzmani")
    return os.path.join(out, "%s_%s" % (prefix, suffix))


def _context_from_config(cfg, args):
    spec = parse_system(cfg)
    sol = solver_block(cfg)
    tol = args.tol if args.tol is not None else float(sol.get("tol", 1e-10))
    _sane_tol(tol)
    if sol.get("T") is not None and float(sol["T"]) <= float(sol.get("s", 0.0)):
        raise ConfigError("solver.T must exceed the base time s")
    kwargs = dict(
        s=float(sol.get("s", 0.0)),
        T=sol.get("T"),
        tol=tol,
        base_step=float(sol.get("base_step", 0.1)),
        grid=parse_grid(sol.get("grid"), None),
        P0=np.asarray(sol["P0"], dtype=float) if "P0" in sol else None,
        projection_mode=sol.get("projection_mode", "auto"),
    )
    if isinstance(spec, IdeSpec):
        return spec, ide_to_context(spec, **kwargs)
    if isinstance(spec, MdeSpec):
        return spec, mde_to_context(spec, **kwargs)
    raise ConfigError("this subcommand needs system.kind = ide or mde")


def _run_integrand(cfg, args, default_tol):
    """Both evaluators on the configured integrand.

    With a measure the fast side is the Stieltjes decomposition; without one
    the integrand is the pure node-increment form whose fast value is the
    endpoint difference f(d) - f(c).
    """
    from .funcspace import norm as vnorm
    from .kurzweil import PointIntervalFn, ks_integral_ref

    block = cfg.get("integrand")
    if not isinstance(block, dict):
        raise ConfigError("config needs an 'integrand' block")
    f = parse_path(block["f"], "integrand.f", scalar=bool(block.get("scalar", True)))
    window = tuple(float(x) for x in block["window"])
    tol = args.tol if args.tol is not None else float(block.get("tol", default_tol))
    _sane_tol(tol)
    if "mu" in block:
        mu = parse_measure(block["mu"], "integrand.mu")
        return cross_check(f, mu, window, tol=tol), tol
    fast = np.asarray(f(window[1]) - f(window[0]))
    ref = ks_integral_ref(PointIntervalFn.node_function(f), window,
                          tol=min(tol / 10.0, 1e-9))
    difference = vnorm(fast - ref.value)
    tolerance = max(tol, 10.0 * ref.achieved_tolerance)
    from .kurzweil import CrossCheckReport
    return CrossCheckReport(fast, ref, difference, tolerance,
                            difference <= tolerance), tol


def cmd_integrate(cfg, args):
    try:
        report, tol = _run_integrand(cfg, args, default_tol=1e-9)
    except IntegrationError as exc:
        extra = {}
        if exc.last_two is not None:
            extra["last_two_sums"] = [v for v in exc.last_two if v is not None]
        error_json("divergent_integrand", exc, **extra)
        return EXIT_CERTIFIED_FAIL
    rows = [
        ("decomposition", float(np.ravel(report.fast_value)[0]), tol, 1),
        ("gauge_refinement", float(np.ravel(report.reference.value)[0]),
         report.reference.achieved_tolerance, report.reference.refinement_rounds),
    ]
    path = _outpath(cfg, args, "integrate.csv")
    write_csv(path, _meta(cfg, args, tol=tol),
              ["evaluator", "value", "tolerance", "rounds"], rows)
    print(path)
    return EXIT_OK if report.passed else EXIT_CERTIFIED_FAIL


def cmd_crosscheck(cfg, args):
    try:
        report, tol = _run_integrand(cfg, args, default_tol=1e-6)
    except IntegrationError as exc:
        extra = {}
        if exc.last_two is not None:
            extra["last_two_sums"] = [v for v in exc.last_two if v is not None]
        error_json("divergent_integrand", exc, **extra)
        return EXIT_CERTIFIED_FAIL
    path = _outpath(cfg, args, "crosscheck.json")
    write_json(path, _meta(cfg, args, tol=tol), {
        "fast_value": report.fast_value,
        "reference_value": report.reference.value,
        "difference": report.difference,
        "tolerance_used": report.tolerance_used,
        "passed": report.passed,
        "reference_rounds": report.reference.refinement_rounds,
    })
    print(path)
    return EXIT_OK if report.passed else EXIT_CERTIFIED_FAIL


def _linear_spec(cfg):
    spec = parse_system(cfg)
    if isinstance(spec, IdeSpec):
        return LinearSystemSpec(spec.n, spec.A, impulses=spec.impulses)
    if isinstance(spec, MdeSpec):
        return LinearSystemSpec(spec.n, spec.A, measure_part=(spec.C, spec.u))
    return spec


def cmd_fundamental(cfg, args):
    from .linsys import FundamentalOperator
    spec = _linear_spec(cfg)
    sol = solver_block(cfg)
    window = tuple(float(x) for x in sol.get("window", (0.0, 10.0)))
    op = FundamentalOperator(spec, window,
                             base_step=float(sol.get("base_step", 0.1)))
    grid = parse_grid(sol.get("grid"), np.linspace(window[0], window[1], 11))
    rows = []
    from .funcspace import norm as opnorm
    for s in grid:
        for t in grid:
            rows.append((float(t), float(s), opnorm(op.value(t, s))))
    path = _outpath(cfg, args, "fundamental.csv")
    write_csv(path, _meta(cfg, args), ["t", "s", "operator_norm"], rows)
    print(path)
    return EXIT_OK


def cmd_dichotomy(cfg, args):
    from .dichotomy import certify
    spec = _linear_spec(cfg)
    sol = solver_block(cfg)
    window = tuple(float(x) for x in sol.get("window", (0.0, 10.0)))
    grid = parse_grid(sol.get("grid"), None)
    P0 = np.asarray(sol["P0"], dtype=float) if "P0" in sol else None
    data = certify(spec, window, grid=grid, P0=P0,
                   mode=sol.get("projection_mode", "auto"),
                   base_step=float(sol.get("base_step", 0.1)))
    rows = [(float(sep), float(logN), side)
            for sep, logN, _, _, side in data.report.samples]
    csv_path = _outpath(cfg, args, "dichotomy.csv")
    write_csv(csv_path, _meta(cfg, args),
              ["separation", "log_norm", "side"], rows)
    cert_path = _outpath(cfg, args, "dichotomy.json")
    write_json(cert_path, _meta(cfg, args), {
        "K": data.K, "alpha": data.alpha,
        "dichotomy_detected": data.report.dichotomy_detected,
        "witness": data.report.witness,
        "P0": data.P0,
    })
    print(csv_path)
    print(cert_path)
    return EXIT_OK if data.report.dichotomy_detected else EXIT_CERTIFIED_FAIL


def cmd_manifold(cfg, args):
    spec, ctx = _context_from_config(cfg, args)
    sol = solver_block(cfg)
    s = float(sol.get("s", 0.0))
    zg = sol.get("zeta_grid")
    if zg is None:
        raise ConfigError("solver.zeta_grid is required for the manifold command")
    grid = [np.atleast_1d(np.asarray(z, dtype=float)) for z in zg]
    graph = manifold_graph(s, grid, ctx, jobs=args.jobs)
    rows = []
    for g in graph.samples:
        coords = ";".join(_fmt(v) for v in g.zeta_coords)
        if g.ok:
            ms = ";".join(_fmt(v) for v in g.m_coords)
        else:
            ms = "failed"
        rows.append((coords, ms, int(g.ok), g.iterations))
    csv_path = _outpath(cfg, args, "manifold.csv")
    write_csv(csv_path, _meta(cfg, args, tol=ctx.tol),
              ["zeta", "m", "ok", "iterations"], rows)
    est = contraction_estimate(ctx, s=s)
    cert_path = _outpath(cfg, args, "manifold.json")
    write_json(cert_path, _meta(cfg, args), {
        "K": ctx.dich.K, "alpha": ctx.dich.alpha,
        "L_theory": est.L_theory, "L_empirical": graph.L_empirical,
        "lipschitz_estimate": graph.lipschitz_estimate,
        "T": ctx.T, "tol": ctx.tol, "tail_bound": graph.tail_bound,
        "cutoff_radius": ctx.nonlin.rho,
        "samples_ok": len(graph.ok_samples), "samples_total": len(graph.samples),
    })
    print(csv_path)
    print(cert_path)
    if not graph.ok_samples:
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_classify(cfg, args):
    spec, ctx = _context_from_config(cfg, args)
    sol = solver_block(cfg)
    s = float(sol.get("s", 0.0))
    bound = float(sol.get("bound", 1e3))
    points = sol.get("initial_points")
    if not points:
        raise ConfigError("solver.initial_points is required for classify")
    rows = []
    for z0 in points:
        res = classify_initial(np.asarray(z0, dtype=float), s, ctx, bound)
        rows.append((";".join(_fmt(v) for v in z0), res.status,
                     _fmt(res.t_escape) if res.t_escape is not None else "",
                     res.sup_norm))
    path = _outpath(cfg, args, "classify.csv")
    write_csv(path, _meta(cfg, args, bound=bound),
              ["z0", "status", "t_escape", "sup_norm"], rows)
    print(path)
    return EXIT_OK


def cmd_check(cfg, args):
    spec = parse_system(cfg)
    if isinstance(spec, LinearSystemSpec):
        raise ConfigError("check needs system.kind = ide or mde")
    sol = solver_block(cfg)
    window = (float(sol.get("s", 0.0)),
              float(sol.get("T", float(sol.get("s", 0.0)) + 10.0)))
    report = check_hypotheses(spec, window)
    path = _outpath(cfg, args, "check.json")
    write_json(path, _meta(cfg, args), report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK if report.all_passed else EXIT_CERTIFIED_FAIL


COMMANDS = {
    "integrate": cmd_integrate,
    "crosscheck": cmd_crosscheck,
    "fundamental": cmd_fundamental,
    "dichotomy": cmd_dichotomy,
    "manifold": cmd_manifold,
    "classify": cmd_classify,
    "check": cmd_check,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kurzmani",
        description="stable-manifold and gauge-integral toolkit for impulsive "
                    "and measure-driven systems")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON config")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker threads for manifold sampling")
    parser.add_argument("--tol", type=float, default=None,
                        help="override the block tolerance")
    parser.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None):
    level = os.environ.get("KURZMANI_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        error_json("config", exc)
        return EXIT_CONFIG
    except (HypothesisError, SplittingError) as exc:
        error_json("hypothesis", exc,
                   condition=getattr(exc, "condition", None))
        return EXIT_CERTIFIED_FAIL
    except (IntegrationError, PropagationError, NonContractionError,
            SolveError) as exc:
        extra = {}
        if isinstance(exc, IntegrationError) and exc.last_two is not None:
            extra["last_two_sums"] = [v for v in exc.last_two if v is not None]
        error_json("nonconvergence", exc, **extra)
        return EXIT_NONCONVERGENCE
    except ValueError as exc:
        error_json("config", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
