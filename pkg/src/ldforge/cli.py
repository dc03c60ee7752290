"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 infeasible parameters, 4 numerical nonconvergence.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NONCONVERGENCE = 0, 2, 3, 4


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# deterministic JSON


def _num(x):
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"
    return format(x, ".17g")


def to_json(obj, indent=2, _level=0) -> str:
    """JSON with floats printed to 17 significant digits and sorted keys."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {to_json(v, indent, _level + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(to_json(v, indent, _level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return json.dumps(str(obj), ensure_ascii=False)


def emit(obj, path=None):
    text = to_json(obj) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    subcommand: str
    background: Optional[str] = None
    kcirc: Optional[int] = None
    m: Optional[int] = None
    m_vector: Optional[List[int]] = None
    sigma: List[float] = field(default_factory=list)
    xi: List[float] = field(default_factory=list)
    zeta: float = 0.0
    tol: Optional[float] = None
    jobs: int = 1
    outputs: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return to_json(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        sub = args.command + ("" if getattr(args, "action", None) is None else " " + args.action)
        known = {"command", "action", "func", "save_config", "background", "kcirc", "m", "m_vector", "sigma", "xi",
                 "zeta", "tol", "jobs"}
        outputs = {k: v for k, v in vars(args).items() if k.startswith("out") or k.endswith("_csv")}
        options = {k: v for k, v in vars(args).items() if k not in known and k not in outputs}
        return cls(subcommand=sub, background=getattr(args, "background", None),
                   kcirc=getattr(args, "kcirc", None), m=getattr(args, "m", None),
                   m_vector=getattr(args, "m_vector", None), sigma=list(getattr(args, "sigma", None) or []),
                   xi=list(getattr(args, "xi", None) or []), zeta=float(getattr(args, "zeta", 0.0) or 0.0),
                   tol=args.tol, jobs=args.jobs, outputs=outputs, options=options)


# ---------------------------------------------------------------------------
# helpers


def _background(name):
    from .backgrounds import BackgroundError, load_custom, make_background
    if name and os.path.isfile(name):
        return load_custom(name)
    try:
        return make_background(name)
    except BackgroundError as exc:
        raise UsageError(str(exc)) from None


def _ratios(args, k):
    from .rld import FluxRatios
    sigma = list(args.sigma or [])
    xi = list(args.xi or [])
    # a single value broadcasts, matching "--sigma 0"
    if len(sigma) == 1 and k > 1:
        sigma = sigma * (k - 1)
    if len(xi) == 1 and k > 1:
        xi = xi * k
    return FluxRatios.from_lists(sigma[:max(k - 1, 0)], xi[:k])


def _half_count(kcirc):
    return kcirc // 2 if kcirc % 2 == 0 else (kcirc + 1) // 2


def solve_rld(bg, kcirc, args):
    from .backgrounds import BackgroundId
    from .rld import build_rld, rld_critical_catenoid, smooth_at_ends
    k = _half_count(kcirc)
    ratios = _ratios(args, k)
    if getattr(args, "F1", None) is not None:
        parity = "even" if kcirc % 2 == 0 else "odd"
        return build_rld(bg, args.F1, ratios, parity, max_jumps=k, tol=args.tol)
    if bg.id is BackgroundId.CRITICAL_CATENOID:
        return rld_critical_catenoid(ratios, kcirc, tol=args.tol)
    return smooth_at_ends(bg, ratios, kcirc, tol=args.tol)


def _profile_csv(profile_fn, s, path):
    phi, dphi = profile_fn(s)
    with open(path, "w") as fh:
        fh.write("s,phi,dphi\n")
        for a, b, c in zip(s, phi, dphi):
            fh.write(f"{_num(a)},{_num(b)},{_num(c)}\n")


def _rld_grid(sol):
    bg = sol.background
    top = bg.half_length if math.isfinite(bg.half_length) else float(sol.s[-1]) + 2.0
    return np.linspace(0.0, top, 401)


def _m_vector(args, k):
    if args.m_vector:
        if len(args.m_vector) != k:
            raise UsageError(f"--m-vector needs {k} entries")
        return tuple(args.m_vector)
    if args.m is None:
        raise UsageError("give --m or --m-vector")
    return tuple([args.m] * k)


def _build_ld(args):
    from .ld_fourier import build_ld
    bg = _background(args.background)
    sol = solve_rld(bg, args.kcirc, args)
    mv = _m_vector(args, sol.k)
    xi_circ = tuple(args.xi_circ) if getattr(args, "xi_circ", None) else None
    return build_ld(bg, sol, mv, zeta1=args.zeta, xi_circ=xi_circ, m=args.m, tol=args.tol)


# ---------------------------------------------------------------------------
# commands


def cmd_ode(args):
    from .ode_core import end_solution, h_solution, integrate, phi_even, phi_odd
    bg = _background(args.background)
    if args.kind == "ivp":
        prof = integrate(bg, args.s0, args.phi0, args.dphi0, args.s1, tol=args.tol)
        lo, hi = sorted((args.s0, args.s1))
    else:
        prof = {"even": lambda: phi_even(bg, args.tol), "odd": lambda: phi_odd(bg, args.tol),
                "end": lambda: end_solution(bg, args.tol),
                "h": lambda: h_solution(bg, args.F, args.s0, args.tol)}[args.kind]()
        lo = args.s0 if args.kind == "h" else 0.0
        hi = min(args.s1, getattr(prof, "hi", args.s1))
    s = np.linspace(lo, hi, args.n)
    if args.output:
        _profile_csv(prof, s, args.output)
    else:
        phi, dphi = prof(s)
        sys.stdout.write("s,phi,dphi\n")
        for a, b, c in zip(s, phi, dphi):
            sys.stdout.write(f"{_num(a)},{_num(b)},{_num(c)}\n")
    return EXIT_OK


def _rld_record(sol, csv_path):
    rec = sol.to_dict()
    rec["phi_profile_csv_path"] = csv_path
    if csv_path:
        _profile_csv(sol.values, _rld_grid(sol), csv_path)
    return rec


def cmd_rld_solve(args):
    bg = _background(args.background)
    sol = solve_rld(bg, args.kcirc, args)
    csv_path = None
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        csv_path = os.path.join(args.out_dir, f"rld_{bg.name}_k{args.kcirc}.csv")
    emit(_rld_record(sol, csv_path), args.output)
    return EXIT_OK


def cmd_rld_sweep(args):
    from .rld import RldError
    bg = _background(args.background)
    lo, hi = args.kcirc_range

    def one(kc):
        try:
            sol = solve_rld(bg, kc, args)
            return {"kcirc": kc, "status": "ok", "solution": sol.to_dict()}
        except RldError as exc:
            return {"kcirc": kc, "status": type(exc).__name__, "reason": str(exc)}

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        rows = list(pool.map(one, range(lo, hi + 1)))
    emit({"background": bg.name, "results": rows}, args.output)
    return EXIT_OK


def cmd_ld_build(args):
    from .ld_fourier import decompose, grid_csv
    ld = _build_ld(args)
    out = ld.to_dict()
    if args.grid_csv:
        grid = decompose(ld)
        with open(args.grid_csv, "w") as fh:
            fh.write(grid_csv(grid, args.field))
        out["grid_csv"] = args.grid_csv
        out["sup_phi_prime"] = float(np.nanmax(np.abs(grid["Phi_prime"])))
    emit(out, args.output)
    return EXIT_OK


def cmd_ld_mismatch(args):
    from .ld_fourier import mismatch, unbalancing_map, zeta_vector
    ld = _build_ld(args)
    mis = mismatch(ld, args.method)
    out = {"config": ld.config.to_dict(), "mismatch": mis.to_dict(),
           "unbalancing_map": unbalancing_map(mis, ld).tolist(), "zeta": zeta_vector(ld).tolist()}
    if args.method == "formula" and args.cross_check:
        other = mismatch(ld, "circle_extraction")
        out["route_gap"] = float(max(np.max(np.abs(mis.mu - other.mu)),
                                     np.max(np.abs(mis.mu_prime - other.mu_prime))))
    emit(out, args.output)
    return EXIT_OK


def cmd_clifford_phi(args):
    from .clifford import CliffordConfig, clifford_mismatch, clifford_phi
    lattice = "triple" if args.triple else "single"
    sigma = tuple(args.sigma) if args.sigma else (0.0, 0.0)
    if len(sigma) != 2:
        raise UsageError("--sigma takes two values for the Clifford triple lattice")
    cfg = CliffordConfig(args.k, args.m, lattice=lattice, zeta=args.zeta, sigma=sigma)
    out = clifford_mismatch(cfg, method=args.method)
    if args.grid_csv:
        res = clifford_phi(args.k, args.m, lattice=lattice, sigma=sigma, spectral=False)
        vals = res[args.field]
        with open(args.grid_csv, "w") as fh:
            fh.write("x,y,value\n")
            for i, x in enumerate(res["x"]):
                for j, y in enumerate(res["y"]):
                    fh.write(f"{_num(x)},{_num(y)},{_num(vals[i, j])}\n")
        out["grid_csv"] = args.grid_csv
        out["sup_phi_prime"] = float(np.max(np.abs(res["Phi_prime"])))
    emit(out, args.output)
    return EXIT_OK


def cmd_mesh_build(args):
    from .geometry import admissible_alpha, build_initial_surface, gluing_data_from_clifford, gluing_data_from_ld
    if args.background in ("clifford", "clifford-torus", "CliffordTorus"):
        from .clifford import CliffordConfig
        if args.k is None or args.m is None:
            raise UsageError("the Clifford torus needs --k and --m")
        data = gluing_data_from_clifford(CliffordConfig(args.k, args.m, zeta=args.zeta))
    else:
        if args.kcirc is None:
            raise UsageError("--kcirc is required")
        data = gluing_data_from_ld(_build_ld(args))
    alpha = admissible_alpha(data) if args.alpha is None else args.alpha
    tilts = None if args.tilts == "none" else "mismatch"
    mesh = build_initial_surface(data, tilts=tilts, alpha=alpha, ds=args.ds, bridge_theta=args.bridge_theta,
                                 jobs=args.jobs)
    mesh.to_obj(args.out_obj)
    summary = {"obj": args.out_obj, "vertices": mesh.n_vertices, "triangles": int(len(mesh.triangles)),
               "euler_characteristic": mesh.euler_characteristic(),
               "boundary_edges": int(len(mesh.boundary_edges())),
               "orientation_consistent": bool(mesh.orientation_consistent()), **mesh.meta}
    emit(summary, args.output)
    return EXIT_OK


def cmd_mesh_curvature(args):
    from .geometry import curvature_csv, discrete_mean_curvature, read_obj
    mesh = read_obj(args.input)
    ambient = "S3" if mesh.ambient_dim == 4 else "R3"
    H = discrete_mean_curvature(mesh, ambient)
    bg = args.background or mesh.meta.get("background", "")
    if bg.lower() in ("shrinker", "spherical-shrinker", "sphericalshrinker"):
        residual = H - 0.5 * np.einsum("ij,ij->i", mesh.vertices, mesh.normals)
        kind = "H - <x,n>/2"
    else:
        residual = H
        kind = "H"
    interior = ~mesh.boundary_vertices()
    if args.out_csv:
        curvature_csv(mesh, H, residual, args.out_csv)
    names = mesh.tag_names()
    per_tag = {}
    for tag in sorted(set(names)):
        sel = interior & (np.array(names) == tag)
        if np.any(sel):
            r = np.abs(residual[sel])
            per_tag[tag] = {"max": float(r.max()), "median": float(np.median(r)), "vertices": int(sel.sum())}
    emit({"input": args.input, "ambient": ambient, "residual": kind, "per_tag": per_tag,
          "csv": args.out_csv}, args.output)
    return EXIT_OK


def cmd_verify(args):
    from . import verify
    results = verify.run_all(args.only, echo=lambda line: print(line, flush=True))
    rep = verify.report(results)
    if args.output:
        emit(rep, args.output)
    return EXIT_OK if rep["passed"] else 1


# ---------------------------------------------------------------------------
# parser


def _rld_args(p, kcirc_required=True):
    p.add_argument("--background", required=True)
    p.add_argument("--kcirc", type=int, required=kcirc_required)
    p.add_argument("--sigma", type=float, nargs="*", default=[])
    p.add_argument("--xi", type=float, nargs="*", default=[])
    p.add_argument("--F1", type=float, default=None, help="shoot with this first flux instead of matching the ends")


def _ld_args(p):
    _rld_args(p)
    p.add_argument("--m", type=int)
    p.add_argument("--m-vector", type=int, nargs="*", dest="m_vector")
    p.add_argument("--zeta", type=float, default=0.0)
    p.add_argument("--xi-circ", type=float, nargs="*", dest="xi_circ")


def build_parser():
    top = argparse.ArgumentParser(prog="ldforge", description="LD and RLD solutions, mismatch and doubling meshes")
    top.add_argument("--tol", type=float, default=None, help="integrator tolerance (default LDFORGE_TOL or 1e-10)")
    top.add_argument("--jobs", type=int, default=1)
    top.add_argument("--save-config", dest="save_config", help="write the parsed run configuration as JSON")
    sub = top.add_subparsers(dest="command", required=True)

    ode = sub.add_parser("ode").add_subparsers(dest="action", required=True)
    p = ode.add_parser("profile", help="CSV s,phi,dphi of a solution of phi'' + V phi = 0")
    p.add_argument("--background", required=True)
    p.add_argument("--kind", choices=("ivp", "even", "odd", "end", "h"), default="ivp")
    p.add_argument("--s0", type=float, default=0.0)
    p.add_argument("--phi0", type=float, default=1.0)
    p.add_argument("--dphi0", type=float, default=0.0)
    p.add_argument("--F", type=float, default=0.0)
    p.add_argument("--s1", type=float, default=3.0)
    p.add_argument("--n", type=int, default=201)
    p.add_argument("--output")
    p.set_defaults(func=cmd_ode)

    rld = sub.add_parser("rld").add_subparsers(dest="action", required=True)
    p = rld.add_parser("solve")
    _rld_args(p)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--output")
    p.set_defaults(func=cmd_rld_solve)
    p = rld.add_parser("sweep")
    _rld_args(p, kcirc_required=False)
    p.add_argument("--kcirc-range", type=int, nargs=2, default=(1, 8), dest="kcirc_range")
    p.add_argument("--output")
    p.set_defaults(func=cmd_rld_sweep)

    ld = sub.add_parser("ld").add_subparsers(dest="action", required=True)
    p = ld.add_parser("build")
    _ld_args(p)
    p.add_argument("--grid-csv", dest="grid_csv")
    p.add_argument("--field", choices=("Phi", "G_hat", "Phi_hat", "Phi_prime"), default="Phi_prime")
    p.add_argument("--output")
    p.set_defaults(func=cmd_ld_build)
    p = ld.add_parser("mismatch")
    _ld_args(p)
    p.add_argument("--method", choices=("formula", "circle_extraction"), default="formula")
    p.add_argument("--cross-check", action="store_true", dest="cross_check")
    p.add_argument("--output")
    p.set_defaults(func=cmd_ld_mismatch)

    cl = sub.add_parser("clifford").add_subparsers(dest="action", required=True)
    p = cl.add_parser("phi")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--triple", action="store_true")
    p.add_argument("--sigma", type=float, nargs="*")
    p.add_argument("--zeta", type=float, default=0.0)
    p.add_argument("--method", choices=("series", "circle_extraction"), default="series")
    p.add_argument("--grid-csv", dest="grid_csv")
    p.add_argument("--field", choices=("Phi", "G_hat", "Phi_hat", "Phi_prime"), default="Phi_prime")
    p.add_argument("--output")
    p.set_defaults(func=cmd_clifford_phi)

    mesh = sub.add_parser("mesh").add_subparsers(dest="action", required=True)
    p = mesh.add_parser("build")
    _ld_args(p)
    for a in p._actions:
        if a.dest == "kcirc":
            a.required = False
    p.add_argument("--k", type=int, help="Clifford lattice size")
    p.add_argument("--alpha", type=float, default=None, help="default: smallest admissible value")
    p.add_argument("--tilts", choices=("none", "mismatch"), default="none")
    p.add_argument("--ds", type=float, default=0.1)
    p.add_argument("--bridge-theta", type=int, default=None, dest="bridge_theta")
    p.add_argument("--out-obj", required=True, dest="out_obj")
    p.add_argument("--output")
    p.set_defaults(func=cmd_mesh_build)
    p = mesh.add_parser("curvature")
    p.add_argument("--input", required=True)
    p.add_argument("--background", default=None)
    p.add_argument("--out-csv", dest="out_csv")
    p.add_argument("--output")
    p.set_defaults(func=cmd_mesh_curvature)

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--only", type=int, nargs="*")
    p.add_argument("--output")
    p.set_defaults(func=cmd_verify, action=None)
    for leaf in _leaf_parsers(top):
        # also accepted after the subcommand; SUPPRESS keeps the top-level value otherwise
        leaf.add_argument("--tol", type=float, default=argparse.SUPPRESS)
        leaf.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    return top


def _leaf_parsers(parser):
    subs = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    if not subs:
        return [parser]
    out = []
    for child in subs[0].choices.values():
        out.extend(_leaf_parsers(child))
    return out


def _fail(code, kind, reason):
    sys.stdout.write(to_json({"error": kind, "reason": reason, "exit_code": code}) + "\n")
    sys.stderr.write(f"ldforge: {kind}: {reason}\n")
    return code


def main(argv=None) -> int:
    from .clifford import CliffordError
    from .geometry import GeometryError
    from .ld_fourier import LdError
    from .ode_core import OdeError
    from .rld import Infeasible, NonConvergence, TooFewCircles

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.tol is not None:
        os.environ["LDFORGE_TOL"] = repr(args.tol)
    if args.save_config:
        with open(args.save_config, "w") as fh:
            fh.write(RunConfig.from_args(args).to_json() + "\n")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (Infeasible, TooFewCircles, GeometryError, CliffordError) as exc:
        return _fail(EXIT_INFEASIBLE, "infeasible", str(exc))
    except (NonConvergence, LdError, OdeError) as exc:
        return _fail(EXIT_NONCONVERGENCE, "nonconvergence", str(exc))
    except ValueError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))


if __name__ == "__main__":
    sys.exit(main())
