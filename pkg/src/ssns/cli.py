"""Command line: solve, diagnose, kernel-check, landau, decay-fit.

Exit codes: 0 success, 1 internal, 2 config or parameter, 3 I/O, 4 accuracy,
5 continuation stopped short of the target mu (partial result written).
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import caloric as cal
from . import diagnostics as dg
from . import grid_spectral as gs
from . import io
from . import profile_solver as ps
from . import sphere_data as sph
from . import stokes_duhamel as sd
from .errors import ConfigError, FieldIOError, SSNSError

EXIT_PARTIAL = 5
CHECKS = ("y", "energy", "decay", "scaling", "residual")
BUILTIN_GRID = (32, 64)
CORNER_ALPHA = 0.5

log = logging.getLogger("ssns")


# ---------------------------------------------------------------------------
# datum


def build_trace(cfg: io.RunConfig):
    """Trace on the sphere after mollification, plus its Hoelder label ('smooth' or alpha)."""
    name = cfg.builtin()
    if name is None:
        try:
            tr = sph.read_trace(cfg.trace_file)
        except OSError as e:
            raise FieldIOError(f"cannot read trace {cfg.trace_file}: {e}") from e
        except ValueError as e:
            raise FieldIOError(str(e)) from e
        alpha = "smooth"
    else:
        g = sph.SphereGrid(*BUILTIN_GRID)
        if name == "rotational":
            tr, alpha = sph.rotational_trace(g), "smooth"
        elif name == "swirl_corner":
            tr, alpha = sph.swirl_corner_trace(g, CORNER_ALPHA), CORNER_ALPHA
        else:
            tr, alpha = sph.SphereField(g, np.zeros((g.size, 3))), "smooth"
    if cfg.mollify_eps > 0:
        tr = sph.mollify_sphere(tr, cfg.mollify_eps)
    return tr, alpha


def datum(trace: sph.SphereField) -> sph.HomogeneousField:
    """Homogeneous extension, made divergence free on a fine auxiliary grid if needed."""
    u0 = sph.HomogeneousField(trace)
    if trace.sup_norm() == 0:
        return u0
    return sph.project_divfree(u0, gs.GridSpec(64, 4.0))


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(args) -> int:
    cfg = io.load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(cfg.seed)
    trace, alpha = build_trace(cfg)
    u0 = datum(trace)
    spec = cfg.grid
    if trace.sup_norm() == 0:
        zero = gs.zeros(spec)
        sol = ps.ProfileSolution(cfg.solver.mu_schedule[-1], zero, zero, gs.zeros(spec, 1), 0.0, 0.0, 0.0,
                                 1, True, "ok")
        U0 = cal.CaloricProfile(zero, 1.0, u0)
    else:
        U0 = cal.heat_extend(u0, spec)
        kmap = ps.FixedPointMap(U0, cfg.solver.n_s)
        sol = ps.continuation(u0, spec, cfg.solver, kmap=kmap)
        if sol.U is None:
            sol.U = gs.RealField(spec, sol.mu * U0.field.data + sol.V.data)
            sol.P = gs.zeros(spec, 1)
    pV, pU, pP = io.solution_paths(out)
    io.write_field(pV, sol.V)
    io.write_field(pU, sol.U)
    io.write_field(pP, sol.P)
    io.write_field(out / "U0.ssns", U0.field)
    sph.write_trace(out / "trace.txt", trace)
    ps.write_iteration_csv(out / "iterations.csv", sol.history)
    meta = {"mu": repr(sol.mu), "status": sol.status, "fp_residual": repr(sol.fp_residual),
            "profile_residual": repr(sol.profile_residual), "x_norm": repr(sol.x_norm),
            "alpha": alpha, "tol": repr(cfg.solver.tol), "grid.n": spec.n, "grid.L": repr(spec.L),
            "trace_file": cfg.trace_file, "mollify_eps": repr(cfg.mollify_eps), "config_hash": cfg.hash}
    io.write_metadata(out / "meta.txt", meta)
    rows = [{"check": "fp_residual", "value": sol.fp_residual, "threshold": cfg.solver.tol,
             "passed": sol.fp_residual <= cfg.solver.tol},
            {"check": "profile_residual", "value": sol.profile_residual, "threshold": 10 * cfg.solver.tol,
             "passed": sol.profile_residual <= 10 * cfg.solver.tol}]
    dg.write_report(out / "report.csv", rows, cfg.hash)
    print(f"status={sol.status} mu={sol.mu:g} fp_residual={sol.fp_residual:.3e} "
          f"profile_residual={sol.profile_residual:.3e} x_norm={sol.x_norm:.4e}")
    if sol.status != "ok":
        return EXIT_PARTIAL
    return 0


class StoredSolution:
    """A solution directory written by ``solve``."""

    def __init__(self, directory):
        d = Path(directory)
        pV, pU, pP = io.solution_paths(d)
        for p in (pV, pU, pP, d / "U0.ssns", d / "meta.txt", d / "trace.txt"):
            if not p.exists():
                raise FieldIOError(f"missing solution file {p}")
        self.V = io.read_field(pV)
        self.U = io.read_field(pU)
        self.P = io.read_field(pP)
        self.U0 = io.read_field(d / "U0.ssns")
        self.meta = io.read_metadata(d / "meta.txt")
        try:
            self.trace = sph.read_trace(d / "trace.txt")
            self.mu = float(self.meta["mu"])
            self.tol = float(self.meta.get("tol", "1e-5"))
        except (ValueError, KeyError) as e:
            raise FieldIOError(f"bad solution metadata: {e}") from e
        self.alpha = self.meta.get("alpha", "smooth")
        self.config_hash = self.meta.get("config_hash", "")
        self.u0 = sph.HomogeneousField(self.trace)

    @property
    def spec(self):
        return self.U.spec


def _check_rows(sol: StoredSolution, checks: List[str]) -> List[dict]:
    spec = sol.spec
    w = gs.taper(spec)
    rows = []
    sampler = None
    if {"y", "energy"} & set(checks):
        sampler = dg.ProfileSampler(sol.U, sol.P, window=w, far=sol.u0.scaled(sol.mu))
    if "y" in checks:
        Q = dg.ParabolicCylinder((0.5, 0.0, 0.0), 1.0, 0.5)
        a = dg.y_functional(sampler.velocity, sampler.pressure, Q)
        b = dg.y_functional(sampler.velocity, sampler.pressure, Q.scaled(2.0))
        rel = abs(a.y_value - 2.0 * b.y_value) / max(a.y_value, 1e-300)
        rows.append({"check": "y_scaling", "value": rel, "threshold": 1e-3, "passed": rel <= 1e-3})
        c = dg.y_functional(lambda x, t: np.ones((len(x), 3)), lambda x, t: np.ones(len(x)), Q)
        rows.append({"check": "y_constants", "value": c.y_value, "threshold": 0.0, "passed": c.y_value == 0.0})
    if "energy" in checks:
        r = dg.local_energy_residual(sampler, dg.SpaceTimeBump())
        rel = abs(float(r)) / max(r.terms["dissipation"], 1e-300)
        rows.append({"check": "local_energy", "value": rel, "threshold": 1e-3, "passed": rel <= 1e-3})
    if "decay" in checks:
        if np.any(sol.V.data):
            D = gs.RealField(spec, sol.U.data - sol.mu * sol.U0.data)
            name = "decay_U_minus_caloric"
        else:
            u = sph.sample_on_grid(sol.u0, spec, 2 * spec.h)
            D = gs.RealField(spec, sol.U0.data - u.data)
            name = "decay_caloric_minus_u0"
        if not np.any(D.data):
            rows.append({"check": name, "value": math.inf, "threshold": "zero field", "passed": True})
        else:
            fit = sd.decay_fit(D, gradient=False)
            if sol.alpha == "smooth":
                ok, thr = 2.5 <= fit.exponent <= 3.5, "[2.5,3.5]"
            else:
                ok, thr = fit.exponent >= 1.2, ">=1.2"
            rows.append({"check": name, "value": fit.exponent, "threshold": thr, "passed": ok})
    if "scaling" in checks:
        rng = np.random.default_rng(0)
        pts = [(rng.uniform(-1, 1, 3), float(rng.uniform(0.5, 1.0))) for _ in range(20)]
        err = dg.scaling_invariance_check(sol.U, 2.0, pts)
        rows.append({"check": "scaling", "value": err, "threshold": 1e-6, "passed": err <= 1e-6})
    if "residual" in checks:
        u = sph.sample_on_grid(sol.u0, spec, 2 * spec.h).data
        tail = ps.tail_stress(u, spec, w, sol.mu)
        r = dg.profile_residual(sol.U, sol.P, window=w, tail=tail)
        thr = 10 * sol.tol
        rows.append({"check": "profile_residual_leray", "value": r.leray, "threshold": thr,
                     "passed": r.leray <= thr})
    return rows


def cmd_diagnose(args) -> int:
    checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    bad = [c for c in checks if c not in CHECKS]
    if bad or not checks:
        raise ConfigError(f"unknown checks {bad}; choose from {','.join(CHECKS)}")
    sol = StoredSolution(args.solution)
    rows = _check_rows(sol, checks)
    out = Path(args.out or args.solution)
    out.mkdir(parents=True, exist_ok=True)
    dg.write_report(out / "report.csv", rows, sol.config_hash)
    for r in rows:
        print(f"{r['check']}: {float(r['value']):.4g} ({'pass' if r['passed'] else 'FAIL'})")
    return 0 if all(r["passed"] for r in rows) else 4


def _float_list(text: str) -> List[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


def cmd_kernel_check(args) -> int:
    radii = _float_list(args.radii)
    if len(radii) < 2:
        raise ConfigError("need at least two radii")
    rows = sd.kernel_ratio_rows(args.alpha, args.beta, radii)
    if args.out:
        sd.write_kernel_csv(args.out, rows)
    ok = True
    for r in rows:
        good = abs(r["measured_ratio"] - r["expected_ratio"]) <= 0.25 * r["expected_ratio"]
        ok &= good
        print(f"R={r['R']:g} I={r['I']:.6e} measured={r['measured_ratio']:.5f} "
              f"expected={r['expected_ratio']:.5f} {'pass' if good else 'FAIL'}")
    return 0 if ok else 4


def cmd_landau(args) -> int:
    spec = gs.GridSpec(args.n, args.L)
    U, P = dg.landau_on_grid(args.b, spec)
    out = Path(args.out)
    io.write_field(out, U)
    io.write_field(out.with_name(out.stem + "_P" + out.suffix), P)
    io.write_metadata(out.with_suffix(".meta"), {"b": repr(args.b), "grid.n": spec.n, "grid.L": repr(spec.L),
                                                 "r_min": 0.5})
    x = np.array([[1.0, 0.4, -0.3]])
    f = dg.LandauField(args.b)
    hom = float(np.max(np.abs(2.0 * f.velocity(2.0 * x) - f.velocity(x))))
    print(f"wrote {out}; homogeneity defect {hom:.2e}")
    return 0


def cmd_decay_fit(args) -> int:
    f = io.read_field(args.field)
    shells = _float_list(args.shells) if args.shells else None
    fit = sd.decay_fit(f if f.ncomp == 3 else gs.RealField(f.spec, np.repeat(f.data, 3, 0)), shells,
                       gradient=f.ncomp == 3, offset=args.offset)
    print(f"exponent={fit.exponent:.4f} prefactor={fit.prefactor:.4e} r2={fit.r2:.5f}")
    if fit.grad is not None:
        print(f"grad_exponent={fit.grad.exponent:.4f}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssns", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="continuation in mu from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)
    s = sub.add_parser("diagnose", help="checks on a solution directory")
    s.add_argument("solution")
    s.add_argument("--checks", default=",".join(CHECKS))
    s.add_argument("--out")
    s.set_defaults(func=cmd_diagnose)
    s = sub.add_parser("kernel-check", help="ratio test of the convolution-kernel integral")
    s.add_argument("--alpha", type=int, required=True)
    s.add_argument("--beta", type=int, required=True)
    s.add_argument("--radii", default="16,32")
    s.add_argument("--out")
    s.set_defaults(func=cmd_kernel_check)
    s = sub.add_parser("landau", help="write a Landau solution as a field file")
    s.add_argument("--b", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--L", type=float, default=8.0)
    s.set_defaults(func=cmd_landau)
    s = sub.add_parser("decay-fit", help="power-law fit of |f| over shells")
    s.add_argument("field")
    s.add_argument("--shells")
    s.add_argument("--offset", type=float, default=0.0, help="fit against log(offset + r)")
    s.set_defaults(func=cmd_decay_fit)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except SSNSError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except (OSError, MemoryError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3 if isinstance(e, OSError) else 1
    except ValueError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - reported as an internal error
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
