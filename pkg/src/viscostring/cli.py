"""Command-line driver.

    viscostring --config cfg.json --out run/ eig
    viscostring --config cfg.json t0
    viscostring --config cfg.json control --target indicator:1,2
    viscostring --config cfg.json simulate --forcing mode:1 --sigma 1
    viscostring --config cfg.json identify --truth indicator:1,2
    viscostring --config cfg.json diagnostics --T-factors 0.8,1.2 --n-list 8,16,32

Exit codes: 0 success, 2 bad input, 3 numerical failure.
"""
import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .expr import Expression, ExpressionError
from .material import ConfigError, SampledFunction, canonical_json, load_config
from .quadrature import trapezoid

log = logging.getLogger("viscostring")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class SpecError(ValueError):
    pass


@dataclass
class RunManifest:
    config_hash: str
    command: str
    tool_version: str
    seed: int
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def write(self, out_dir):
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return path


class _Run:
    """Per-invocation context: config, output dir, manifest and stage timer."""

    def __init__(self, args, config):
        self.args = args
        self.config = config
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        digest = hashlib.sha256(canonical_json(config).encode()).hexdigest()
        self.manifest = RunManifest(digest, " ".join(["viscostring"] + sys.argv[1:]),
                                    __version__, args.seed)
        self._t = time.perf_counter()

    def stage(self, name):
        now = time.perf_counter()
        self.manifest.timings[name] = round(now - self._t, 6)
        self._t = now

    def path(self, name):
        p = self.out / name
        self.manifest.outputs.append(str(p))
        return str(p)

    def finish(self):
        self.manifest.write(self.out)


# ------------------------------------------------------------------ spec strings

def parse_shape(spec, xi, basis=None):
    """Values on the space grid from "mode:k", "indicator:a,b", "expr:..." or "file:path"."""
    kind, _, rest = spec.partition(":")
    if not rest:
        raise SpecError(f"malformed spec {spec!r}; expected kind:value")
    if kind == "mode":
        try:
            k = int(rest)
        except ValueError:
            raise SpecError(f"mode index must be an integer, got {rest!r}") from None
        if basis is None or not 1 <= k <= basis.n_modes:
            raise SpecError(f"mode {k} outside 1..{0 if basis is None else basis.n_modes}")
        return basis.phis[k - 1].copy()
    if kind == "indicator":
        try:
            a, b = (float(v) for v in rest.split(","))
        except ValueError:
            raise SpecError(f"indicator needs 'a,b', got {rest!r}") from None
        if not 0.0 <= a < b <= math.pi:
            raise SpecError("indicator interval must satisfy 0 <= a < b <= pi")
        return ((xi >= a) & (xi <= b)).astype(float)
    if kind == "expr":
        try:
            return np.broadcast_to(Expression(rest, var="xi")(xi), xi.shape).astype(float)
        except ExpressionError as exc:
            raise SpecError(str(exc)) from None
    if kind == "file":
        return _read_profile(rest, xi)
    raise SpecError(f"unknown spec kind {kind!r} (mode, indicator, expr, file)")


def _read_profile(path, x):
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#",
                          skiprows=_header_rows(path))
    except (OSError, ValueError) as exc:
        raise SpecError(f"cannot read {path}: {exc}") from None
    if data.shape[1] >= 2:
        return np.interp(x, data[:, 0], data[:, 1])
    if data.shape[0] != len(x):
        raise SpecError(f"{path}: {data.shape[0]} samples, grid has {len(x)}")
    return data[:, 0]


def _header_rows(path):
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.strip().split(",")]
        return 0
    except ValueError:
        return 1


def parse_signal(spec, grid):
    """A time signal: "expr:<in t>" or "file:path" (CSV t,value); bare text is an expression."""
    kind, sep, rest = spec.partition(":")
    if not sep or kind not in ("expr", "file"):
        kind, rest = "expr", spec
    if kind == "expr":
        try:
            e = Expression(rest, var="t")
        except ExpressionError as exc:
            raise SpecError(str(exc)) from None
        return SampledFunction.from_expression(e, grid)
    return SampledFunction(grid, _read_profile(rest, grid.samples))


def _float_list(text, name):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise SpecError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise SpecError(f"{name}: empty list")
    return vals


# ------------------------------------------------------------------ commands

def _basis(run, n=None):
    from .spectral import solve_eigensystem
    b = solve_eigensystem(run.config.density, n or run.config.n_modes, run.config.space_grid,
                          rtol=run.args.tol)
    run.stage("eigensystem")
    return b


def _horizon(run, T):
    from .moment import compute_T0
    T0 = compute_T0(run.config.traction, run.config.time_grid.end)
    T = float(T) if T is not None else 1.2 * T0
    if T > run.config.time_grid.end + 1e-12:
        raise SpecError(f"T = {T:g} exceeds time_grid.t_max = {run.config.time_grid.end:g}")
    if T < T0:
        log.warning("T = %.6g below T0 = %.6g; controllability not guaranteed", T, T0)
    return T, T0


def cmd_eig(run):
    from .spectral import check_asymptotics, write_asymptotics_csv, write_eig_csv, write_phi_csv
    b = _basis(run)
    rep = check_asymptotics(b)
    write_eig_csv(b, run.path("eig.csv"))
    write_asymptotics_csv(rep, run.path("asymptotics.csv"))
    if run.args.phi:
        write_phi_csv(b, run.path("phi.csv"))
    print(f"asymptotics: {rep.status} (sup |H_n| = {rep.sup_H:.6e}, "
          f"travel time = {rep.travel_time:.12g})")


def cmd_t0(run):
    from .moment import compute_T0
    T0 = compute_T0(run.config.traction, run.config.time_grid.end)
    run.stage("t0")
    with open(run.path("t0.json"), "w") as fh:
        json.dump({"T0": T0}, fh, indent=2)
    print(f"{T0:.16e}")


def cmd_control(run):
    from .moment import (build_moment_system, forward_moments, solve_moment_problem,
                         write_coefficients_csv, write_control_csv)
    from .simulate import simulate_modal
    cfg = run.config
    b = _basis(run)
    T, T0 = _horizon(run, run.args.T)
    W = b.project(parse_shape(run.args.target, b.xi, b))
    system = build_moment_system(b, cfg, T, threads=run.args.threads)
    run.stage("moment-system")
    sig = solve_moment_problem(system, W, run.args.ridge)
    run.stage("solve")
    write_control_csv(sig, run.path("control.csv"))
    write_coefficients_csv(sig, run.path("residuals.csv"))
    report = {"T": T, "T0": T0, "eig_min": system.eig_min, "eig_max": system.eig_max,
              "cond": system.cond, "moment_residual": sig.residual, "control_norm": sig.norm,
              "forward_moment_error": float(np.max(np.abs(forward_moments(system, sig.f) - W)))}
    if run.args.verify:
        traj = simulate_modal(cfg, b, T, boundary_f=sig.f, threads=run.args.threads)
        target = b.synthesize(W)
        h = cfg.space_grid.h
        num = math.sqrt(trapezoid((traj.w_final - target) ** 2, h))
        den = math.sqrt(trapezoid(target**2, h))
        report["round_trip_relative_error"] = num / den if den > 0 else num
        run.stage("verify")
    with open(run.path("control_report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(json.dumps(report, sort_keys=True))


def cmd_simulate(run):
    from .simulate import (integrate_signal, representation_wT, simulate_modal, write_eta_csv,
                           write_modal_csv, write_wfinal_csv)
    cfg = run.config
    a = run.args
    if a.forcing is None and a.boundary is None:
        raise SpecError("simulate needs --forcing and/or --boundary")
    b = _basis(run)
    T = float(a.T) if a.T is not None else cfg.time_grid.end
    if T > cfg.time_grid.end + 1e-12:
        raise SpecError(f"T = {T:g} exceeds time_grid.t_max")
    grid = cfg.grid_for(T)
    bn = g = f = None
    if a.forcing is not None:
        bn = b.project(parse_shape(a.forcing, b.xi, b))
        g = integrate_signal(parse_signal(a.sigma, grid))
    if a.boundary is not None:
        f = parse_signal(a.boundary, grid)
    traj = simulate_modal(cfg, b, T, boundary_f=f, source_b=bn, g=g, threads=a.threads)
    run.stage("simulate")
    write_eta_csv(traj, run.path("eta.csv"))
    write_wfinal_csv(traj, b.xi, run.path("wfinal.csv"))
    if a.modal:
        write_modal_csv(traj, run.path("modal.csv"))
    if a.cross_check:
        rep = representation_wT(cfg, b, T, boundary_f=f, source_b=bn, g=g)
        diff = np.abs(traj.w_modal[:, -1] - rep)
        scale = max(float(np.max(np.abs(rep))), 1e-300)
        out = {"max_abs_difference": float(diff.max()), "max_relative_difference": diff.max() / scale}
        with open(run.path("cross_check.json"), "w") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)
        run.stage("cross-check")
        print(json.dumps(out, sort_keys=True))


def cmd_identify(run):
    from .identify import (FileTraceOracle, SimulatorOracle, identify_source, trace_file_name,
                           write_bhat_csv, write_coefficients_csv, write_sigma_csv)
    cfg = run.config
    a = run.args
    n = a.n_modes or cfg.n_modes
    if (a.truth is None) == (a.traces is None):
        raise SpecError("identify needs exactly one of --truth or --traces")
    b = _basis(run, n)
    T, _ = _horizon(run, a.T)
    if a.truth is not None:
        truth = parse_shape(a.truth, b.xi, b)
        oracle = SimulatorOracle(cfg, truth, T, n_modes=a.oracle_modes or 2 * n,
                                 time_factor=a.oracle_refine)
    else:
        oracle = FileTraceOracle(a.traces)
        if np.isfinite(oracle.T):
            T = oracle.T
    run.stage("setup")
    est = identify_source(oracle, cfg, T, n, basis=b, ridge=a.ridge, threads=a.threads,
                          keep_sigmas=a.emit_sigma)
    run.stage("identify")
    write_coefficients_csv(est, run.path("coefficients.csv"))
    write_bhat_csv(est, b.xi, run.path("bhat.csv"))
    if a.emit_sigma:
        d = run.out / "sigma"
        d.mkdir(exist_ok=True)
        for k, s in enumerate(est.sigmas, start=1):
            write_sigma_csv(s, run.path(os.path.join("sigma", f"sigma_k{k:04d}.csv")))
        manifest = {"T": T, "traces": [{"k": k, "file": trace_file_name(k), "T": T}
                                       for k in range(1, n + 1)]}
        with open(run.path(os.path.join("sigma", "traces_manifest.json")), "w") as fh:
            json.dump(manifest, fh, indent=2)
    if a.truth is not None:
        proj = b.project(truth)
        den = float(np.linalg.norm(proj))
        err = float(np.linalg.norm(np.nan_to_num(est.coefficients) - proj))
        print(f"projected relative error: {err / den if den > 0 else err:.6e}")
    if est.missing:
        print(f"missing coefficients: {est.missing}")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_diagnostics(run):
    from .moment import compute_T0, riesz_diagnostics, write_diagnostics_csv
    cfg = run.config
    a = run.args
    n_list = [int(v) for v in _float_list(a.n_list, "--n-list")]
    if any(n < 1 for n in n_list):
        raise SpecError("--n-list entries must be >= 1")
    T0 = compute_T0(cfg.traction, cfg.time_grid.end)
    if a.T_list:
        T_list = _float_list(a.T_list, "--T-list")
    else:
        T_list = [f * T0 for f in _float_list(a.T_factors, "--T-factors")]
    if max(T_list) > cfg.time_grid.end + 1e-12:
        raise SpecError("a requested T exceeds time_grid.t_max")
    b = _basis(run, max(n_list))
    rep = riesz_diagnostics(cfg, b, T_list, n_list, threads=a.threads,
                            with_deficiency=not a.no_deficiency)
    run.stage("diagnostics")
    write_diagnostics_csv(rep, run.path("riesz.csv"))
    print(f"T0 = {rep.T0:.12g}; bounded above T0: {rep.above_T0_bounded}; "
          f"collapse below T0: {rep.below_T0_collapsed}; D_N trend bounded: {rep.D_trend_bounded}")


COMMANDS = {"eig": cmd_eig, "t0": cmd_t0, "control": cmd_control, "simulate": cmd_simulate,
            "identify": cmd_identify, "diagnostics": cmd_diagnostics}


# ------------------------------------------------------------------ parser

def _global_flags(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="material config JSON")
    p.add_argument("--out", default=d("."), help="output directory (default: .)")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads for per-mode work")
    p.add_argument("--tol", type=float, default=d(1e-6),
                   help="relative eigenvalue convergence tolerance (default 1e-6)")
    p.add_argument("--seed", type=int, default=d(None), help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser():
    p = argparse.ArgumentParser(prog="viscostring",
                                description="Viscoelastic string with variable traction: "
                                            "spectra, controls, simulation, identification.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        return sp

    e = add("eig", "eigenpairs and asymptotic checks")
    e.add_argument("--phi", action="store_true", help="also write the eigenfunctions")
    add("t0", "critical control time")
    c = add("control", "minimal-norm boundary control for a target shape")
    c.add_argument("--target", required=True, help="mode:k | indicator:a,b | expr:... | file:path")
    c.add_argument("--T", type=float, default=None, help="horizon (default 1.2 T0)")
    c.add_argument("--ridge", type=float, default=0.0)
    c.add_argument("--verify", action="store_true", help="forward-simulate the control")
    s = add("simulate", "forward simulation of the modal system")
    s.add_argument("--forcing", default=None, help="source shape b: mode:k | indicator:a,b | ...")
    s.add_argument("--sigma", default="1", help="source signal sigma(t) (expr or file:path)")
    s.add_argument("--boundary", default=None, help="boundary control f(t) (expr or file:path)")
    s.add_argument("--T", type=float, default=None, help="horizon (default time_grid.t_max)")
    s.add_argument("--modal", action="store_true", help="dump all modal amplitudes")
    s.add_argument("--cross-check", action="store_true",
                   help="recompute w_n(T) from the kernel-solution representation")
    i = add("identify", "reconstruct the source shape b")
    i.add_argument("--truth", default=None, help="simulate with this b (shape string)")
    i.add_argument("--traces", default=None, help="manifest JSON of measured eta traces")
    i.add_argument("--T", type=float, default=None, help="horizon (default 1.2 T0)")
    i.add_argument("--n-modes", type=int, default=None)
    i.add_argument("--ridge", type=float, default=0.0)
    i.add_argument("--oracle-modes", type=int, default=None, help="default 2 x n-modes")
    i.add_argument("--oracle-refine", type=int, default=2, help="oracle time refinement")
    i.add_argument("--emit-sigma", action="store_true",
                   help="write the input signals sigma_k and a trace manifest template")
    d = add("diagnostics", "Gram spectra and deficiency sums over T and n sweeps")
    d.add_argument("--T-list", default=None, help="explicit horizons, comma-separated")
    d.add_argument("--T-factors", default="0.8,1.2", help="horizons as multiples of T0")
    d.add_argument("--n-list", default="8,16,32")
    d.add_argument("--no-deficiency", action="store_true", help="skip the D_N sums")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .moment import HorizonTooShortError, MomentError
    from .spectral import SpectralError
    from .volterra import StepInstabilityError
    try:
        if args.config is None:
            raise SpecError("--config is required")
        if args.threads < 1:
            raise SpecError("--threads must be >= 1")
        if not args.tol > 0:
            raise SpecError("--tol must be > 0")
        config = load_config(args.config)
        if args.seed is None:
            args.seed = config.seed
        run = _Run(args, config)
        code = COMMANDS[args.command](run) or EXIT_OK
        run.finish()
        return code
    except (ConfigError, SpecError, HorizonTooShortError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SpectralError, StepInstabilityError, MomentError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # never a traceback for the user
        print(f"error: unexpected failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
