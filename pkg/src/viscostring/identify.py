"""Source reconstruction from boundary outputs.

For each k the moment problem with target W = e_k gives a control f_k; the
signal sigma_k = f_k + M * f_k makes g = int sigma_k equal N * f_k, and then
the output at the final time is eta_(k)(T) = <b, phi_k>. The moment system is
factored once and shared by all k.
"""
import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .material import Grid1D, SampledFunction
from .moment import build_moment_system, compute_T0, solve_moment_problem
from .quadrature import convolve_trapezoid
from .simulate import integrate_signal, simulate_modal
from .spectral import solve_eigensystem
from .volterra import map_modes

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    pass


def build_sigma_from_f(f, kernel, corrected=True):
    """sigma = f + int_0^t N'(t - s) f(s) ds on the grid of ``f`` (N' = M)."""
    grid = f.grid
    _, M, dM = kernel.on_grid(grid)
    if corrected:
        conv = convolve_trapezoid(M, f.values, grid.h, dK=dM, du=f(grid.samples, 1))
    else:
        conv = convolve_trapezoid(M, f.values, grid.h)
    return SampledFunction(grid, f.values + conv)


# ------------------------------------------------------------------ oracles

class SimulatorOracle:
    """In-process measurement: runs the modal model with a known source b.

    To avoid an inverse crime the oracle steps on a finer time grid
    (``time_factor`` times the node spacing of the config) and can carry more
    modes than the reconstruction.
    """

    def __init__(self, config, b_values, T, n_modes=None, time_factor=2, levels=2, basis=None):
        self.config = config
        self.T = float(T)
        n = n_modes or config.n_modes
        self.basis = basis if basis is not None else solve_eigensystem(
            config.density, n, config.space_grid)
        self.b_coeffs = self.basis.project(np.asarray(b_values, dtype=float))
        base = config.grid_for(T)
        self.grid = Grid1D(0.0, self.T, time_factor * (base.n_points - 1) + 1)
        self.levels = levels

    def __call__(self, k, sigma):
        g = integrate_signal(sigma)
        traj = simulate_modal(self.config, self.basis, self.T, source_b=self.b_coeffs, g=g,
                              grid=self.grid, levels=self.levels)
        return traj.eta


class FileTraceOracle:
    """Measured traces from disk.

    The manifest is JSON ``{"T": ..., "traces": [{"k": 1, "file": "eta_k0001.csv",
    "T": ...}, ...]}``; file paths are relative to the manifest. Each CSV has
    header ``t,eta``.
    """

    def __init__(self, manifest_path):
        self.base = os.path.dirname(os.path.abspath(manifest_path))
        with open(manifest_path) as fh:
            m = json.load(fh)
        self.T = float(m.get("T", np.nan))
        self.entries = {int(e["k"]): e for e in m.get("traces", [])}

    def __call__(self, k, sigma):
        e = self.entries.get(k)
        if e is None:
            raise OracleError(f"no trace for k = {k} in manifest")
        path = os.path.join(self.base, e["file"])
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, eta = data[:, 0], data[:, 1]
        T = float(e.get("T", self.T))
        if abs(t[-1] - T) > 1e-9 * max(1.0, T):
            raise OracleError(f"trace {path} ends at t = {t[-1]:g}, expected T = {T:g}")
        return SampledFunction(Grid1D(float(t[0]), float(t[-1]), len(t)), eta)


def trace_file_name(k):
    return f"eta_k{k:04d}.csv"


# ------------------------------------------------------------------ pipeline

@dataclass
class SourceEstimate:
    coefficients: np.ndarray        # NaN where the oracle failed
    b_hat: np.ndarray
    n_modes: int
    per_mode_residuals: np.ndarray
    missing: list = field(default_factory=list)
    T: float = float("nan")
    sigmas: list = field(repr=False, default_factory=list)


def identify_source(measure, config, T, n_modes=None, basis=None, ridge=0.0, threads=1,
                    system=None, keep_sigmas=False):
    """b_hat_k = eta_(k)(T) for k = 1..n_modes, and b_hat = sum_k b_hat_k phi_k."""
    n = n_modes or config.n_modes
    basis = (basis or solve_eigensystem(config.density, n, config.space_grid)).truncated(n)
    T0 = compute_T0(config.traction, config.time_grid.end)
    if T < T0:
        log.warning("T = %.6g is below T0 = %.6g; the reconstruction has no guarantee", T, T0)
    system = system or build_moment_system(basis, config, T, threads=threads)
    system.factor(ridge)   # shared factorization, built before the sweep

    def one(k):
        W = np.zeros(n)
        W[k - 1] = 1.0
        ctrl = solve_moment_problem(system, W, ridge)
        sigma = build_sigma_from_f(ctrl.f, config.kernel)
        try:
            eta = measure(k, sigma)
            val = float(np.asarray(eta.values if hasattr(eta, "values") else eta)[-1])
            if not np.isfinite(val):
                raise OracleError("non-finite output")
        except Exception as exc:  # oracle failures are recorded, not fatal
            log.error("oracle failed for k = %d: %s", k, exc)
            val = float("nan")
        return val, ctrl.residual, sigma

    out = map_modes(one, range(1, n + 1), threads)
    coeffs = np.array([o[0] for o in out])
    missing = [k + 1 for k in range(n) if not np.isfinite(coeffs[k])]
    b_hat = basis.synthesize(np.where(np.isfinite(coeffs), coeffs, 0.0))
    return SourceEstimate(coeffs, b_hat, n, np.array([o[1] for o in out]), missing, float(T),
                          [o[2] for o in out] if keep_sigmas else [])


# ------------------------------------------------------------------ CSV

def _fmt(v):
    return f"{v:.16e}"


def write_coefficients_csv(est, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "b_hat_k", "moment_residual"])
        for k in range(est.n_modes):
            w.writerow([k + 1, _fmt(est.coefficients[k]), _fmt(est.per_mode_residuals[k])])


def write_bhat_csv(est, xi, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "b_hat"])
        for x, v in zip(xi, est.b_hat):
            w.writerow([_fmt(x), _fmt(v)])


def write_sigma_csv(sigma, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "sigma"])
        for t, v in zip(sigma.grid.samples, sigma.values):
            w.writerow([_fmt(t), _fmt(v)])
