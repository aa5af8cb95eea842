"""Forward modal simulation, output traces and observation deconvolution.

Each Fourier coefficient w_n = <w(., t), phi_n> obeys

    w_n' = -lambda_n^2 int_0^t N(t - s) P(s) w_n(s) ds
           + phi_n'(0) int_0^t N(t - s) f(s) ds + b_n g(t),     w_n(0) = 0,

with f the boundary control and g = int_0^t sigma the integrated source signal.
All modes are stepped together; the output is eta = sum_n phi_n'(0) w_n.
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .material import Grid1D, SampledFunction
from .quadrature import (convolve_trapezoid, cumulative_trapezoid, fd_derivative, on_refined,
                         trapezoid)
from .volterra import StepInstabilityError, map_modes, solve_zn_many, volterra_cn

log = logging.getLogger(__name__)


class MissingForcingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrajectorySolution:
    grid: Grid1D
    w_modal: np.ndarray          # (n_modes, n_t)
    w_final: np.ndarray          # w(xi_j, T)
    eta: SampledFunction
    truncation: int
    boundary: SampledFunction = field(repr=False, default=None)

    @property
    def T(self):
        return self.grid.end


def _as_callable(fn):
    if fn is None:
        return None
    if callable(fn):
        return fn
    raise TypeError("forcing must be a SampledFunction or a callable of t")


def _forcing(grid, slopes0, kernel, f, b, g):
    t = grid.samples
    F = np.zeros((len(slopes0), t.size))
    N, _, _ = kernel.on_grid(grid)
    if f is not None:
        Nf = convolve_trapezoid(N, f(t), grid.h)
        F += slopes0[:, None] * Nf[None, :]
    if b is not None:
        F += np.asarray(b, dtype=float)[:, None] * g(t)[None, :]
    return F, N


def simulate_modal(config, basis, T, boundary_f=None, source_b=None, g=None, grid=None,
                   levels=2, threads=1):
    """Integrate the modal system on [0, T] from the zero state.

    ``boundary_f`` and ``g`` are callables of t (a SampledFunction works);
    ``source_b`` holds the coefficients b_n. ``levels`` refined grids are
    combined by Romberg extrapolation at the output nodes.
    """
    if boundary_f is None and (source_b is None or g is None):
        raise MissingForcingError("simulate needs a boundary control f or a source (b, g)")
    if source_b is not None and len(source_b) != basis.n_modes:
        raise ValueError(f"source_b has {len(source_b)} entries, basis has {basis.n_modes}")
    f, gfun = _as_callable(boundary_f), _as_callable(g)
    grid = grid or config.grid_for(T)
    lam2 = basis.lambdas**2

    def run(idx):
        sub_b = None if source_b is None else np.asarray(source_b, dtype=float)[idx]

        def solve(gr):
            F, N = _forcing(gr, basis.slopes0[idx], config.kernel, f, sub_b, gfun)
            P = config.traction(gr.samples)
            w, _ = volterra_cn(lam2[idx], np.ones(gr.n_points), N, P, F,
                               np.zeros(len(idx)), gr.h)
            return (w,)

        return on_refined(solve, grid, levels)[0]

    blocks = np.array_split(np.arange(basis.n_modes), max(1, min(threads, basis.n_modes)))
    w = np.vstack(map_modes(run, blocks, threads))
    if not np.all(np.isfinite(w)):
        raise StepInstabilityError("step-size instability: non-finite modal amplitudes")
    eta = basis.slopes0 @ w
    boundary = None
    if f is not None:
        c0 = float(config.density(np.array([0.0]))[0])
        t = grid.samples
        boundary = SampledFunction(grid, f(t) / (c0 * config.traction(t)))
    return TrajectorySolution(grid, w, basis.synthesize(w[:, -1]), SampledFunction(grid, eta),
                              basis.n_modes, boundary)


def evaluate_solution_series(traj, basis, t_query):
    """Partial sum of w(., t_query) over the simulated modes, and a tail indicator.

    The indicator is the l2 norm of the last quarter of the modal coefficients.
    """
    t = traj.grid.samples
    i = int(np.argmin(np.abs(t - t_query)))
    if abs(t[i] - t_query) > 1e-9 * max(1.0, abs(t_query)):
        raise ValueError("t_query must be a node of the time grid")
    coeffs = traj.w_modal[:, i]
    q = max(1, len(coeffs) // 4)
    return basis.synthesize(coeffs), float(np.linalg.norm(coeffs[-q:]))


def representation_wT(config, basis, T, boundary_f=None, source_b=None, g=None, grid=None,
                      levels=2):
    """w_n(T) from the kernel solutions z_n(.; T) instead of forward stepping.

    w_n(T) = int_0^T f(T - s) e_n(s) ds + b_n int_0^T z_n(T - s) g(s) ds.
    """
    from .moment import moment_functions
    grid = grid or config.grid_for(T)
    t = grid.samples
    zs = solve_zn_many(basis.lambdas, config, T, grid, levels)
    out = np.zeros(basis.n_modes)
    if boundary_f is not None:
        E = moment_functions(zs, basis.slopes0, config.kernel, grid)
        y = E * boundary_f(T - t)[None, :]
        out += trapezoid(y, grid.h, dy=fd_derivative(y, grid.h))
    if source_b is not None:
        Z = np.array([z.z.values[::-1] for z in zs])
        y = Z * g(t)[None, :]
        out += np.asarray(source_b, dtype=float) * trapezoid(y, grid.h,
                                                             dy=fd_derivative(y, grid.h))
    return out


def eta_series(config, basis, source_b, g, t_nodes, grid):
    """eta(t) = sum_n b_n phi_n'(0) int_0^t z_n(t - r; t) g(r) dr at nodes of ``grid``."""
    out = []
    for tq in t_nodes:
        i = int(np.argmin(np.abs(grid.samples - tq)))
        if i == 0:
            out.append(0.0)
            continue
        sub = Grid1D(0.0, float(grid.samples[i]), i + 1)
        zs = solve_zn_many(basis.lambdas, config, sub.end, sub)
        gv = g(sub.samples)
        I = np.array([trapezoid(z.z.values[::-1] * gv, sub.h) for z in zs])
        out.append(float(np.sum(np.asarray(source_b) * basis.slopes0 * I)))
    return np.array(out)


# ------------------------------------------------------------------ observation

def _volterra2(M, rhs, h):
    """x + int_0^t M(t - s) x(s) ds = rhs by trapezoid forward substitution."""
    n = len(rhs)
    x = np.empty(n)
    Mrev = np.ascontiguousarray(M[:n][::-1])
    x[0] = rhs[0]
    d = 1.0 + 0.5 * h * M[0]
    for i in range(1, n):
        s = h * (0.5 * M[i] * x[0] + np.dot(Mrev[n - i:n - 1], x[1:i]))
        x[i] = (rhs[i] - s) / d
    return x


def observation_to_eta(y_obs, traction, density, kernel, levels=3):
    """Recover eta from y = -P(t) c(0) [eta + int_0^t M(t - s) eta(s) ds].

    The observation is interpolated onto refined grids (cubic spline) and the
    trapezoid solutions are Romberg-combined at the original nodes.
    """
    grid = y_obs.grid
    c0 = float(density(np.array([0.0]))[0])
    if kernel.is_zero():
        return SampledFunction(grid, -y_obs.values / (traction(grid.samples) * c0))

    def solve(g):
        t = g.samples
        rhs = -y_obs(t) / (traction(t) * c0)
        _, M, _ = kernel.on_grid(g)
        return (_volterra2(M, rhs, g.h),)

    eta = on_refined(solve, grid, levels)[0]
    return SampledFunction(grid, eta)


def eta_to_observation(eta, traction, density, kernel):
    """Forward map y = -P c(0) (eta + M * eta), endpoint-corrected product trapezoid."""
    grid = eta.grid
    t = grid.samples
    c0 = float(density(np.array([0.0]))[0])
    _, M, dM = kernel.on_grid(grid)
    conv = convolve_trapezoid(M, eta.values, grid.h, dK=dM, du=eta(t, 1))
    return SampledFunction(grid, -traction(t) * c0 * (eta.values + conv))


def integrate_signal(sigma):
    """g(t) = int_0^t sigma, exact for the interpolant of ``sigma``."""
    if sigma.expr is not None:
        fine = sigma.grid.refined(4)
        v = sigma(fine.samples)
        g = cumulative_trapezoid(v, fine.h, dy=sigma(fine.samples, 1))
        return SampledFunction(fine, g)
    anti = sigma._splines[0].antiderivative()
    lo, hi = sigma.grid.start, sigma.grid.end
    return lambda t: anti(np.clip(t, lo, hi))


# ------------------------------------------------------------------ CSV

def _fmt(v):
    return f"{v:.16e}"


def write_eta_csv(traj, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "eta"])
        for t, e in zip(traj.grid.samples, traj.eta.values):
            w.writerow([_fmt(t), _fmt(e)])


def write_wfinal_csv(traj, xi, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "w_final"])
        for x, v in zip(xi, traj.w_final):
            w.writerow([_fmt(x), _fmt(v)])


def write_modal_csv(traj, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"w_{k + 1}" for k in range(traj.truncation)])
        for i, t in enumerate(traj.grid.samples):
            w.writerow([_fmt(t)] + [_fmt(v) for v in traj.w_modal[:, i]])
