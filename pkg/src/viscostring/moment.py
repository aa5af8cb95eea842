"""Moment basis, Gram matrix, minimal-norm boundary control and Riesz diagnostics.

For a horizon T the moment functions are

    e_n(t) = phi_n'(0) int_0^t N(t - r) z_n(r; T) dr,

and a boundary control f steers the zero state to w(., T) = W exactly when
int_0^T f(T - s) e_n(s) ds = W_n for every n. Seeking f in the span of the
reflected e_m(T - .) turns this into the Gram system G c = W.
"""
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.optimize import bisect

from .material import SampledFunction
from .quadrature import convolve_trapezoid, fd_derivative, trapezoid
from .spectral import SQRT_2_PI
from .volterra import (build_C_and_B, build_transform_chain, compute_Zn, map_modes, solve_Yn,
                       solve_zn_many)

log = logging.getLogger(__name__)

T0_XTOL = 1e-12
# Gram systems worse than this are treated as singular when no ridge is given
COND_LIMIT = 1e12


class MomentError(RuntimeError):
    pass


class HorizonTooShortError(ValueError):
    pass


class SingularGramError(MomentError):
    pass


# ------------------------------------------------------------------ T0

def _sqrtP_integral(traction, T):
    expr = traction.P.expr
    if expr is not None:
        val, _ = quad(lambda u: math.sqrt(float(expr(np.array([u]))[0])), 0.0, T,
                      epsabs=1e-14, epsrel=1e-13, limit=200)
        return val
    g = traction.P.grid
    # spline quadrature on the samples, clipped to the sampled range
    from scipy.interpolate import CubicSpline
    spl = CubicSpline(g.samples, np.sqrt(traction.P.values))
    return float(spl.integrate(0.0, T))


def compute_T0(traction, t_max=None):
    """Unique T0 with int_0^T0 sqrt(P(u)) du = pi (bisection)."""
    t_max = float(t_max if t_max is not None else traction.P.grid.end)
    total = _sqrtP_integral(traction, t_max)
    if total < math.pi:
        raise HorizonTooShortError(
            f"horizon-too-short: int_0^{t_max:g} sqrt(P) = {total:.6g} < pi; "
            "extend the traction samples / time_grid.t_max")
    return float(bisect(lambda T: _sqrtP_integral(traction, T) - math.pi, 0.0, t_max,
                        xtol=T0_XTOL, rtol=4 * np.finfo(float).eps, maxiter=200))


# ------------------------------------------------------------------ moment system

@dataclass(frozen=True, eq=False)
class MomentSystem:
    T: float
    grid: object
    basis_funcs: np.ndarray   # (n_modes, n_t)
    gram: np.ndarray
    eig_min: float
    eig_max: float
    slopes0: np.ndarray = field(repr=False, default=None)
    _chol: dict = field(repr=False, default_factory=dict)

    @property
    def n_modes(self):
        return self.basis_funcs.shape[0]

    @property
    def cond(self):
        return self.eig_max / self.eig_min if self.eig_min > 0 else math.inf

    def factor(self, ridge=0.0):
        """Cholesky factor of G + ridge I, cached per ridge value."""
        key = float(ridge)
        if key not in self._chol:
            if key == 0.0 and not (self.eig_min > 0 and self.cond < COND_LIMIT):
                raise SingularGramError(
                    f"singular Gram (eig_min = {self.eig_min:.3e}, cond = {self.cond:.3e}): "
                    "the horizon is probably below T0 or the configuration is degenerate; "
                    "use T >= T0 or pass a ridge > 0")
            A = self.gram + key * np.eye(self.n_modes)
            try:
                self._chol[key] = cho_factor(A, lower=True)
            except np.linalg.LinAlgError as exc:
                raise SingularGramError(f"Gram + ridge not positive definite: {exc}") from exc
        return self._chol[key]


def moment_functions(zs, slopes0, kernel, grid):
    """e_n on ``grid`` from kernel solutions z_n(.; T) sampled on the same grid."""
    N, M, _ = kernel.on_grid(grid)
    E = np.empty((len(zs), grid.n_points))
    for j, (z, s) in enumerate(zip(zs, slopes0)):
        if z.z.grid.n_points != grid.n_points or abs(z.z.grid.end - grid.end) > 1e-12:
            raise ValueError("inconsistent grids: z_n and kernel must share the time grid")
        zp = z.zprime if z.zprime is not None else fd_derivative(z.z.values, grid.h)
        E[j] = s * convolve_trapezoid(N, z.z.values, grid.h, dK=M, du=zp)
    E[:, 0] = 0.0
    return E


def gram_matrix(E, h):
    """G_nm = int e_n e_m by endpoint-corrected trapezoid, fixed loop order."""
    dE = fd_derivative(E, h)
    n = E.shape[0]
    G = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = trapezoid(E[i] * E[j], h, dy=dE[i] * E[j] + E[i] * dE[j])
    return G


def build_moment_system(basis, config, T, zs=None, grid=None, threads=1, levels=2):
    """Assemble e_n, n = 1..basis.n_modes, and their Gram matrix at horizon T."""
    grid = grid or config.grid_for(T)
    if zs is None:
        # one batched pass per block of modes; blocks run on the worker pool
        blocks = np.array_split(np.arange(basis.n_modes), max(1, min(threads, basis.n_modes)))
        zs = [z for blk in map_modes(
            lambda idx: solve_zn_many(basis.lambdas[idx], config, T, grid, levels, idx[0] + 1),
            blocks, threads) for z in blk]
    E = moment_functions(zs, basis.slopes0, config.kernel, grid)
    G = gram_matrix(E, grid.h)
    w = eigh(G, eigvals_only=True)
    return MomentSystem(float(T), grid, E, G, float(w[0]), float(w[-1]), basis.slopes0)


@dataclass(frozen=True, eq=False)
class ControlSignal:
    f: SampledFunction
    coefficients: np.ndarray
    targets: np.ndarray
    residual: float
    norm: float


def solve_moment_problem(system, targets, ridge=0.0):
    """Minimal-norm f = sum_m c_m e_m(T - .) with (G + ridge I) c = W."""
    W = np.asarray(targets, dtype=float)
    if W.shape != (system.n_modes,):
        raise ValueError(f"need {system.n_modes} targets, got {W.shape}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if not np.any(W):
        c = np.zeros_like(W)
    else:
        c = cho_solve(system.factor(ridge), W)
    f = c @ system.basis_funcs[:, ::-1]
    residual = float(np.linalg.norm(system.gram @ c - W))
    norm = float(math.sqrt(max(trapezoid(f * f, system.grid.h), 0.0)))
    return ControlSignal(SampledFunction(system.grid, f), c, W, residual, norm)


def forward_moments(system, f):
    """int_0^T f(T - s) e_n(s) ds by plain trapezoid on the system grid."""
    fr = np.asarray(f.values if hasattr(f, "values") else f, dtype=float)[::-1]
    return trapezoid(system.basis_funcs * fr[None, :], system.grid.h)


# ------------------------------------------------------------------ diagnostics

@dataclass
class DiagnosticsRow:
    T: float
    n_modes: int
    eig_min: float
    eig_max: float
    cond: float
    D_N: float


@dataclass
class DiagnosticsReport:
    T0: float
    rows: list
    above_T0_bounded: bool
    below_T0_collapsed: bool
    D_trend_bounded: bool


def deficiency_sums(config, basis, T, n_list, chain=None):
    """D_N = sum_{n <= N} ||Z_n - y0 sqrt(2/pi) sin(n .)||^2 on (0, S), for N in n_list."""
    chain = chain or build_transform_chain(config, T)
    kb = build_C_and_B(chain, config.kernel)
    WB = kb.weighted_B
    x = chain.x_grid.samples
    terms = []
    for n in range(1, max(n_list) + 1):
        tm = solve_Yn(basis.lambdas[n - 1], chain, n)
        Z = compute_Zn(basis.slopes0[n - 1], tm, kb, WB)
        d = Z.values - chain.y0 * SQRT_2_PI * np.sin(n * x)
        terms.append(trapezoid(d * d, chain.x_grid.h))
    cum = np.cumsum(terms)
    return {N: float(cum[N - 1]) for N in n_list}


def riesz_diagnostics(config, basis, T_list, n_list, threads=1, with_deficiency=True):
    """Gram spectra over a (T, n_modes) sweep, plus deficiency sums D_N.

    One moment system per T at the largest n; smaller n use its leading block.
    """
    from .spectral import tail_bounded
    T0 = compute_T0(config.traction, config.time_grid.end)
    rows = []
    n_max = max(n_list)
    b = basis.truncated(n_max)
    for T in T_list:
        system = build_moment_system(b, config, T, threads=threads)
        D = deficiency_sums(config, b, T, n_list) if with_deficiency else {}
        for n in n_list:
            w = eigh(system.gram[:n, :n], eigvals_only=True)
            rows.append(DiagnosticsRow(float(T), int(n), float(w[0]), float(w[-1]),
                                       float(w[-1] / w[0]) if w[0] > 0 else math.inf,
                                       D.get(n, math.nan)))
    above = [r.eig_min for r in rows if r.T > T0 and r.n_modes == n_max]
    below = [r.eig_min for r in rows if r.T < T0 and r.n_modes == n_max]
    above_ok = bool(above) and min(above) > 1e-6 * max(r.eig_max for r in rows)
    below_collapsed = bool(below) and bool(above) and max(below) < 1e-2 * min(above)
    D_ok = True
    if with_deficiency:
        for T in T_list:
            seq = [r.D_N for r in rows if r.T == T]
            incr = np.diff(np.r_[0.0, seq])
            D_ok &= tail_bounded(incr, 1e-12)
    return DiagnosticsReport(T0, rows, above_ok, below_collapsed, bool(D_ok))


# ------------------------------------------------------------------ CSV

def _fmt(v):
    return f"{v:.16e}"


def write_control_csv(sig, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "f"])
        for t, f in zip(sig.f.grid.samples, sig.f.values):
            w.writerow([_fmt(t), _fmt(f)])


def write_coefficients_csv(sig, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "W_n", "c_n"])
        for k, (W, c) in enumerate(zip(sig.targets, sig.coefficients)):
            w.writerow([k + 1, _fmt(W), _fmt(c)])


def write_diagnostics_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "n_modes", "eig_min", "eig_max", "cond", "D_N"])
        for r in report.rows:
            w.writerow([_fmt(r.T), r.n_modes, _fmt(r.eig_min), _fmt(r.eig_max), _fmt(r.cond),
                        _fmt(r.D_N)])
