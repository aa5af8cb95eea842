"""Per-mode memory equations and the Liouville-type transformation chain.

The kernel solutions z_n(t; T) solve

    z' = -lambda^2 Q(t) int_0^t N(t - s) z(s) ds,   z(0) = 1,   Q(t) = P(T - t).

The chain maps z_n to Y_n(x) on [0, S], S = int_0^T sqrt(Q), through

    z_n(t) = exp(-H(t)) a(t) Y_n(L(t)),

where Y_n solves Y'' + (lambda^2 + V) Y = -lambda^2 int_0^x A(x, r) Y(r) dr.

All time stepping is trapezoidal (Crank-Nicolson for the local part, product
trapezoid for the memory part), second order; solutions on successively
halved steps are Romberg-combined at the output nodes.
"""
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from scipy.interpolate import CubicSpline

from .material import Grid1D, SampledFunction
from .quadrature import (convolve_trapezoid, cumulative_trapezoid, fd_derivative,
                         fd_second_derivative, on_refined, richardson)

log = logging.getLogger(__name__)

TOL_VOLTERRA = 1e-6


class StepInstabilityError(RuntimeError):
    pass


def map_modes(fn, items, threads=1):
    """Ordered map over independent per-mode computations."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ------------------------------------------------------------------ steppers

def volterra_cn(lam2, q, K, p, F, y0, h):
    """Trapezoidal solve of y' = -lam2 q(t) int_0^t K(t-s) p(s) y(s) ds + F(t).

    Arrays ``q, K, p`` are samples on the uniform grid. ``lam2`` may be a
    vector of m modes with ``F`` and ``y0`` of shape (m, n) and (m,); all modes
    then advance together. Returns (y, y') shaped like ``F``.
    """
    lam2 = np.asarray(lam2, dtype=float)
    F = np.asarray(F, dtype=float)
    single = lam2.ndim == 0
    lam2 = np.atleast_1d(lam2)
    m, n = lam2.size, F.shape[-1]
    F = np.broadcast_to(F, (m, n))
    y = np.empty((m, n))
    v = np.empty((m, n))
    py = np.empty((m, n))
    Krev = np.ascontiguousarray(K[:n][::-1])
    y[:, 0] = y0
    py[:, 0] = p[0] * y[:, 0]
    v[:, 0] = F[:, 0]
    half_h = 0.5 * h
    diag = 0.25 * h * h * lam2 * K[0]
    for i in range(1, n):
        # memory integral without the (implicit) j = i term
        J = h * (0.5 * K[i] * py[:, 0] + py[:, 1:i] @ Krev[n - i:n - 1])
        lq = lam2 * q[i]
        y[:, i] = ((y[:, i - 1] + half_h * v[:, i - 1] + half_h * (F[:, i] - lq * J))
                   / (1.0 + diag * q[i] * p[i]))
        py[:, i] = p[i] * y[:, i]
        v[:, i] = -lq * (J + half_h * K[0] * py[:, i]) + F[:, i]
    if single:
        return y[0], v[0]
    return y, v


def second_order_cn(lam2, Vx, A, y0, y1, h):
    """Trapezoidal solve of Y'' + (lam2 + V) Y = -lam2 int_0^x A(x, r) Y(r) dr.

    Written as the system (Y, U = Y'); the memory term uses the product
    trapezoid and its diagonal weight is folded into the implicit step.
    """
    n = len(Vx)
    Y = np.empty(n)
    U = np.empty(n)
    Fv = np.empty(n)
    Y[0], U[0] = y0, y1
    Fv[0] = -(lam2 + Vx[0]) * y0
    hh = 0.25 * h * h
    for i in range(1, n):
        Ai = A[i]
        Ip = h * (0.5 * Ai[0] * Y[0] + np.dot(Ai[1:i], Y[1:i]))
        kappa = lam2 + Vx[i] + lam2 * 0.5 * h * Ai[i]
        Y[i] = (Y[i - 1] + h * U[i - 1] + hh * (Fv[i - 1] - lam2 * Ip)) / (1.0 + hh * kappa)
        Fv[i] = -kappa * Y[i] - lam2 * Ip
        U[i] = U[i - 1] + 0.5 * h * (Fv[i - 1] + Fv[i])
    return Y, U


def _gronwall_check(y, lam2, qmax, Nmax, T):
    expo = lam2 * qmax * Nmax * T * T / 2.0
    bound = math.exp(min(expo, 700.0))
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > bound:
        raise StepInstabilityError(
            "step-size instability: solution exceeds its a-priori Gronwall bound; "
            "use a finer time grid")


# ------------------------------------------------------------------ z_n

@dataclass(frozen=True, eq=False)
class KernelSolution:
    mode: int
    lam: float
    T: float
    z: SampledFunction
    zprime: np.ndarray = field(repr=False, default=None)


def _zn_on(lams, config, T, grid):
    t = grid.samples
    q = config.traction(T - t)
    N, _, _ = config.kernel.on_grid(grid)
    lams = np.asarray(lams, dtype=float)
    z, v = volterra_cn(lams * lams, q, N, np.ones_like(t), np.zeros((lams.size, t.size)), 1.0,
                       grid.h)
    return z, v, q, N


def solve_zn_many(lams, config, T, grid=None, levels=2, first_mode=1):
    """Kernel solutions for several lambdas in one time-stepping pass."""
    lams = np.asarray(lams, dtype=float)
    if np.any(lams < 0):
        raise ValueError("lambda must be >= 0")
    grid = grid or config.grid_for(T)
    if abs(grid.end - T) > 1e-12 * max(1.0, T) or grid.start != 0.0:
        raise ValueError("grid must cover [0, T]")
    z, v, q, N = on_refined(lambda g: _zn_on(lams, config, T, g), grid, levels)
    qmax, Nmax = float(np.max(np.abs(q))), float(np.max(np.abs(N)))
    out = []
    for j, lam in enumerate(lams):
        _gronwall_check(z[j], lam * lam, qmax, Nmax, T)
        out.append(KernelSolution(first_mode + j, float(lam), float(T),
                                  SampledFunction(grid, z[j]), v[j]))
    return out


def solve_zn(lam, config, T, grid=None, mode=0, levels=2):
    """z_n(.; T) on ``grid`` (default: the config's node count on [0, T]).

    ``levels`` grids (step h, h/2, ...) are combined by Romberg extrapolation;
    ``levels=1`` is the plain second-order scheme.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return solve_zn_many([lam], config, T, grid, levels, mode)[0]


def zn_residual(sol, config):
    """Max relative residual of the defining equation, by independent quadrature.

    z' from 4th-order differences of the samples, the memory integral from the
    endpoint-corrected product trapezoid.
    """
    grid = sol.z.grid
    h = grid.h
    z = sol.z.values
    N, M, _ = config.kernel.on_grid(grid)
    q = config.traction(sol.T - grid.samples)
    dz = fd_derivative(z, h)
    conv = convolve_trapezoid(N, z, h, dK=M, du=dz)
    r = dz + sol.lam**2 * q * conv
    scale = max(float(np.max(np.abs(sol.lam**2 * q * conv))), float(np.max(np.abs(dz))), 1e-300)
    return float(np.max(np.abs(r)) / scale)


# ------------------------------------------------------------------ chain

class _ChainFields:
    """Q, H, a, tilde V and the A-brace coefficient as functions of t, horizon T.

    Expression-backed traction: exact symbolic derivatives. Sampled traction:
    H and a are sampled on a fine grid and differentiated by finite
    differences, then interpolated.
    """

    def __init__(self, config, T, n_fd=None):
        self.P = config.traction
        self.T = float(T)
        self.k = float(config.kernel.Nprime0)
        expr = self.P.P.expr
        if expr is not None:
            self._symbolic(expr)
            self.provenance = "exact"
        else:
            self._sampled(n_fd or 4 * (config.time_grid.n_points - 1) + 1)
            self.provenance = "finite-difference"

    def _symbolic(self, expr):
        t = sp.Symbol("t", real=True)
        Q = expr.sym.subs(sp.Symbol(expr.var, real=True), sp.Float(self.T) - t)
        H = -sp.Float(self.k) * t - sp.log(Q)
        a = sp.exp(H / 2) * Q ** sp.Rational(-1, 4)
        H1, H2 = sp.diff(H, t), sp.diff(H, t, 2)
        a1, a2 = sp.diff(a, t), sp.diff(a, t, 2)
        Vt = sp.exp(-H / 2) * Q ** sp.Rational(-3, 4) * (a2 - H2 * a - H1 * a1)
        beta = H1 + sp.diff(Q, t) / Q
        names = dict(Q=Q, H=H, a=a, Vt=Vt, beta=beta)
        self._fns = {k: sp.lambdify(t, v, modules="numpy") for k, v in names.items()}

    def _sampled(self, n):
        g = Grid1D(0.0, self.T, n)
        t = g.samples
        Q = self.P(self.T - t)
        H = -self.k * t - np.log(Q)
        a = np.exp(H / 2.0) * Q**-0.25
        H1, H2 = fd_derivative(H, g.h), fd_second_derivative(H, g.h)
        a1, a2 = fd_derivative(a, g.h), fd_second_derivative(a, g.h)
        Vt = np.exp(-H / 2.0) * Q**-0.75 * (a2 - H2 * a - H1 * a1)
        beta = H1 + fd_derivative(Q, g.h) / Q
        self._fns = {k: CubicSpline(t, v) for k, v in
                     dict(Q=Q, H=H, a=a, Vt=Vt, beta=beta).items()}

    def __call__(self, name, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(all="ignore"):
            v = self._fns[name](t)
        return np.broadcast_to(np.asarray(v, dtype=float), t.shape).copy()


@dataclass(frozen=True, eq=False)
class TransformChain:
    T: float
    t_grid: Grid1D
    H: SampledFunction
    a: SampledFunction
    L: SampledFunction
    x_grid: Grid1D
    Minv: SampledFunction
    S: float
    V: SampledFunction
    y0: float
    y1: float
    x_fine: Grid1D = field(repr=False, default=None)
    V_fine: np.ndarray = field(repr=False, default=None)
    A_fine: np.ndarray = field(repr=False, default=None)
    Minv_fine: np.ndarray = field(repr=False, default=None)
    k: float = 0.0
    traction: object = field(repr=False, default=None)
    derivative_provenance: str = "exact"

    @property
    def A(self):
        """A(x, r) on x_grid (lower triangle; zero above the diagonal)."""
        return self.A_fine[::2, ::2] if self.x_fine is not None else self.A_fine

    def L_at(self, t):
        return self.L(t)


def _invert_L(Lspl, sqrtQ, L_nodes, t_nodes, x):
    t = np.interp(x, L_nodes, t_nodes)
    for _ in range(6):
        t = t - (Lspl(t) - x) / sqrtQ(t)
        t = np.clip(t, t_nodes[0], t_nodes[-1])
    return t


def build_transform_chain(config, T, n_t=None, n_x=None, refine=True, block=256):
    """Sampled H, a, L, L^{-1}, V, A(x, r), y0, y1 for horizon T.

    With ``refine`` the kernel A is sampled on the twice-refined x grid so the
    Y_n solver can Richardson-extrapolate.
    """
    tg = config.grid_for(T, n_t)
    t = tg.samples
    F = _ChainFields(config, T)
    Q = F("Q", t)
    sqrtQ_nodes = np.sqrt(Q)
    dsq = -config.traction(T - t, 1) / (2.0 * sqrtQ_nodes)
    L = cumulative_trapezoid(sqrtQ_nodes, tg.h, dy=dsq)
    S = float(L[-1])
    if not np.all(np.diff(L) > 0):
        raise StepInstabilityError("L is not strictly increasing")
    Lspl = CubicSpline(t, L)

    def sqrtQ(tt):
        return np.sqrt(config.traction(T - tt))

    xg = Grid1D(0.0, S, n_x or tg.n_points)
    xf = xg.refined() if refine else xg
    Mf = _invert_L(Lspl, sqrtQ, L, t, xf.samples)
    Mf[0] = 0.0
    Mf[-1] = T

    # kernel tables on a fine time grid; N interpolated, N' = M evaluated
    kt = Grid1D(0.0, T, 2 * (xf.n_points - 1) + 1)
    Nk, Mk, _ = config.kernel.on_grid(kt)
    Nspl = CubicSpline(kt.samples, Nk)
    kern = config.kernel
    k = kern.Nprime0

    Qm, Hm = F("Q", Mf), F("H", Mf)
    alpha = np.exp(Hm / 2.0) * Qm**0.25
    beta = F("beta", Mf)
    gamma = np.exp(-Hm / 2.0) * Qm**-0.75
    Vf = F("Vt", Mf)
    nf = xf.n_points
    A = np.zeros((nf, nf))
    for s0 in range(0, nf, block):
        s1 = min(nf, s0 + block)
        tau = Mf[s0:s1, None] - Mf[None, :s1]
        mask = tau >= 0.0
        tau = np.where(mask, tau, 0.0)
        Nt = Nspl(tau)
        Mt = kern.M_at(tau) if kern.M.expr is not None else np.interp(tau, kt.samples, Mk)
        blk = alpha[s0:s1, None] * (beta[s0:s1, None] * Nt + Mt) * gamma[None, :s1]
        blk = np.where(np.tril(np.ones((s1 - s0, s1), dtype=bool), k=s0), blk, 0.0)
        A[s0:s1, :s1] = blk

    P = config.traction
    PT, dPT = float(P(np.array([T]))[0]), float(P(np.array([T]), 1)[0])
    y0 = PT**-0.25
    y1 = 0.25 * PT**-1.75 * (dPT - 2.0 * k * PT)

    step = 2 if refine else 1
    return TransformChain(
        T=float(T), t_grid=tg,
        H=SampledFunction(tg, F("H", t)), a=SampledFunction(tg, F("a", t)),
        L=SampledFunction(tg, L), x_grid=xg, Minv=SampledFunction(xg, Mf[::step]), S=S,
        V=SampledFunction(xg, Vf[::step]), y0=y0, y1=y1,
        x_fine=xf if refine else None, V_fine=Vf, A_fine=A, Minv_fine=Mf, k=k,
        traction=config.traction, derivative_provenance=F.provenance)


# ------------------------------------------------------------------ Y_n

@dataclass(frozen=True, eq=False)
class TransformedMode:
    mode: int
    lam: float
    Y: SampledFunction
    Yprime: np.ndarray
    g: SampledFunction


def solve_Yn(lam, chain, mode=0):
    """Y_n on chain.x_grid, with Y(0) = y0 and Y'(0) = y1."""
    lam2 = lam * lam
    hf = (chain.x_fine or chain.x_grid).h
    Y, U = second_order_cn(lam2, chain.V_fine, chain.A_fine, chain.y0, chain.y1, hf)
    if chain.x_fine is not None:
        Yc, Uc = second_order_cn(lam2, chain.V_fine[::2], chain.A_fine[::2, ::2],
                                 chain.y0, chain.y1, chain.x_grid.h)
        Y = richardson(Yc, Y[::2])
        U = richardson(Uc, U[::2])
    x = chain.x_grid.samples
    Amax = float(np.max(np.abs(chain.A))) if chain.A.size else 0.0
    qmax = 1.0 + (float(np.max(np.abs(chain.V.values))) + lam2 * Amax * chain.S) / max(lam2, 1e-300)
    _gronwall_check(Y, lam2, qmax, 1.0, max(chain.S, 1.0) * 2.0)
    g = chain.y0 * np.cos(lam * x) + (chain.y1 / lam if lam else 0.0) * np.sin(lam * x)
    return TransformedMode(mode, float(lam), SampledFunction(chain.x_grid, Y), U,
                           SampledFunction(chain.x_grid, g))


def chain_identity_error(zsol, chain, tm):
    """max_t |z(t) - e^{-H} a Y(L(t))| / max |z| on the chain's time grid."""
    if zsol.z.grid.n_points != chain.t_grid.n_points:
        raise ValueError("z and chain must share the time grid")
    Yspl = CubicSpline(chain.x_grid.samples, tm.Y.values)
    rebuilt = np.exp(-chain.H.values) * chain.a.values * Yspl(chain.L.values)
    z = zsol.z.values
    return float(np.max(np.abs(z - rebuilt)) / np.max(np.abs(z)))


# ------------------------------------------------------------------ C, B, Z_n

@dataclass(frozen=True, eq=False)
class BivariateKernels:
    x_grid: Grid1D
    C: np.ndarray
    B: np.ndarray
    C_diag: np.ndarray

    @property
    def weighted_B(self):
        return _row_weights(self.x_grid.n_points, self.x_grid.h) * self.B


def build_C_and_B(chain, kernel):
    """C(x, s) = N(M(x) - M(s)) e^{N'(0) M(s)/2} Q^{-1/4}(M(s)); B = C / C(x, x)."""
    Mx = chain.Minv.values
    T = chain.T
    kt = Grid1D(0.0, T, 4 * (chain.t_grid.n_points - 1) + 1)
    Nk, _, _ = kernel.on_grid(kt)
    Nspl = CubicSpline(kt.samples, Nk)
    Qm = chain.traction(T - Mx)
    w = np.exp(kernel.Nprime0 * Mx / 2.0) * Qm**-0.25
    tau = Mx[:, None] - Mx[None, :]
    lower = tau >= 0.0
    C = np.where(lower, Nspl(np.where(lower, tau, 0.0)) * w[None, :], 0.0)
    diag = np.diag(C).copy()
    if not np.all(diag > 0):
        raise StepInstabilityError("C(x, x) must be strictly positive")
    B = C / diag[:, None]
    B[~lower] = 0.0
    return BivariateKernels(chain.x_grid, C, B, diag)


def _row_weights(n, h):
    """Lower-triangular quadrature weights: row i integrates over nodes 0..i.

    Composite Simpson for even i, Simpson plus a final 3/8 panel for odd i >= 3,
    trapezoid for i = 1.
    """
    W = np.zeros((n, n))
    for i in range(1, n):
        if i == 1:
            W[i, 0] = W[i, 1] = 0.5 * h
            continue
        if i % 2 == 0:
            m = i
        else:
            m = i - 3
        if m > 0:
            w = np.ones(m + 1)
            w[1:m:2] = 4.0
            w[2:m:2] = 2.0
            W[i, :m + 1] = w * h / 3.0
        if i % 2 == 1:
            W[i, m:m + 4] += np.array([3.0, 9.0, 9.0, 3.0]) * h / 8.0
    return W


def compute_Zn(slope0, tm, kernels, weighted=None):
    """Z_n(x) = phi_n'(0) int_0^x B(x, s) Y_n(s) ds on the chain x grid."""
    WB = kernels.weighted_B if weighted is None else weighted
    Z = slope0 * (WB @ tm.Y.values)
    Z[0] = 0.0
    return SampledFunction(kernels.x_grid, Z)


@dataclass
class EstimateReport:
    n: np.ndarray
    Y_constants: np.ndarray
    Z_constants: np.ndarray
    Y_bounded: bool
    Z_bounded: bool
    Y_slope: float = float("nan")   # least-squares d log(constant) / d log n
    Z_slope: float = float("nan")


def estimate_constants(config, basis, T, chain=None, modes=None, threads=1):
    """n * ||Y_n - y0 cos(lambda_n x)|| and n * ||Z_n - y0 sqrt(2/pi) sin(n x)|| (sup norms)."""
    from .spectral import growth_bounded
    chain = chain or build_transform_chain(config, T)
    kernels = build_C_and_B(chain, config.kernel)
    WB = kernels.weighted_B
    modes = list(modes or range(1, basis.n_modes + 1))
    x = chain.x_grid.samples

    def one(n):
        lam = basis.lambdas[n - 1]
        tm = solve_Yn(lam, chain, n)
        Z = compute_Zn(basis.slopes0[n - 1], tm, kernels, WB)
        ey = np.max(np.abs(tm.Y.values - chain.y0 * np.cos(lam * x)))
        ez = np.max(np.abs(Z.values - chain.y0 * math.sqrt(2 / math.pi) * np.sin(n * x)))
        return n * ey, n * ez

    out = np.array(map_modes(one, modes, threads))
    ln = np.log(np.array(modes, dtype=float))
    slopes = [np.polyfit(ln, np.log(np.maximum(out[:, j], 1e-300)), 1)[0]
              if len(modes) > 1 else float("nan") for j in (0, 1)]
    return EstimateReport(np.array(modes), out[:, 0], out[:, 1],
                          growth_bounded(out[:, 0]), growth_bounded(out[:, 1]), *slopes)


# ------------------------------------------------------------------ CSV dumps

def _fmt(v):
    return f"{v:.16e}"


def write_zn_csv(sol, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "z_n"])
        for t, z in zip(sol.z.grid.samples, sol.z.values):
            w.writerow([_fmt(t), _fmt(z)])


def write_mode_csv(tm, Z, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "Y_n", "Z_n"])
        for x, y, z in zip(tm.Y.grid.samples, tm.Y.values, Z.values):
            w.writerow([_fmt(x), _fmt(y), _fmt(z)])


def write_chain_csv(chain, t_path, x_path):
    with open(t_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "H", "a", "L"])
        for row in zip(chain.t_grid.samples, chain.H.values, chain.a.values, chain.L.values):
            w.writerow([_fmt(v) for v in row])
    with open(x_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "Minv", "V"])
        for row in zip(chain.x_grid.samples, chain.Minv.values, chain.V.values):
            w.writerow([_fmt(v) for v in row])
