"""Dirichlet eigensystem of (c(xi) phi')' on (0, pi) and its asymptotic checks."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .quadrature import richardson, trapezoid

SQRT_2_PI = math.sqrt(2.0 / math.pi)
POINTS_PER_WAVELENGTH = 20
EIG_RTOL = 1e-6


class SpectralError(RuntimeError):
    pass


class GridTooCoarseError(SpectralError):
    pass


class EigenConvergenceError(SpectralError):
    def __init__(self, mode, msg):
        super().__init__(f"eigensolver non-convergence at mode {mode}: {msg}")
        self.mode = mode


@dataclass(frozen=True, eq=False)
class ModalBasis:
    lambdas: np.ndarray
    phis: np.ndarray          # (n_modes, n_space)
    slopes0: np.ndarray
    xi: np.ndarray
    c_used: object = field(repr=False, default=None)
    method: str = "fd"
    rayleigh_residuals: np.ndarray = field(repr=False, default=None)

    @property
    def n_modes(self):
        return len(self.lambdas)

    def truncated(self, n):
        return ModalBasis(self.lambdas[:n], self.phis[:n], self.slopes0[:n], self.xi,
                          self.c_used, self.method,
                          None if self.rayleigh_residuals is None else self.rayleigh_residuals[:n])

    def project(self, values):
        """Modal coefficients <v, phi_n> by trapezoid on the space grid."""
        h = self.xi[1] - self.xi[0]
        return trapezoid(self.phis * np.asarray(values, dtype=float)[None, :], h)

    def synthesize(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        out = np.zeros(self.phis.shape[1])
        for n in range(len(coeffs)):  # fixed summation order n = 1..N
            out += coeffs[n] * self.phis[n]
        return out

    def gram(self):
        h = self.xi[1] - self.xi[0]
        return trapezoid(self.phis[:, None, :] * self.phis[None, :, :], h)


def travel_time(density, n=20001):
    """int_0^pi c^{-1/2}; the Weyl asymptotics assume this equals pi."""
    xi = np.linspace(0.0, math.pi, n)
    return float(trapezoid(density(xi) ** -0.5, xi[1] - xi[0]))


def _fd_levels(density, n_intervals, n_modes):
    h = math.pi / n_intervals
    xi = np.linspace(0.0, math.pi, n_intervals + 1)
    c_half = density(0.5 * (xi[:-1] + xi[1:]))
    # -(c phi')' on the interior nodes: symmetric tridiagonal
    d = (c_half[:-1] + c_half[1:]) / h**2
    e = -c_half[1:-1] / h**2
    mu, vec = eigh_tridiagonal(d, e, select="i", select_range=(0, n_modes - 1))
    phis = np.zeros((n_modes, n_intervals + 1))
    phis[:, 1:-1] = vec.T
    return mu, phis, h


def _normalize(phis, h):
    norms = np.sqrt(trapezoid(phis**2, h))
    phis = phis / norms[:, None]
    # phi_n'(0) > 0; phi(0) = 0 so the sign of the first interior sample decides
    signs = np.where(phis[:, 1] < 0.0, -1.0, 1.0)
    return phis * signs[:, None]


def _slope_at_zero(phis, h):
    # 4th-order one-sided, phi(0) = 0 enforced
    s = phis[:, :5] @ np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12.0 * h)
    return s


def _check_resolution(density, n_modes, space_grid):
    c = density(np.linspace(0.0, math.pi, 2001))
    lam_est = n_modes * math.pi / travel_time(density)
    wavelength = 2.0 * math.pi * math.sqrt(float(np.min(c))) / lam_est
    ppw = wavelength / space_grid.h
    if ppw < POINTS_PER_WAVELENGTH:
        raise GridTooCoarseError(
            f"grid-too-coarse: {ppw:.1f} points per shortest wavelength for mode {n_modes} "
            f"(need {POINTS_PER_WAVELENGTH}); increase space_grid.n")


def solve_eigensystem(density, n_modes, space_grid, method="auto", rtol=EIG_RTOL):
    """Eigenpairs -(c phi_n')' = lambda_n^2 phi_n with phi_n(0) = phi_n(pi) = 0.

    Constant density uses the closed form; otherwise conservative finite
    differences on the space grid and twice/four-times refined grids, with the
    two finest levels Richardson-extrapolated. The coarser pair gives the
    convergence estimate that must be below ``rtol``.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    _check_resolution(density, n_modes, space_grid)
    xi = space_grid.samples
    n = np.arange(1, n_modes + 1)

    if method == "auto" and density.is_constant():
        c = float(density(np.array([0.0]))[0])
        lambdas = n * math.sqrt(c)
        phis = SQRT_2_PI * np.sin(np.outer(n, xi))
        phis[:, 0] = 0.0
        phis[:, -1] = 0.0
        basis = ModalBasis(lambdas, phis, SQRT_2_PI * n.astype(float), np.array(xi), density,
                           "closed-form")
        return _with_residuals(basis, density)

    m = space_grid.n_points - 1
    levels = [_fd_levels(density, k * m, n_modes) for k in (1, 2, 4)]
    mu1, mu2, mu4 = (lv[0] for lv in levels)
    if np.any(mu1 <= 0) or np.any(np.diff(mu4) <= 0):
        bad = int(np.argmax(np.diff(np.r_[0.0, mu4]) <= 0)) + 1
        raise EigenConvergenceError(bad, "non-positive or repeated eigenvalue")
    lam_a = np.sqrt(richardson(mu1, mu2))
    lam_b = np.sqrt(richardson(mu2, mu4))
    rel = np.abs(lam_b - lam_a) / lam_b
    if np.any(rel > rtol):
        k = int(np.argmax(rel > rtol)) + 1
        raise EigenConvergenceError(k, f"relative change {rel[k - 1]:.2e} under refinement "
                                       f"exceeds {rtol:g}; refine space_grid")

    phi2 = _normalize(levels[1][1], levels[1][2])[:, ::2]
    phi4 = _normalize(levels[2][1], levels[2][2])[:, ::4]
    phis = richardson(phi2, phi4)
    phis = _normalize(phis, space_grid.h)
    phis[:, 0] = 0.0
    phis[:, -1] = 0.0
    s2 = _slope_at_zero(_normalize(levels[1][1], levels[1][2]), levels[1][2])
    s4 = _slope_at_zero(_normalize(levels[2][1], levels[2][2]), levels[2][2])
    slopes = richardson(s2, s4)
    basis = ModalBasis(lam_b, phis, slopes, np.array(xi), density, "fd")
    return _with_residuals(basis, density)


def _with_residuals(basis, density):
    """Relative L2 residual of (c phi')' + lambda^2 phi, from the spline of phi."""
    from scipy.interpolate import CubicSpline
    xi = basis.xi
    h = xi[1] - xi[0]
    xm = xi[1:-1]
    res = np.empty(basis.n_modes)
    c, dc = density(xm), density(xm, 1)
    for k in range(basis.n_modes):
        sp = CubicSpline(xi, basis.phis[k])
        r = c * sp(xm, 2) + dc * sp(xm, 1) + basis.lambdas[k] ** 2 * basis.phis[k, 1:-1]
        res[k] = math.sqrt(trapezoid(r**2, h)) / basis.lambdas[k] ** 2
    return ModalBasis(basis.lambdas, basis.phis, basis.slopes0, basis.xi, basis.c_used,
                      basis.method, res)


@dataclass
class AsymptoticsReport:
    H: np.ndarray
    sup_H: float
    slope_deficits: np.ndarray
    travel_time: float
    applicable: bool
    bound_H: float
    bound_slope: float
    passed: bool

    @property
    def status(self):
        if not self.applicable:
            return "not-applicable"
        return "PASS" if self.passed else "FAIL"


def growth_bounded(values, floor=1e-8):
    """No-growth criterion on a sequence of fitted constants: max <= 2 x median.

    Entries below ``floor`` (scalar or per-entry) count as numerical zero.
    """
    a = np.maximum(np.abs(np.asarray(values, dtype=float)) - floor, 0.0)
    return bool(a.max() <= 2.0 * np.median(a))


def tail_bounded(values, floor=1e-8):
    """No-growth criterion for sequences that may decay: the second half never
    exceeds twice the first half."""
    a = np.maximum(np.abs(np.asarray(values, dtype=float)) - floor, 0.0)
    k = max(1, len(a) // 2)
    return bool(a[k:].max(initial=0.0) <= 2.0 * a[:k].max())


def check_asymptotics(basis):
    """H_n = n (lambda_n - n) and phi_n'(0) - sqrt(2/pi) n, with a PASS flag.

    The classical estimates need unit travel-time normalization
    int c^{-1/2} = pi; outside 1% of it the report is "not-applicable".
    """
    n = np.arange(1, basis.n_modes + 1)
    H = n * (basis.lambdas - n)
    deficits = basis.slopes0 - SQRT_2_PI * n
    tt = travel_time(basis.c_used) if basis.c_used is not None else math.pi
    applicable = abs(tt - math.pi) <= 0.01 * math.pi
    # eigenvalues carry a relative error up to EIG_RTOL, amplified by n in H_n
    floor_H = 1e-12 if basis.method == "closed-form" else n * basis.lambdas * EIG_RTOL
    floor_D = 1e-12 if basis.method == "closed-form" else 1e-6 * n
    aH, aD = np.abs(H), np.abs(deficits)
    bound_H = 2.0 * float(np.median(np.maximum(aH - floor_H, 0))) + float(np.max(floor_H))
    bound_D = 2.0 * float(np.max(np.maximum(aD - floor_D, 0)[: max(1, len(aD) // 2)]))
    passed = applicable and growth_bounded(H, floor_H) and tail_bounded(deficits, floor_D)
    return AsymptoticsReport(H, float(aH.max()), deficits, tt, applicable, bound_H, bound_D,
                             bool(passed))


def _fmt(v):
    return f"{v:.16e}"


def write_eig_csv(basis, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "lambda_n", "slope0_n"])
        for k in range(basis.n_modes):
            w.writerow([k + 1, _fmt(basis.lambdas[k]), _fmt(basis.slopes0[k])])


def write_phi_csv(basis, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([_fmt(x) for x in basis.xi])
        for k in range(basis.n_modes):
            w.writerow([_fmt(v) for v in basis.phis[k]])


def write_asymptotics_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "H_n", "slope_deficit_n"])
        for k in range(len(report.H)):
            w.writerow([k + 1, _fmt(report.H[k]), _fmt(report.slope_deficits[k])])
