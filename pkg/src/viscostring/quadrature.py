"""Uniform-grid quadrature, differentiation and extrapolation helpers.

Every solver in the package works on uniform grids, so the rules here all
take the step ``h`` instead of abscissae.
"""
import numpy as np

# 4th-order one-sided stencils for the first two nodes (mirrored at the end)
_EDGE0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_EDGE1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def fd_derivative(y, h):
    """First derivative of samples ``y`` with 4th-order differences.

    Falls back to second order when fewer than five samples are given.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    if n < 5:
        return np.gradient(y, h, axis=-1, edge_order=min(2, n - 1) or 1)
    d = np.empty_like(y)
    d[..., 2:-2] = (y[..., :-4] - 8.0 * y[..., 1:-3] + 8.0 * y[..., 3:-1] - y[..., 4:]) / (12.0 * h)
    d[..., 0] = y[..., :5] @ _EDGE0 / h
    d[..., 1] = y[..., :5] @ _EDGE1 / h
    d[..., -1] = -(y[..., -5:][..., ::-1] @ _EDGE0) / h
    d[..., -2] = -(y[..., -5:][..., ::-1] @ _EDGE1) / h
    return d


def fd_second_derivative(y, h):
    """Second derivative: centered 3-point interior, 4-point one-sided at the ends."""
    y = np.asarray(y, dtype=float)
    d = np.empty_like(y)
    d[1:-1] = (y[:-2] - 2.0 * y[1:-1] + y[2:]) / h**2
    if len(y) >= 4:
        d[0] = (2.0 * y[0] - 5.0 * y[1] + 4.0 * y[2] - y[3]) / h**2
        d[-1] = (2.0 * y[-1] - 5.0 * y[-2] + 4.0 * y[-3] - y[-4]) / h**2
    else:
        d[0] = d[1]
        d[-1] = d[-2]
    return d


def trapezoid(y, h, dy=None):
    """Composite trapezoid over the whole grid.

    With end slopes ``dy`` the Euler-Maclaurin correction makes it O(h^4).
    """
    y = np.asarray(y, dtype=float)
    s = h * (y.sum(axis=-1) - 0.5 * (y[..., 0] + y[..., -1]))
    if dy is not None:
        s = s - h * h / 12.0 * (dy[..., -1] - dy[..., 0])
    return s


def cumulative_trapezoid(y, h, dy=None):
    """Running integral from the first node, same length as ``y`` (starts at 0)."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * h * (y[:-1] + y[1:]))
    if dy is not None:
        out -= h * h / 12.0 * (dy - dy[0])
    return out


def convolve_trapezoid(K, u, h, dK=None, du=None):
    """Product trapezoid for ``c_i = int_0^{t_i} K(t_i - r) u(r) dr`` at every node.

    ``dK``/``du`` (derivative samples) switch on the endpoint correction.
    """
    K = np.asarray(K, dtype=float)
    u = np.asarray(u, dtype=float)
    n = len(u)
    full = np.convolve(K[:n], u)[:n]
    c = h * (full - 0.5 * (K[:n] * u[0] + K[0] * u))
    if dK is not None and du is not None:
        end = -dK[0] * u + K[0] * du
        start = -dK[:n] * u[0] + K[:n] * du[0]
        c -= h * h / 12.0 * (end - start)
    c[0] = 0.0
    return c


def richardson(coarse, fine_on_coarse, order=2):
    """Cancel the leading h^order error term of a two-grid pair."""
    f = 2.0**order
    return (f * np.asarray(fine_on_coarse) - np.asarray(coarse)) / (f - 1.0)


def romberg(results, order=2):
    """Romberg table over results on successively halved grids (coarsest first),
    all sampled at the coarse nodes. Error terms are assumed in powers of h^order."""
    row = [np.asarray(r, dtype=float) for r in results]
    p = order
    while len(row) > 1:
        f = 2.0**p
        row = [(f * row[i + 1] - row[i]) / (f - 1.0) for i in range(len(row) - 1)]
        p += order
    return row[0]


def on_refined(solve, grid, levels):
    """Run ``solve(grid)`` on grid, grid/2, ... (``levels`` grids) and combine.

    ``solve`` returns a tuple of arrays on its grid; each is subsampled to the
    coarse nodes before extrapolation.
    """
    outs = []
    for lvl in range(levels):
        f = 2**lvl
        res = solve(grid.refined(f) if f > 1 else grid)
        outs.append(tuple(np.asarray(r)[..., ::f] for r in res))
    return tuple(romberg([o[j] for o in outs]) for j in range(len(outs[0])))
