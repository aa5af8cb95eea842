"""Reference configurations with known answers.

``constant``     P = 1, c = 1, M = 0: every quantity is classical trig.
``generic``      P = 1 + 0.3 sin t, c = 1 + 0.2 sin xi, M = -0.5 exp(-0.5 t).
``calibrated``   generic traction and kernel with the density below.

The calibrated density is built in the Liouville variable y = int c^{-1/2}:
c^{1/4} = m(y) = cosh(kappa (y - y_c)) / cosh(kappa y_c), with y_c chosen so the
travel time is pi. Then m''/m = kappa^2 exactly, so lambda_n = sqrt(n^2 + kappa^2),
phi_n'(0) = sqrt(2/pi) n and c(0) = 1.
"""
import math

import numpy as np
from scipy.optimize import brentq

from .material import config_from_dict


def _center(kappa):
    def f(yc):
        return (math.pi / 2 + (math.sinh(2 * kappa * (math.pi - yc)) + math.sinh(2 * kappa * yc))
                / (4 * kappa) - math.pi * math.cosh(kappa * yc) ** 2)
    return brentq(f, 1e-12, math.pi, xtol=1e-15)


def calibrated_density_values(kappa, n):
    """c sampled at n uniform nodes of [0, pi] (see module docstring)."""
    yc = _center(kappa)
    ch = math.cosh(kappa * yc)

    def xi_of_y(y):
        # int_0^y m^2
        return (y / 2 + (math.sinh(2 * kappa * (y - yc)) + math.sinh(2 * kappa * yc))
                / (4 * kappa)) / ch**2

    xs = np.linspace(0.0, math.pi, n)
    ys = np.empty(n)
    ys[0], ys[-1] = 0.0, math.pi
    for i in range(1, n - 1):
        ys[i] = brentq(lambda y: xi_of_y(y) - xs[i], 0.0, math.pi, xtol=1e-15)
    m = np.cosh(kappa * (ys - yc)) / ch
    return m**4


def calibrated_lambdas(kappa, n_modes):
    n = np.arange(1, n_modes + 1)
    return np.sqrt(n**2 + kappa**2)


def config_dict(name="generic", n_space=2001, n_time=2001, t_max=None, n_modes=16, kappa=0.5):
    expr = lambda s: {"kind": "expr", "expr": s}  # noqa: E731
    if name == "constant":
        d = {"traction": expr("1"), "density": expr("1"), "memory": expr("0")}
        t_max = t_max or math.pi
    elif name in ("generic", "calibrated"):
        d = {"traction": expr("1 + 0.3*sin(t)"), "density": expr("1 + 0.2*sin(xi)"),
             "memory": expr("-0.5*exp(-0.5*t)")}
        if name == "calibrated":
            d["density"] = {"kind": "samples",
                            "values": calibrated_density_values(kappa, n_space).tolist()}
        t_max = t_max or 8.0
    else:
        raise ValueError(f"unknown scenario {name!r}")
    d.update({"space_grid": {"n": n_space}, "time_grid": {"n": n_time, "t_max": float(t_max)},
              "n_modes": n_modes, "seed": 0})
    return d


def make_config(name="generic", **kw):
    return config_from_dict(config_dict(name, **kw))
