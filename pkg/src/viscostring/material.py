"""Physical data of the string: traction, density, memory kernel, grids, config I/O."""
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .expr import Expression, ExpressionError
from .quadrature import cumulative_trapezoid, fd_derivative, fd_second_derivative

log = logging.getLogger(__name__)

ANALYTIC = "analytic-expression"
SAMPLES = "file-samples"

# a C^2 profile has raw second differences h^2 |P''| small next to |P| on any
# grid that resolves it; above this fraction the samples are treated as rough
CURVATURE_LIMIT = 0.05


class ConfigError(ValueError):
    """Base class for everything wrong with a configuration."""


class ConfigParseError(ConfigError):
    pass


class ConfigValidationError(ConfigError):
    pass


@dataclass(frozen=True)
class Grid1D:
    start: float
    end: float
    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ConfigValidationError(f"grid needs an integer n_points >= 2, got {self.n_points}")
        if not (math.isfinite(self.start) and math.isfinite(self.end)) or not self.start < self.end:
            raise ConfigValidationError(f"grid needs start < end, got [{self.start}, {self.end}]")
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def h(self):
        return (self.end - self.start) / (self.n_points - 1)

    @cached_property
    def samples(self):
        s = np.linspace(self.start, self.end, self.n_points)
        s.flags.writeable = False
        return s

    def refined(self, factor=2):
        """Same interval, step divided by ``factor``; old nodes are every factor-th new node."""
        return Grid1D(self.start, self.end, factor * (self.n_points - 1) + 1)


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Samples on a uniform grid, optionally backed by an exact expression.

    Evaluation off the nodes: the expression when there is one, otherwise a
    not-a-knot cubic spline through the samples (cubic on the interior, the
    end intervals use the one-sided not-a-knot closure). Outside the grid the
    end values are held constant. Derivatives of sample-backed functions come
    from finite differences on the nodes, interpolated the same way.
    """
    grid: Grid1D
    values: np.ndarray
    provenance: str = SAMPLES
    expr: Expression = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or len(v) != self.grid.n_points:
            raise ConfigValidationError(
                f"expected {self.grid.n_points} samples, got shape {v.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_expression(cls, expr, grid):
        return cls(grid, expr(grid.samples), ANALYTIC, expr)

    @cached_property
    def _derivative_samples(self):
        h = self.grid.h
        return {1: fd_derivative(self.values, h), 2: fd_second_derivative(self.values, h)}

    @cached_property
    def _splines(self):
        x = self.grid.samples
        return {0: CubicSpline(x, self.values),
                1: CubicSpline(x, self._derivative_samples[1]),
                2: CubicSpline(x, self._derivative_samples[2])}

    def __call__(self, x, order=0):
        x = np.asarray(x, dtype=float)
        if self.expr is not None:
            return self.expr(x, order)
        lo, hi = self.grid.start, self.grid.end
        tol = 1e-12 * (hi - lo)
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            log.warning("sampled function queried outside [%g, %g]; holding end values", lo, hi)
            outside = (x < lo) | (x > hi)
            x = np.clip(x, lo, hi)
            v = self._splines[order](x)
            if order:
                v = np.where(outside, 0.0, v)
            return v
        return self._splines[order](x)

    def derivative_samples(self, order=1):
        if self.expr is not None:
            return self.expr(self.grid.samples, order)
        return self._derivative_samples[order]

    def resample(self, grid):
        if self.expr is not None:
            return SampledFunction.from_expression(self.expr, grid)
        return SampledFunction(grid, self(grid.samples), self.provenance)

    def is_constant(self):
        if self.expr is not None:
            return self.expr.is_constant()
        return bool(np.all(self.values == self.values[0]))


def primitive_N(M):
    """N(t) = 1 + int_0^t M, cumulative trapezoid with the endpoint correction.

    N(0) = 1 exactly. The correction uses M' (exact for expressions).
    """
    grid = M.grid
    if grid.start != 0.0:
        raise ConfigValidationError("memory kernel grid must start at t = 0")
    N = 1.0 + cumulative_trapezoid(M.values, grid.h, dy=M.derivative_samples(1))
    N[0] = 1.0
    return SampledFunction(grid, N, M.provenance)


@dataclass(frozen=True, eq=False)
class TractionProfile:
    P: SampledFunction
    p0: float

    def __post_init__(self):
        vals = self.P.values
        if not np.all(np.isfinite(vals)):
            raise ConfigValidationError("traction has non-finite samples")
        if np.any(vals <= 0.0):
            raise ConfigValidationError("traction not strictly positive")
        if not self.p0 > 0.0:
            raise ConfigValidationError("traction lower bound p0 must be > 0")
        if np.any(vals < self.p0):
            raise ConfigValidationError("P not bounded below by p0")
        curv = self.P.derivative_samples(2) * self.P.grid.h**2
        if not np.all(np.isfinite(curv)) or np.max(np.abs(curv)) > CURVATURE_LIMIT * np.max(vals):
            raise ConfigValidationError("traction not C2: second differences unbounded")

    def __call__(self, t, order=0):
        return self.P(t, order)


@dataclass(frozen=True, eq=False)
class DensityProfile:
    c: SampledFunction
    c0: float

    def __post_init__(self):
        vals = self.c.values
        if not np.all(np.isfinite(vals)):
            raise ConfigValidationError("density has non-finite samples")
        if np.any(vals <= 0.0):
            raise ConfigValidationError("density not strictly positive")
        if not self.c0 > 0.0:
            raise ConfigValidationError("density lower bound c0 must be > 0")
        if np.any(vals < self.c0):
            raise ConfigValidationError("c not bounded below by c0")

    def __call__(self, xi, order=0):
        return self.c(xi, order)

    def is_constant(self):
        return self.c.is_constant()


@dataclass(frozen=True, eq=False)
class MemoryKernel:
    M: SampledFunction
    N: SampledFunction
    Nprime: SampledFunction
    Nprime0: float

    @classmethod
    def from_M(cls, M):
        return cls(M, primitive_N(M), M, float(M.values[0]))

    def __post_init__(self):
        if self.N.values[0] != 1.0:
            raise ConfigValidationError("memory primitive must satisfy N(0) = 1")
        if not np.all(np.isfinite(self.M.values)) or not np.all(np.isfinite(self.N.values)):
            raise ConfigValidationError("memory kernel has non-finite samples")
        if not np.all(np.isfinite(self.M.derivative_samples(1))):
            raise ConfigValidationError("memory kernel derivative M' not finite")

    def is_zero(self):
        return self.M.is_constant() and self.M.values[0] == 0.0

    def on_grid(self, grid):
        """(N, M, M') sampled on ``grid`` (must start at 0)."""
        if grid.start != 0.0:
            raise ValueError("kernel grids start at t = 0")
        if self.M.expr is not None or grid == self.M.grid:
            Mg = self.M.resample(grid)
            return primitive_N(Mg).values, Mg.values, Mg.derivative_samples(1)
        t = grid.samples
        return self.N(t), self.M(t), self.M(t, 1)

    def N_at(self, t):
        return self.N(t)

    def M_at(self, t):
        return self.M(t)


@dataclass(frozen=True, eq=False)
class MaterialConfig:
    traction: TractionProfile
    density: DensityProfile
    kernel: MemoryKernel
    space_grid: Grid1D
    time_grid: Grid1D
    n_modes: int
    seed: int = 0
    source: dict = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ConfigValidationError("n_modes must be a positive integer")
        if not self.time_grid.end > 0:
            raise ConfigValidationError("time horizon must be > 0")

    @property
    def T(self):
        return self.time_grid.end

    def grid_for(self, T, n_points=None):
        """Uniform solver grid on [0, T] with the configured node count."""
        return Grid1D(0.0, float(T), n_points or self.time_grid.n_points)

    def with_n_modes(self, n_modes):
        src = dict(self.source) if self.source else None
        if src is not None:
            src["n_modes"] = int(n_modes)
        return MaterialConfig(self.traction, self.density, self.kernel, self.space_grid,
                              self.time_grid, int(n_modes), self.seed, src)


# ---------------------------------------------------------------- ingestion

TOP_KEYS = {"traction", "density", "memory", "space_grid", "time_grid", "n_modes", "seed"}
REQUIRED_KEYS = TOP_KEYS - {"seed"}


def _read_sample_file(path, base):
    p = Path(path)
    if not p.is_absolute() and base is not None:
        p = Path(base) / p
    try:
        data = np.loadtxt(p, delimiter=",", ndmin=2, comments="#")
    except (OSError, ValueError) as exc:
        raise ConfigParseError(f"cannot read samples from {p}: {exc}") from None
    return data[:, -1]


def _function_from_spec(name, spec, var, interval, n_default, base):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigValidationError(f"{name}: expected an object with a 'kind' key")
    kind = spec["kind"]
    if kind == "expr":
        if not isinstance(spec.get("expr"), (str, int, float)):
            raise ConfigValidationError(f"{name}: 'expr' kind needs an 'expr' string")
        try:
            e = Expression(str(spec["expr"]), var=var)
        except ExpressionError as exc:
            raise ConfigValidationError(f"{name}: {exc}") from None
        grid = Grid1D(interval[0], interval[1], n_default)
        return SampledFunction.from_expression(e, grid)
    if kind == "samples":
        if "values" in spec:
            vals = spec["values"]
            if not isinstance(vals, list) or not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
                raise ConfigValidationError(f"{name}: 'values' must be a list of numbers")
            vals = np.array(vals, dtype=float)
        elif "file" in spec:
            vals = _read_sample_file(spec["file"], base)
        else:
            raise ConfigValidationError(f"{name}: 'samples' kind needs 'values' or 'file'")
        if len(vals) < 2:
            raise ConfigValidationError(f"{name}: need at least 2 samples")
        return SampledFunction(Grid1D(interval[0], interval[1], len(vals)), vals, SAMPLES)
    raise ConfigValidationError(f"{name}: unknown kind {kind!r} (expected 'expr' or 'samples')")


def _positive_int(d, key, where):
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigValidationError(f"{where}.{key} must be a positive integer")
    return v


def config_from_dict(d, base=None):
    """Validate a config mapping (the JSON document) into a MaterialConfig."""
    if not isinstance(d, dict):
        raise ConfigValidationError("config must be a JSON object")
    unknown = set(d) - TOP_KEYS
    if unknown:
        raise ConfigValidationError(f"unknown config keys: {sorted(unknown)}")
    missing = REQUIRED_KEYS - set(d)
    if missing:
        raise ConfigValidationError(f"missing config keys: {sorted(missing)}")

    sg, tg = d["space_grid"], d["time_grid"]
    if not isinstance(sg, dict) or not isinstance(tg, dict):
        raise ConfigValidationError("space_grid and time_grid must be objects")
    n_space = _positive_int(sg, "n", "space_grid")
    n_time = _positive_int(tg, "n", "time_grid")
    t_max = tg.get("t_max")
    if isinstance(t_max, bool) or not isinstance(t_max, (int, float)) or not t_max > 0:
        raise ConfigValidationError("time_grid.t_max must be a positive number")
    space_grid = Grid1D(0.0, math.pi, n_space)
    time_grid = Grid1D(0.0, float(t_max), n_time)
    n_modes = _positive_int(d, "n_modes", "config")
    seed = d.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigValidationError("seed must be an integer")

    P = _function_from_spec("traction", d["traction"], "t", (0.0, float(t_max)), n_time, base)
    c = _function_from_spec("density", d["density"], "xi", (0.0, math.pi), n_space, base)
    M = _function_from_spec("memory", d["memory"], "t", (0.0, float(t_max)), n_time, base)

    p0 = d["traction"].get("p0", float(np.min(P.values)) if np.min(P.values) > 0 else 0.0)
    c0 = d["density"].get("c0", float(np.min(c.values)) if np.min(c.values) > 0 else 0.0)
    if np.min(P.values) <= 0.0:
        raise ConfigValidationError("traction not strictly positive")
    if np.min(c.values) <= 0.0:
        raise ConfigValidationError("density not strictly positive")

    return MaterialConfig(TractionProfile(P, float(p0)), DensityProfile(c, float(c0)),
                          MemoryKernel.from_M(M), space_grid, time_grid, n_modes, seed,
                          _resolved(d, P, c, M))


def _resolved(d, P, c, M):
    """The config with file-backed samples inlined, used for saving and hashing."""
    out = json.loads(json.dumps(d))
    for key, f in (("traction", P), ("density", c), ("memory", M)):
        if out[key].get("kind") == "samples":
            out[key].pop("file", None)
            out[key]["values"] = [float(v) for v in f.values]
    return out


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"malformed JSON in {path}: {exc}") from None
    return config_from_dict(d, base=path.parent)


def save_config(config, path):
    Path(path).write_text(json.dumps(config.source, indent=2, sort_keys=True))


def canonical_json(config):
    return json.dumps(config.source, sort_keys=True, separators=(",", ":"))
