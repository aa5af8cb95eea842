import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viscostring.material import (ANALYTIC, SAMPLES, ConfigError, ConfigParseError,
                                  ConfigValidationError, Grid1D, MemoryKernel, SampledFunction,
                                  canonical_json, config_from_dict, load_config, primitive_N,
                                  save_config)
from viscostring.quadrature import cumulative_trapezoid
from viscostring.scenarios import config_dict

from conftest import custom_config


def test_grid_invariants():
    g = Grid1D(0.0, 2.0, 5)
    assert g.h == 0.5
    assert np.all(np.diff(g.samples) > 0)
    assert g.refined(2).n_points == 9
    assert np.array_equal(g.refined(2).samples[::2], g.samples)
    with pytest.raises(ConfigValidationError):
        Grid1D(1.0, 1.0, 3)
    with pytest.raises(ConfigValidationError):
        Grid1D(0.0, 1.0, 1)


def test_sampled_function_length_and_interpolation():
    g = Grid1D(0.0, 1.0, 51)
    with pytest.raises(ConfigValidationError):
        SampledFunction(g, np.zeros(50))
    f = SampledFunction(g, np.sin(g.samples))
    x = np.array([0.013, 0.5017, 0.999])
    assert np.max(np.abs(f(x) - np.sin(x))) < 1e-7
    assert f.provenance == SAMPLES


def test_sampled_function_holds_end_values_outside(caplog):
    g = Grid1D(0.0, 1.0, 11)
    f = SampledFunction(g, g.samples**2)
    with caplog.at_level(logging.WARNING):
        v = f(np.array([1.5, -1.0]))
    assert v[0] == pytest.approx(1.0) and v[1] == pytest.approx(0.0)
    assert "outside" in caplog.text


def test_constant_config_is_valid_with_unit_N():
    cfg = custom_config("constant")
    assert np.all(cfg.kernel.N.values == 1.0)
    assert cfg.kernel.is_zero()
    assert cfg.traction.P.provenance == ANALYTIC


def test_zero_traction_node_is_rejected():
    d = config_dict("constant")
    d["traction"] = {"kind": "samples", "values": [1.0] * 1000 + [0.0] + [1.0] * 1000}
    with pytest.raises(ConfigValidationError, match="traction not strictly positive"):
        config_from_dict(d)


def test_p0_violation_is_named():
    d = config_dict("generic")
    d["traction"]["p0"] = 0.9
    with pytest.raises(ConfigValidationError, match="P not bounded below by p0"):
        config_from_dict(d)


def test_rough_traction_is_rejected():
    d = config_dict("constant", n_time=2001)
    vals = np.ones(2001)
    vals[1000] = 1.5
    d["traction"] = {"kind": "samples", "values": vals.tolist()}
    with pytest.raises(ConfigValidationError, match="not C2"):
        config_from_dict(d)


def test_exponential_kernel_primitive():
    # M = -e^{-t}  =>  N = e^{-t}
    cfg = custom_config("constant", memory="-exp(-t)")
    t = cfg.time_grid.samples
    assert cfg.kernel.N.values[0] == 1.0
    assert np.max(np.abs(cfg.kernel.N.values - np.exp(-t))) < 1e-12


def test_linear_kernel_primitive_within_h2_bound():
    # M = t  =>  N = 1 + t^2/2; samples-backed M, so M' comes from differences
    g = Grid1D(0.0, 4.0, 401)
    N = primitive_N(SampledFunction(g, g.samples.copy()))
    err = np.max(np.abs(N.values - (1 + g.samples**2 / 2)))
    assert err <= g.h**2 * 4.0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=5, max_size=40))
def test_primitive_matches_module_quadrature(vals):
    g = Grid1D(0.0, 3.0, len(vals))
    M = SampledFunction(g, np.array(vals))
    N = primitive_N(M)
    ref = 1.0 + cumulative_trapezoid(M.values, g.h, dy=M.derivative_samples(1))
    assert N.values[0] == 1.0
    assert np.max(np.abs(N.values[1:] - ref[1:])) <= 1e-12


def test_kernel_rejects_bad_primitive():
    g = Grid1D(0.0, 1.0, 5)
    M = SampledFunction(g, np.zeros(5))
    with pytest.raises(ConfigValidationError, match="N\\(0\\) = 1"):
        MemoryKernel(M, SampledFunction(g, np.full(5, 2.0)), M, 0.0)


MALFORMED = [
    ("not a dict", []),
    ("unknown key", {"bogus": 1}),
    ("missing key", {"traction": {"kind": "expr", "expr": "1"}}),
    ("bad kind", {"traction": {"kind": "table"}}),
    ("bad expr", {"traction": {"kind": "expr", "expr": "import os"}}),
    ("wrong variable", {"density": {"kind": "expr", "expr": "1 + t"}}),
    ("non-numeric samples", {"memory": {"kind": "samples", "values": ["a", "b"]}}),
    ("one sample", {"memory": {"kind": "samples", "values": [1.0]}}),
    ("negative n", {"space_grid": {"n": -3}}),
    ("bool n", {"time_grid": {"n": True, "t_max": 3.0}}),
    ("zero horizon", {"time_grid": {"n": 11, "t_max": 0}}),
    ("float modes", {"n_modes": 2.5}),
    ("negative density", {"density": {"kind": "expr", "expr": "-1"}}),
    ("nan samples", {"memory": {"kind": "samples", "values": [0.0, float("nan"), 0.0]}}),
    ("seed string", {"seed": "x"}),
]


@pytest.mark.parametrize("label,patch", MALFORMED, ids=[m[0] for m in MALFORMED])
def test_validation_is_total(label, patch):
    if not isinstance(patch, dict):
        d = patch
    else:
        d = config_dict("constant", n_space=101, n_time=101)
        d.update(patch)
        if label == "missing key":
            d.pop("density")
    with pytest.raises(ConfigError):
        config_from_dict(d)


def test_sample_file_relative_to_config(tmp_path):
    vals = 1 + 0.1 * np.sin(np.linspace(0, 4, 201))
    np.savetxt(tmp_path / "P.csv", vals, delimiter=",")
    d = config_dict("constant", n_time=201, t_max=4.0, n_space=201)
    d["traction"] = {"kind": "samples", "file": "P.csv"}
    (tmp_path / "cfg.json").write_text(json.dumps(d))
    cfg = load_config(tmp_path / "cfg.json")
    assert np.allclose(cfg.traction.P.values, vals)
    # saving inlines the samples so the copy is self-contained
    save_config(cfg, tmp_path / "copy.json")
    again = load_config(tmp_path / "copy.json")
    assert np.array_equal(again.traction.P.values, cfg.traction.P.values)


def test_parse_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigParseError):
        load_config(p)
    with pytest.raises(ConfigParseError):
        load_config(tmp_path / "missing.json")


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.5, 3.0, allow_subnormal=False), min_size=5, max_size=30),
       st.integers(0, 2**31))
def test_save_load_round_trip_is_bit_exact(vals, seed):
    import tempfile
    from pathlib import Path
    d = config_dict("constant", n_space=101, n_time=len(vals), t_max=5.0)
    d["density"] = {"kind": "samples", "values": [1.0 + 0.25 * math.sin(k) for k in range(101)]}
    d["memory"] = {"kind": "samples", "values": [v - 2.0 for v in vals]}
    d["seed"] = seed
    cfg = config_from_dict(d)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "c.json"
        save_config(cfg, path)
        back = load_config(path)
    assert np.array_equal(back.kernel.M.values, cfg.kernel.M.values)
    assert np.array_equal(back.density.c.values, cfg.density.c.values)
    assert back.seed == seed
    assert canonical_json(back) == canonical_json(cfg)
