import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viscostring.material import Grid1D, SampledFunction
from viscostring.simulate import (MissingForcingError, eta_series, eta_to_observation,
                                  evaluate_solution_series, observation_to_eta,
                                  representation_wT, simulate_modal, write_eta_csv,
                                  write_wfinal_csv)
from viscostring.spectral import SQRT_2_PI

from conftest import custom_config, l2

PI_GRID = Grid1D(0.0, math.pi, 2001)


def ramp(t):
    return np.asarray(t, dtype=float)


def smooth_f(t):
    return np.sin(2 * t) * np.exp(-0.1 * t)


@pytest.fixture(scope="module")
def unit_source_run(constant_cfg, constant_basis):
    b = np.zeros(constant_basis.n_modes)
    b[0] = 1.0
    return simulate_modal(constant_cfg, constant_basis, math.pi, source_b=b, g=ramp, grid=PI_GRID)


def test_zero_forcing_gives_zero_state(constant_cfg, constant_basis):
    traj = simulate_modal(constant_cfg, constant_basis, 2.0, boundary_f=lambda t: 0 * t,
                          source_b=np.zeros(16), g=ramp)
    assert np.all(traj.w_modal == 0.0) and np.all(traj.eta.values == 0.0)
    assert np.all(traj.w_final == 0.0)


def test_missing_forcing_is_an_error(constant_cfg, constant_basis):
    with pytest.raises(MissingForcingError):
        simulate_modal(constant_cfg, constant_basis, 2.0)
    with pytest.raises(MissingForcingError):
        simulate_modal(constant_cfg, constant_basis, 2.0, source_b=np.ones(16))


def test_first_mode_ramp_source(unit_source_run):
    t = PI_GRID.samples
    assert np.max(np.abs(unit_source_run.w_modal[0] - (1 - np.cos(t)))) <= 1e-5
    assert np.max(np.abs(unit_source_run.w_modal[1:])) == 0.0


def test_series_evaluation(unit_source_run, constant_basis, constant_cfg):
    w0, _ = evaluate_solution_series(unit_source_run, constant_basis, 0.0)
    assert np.all(w0 == 0.0)
    w, tail = evaluate_solution_series(unit_source_run, constant_basis, math.pi / 2)
    xi = constant_cfg.space_grid.samples
    assert np.max(np.abs(w - SQRT_2_PI * np.sin(xi))) <= 1e-5
    assert tail == 0.0
    with pytest.raises(ValueError):
        evaluate_solution_series(unit_source_run, constant_basis, 1e-5)


def test_eta_is_weighted_modal_sum(unit_source_run, constant_basis):
    eta = constant_basis.slopes0 @ unit_source_run.w_modal
    assert np.array_equal(eta, unit_source_run.eta.values)


@settings(max_examples=5, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_in_boundary_control(alpha, beta):
    cfg = custom_config("generic", n_time=401, t_max=8.0)
    from viscostring.spectral import solve_eigensystem
    b = solve_eigensystem(cfg.density, 6, cfg.space_grid)
    grid = Grid1D(0.0, 2.0, 401)
    f1, f2 = np.sin, lambda t: t**2
    w1 = simulate_modal(cfg, b, 2.0, boundary_f=f1, grid=grid).w_modal
    w2 = simulate_modal(cfg, b, 2.0, boundary_f=f2, grid=grid).w_modal
    w12 = simulate_modal(cfg, b, 2.0, boundary_f=lambda t: alpha * f1(t) + beta * f2(t),
                         grid=grid).w_modal
    assert np.max(np.abs(w12 - (alpha * w1 + beta * w2))) <= 1e-10 * (1 + np.max(np.abs(w12)))


def test_forward_matches_representation(generic_cfg, generic_basis):
    basis = generic_basis.truncated(12)
    T = 3.0
    w = simulate_modal(generic_cfg, basis, T, boundary_f=smooth_f).w_modal[:, -1]
    rep = representation_wT(generic_cfg, basis, T, boundary_f=smooth_f)
    assert np.max(np.abs(w - rep) / np.maximum(np.abs(rep), 1e-12 * np.max(np.abs(rep)))) <= 1e-4


def test_source_matches_representation(generic_cfg, generic_basis):
    basis = generic_basis.truncated(6)
    b = 1.0 / np.arange(1, 7)
    g = np.cos
    w = simulate_modal(generic_cfg, basis, 2.5, source_b=b, g=g).w_modal[:, -1]
    rep = representation_wT(generic_cfg, basis, 2.5, source_b=b, g=g)
    assert np.max(np.abs(w - rep)) <= 1e-4 * np.max(np.abs(rep))


def test_eta_against_kernel_series(generic_cfg, generic_basis):
    basis = generic_basis.truncated(6)
    b = 1.0 / np.arange(1, 7) ** 2
    grid = Grid1D(0.0, 3.0, 1501)
    traj = simulate_modal(generic_cfg, basis, 3.0, source_b=b, g=np.cos, grid=grid)
    t_nodes = [0.9, 1.8, 3.0]
    ref = eta_series(generic_cfg, basis, b, np.cos, t_nodes, grid)
    got = traj.eta(np.array(t_nodes))
    assert np.max(np.abs(got - ref)) <= 1e-3 * max(1.0, np.max(np.abs(ref)))


def test_self_convergence_in_modes(generic_cfg, generic_basis):
    T = 3.0
    w16 = simulate_modal(generic_cfg, generic_basis.truncated(16), T, boundary_f=smooth_f)
    w32 = simulate_modal(generic_cfg, generic_basis, T, boundary_f=smooth_f)
    h = generic_cfg.space_grid.h
    n16, n32 = l2(w16.w_final, h), l2(w32.w_final, h)
    assert abs(n32 - n16) <= 1e-3 * n32


def test_observation_without_memory_is_pointwise(constant_cfg):
    g = Grid1D(0.0, 3.0, 301)
    y = SampledFunction(g, np.sin(g.samples))
    eta = observation_to_eta(y, constant_cfg.traction, constant_cfg.density, constant_cfg.kernel)
    assert np.array_equal(eta.values, -np.sin(g.samples))


def test_observation_constant_memory_hand_case():
    mu = 0.7
    cfg = custom_config("constant", memory=repr(mu), t_max=3.0)
    g = Grid1D(0.0, 3.0, 601)
    y = SampledFunction(g, -(1 + mu * g.samples))
    eta = observation_to_eta(y, cfg.traction, cfg.density, cfg.kernel)
    assert np.max(np.abs(eta.values - 1.0)) <= 1e-10


def test_observation_round_trip(generic_cfg):
    g = Grid1D(0.0, 4.0, 2001)
    eta = SampledFunction(g, np.cos(2 * g.samples) + 0.3 * g.samples)
    y = eta_to_observation(eta, generic_cfg.traction, generic_cfg.density, generic_cfg.kernel)
    back = observation_to_eta(y, generic_cfg.traction, generic_cfg.density, generic_cfg.kernel)
    assert np.max(np.abs(back.values - eta.values)) <= 1e-6


def test_csv_outputs(unit_source_run, constant_cfg, tmp_path):
    write_eta_csv(unit_source_run, tmp_path / "eta.csv")
    write_wfinal_csv(unit_source_run, constant_cfg.space_grid.samples, tmp_path / "wfinal.csv")
    rows = list(csv.reader(open(tmp_path / "eta.csv")))
    assert rows[0] == ["t", "eta"] and len(rows) == PI_GRID.n_points + 1
    rows = list(csv.reader(open(tmp_path / "wfinal.csv")))
    assert rows[0] == ["xi", "w_final"] and len(rows) == constant_cfg.space_grid.n_points + 1
