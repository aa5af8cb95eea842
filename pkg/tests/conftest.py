import math

import numpy as np
import pytest

from viscostring.material import config_from_dict
from viscostring.scenarios import config_dict, make_config
from viscostring.spectral import solve_eigensystem


def custom_config(base="constant", **fields):
    """Scenario config with some function specs replaced by expressions."""
    kw = {k: fields.pop(k) for k in ("n_space", "n_time", "t_max", "n_modes") if k in fields}
    d = config_dict(base, **kw)
    for key, expr in fields.items():
        d[key] = {"kind": "expr", "expr": expr}
    return config_from_dict(d)


@pytest.fixture(scope="session")
def constant_cfg():
    return make_config("constant", n_modes=16, t_max=4.0)


@pytest.fixture(scope="session")
def constant_basis(constant_cfg):
    return solve_eigensystem(constant_cfg.density, 16, constant_cfg.space_grid)


@pytest.fixture(scope="session")
def generic_cfg():
    return make_config("generic", n_modes=16)


@pytest.fixture(scope="session")
def generic_basis(generic_cfg):
    return solve_eigensystem(generic_cfg.density, 32, generic_cfg.space_grid)


@pytest.fixture(scope="session")
def generic_T():
    # 1.2 x T0 for P = 1 + 0.3 sin t (T0 frozen from a 30-digit mpmath root solve)
    return 1.2 * 2.86303275406101416


def l2(v, h):
    return math.sqrt(float(np.sum(v[1:] ** 2 + v[:-1] ** 2) * h / 2))


# acceptance verdicts, filled by test_acceptance.py and echoed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
