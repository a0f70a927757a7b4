import numpy as np
import pytest
from hypothesis import given, strategies as st

from chns_tf.model import F_potential, GridSpec, PhysicalParams, f_potential, fprime_potential


@pytest.mark.parametrize("phi, expected", [(0.0, 0.0), (1.0, 0.0), (2.0, 6.0)])
def test_f_values(phi, expected):
    assert f_potential(phi) == expected


@pytest.mark.parametrize("phi, expected", [(1.0, 0.0), (0.0, 0.25), (2.0, 2.25)])
def test_F_values(phi, expected):
    assert F_potential(phi) == expected


@pytest.mark.parametrize("phi, expected", [(0.0, -1.0), (1.0, 2.0), (-1.0, 2.0)])
def test_fprime_values(phi, expected):
    assert fprime_potential(phi) == expected


@pytest.mark.parametrize("delta", [1e-3, 1e-4])
def test_F_derivative_is_f(delta):
    phi = np.linspace(-2, 2, 81)
    fd = (F_potential(phi + delta) - F_potential(phi - delta)) / (2 * delta)
    # central difference error is delta^2 * F'''/6 = delta^2 * phi, plus round-off
    assert np.max(np.abs(fd - f_potential(phi))) <= 2.0 * delta**2 + 1e-10


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_f_is_odd(phi):
    assert f_potential(-phi) == -f_potential(phi)


def test_fprime_bounded_on_unit_interval():
    phi = np.linspace(-1, 1, 2001)
    assert np.max(np.abs(fprime_potential(phi))) <= 2.0


def test_params_defaults_and_lambda():
    p = PhysicalParams()
    assert p.lambda_mix == p.epsilon
    assert PhysicalParams(epsilon=0.3, lambda_mix=0.01).lambda_mix == 0.01


@pytest.mark.parametrize("field, value", [("epsilon", 0.0), ("mobility_M", -1.0), ("nu", 0.0),
                                          ("gamma", -0.1), ("lambda_mix", 0.0)])
def test_params_reject_bad_values(field, value):
    with pytest.raises(ValueError, match=field):
        PhysicalParams(**{field: value})


def test_energy_stability_condition():
    p = PhysicalParams(L_lipschitz=1.0, S_stab=3.0 / 0.1)
    assert p.energy_stable(0.1)
    assert not p.with_updates(S_stab=29.0).energy_stable(0.1)


def test_grid_geometry():
    g = GridSpec(8, 4, 1.0, 2.0, 2.0, 1.0)
    assert (g.hx, g.hy) == (0.25, 0.25)
    x, y = g.cell_centers()
    assert x[0, 0] == 1.125 and y[0, 0] == 2.125
    xu, yu = g.xface_centers()
    assert xu.shape == (9, 4) and xu[0, 0] == 1.0 and yu[0, 0] == 2.125
    xv, yv = g.yface_centers()
    assert xv.shape == (8, 5) and yv[0, -1] == 3.0
    assert np.isclose(g.xface_weights().sum(), g.area)
    assert np.isclose(g.yface_weights().sum(), g.area)


def test_grid_rejects_small():
    with pytest.raises(ValueError):
        GridSpec(3, 8)
