import math

import numpy as np
import pytest

from chns_tf.diagnostics import (
    discrete_energy,
    error_norms,
    fit_rates,
    hminus1_norm,
    mass,
    physical_energy,
)
from chns_tf.fields import ScalarField, StaggeredVelocity, norm_l2
from chns_tf.mms import eval_state, initial_shrinking_bubble, random_smooth_field
from chns_tf.model import GridSpec, PhysicalParams
from chns_tf.schemes import (
    SchemeKind,
    State,
    StateHistory,
    StepInput,
    advance,
    initial_state,
    startup_first_level,
)

PI = np.pi
UNIT = PhysicalParams.unit()


def _rand_vel(g, rng):
    return StaggeredVelocity.from_faces(
        g, rng.standard_normal((g.nx + 1, g.ny)), rng.standard_normal((g.nx, g.ny + 1))
    )


def _state(phi, vel=None):
    g = phi.grid
    z = ScalarField(g)
    return State(phi, z, vel if vel is not None else StaggeredVelocity(g), z)


# -- energies -----------------------------------------------------------------------

@pytest.mark.parametrize("value, expected", [(1.0, 0.0), (0.0, 0.25)])
def test_energy_constant_states(value, expected):
    g = GridSpec.square(8)
    s = _state(ScalarField.from_values(g, value))
    e = discrete_energy(StateHistory(s, s.copy()), UNIT)
    assert e.total == pytest.approx(expected, abs=1e-15)
    assert physical_energy(s, UNIT) == pytest.approx(expected, abs=1e-15)


def test_energy_needs_two_levels(grid8):
    with pytest.raises(ValueError):
        discrete_energy(StateHistory(_state(ScalarField(grid8))), UNIT)


def _oracle_energy(phi1, phi0, u1, u0, v1, v0, h, eps, L):
    """Term-by-term reducer written independently of the field classes."""
    def grad_sq(a):
        gx = np.diff(a, axis=0) / h
        gy = np.diff(a, axis=1) / h
        return h * h * (np.sum(gx**2) + np.sum(gy**2))

    def face_sq(u, v):
        wu = np.ones_like(u)
        wu[[0, -1], :] = 0.5
        wv = np.ones_like(v)
        wv[:, [0, -1]] = 0.5
        return h * h * (np.sum(wu * u**2) + np.sum(wv * v**2))

    F = lambda a: 0.25 * (a**2 - 1) ** 2
    e = 0.25 * (grad_sq(phi1) + grad_sq(2 * phi1 - phi0) + grad_sq(phi1 - phi0))
    e += 0.25 * (face_sq(u1, v1) + face_sq(2 * u1 - u0, 2 * v1 - v0) + face_sq(u1 - u0, v1 - v0))
    e += 3 * L / eps * h * h * np.sum((phi1 - phi0) ** 2)
    e += h * h * (np.sum(F(phi1)) + 0.5 * np.sum(F(phi1) - F(phi0)))
    return e


def test_energy_matches_independent_oracle(rng):
    g = GridSpec.square(16)
    p1, p0 = random_smooth_field(g, rng), random_smooth_field(g, rng)
    v1, v0 = _rand_vel(g, rng), _rand_vel(g, rng)
    h = StateHistory(_state(p1, v1), _state(p0, v0))
    for L in (1.0, 2.5):
        e = discrete_energy(h, UNIT, L=L)
        ref = _oracle_energy(p1.values, p0.values, v1.u_faces, v0.u_faces, v1.v_faces, v0.v_faces, g.hx, 1.0, L)
        assert e.total == pytest.approx(ref, rel=1e-12)
        assert e.total == pytest.approx(sum(e.parts), rel=1e-14)
        assert all(x >= 0 for x in (*e.grad_phi_terms, *e.velocity_terms, e.stab_term))


def test_energy_weighting():
    g = GridSpec.square(8)
    rng = np.random.default_rng(0)
    p1, p0 = random_smooth_field(g, rng), random_smooth_field(g, rng)
    h = StateHistory(_state(p1), _state(p0))
    prm = PhysicalParams(epsilon=0.5, gamma=2.0, lambda_mix=0.3)
    lit = discrete_energy(h, prm, weighted=False)
    w = discrete_energy(h, prm, weighted=True)
    assert w.grad_phi_terms[0] == pytest.approx(0.6 * lit.grad_phi_terms[0])
    assert w.stab_term == pytest.approx(2.0 * lit.stab_term)
    assert w.potential_terms == pytest.approx(4.0 * lit.potential_terms)
    assert discrete_energy(h, UNIT, weighted=False).total == pytest.approx(discrete_energy(h, UNIT).total)


def test_physical_energy_decreases_for_bubble():
    g = GridSpec.square(16, length=2 * PI)
    prm = PhysicalParams(epsilon=0.15, mobility_M=0.01, S_stab=3.0 / 0.1)
    phi, vel, _ = initial_shrinking_bubble(g, prm.epsilon)
    h = startup_first_level(initial_state(phi, vel, prm), 0.1, prm)
    energies = [physical_energy(h.current, prm)]
    for _ in range(10):
        h = advance(SchemeKind.BETF_LINEAR, StepInput(h, 0.1, prm))
        energies.append(physical_energy(h.current, prm))
    assert energies[-1] < energies[0]


def test_lemma_bounds_over_200_steps(rng):
    """Energy-derived quantities stay under a cap fixed by the initial data."""
    g = GridSpec.square(8)
    dt = 0.1
    prm = PhysicalParams.unit(S_stab=3.0 / dt)
    phi = random_smooth_field(g, rng)
    h = startup_first_level(initial_state(phi, StaggeredVelocity(g), prm), dt, prm)
    e1 = discrete_energy(h, prm)
    cap = 4.0 * (e1.total + abs(e1.potential_terms) + mass(phi.map(lambda a: 0.25 * (a**2 - 1) ** 2)))
    second_diff = 0.0
    for _ in range(200):
        prev = h
        h = advance(SchemeKind.BETF_LINEAR, StepInput(h, dt, prm))
        e = discrete_energy(h, prm)
        d2 = h.current.phi - 2.0 * prev.current.phi + prev.previous.phi
        second_diff += prm.S_stab * dt * float(np.sum(d2.values**2)) * g.cell_area
        assert 4 * sum(e.grad_phi_terms) <= cap
        assert 4 * sum(e.velocity_terms) <= cap
        assert e.potential_terms <= cap
        assert second_diff <= cap


def test_boundary_outflow():
    from chns_tf.diagnostics import boundary_outflow
    from chns_tf.fields import BoundaryCondition

    g = GridSpec.square(8)
    rot = BoundaryCondition.rotational()
    vel = StaggeredVelocity.from_function(g, rot.velocity, rot)
    # uniform phi: the rotational wall flux has zero net value
    assert abs(boundary_outflow(ScalarField.from_values(g, -1.0), vel)) < 1e-15
    # random phi against the analytic wall velocities
    f = np.random.default_rng(3).standard_normal(g.shape)
    xc, yc = g.cell_centers()
    xs, ys = xc[:, 0], yc[0, :]
    expected = g.hy * np.sum((f[-1, :] - f[0, :]) * (ys - 0.5)) + g.hx * np.sum((f[:, -1] - f[:, 0]) * (0.5 - xs))
    assert boundary_outflow(ScalarField.from_values(g, f), vel) == pytest.approx(expected, abs=1e-14)
    phi = ScalarField.from_function(g, lambda x, y: x + 0 * y)
    left, right = xs[0], xs[-1]
    bc = BoundaryCondition(lambda x, y: (1.0 + 0 * x, 0 * y))
    uniform = StaggeredVelocity.from_function(g, bc.velocity, bc)
    assert boundary_outflow(phi, uniform) == pytest.approx(right - left)
    assert boundary_outflow(phi, StaggeredVelocity(g)) == 0.0


# -- mass and errors -------------------------------------------------------------------

def test_mass_examples():
    g = GridSpec.square(8)
    assert mass(ScalarField.from_values(g, 2.0)) == pytest.approx(2.0)
    anti = ScalarField.from_function(g, lambda x, y: (x - 0.5) * np.cos(y))
    assert abs(mass(anti)) < 1e-15


def test_error_norms_examples():
    g = GridSpec.square(32)
    prm = PhysicalParams()
    ex = eval_state(g, 0.4, prm)
    assert all(v == 0 for v in error_norms(ex, ex).values())
    shifted = State(ex.phi, ex.mu, ex.vel, ex.p + 3.7, ex.t)
    assert error_norms(shifted, ex)["p"] < 1e-13
    delta = 1e-3
    pert = State(ex.phi + ScalarField.from_function(g, lambda x, y: delta * np.sin(PI * x) + 0 * y),
                 ex.mu, ex.vel, ex.p, ex.t)
    assert error_norms(pert, ex)["phi"] == pytest.approx(delta * math.sqrt(0.5), rel=1e-3)


# -- rates ------------------------------------------------------------------------------

@pytest.mark.parametrize(
    "errs, rate",
    [((0.1, 0.025), 2.0), ((2.2146e-4, 5.5496e-5), 1.9966), ((4.2910e-3, 2.1818e-3), 0.9758)],
)
def test_fit_rates_examples(errs, rate):
    t = fit_rates([1 / 64, 1 / 128], {"phi": errs})
    assert t.rates["phi"][0] == pytest.approx(rate, abs=5e-5)
    assert t.slopes["phi"] == pytest.approx(rate, abs=5e-5)


def test_fit_rates_errors_and_rows():
    with pytest.raises(ValueError):
        fit_rates([0.1], {"phi": [1.0]})
    with pytest.raises(ValueError):
        fit_rates([0.1, 0.05], {"phi": [1.0, 0.0]})
    with pytest.raises(ValueError):
        fit_rates([0.1, 0.05], {"phi": [1.0]})
    t = fit_rates([0.1, 0.05, 0.025], {"phi": [4.0, 1.0, 0.25], "u": [2.0, 1.0, 0.5]})
    rows = t.as_rows()
    assert len(rows) == 3 and math.isnan(rows[0]["rate_phi"])
    assert rows[2]["rate_u"] == pytest.approx(1.0)
    assert t.slopes["phi"] == pytest.approx(2.0)


# -- H^-1 ------------------------------------------------------------------------------

def test_hminus1_zero_and_precondition():
    g = GridSpec.square(8)
    assert hminus1_norm(ScalarField(g)) == 0.0
    with pytest.raises(ValueError, match="mean-zero"):
        hminus1_norm(ScalarField.from_values(g, 1.0))


def test_hminus1_cosine():
    errs = []
    for n in (16, 32, 64):
        g = GridSpec.square(n)
        val = hminus1_norm(ScalarField.from_function(g, lambda x, y: np.cos(PI * x) + 0 * y))
        errs.append(abs(val - 1 / (PI * math.sqrt(2))))
    assert errs[-1] < 0.01 / (PI * math.sqrt(2))
    assert np.log2(errs[-2] / errs[-1]) > 1.9


def _mean_zero(g, rng):
    f = random_smooth_field(g, rng)
    return f - mass(f) / g.area


def test_hminus1_is_a_norm(rng):
    g = GridSpec.square(16)
    for _ in range(10):
        a, b = _mean_zero(g, rng), _mean_zero(g, rng)
        c = rng.uniform(-5, 5)
        na, nb = hminus1_norm(a), hminus1_norm(b)
        assert hminus1_norm(a * c) == pytest.approx(abs(c) * na, rel=1e-10)
        assert hminus1_norm(a + b) <= na + nb + 1e-10


def test_poincare_bound(rng):
    g = GridSpec.square(16)
    # smallest nonzero eigenvalue of the discrete Neumann Laplacian on the unit square
    lam1 = 4.0 / g.hx**2 * math.sin(PI * g.hx / 2) ** 2
    C = 1.0 / math.sqrt(lam1)
    for _ in range(50):
        z = ScalarField.from_values(g, rng.standard_normal(g.shape))
        z = z - mass(z) / g.area
        assert hminus1_norm(z) <= C * norm_l2(z) * (1 + 1e-10)
