"""Backward-Euler steppers for the CHNS system and their time-filtered variants.

Every step solves one monolithic sparse system in ``(phi, mu, u, p)`` plus a
Lagrange multiplier pinning the pressure mean. The time filter

    y = y~ - (y~ - 2 y^n + y^{n-1}) / 3

turns the first-order steps into second-order ones.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from chns_tf.assembly import OperatorSet
from chns_tf.fields import (
    BoundaryCondition,
    GridMismatchError,
    ScalarField,
    StaggeredVelocity,
    apply_ghosts,
)
from chns_tf.linalg import SolveReport, SparseSystem, attach_mean_zero, factor_solve
from chns_tf.model import GridSpec, PhysicalParams, f_potential, fprime_potential

log = logging.getLogger(__name__)


class SchemeKind(str, enum.Enum):
    BE_LINEAR = "be_linear"
    BETF_NONLINEAR = "betf_nonlinear"
    BETF_LINEAR = "betf_linear"


class PressureFilter(str, enum.Enum):
    OPTION_A = "option_a"  # filter p like the other unknowns
    OPTION_B = "option_b"  # keep the unfiltered p~


class HistoryError(ValueError):
    pass


class NonlinearSolveError(RuntimeError):
    def __init__(self, message: str, residuals: list):
        super().__init__(message)
        self.residuals = list(residuals)


@dataclass(frozen=True)
class NewtonSettings:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-12
    max_iters: int = 50
    divergence_guard: float = 10.0

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.divergence_guard > 1):
            raise ValueError("Newton tolerances must be positive and the guard > 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class State:
    phi: ScalarField
    mu: ScalarField
    vel: StaggeredVelocity
    p: ScalarField
    t: float = 0.0

    @property
    def grid(self) -> GridSpec:
        return self.phi.grid

    def copy(self) -> "State":
        return State(self.phi.copy(), self.mu.copy(), self.vel.copy(), self.p.copy(), self.t)


@dataclass
class StepInfo:
    newton_iters: int = 0
    residuals: list = field(default_factory=list)
    div_inf: float = 0.0
    solve: Optional[SolveReport] = None


@dataclass
class StateHistory:
    """Levels ``n`` (``current``) and ``n-1`` (``previous``).

    ``p_tilde`` keeps the unfiltered pressures of the same two levels; they
    seed the Newton guess so that the pressure option never feeds back into
    phi, mu or u.
    """

    current: State
    previous: Optional[State] = None
    step: int = 0
    p_tilde: tuple = ()
    info: StepInfo = field(default_factory=StepInfo)

    def __post_init__(self):
        if self.previous is not None and self.previous.grid != self.current.grid:
            raise GridMismatchError("history levels live on different grids")
        if not self.p_tilde:
            ps = [self.current.p.copy()]
            if self.previous is not None:
                ps.insert(0, self.previous.p.copy())
            self.p_tilde = tuple(ps)

    @property
    def t(self) -> float:
        return self.current.t

    @property
    def grid(self) -> GridSpec:
        return self.current.grid

    @property
    def two_level(self) -> bool:
        return self.previous is not None

    def advance(self, new: State, p_tilde: ScalarField, info: StepInfo) -> "StateHistory":
        return StateHistory(new, self.current, self.step + 1, (self.p_tilde[-1], p_tilde), info)


Sources = Optional[tuple]  # (g_phi: ScalarField, g_u: StaggeredVelocity)


@dataclass
class StepInput:
    history: StateHistory
    dt: float
    params: PhysicalParams
    bc: BoundaryCondition = field(default_factory=BoundaryCondition)
    sources: Sources = None
    pressure_filter: PressureFilter = PressureFilter.OPTION_A
    convection_form: str = "divergence"
    require_energy_stability: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.convection_form not in ("divergence", "advective"):
            raise ValueError(f"unknown convection form {self.convection_form!r}")
        self.pressure_filter = PressureFilter(self.pressure_filter)


# -- filter and analysis operators ---------------------------------------------

def _combine(coeffs, fields):
    first = fields[0]
    kinds = {type(f) if isinstance(f, (ScalarField, StaggeredVelocity)) else "array" for f in fields}
    if len(kinds) != 1:
        raise GridMismatchError("cannot mix field layouts")
    if isinstance(first, ScalarField):
        for f in fields[1:]:
            if f.grid != first.grid:
                raise GridMismatchError("grid mismatch")
        return ScalarField(first.grid, sum(c * f.data for c, f in zip(coeffs, fields)))
    if isinstance(first, StaggeredVelocity):
        for f in fields[1:]:
            if f.grid != first.grid:
                raise GridMismatchError("grid mismatch")
        return StaggeredVelocity(
            first.grid,
            sum(c * f.u for c, f in zip(coeffs, fields)),
            sum(c * f.v for c, f in zip(coeffs, fields)),
        )
    arrays = [np.asarray(f, dtype=float) for f in fields]
    if any(a.shape != arrays[0].shape for a in arrays):
        raise GridMismatchError("array shapes differ")
    out = coeffs[0] * arrays[0]
    for c, a in zip(coeffs[1:], arrays[1:]):
        out = out + c * a
    return out


def apply_time_filter(tilde, level_n, level_nm1):
    """``y~ - (y~ - 2 y^n + y^{n-1}) / 3``, componentwise."""
    second = _combine((1.0, -2.0, 1.0), (tilde, level_n, level_nm1))
    return _combine((1.0, -1.0 / 3.0), (tilde, second))


def operator_A(s_np1, s_n, s_nm1):
    return _combine((1.5, -2.0, 0.5), (s_np1, s_n, s_nm1))


def operator_B(s_np1, s_n, s_nm1):
    return _combine((1.5, -1.0, 0.5), (s_np1, s_n, s_nm1))


# -- assembly helpers ---------------------------------------------------------

@lru_cache(maxsize=8)
def operator_set(grid: GridSpec) -> OperatorSet:
    return OperatorSet(grid)


class _Blocks:
    """Index bookkeeping for the monolithic vector ``[phi, mu, vel, p]``."""

    def __init__(self, ops: OperatorSet):
        self.ops = ops
        nc, nvel = ops.nc, ops.nvel
        self.sl_phi = slice(0, nc)
        self.sl_mu = slice(nc, 2 * nc)
        self.sl_vel = slice(2 * nc, 2 * nc + nvel)
        self.sl_p = slice(2 * nc + nvel, 3 * nc + nvel)
        self.n = 3 * nc + nvel

    def pack(self, phi, mu, vel, p) -> np.ndarray:
        return np.concatenate([phi, mu, vel, p])

    def unpack(self, x):
        return x[self.sl_phi], x[self.sl_mu], x[self.sl_vel], x[self.sl_p]


def _vec(fld) -> np.ndarray:
    return fld.vector()


def _state_from_vectors(grid, bc, phi, mu, vel, p, t) -> State:
    return State(
        ScalarField.from_vector(grid, phi),
        ScalarField.from_vector(grid, mu),
        StaggeredVelocity.from_vector(grid, vel, bc),
        ScalarField.from_vector(grid, p),
        t,
    )


def _scalar_convection(ops: OperatorSet, phi_face_src: np.ndarray, form: str) -> sp.csr_matrix:
    """Matrix acting on velocity: div(u phi) with phi frozen."""
    M = ops.divergence @ sp.diags(ops.face_average @ phi_face_src)
    if form == "advective":
        M = M - sp.diags(phi_face_src) @ ops.divergence
    return M.tocsr()


def _scalar_convection_dphi(ops: OperatorSet, vel: np.ndarray, form: str) -> sp.csr_matrix:
    """Matrix acting on phi: div(u phi) with u frozen."""
    M = ops.divergence @ sp.diags(vel) @ ops.face_average
    if form == "advective":
        M = M - sp.diags(ops.divergence @ vel)
    return M.tocsr()


def _sources(inp: StepInput, ops: OperatorSet):
    if inp.sources is None:
        return np.zeros(ops.nc), np.zeros(ops.nvel)
    g_phi, g_u = inp.sources
    return _vec(g_phi), _vec(g_u)


def _check_energy_guard(inp: StepInput):
    if inp.require_energy_stability and not inp.params.energy_stable(inp.dt):
        raise ValueError(
            f"S*dt = {inp.params.S_stab * inp.dt:.6g} < 3L = {3 * inp.params.L_lipschitz:.6g}; "
            "energy stability is not guaranteed"
        )


def _solve_linear(inp: StepInput, phi_bar, vel_bar, phi_n, vel_n, stab, f_explicit):
    """Solve the linear tilde system shared by the BE and linear BETF steps.

    ``phi_bar``/``vel_bar`` are the frozen coefficients of the coupling
    terms, ``stab`` the coefficient of ``(phi - phi^n)`` in the mu equation
    and ``f_explicit`` the explicit nonlinear term.
    """
    grid = inp.history.grid
    ops = operator_set(grid)
    blk = _Blocks(ops)
    prm = inp.params
    dt = inp.dt
    wv = ops.wall_values(inp.bc)
    nc = ops.nc
    I_c = sp.identity(nc, format="csr")
    mask = sp.diags(ops.interior_vel.astype(float))
    wall = sp.diags((~ops.interior_vel).astype(float))
    g_phi, g_u = _sources(inp, ops)

    Kv, kv, _ = ops.convection_matrices(vel_bar, None, wv)
    grad_bar = ops.gradient @ phi_bar

    A_pp = I_c / dt
    A_pu = _scalar_convection(ops, phi_bar, inp.convection_form)
    A_pm = -prm.epsilon * prm.mobility_M * ops.laplacian
    A_mp = -prm.lambda_mix * ops.laplacian + stab * I_c
    A_mm = -I_c
    A_uu = mask @ (sp.identity(ops.nvel) / dt - prm.nu * ops.vector_laplacian + Kv) + wall
    A_um = -prm.gamma * (mask @ sp.diags(grad_bar) @ ops.face_average)
    A_up = mask @ ops.gradient
    A_pu_div = ops.divergence

    K = sp.bmat(
        [
            [A_pp, A_pm, A_pu, None],
            [A_mp, A_mm, None, None],
            [None, A_um, A_uu, A_up],
            [None, None, A_pu_div, None],
        ],
        format="csr",
    )
    r_phi = phi_n / dt + g_phi
    r_mu = stab * phi_n - f_explicit / prm.epsilon
    interior = ops.interior_vel
    r_u = np.where(
        interior,
        vel_n / dt + g_u + prm.nu * ops.vector_laplacian_affine(wv) - kv,
        ops.wall_vector(wv),
    )
    rhs = blk.pack(r_phi, r_mu, r_u, np.zeros(nc))
    system = attach_mean_zero(SparseSystem(K), np.full(nc, grid.cell_area), offset=blk.sl_p.start)
    x, report = factor_solve(system, rhs)
    return blk.unpack(x), report


def _history_vectors(h: StateHistory):
    cur = h.current
    return _vec(cur.phi), _vec(cur.mu), _vec(cur.vel), _vec(cur.p)


def _finish(inp: StepInput, tilde, report, newton_iters=0, residuals=(), filtered=True) -> StateHistory:
    h = inp.history
    grid = h.grid
    ops = operator_set(grid)
    phi_t, mu_t, vel_t, p_t = tilde
    t_new = h.t + inp.dt
    div_inf = float(np.abs(ops.divergence @ vel_t).max())
    p_tilde = ScalarField.from_vector(grid, p_t)
    tilde_state = _state_from_vectors(grid, inp.bc, phi_t, mu_t, vel_t, p_t, t_new)
    if filtered:
        cur, prev = h.current, h.previous
        new = State(
            apply_time_filter(tilde_state.phi, cur.phi, prev.phi),
            apply_time_filter(tilde_state.mu, cur.mu, prev.mu),
            apply_ghosts(apply_time_filter(tilde_state.vel, cur.vel, prev.vel), inp.bc),
            apply_time_filter(tilde_state.p, cur.p, prev.p)
            if inp.pressure_filter is PressureFilter.OPTION_A
            else tilde_state.p,
            t_new,
        )
    else:
        new = tilde_state
    info = StepInfo(newton_iters, list(residuals), div_inf, report)
    return h.advance(new, p_tilde, info)


# -- steppers -----------------------------------------------------------------

def step_be_linear(inp: StepInput) -> StateHistory:
    """Linearly implicit backward Euler with stabilized explicit f."""
    prm = inp.params
    phi_n, _, vel_n, _ = _history_vectors(inp.history)
    stab = prm.S_stab / prm.epsilon
    tilde, report = _solve_linear(inp, phi_n, vel_n, phi_n, vel_n, stab, f_potential(phi_n))
    return _finish(inp, tilde, report, filtered=False)


def step_betf_linear(inp: StepInput) -> StateHistory:
    """Linear stabilized backward Euler followed by the time filter."""
    h = inp.history
    if not h.two_level:
        raise HistoryError("step_betf_linear needs two history levels; run a startup step first")
    _check_energy_guard(inp)
    prm = inp.params
    phi_n, _, vel_n, _ = _history_vectors(h)
    phi_m, vel_m = _vec(h.previous.phi), _vec(h.previous.vel)
    phi_bar = 2.0 * phi_n - phi_m
    vel_bar = 2.0 * vel_n - vel_m
    stab = prm.S_stab * inp.dt / prm.epsilon
    f_ext = 2.0 * f_potential(phi_n) - f_potential(phi_m)
    tilde, report = _solve_linear(inp, phi_bar, vel_bar, phi_n, vel_n, stab, f_ext)
    return _finish(inp, tilde, report)


def _nonlinear_residual(inp, ops, blk, x, phi_n, vel_n, g_phi, g_u, wv, aff, wall_vec):
    prm = inp.params
    dt = inp.dt
    phi, mu, vel, p = blk.unpack(x)
    Kv, kv, _ = ops.convection_matrices(vel, None, wv)
    conv_phi = _scalar_convection(ops, phi, inp.convection_form) @ vel
    r_phi = (phi - phi_n) / dt + conv_phi - prm.epsilon * prm.mobility_M * (ops.laplacian @ mu) - g_phi
    r_mu = -mu - prm.lambda_mix * (ops.laplacian @ phi) + f_potential(phi) / prm.epsilon
    mom = (
        (vel - vel_n) / dt
        - prm.nu * (ops.vector_laplacian @ vel + aff)
        + Kv @ vel
        + kv
        + ops.gradient @ p
        - prm.gamma * (ops.gradient @ phi) * (ops.face_average @ mu)
        - g_u
    )
    r_u = np.where(ops.interior_vel, mom, vel - wall_vec)
    r_p = ops.divergence @ vel
    return blk.pack(r_phi, r_mu, r_u, r_p)


def _nonlinear_jacobian(inp, ops, x, blk, wv) -> sp.csr_matrix:
    prm = inp.params
    dt = inp.dt
    phi, mu, vel, p = blk.unpack(x)
    nc = ops.nc
    I_c = sp.identity(nc, format="csr")
    mask = sp.diags(ops.interior_vel.astype(float))
    wall = sp.diags((~ops.interior_vel).astype(float))
    Kv, _, Ka = ops.convection_matrices(vel, vel, wv)

    J_pp = I_c / dt + _scalar_convection_dphi(ops, vel, inp.convection_form)
    J_pu = _scalar_convection(ops, phi, inp.convection_form)
    J_pm = -prm.epsilon * prm.mobility_M * ops.laplacian
    J_mp = -prm.lambda_mix * ops.laplacian + sp.diags(fprime_potential(phi) / prm.epsilon)
    J_mm = -I_c
    J_uu = mask @ (sp.identity(ops.nvel) / dt - prm.nu * ops.vector_laplacian + Kv + Ka) + wall
    J_up_phi = -prm.gamma * (mask @ sp.diags(ops.face_average @ mu) @ ops.gradient)
    J_um = -prm.gamma * (mask @ sp.diags(ops.gradient @ phi) @ ops.face_average)
    J_up = mask @ ops.gradient
    return sp.bmat(
        [
            [J_pp, J_pm, J_pu, None],
            [J_mp, J_mm, None, None],
            [J_up_phi, J_um, J_uu, J_up],
            [None, None, ops.divergence, None],
        ],
        format="csr",
    )


def step_betf_nonlinear(
    inp: StepInput,
    settings: NewtonSettings = NewtonSettings(),
    apply_filter: bool = True,
) -> StateHistory:
    """Fully implicit backward Euler solved by Newton, then filtered.

    ``apply_filter=False`` leaves the plain implicit BE step (debug use);
    it then also works from a single history level.

    The residual is measured in the quadrature-weighted 2-norm
    ``sqrt(h^2 * sum r_i^2)`` so that the tolerances do not depend on the
    grid size. Iteration also stops once the Newton update reaches
    round-off relative to the iterate.
    """
    h = inp.history
    if apply_filter and not h.two_level:
        raise HistoryError("step_betf_nonlinear needs two history levels; run a startup step first")
    grid = h.grid
    ops = operator_set(grid)
    blk = _Blocks(ops)
    wv = ops.wall_values(inp.bc)
    g_phi, g_u = _sources(inp, ops)
    aff = ops.vector_laplacian_affine(wv)
    wall_vec = ops.wall_vector(wv)
    phi_n, mu_n, vel_n, _ = _history_vectors(h)

    if h.two_level:
        prev = h.previous
        guess = blk.pack(
            2.0 * phi_n - _vec(prev.phi),
            2.0 * mu_n - _vec(prev.mu),
            2.0 * vel_n - _vec(prev.vel),
            2.0 * _vec(h.p_tilde[-1]) - _vec(h.p_tilde[0]) if len(h.p_tilde) == 2 else _vec(h.p_tilde[-1]),
        )
    else:
        guess = blk.pack(phi_n, mu_n, vel_n, _vec(h.p_tilde[-1]))
    x = guess
    # the wall rows hold Dirichlet data; start from it exactly
    x[blk.sl_vel] = np.where(ops.interior_vel, x[blk.sl_vel], wall_vec)
    weights = np.sqrt(grid.cell_area)

    def rnorm(r):
        return float(weights * np.linalg.norm(r))

    r = _nonlinear_residual(inp, ops, blk, x, phi_n, vel_n, g_phi, g_u, wv, aff, wall_vec)
    residuals = [rnorm(r)]
    r0 = max(residuals[0], 1e-300)
    iters = 0
    report = None
    converged = residuals[0] <= settings.abs_tol
    while not converged:
        if iters >= settings.max_iters:
            raise NonlinearSolveError(
                f"Newton did not converge in {settings.max_iters} iterations", residuals
            )
        J = _nonlinear_jacobian(inp, ops, x, blk, wv)
        system = attach_mean_zero(SparseSystem(J), np.full(ops.nc, grid.cell_area), offset=blk.sl_p.start)
        dx, report = factor_solve(system, -r)
        x = x + dx
        iters += 1
        r = _nonlinear_residual(inp, ops, blk, x, phi_n, vel_n, g_phi, g_u, wv, aff, wall_vec)
        residuals.append(rnorm(r))
        if not np.isfinite(residuals[-1]) or residuals[-1] > settings.divergence_guard * r0:
            raise NonlinearSolveError(
                f"Newton diverged: residual grew from {r0:.3e} to {residuals[-1]:.3e}", residuals
            )
        small_step = np.linalg.norm(dx) <= 1e-14 * (1.0 + np.linalg.norm(x))
        converged = (
            residuals[-1] <= settings.abs_tol
            or residuals[-1] <= settings.rel_tol * r0
            or small_step
        )
    return _finish(inp, blk.unpack(x), report, iters, residuals, filtered=apply_filter)


# -- startup ------------------------------------------------------------------

def discrete_chemical_potential(phi: ScalarField, params: PhysicalParams) -> ScalarField:
    """``-lambda * Lap(phi) + f(phi) / epsilon`` with the Neumann Laplacian."""
    ops = operator_set(phi.grid)
    v = phi.vector()
    return ScalarField.from_vector(
        phi.grid, -params.lambda_mix * (ops.laplacian @ v) + f_potential(v) / params.epsilon
    )


def initial_state(phi0: ScalarField, vel0: StaggeredVelocity, params: PhysicalParams,
                  p0: Optional[ScalarField] = None, t0: float = 0.0,
                  bc: Optional[BoundaryCondition] = None) -> State:
    grid = phi0.grid
    if p0 is None:
        p0 = ScalarField(grid)
    return State(
        apply_ghosts(phi0),
        discrete_chemical_potential(phi0, params),
        apply_ghosts(vel0, bc),
        apply_ghosts(p0),
        t0,
    )


def startup_first_level(
    state0: State,
    dt: float,
    params: PhysicalParams,
    bc: Optional[BoundaryCondition] = None,
    method: str = "be_step",
    sources: Sources = None,
    exact: Optional[Callable[[float], State]] = None,
    convection_form: str = "divergence",
) -> StateHistory:
    """Produce the two-level history ``(level 0, level 1)``.

    ``method="be_step"`` takes one linear BE step; ``"exact_injection"``
    uses ``exact(t1)`` for level 1 (its chemical potential is recomputed
    from the discrete relation, like level 0).
    """
    bc = bc if bc is not None else BoundaryCondition()
    h0 = StateHistory(state0)
    if method == "be_step":
        return step_be_linear(
            StepInput(h0, dt, params, bc, sources, convection_form=convection_form)
        )
    if method == "exact_injection":
        if exact is None:
            raise ValueError("exact_injection needs an exact-solution callable")
        s1 = exact(state0.t + dt)
        s1 = replace(s1, mu=discrete_chemical_potential(s1.phi, params))
        return h0.advance(s1, s1.p.copy(), StepInfo())
    raise ValueError(f"unknown startup method {method!r}")


STEPPERS = {
    SchemeKind.BE_LINEAR: step_be_linear,
    SchemeKind.BETF_LINEAR: step_betf_linear,
    SchemeKind.BETF_NONLINEAR: step_betf_nonlinear,
}


def advance(kind: SchemeKind, inp: StepInput, settings: NewtonSettings = NewtonSettings()) -> StateHistory:
    kind = SchemeKind(kind)
    if kind is SchemeKind.BETF_NONLINEAR:
        return step_betf_nonlinear(inp, settings)
    return STEPPERS[kind](inp)
