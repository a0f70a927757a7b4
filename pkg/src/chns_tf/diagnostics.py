"""Energies, mass, error norms, convergence rates and the discrete H^-1 norm."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from chns_tf.fields import ScalarField, StaggeredVelocity, integrate, inner, norm_h1semi, norm_l2
from chns_tf.linalg import SparseSystem, attach_mean_zero, factor_solve
from chns_tf.model import F_potential, PhysicalParams


@dataclass(frozen=True)
class EnergyBreakdown:
    grad_phi_terms: tuple
    velocity_terms: tuple
    stab_term: float
    potential_terms: float
    total: float

    @property
    def parts(self) -> tuple:
        return (*self.grad_phi_terms, *self.velocity_terms, self.stab_term, self.potential_terms)


def _triple(a, b, norm_sq):
    """Quarter-weighted |a|^2, |2a - b|^2, |a - b|^2."""
    return (0.25 * norm_sq(a), 0.25 * norm_sq(2.0 * a - b), 0.25 * norm_sq(a - b))


def discrete_energy(history, params: PhysicalParams, L: Optional[float] = None,
                    weighted: bool = True) -> EnergyBreakdown:
    """Two-level analysis energy of the filtered schemes.

    With ``phi1, u1`` the newest and ``phi0, u0`` the previous level::

        E = c_g/4 (|grad phi1|^2 + |grad(2 phi1 - phi0)|^2 + |grad(phi1 - phi0)|^2)
          + 1/4 (|u1|^2 + |2 u1 - u0|^2 + |u1 - u0|^2)
          + c_s 3L |phi1 - phi0|^2 + c_f ((F(phi1),1) + (F(phi1) - F(phi0),1) / 2)

    ``weighted=True`` uses ``c_g = gamma*lambda``, ``c_s = c_f = gamma/eps``,
    the weights under which the energy law holds for general coefficients.
    ``weighted=False`` uses ``c_g = 1``, ``c_s = 1/eps``, ``c_f = 1``. Both
    agree when all parameters are 1.
    """
    if history.previous is None:
        raise ValueError("discrete_energy needs two history levels")
    L = params.L_lipschitz if L is None else L
    s1, s0 = history.current, history.previous
    if weighted:
        c_g = params.gamma * params.lambda_mix
        c_s = c_f = params.gamma / params.epsilon
    else:
        c_g, c_s, c_f = 1.0, 1.0 / params.epsilon, 1.0
    grad = tuple(c_g * v for v in _triple(s1.phi, s0.phi, lambda f: norm_h1semi(f) ** 2))
    vel = _triple(s1.vel, s0.vel, lambda f: inner(f, f))
    stab = c_s * 3.0 * L * inner(s1.phi - s0.phi, s1.phi - s0.phi)
    F1 = integrate(s1.phi.map(F_potential))
    F0 = integrate(s0.phi.map(F_potential))
    pot = c_f * (F1 + 0.5 * (F1 - F0))
    total = sum(grad) + sum(vel) + stab + pot
    return EnergyBreakdown(grad, vel, stab, pot, total)


def physical_energy(state, params: PhysicalParams) -> float:
    """Integral of (lambda gamma / 2)|grad phi|^2 + (gamma/eps) F(phi) + |u|^2 / 2."""
    g = params.gamma
    return (
        0.5 * params.lambda_mix * g * norm_h1semi(state.phi) ** 2
        + g / params.epsilon * integrate(state.phi.map(F_potential))
        + 0.5 * inner(state.vel, state.vel)
    )


def mass(phi: ScalarField) -> float:
    return integrate(phi)


def boundary_outflow(phi: ScalarField, vel: StaggeredVelocity) -> float:
    """Net outward advective flux of ``phi`` through the walls.

    Uses the wall-normal face velocities and the adjacent cell values, which
    is what the mirror-closed face average gives on wall faces. Zero for
    no-slip walls; under inflow/outflow walls it is the rate at which the
    divergence-form convection changes the mass.
    """
    g = phi.grid
    f, u, v = phi.values, vel.u_faces, vel.v_faces
    return float(
        g.hy * (np.dot(f[-1, :], u[-1, :]) - np.dot(f[0, :], u[0, :]))
        + g.hx * (np.dot(f[:, -1], v[:, -1]) - np.dot(f[:, 0], v[:, 0]))
    )


def error_norms(state, exact) -> dict:
    """L2 errors per variable; the pressure error ignores constant offsets."""
    grid = state.phi.grid
    dp = state.p - exact.p
    dp = dp - integrate(dp) / grid.area
    return {
        "phi": norm_l2(state.phi - exact.phi),
        "mu": norm_l2(state.mu - exact.mu),
        "u": norm_l2(state.vel - exact.vel),
        "p": norm_l2(dp),
    }


# -- convergence rates ---------------------------------------------------------

def _lsq_slope(dts, errs) -> float:
    x = np.log(np.asarray(dts, dtype=float))
    y = np.log(np.asarray(errs, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class RateTable:
    dts: list
    errors: dict                                  # variable -> list of errors
    rates: dict = field(default_factory=dict)     # variable -> successive log2 ratios
    slopes: dict = field(default_factory=dict)    # variable -> least-squares slope

    def as_rows(self) -> list:
        names = list(self.errors)
        rows = []
        for k, dt in enumerate(self.dts):
            row = {"dt": dt}
            for v in names:
                row[f"err_{v}"] = self.errors[v][k]
                row[f"rate_{v}"] = self.rates[v][k - 1] if k > 0 else float("nan")
            rows.append(row)
        return rows


def fit_rates(dts: Sequence[float], errors: Mapping[str, Sequence[float]]) -> RateTable:
    """Successive rates ``log2(e_k / e_{k+1})`` and the slope of log e over log dt.

    The successive rates assume the step halves between rows, as in the
    convergence sweeps.
    """
    dts = [float(d) for d in dts]
    if len(dts) < 2:
        raise ValueError("rates need at least two rows")
    table = RateTable(dts, {})
    for name, errs in errors.items():
        errs = [float(e) for e in errs]
        if len(errs) != len(dts):
            raise ValueError(f"{name}: {len(errs)} errors for {len(dts)} steps")
        if any(not (e > 0 and math.isfinite(e)) for e in errs):
            raise ValueError(f"{name}: errors must be positive and finite")
        table.errors[name] = errs
        table.rates[name] = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
        table.slopes[name] = _lsq_slope(dts, errs)
    return table


# -- H^-1 -------------------------------------------------------------------------

def neumann_poisson(zeta: ScalarField) -> ScalarField:
    """Mean-zero ``w`` with ``-Lap w = zeta`` (Neumann walls)."""
    from chns_tf.schemes import operator_set

    grid = zeta.grid
    ops = operator_set(grid)
    system = attach_mean_zero(SparseSystem(-ops.laplacian), np.full(grid.ncells, grid.cell_area))
    w, _ = factor_solve(system, zeta.vector())
    return ScalarField.from_vector(grid, w)


def hminus1_norm(zeta: ScalarField, tol: float = 1e-12) -> float:
    """``|grad w|`` where ``-Lap w = zeta``; ``zeta`` must have zero mean."""
    grid = zeta.grid
    m = integrate(zeta)
    if abs(m) > tol * grid.area * max(1.0, float(np.abs(zeta.values).max())):
        raise ValueError(f"H^-1 norm needs a mean-zero field, integral is {m:.3e}")
    return norm_h1semi(neumann_poisson(zeta))
