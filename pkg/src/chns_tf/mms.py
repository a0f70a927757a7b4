"""Manufactured solution with its forcing, and initial data of the physical runs.

Exact fields on the unit square::

    phi = 2 + sin t cos(pi x) cos(pi y)
    u   = ( pi sin^2(pi x) sin(2 pi y) sin t, -pi sin^2(pi y) sin(2 pi x) sin t)
    p   = cos(pi x) sin(pi y) sin t
    mu  = -lambda Lap(phi) + (phi^3 - phi) / epsilon

All derivatives below are closed forms; tests cross-check them with sympy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from chns_tf.fields import BoundaryCondition, ScalarField, StaggeredVelocity
from chns_tf.model import GridSpec, PhysicalParams, f_potential
from chns_tf.schemes import State

PI = np.pi


@dataclass(frozen=True)
class ManufacturedSolution:
    params: PhysicalParams

    # -- phase field ---------------------------------------------------------
    @staticmethod
    def phi(t, x, y):
        return 2.0 + np.sin(t) * np.cos(PI * x) * np.cos(PI * y)

    @staticmethod
    def phi_t(t, x, y):
        return np.cos(t) * np.cos(PI * x) * np.cos(PI * y)

    @staticmethod
    def grad_phi(t, x, y):
        s = np.sin(t)
        return (-PI * s * np.sin(PI * x) * np.cos(PI * y), -PI * s * np.cos(PI * x) * np.sin(PI * y))

    @staticmethod
    def lap_phi(t, x, y):
        return -2.0 * PI**2 * np.sin(t) * np.cos(PI * x) * np.cos(PI * y)

    def mu(self, t, x, y):
        prm = self.params
        return -prm.lambda_mix * self.lap_phi(t, x, y) + f_potential(self.phi(t, x, y)) / prm.epsilon

    def lap_mu(self, t, x, y):
        prm = self.params
        s = np.sin(t)
        xy = np.cos(PI * x) * np.cos(PI * y)
        phi = self.phi(t, x, y)
        gx, gy = self.grad_phi(t, x, y)
        bilap = 4.0 * PI**4 * s * xy
        lap_f = (3.0 * phi**2 - 1.0) * self.lap_phi(t, x, y) + 6.0 * phi * (gx**2 + gy**2)
        return -prm.lambda_mix * bilap + lap_f / prm.epsilon

    # -- velocity and pressure ---------------------------------------------------
    @staticmethod
    def _u_shape(x, y):
        return (
            PI * np.sin(PI * x) ** 2 * np.sin(2 * PI * y),
            -PI * np.sin(PI * y) ** 2 * np.sin(2 * PI * x),
        )

    def u(self, t, x, y):
        a, b = self._u_shape(x, y)
        return (a * np.sin(t), b * np.sin(t))

    def u_t(self, t, x, y):
        a, b = self._u_shape(x, y)
        return (a * np.cos(t), b * np.cos(t))

    @staticmethod
    def grad_u(t, x, y):
        """((du1/dx, du1/dy), (du2/dx, du2/dy))."""
        s = np.sin(t)
        s2x, s2y = np.sin(2 * PI * x), np.sin(2 * PI * y)
        return (
            (PI**2 * s2x * s2y * s, 2 * PI**2 * np.sin(PI * x) ** 2 * np.cos(2 * PI * y) * s),
            (-2 * PI**2 * np.sin(PI * y) ** 2 * np.cos(2 * PI * x) * s, -(PI**2) * s2y * s2x * s),
        )

    @staticmethod
    def lap_u(t, x, y):
        s = np.sin(t)
        l1 = PI * s * np.sin(2 * PI * y) * (2 * PI**2 * np.cos(2 * PI * x) - 4 * PI**2 * np.sin(PI * x) ** 2)
        l2 = -PI * s * np.sin(2 * PI * x) * (2 * PI**2 * np.cos(2 * PI * y) - 4 * PI**2 * np.sin(PI * y) ** 2)
        return (l1, l2)

    @staticmethod
    def p(t, x, y):
        return np.cos(PI * x) * np.sin(PI * y) * np.sin(t)

    @staticmethod
    def grad_p(t, x, y):
        s = np.sin(t)
        return (-PI * np.sin(PI * x) * np.sin(PI * y) * s, PI * np.cos(PI * x) * np.cos(PI * y) * s)

    # -- forcing --------------------------------------------------------------
    def g_phi(self, t, x, y):
        prm = self.params
        u1, u2 = self.u(t, x, y)
        gx, gy = self.grad_phi(t, x, y)
        return self.phi_t(t, x, y) + u1 * gx + u2 * gy - prm.epsilon * prm.mobility_M * self.lap_mu(t, x, y)

    def g_u(self, t, x, y):
        prm = self.params
        u1, u2 = self.u(t, x, y)
        (a11, a12), (a21, a22) = self.grad_u(t, x, y)
        ut1, ut2 = self.u_t(t, x, y)
        l1, l2 = self.lap_u(t, x, y)
        px, py = self.grad_p(t, x, y)
        mu = self.mu(t, x, y)
        gx, gy = self.grad_phi(t, x, y)
        f1 = ut1 - prm.nu * l1 + u1 * a11 + u2 * a12 + px - prm.gamma * mu * gx
        f2 = ut2 - prm.nu * l2 + u1 * a21 + u2 * a22 + py - prm.gamma * mu * gy
        return (f1, f2)

    # -- sampling on a grid ---------------------------------------------------------
    def eval_state(self, grid: GridSpec, t: float) -> State:
        """Exact fields at their native MAC locations (mu sampled pointwise)."""
        xc, yc = grid.cell_centers()
        vel = StaggeredVelocity.from_function(grid, lambda x, y: self.u(t, x, y), BoundaryCondition())
        return State(
            ScalarField.from_values(grid, self.phi(t, xc, yc)),
            ScalarField.from_values(grid, self.mu(t, xc, yc)),
            vel,
            ScalarField.from_values(grid, self.p(t, xc, yc)),
            t,
        )

    def forcing_at(self, grid: GridSpec, t: float):
        """``(g_phi, g_u)`` sampled at cells and faces."""
        xc, yc = grid.cell_centers()
        g_phi = ScalarField.from_values(grid, self.g_phi(t, xc, yc))
        xu, yu = grid.xface_centers()
        xv, yv = grid.yface_centers()
        g_u = StaggeredVelocity.from_faces(grid, self.g_u(t, xu, yu)[0], self.g_u(t, xv, yv)[1])
        return g_phi, g_u


def eval_state(grid: GridSpec, t: float, params: PhysicalParams) -> State:
    return ManufacturedSolution(params).eval_state(grid, t)


def forcing_at(grid: GridSpec, t: float, params: PhysicalParams):
    return ManufacturedSolution(params).forcing_at(grid, t)


# -- initial data of the physical experiments -------------------------------------

def cross_indicator(x, y, arm_width: float = 0.2, arm_length: float = 0.7, center=(0.5, 0.5)):
    """True inside the union of two centred, perpendicular rectangles."""
    cx, cy = center
    dx, dy = np.abs(x - cx), np.abs(y - cy)
    horiz = (dx <= 0.5 * arm_length) & (dy <= 0.5 * arm_width)
    vert = (dx <= 0.5 * arm_width) & (dy <= 0.5 * arm_length)
    return horiz | vert


def initial_shape_relaxation(grid: GridSpec, arm_width: float = 0.2, arm_length: float = 0.7):
    """phi = +1 on a plus-shaped region and -1 elsewhere; rotational velocity."""
    xc, yc = grid.cell_centers()
    phi = np.where(cross_indicator(xc, yc, arm_width, arm_length), 1.0, -1.0)
    bc = BoundaryCondition.rotational()
    vel = StaggeredVelocity.from_function(grid, bc.velocity, bc)
    return ScalarField.from_values(grid, phi), vel


def bubble_profile(x, y, epsilon: float):
    """Two-bubble profile, sampled exactly as written in the source formula.

    The first tanh divides the signed distance by ``1.5 eps``; the second
    divides only the radius, as printed.
    """
    r1 = np.sqrt((x + 0.8 - PI) ** 2 + (y - PI) ** 2)
    r2 = np.sqrt((x - 1.7 - PI) ** 2 + (y - PI) ** 2)
    return 1.0 + np.tanh((1.4 - r1) / (1.5 * epsilon)) + np.tanh(0.5 - r2 / (1.5 * epsilon))


def initial_shrinking_bubble(grid: GridSpec, epsilon: float = 0.15):
    xc, yc = grid.cell_centers()
    phi = ScalarField.from_values(grid, bubble_profile(xc, yc, epsilon))
    return phi, StaggeredVelocity(grid), ScalarField(grid)


def random_smooth_field(grid: GridSpec, rng: np.random.Generator, modes: int = 4, amplitude: float = 1.0):
    """Random sum of Neumann cosine modes, scaled into [-amplitude, amplitude]."""
    xc, yc = grid.cell_centers()
    X = (xc - grid.x0) / grid.Lx
    Y = (yc - grid.y0) / grid.Ly
    out = np.zeros(grid.shape)
    for k in range(modes + 1):
        for l in range(modes + 1):
            if k == l == 0:
                continue
            out += rng.standard_normal() / (1.0 + k * k + l * l) * np.cos(PI * k * X) * np.cos(PI * l * Y)
    out += 0.1 * rng.standard_normal()
    peak = np.abs(out).max()
    return ScalarField.from_values(grid, amplitude * out / peak)
