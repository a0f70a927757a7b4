"""Matrix-free second-order MAC operators.

All routines take fields whose ghosts are consistent with their boundary
condition (scalars are re-mirrored here since the mirror closure is the
only one they use). Sparse assembled counterparts live in
:mod:`chns_tf.assembly`; the two are cross-checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from chns_tf.fields import BoundaryCondition, ScalarField, StaggeredVelocity, apply_ghosts
from chns_tf.model import GridSpec


def laplacian_neumann(phi: ScalarField) -> ScalarField:
    """Five-point Laplacian with mirrored ghosts."""
    g = phi.grid
    d = apply_ghosts(phi).data
    c = d[1:-1, 1:-1]
    lap = (d[2:, 1:-1] - 2.0 * c + d[:-2, 1:-1]) / g.hx**2 + (d[1:-1, 2:] - 2.0 * c + d[1:-1, :-2]) / g.hy**2
    return ScalarField.from_values(g, lap)


def laplacian_velocity(vel: StaggeredVelocity, bc: Optional[BoundaryCondition] = None) -> StaggeredVelocity:
    """Component-wise five-point Laplacian on interior faces.

    Wall-normal faces carry Dirichlet data, so their rows are zero.
    """
    g = vel.grid
    vel = apply_ghosts(vel, bc)
    U, V = vel.u, vel.v
    lu = np.zeros((g.nx + 1, g.ny))
    lu[1:-1] = (U[2:, 1:-1] - 2.0 * U[1:-1, 1:-1] + U[:-2, 1:-1]) / g.hx**2 + (
        U[1:-1, 2:] - 2.0 * U[1:-1, 1:-1] + U[1:-1, :-2]
    ) / g.hy**2
    lv = np.zeros((g.nx, g.ny + 1))
    lv[:, 1:-1] = (V[2:, 1:-1] - 2.0 * V[1:-1, 1:-1] + V[:-2, 1:-1]) / g.hx**2 + (
        V[1:-1, 2:] - 2.0 * V[1:-1, 1:-1] + V[1:-1, :-2]
    ) / g.hy**2
    return _faces_only(g, lu, lv)


def gradient_cell_to_face(p: ScalarField) -> StaggeredVelocity:
    """Face-normal gradient; zero on wall faces."""
    g = p.grid
    vals = p.values
    gx = np.zeros((g.nx + 1, g.ny))
    gy = np.zeros((g.nx, g.ny + 1))
    gx[1:-1] = np.diff(vals, axis=0) / g.hx
    gy[:, 1:-1] = np.diff(vals, axis=1) / g.hy
    return _faces_only(g, gx, gy)


def divergence_face_to_cell(vel: StaggeredVelocity) -> ScalarField:
    g = vel.grid
    div = np.diff(vel.u_faces, axis=0) / g.hx + np.diff(vel.v_faces, axis=1) / g.hy
    return ScalarField.from_values(g, div)


def _face_average(phi: ScalarField):
    """Two-point averages of a cell field onto x- and y-faces (mirror on walls)."""
    d = apply_ghosts(phi).data
    fx = 0.5 * (d[:-1, 1:-1] + d[1:, 1:-1])
    fy = 0.5 * (d[1:-1, :-1] + d[1:-1, 1:])
    return fx, fy


def convect_scalar(vel: StaggeredVelocity, phi: ScalarField, form: str = "divergence") -> ScalarField:
    """Discrete div(u phi) from centred face fluxes.

    ``form="advective"`` subtracts ``phi * div(u)`` to give the u.grad(phi)
    variant; the two agree for discretely divergence-free velocities.
    """
    g = phi.grid
    fx, fy = _face_average(phi)
    flux_x = vel.u_faces * fx
    flux_y = vel.v_faces * fy
    out = np.diff(flux_x, axis=0) / g.hx + np.diff(flux_y, axis=1) / g.hy
    if form == "advective":
        out = out - phi.values * divergence_face_to_cell(vel).values
    elif form != "divergence":
        raise ValueError(f"unknown convection form {form!r}")
    return ScalarField.from_values(g, out)


def capillary_force(mu: ScalarField, phi: ScalarField) -> StaggeredVelocity:
    """Face-averaged mu times face-normal grad(phi)."""
    g = phi.grid
    mx, my = _face_average(mu)
    grad = gradient_cell_to_face(phi)
    return _faces_only(g, mx * grad.u_faces, my * grad.v_faces)


def convect_velocity(
    adv: StaggeredVelocity,
    vel: StaggeredVelocity,
    bc: Optional[BoundaryCondition] = None,
) -> StaggeredVelocity:
    """Skew-symmetric momentum convection ``(a.grad)v + div(a v)`` halved.

    Implemented as the centred flux form minus half of ``v`` times the
    control-volume divergence of the advecting fluxes, which is exactly
    skew-symmetric on interior faces. ``bc`` supplies the wall data of
    ``vel``; ``adv`` is only read on faces.
    """
    g = adv.grid
    hx, hy = g.hx, g.hy
    area = g.cell_area
    vel = apply_ghosts(vel, bc)
    Au, Av = adv.u_faces, adv.v_faces
    U, V = vel.u, vel.v

    # u control volumes centred on x-faces i = 1..nx-1
    fe = 0.5 * (Au[:-1] + Au[1:]) * hy                     # (nx, ny) at cell centres
    te = 0.5 * (U[:-1, 1:-1] + U[1:, 1:-1])
    fn = np.zeros((g.nx + 1, g.ny + 1))                     # at nodes
    fn[1:-1] = 0.5 * (Av[:-1] + Av[1:]) * hx
    tn = 0.5 * (U[:, :-1] + U[:, 1:])
    su = np.zeros((g.nx + 1, g.ny))
    flux_x = fe * te
    flux_y = fn * tn
    conv_u = (np.diff(flux_x, axis=0) + np.diff(flux_y[1:-1], axis=1)) / area
    div_u = (np.diff(fe, axis=0) + np.diff(fn[1:-1], axis=1)) / area
    su[1:-1] = conv_u - 0.5 * U[1:-1, 1:-1] * div_u

    # v control volumes centred on y-faces j = 1..ny-1
    fnv = 0.5 * (Av[:, :-1] + Av[:, 1:]) * hx              # (nx, ny) at cell centres
    tnv = 0.5 * (V[1:-1, :-1] + V[1:-1, 1:])
    fev = np.zeros((g.nx + 1, g.ny + 1))
    fev[:, 1:-1] = 0.5 * (Au[:, :-1] + Au[:, 1:]) * hy
    tev = 0.5 * (V[:-1, :] + V[1:, :])
    sv = np.zeros((g.nx, g.ny + 1))
    flux_y = fnv * tnv
    flux_x = fev * tev
    conv_v = (np.diff(flux_y, axis=1) + np.diff(flux_x[:, 1:-1], axis=0)) / area
    div_v = (np.diff(fnv, axis=1) + np.diff(fev[:, 1:-1], axis=0)) / area
    sv[:, 1:-1] = conv_v - 0.5 * V[1:-1, 1:-1] * div_v
    return _faces_only(g, su, sv)


def _faces_only(g: GridSpec, u_faces, v_faces) -> StaggeredVelocity:
    out = StaggeredVelocity(g)
    out.u[:, 1:-1] = u_faces
    out.v[1:-1, :] = v_faces
    return out


# -- stencils ----------------------------------------------------------------

_LAYOUTS = ("cell", "xface", "yface")
_CLOSURES = ("neumann_mirror", "dirichlet_zero", "none")


def layout_shape(grid: GridSpec, layout: str) -> tuple[int, int]:
    if layout == "cell":
        return grid.shape
    if layout == "xface":
        return (grid.nx + 1, grid.ny)
    if layout == "yface":
        return (grid.nx, grid.ny + 1)
    raise ValueError(f"unknown layout {layout!r}")


@dataclass
class StencilOperator:
    """Constant-coefficient stencil on one layout.

    ``offsets`` maps ``(di, dj)`` to a coefficient; offsets reach at most one
    ghost layer. Closures: ``neumann_mirror`` reflects the missing neighbour
    onto the centre point, ``dirichlet_zero`` drops it (zero ghost) and
    ``none`` requires that no out-of-range neighbour is touched by the
    ``rows`` selected.
    """

    grid: GridSpec
    layout: str
    offsets: dict
    closure: str = "neumann_mirror"
    rows: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.layout not in _LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.closure not in _CLOSURES:
            raise ValueError(f"unknown closure {self.closure!r}")
        for di, dj in self.offsets:
            if abs(di) > 1 or abs(dj) > 1:
                raise ValueError(f"stencil offset {(di, dj)} exceeds the single ghost layer")

    @property
    def shape(self) -> tuple[int, int]:
        return layout_shape(self.grid, self.layout)

    def _row_mask(self):
        n0, n1 = self.shape
        if self.rows is None:
            return np.ones((n0, n1), dtype=bool)
        return np.asarray(self.rows, dtype=bool).reshape(n0, n1)

    def apply(self, values: np.ndarray) -> np.ndarray:
        n0, n1 = self.shape
        x = np.asarray(values, dtype=float).reshape(n0, n1)
        pad = np.zeros((n0 + 2, n1 + 2))
        pad[1:-1, 1:-1] = x
        if self.closure == "neumann_mirror":
            pad[0, 1:-1] = x[0]
            pad[-1, 1:-1] = x[-1]
            pad[:, 0] = pad[:, 1]
            pad[:, -1] = pad[:, -2]
        out = np.zeros((n0, n1))
        for (di, dj), c in self.offsets.items():
            out += c * pad[1 + di:1 + di + n0, 1 + dj:1 + dj + n1]
        out[~self._row_mask()] = 0.0
        return out


def assemble(op: StencilOperator) -> sp.csr_matrix:
    """Sparse matrix reproducing ``op.apply`` on the flattened layout."""
    n0, n1 = op.shape
    I, J = np.meshgrid(np.arange(n0), np.arange(n1), indexing="ij")
    mask = op._row_mask()
    rows, cols, vals = [], [], []
    for (di, dj), c in op.offsets.items():
        ti, tj = I + di, J + dj
        if op.closure == "neumann_mirror":
            ti = np.clip(ti, 0, n0 - 1)
            tj = np.clip(tj, 0, n1 - 1)
            keep = mask
        else:
            inside = (ti >= 0) & (ti < n0) & (tj >= 0) & (tj < n1)
            if op.closure == "none" and np.any(mask & ~inside):
                raise ValueError(f"offset {(di, dj)} leaves the layout on selected rows")
            keep = mask & inside
        rows.append((I * n1 + J)[keep])
        cols.append((ti * n1 + tj)[keep])
        vals.append(np.full(np.count_nonzero(keep), float(c)))
    n = n0 * n1
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def laplacian_stencil(grid: GridSpec) -> StencilOperator:
    """The Neumann Laplacian of :func:`laplacian_neumann` as a stencil."""
    cx, cy = 1.0 / grid.hx**2, 1.0 / grid.hy**2
    return StencilOperator(
        grid,
        "cell",
        {(0, 0): -2.0 * cx - 2.0 * cy, (1, 0): cx, (-1, 0): cx, (0, 1): cy, (0, -1): cy},
        "neumann_mirror",
    )
