"""Sparse matrices of the MAC operators, built from 1-D pieces by Kronecker
products.

Vector layouts (C order, ``i`` major):

* cells: ``nx*ny``
* velocity: x-faces ``(nx+1)*ny`` followed by y-faces ``nx*(ny+1)``,
  wall-normal faces included.

Affine boundary contributions (tangential wall data) are returned as
separate vectors.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from chns_tf.fields import BoundaryCondition, WallValues, wall_values
from chns_tf.model import GridSpec


def _diff_cell_to_face(n: int) -> sp.csr_matrix:
    """(n+1) x n: c[i] - c[i-1] on interior faces, zero rows on walls."""
    rows = np.arange(1, n)
    A = sp.coo_matrix(
        (np.r_[np.ones(n - 1), -np.ones(n - 1)], (np.r_[rows, rows], np.r_[rows, rows - 1])),
        shape=(n + 1, n),
    )
    return A.tocsr()


def _diff_face_to_cell(n: int) -> sp.csr_matrix:
    """n x (n+1): f[i+1] - f[i]."""
    return sp.diags([-np.ones(n), np.ones(n)], [0, 1], shape=(n, n + 1), format="csr")


def _avg_face_to_cell(n: int) -> sp.csr_matrix:
    return sp.diags([0.5 * np.ones(n), 0.5 * np.ones(n)], [0, 1], shape=(n, n + 1), format="csr")


def _avg_cell_to_face(n: int, walls: str) -> sp.csr_matrix:
    """(n+1) x n two-point average.

    ``walls="mirror"`` copies the adjacent cell onto wall faces,
    ``walls="zero"`` leaves wall rows empty.
    """
    rows = np.arange(1, n)
    r = [rows, rows]
    c = [rows, rows - 1]
    v = [0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)]
    if walls == "mirror":
        r += [np.array([0]), np.array([n])]
        c += [np.array([0]), np.array([n - 1])]
        v += [np.ones(1), np.ones(1)]
    elif walls != "zero":
        raise ValueError(walls)
    return sp.coo_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(n + 1, n)).tocsr()


def _second_diff_faces(n_faces: int) -> sp.csr_matrix:
    """Second difference on face points with empty wall rows."""
    m = n_faces
    main = -2.0 * np.ones(m)
    off = np.ones(m - 1)
    A = sp.diags([off, main, off], [-1, 0, 1], shape=(m, m), format="lil")
    A[0, :] = 0.0
    A[m - 1, :] = 0.0
    return A.tocsr()


def _second_diff_dirichlet(n: int) -> sp.csr_matrix:
    """Second difference on n points whose ghosts are 2g - first point."""
    main = -2.0 * np.ones(n)
    main[0] = main[-1] = -3.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="csr")


def _interior_face_mask(n_faces: int) -> np.ndarray:
    m = np.ones(n_faces, dtype=bool)
    m[0] = m[-1] = False
    return m


class OperatorSet:
    """Constant sparse operators of one grid, cached on first use."""

    def __init__(self, grid: GridSpec):
        if not grid.is_uniform:
            raise ValueError("assembled operators require hx == hy")
        self.grid = grid
        g = grid
        self.nc = g.ncells
        self.nu = g.nxfaces
        self.nv = g.nyfaces
        self.nvel = self.nu + self.nv

    # -- sizes and masks ----------------------------------------------------
    @cached_property
    def interior_u(self) -> np.ndarray:
        g = self.grid
        return np.kron(_interior_face_mask(g.nx + 1), np.ones(g.ny, dtype=bool))

    @cached_property
    def interior_v(self) -> np.ndarray:
        g = self.grid
        return np.kron(np.ones(g.nx, dtype=bool), _interior_face_mask(g.ny + 1))

    @cached_property
    def interior_vel(self) -> np.ndarray:
        return np.r_[self.interior_u, self.interior_v]

    @cached_property
    def face_weights(self) -> np.ndarray:
        g = self.grid
        return np.r_[g.xface_weights().ravel(), g.yface_weights().ravel()]

    # -- scalar operators ---------------------------------------------------
    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        """Neumann Laplacian on cells."""
        return (self.divergence @ self.gradient).tocsr()

    @cached_property
    def gradient(self) -> sp.csr_matrix:
        g = self.grid
        Gx = sp.kron(_diff_cell_to_face(g.nx), sp.identity(g.ny)) / g.hx
        Gy = sp.kron(sp.identity(g.nx), _diff_cell_to_face(g.ny)) / g.hy
        return sp.vstack([Gx, Gy]).tocsr()

    @cached_property
    def divergence(self) -> sp.csr_matrix:
        g = self.grid
        Dx = sp.kron(_diff_face_to_cell(g.nx), sp.identity(g.ny)) / g.hx
        Dy = sp.kron(sp.identity(g.nx), _diff_face_to_cell(g.ny)) / g.hy
        return sp.hstack([Dx, Dy]).tocsr()

    @cached_property
    def face_average(self) -> sp.csr_matrix:
        """Cells to all faces, mirror values on walls."""
        g = self.grid
        Ax = sp.kron(_avg_cell_to_face(g.nx, "mirror"), sp.identity(g.ny))
        Ay = sp.kron(sp.identity(g.nx), _avg_cell_to_face(g.ny, "mirror"))
        return sp.vstack([Ax, Ay]).tocsr()

    # -- velocity operators -------------------------------------------------
    @cached_property
    def vector_laplacian(self) -> sp.csr_matrix:
        g = self.grid
        Lu = sp.kron(_second_diff_faces(g.nx + 1), sp.identity(g.ny)) / g.hx**2 + sp.kron(
            sp.identity(g.nx + 1), _second_diff_dirichlet(g.ny)
        ) / g.hy**2
        Lv = sp.kron(_second_diff_dirichlet(g.nx), sp.identity(g.ny + 1)) / g.hx**2 + sp.kron(
            sp.identity(g.nx), _second_diff_faces(g.ny + 1)
        ) / g.hy**2
        L = sp.block_diag([Lu, Lv]).tocsr()
        return (sp.diags(self.interior_vel.astype(float)) @ L).tocsr()

    def vector_laplacian_affine(self, wv: WallValues) -> np.ndarray:
        """Contribution of tangential wall data to the velocity Laplacian."""
        g = self.grid
        bu = np.zeros((g.nx + 1, g.ny))
        bu[:, 0] += 2.0 * wv.u_south / g.hy**2
        bu[:, -1] += 2.0 * wv.u_north / g.hy**2
        bu[0] = bu[-1] = 0.0
        bv = np.zeros((g.nx, g.ny + 1))
        bv[0, :] += 2.0 * wv.v_west / g.hx**2
        bv[-1, :] += 2.0 * wv.v_east / g.hx**2
        bv[:, 0] = bv[:, -1] = 0.0
        return np.r_[bu.ravel(), bv.ravel()]

    def wall_vector(self, wv: WallValues) -> np.ndarray:
        """Velocity vector that is zero except for the wall-normal data."""
        g = self.grid
        u = np.zeros((g.nx + 1, g.ny))
        v = np.zeros((g.nx, g.ny + 1))
        u[0], u[-1] = wv.u_west, wv.u_east
        v[:, 0], v[:, -1] = wv.v_south, wv.v_north
        return np.r_[u.ravel(), v.ravel()]

    # pieces of the skew convection, see convection_matrices()
    @cached_property
    def _skew_pieces(self):
        g = self.grid
        nx, ny = g.nx, g.ny
        Ix, Iy = sp.identity(nx), sp.identity(ny)
        Ix1, Iy1 = sp.identity(nx + 1), sp.identity(ny + 1)
        # u control volumes
        P_u = sp.kron(_avg_face_to_cell(nx), Iy)                          # x-faces -> cells
        Q_u = sp.kron(_diff_cell_to_face(nx), Iy)                          # cells -> x-faces
        Tn_u = sp.kron(Ix1, _avg_cell_to_face(ny, "zero"))                 # x-faces -> nodes
        Fn_u = sp.kron(_avg_cell_to_face(nx, "zero"), Iy1)                 # y-faces -> nodes
        S_u = sp.kron(Ix1, _diff_face_to_cell(ny))                         # nodes -> x-faces
        # v control volumes
        P_v = sp.kron(Ix, _avg_face_to_cell(ny))                           # y-faces -> cells
        Q_v = sp.kron(Ix, _diff_cell_to_face(ny))                          # cells -> y-faces
        Te_v = sp.kron(_avg_cell_to_face(nx, "zero"), Iy1)                 # y-faces -> nodes
        Fe_v = sp.kron(Ix1, _avg_cell_to_face(ny, "zero"))                 # x-faces -> nodes
        S_v = sp.kron(_diff_face_to_cell(nx), Iy1)                         # nodes -> y-faces
        return dict(P_u=P_u.tocsr(), Q_u=Q_u.tocsr(), Tn_u=Tn_u.tocsr(), Fn_u=Fn_u.tocsr(),
                    S_u=S_u.tocsr(), P_v=P_v.tocsr(), Q_v=Q_v.tocsr(), Te_v=Te_v.tocsr(),
                    Fe_v=Fe_v.tocsr(), S_v=S_v.tocsr())

    def _node_wall_terms(self, wv: WallValues):
        """Transported wall values at nodes: g on the two walls, else 0."""
        g = self.grid
        tn = np.zeros((g.nx + 1, g.ny + 1))
        tn[:, 0] = wv.u_south
        tn[:, -1] = wv.u_north
        te = np.zeros((g.nx + 1, g.ny + 1))
        te[0, :] = wv.v_west
        te[-1, :] = wv.v_east
        return tn.ravel(), te.ravel()

    def convection_matrices(self, adv: np.ndarray, vel: np.ndarray | None, wv: WallValues):
        """Skew convection ``C(a) v`` as sparse pieces.

        Returns ``(Kv, kv, Ka)`` where ``Kv`` is the matrix acting on ``v``
        for fixed ``a``, ``kv`` the affine wall contribution (so that
        ``C(a) v = Kv @ v + kv``) and ``Ka`` the matrix acting on ``a`` for
        fixed ``v`` (``None`` when ``vel`` is not given); ``Ka @ a`` equals
        the full ``C(a) v`` including wall terms. Rows of wall faces are zero.
        """
        g = self.grid
        pc = self._skew_pieces
        area = g.cell_area
        au, av = adv[: self.nu], adv[self.nu:]
        tn_wall, te_wall = self._node_wall_terms(wv)
        mu = sp.diags(self.interior_u.astype(float))
        mv = sp.diags(self.interior_v.astype(float))

        fe = g.hy * (pc["P_u"] @ au)
        fn = g.hx * (pc["Fn_u"] @ av)
        div_u = (pc["Q_u"] @ fe + pc["S_u"] @ fn) / area
        Kuu = (pc["Q_u"] @ sp.diags(fe) @ pc["P_u"] + pc["S_u"] @ sp.diags(fn) @ pc["Tn_u"]) / area
        Kuu = mu @ (Kuu - 0.5 * sp.diags(div_u))
        ku = mu @ (pc["S_u"] @ (fn * tn_wall)) / area

        fnv = g.hx * (pc["P_v"] @ av)
        fev = g.hy * (pc["Fe_v"] @ au)
        div_v = (pc["Q_v"] @ fnv + pc["S_v"] @ fev) / area
        Kvv = (pc["Q_v"] @ sp.diags(fnv) @ pc["P_v"] + pc["S_v"] @ sp.diags(fev) @ pc["Te_v"]) / area
        Kvv = mv @ (Kvv - 0.5 * sp.diags(div_v))
        kv = mv @ (pc["S_v"] @ (fev * te_wall)) / area

        Kv = sp.block_diag([Kuu, Kvv]).tocsr()
        kvec = np.r_[ku, kv]
        if vel is None:
            return Kv, kvec, None

        u, v = vel[: self.nu], vel[self.nu:]
        te_u = pc["P_u"] @ u
        tn_u = pc["Tn_u"] @ u + tn_wall
        tn_v = pc["P_v"] @ v
        te_v = pc["Te_v"] @ v + te_wall
        # derivative of the u-rows with respect to (a_u, a_v)
        Dfe = g.hy * pc["P_u"]
        Dfn = g.hx * pc["Fn_u"]
        Ku_au = (pc["Q_u"] @ sp.diags(te_u) @ Dfe - 0.5 * sp.diags(u) @ pc["Q_u"] @ Dfe) / area
        Ku_av = (pc["S_u"] @ sp.diags(tn_u) @ Dfn - 0.5 * sp.diags(u) @ pc["S_u"] @ Dfn) / area
        Dfnv = g.hx * pc["P_v"]
        Dfev = g.hy * pc["Fe_v"]
        Kv_av = (pc["Q_v"] @ sp.diags(tn_v) @ Dfnv - 0.5 * sp.diags(v) @ pc["Q_v"] @ Dfnv) / area
        Kv_au = (pc["S_v"] @ sp.diags(te_v) @ Dfev - 0.5 * sp.diags(v) @ pc["S_v"] @ Dfev) / area
        Ka = sp.bmat([[mu @ Ku_au, mu @ Ku_av], [mv @ Kv_au, mv @ Kv_av]]).tocsr()
        return Kv, kvec, Ka

    # -- convenience wrappers around the fields API ----------------------------
    def wall_values(self, bc: BoundaryCondition | None) -> WallValues:
        return wall_values(bc, self.grid)
