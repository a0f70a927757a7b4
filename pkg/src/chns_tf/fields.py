"""Cell-centred scalars, MAC-staggered velocities and their quadrature.

Every field stores one ghost layer per side. Ghost values are derived data:
:func:`apply_ghosts` rebuilds them from the interior and the boundary
condition, and is idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from chns_tf.model import GridSpec

VelocityFunction = Callable[[np.ndarray, np.ndarray], tuple]


class GridMismatchError(ValueError):
    pass


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


class ScalarField:
    """Samples at cell centres; ``data`` has shape ``(nx+2, ny+2)``."""

    def __init__(self, grid: GridSpec, data: Optional[np.ndarray] = None):
        self.grid = grid
        shape = (grid.nx + 2, grid.ny + 2)
        if data is None:
            data = np.zeros(shape)
        data = np.asarray(data, dtype=float)
        if data.shape != shape:
            raise GridMismatchError(f"expected padded shape {shape}, got {data.shape}")
        self.data = data

    @classmethod
    def from_values(cls, grid: GridSpec, values) -> "ScalarField":
        values = np.asarray(values, dtype=float)
        if values.shape == ():
            values = np.full(grid.shape, float(values))
        if values.shape != grid.shape:
            raise GridMismatchError(f"expected shape {grid.shape}, got {values.shape}")
        out = cls(grid)
        out.data[1:-1, 1:-1] = values
        return apply_ghosts(out)

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "ScalarField":
        x, y = grid.cell_centers()
        return cls.from_values(grid, np.broadcast_to(fn(x, y), grid.shape))

    @classmethod
    def from_vector(cls, grid: GridSpec, vec) -> "ScalarField":
        return cls.from_values(grid, np.asarray(vec).reshape(grid.shape))

    @property
    def values(self) -> np.ndarray:
        return self.data[1:-1, 1:-1]

    def vector(self) -> np.ndarray:
        return self.values.ravel().copy()

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.data.copy())

    def map(self, fn) -> "ScalarField":
        return ScalarField.from_values(self.grid, fn(self.values))

    def _combine(self, other, op):
        if isinstance(other, ScalarField):
            _check_same_grid(self, other)
            return ScalarField(self.grid, op(self.data, other.data))
        return ScalarField(self.grid, op(self.data, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __radd__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return ScalarField(self.grid, other - self.data)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.data)

    def __repr__(self):
        return f"ScalarField(nx={self.grid.nx}, ny={self.grid.ny})"


class StaggeredVelocity:
    """Face-normal velocity on a MAC layout.

    ``u`` has shape ``(nx+1, ny+2)``: x-faces with a ghost row below and
    above. ``v`` has shape ``(nx+2, ny+1)``: y-faces with a ghost column
    left and right. Wall faces (``u[0]``, ``u[nx]``, ``v[:, 0]``,
    ``v[:, ny]``) hold the Dirichlet data.
    """

    def __init__(self, grid: GridSpec, u: Optional[np.ndarray] = None, v: Optional[np.ndarray] = None):
        self.grid = grid
        ushape = (grid.nx + 1, grid.ny + 2)
        vshape = (grid.nx + 2, grid.ny + 1)
        self.u = np.zeros(ushape) if u is None else np.asarray(u, dtype=float)
        self.v = np.zeros(vshape) if v is None else np.asarray(v, dtype=float)
        if self.u.shape != ushape or self.v.shape != vshape:
            raise GridMismatchError(
                f"expected padded shapes {ushape}, {vshape}; got {self.u.shape}, {self.v.shape}"
            )

    @classmethod
    def from_faces(cls, grid: GridSpec, u_faces, v_faces, bc: Optional["BoundaryCondition"] = None):
        u_faces = np.asarray(u_faces, dtype=float)
        v_faces = np.asarray(v_faces, dtype=float)
        if u_faces.shape != (grid.nx + 1, grid.ny) or v_faces.shape != (grid.nx, grid.ny + 1):
            raise GridMismatchError(
                f"face arrays must be {(grid.nx + 1, grid.ny)} and {(grid.nx, grid.ny + 1)}"
            )
        out = cls(grid)
        out.u[:, 1:-1] = u_faces
        out.v[1:-1, :] = v_faces
        return apply_ghosts(out, bc)

    @classmethod
    def from_function(cls, grid: GridSpec, fn: VelocityFunction, bc: Optional["BoundaryCondition"] = None):
        """Sample ``fn(x, y) -> (u, v)`` at the native face locations."""
        xu, yu = grid.xface_centers()
        xv, yv = grid.yface_centers()
        u = np.broadcast_to(fn(xu, yu)[0], xu.shape)
        v = np.broadcast_to(fn(xv, yv)[1], xv.shape)
        if bc is None:
            bc = BoundaryCondition(velocity=fn)
        return cls.from_faces(grid, u, v, bc)

    @classmethod
    def from_vector(cls, grid: GridSpec, vec, bc: Optional["BoundaryCondition"] = None):
        vec = np.asarray(vec, dtype=float)
        nu = grid.nxfaces
        return cls.from_faces(
            grid,
            vec[:nu].reshape(grid.nx + 1, grid.ny),
            vec[nu:].reshape(grid.nx, grid.ny + 1),
            bc,
        )

    @property
    def u_faces(self) -> np.ndarray:
        return self.u[:, 1:-1]

    @property
    def v_faces(self) -> np.ndarray:
        return self.v[1:-1, :]

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u_faces.ravel(), self.v_faces.ravel()])

    def copy(self) -> "StaggeredVelocity":
        return StaggeredVelocity(self.grid, self.u.copy(), self.v.copy())

    def _combine(self, other, op):
        if isinstance(other, StaggeredVelocity):
            _check_same_grid(self, other)
            return StaggeredVelocity(self.grid, op(self.u, other.u), op(self.v, other.v))
        return StaggeredVelocity(self.grid, op(self.u, other), op(self.v, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return StaggeredVelocity(self.grid, other - self.u, other - self.v)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return StaggeredVelocity(self.grid, -self.u, -self.v)

    def __repr__(self):
        return f"StaggeredVelocity(nx={self.grid.nx}, ny={self.grid.ny})"


@dataclass
class BoundaryCondition:
    """Boundary data: phi and mu are always homogeneous Neumann.

    ``velocity`` is ``None`` for no-slip walls or a callable
    ``(x, y) -> (u, v)`` evaluated at wall face centres.
    """

    velocity: Optional[VelocityFunction] = None
    phi: str = "neumann_zero"
    mu: str = "neumann_zero"
    pressure_gauge: str = "zero_mean"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def homogeneous(self) -> bool:
        return self.velocity is None

    @classmethod
    def no_slip(cls) -> "BoundaryCondition":
        return cls()

    @classmethod
    def rotational(cls, center=(0.5, 0.5)) -> "BoundaryCondition":
        cx, cy = center

        def rot(x, y):
            return (y - cy, -x + cx)

        return cls(velocity=rot)


@dataclass(frozen=True)
class WallValues:
    """Dirichlet velocity data sampled where the MAC stencils need it."""

    u_west: np.ndarray   # normal, x-faces at x0, length ny
    u_east: np.ndarray
    v_south: np.ndarray  # normal, y-faces at y0, length nx
    v_north: np.ndarray
    u_south: np.ndarray  # tangential u on y = y0 at x-face abscissae, length nx+1
    u_north: np.ndarray
    v_west: np.ndarray   # tangential v on x = x0 at y-face ordinates, length ny+1
    v_east: np.ndarray

    @property
    def is_zero(self) -> bool:
        return not any(np.any(a != 0.0) for a in self.__dict__.values())


def wall_values(bc: Optional[BoundaryCondition], grid: GridSpec) -> WallValues:
    """Evaluate the velocity boundary function at wall face centres."""
    if bc is not None and grid in bc._cache:
        return bc._cache[grid]
    nx, ny = grid.nx, grid.ny
    if bc is None or bc.velocity is None:
        wv = WallValues(
            np.zeros(ny), np.zeros(ny), np.zeros(nx), np.zeros(nx),
            np.zeros(nx + 1), np.zeros(nx + 1), np.zeros(ny + 1), np.zeros(ny + 1),
        )
    else:
        fn = bc.velocity
        xc = grid.x0 + (np.arange(nx) + 0.5) * grid.hx
        yc = grid.y0 + (np.arange(ny) + 0.5) * grid.hy
        xn = grid.x0 + np.arange(nx + 1) * grid.hx
        yn = grid.y0 + np.arange(ny + 1) * grid.hy
        x_w, x_e = grid.x0, grid.x0 + grid.Lx
        y_s, y_n = grid.y0, grid.y0 + grid.Ly

        def comp(k, x, y):
            x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
            return np.array(np.broadcast_to(fn(x, y)[k], x.shape), dtype=float)

        wv = WallValues(
            comp(0, x_w, yc), comp(0, x_e, yc), comp(1, xc, y_s), comp(1, xc, y_n),
            comp(0, xn, y_s), comp(0, xn, y_n), comp(1, x_w, yn), comp(1, x_e, yn),
        )
    if bc is not None:
        bc._cache[grid] = wv
    return wv


def apply_ghosts(fld, bc: Optional[BoundaryCondition] = None):
    """Return a copy of ``fld`` with ghost layers (and wall faces) rebuilt.

    ``bc=None`` means no-slip walls for velocities.

    Scalars use the mirror closure (zero normal difference across every
    wall face). Velocities get their wall-normal faces set to the Dirichlet
    data ``g`` and tangential ghosts set to ``2 g - interior``.
    """
    if isinstance(fld, ScalarField):
        d = fld.data.copy()
        d[0, 1:-1] = d[1, 1:-1]
        d[-1, 1:-1] = d[-2, 1:-1]
        d[:, 0] = d[:, 1]
        d[:, -1] = d[:, -2]
        return ScalarField(fld.grid, d)
    if isinstance(fld, StaggeredVelocity):
        g = fld.grid
        wv = wall_values(bc, g)
        u = fld.u.copy()
        v = fld.v.copy()
        u[0, 1:-1] = wv.u_west
        u[-1, 1:-1] = wv.u_east
        v[1:-1, 0] = wv.v_south
        v[1:-1, -1] = wv.v_north
        u[:, 0] = 2.0 * wv.u_south - u[:, 1]
        u[:, -1] = 2.0 * wv.u_north - u[:, -2]
        v[0, :] = 2.0 * wv.v_west - v[1, :]
        v[-1, :] = 2.0 * wv.v_east - v[-2, :]
        return StaggeredVelocity(g, u, v)
    raise TypeError(f"cannot apply ghosts to {type(fld).__name__}")


def integrate(fld: ScalarField) -> float:
    """Midpoint quadrature of the interior samples."""
    return float(fld.grid.cell_area * np.sum(fld.values))


def inner(a, b) -> float:
    """L2 inner product by midpoint (cells) or trapezoid-on-walls (faces)."""
    _check_same_grid(a, b)
    if isinstance(a, ScalarField) and isinstance(b, ScalarField):
        return float(a.grid.cell_area * np.sum(a.values * b.values))
    if isinstance(a, StaggeredVelocity) and isinstance(b, StaggeredVelocity):
        g = a.grid
        return float(
            np.sum(g.xface_weights() * a.u_faces * b.u_faces)
            + np.sum(g.yface_weights() * a.v_faces * b.v_faces)
        )
    raise TypeError("inner() needs two fields of the same kind")


def norm_l2(fld) -> float:
    return float(np.sqrt(max(inner(fld, fld), 0.0)))


def norm_h1semi(fld: ScalarField) -> float:
    """Discrete |grad phi| in L2 from face differences (mirror closure)."""
    g = fld.grid
    vals = fld.values
    dx = np.diff(vals, axis=0) / g.hx
    dy = np.diff(vals, axis=1) / g.hy
    return float(np.sqrt(g.cell_area * (np.sum(dx * dx) + np.sum(dy * dy))))


# -- snapshots ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_snapshot(path, values: np.ndarray, hx: float, hy: float, t: float) -> Path:
    """Write a 2-D sample array as text.

    Layout: a ``# nx ny hx hy t`` header naming the fields, a second comment
    line holding their values, then one value per line. Rows of constant
    ``j`` form the blocks (row-major over j); within a block the values run
    over ``i``. Decimals carry 17 significant digits, so reading back is
    bit-exact.
    """
    path = Path(path)
    values = np.asarray(values, dtype=float)
    nx, ny = values.shape
    lines = ["# nx ny hx hy t", f"# {nx} {ny} {_fmt(hx)} {_fmt(hy)} {_fmt(t)}"]
    lines.extend(_fmt(x) for x in values.T.ravel())
    path.write_text("\n".join(lines) + "\n")
    return path


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(values, hx, hy, t)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# nx ny hx hy t"):
        raise ValueError(f"{path}: missing snapshot header")
    parts = lines[1].lstrip("#").split()
    nx, ny = int(parts[0]), int(parts[1])
    hx, hy, t = (float(p) for p in parts[2:5])
    data = np.array([float(s) for s in lines[2:] if s.strip()])
    if data.size != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {data.size}")
    return data.reshape(ny, nx).T.copy(), hx, hy, t
