"""Physical parameters, grid geometry and the double-well potential."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


def f_potential(phi):
    """Nonlinear restoring term f(phi) = phi**3 - phi."""
    return phi**3 - phi


def F_potential(phi):
    """Double-well potential F(phi) = (phi**2 - 1)**2 / 4, with F' = f."""
    return 0.25 * (phi**2 - 1.0) ** 2


def fprime_potential(phi):
    return 3.0 * phi**2 - 1.0


@dataclass(frozen=True)
class PhysicalParams:
    """Coefficients of the CHNS system.

    ``lambda_mix`` multiplies the Laplacian in the chemical-potential
    equation and falls back to ``epsilon`` when left as ``None``.
    ``S_stab`` is the stabilization constant of the linear schemes.
    """

    epsilon: float = 0.2
    mobility_M: float = 0.01
    gamma: float = 1.0
    nu: float = 1.0
    lambda_mix: float | None = None
    L_lipschitz: float = 1.0
    S_stab: float = 1.0

    def __post_init__(self):
        if self.lambda_mix is None:
            object.__setattr__(self, "lambda_mix", self.epsilon)
        for name in ("epsilon", "mobility_M", "nu", "lambda_mix"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if not (math.isfinite(self.gamma) and self.gamma >= 0.0):
            raise ValueError(f"gamma must be non-negative, got {self.gamma!r}")
        if not (math.isfinite(self.L_lipschitz) and self.L_lipschitz >= 0.0):
            raise ValueError(f"L_lipschitz must be non-negative, got {self.L_lipschitz!r}")
        if not (math.isfinite(self.S_stab) and self.S_stab >= 0.0):
            raise ValueError(f"S_stab must be non-negative, got {self.S_stab!r}")

    def with_updates(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)

    def energy_stable(self, dt: float) -> bool:
        """True when S*dt >= 3L, the sufficient condition for energy decay."""
        # relative slack so that S = 3L/dt passes despite rounding
        return self.S_stab * dt >= 3.0 * self.L_lipschitz * (1.0 - 1e-12)

    @classmethod
    def unit(cls, **changes) -> "PhysicalParams":
        base = dict(epsilon=1.0, mobility_M=1.0, gamma=1.0, nu=1.0, lambda_mix=1.0)
        base.update(changes)
        return cls(**base)


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centred grid on [x0, x0+Lx] x [y0, y0+Ly].

    Arrays are indexed ``[i, j]`` with ``i`` along x. Cell centres sit at
    ``(x0+(i+1/2)hx, y0+(j+1/2)hy)``, x-faces at ``(x0+i hx, y0+(j+1/2)hy)``
    and y-faces at ``(x0+(i+1/2)hx, y0+j hy)``.
    """

    nx: int
    ny: int
    x0: float = 0.0
    y0: float = 0.0
    Lx: float = 1.0
    Ly: float = 1.0
    hx: float = field(init=False)
    hy: float = field(init=False)

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("nx and ny must be integers")
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs at least 4 cells per axis, got {self.nx}x{self.ny}")
        if not (self.Lx > 0.0 and self.Ly > 0.0):
            raise ValueError("domain extents must be positive")
        object.__setattr__(self, "hx", self.Lx / self.nx)
        object.__setattr__(self, "hy", self.Ly / self.ny)

    @classmethod
    def square(cls, n: int, length: float = 1.0, origin: float = 0.0) -> "GridSpec":
        return cls(n, n, origin, origin, length, length)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    @property
    def nxfaces(self) -> int:
        return (self.nx + 1) * self.ny

    @property
    def nyfaces(self) -> int:
        return self.nx * (self.ny + 1)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    @property
    def is_uniform(self) -> bool:
        return math.isclose(self.hx, self.hy, rel_tol=1e-12)

    def cell_centers(self):
        x = self.x0 + (np.arange(self.nx) + 0.5) * self.hx
        y = self.y0 + (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def xface_centers(self):
        x = self.x0 + np.arange(self.nx + 1) * self.hx
        y = self.y0 + (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def yface_centers(self):
        x = self.x0 + (np.arange(self.nx) + 0.5) * self.hx
        y = self.y0 + np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def xface_weights(self) -> np.ndarray:
        """Quadrature weights of x-face samples (half weight on walls)."""
        w = np.full((self.nx + 1, self.ny), self.cell_area)
        w[0, :] *= 0.5
        w[-1, :] *= 0.5
        return w

    def yface_weights(self) -> np.ndarray:
        w = np.full((self.nx, self.ny + 1), self.cell_area)
        w[:, 0] *= 0.5
        w[:, -1] *= 0.5
        return w
