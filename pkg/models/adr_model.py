"""
Advection-diffusion-reaction pollutant model on [0, lx] x [0, ly].

    -kappa1 Lap f + b(z, x) . grad f + a0 f = s(z, x),   zero flux on the boundary

Cell-centered finite differences on an nx x ny grid (q = nx * ny unknowns,
flat index j * nx + i). The operator is affine in the parameters:

    A(x) = A0 + cos(x0) Dx + sin(x0) Dy + sum_l x[3 + l] B_l

x0 is the wind angle, (x1, x2) the source position, and x[3:] the
coefficients of divergence-free stream-function modes.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from core.errors import InvalidParameterError, SingularSystemError
from core.types import as_point

logger = logging.getLogger(__name__)

RESIDUAL_RTOL = 1e-10


def _neumann_laplacian_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (h * h)


def _neumann_gradient_1d(n: int, h: float) -> sp.csr_matrix:
    # ghost cells mirror the boundary cell
    main = np.zeros(n)
    main[0] = -1.0
    main[-1] = 1.0
    off = np.ones(n - 1)
    return sp.diags([-off, main, off], [-1, 0, 1], format="csr") / (2.0 * h)


def stream_modes(count: int) -> List[Tuple[int, int]]:
    """Wavenumber pairs (a, b), ordered by a + b then a."""
    modes = []
    total = 2
    while len(modes) < count:
        for a in range(1, total):
            modes.append((a, total - a))
        total += 1
    return modes[:count]


@dataclass(frozen=True, eq=False)
class ADRProblem:
    nx: int = 32
    ny: int = 16
    lx: float = 1.0
    ly: float = 0.5
    kappa1: float = 0.03
    a0: float = 0.5
    kappa2: float = 0.25
    p: int = 3
    turbulence_scale: float = 0.2
    # test hooks for manufactured solutions
    source_override: Optional[float] = None
    velocity_off: bool = False

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2 or self.nx * self.ny < 16:
            raise InvalidParameterError(f"grid {self.nx}x{self.ny} too small (need q >= 16)")
        if self.kappa1 <= 0 or self.a0 <= 0 or self.kappa2 <= 0:
            raise InvalidParameterError("kappa1, a0 and kappa2 must be positive")
        if self.p < 3:
            raise InvalidParameterError(f"p must be >= 3, got {self.p}")

    @property
    def q(self) -> int:
        return self.nx * self.ny

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @cached_property
    def centers(self) -> np.ndarray:
        """(q, 2) cell-center coordinates in flat order."""
        zx = (np.arange(self.nx) + 0.5) * self.hx
        zy = (np.arange(self.ny) + 0.5) * self.hy
        gx, gy = np.meshgrid(zx, zy)
        return np.column_stack([gx.ravel(), gy.ravel()])

    @cached_property
    def _gradients(self) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
        dx = sp.kron(sp.identity(self.ny), _neumann_gradient_1d(self.nx, self.hx), format="csr")
        dy = sp.kron(_neumann_gradient_1d(self.ny, self.hy), sp.identity(self.nx), format="csr")
        return dx, dy

    def _mode_operator(self, a: int, b: int) -> sp.csr_matrix:
        z1, z2 = self.centers[:, 0], self.centers[:, 1]
        ka, kb = np.pi * a / self.lx, np.pi * b / self.ly
        scale = self.turbulence_scale / np.hypot(ka, kb)
        vx = scale * kb * np.sin(ka * z1) * np.cos(kb * z2)
        vy = -scale * ka * np.cos(ka * z1) * np.sin(kb * z2)
        dx, dy = self._gradients
        return (sp.diags(vx) @ dx + sp.diags(vy) @ dy).tocsr()

    @cached_property
    def affine_matrices(self) -> List[sp.csr_matrix]:
        """Operator terms matching affine_coefficients(x)."""
        lap = sp.kron(sp.identity(self.ny), _neumann_laplacian_1d(self.nx, self.hx)) + sp.kron(
            _neumann_laplacian_1d(self.ny, self.hy), sp.identity(self.nx)
        )
        base = (-self.kappa1 * lap + self.a0 * sp.identity(self.q)).tocsr()
        if self.velocity_off:
            return [base]
        dx, dy = self._gradients
        return [base, dx, dy] + [self._mode_operator(a, b) for a, b in stream_modes(self.p - 3)]

    def affine_coefficients(self, x: np.ndarray) -> np.ndarray:
        if self.velocity_off:
            return np.ones(1)
        return np.concatenate([[1.0, np.cos(x[0]), np.sin(x[0])], x[3:]])

    def assemble(self, x) -> sp.csc_matrix:
        x = as_point(x, self.p)
        coeffs = self.affine_coefficients(x)
        op = sum(c * m for c, m in zip(coeffs, self.affine_matrices))
        return sp.csc_matrix(op)

    def source(self, x) -> np.ndarray:
        x = as_point(x, self.p)
        if self.source_override is not None:
            return np.full(self.q, float(self.source_override))
        d2 = (self.centers[:, 0] - x[1]) ** 2 + (self.centers[:, 1] - x[2]) ** 2
        return np.exp(-d2 / self.kappa2**2)


def solve_high_fidelity(problem: ADRProblem, x) -> np.ndarray:
    """
    Full-order concentration field at parameter x.

    Raises:
        SingularSystemError: the direct solve fails or misses the residual tolerance
    """
    op = problem.assemble(x)
    rhs = problem.source(x)
    field = spsolve(op, rhs)
    if not np.all(np.isfinite(field)):
        raise SingularSystemError("full-order solve returned non-finite values")
    residual = np.linalg.norm(op @ field - rhs)
    if residual > RESIDUAL_RTOL * np.linalg.norm(rhs):
        raise SingularSystemError(f"full-order residual {residual:.3e} above tolerance")
    return field


def sup_norm_score(field) -> float:
    """max_i |f_i|"""
    arr = np.asarray(field, dtype=np.float64)
    if arr.size == 0:
        raise InvalidParameterError("field is empty")
    return float(np.max(np.abs(arr)))
