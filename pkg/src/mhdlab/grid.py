"""Reference domain and discrete derivative operators.

Fields are plain numpy arrays whose trailing three axes are the node axes
``(n1, n2, n3)``; any leading axes (vector components, matrix entries, jet
orders) are carried along untouched by every operator here.

Two layouts are supported:

* ``slab``  -- ``T^2 x [-1, 1]`` with vertex-centred nodes in ``y3`` (the two
  boundary planes are grid planes), fourth-order finite differences in ``y3``.
* ``torus`` -- ``T^3`` with period 2 in ``y3`` (nodes on ``[-1, 1)``) and
  spectral derivatives on every axis.

Tangential periods are fixed to 1, so ``sin(2*pi*k*y1)`` is resolved for
``|k| < n1/2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError

SLAB = "slab"
TORUS = "torus"

TANGENTIAL_PERIOD = 1.0
NORMAL_PERIOD = 2.0


def fd_weights(x0: float, nodes: np.ndarray, order: int = 1) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at ``x0``.

    Solves the moment (Vandermonde) system on the given nodes; fine for the
    five-point stencils used here.
    """
    nodes = np.asarray(nodes, dtype=float)
    m = len(nodes)
    dx = nodes - x0
    vander = np.vander(dx, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(vander, rhs)


def fd_matrix(n: int, h: float) -> np.ndarray:
    """Dense fourth-order first-derivative matrix on ``n`` equispaced nodes.

    Centred five-point stencil in the interior, one-sided five-point
    closures on the two nodes nearest each end.
    """
    if n < 5:
        raise ConfigError(f"normal direction needs at least 5 nodes, got {n}")
    mat = np.zeros((n, n))
    local = np.arange(5, dtype=float)
    for j in range(n):
        if j < 2:
            start = 0
        elif j > n - 3:
            start = n - 5
        else:
            start = j - 2
        mat[j, start : start + 5] = fd_weights(float(j - start), local) / h
    return mat


@dataclass(frozen=True, eq=False)
class Grid:
    n1: int
    n2: int
    n3: int
    mode: str
    h1: float
    h2: float
    h3: float
    y1: np.ndarray = field(repr=False)
    y2: np.ndarray = field(repr=False)
    y3: np.ndarray = field(repr=False)
    _dnor: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)

    @property
    def is_slab(self) -> bool:
        return self.mode == SLAB

    @property
    def h_min(self) -> float:
        return min(self.h1, self.h2, self.h3)

    @property
    def volume(self) -> float:
        return TANGENTIAL_PERIOD**2 * 2.0

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcast-ready node coordinates ``(Y1, Y2, Y3)`` of full shape."""
        return tuple(np.meshgrid(self.y1, self.y2, self.y3, indexing="ij"))

    @cached_property
    def sigma(self) -> np.ndarray:
        """Weight ``sigma(y3) = (1 - y3)(1 + y3)`` (identically 1 on the torus)."""
        if self.is_slab:
            s = (1.0 - self.y3) * (1.0 + self.y3)
            s[0] = 0.0
            s[-1] = 0.0
        else:
            s = np.ones(self.n3)
        return np.broadcast_to(s, self.shape).copy()

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if self.is_slab:
            mask[..., 0] = True
            mask[..., -1] = True
        return mask

    @cached_property
    def weights(self) -> np.ndarray:
        """Volume quadrature weights: uniform tangentially, trapezoid in y3."""
        w3 = np.full(self.n3, self.h3)
        if self.is_slab:
            w3[0] = w3[-1] = 0.5 * self.h3
        w = self.h1 * self.h2 * w3
        return np.broadcast_to(w, self.shape).copy()

    @cached_property
    def _wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        k1 = _spectral_symbol(self.n1, TANGENTIAL_PERIOD)
        k2 = _spectral_symbol(self.n2, TANGENTIAL_PERIOD)
        k3 = None if self.is_slab else _spectral_symbol(self.n3, NORMAL_PERIOD)
        return k1, k2, k3


def _spectral_symbol(n: int, period: float) -> np.ndarray:
    """``i k`` for a real FFT of length ``n``; the Nyquist mode is dropped so
    that repeated first derivatives compose exactly."""
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=period / n)
    if n % 2 == 0:
        k[-1] = 0.0
    return 1j * k


def build_grid(n1: int, n2: int, n3: int, mode: str = SLAB) -> Grid:
    """Assemble a grid; rejects sizes below the stencil width."""
    if mode not in (SLAB, TORUS):
        raise ConfigError(f"unknown grid mode {mode!r}")
    for name, n, lo in (("n1", n1, 4), ("n2", n2, 4), ("n3", n3, 5)):
        if int(n) != n or n < lo:
            raise ConfigError(f"{name} must be an integer >= {lo}, got {n}")
    h1 = TANGENTIAL_PERIOD / n1
    h2 = TANGENTIAL_PERIOD / n2
    y1 = np.arange(n1) * h1
    y2 = np.arange(n2) * h2
    if mode == SLAB:
        y3 = np.linspace(-1.0, 1.0, n3)
        h3 = 2.0 / (n3 - 1)
        dnor = fd_matrix(n3, h3)
    else:
        h3 = NORMAL_PERIOD / n3
        y3 = -1.0 + np.arange(n3) * h3
        dnor = None
    return Grid(n1, n2, n3, mode, h1, h2, h3, y1, y2, y3, dnor)


def _spectral(f: np.ndarray, symbol: np.ndarray, axis: int, n: int, order: int) -> np.ndarray:
    fh = np.fft.rfft(f, axis=axis)
    shape = [1] * fh.ndim
    shape[axis] = -1
    fh = fh * (symbol**order).reshape(shape)
    return np.fft.irfft(fh, n=n, axis=axis)


def d_tan(grid: Grid, f: np.ndarray, axis: int, order: int = 1) -> np.ndarray:
    """Spectral derivative along tangential axis 1 or 2."""
    if axis not in (1, 2):
        raise ValueError(f"tangential axis must be 1 or 2, got {axis}")
    if order == 0:
        return np.array(f, dtype=float, copy=True)
    k1, k2, _ = grid._wavenumbers
    symbol, n = (k1, grid.n1) if axis == 1 else (k2, grid.n2)
    return _spectral(np.asarray(f, dtype=float), symbol, f.ndim - 3 + axis - 1, n, order)


def d_nor(grid: Grid, f: np.ndarray, order: int = 1) -> np.ndarray:
    """Derivative in ``y3``: fourth-order FD (slab) or spectral (torus).

    ``order > 1`` composes the first-derivative operator.
    """
    f = np.asarray(f, dtype=float)
    if grid.is_slab:
        out = f
        for _ in range(order):
            out = out @ grid._dnor.T
        return np.array(out, copy=True) if order == 0 else out
    if order == 0:
        return f.copy()
    return _spectral(f, grid._wavenumbers[2], f.ndim - 1, grid.n3, order)


def d_wnor(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Weighted normal derivative ``sigma * d3 f``; exactly zero on the boundary."""
    if not grid.is_slab:
        raise ConfigError("weighted normal derivative is defined in slab mode only")
    return grid.sigma * d_nor(grid, f)


def deriv(grid: Grid, f: np.ndarray, axis: int) -> np.ndarray:
    """``d_l f`` for ``l`` in 1, 2, 3."""
    if axis == 3:
        return d_nor(grid, f)
    return d_tan(grid, f, axis)


def gradient(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Stack ``(d1 f, d2 f, d3 f)`` along a new leading axis."""
    return np.stack([deriv(grid, f, l) for l in (1, 2, 3)])


def integrate(grid: Grid, f: np.ndarray) -> float:
    """Volume quadrature over the trailing node axes (deterministic order)."""
    f = np.asarray(f, dtype=float)
    return float(np.sum(f * grid.weights, axis=(-3, -2, -1)).sum())


def boundary_planes(grid: Grid, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Traces of ``f`` on ``y3 = -1`` and ``y3 = +1``."""
    if not grid.is_slab:
        raise ConfigError("boundary traces are defined in slab mode only")
    return f[..., 0], f[..., -1]


def boundary_integrate(grid: Grid, f: np.ndarray) -> float:
    """Surface quadrature summed over both boundary planes."""
    bottom, top = boundary_planes(grid, np.asarray(f, dtype=float))
    area = grid.h1 * grid.h2
    return float(area * (np.sum(bottom) + np.sum(top)))


def l2_norm(grid: Grid, f: np.ndarray) -> float:
    """Discrete ``L^2(Omega)`` norm; leading axes are summed as components."""
    return float(np.sqrt(max(integrate(grid, np.asarray(f) ** 2), 0.0)))


def boundary_l2_norm(grid: Grid, f: np.ndarray) -> float:
    return float(np.sqrt(max(boundary_integrate(grid, np.asarray(f) ** 2), 0.0)))
