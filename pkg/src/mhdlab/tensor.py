"""Flow-map geometry: deformation gradient, Jacobian, cofactor and inverse.

Index conventions (leading axes of the arrays):

* ``grad_eta[i, l] = d_l eta_i``
* ``A[l, i] = A^{li} = dy^l / dx^i`` so that ``A^{li} d_l eta_r = delta^i_r``
* ``Ahat = J * A``; row ``l`` of ``Ahat`` is the cross product of the two
  columns of ``grad_eta`` other than ``l`` (cyclically ordered).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grid as g
from .errors import JacobianFloorError

JACOBIAN_FLOOR = 0.1


@dataclass(frozen=True, eq=False)
class FlowMap:
    """Flow map ``eta(y) = lin @ y + disp(y)``.

    The reference coordinates are not periodic, so the affine part is kept
    analytic and only the periodic displacement goes through the grid
    operators.
    """

    disp: np.ndarray
    lin: np.ndarray = field(default_factory=lambda: np.eye(3))

    def values(self, grid: g.Grid) -> np.ndarray:
        y = np.stack(grid.coords)
        return np.einsum("il,l...->i...", self.lin, y) + self.disp

    def d(self, grid: g.Grid, axis: int) -> np.ndarray:
        """``d_axis eta`` as a plain vector field."""
        out = g.deriv(grid, self.disp, axis)
        return out + self.lin[:, axis - 1].reshape(3, 1, 1, 1)

    def shifted(self, delta: np.ndarray) -> "FlowMap":
        return FlowMap(self.disp + delta, self.lin)

    @classmethod
    def identity(cls, grid: g.Grid) -> "FlowMap":
        return cls(np.zeros((3,) + grid.shape))


def eta_deriv(grid: g.Grid, eta, axis: int) -> np.ndarray:
    """First derivative of a flow map or of an ordinary (periodic) field."""
    if isinstance(eta, FlowMap):
        return eta.d(grid, axis)
    return g.deriv(grid, eta, axis)


def eta_values(grid: g.Grid, eta) -> np.ndarray:
    return eta.values(grid) if isinstance(eta, FlowMap) else np.asarray(eta)


@dataclass(frozen=True, eq=False)
class GeometrySnapshot:
    grad_eta: np.ndarray
    J: np.ndarray
    A: np.ndarray
    Ahat: np.ndarray

    def inverse_residual(self) -> float:
        """``max |A^{li} d_l eta_r - delta^i_r|``."""
        prod = np.einsum("li...,rl...->ir...", self.A, self.grad_eta)
        eye = np.eye(3).reshape((3, 3) + (1,) * (prod.ndim - 2))
        return float(np.abs(prod - eye).max())


def deformation_gradient(grid: g.Grid, eta) -> np.ndarray:
    """``d_l eta_i`` with spectral tangential and grid-normal derivatives."""
    return np.stack([eta_deriv(grid, eta, l) for l in (1, 2, 3)], axis=1)


def cofactor_rows(grad_eta: np.ndarray) -> np.ndarray:
    """Rows of ``Ahat`` from the epsilon formulas (no numerical inversion)."""
    c1, c2, c3 = grad_eta[:, 0], grad_eta[:, 1], grad_eta[:, 2]
    return np.stack(
        [np.cross(c2, c3, axis=0), np.cross(c3, c1, axis=0), np.cross(c1, c2, axis=0)]
    )


def cofactor(grad_eta: np.ndarray, floor: float | None = JACOBIAN_FLOOR) -> GeometrySnapshot:
    """Build ``J``, ``Ahat`` and ``A = Ahat / J`` from the deformation gradient.

    Raises :class:`JacobianFloorError` if ``min J <= 0`` or below ``floor``.
    """
    ahat = cofactor_rows(grad_eta)
    # J = c1 . (c2 x c3) = sum_i d_1 eta_i Ahat^{1i}
    jac = np.einsum("i...,i...->...", grad_eta[:, 0], ahat[0])
    jmin = float(jac.min())
    limit = 0.0 if floor is None else floor
    if not np.isfinite(jmin) or jmin <= 0.0 or jmin < limit:
        raise JacobianFloorError(f"min J = {jmin:.4g} below floor {limit}")
    return GeometrySnapshot(grad_eta=grad_eta, J=jac, A=ahat / jac, Ahat=ahat)


def geometry(grid: g.Grid, eta, floor: float | None = JACOBIAN_FLOOR) -> GeometrySnapshot:
    return cofactor(deformation_gradient(grid, eta), floor=floor)


def piola_residual(grid: g.Grid, snap: GeometrySnapshot) -> np.ndarray:
    """``d_l Ahat^{li}`` for each ``i``; vanishes in the continuum."""
    return sum(g.deriv(grid, snap.Ahat[l - 1], l) for l in (1, 2, 3))


def cov_grad(grid: g.Grid, A: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``nabla_A^i f = A^{li} d_l f``; extra leading axes of ``f`` trail the new axis."""
    df = np.stack([g.deriv(grid, f, l) for l in (1, 2, 3)])
    return np.einsum("li...,l...->i...", A, df) if f.ndim == 3 else _contract_grad(A, df)


def _contract_grad(A: np.ndarray, df: np.ndarray) -> np.ndarray:
    # df[l, c, ...] -> out[i, c, ...]
    return np.einsum("li...,lc...->ic...", A, df)


def cov_div(grid: g.Grid, A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``div_A X = A^{li} d_l X_i``."""
    return sum(A[l - 1, i] * g.deriv(grid, X[i], l) for l in (1, 2, 3) for i in range(3))


def directional(grid: g.Grid, w: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``(w . d) f = w^l d_l f`` for a Lagrangian vector ``w``."""
    return sum(w[l - 1] * g.deriv(grid, f, l) for l in (1, 2, 3))


def variation_identity_residual(
    A_dir: np.ndarray, A: np.ndarray, grad_deta: np.ndarray
) -> np.ndarray:
    """``D A^{li} + A^{lr} (d_k D eta_r) A^{ki}``.

    ``A_dir`` is the directly computed variation ``D A`` and ``grad_deta``
    holds ``d_k D eta_r`` as ``[r, k]``.
    """
    return A_dir + np.einsum("lr...,rk...,ki...->li...", A, grad_deta, A)


def spatial_variation_residual(grid: g.Grid, eta, axis: int) -> np.ndarray:
    """Residual of ``D A = -A (d D eta) A`` with ``D = d_axis``."""
    snap = geometry(grid, eta, floor=None)
    A_dir = g.deriv(grid, snap.A, axis)
    grad_deta = deformation_gradient(grid, eta_deriv(grid, eta, axis))
    return variation_identity_residual(A_dir, snap.A, grad_deta)


def temporal_variation_residual(
    grid: g.Grid, eta_minus: FlowMap, eta_plus: FlowMap, eta_mid: FlowMap, dt: float
) -> np.ndarray:
    """Same identity with ``D`` a centred time difference over ``2 dt``."""
    A_minus = geometry(grid, eta_minus, floor=None).A
    A_plus = geometry(grid, eta_plus, floor=None).A
    A_mid = geometry(grid, eta_mid, floor=None).A
    A_dir = (A_plus - A_minus) / (2.0 * dt)
    grad_deta = deformation_gradient(grid, (eta_plus.disp - eta_minus.disp) / (2.0 * dt))
    return variation_identity_residual(A_dir, A_mid, grad_deta)

