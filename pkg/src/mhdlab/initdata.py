"""Initial data: divergence-free ``b0``, time jets and compatibility projection.

Time derivatives of the solution at a fixed instant are obtained with
truncated Taylor arithmetic: every quantity is carried as its stack of time
derivatives ``f_(0), ..., f_(K)`` and products follow the Leibniz rule, so
the recursion never differentiates numerically in time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np

from . import grid as g
from . import tensor as tn
from .errors import ConfigError, ConvergenceError
from .state import Eos, MaterialState, magnetic_field, total_pressure

logger = logging.getLogger(__name__)

MAX_JET_ORDER = 8
MAX_COMPAT_ORDER = 3
TAYLOR_C0 = 0.1


class Jet:
    """Stack of time derivatives ``c[j] = d_t^j f`` at a fixed time."""

    __slots__ = ("c",)

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    @classmethod
    def const(cls, value, order: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + value.shape)
        c[0] = value
        return cls(c)

    @property
    def order(self) -> int:
        return self.c.shape[0] - 1

    def __getitem__(self, idx) -> "Jet":
        return Jet(self.c[:, idx])

    def truncate(self, order: int) -> "Jet":
        return Jet(self.c[: order + 1])

    def _lift(self, other):
        return other if isinstance(other, Jet) else Jet.const(other, self.order)

    def __add__(self, other):
        other = self._lift(other)
        k = min(self.order, other.order)
        return Jet(self.c[: k + 1] + other.c[: k + 1])

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            return Jet(self.c * other[None, ...])
        k = min(self.order, other.order)
        out = []
        for j in range(k + 1):
            acc = 0.0
            for i in range(j + 1):
                acc = acc + comb(j, i) * self.c[i] * other.c[j - i]
            out.append(acc)
        return Jet(np.stack(out))

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet":
        h = [1.0 / self.c[0]]
        for j in range(1, self.order + 1):
            acc = sum(comb(j, i) * self.c[i] * h[j - i] for i in range(1, j + 1))
            h.append(-h[0] * acc)
        return Jet(np.stack(h))

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return Jet(self.c / np.asarray(other, dtype=float)[None, ...])

    def exp(self) -> "Jet":
        h = [np.exp(self.c[0])]
        for j in range(self.order):
            h.append(sum(comb(j, i) * self.c[i + 1] * h[j - i] for i in range(j + 1)))
        return Jet(np.stack(h))

    def d(self, grid: g.Grid, axis: int) -> "Jet":
        return Jet(g.deriv(grid, self.c, axis))


def jsum(items):
    items = list(items)
    out = items[0]
    for it in items[1:]:
        out = out + it
    return out


# --- recipes -----------------------------------------------------------------


@dataclass(frozen=True)
class DataRecipe:
    """Generator parameters for smooth initial data.

    ``beta`` is a uniform background field; ``psi_amp`` scales a vector
    potential whose first two components carry a ``(1 - y3^2)`` factor in
    slab mode (``psi3_only`` keeps only the third one).  The base pressure
    is ``q0 = -|b0|^2/2 + taylor (1 - y3^2)(1 + taylor_mod trig)`` so that
    ``Q0`` vanishes on the boundary with normal slope ``2 taylor``;
    ``q_pert`` adds a perturbation that breaks compatibility.
    """

    name: str = "smooth"
    beta: tuple[float, float, float] = (0.5, 0.0, 0.0)
    psi_amp: float = 0.05
    psi3_only: bool = False
    psi_boundary_factor: bool = True
    v_amp: float = 0.05
    taylor: float = 1.0
    taylor_mod: float = 0.1
    q_pert: float = 0.0
    q_mean: float = 0.0
    modes: int = 2
    rho_bar: float = 1.0
    seed: int = 0
    order: int = 0

    def __post_init__(self):
        if len(self.beta) != 3:
            raise ConfigError("beta must have three components")
        if self.modes < 0 or self.modes > 4:
            raise ConfigError(f"modes must be in 0..4, got {self.modes}")
        if self.order < 0 or self.order > MAX_COMPAT_ORDER:
            raise ConfigError(f"compatibility order must be in 0..{MAX_COMPAT_ORDER}")


STATIC = DataRecipe(name="static", beta=(0.5, 0.0, 0.0), psi_amp=0.0, v_amp=0.0, taylor=0.0,
                    taylor_mod=0.0)
ZERO_FIELD = DataRecipe(name="zero", beta=(0.0, 0.0, 0.0), psi_amp=0.0)


def _trig(grid: g.Grid, rng: np.random.Generator, modes: int) -> np.ndarray:
    Y1, Y2, _ = grid.coords
    acc = np.zeros(grid.shape)
    for k1 in range(-modes, modes + 1):
        for k2 in range(0, modes + 1):
            if k1 == 0 and k2 == 0:
                continue
            amp = rng.normal() / (k1 * k1 + k2 * k2)
            acc += amp * np.cos(2.0 * np.pi * (k1 * Y1 + k2 * Y2) + rng.uniform(0, 2 * np.pi))
    scale = np.abs(acc).max()
    return acc / scale if scale > 0 else acc


def _normal(grid: g.Grid, rng: np.random.Generator) -> np.ndarray:
    Y3 = grid.coords[2]
    ph = rng.uniform(0.0, 2.0 * np.pi)
    if grid.is_slab:
        return np.cos(rng.uniform(0.3, 1.0) * Y3 + ph)
    return np.cos(np.pi * Y3 + ph)


def curl(grid: g.Grid, psi: np.ndarray) -> np.ndarray:
    d = lambda f, l: g.deriv(grid, f, l)  # noqa: E731
    return np.stack([
        d(psi[2], 2) - d(psi[1], 3),
        d(psi[0], 3) - d(psi[2], 1),
        d(psi[1], 1) - d(psi[0], 2),
    ])


def div(grid: g.Grid, X: np.ndarray) -> np.ndarray:
    return sum(g.deriv(grid, X[i], i + 1) for i in range(3))


def vector_potential(recipe: DataRecipe, grid: g.Grid) -> np.ndarray:
    rng = np.random.default_rng(recipe.seed + 1000)
    psi = np.zeros((3,) + grid.shape)
    if recipe.psi_amp == 0.0 or recipe.modes == 0:
        return psi
    Y3 = grid.coords[2]
    psi[2] = recipe.psi_amp * _trig(grid, rng, recipe.modes) * _normal(grid, rng)
    if not recipe.psi3_only:
        for i in (0, 1):
            comp = recipe.psi_amp * _trig(grid, rng, recipe.modes) * _normal(grid, rng)
            if grid.is_slab and recipe.psi_boundary_factor:
                comp = comp * (1.0 - Y3) * (1.0 + Y3)
                comp[..., 0] = comp[..., -1] = 0.0
            psi[i] = comp
    return psi


def make_b0(recipe: DataRecipe, grid: g.Grid, psi: np.ndarray | None = None) -> np.ndarray:
    """``b0 = beta + curl psi``; divergence-free and tangent to the boundary.

    Recipes whose normal component does not vanish on the boundary planes
    (slab mode) are rejected.
    """
    if psi is None:
        psi = vector_potential(recipe, grid)
    if grid.is_slab:
        if recipe.beta[2] != 0.0:
            raise ConfigError("a uniform normal field violates b0^3 = 0 on the boundary")
        if np.any(psi[0][..., (0, -1)] != 0.0) or np.any(psi[1][..., (0, -1)] != 0.0):
            raise ConfigError("tangential vector potential must vanish on the boundary")
    b0 = curl(grid, psi)
    for i in range(3):
        b0[i] += recipe.beta[i]
    if grid.is_slab:
        b0[2][..., 0] = 0.0 * b0[2][..., 0]  # already exact; keeps -0.0 out of traces
        b0[2][..., -1] = 0.0 * b0[2][..., -1]
    return b0


def recipe_state(recipe: DataRecipe, grid: g.Grid) -> MaterialState:
    """Raw (uncorrected) ``t = 0`` state described by a recipe."""
    eos = Eos(recipe.rho_bar)
    b0 = make_b0(recipe, grid)
    rng = np.random.default_rng(recipe.seed)
    Y1, Y2, Y3 = grid.coords
    v = np.zeros((3,) + grid.shape)
    if recipe.v_amp != 0.0 and recipe.modes > 0:
        for i in range(3):
            v[i] = recipe.v_amp * _trig(grid, rng, recipe.modes) * _normal(grid, rng)
    if grid.is_slab:
        profile = (1.0 - Y3) * (1.0 + Y3)
    else:
        profile = np.cos(0.5 * np.pi * Y3) ** 2
    mod = 1.0
    if recipe.taylor_mod != 0.0 and recipe.modes > 0:
        mod = 1.0 + recipe.taylor_mod * _trig(grid, rng, recipe.modes)
    q = -0.5 * np.sum(b0 * b0, axis=0) + recipe.q_mean + recipe.taylor * profile * mod
    if recipe.q_pert != 0.0 and recipe.modes > 0:
        q = q + recipe.q_pert * _trig(grid, rng, recipe.modes) * _normal(grid, rng)
    return MaterialState(0.0, tn.FlowMap.identity(grid), v, q, b0, eos.density(q), eos)


# --- time jets ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JetAtZero:
    """Time-derivative stacks ``f_(j)``, ``j = 0..order``, at one instant.

    ``eta[0]`` is the flow map itself; ``eta[j] = v[j-1]`` for ``j >= 1``.
    ``b`` is the jet of ``J^{-1}(b0 . d) eta``.
    """

    eta: list
    v: list[np.ndarray]
    q: list[np.ndarray]
    Q: list[np.ndarray]
    b: list[np.ndarray]
    t: float = 0.0

    @property
    def order(self) -> int:
        return len(self.v) - 1


def _grad_eta_jet(grid: g.Grid, eta0, v_stack: list[np.ndarray], order: int) -> list[list[Jet]]:
    """``[i][l]`` jets of ``d_l eta_i`` up to ``order``."""
    out = []
    for l in (1, 2, 3):
        col = [tn.eta_deriv(grid, eta0, l)] + [g.deriv(grid, v_stack[j], l) for j in range(order)]
        out.append(Jet(np.stack(col)))
    return [[out[l][i] for l in range(3)] for i in range(3)]


def _cross(a: list[Jet], b: list[Jet]) -> list[Jet]:
    return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]


def jet_fields(grid: g.Grid, state: MaterialState, v_stack, q_stack, order: int) -> dict:
    """Evaluate the system in Taylor arithmetic truncated at ``order``.

    ``v_stack``/``q_stack`` must hold at least ``order + 1`` entries; the
    flow-map jet is ``(eta, v_(0), ..., v_(order-1))``.
    """
    ge = _grad_eta_jet(grid, state.eta, v_stack, order)
    cols = [[ge[i][l] for i in range(3)] for l in range(3)]  # cols[l][i] = d_l eta_i
    ahat = [_cross(cols[1], cols[2]), _cross(cols[2], cols[0]), _cross(cols[0], cols[1])]
    J = jsum(cols[0][i] * ahat[0][i] for i in range(3))
    Jinv = J.reciprocal()
    A = [[ahat[l][i] * Jinv for i in range(3)] for l in range(3)]
    v = Jet(np.stack(v_stack[: order + 1]))
    q = Jet(np.stack(q_stack[: order + 1]))
    R = q.exp() * state.eos.rho_bar
    Rprime = R  # log law: R'(q) = R
    b0 = state.b0
    b = [Jinv * jsum(cols[l][i] * b0[l] for l in range(3)) for i in range(3)]
    Q = q + 0.5 * jsum(bi * bi for bi in b)
    Rinv = R.reciprocal()
    dv = []
    for i in range(3):
        tension = Jinv * jsum(b[i].d(grid, l + 1) * b0[l] for l in range(3))
        gradQ = jsum(A[l][i] * Q.d(grid, l + 1) for l in range(3))
        dv.append((tension - gradQ) * Rinv)
    divv = jsum(A[l][i] * v[i].d(grid, l + 1) for l in range(3) for i in range(3))
    dq = -(divv * (J * Rprime).reciprocal()) * state.rho0
    return {"J": J, "A": A, "b": b, "Q": Q, "dv": dv, "dq": dq, "R": R}


def time_jet(grid: g.Grid, state: MaterialState, order: int) -> JetAtZero:
    """Exact time-derivative stacks of the semi-discrete system at ``state.t``."""
    if order < 0 or order > MAX_JET_ORDER:
        raise ConfigError(f"jet order must be in 0..{MAX_JET_ORDER}, got {order}")
    v_stack = [state.v]
    q_stack = [state.q]
    for j in range(order):
        f = jet_fields(grid, state, v_stack, q_stack, j)
        v_stack.append(np.stack([f["dv"][i].c[j] for i in range(3)]))
        q_stack.append(f["dq"].c[j])
    f = jet_fields(grid, state, v_stack, q_stack, order)
    Q = [f["Q"].c[j] for j in range(order + 1)]
    b = [np.stack([f["b"][i].c[j] for i in range(3)]) for j in range(order + 1)]
    eta = [state.eta] + v_stack[:order]
    return JetAtZero(eta=eta, v=v_stack, q=q_stack, Q=Q, b=b, t=state.t)


def state_at_zero(grid: g.Grid, v0, b0, Q0, rho0, eos: Eos | None = None) -> MaterialState:
    """``t = 0`` state from ``(v0, b0, Q0, rho0)``; there ``eta = Id`` and ``b = b0``."""
    eos = eos or Eos()
    q0 = Q0 - 0.5 * np.sum(b0 * b0, axis=0)
    return MaterialState(0.0, tn.FlowMap.identity(grid), v0, q0, b0, rho0, eos)


def jet_recursion(v0, b0, Q0, rho0, k: int, grid: g.Grid, eos: Eos | None = None) -> JetAtZero:
    """Time jet at ``t = 0`` from ``(v0, b0, Q0, rho0)``."""
    return time_jet(grid, state_at_zero(grid, v0, b0, Q0, rho0, eos), k)


def compatibility_residuals(grid: g.Grid, jet: JetAtZero) -> list[float]:
    """``|Q_(j)|_{L^2(Gamma)}`` for ``j = 0..order``."""
    return [g.boundary_l2_norm(grid, Qj) for Qj in jet.Q]


# --- compatibility projection ------------------------------------------------


def _profile(grid: g.Grid, j: int, plane: int, decay: int = 6) -> np.ndarray:
    """Smooth ``y3`` profile with discrete normal derivatives ``D^m c (plane) = delta_mj``.

    Built from ``(y3 - s)^m w(y3)``, ``m <= 3``, with ``w`` vanishing to order
    ``decay`` at the opposite plane, then recombined so that the grid operator
    (not just the continuum one) sees a unit ``j``-th derivative.
    """
    y3 = grid.y3
    s = 1.0 if plane == 1 else -1.0
    node = -1 if plane == 1 else 0
    cut = ((1.0 + s * y3) / 2.0) ** decay
    basis = np.stack([(y3 - s) ** m * cut for m in range(MAX_COMPAT_ORDER + 1)])
    moments = np.stack([g.d_nor(grid, basis, order=k)[:, node] if k else basis[:, node]
                        for k in range(MAX_COMPAT_ORDER + 1)])
    coef = np.linalg.solve(moments, np.eye(MAX_COMPAT_ORDER + 1)[:, j])
    return coef @ basis


def _planes(arr: np.ndarray) -> np.ndarray:
    return np.stack([arr[..., 0], arr[..., -1]])


# which field each compatibility order is corrected through
_TARGET = {0: "q", 1: "v3", 2: "q", 3: "v3"}


def _apply(state: MaterialState, grid: g.Grid, j: int, phi: np.ndarray) -> MaterialState:
    """Add ``sum_planes profile_j(y3) phi_plane(y1, y2)`` to the field controlling ``Q_(j)``."""
    corr = (_profile(grid, j, -1)[None, None, :] * phi[0][..., None]
            + _profile(grid, j, 1)[None, None, :] * phi[1][..., None])
    return _with_correction(state, _TARGET[j], corr)


def _with_correction(state: MaterialState, target: str, corr: np.ndarray) -> MaterialState:
    if target == "q":
        q = state.q + corr
        return replace(state, q=q, rho0=state.eos.density(q))
    v = state.v.copy()
    v[2] = v[2] + corr
    return replace(state, v=v)


def _boundary_Q(grid: g.Grid, state: MaterialState, order: int) -> np.ndarray:
    """``Q_(j)`` on both planes, shape ``(order + 1, 2, n1, n2)``."""
    jet = time_jet(grid, state, order)
    return np.stack([_planes(Qj) for Qj in jet.Q])


def _taylor_planes(grid: g.Grid, state: MaterialState) -> np.ndarray:
    snap = tn.geometry(grid, state.eta, floor=None)
    Q = total_pressure(grid, state, snap)
    dQ = g.d_nor(grid, Q)
    return np.stack([dQ[..., 0], -dQ[..., -1]])  # -N_3 d_3 Q with N_3 = -1, +1


def project_compatible(recipe: DataRecipe, grid: g.Grid, order: int | None = None,
                       tol: float = 1e-10, max_sweeps: int = 40, c0: float = TAYLOR_C0,
                       state: MaterialState | None = None) -> MaterialState:
    """Correct a recipe's data until ``|Q_(j)|_{L^2(Gamma)} <= tol`` for ``j <= order``.

    Corrections are separable, ``c_j(y3) phi_j(y1, y2)``: ``Q_(0)`` and
    ``Q_(2)`` are steered through the boundary value and second normal
    derivative of ``q0``, ``Q_(1)`` and ``Q_(3)`` through the first and
    third normal derivatives of ``v0^3``.  Each update is a Newton step with
    the nodewise response to a uniform unit correction as the Jacobian
    diagonal.  The Taylor sign ``-dQ0/dN >= c0`` is restored with a
    zero-value slope profile added to ``q0``.  The density is kept
    compatible, ``rho0 = R(q0)``.
    """
    if not grid.is_slab:
        raise ConfigError("compatibility conditions live on the slab boundary")
    order = recipe.order if order is None else order
    if order < 0 or order > MAX_COMPAT_ORDER:
        raise ConfigError(f"supported compatibility order is 0..{MAX_COMPAT_ORDER}")
    if state is None:
        state = recipe_state(recipe, grid)
    area = np.sqrt(grid.h1 * grid.h2)
    probe = 1e-4
    history = []
    slopes: dict[int, np.ndarray] = {}
    for sweep in range(max_sweeps):
        # Gauss-Seidel over the orders; each Q_(j) depends nodewise on its own
        # amplitude (tangential derivatives of a profile vanish on its plane)
        for j in range(order + 1):
            for _ in range(8):
                res = _boundary_Q(grid, state, j)[j]
                if area * np.sqrt(np.sum(res**2)) <= 0.01 * tol:
                    break
                if j not in slopes:
                    # chord iteration: the response is reused across sweeps
                    bumped = _apply(state, grid, j, np.full(res.shape, probe))
                    slopes[j] = (_boundary_Q(grid, bumped, j)[j] - res) / probe
                    if np.any(np.abs(slopes[j]) < 1e-10):
                        raise ConvergenceError(f"degenerate response for compatibility order {j}")
                state = _apply(state, grid, j, -res / slopes[j])
        res = _boundary_Q(grid, state, order)
        worst = float(max(area * np.sqrt(np.sum(r**2)) for r in res))
        sign = _taylor_planes(grid, state)
        deficit = np.maximum(1.05 * c0 - sign, 0.0)
        if np.any(deficit > 0.0):
            # profile_1 has unit d3 on its plane; -N3 d3 Q grows by -N3 * amplitude
            corr = (_profile(grid, 1, -1)[None, None, :] * deficit[0][..., None]
                    - _profile(grid, 1, 1)[None, None, :] * deficit[1][..., None])
            state = _with_correction(state, "q", corr)
            worst = np.inf
        history.append(worst)
        logger.debug("compatibility sweep %d: worst residual %.3e", sweep, worst)
        if worst <= tol:
            final = compatibility_residuals(grid, time_jet(grid, state, order))
            if max(final) <= tol:
                return state
    raise ConvergenceError(
        f"compatibility projection did not converge in {max_sweeps} sweeps (history {history[-3:]})"
    )
