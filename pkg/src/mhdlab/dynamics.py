"""Right-hand side of the Lagrangian MHD system and explicit RK4 stepping."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from . import grid as g
from . import tensor as tn
from .errors import CFLError, MhdLabError, NonFiniteError
from .state import MaterialState, magnetic_field, total_pressure

logger = logging.getLogger(__name__)

CFL_DEFAULT = 0.25


@dataclass(frozen=True, eq=False)
class RhsBundle:
    d_eta: np.ndarray
    d_v: np.ndarray
    d_q: np.ndarray
    d_b: np.ndarray | None = None


def rhs(grid: g.Grid, state: MaterialState, floor: float | None = tn.JACOBIAN_FLOOR,
        snap: tn.GeometrySnapshot | None = None) -> RhsBundle:
    """Time derivatives of ``(eta, v, q)`` (and of ``b_aux`` when present).

    ``d_v = R^{-1} [J^{-1} (b0.d) b - nabla_A Q]`` with ``b = J^{-1}(b0.d) eta``
    and ``d_q = -rho0 / (J R'(q)) div_A v``.
    """
    if snap is None:
        snap = tn.geometry(grid, state.eta, floor=floor)
    R = state.eos.density(state.q)
    b = magnetic_field(grid, state, snap)
    Q = total_pressure(grid, state, snap, b)
    tension = tn.directional(grid, state.b0, b) / snap.J
    d_v = (tension - tn.cov_grad(grid, snap.A, Q)) / R
    d_q = -state.rho0 / (snap.J * state.eos.density_derivative(state.q)) * tn.cov_div(grid, snap.A, state.v)
    d_b = None
    if state.b_aux is not None:
        d_b = rhs_induction(grid, state.b_aux, state.v, snap)
    for name, arr in (("d_v", d_v), ("d_q", d_q)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite {name} at t={state.t}")
    return RhsBundle(state.v, d_v, d_q, d_b)


def rhs_induction(grid: g.Grid, b: np.ndarray, v: np.ndarray, snap: tn.GeometrySnapshot) -> np.ndarray:
    """``(b . nabla_A) v - b div_A v``."""
    b_lag = np.einsum("i...,li...->l...", b, snap.A)  # b_i A^{li}
    return tn.directional(grid, b_lag, v) - b * tn.cov_div(grid, snap.A, v)


def wave_speed(grid: g.Grid, state: MaterialState, snap: tn.GeometrySnapshot | None = None) -> float:
    """``max(|v| + sqrt(c_s^2 + v_A^2))`` with ``c_s^2 = q'(R)``, ``v_A = |b| / sqrt(R)``."""
    if snap is None:
        snap = tn.geometry(grid, state.eta, floor=None)
    R = state.eos.density(state.q)
    b = magnetic_field(grid, state, snap)
    fast = np.sqrt(state.eos.sound_speed_sq(R) + np.sum(b * b, axis=0) / R)
    return float(np.max(np.sqrt(np.sum(state.v**2, axis=0)) + fast))


def max_stable_dt(grid: g.Grid, state: MaterialState, cfl: float = CFL_DEFAULT) -> float:
    return cfl * grid.h_min / wave_speed(grid, state)


def dealias(grid: g.Grid, f: np.ndarray) -> np.ndarray:
    """Two-thirds-rule low-pass in both tangential directions."""
    out = f
    for axis, n in ((1, grid.n1), (2, grid.n2)):
        ax = out.ndim - 3 + axis - 1
        fh = np.fft.rfft(out, axis=ax)
        kmax = n // 3
        shape = [1] * fh.ndim
        shape[ax] = -1
        mask = (np.arange(fh.shape[ax]) <= kmax).reshape(shape)
        out = np.fft.irfft(fh * mask, n=n, axis=ax)
    return out


def _advance(state: MaterialState, dt: float, k: RhsBundle) -> MaterialState:
    b_aux = None if state.b_aux is None else state.b_aux + dt * k.d_b
    return state.replace(
        t=state.t + dt,
        eta=state.eta.shifted(dt * k.d_eta),
        v=state.v + dt * k.d_v,
        q=state.q + dt * k.d_q,
        b_aux=b_aux,
    )


def rk4_step(grid: g.Grid, state: MaterialState, dt: float, cfl: float | None = CFL_DEFAULT,
             floor: float | None = tn.JACOBIAN_FLOOR, filtered: bool = False) -> MaterialState:
    """One classical RK4 step; ``b0`` and ``rho0`` are carried unchanged."""
    if not dt > 0.0:
        raise CFLError(f"time step must be positive, got {dt}")
    if cfl is not None:
        limit = max_stable_dt(grid, state, cfl)
        if dt > limit * (1.0 + 1e-12):
            raise CFLError(f"dt={dt:.4g} exceeds CFL limit {limit:.4g}")
    k1 = rhs(grid, state, floor)
    k2 = rhs(grid, _advance(state, 0.5 * dt, k1), floor)
    k3 = rhs(grid, _advance(state, 0.5 * dt, k2), floor)
    k4 = rhs(grid, _advance(state, dt, k3), floor)

    def comb(a, b, c, d):
        return (a + 2.0 * b + 2.0 * c + d) / 6.0

    avg = RhsBundle(
        comb(k1.d_eta, k2.d_eta, k3.d_eta, k4.d_eta),
        comb(k1.d_v, k2.d_v, k3.d_v, k4.d_v),
        comb(k1.d_q, k2.d_q, k3.d_q, k4.d_q),
        None if state.b_aux is None else comb(k1.d_b, k2.d_b, k3.d_b, k4.d_b),
    )
    new = _advance(state, dt, avg)
    if filtered:
        new = new.replace(eta=new.eta.__class__(dealias(grid, new.eta.disp), new.eta.lin),
                          v=dealias(grid, new.v), q=dealias(grid, new.q))
    return new


Hook = Callable[[int, MaterialState], object]


def evolve(grid: g.Grid, state: MaterialState, t_end: float, dt: float,
           hooks: Sequence[Hook] = (), coevolve_b: bool = False, cfl: float | None = CFL_DEFAULT,
           floor: float | None = tn.JACOBIAN_FLOOR, filtered: bool = False):
    """Step from ``state.t`` to ``t_end``; returns ``(final_state, hook_outputs)``.

    Hooks are called after every step (and once for the initial state) as
    ``hook(step, state)``; their outputs are collected per step.  If a step
    fails, the outputs gathered so far are attached to the exception as
    ``exc.records`` before it propagates.
    """
    if coevolve_b and state.b_aux is None:
        snap = tn.geometry(grid, state.eta, floor=floor)
        state = state.replace(b_aux=magnetic_field(grid, state, snap))
    records: list[list[object]] = []

    def run_hooks(step, st):
        records.append([h(step, st) for h in hooks])

    run_hooks(0, state)
    span = t_end - state.t
    nsteps = int(np.ceil(span / dt - 1e-9)) if span > 0 else 0
    step = 0
    try:
        for step in range(1, nsteps + 1):
            h = min(dt, t_end - state.t) if step == nsteps else dt
            state = rk4_step(grid, state, h, cfl=cfl, floor=floor, filtered=filtered)
            run_hooks(step, state)
    except MhdLabError as exc:
        logger.error("evolution aborted at step %d (t=%.6g): %s", step, state.t, exc)
        exc.records = records
        raise
    return state, records
