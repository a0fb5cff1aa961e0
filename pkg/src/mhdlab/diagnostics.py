"""Per-step monitors, time-series output and convergence-slope fitting."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import grid as g
from . import norms as nm
from . import tensor as tn
from .errors import ConfigError, PersistenceError
from .state import MaterialState, magnetic_field, total_pressure

logger = logging.getLogger(__name__)

J_SMALLNESS = 0.25


class EnergyBreakdown(NamedTuple):
    kinetic: float
    magnetic: float
    internal: float
    total: float


def physical_energy(grid: g.Grid, state: MaterialState,
                    snap: tn.GeometrySnapshot | None = None) -> EnergyBreakdown:
    """``1/2 int rho0 |v|^2 + 1/2 int J |b|^2 + int rho0 Qint(R)`` over the reference domain."""
    if snap is None:
        snap = tn.geometry(grid, state.eta, floor=None)
    b = magnetic_field(grid, state, snap)
    R = state.eos.density(state.q)
    kin = 0.5 * g.integrate(grid, state.rho0 * np.sum(state.v**2, axis=0))
    mag = 0.5 * g.integrate(grid, snap.J * np.sum(b * b, axis=0))
    internal = g.integrate(grid, state.rho0 * state.eos.internal_energy(R))
    return EnergyBreakdown(kin, mag, internal, kin + mag + internal)


def taylor_sign_of(grid: g.Grid, Q: np.ndarray) -> float:
    """``min over Gamma of -N3 d3 Q`` with ``N3 = -1`` at ``y3 = -1`` and ``+1`` at ``y3 = 1``."""
    if not grid.is_slab:
        raise ConfigError("the Taylor sign needs the slab boundary")
    dQ = g.d_nor(grid, Q)  # one-sided closures at the end nodes
    return float(min(dQ[..., 0].min(), (-dQ[..., -1]).min()))


def taylor_sign(grid: g.Grid, state: MaterialState, snap: tn.GeometrySnapshot | None = None) -> float:
    if snap is None:
        snap = tn.geometry(grid, state.eta, floor=None)
    return taylor_sign_of(grid, total_pressure(grid, state, snap))


def normal_flux_residual(grid: g.Grid, state: MaterialState, snap: tn.GeometrySnapshot) -> float:
    """``|b_i Ahat^{3i}|_{L^2(Gamma)}``; equals ``|b0^3|`` on the boundary."""
    b = magnetic_field(grid, state, snap)
    return g.boundary_l2_norm(grid, np.einsum("i...,i...->...", b, snap.Ahat[2]))


def div_b0(grid: g.Grid, b0: np.ndarray) -> np.ndarray:
    return sum(g.deriv(grid, b0[i], i + 1) for i in range(3))


@dataclass(frozen=True)
class AprioriFlags:
    j_drift: float
    j_norm: float
    taylor_sign_min: float | None
    j_ok: bool
    taylor_ok: bool

    @property
    def ok(self) -> bool:
        return self.j_ok and self.taylor_ok


def apriori_monitor(grid: g.Grid, state: MaterialState, snap: tn.GeometrySnapshot | None = None,
                    c0: float = 0.1, m_chk: int = 2) -> AprioriFlags:
    """Smallness of ``J - 1`` (max and ``H^{m_chk}_*``) and the sign ``-dQ/dN >= 3 c0 / 4``."""
    if snap is None:
        snap = tn.geometry(grid, state.eta, floor=None)
    dj = snap.J - 1.0
    j_max = float(np.abs(dj).max())
    j_norm = nm.aniso_norm(nm.TimeDerivativeStack(grid, [dj]), m_chk)
    ts = taylor_sign(grid, state, snap) if grid.is_slab else None
    return AprioriFlags(j_max, j_norm, ts, j_max <= J_SMALLNESS and j_norm <= J_SMALLNESS,
                        ts is None or ts >= 0.75 * c0)


@dataclass(frozen=True)
class DiagnosticsRecord:
    step: int
    t: float
    E_kin: float
    E_mag: float
    E_int: float
    E_total: float
    div_b0_residual: float
    J_drift: float
    rho0_RJ_residual: float
    normal_flux: float | None = None
    q_boundary_drift: float | None = None
    taylor_sign_min: float | None = None
    frozen_field_residual: float | None = None
    energy_functional: float | None = None

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return ["" if v is None else repr(float(v)) if isinstance(v, float) else v
                for v in asdict(self).values()]


def diagnose(grid: g.Grid, state: MaterialState, step: int = 0, energy_order: int | None = None,
             floor: float | None = None) -> DiagnosticsRecord:
    """Evaluate every monitor on one state."""
    snap = tn.geometry(grid, state.eta, floor=floor)
    en = physical_energy(grid, state, snap)
    b = magnetic_field(grid, state, snap)
    Q = total_pressure(grid, state, snap, b)
    extra = {}
    if grid.is_slab:
        extra["normal_flux"] = g.boundary_l2_norm(grid, np.einsum("i...,i...->...", b, snap.Ahat[2]))
        extra["q_boundary_drift"] = g.boundary_l2_norm(grid, Q)
        extra["taylor_sign_min"] = taylor_sign_of(grid, Q)
    if state.b_aux is not None:
        extra["frozen_field_residual"] = g.l2_norm(grid, state.b_aux - b)
    if energy_order is not None:
        from .initdata import time_jet

        jet = time_jet(grid, state, energy_order)
        extra["energy_functional"] = nm.energy_functional(nm.stacks_from_jet(grid, jet), energy_order,
                                                          A=snap.A).total
    return DiagnosticsRecord(
        step=step, t=float(state.t), E_kin=en.kinetic, E_mag=en.magnetic, E_int=en.internal,
        E_total=en.total,
        div_b0_residual=float(np.abs(div_b0(grid, state.b0)).max()),
        J_drift=float(np.abs(snap.J - 1.0).max()),
        rho0_RJ_residual=float(np.abs(state.eos.density(state.q) * snap.J - state.rho0).max()),
        **extra,
    )


def first_violation(records, key: str, predicate) -> int | None:
    """Step of the first record whose ``key`` fails ``predicate`` (``None`` if never)."""
    for rec in records:
        value = getattr(rec, key)
        if value is not None and not predicate(value):
            return rec.step
    return None


class SeriesWriter:
    """Append-only CSV time series; the first line carries the config hash."""

    def __init__(self, path, config_hash: str, columns: list[str] | None = None):
        self.path = Path(path)
        self.columns = columns or DiagnosticsRecord.columns()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("w", newline="")
        except OSError as exc:
            raise PersistenceError(f"cannot open series file {self.path}: {exc}") from exc
        self._fh.write(f"# config_hash={config_hash}\n")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.columns)
        self._fh.flush()
        self.rows = 0

    def append(self, record: DiagnosticsRecord) -> None:
        try:
            self._writer.writerow(record.row())
            self._fh.flush()
        except (OSError, ValueError) as exc:
            raise PersistenceError(f"cannot append to {self.path}: {exc}") from exc
        self.rows += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_series(path) -> tuple[str, list[dict[str, float | None]]]:
    """Inverse of :class:`SeriesWriter`: ``(config_hash, rows)``."""
    path = Path(path)
    try:
        with path.open() as fh:
            first = fh.readline().strip()
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise PersistenceError(f"cannot read series {path}: {exc}") from exc
    if not first.startswith("# config_hash="):
        raise PersistenceError(f"{path} has no config hash header")
    parsed = [{k: (float(v) if v not in ("", None) else None) for k, v in r.items()} for r in rows]
    return first.split("=", 1)[1], parsed


def write_json(path, payload: dict, config_hash: str) -> Path:
    path = Path(path)
    body = {"config_hash": config_hash, **payload}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_jsonable))
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    return path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "_asdict"):
        return obj._asdict()
    raise TypeError(f"not serialisable: {type(obj)}")


def summarize(records: list[DiagnosticsRecord]) -> dict:
    """Min/max of every numeric column plus the relative energy drift."""
    out: dict[str, object] = {"steps": len(records)}
    for name in DiagnosticsRecord.columns():
        vals = [getattr(r, name) for r in records if getattr(r, name) is not None]
        if vals:
            out[name] = {"min": float(min(vals)), "max": float(max(vals)), "last": float(vals[-1])}
    if records and records[0].E_total != 0.0:
        e0 = records[0].E_total
        out["energy_drift"] = float(abs(records[-1].E_total - e0) / abs(e0))
    return out


# --- convergence slopes ---------------------------------------------------------


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    status: str  # "ok", "fail" or "floor"
    expected: float
    errors: tuple[float, ...]
    steps: tuple[float, ...]

    @property
    def passed(self) -> bool:
        return self.status in ("ok", "floor")


def fit_slope(steps, errors, expected: float, floor: float = 1e-12) -> SlopeFit:
    """Least-squares slope of ``log(error)`` against ``log(step)``.

    If every error is at or below ``floor`` the study sits on the round-off
    plateau and is reported as ``"floor"`` (a pass).  Levels that reached the
    floor are excluded from the fit when at least two levels remain above it.
    """
    steps = np.asarray(steps, dtype=float)
    errors = np.abs(np.asarray(errors, dtype=float))
    if len(steps) < 3 or len(steps) != len(errors):
        raise ConfigError("a convergence study needs at least three matched levels")
    if np.all(errors <= floor):
        return SlopeFit(float("nan"), "floor", expected, tuple(errors), tuple(steps))
    keep = errors > floor
    if keep.sum() < 2:
        return SlopeFit(float("nan"), "floor", expected, tuple(errors), tuple(steps))
    slope = float(np.polyfit(np.log(steps[keep]), np.log(errors[keep]), 1)[0])
    status = "ok" if slope >= expected else "fail"
    return SlopeFit(slope, status, expected, tuple(errors), tuple(steps))
