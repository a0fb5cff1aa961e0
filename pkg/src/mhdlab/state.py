"""Material state, equation of state and derived physical fields."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import grid as g
from . import tensor as tn
from .errors import ConfigError, NonFiniteError, PersistenceError

Q_OVERFLOW = 50.0


@dataclass(frozen=True)
class Eos:
    """Logarithmic law ``q = log(R / rho_bar)``, i.e. ``R(q) = rho_bar e^q``."""

    rho_bar: float = 1.0

    def __post_init__(self):
        if not self.rho_bar > 0.0:
            raise ConfigError(f"rho_bar must be positive, got {self.rho_bar}")

    def density(self, q):
        q = np.asarray(q, dtype=float)
        if np.any(np.abs(q) > Q_OVERFLOW):
            raise NonFiniteError(f"|q| exceeds the overflow guard {Q_OVERFLOW}")
        return self.rho_bar * np.exp(q)

    def density_derivative(self, q):
        """``R'(q)``; equal to ``R`` for this law."""
        return self.density(q)

    def pressure(self, R):
        return np.log(np.asarray(R, dtype=float) / self.rho_bar)

    def sound_speed_sq(self, R):
        """``q'(R) = 1 / R``."""
        return 1.0 / np.asarray(R, dtype=float)

    def internal_energy(self, R):
        """Closed form of ``int_1^R p(s) / s^2 ds`` for the log law."""
        R = np.asarray(R, dtype=float)
        lb = np.log(self.rho_bar)
        return (1.0 - lb) * (1.0 - 1.0 / R) - np.log(R) / R

    def window(self, p_max: float) -> tuple[float, float]:
        """Range of every derivative ``rho^{(m)}(p)`` for ``|p| <= p_max``."""
        return self.rho_bar * np.exp(-p_max), self.rho_bar * np.exp(p_max)

    def effective_A0(self, q) -> float:
        """Smallest ``A0 > 1`` with ``A0^-1 <= R^{(m)}(q) <= A0`` on the sampled ``q``."""
        R = self.density(q)
        return float(max(1.0 + 1e-12, R.max(), 1.0 / R.min()))


@dataclass(frozen=True, eq=False)
class MaterialState:
    """Prognostic fields ``(eta, v, q)`` plus frozen ``b0`` and ``rho0``.

    ``b_aux`` is an optional independently transported magnetic field used
    only to cross-check the frozen-field formula.
    """

    t: float
    eta: tn.FlowMap
    v: np.ndarray
    q: np.ndarray
    b0: np.ndarray
    rho0: np.ndarray
    eos: Eos = field(default_factory=Eos)
    b_aux: np.ndarray | None = None

    def replace(self, **changes) -> "MaterialState":
        return replace(self, **changes)

    def check(self, grid: g.Grid) -> None:
        """Validate shapes, finiteness and the frozen-data constraints."""
        for name, arr, lead in (("v", self.v, (3,)), ("q", self.q, ()), ("b0", self.b0, (3,)),
                                ("rho0", self.rho0, ()), ("eta.disp", self.eta.disp, (3,))):
            if arr.shape != lead + grid.shape:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {lead + grid.shape}")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"{name} has non-finite entries")
        if np.any(self.rho0 <= 0.0):
            raise ConfigError("rho0 must be positive")
        if grid.is_slab and np.any(self.b0[2][grid.boundary_mask] != 0.0):
            raise ConfigError("b0^3 must vanish on the boundary")


def static_equilibrium(grid: g.Grid, beta: float = 0.5, eos: Eos | None = None) -> MaterialState:
    """Uniform tangential field with ``q = -beta^2 / 2`` so that ``Q = 0``."""
    eos = eos or Eos()
    b0 = np.zeros((3,) + grid.shape)
    b0[0] = beta
    q = np.full(grid.shape, -0.5 * beta**2)
    return MaterialState(0.0, tn.FlowMap.identity(grid), np.zeros((3,) + grid.shape), q, b0,
                         eos.density(q), eos)


def eos_density(q, eos: Eos):
    return eos.density(q)


def magnetic_field(grid: g.Grid, state: MaterialState, snap: tn.GeometrySnapshot) -> np.ndarray:
    """Frozen-in field ``b = J^{-1} (b0 . d) eta``."""
    b0 = state.b0
    beta = sum(b0[l - 1] * tn.eta_deriv(grid, state.eta, l) for l in (1, 2, 3))
    return beta / snap.J


def total_pressure(grid: g.Grid, state: MaterialState, snap: tn.GeometrySnapshot,
                   b: np.ndarray | None = None) -> np.ndarray:
    """``Q = q + |b|^2 / 2``."""
    if b is None:
        b = magnetic_field(grid, state, snap)
    return state.q + 0.5 * np.sum(b * b, axis=0)


def density_compatibility_residual(state: MaterialState, snap: tn.GeometrySnapshot) -> np.ndarray:
    """``R(q) J - rho0``; zero for exact solutions."""
    return state.eos.density(state.q) * snap.J - state.rho0


def flux_identity_residual(grid: g.Grid, state: MaterialState, snap: tn.GeometrySnapshot) -> np.ndarray:
    """``b_i Ahat^{li} - b0^l``, which holds nodewise for the frozen-in field."""
    b = magnetic_field(grid, state, snap)
    return np.einsum("i...,li...->l...", b, snap.Ahat) - state.b0


# --- snapshot persistence: <dir>/header.json + one little-endian float64 file per field

_FIELDS = ("eta_disp", "v", "q", "b0", "rho0")


def _field_arrays(state: MaterialState) -> dict[str, np.ndarray]:
    out = {"eta_disp": state.eta.disp, "v": state.v, "q": state.q, "b0": state.b0, "rho0": state.rho0}
    if state.b_aux is not None:
        out["b_aux"] = state.b_aux
    return out


def save_snapshot(path, grid: g.Grid, state: MaterialState, extra: dict | None = None) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        arrays = _field_arrays(state)
        header = {
            "grid": {"n1": grid.n1, "n2": grid.n2, "n3": grid.n3, "mode": grid.mode},
            "t": state.t,
            "eos": {"rho_bar": state.eos.rho_bar},
            "eta_lin": state.eta.lin.tolist(),
            "fields": {k: list(v.shape) for k, v in arrays.items()},
            "dtype": "<f8",
        }
        if extra:
            header.update(extra)
        for name, arr in arrays.items():
            np.ascontiguousarray(arr, dtype="<f8").tofile(path / f"{name}.bin")
        (path / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    except OSError as exc:
        raise PersistenceError(f"cannot write snapshot {path}: {exc}") from exc
    return path


def load_snapshot(path) -> tuple[g.Grid, MaterialState]:
    path = Path(path)
    try:
        header = json.loads((path / "header.json").read_text())
        arrays = {
            name: np.fromfile(path / f"{name}.bin", dtype="<f8").reshape(shape)
            for name, shape in header["fields"].items()
        }
    except (OSError, KeyError, ValueError) as exc:
        raise PersistenceError(f"cannot read snapshot {path}: {exc}") from exc
    gh = header["grid"]
    grid = g.build_grid(gh["n1"], gh["n2"], gh["n3"], gh["mode"])
    state = MaterialState(
        t=float(header["t"]),
        eta=tn.FlowMap(arrays["eta_disp"], np.asarray(header["eta_lin"], dtype=float)),
        v=arrays["v"], q=arrays["q"], b0=arrays["b0"], rho0=arrays["rho0"],
        eos=Eos(header["eos"]["rho_bar"]), b_aux=arrays.get("b_aux"),
    )
    return grid, state
