"""Anisotropic multi-index norms and the high-order energy functional.

A multi-index ``I = (i0, i1, i2, i3, i4)`` counts time derivatives, the two
tangential derivatives, plain normal derivatives and weighted normal
derivatives ``sigma d3``.  Its weight is ``i0 + i1 + i2 + 2 i3 + i4``.  The
composite operator is applied innermost first as

    d_t^i0 (sigma d3)^i4 d1^i1 d2^i2 d3^i3

i.e. plain normal derivatives act first and the weighted ones last, so any
index with ``i4 > 0`` vanishes on the boundary planes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import grid as g
from . import tensor as tn
from .errors import ConfigError

MAX_ORDER = 8
DEFAULT_ENERGY_ORDER = 4


class MultiIndex(NamedTuple):
    i0: int = 0
    i1: int = 0
    i2: int = 0
    i3: int = 0
    i4: int = 0

    @property
    def weight(self) -> int:
        return self.i0 + self.i1 + self.i2 + 2 * self.i3 + self.i4

    @property
    def spatial(self) -> "MultiIndex":
        return self._replace(i0=0)


@lru_cache(maxsize=None)
def _enumerate(m: int, with_time: bool) -> tuple[MultiIndex, ...]:
    r = range(m + 1)
    out = []
    for i0, i1, i2, i3, i4 in itertools.product(r if with_time else (0,), r, r, range(m // 2 + 1), r):
        idx = MultiIndex(i0, i1, i2, i3, i4)
        if idx.weight <= m:
            out.append(idx)
    return tuple(out)


def enumerate_indices(m: int, with_time: bool = False) -> list[MultiIndex]:
    """All indices of weight ``<= m`` in lexicographic order."""
    if not 0 <= m <= MAX_ORDER:
        raise ConfigError(f"norm order must be in 0..{MAX_ORDER}, got {m}")
    return list(_enumerate(m, with_time))


@dataclass(frozen=True, eq=False)
class TimeDerivativeStack:
    """``[f, d_t f, ..., d_t^k f]`` at one time on one grid.

    Entry 0 may be a :class:`~mhdlab.tensor.FlowMap`; the others are arrays
    whose trailing three axes are the grid axes.
    """

    grid: g.Grid
    entries: list = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.entries) - 1

    def __post_init__(self):
        for j, e in enumerate(self.entries):
            arr = e.disp if isinstance(e, tn.FlowMap) else np.asarray(e)
            if arr.shape[-3:] != self.grid.shape:
                raise ConfigError(f"stack entry {j} has shape {arr.shape}, grid is {self.grid.shape}")

    def scaled(self, c: float) -> "TimeDerivativeStack":
        return TimeDerivativeStack(self.grid, [_scale(e, c) for e in self.entries])


def _scale(e, c):
    if isinstance(e, tn.FlowMap):
        return tn.FlowMap(c * e.disp, c * e.lin)
    return c * np.asarray(e)


def _step(grid: g.Grid, f, op: int):
    """One operator: 1, 2, 3 for plain derivatives, 4 for ``sigma d3``."""
    axis = 3 if op == 4 else op
    df = tn.eta_deriv(grid, f, axis)
    return grid.sigma * df if op == 4 else df


def _ops(idx: MultiIndex) -> list[int]:
    return [3] * idx.i3 + [2] * idx.i2 + [1] * idx.i1 + [4] * idx.i4


def _check_depth(idx: MultiIndex, stack: TimeDerivativeStack) -> None:
    if idx.i0 > stack.depth:
        raise ConfigError(f"index {tuple(idx)} needs {idx.i0} time derivatives, stack has {stack.depth}")


def apply_index(idx: MultiIndex, stack: TimeDerivativeStack, grid: g.Grid | None = None) -> np.ndarray:
    """``d_*^I f`` evaluated from the stack."""
    grid = grid or stack.grid
    _check_depth(idx, stack)
    f = stack.entries[idx.i0]
    for op in _ops(idx):
        f = _step(grid, f, op)
    return tn.eta_values(grid, f)


class _Evaluator:
    """Memoised ``apply_index`` sharing operator prefixes across indices."""

    def __init__(self, stack: TimeDerivativeStack):
        self.stack = stack
        self.cache: dict[tuple, object] = {}

    def raw(self, i0: int, ops: tuple[int, ...]):
        key = (i0, ops)
        if key not in self.cache:
            if not ops:
                self.cache[key] = self.stack.entries[i0]
            else:
                self.cache[key] = _step(self.stack.grid, self.raw(i0, ops[:-1]), ops[-1])
        return self.cache[key]

    def __call__(self, idx: MultiIndex) -> np.ndarray:
        _check_depth(idx, self.stack)
        return tn.eta_values(self.stack.grid, self.raw(idx.i0, tuple(_ops(idx))))


def norm_breakdown(stack: TimeDerivativeStack, m: int, with_time: bool = False) -> dict[MultiIndex, float]:
    """Squared ``L^2`` norm of every ``d_*^I f`` with weight ``<= m``."""
    ev = _Evaluator(stack)
    return {idx: g.l2_norm(stack.grid, ev(idx)) ** 2 for idx in enumerate_indices(m, with_time)}


def aniso_norm(stack: TimeDerivativeStack, m: int, with_time: bool = False) -> float:
    """``||f||_{H^m_*}`` (``with_time=False``) or the space-time ``||f||_{m,*}``."""
    return float(np.sqrt(sum(norm_breakdown(stack, m, with_time).values())))


def sobolev_norm(grid: g.Grid, f: np.ndarray, m: int) -> float:
    """Standard ``H^m`` norm: all derivatives ``d1^a d2^b d3^c`` with ``a + b + c <= m``."""
    total = 0.0
    for a, b, c in itertools.product(range(m + 1), repeat=3):
        if a + b + c > m:
            continue
        h = f
        for op in [3] * c + [2] * b + [1] * a:
            h = g.deriv(grid, h, op)
        total += g.l2_norm(grid, h) ** 2
    return float(np.sqrt(total))


def embedding_constant(grid: g.Grid, fields, m: int) -> float:
    """Largest ratio ``||f||_{H^m_*} / ||f||_{H^m}`` over a corpus of fields."""
    ratios = []
    for f in fields:
        den = sobolev_norm(grid, f, m)
        if den > 0.0:
            ratios.append(aniso_norm(TimeDerivativeStack(grid, [f]), m) / den)
    return float(max(ratios))


def boundary_energy(stack: TimeDerivativeStack, A: np.ndarray, idx: MultiIndex,
                    grid: g.Grid | None = None) -> float:
    """``|A^{3i} d_*^I eta_i|^2_{L^2(Gamma)}``; identically 0 when ``i4 > 0``."""
    grid = grid or stack.grid
    if not grid.is_slab:
        raise ConfigError("boundary energy needs the slab boundary")
    d_eta = apply_index(idx, stack, grid)
    contraction = np.einsum("i...,i...->...", A[2], d_eta)
    return g.boundary_l2_norm(grid, contraction) ** 2


@dataclass(frozen=True)
class EnergyReport:
    total: float
    terms: dict[str, float]
    order: int


def energy_functional(stacks: dict[str, TimeDerivativeStack], m: int = DEFAULT_ENERGY_ORDER,
                      A: np.ndarray | None = None) -> EnergyReport:
    """High-order energy: space-time norms of ``eta, v, b, Q`` plus the boundary term.

    ``stacks`` maps ``"eta", "v", "b", "Q"`` to time-derivative stacks of
    depth at least ``m``.  The boundary term sums ``|A^{3i} d_*^I eta_i|^2``
    over space-time indices of weight exactly ``m`` (slab mode only).
    """
    missing = {"eta", "v", "b", "Q"} - set(stacks)
    if missing:
        raise ConfigError(f"energy functional needs stacks for {sorted(missing)}")
    grid = stacks["eta"].grid
    terms = {name: aniso_norm(stacks[name], m, with_time=True) ** 2 for name in ("eta", "v", "b", "Q")}
    bdry = 0.0
    if grid.is_slab:
        if A is None:
            A = tn.geometry(grid, stacks["eta"].entries[0], floor=None).A
        ev = _Evaluator(stacks["eta"])
        for idx in enumerate_indices(m, with_time=True):
            if idx.weight == m and idx.i4 == 0:
                contraction = np.einsum("i...,i...->...", A[2], ev(idx))
                bdry += g.boundary_l2_norm(grid, contraction) ** 2
    terms["boundary"] = bdry
    return EnergyReport(float(sum(terms.values())), terms, m)


def stacks_from_jet(grid: g.Grid, jet) -> dict[str, TimeDerivativeStack]:
    """Wrap the stacks of a time jet for :func:`energy_functional`."""
    return {
        "eta": TimeDerivativeStack(grid, list(jet.eta) + [jet.v[-1]]),
        "v": TimeDerivativeStack(grid, list(jet.v)),
        "b": TimeDerivativeStack(grid, list(jet.b)),
        "Q": TimeDerivativeStack(grid, list(jet.Q)),
    }
