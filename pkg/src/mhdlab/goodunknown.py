"""Alinhac good unknowns and dual evaluation of their commutator identities.

For a derivative ``D`` applied to a covariant gradient, the leading part of
``D(nabla_A f)`` is the covariant gradient of the *good unknown*
``Df - D eta . nabla_A f``; the rest is a list of explicit lower-order terms.
The functions here assemble both sides independently so that the algebra
can be checked numerically:

* a single derivative ``D`` (tangential or normal),
* pure normal powers ``d3^k`` (``k <= 4``),
* pure tangential powers ``Dbar^k`` (``3 <= k <= 8``) with the modified good
  unknowns ``V*`` and ``Q*`` and the seven groups ``C0 .. C6``.

``Dbar`` is a constant-coefficient tangential derivation ``w1 d1 + w2 d2``
so that Leibniz counts are plain binomials.

Index layout: derivative stacks put the derivative index first
(``df[l, c] = d_l f_c``); ``A[l, i] = A^{li}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import grid as g
from . import norms as nm
from . import tensor as tn
from .errors import ConfigError

MAX_NORMAL_POWER = 4
MAX_TANGENTIAL_POWER = 8
MIN_TANGENTIAL_POWER = 3


# --- small operators ------------------------------------------------------------


def _full_symbol(n: int, keep: float) -> np.ndarray:
    """``i k`` on the full FFT layout, zero above ``keep * n / 2``."""
    freq = np.fft.fftfreq(n, d=1.0 / n)
    k = 1j * 2.0 * np.pi * freq
    k[np.abs(freq) > keep * n / 2] = 0.0
    if n % 2 == 0:
        k[n // 2] = 0.0
    return k


def dbar(grid: g.Grid, f: np.ndarray, omega=(1.0, 0.0), n: int = 1,
         keep: float = 1.0) -> np.ndarray:
    """``(w1 d1 + w2 d2)^n f`` through a single spectral multiplier.

    ``keep < 1`` drops modes above that fraction of the Nyquist frequency.
    For ``n`` near 8 the symbol amplifies round-off in the top modes by about
    ``(pi N)^n``; the filter trades that noise for a Leibniz defect in
    products, so it is off by default.
    """
    f = np.asarray(f, dtype=float)
    if n == 0:
        return f.copy()
    symbol = (omega[0] * _full_symbol(grid.n1, keep)[:, None]
              + omega[1] * _full_symbol(grid.n2, keep)[None, :])
    fh = np.fft.fft2(f, axes=(-3, -2))
    return np.fft.ifft2(fh * (symbol**n)[:, :, None], axes=(-3, -2)).real


def _grad(grid: g.Grid, f: np.ndarray) -> np.ndarray:
    """``d_l f`` stacked first: ``out[l, ...] = d_l f[...]``."""
    return np.stack([g.deriv(grid, f, l) for l in (1, 2, 3)])


def _cg(A: np.ndarray, df: np.ndarray) -> np.ndarray:
    """``A^{li} df[l, ...]`` -> ``[i, ...]``."""
    return np.einsum("li...,l...->i...", A, df)


def cov_grad(grid: g.Grid, A: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``nabla_A^i f`` for ``f`` with any number of leading component axes."""
    return _cg(A, _grad(grid, f))


def _eta_dir(grid: g.Grid, eta, omega) -> np.ndarray:
    """First tangential derivative of a flow map along ``omega``."""
    return omega[0] * tn.eta_deriv(grid, eta, 1) + omega[1] * tn.eta_deriv(grid, eta, 2)


def _eta_powers(grid: g.Grid, eta, omega, k: int) -> list[np.ndarray]:
    """``[eta, Dbar eta, ..., Dbar^k eta]`` with the affine part handled exactly."""
    first = _eta_dir(grid, eta, omega)
    out = [tn.eta_values(grid, eta), first]
    for _ in range(2, k + 1):
        out.append(dbar(grid, out[-1], omega))
    return out


def _components(f: np.ndarray, grid: g.Grid) -> np.ndarray:
    """Scalar fields get a unit component axis so every term is ``[i, c]``."""
    return f[None] if f.ndim == 3 else f


# --- standard good unknown and the first-order identity -----------------------------


def good_unknown(idx: nm.MultiIndex, f: np.ndarray, eta, grid: g.Grid,
                 A: np.ndarray | None = None, max_order: int = nm.MAX_ORDER) -> np.ndarray:
    """``d^I f - (d^I eta_p) A^{lp} d_l f`` for a spatial multi-index."""
    if idx.i0:
        raise ConfigError("good unknowns are built for spatial indices only")
    if idx.weight > max_order:
        raise ConfigError(f"index weight {idx.weight} exceeds configured order {max_order}")
    if A is None:
        A = tn.geometry(grid, eta, floor=None).A
    dI_f = nm.apply_index(idx, nm.TimeDerivativeStack(grid, [f]), grid)
    dI_eta = nm.apply_index(idx, nm.TimeDerivativeStack(grid, [eta]), grid)
    return dI_f - np.einsum("p...,p...->...", dI_eta, cov_grad(grid, A, f))


def first_order_residual(grid: g.Grid, f: np.ndarray, eta, axis: int,
                         A: np.ndarray | None = None) -> np.ndarray:
    """``D(nabla_A f) - nabla_A(Df - D eta . nabla_A f) - D eta_r nabla_A(nabla_A^r f)``
    with ``D = d_axis``; vanishes in the continuum."""
    if A is None:
        A = tn.geometry(grid, eta, floor=None).A
    grad_f = cov_grad(grid, A, f)
    d_eta = tn.eta_deriv(grid, eta, axis)
    lhs = g.deriv(grid, grad_f, axis)
    gu = g.deriv(grid, f, axis) - np.einsum("p...,p...->...", d_eta, grad_f)
    hess = cov_grad(grid, A, grad_f)  # [i, r]
    return lhs - cov_grad(grid, A, gu) - np.einsum("r...,ir...->i...", d_eta, hess)


# --- pure normal powers ---------------------------------------------------------------


def _d3(grid: g.Grid, f: np.ndarray, n: int) -> np.ndarray:
    return g.d_nor(grid, f, order=n)


def _eta_normal_powers(grid: g.Grid, eta, k: int) -> list[np.ndarray]:
    first = tn.eta_deriv(grid, eta, 3)
    return [tn.eta_values(grid, eta), first] + [_d3(grid, first, j) for j in range(1, k)]


def commutator_terms(k: int, f: np.ndarray, eta, grid: g.Grid,
                     A: np.ndarray | None = None) -> list[np.ndarray]:
    """Explicit remainder of ``d3^k (nabla_A f)`` beyond ``nabla_A`` of the good unknown.

    Returns ``[d3^k eta_p nabla_A(nabla_A^p f),
    -([d3^{k-1}, A^{lp} A^{mi}] d3 d_m eta_p) d_l f,
    [d3^k, A^{li}, d_l f]]`` as vectors over ``i``.
    """
    if not 1 <= k <= MAX_NORMAL_POWER:
        raise ConfigError(f"normal power must be in 1..{MAX_NORMAL_POWER}, got {k}")
    if A is None:
        A = tn.geometry(grid, eta, floor=None).A
    eta_k = _eta_normal_powers(grid, eta, k)
    df = _grad(grid, f)
    t1 = np.einsum("p...,ip...->i...", eta_k[k], cov_grad(grid, A, cov_grad(grid, A, f)))
    AA = np.einsum("lp...,mi...->lpmi...", A, A)
    dDeta = _grad(grid, eta_k[1])  # [m, p] = d_m d3 eta_p
    prod = np.einsum("lpmi...,mp...->li...", AA, dDeta)
    comm = _d3(grid, prod, k - 1) - np.einsum("lpmi...,mp...->li...", AA, _d3(grid, dDeta, k - 1))
    t2 = -np.einsum("li...,l...->i...", comm, df)
    whole = _d3(grid, np.einsum("li...,l...->i...", A, df), k)
    t3 = (whole - np.einsum("li...,l...->i...", _d3(grid, A, k), df)
          - np.einsum("li...,l...->i...", A, _d3(grid, df, k)))
    return [t1, t2, t3]


@dataclass(frozen=True, eq=False)
class GoodUnknownReport:
    """Both sides of a decomposition identity; the residual is derived on demand."""

    label: str
    field_name: str
    lhs: np.ndarray
    rhs: np.ndarray
    grid: g.Grid
    terms: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def residual(self) -> np.ndarray:
        return self.lhs - self.rhs

    @property
    def l2(self) -> float:
        return g.l2_norm(self.grid, self.residual)

    @property
    def max(self) -> float:
        return float(np.abs(self.residual).max())

    @property
    def relative(self) -> float:
        scale = g.l2_norm(self.grid, self.rhs)
        return self.l2 / scale if scale > 0.0 else self.l2

    def summary(self) -> dict:
        return {"label": self.label, "field": self.field_name, "l2": self.l2, "max": self.max,
                "relative": self.relative,
                "terms_l2": {k: g.l2_norm(self.grid, v) for k, v in self.terms.items()}}


def normal_decomposition(k: int, f: np.ndarray, eta, grid: g.Grid,
                         A: np.ndarray | None = None) -> GoodUnknownReport:
    """``d3^k(nabla_A f) - nabla_A F`` against the sum of :func:`commutator_terms`."""
    if A is None:
        A = tn.geometry(grid, eta, floor=None).A
    eta_k = _eta_normal_powers(grid, eta, k)
    F = _d3(grid, f, k) - np.einsum("p...,p...->...", eta_k[k], cov_grad(grid, A, f))
    lhs = _d3(grid, cov_grad(grid, A, f), k) - cov_grad(grid, A, F)
    terms = commutator_terms(k, f, eta, grid, A)
    names = ("top", "commutator", "triple")
    return GoodUnknownReport(f"d3^{k}", "f", lhs, sum(terms), grid, dict(zip(names, terms)))


# --- pure tangential powers -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _TangentialSetup:
    grid: g.Grid
    k: int
    omega: tuple
    A: np.ndarray
    eta_k: list
    dDeta: np.ndarray  # [m, r] = d_m Dbar eta_r
    AA: np.ndarray

    def D(self, f, n=1):
        return dbar(self.grid, f, self.omega, n)

    def comm(self) -> np.ndarray:
        """``[Dbar^{k-2}, A^{lp} A^{mi}] Dbar d_m eta_p`` -> ``[l, i]``."""
        prod = np.einsum("lpmi...,mp...->li...", self.AA, self.dDeta)
        return self.D(prod, self.k - 2) - np.einsum("lpmi...,mp...->li...", self.AA,
                                                     self.D(self.dDeta, self.k - 2))


def _setup(grid: g.Grid, eta, k: int, omega, A) -> _TangentialSetup:
    if not MIN_TANGENTIAL_POWER <= k <= MAX_TANGENTIAL_POWER:
        raise ConfigError(f"tangential power must be in {MIN_TANGENTIAL_POWER}..{MAX_TANGENTIAL_POWER}")
    if A is None:
        A = tn.geometry(grid, eta, floor=None).A
    eta_k = _eta_powers(grid, eta, omega, k)
    AA = np.einsum("lr...,mi...->lrmi...", A, A)
    return _TangentialSetup(grid, k, tuple(omega), A, eta_k, _grad(grid, eta_k[1]), AA)


def _dot(A, X, df):
    """``X . nabla_A f = X_r A^{lr} df[l, ...]``."""
    return np.einsum("r...,lr...,l...->...", X, A, df)


def _chain(A, X, dY, df):
    """``X . nabla_A Y . nabla_A f = X_r A^{kr} dY[k, p] A^{lp} df[l, ...]``."""
    return np.einsum("r...,kr...,kp...,lp...,l...->...", X, A, dY, A, df)


def modified_good_unknowns(grid: g.Grid, eta, v: np.ndarray, Q: np.ndarray, k: int = 8,
                           omega=(1.0, 0.0), A: np.ndarray | None = None,
                           modifications: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``(V*, Q*)`` for ``Dbar^k``; ``modifications=False`` returns the standard pair."""
    s = _setup(grid, eta, k, omega, A)
    A = s.A
    dv = _grad(grid, v)  # [l, i]
    dQ = _grad(grid, Q)
    ek, ek1 = s.eta_k[k], s.eta_k[k - 1]
    V = s.D(v, k) - _dot(A, ek, dv)
    Qs = s.D(Q, k) - _dot(A, ek, dQ)
    if modifications:
        Dv, DQ = s.D(v), s.D(Q)
        V = (V - k * _dot(A, ek1, _grad(grid, Dv))
             - k * _dot(A, s.D(v, k - 1), s.dDeta)
             + k * _chain(A, ek1, s.dDeta, dv)
             + k * _chain(A, ek1, dv, s.dDeta))
        Qs = Qs - k * _dot(A, ek1, _grad(grid, DQ)) + k * _chain(A, ek1, s.dDeta, dQ)
    return V, Qs


def _shared_terms(s: _TangentialSetup, f: np.ndarray) -> dict[str, np.ndarray]:
    """Groups valid for both ``v`` and ``Q``, as ``[i, c]`` arrays."""
    grid, k, A = s.grid, s.k, s.A
    f = _components(f, grid)
    df = _grad(grid, f)  # [l, c]
    ek, ek1 = s.eta_k[k], s.eta_k[k - 1]
    hess = cov_grad(grid, A, cov_grad(grid, A, f))  # [i, r, c]
    c0 = np.einsum("r...,irc...->ic...", ek, hess)
    for N in range(2, k - 1):
        c0 = c0 - comb(k - 1, N) * np.einsum(
            "lrmi...,mr...,lc...->ic...", s.D(s.AA, N), s.D(s.dDeta, k - 1 - N), df)
        c0 = c0 + comb(k, N) * np.einsum("li...,lc...->ic...", s.D(A, N), s.D(df, k - N))
    for N in range(1, k - 1):
        c0 = c0 - comb(k - 1, N) * np.einsum(
            "lr...,mi...,mr...,lc...->ic...", s.D(A, N), s.D(A, k - 1 - N), s.dDeta, df)
    comm = s.comm()
    dDf = s.D(df)
    X = np.einsum("lp...,lc...->pc...", A, dDf)
    c1 = (k * np.einsum("p...,ipc...->ic...", ek1, cov_grad(grid, A, X))
          - k * np.einsum("li...,lc...->ic...", comm, dDf))
    W = np.einsum("mp...,mr...,lr...,lc...->pc...", A, s.dDeta, A, df)
    c3 = (-np.einsum("p...,ipc...->ic...", ek1, cov_grad(grid, A, W))
          + np.einsum("mi...,lr...,mr...,lc...->ic...", comm, A, s.dDeta, df))
    S = np.einsum("kr...,kp...,lp...,lc...->rc...", A, s.dDeta, A, df)
    c5 = -(k - 1) * np.einsum("r...,irc...->ic...", ek1, cov_grad(grid, A, S))
    return {"C0": c0, "C1": c1, "C3": c3, "C5": c5}


def tangential_terms_v(grid: g.Grid, eta, v: np.ndarray, k: int = 8, omega=(1.0, 0.0),
                       A: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """``C0 .. C6`` for ``f = v_i``, contracted over ``i`` (scalar fields)."""
    s = _setup(grid, eta, k, omega, A)
    A = s.A
    out = {name: np.einsum("ii...->...", t) for name, t in _shared_terms(s, v).items()}
    dv = _grad(grid, v)  # [l, r]
    ek1 = s.eta_k[k - 1]
    Z = np.einsum("mp...,mi...->pi...", A, s.dDeta)
    out["C2"] = k * np.einsum("p...,ipi...->...", s.D(v, k - 1), cov_grad(grid, A, Z))
    U = np.einsum("lp...,lr...,mr...,mi...->pi...", A, dv, A, s.dDeta)
    comm = s.comm()
    out["C4"] = (-np.einsum("p...,ipi...->...", ek1, cov_grad(grid, A, U))
                 + np.einsum("lr...,mi...,mr...,li...->...", comm, A, s.dDeta, dv))
    T = np.einsum("lr...,lp...,kp...,ki...->ri...", A, dv, A, s.dDeta)
    out["C6"] = -(k - 1) * np.einsum("r...,iri...->...", ek1, cov_grad(grid, A, T))
    return out


def tangential_terms_q(grid: g.Grid, eta, Q: np.ndarray, k: int = 8, omega=(1.0, 0.0),
                       A: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """``C0 .. C6`` for ``f = Q`` as vectors over ``i``."""
    s = _setup(grid, eta, k, omega, A)
    A = s.A
    out = {name: t[:, 0] for name, t in _shared_terms(s, Q).items()}
    dQ = _grad(grid, Q)
    DA = s.D(A)
    out["C2"] = k * np.einsum("li...,l...->i...", DA, s.D(dQ, k - 1))
    out["C4"] = -np.einsum("lr...,mi...,mr...,l...->i...", s.D(A, k - 1), A, s.dDeta, dQ)
    out["C6"] = -(k - 1) * np.einsum("lr...,mi...,mr...,l...->i...", A, DA,
                                      _grad(grid, s.eta_k[k - 1]), dQ)
    return dict(sorted(out.items()))


def tangential_decomposition(grid: g.Grid, eta, v: np.ndarray, Q: np.ndarray, k: int = 8,
                             omega=(1.0, 0.0), A: np.ndarray | None = None
                             ) -> tuple[GoodUnknownReport, GoodUnknownReport]:
    """Dual evaluation for ``Dbar^k(div_A v)`` and ``Dbar^k(nabla_A Q)``."""
    s = _setup(grid, eta, k, omega, A)
    A = s.A
    V, Qs = modified_good_unknowns(grid, eta, v, Q, k, omega, A)
    div_v = np.einsum("li...,li...->...", A, _grad(grid, v))
    lhs_v = s.D(div_v, k) - np.einsum("ii...->...", cov_grad(grid, A, V))
    tv = dict(sorted(tangential_terms_v(grid, eta, v, k, omega, A).items()))
    lhs_q = s.D(cov_grad(grid, A, Q), k) - cov_grad(grid, A, Qs)
    tq = tangential_terms_q(grid, eta, Q, k, omega, A)
    label = f"Dbar^{k}"
    return (GoodUnknownReport(label, "v", lhs_v, sum(tv.values()), grid, tv),
            GoodUnknownReport(label, "Q", lhs_q, sum(tq.values()), grid, tq))


# --- boundary reduction relations ----------------------------------------------------------


def boundary_reduction_check(grid: g.Grid, state, snap: tn.GeometrySnapshot | None = None,
                             floor: float | None = None) -> dict[str, float]:
    """``L^2`` residuals of the two relations trading normal for tangential derivatives.

    * ``A^{3i} d3 v_i + (J R'/rho0) d_t q + sum_L A^{Li} d_L v_i``
    * ``Ahat^{3i} d3 Q + sum_L Ahat^{Li} d_L Q + rho0 d_t v^i - (b0 . d) b^i``

    with ``(d_t q, d_t v)`` from the right-hand side.
    """
    from .dynamics import rhs
    from .state import magnetic_field, total_pressure

    if snap is None:
        snap = tn.geometry(grid, state.eta, floor=floor)
    k = rhs(grid, state, floor=floor, snap=snap)
    Rp = state.eos.density_derivative(state.q)
    dv = _grad(grid, state.v)
    res_v = (np.einsum("i...,i...->...", snap.A[2], dv[2])
             + snap.J * Rp / state.rho0 * k.d_q
             + sum(np.einsum("i...,i...->...", snap.A[L], dv[L]) for L in (0, 1)))
    b = magnetic_field(grid, state, snap)
    Q = total_pressure(grid, state, snap, b)
    dQ = _grad(grid, Q)
    res_q = (np.einsum("li...,l...->i...", snap.Ahat, dQ) + state.rho0 * k.d_v
             - tn.directional(grid, state.b0, b))
    return {"vbdry": g.l2_norm(grid, res_v), "qbdry": g.l2_norm(grid, res_q)}
