"""Verification studies shared by the ``verify``/``converge`` verbs and the test-suite.

Each study builds its own smooth test data from a seed, evaluates an
identity or convergence property, and returns a :class:`Study` with the
measured values and a pass flag.  Thresholds are parameters so callers can
tighten or relax them; the defaults are the documented acceptance levels.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as dg
from . import dynamics as dy
from . import fields as fl
from . import goodunknown as gu
from . import grid as g
from . import initdata as idt
from . import norms as nm
from . import tensor as tn
from .state import magnetic_field, static_equilibrium

logger = logging.getLogger(__name__)


@dataclass
class Study:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    fits: dict[str, dg.SlopeFit] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "metrics": self.metrics,
            "fits": {k: {"slope": f.slope, "status": f.status, "expected": f.expected,
                         "errors": list(f.errors), "steps": list(f.steps)} for k, f in self.fits.items()},
        }


def smooth_displacement(grid: g.Grid, amp: float, seed: int, modes: int = 2,
                        normal: bool = True) -> tn.FlowMap:
    rng = np.random.default_rng(seed)
    return tn.FlowMap(amp * fl.band_limited(grid, rng, modes, 3, normal=normal))


def _corrupt(A: np.ndarray, eps: float) -> np.ndarray:
    return A if eps == 0.0 else A * (1.0 + eps)


# --- geometry ---------------------------------------------------------------------


def piola_study(seed: int = 0, amp: float = 0.05, n_tan: int = 16, levels=(17, 33, 65),
                expected: float = 3.5, tangential_tol: float = 1e-9) -> Study:
    """Normal-refinement order of ``max |d_l Ahat^{li}|`` plus the spectral floor
    for a perturbation without ``y3`` dependence."""
    errs, hs = [], []
    for n3 in levels:
        grid = g.build_grid(n_tan, n_tan, n3)
        snap = tn.geometry(grid, smooth_displacement(grid, amp, seed))
        errs.append(float(np.abs(tn.piola_residual(grid, snap)).max()))
        hs.append(grid.h3)
    fit = dg.fit_slope(hs, errs, expected)
    grid = g.build_grid(16, 16, levels[0])
    snap = tn.geometry(grid, smooth_displacement(grid, amp, seed, normal=False))
    tan = float(np.abs(tn.piola_residual(grid, snap)).max())
    ident = tn.geometry(grid, tn.FlowMap.identity(grid))
    metrics = {"tangential_only": tan, "identity_piola": float(np.abs(tn.piola_residual(grid, ident)).max()),
               "inverse_residual": snap.inverse_residual()}
    ok = fit.passed and tan <= tangential_tol and metrics["identity_piola"] <= 1e-14
    return Study("piola", ok, metrics, {"piola_max": fit})


def variation_study(seed: int = 0, amp: float = 0.05, n_tan: int = 16, levels=(17, 33, 65),
                    expected: float = 3.0) -> Study:
    """``d_l A = -A (d_l d eta) A`` for the normal direction under refinement,
    and at the spectral floor for tangential directions."""
    errs, hs = [], []
    for n3 in levels:
        grid = g.build_grid(n_tan, n_tan, n3)
        eta = smooth_displacement(grid, amp, seed)
        errs.append(g.l2_norm(grid, tn.spatial_variation_residual(grid, eta, 3)))
        hs.append(grid.h3)
    # the inverse is rational in d eta, so the spectral floor needs a finer
    # tangential grid than the polynomial cofactor does
    grid = g.build_grid(32, 32, 9)
    eta = smooth_displacement(grid, 0.01, seed, normal=False)
    tan = max(float(np.abs(tn.spatial_variation_residual(grid, eta, a)).max()) for a in (1, 2))
    fit = dg.fit_slope(hs, errs, expected)
    return Study("variation", fit.passed and tan <= 1e-9, {"tangential": tan}, {"normal_l2": fit})


# --- dynamics ---------------------------------------------------------------------


def _dt_levels(dt0: float, levels: int) -> list[float]:
    return [dt0 / 2**j for j in range(levels)]


def frozen_field_study(n: tuple = (24, 24, 33), t_end: float = 0.05, dt0: float = 0.01,
                       levels: int = 3, cfl: float = 0.5, expected: float = 3.5,
                       recipe: idt.DataRecipe | None = None) -> Study:
    """Co-evolved ``b`` against ``J^{-1}(b0 . d) eta`` under dt-halving."""
    grid = g.build_grid(*n)
    recipe = recipe or idt.DataRecipe(v_amp=0.1, order=1)
    s0 = idt.project_compatible(recipe, grid)
    errs, flux = [], 0.0
    dts = _dt_levels(dt0, levels)
    for dt in dts:
        hook = lambda k, s: dg.normal_flux_residual(grid, s, tn.geometry(grid, s.eta, floor=None))  # noqa: E731
        s, rec = dy.evolve(grid, s0, t_end, dt, hooks=[hook], coevolve_b=True, cfl=cfl)
        flux = max(flux, max(r[0] for r in rec))
        snap = tn.geometry(grid, s.eta)
        errs.append(g.l2_norm(grid, s.b_aux - magnetic_field(grid, s, snap)))
    fit = dg.fit_slope(dts, errs, expected)
    return Study("frozen_field", fit.passed, {"max_normal_flux": flux}, {"b_residual_l2": fit})


def energy_drift_study(n: int = 24, t_end: float = 0.1, dt0: float = 0.01, levels: int = 3,
                       cfl: float = 0.5, expected: float = 3.5, recipe: idt.DataRecipe | None = None
                       ) -> Study:
    """Relative drift of the physical energy in torus mode under dt-halving."""
    grid = g.build_grid(n, n, n, g.TORUS)
    recipe = recipe or idt.DataRecipe(v_amp=0.3, psi_amp=0.05, taylor=0.2)
    s0 = idt.recipe_state(recipe, grid)
    e0 = dg.physical_energy(grid, s0).total
    dts = _dt_levels(dt0, levels)
    drifts = []
    for dt in dts:
        s, _ = dy.evolve(grid, s0, t_end, dt, cfl=cfl)
        drifts.append(abs(dg.physical_energy(grid, s).total - e0) / abs(e0))
    fit = dg.fit_slope(dts, drifts, expected)
    return Study("energy_drift", fit.passed, {"E0": e0}, {"relative_drift": fit})


def jacobian_study(n: tuple = (24, 24, 33), dt0: float = 0.004, levels: int = 3,
                   expected: float = 1.8, recipe: idt.DataRecipe | None = None) -> Study:
    """One-step ``(J(t+dt) - J(t))/dt - (J div_A v)(t + dt/2)``; the midpoint state
    comes from a half RK4 step."""
    grid = g.build_grid(*n)
    recipe = recipe or idt.DataRecipe(v_amp=0.1)
    s0 = idt.recipe_state(recipe, grid)
    J0 = tn.geometry(grid, s0.eta).J
    dts = _dt_levels(dt0, levels)
    errs = []
    for dt in dts:
        full = dy.rk4_step(grid, s0, dt)
        half = dy.rk4_step(grid, s0, 0.5 * dt)
        snap = tn.geometry(grid, half.eta)
        res = (tn.geometry(grid, full.eta).J - J0) / dt - snap.J * tn.cov_div(grid, snap.A, half.v)
        errs.append(g.l2_norm(grid, res))
    fit = dg.fit_slope(dts, errs, expected)
    return Study("jacobian_transport", fit.passed, {}, {"midpoint_l2": fit})


# --- good unknowns ---------------------------------------------------------------------


def _gu_fields(grid: g.Grid, seed: int, amp: float, modes: int):
    rng = np.random.default_rng(seed)
    eta = tn.FlowMap(amp * fl.band_limited(grid, rng, modes, 3))
    v = fl.band_limited(grid, rng, modes, 3)
    Q = fl.band_limited(grid, rng, modes)
    return eta, v, Q


def goodunknown_study(seed: int = 0, corrupt_A: float = 0.0, n_tan: int = 16, levels=(17, 33, 65),
                      first_expected: float = 3.5, second_expected: float = 3.0,
                      tangential_tol: float = 1e-6, floor_tol: float = 1e-5) -> Study:
    """(a) first-order identity, (b) ``d3^2`` decomposition, (c) ``Dbar^8`` decomposition.

    ``corrupt_A`` scales the cofactor-based inverse by ``1 + corrupt_A`` before it
    enters the identities (fault injection).
    """
    first = {1: [], 2: [], 3: []}
    second, hs = [], []
    for n3 in levels:
        grid = g.build_grid(n_tan, n_tan, n3)
        eta, v, Q = _gu_fields(grid, seed, 0.02, 1)
        A = _corrupt(tn.geometry(grid, eta).A, corrupt_A)
        for axis in first:
            first[axis].append(g.l2_norm(grid, gu.first_order_residual(grid, Q, eta, axis, A)))
        second.append(gu.normal_decomposition(2, Q, eta, grid, A).l2)
        hs.append(grid.h3)
    fits = {f"first_order_d{a}": dg.fit_slope(hs, e, first_expected) for a, e in first.items()}
    fits["normal_d3^2"] = dg.fit_slope(hs, second, second_expected)
    finest = max(e[-1] for e in first.values())

    grid = g.build_grid(32, 32, 12, g.TORUS)
    eta, v, Q = _gu_fields(grid, seed, 0.005, 2)
    A = _corrupt(tn.geometry(grid, eta).A, corrupt_A)
    rv, rq = gu.tangential_decomposition(grid, eta, v, Q, k=8, omega=(1.0, 0.0), A=A)
    rv2, rq2 = gu.tangential_decomposition(grid, eta, v, Q, k=8, omega=(0.6, 0.8), A=A)
    tangential = max(r.relative for r in (rv, rq, rv2, rq2))
    metrics = {"first_order_finest_l2": finest, "tangential_k8_relative": tangential,
               "tangential_terms_l2": rv.summary()["terms_l2"]}
    ok = (all(f.passed for f in fits.values()) and finest <= floor_tol
          and tangential <= tangential_tol)
    return Study("goodunknown", ok, metrics, fits)


# --- norms -----------------------------------------------------------------------------


def brute_force_count(m: int, with_time: bool) -> int:
    count = 0
    r = range(m + 1)
    for i0, i1, i2, i3, i4 in itertools.product(r, r, r, r, r):
        if not with_time and i0:
            continue
        if i0 + i1 + i2 + 2 * i3 + i4 <= m:
            count += 1
    return count


def norms_study(seed: int = 0, tol: float = 1e-12) -> Study:
    counts_ok = all(len(nm.enumerate_indices(m, wt)) == brute_force_count(m, wt)
                    for m in range(nm.MAX_ORDER + 1) for wt in (False, True))
    grid = g.build_grid(12, 12, 17)
    rng = np.random.default_rng(seed)
    worst_h, nest_ok = 0.0, True
    for _ in range(5):
        f = fl.band_limited(grid, rng, 2)
        st = nm.TimeDerivativeStack(grid, [f])
        base = [nm.aniso_norm(st, m) for m in range(5)]
        c = rng.uniform(-3.0, 3.0)
        scaled = nm.aniso_norm(st.scaled(c), 3)
        worst_h = max(worst_h, abs(scaled - abs(c) * base[3]) / base[3])
        nest_ok &= all(a <= b * (1.0 + tol) for a, b in zip(base, base[1:]))
    f = fl.band_limited(grid, rng, 2)
    st = nm.TimeDerivativeStack(grid, [f])
    trace = max(float(np.abs(nm.apply_index(idx, st)[grid.boundary_mask]).max())
                for idx in nm.enumerate_indices(4) if idx.i4 > 0)
    metrics = {"counts_match": counts_ok, "homogeneity": worst_h, "nesting": bool(nest_ok),
               "weighted_trace_max": trace}
    ok = counts_ok and worst_h <= tol and nest_ok and trace == 0.0
    return Study("norms", ok, metrics)


# --- initial data --------------------------------------------------------------------


def compatibility_study(n: tuple = (24, 24, 33), order: int = 3, tol: float = 1e-8,
                        recipe: idt.DataRecipe | None = None) -> Study:
    """Projection residuals plus the jet-versus-micro-step check for ``v_(1)``."""
    grid = g.build_grid(*n)
    recipe = recipe or idt.DataRecipe(q_pert=0.01, order=order)
    s0 = idt.project_compatible(recipe, grid, order=order)
    res = idt.compatibility_residuals(grid, idt.time_jet(grid, s0, order))
    jet = idt.time_jet(grid, s0, 1)
    dts = [1e-3, 5e-4, 2.5e-4]
    diffs = []
    for dt in dts:
        s1 = dy.rk4_step(grid, s0, dt)
        diffs.append(float(np.abs((s1.v - s0.v) / dt - jet.v[1]).max()))
    fit = dg.fit_slope(dts, diffs, 0.9)
    metrics = {"residuals": res, "taylor_sign": dg.taylor_sign(grid, s0)}
    ok = max(res) <= tol and fit.passed and metrics["taylor_sign"] >= idt.TAYLOR_C0
    return Study("compatibility", ok, metrics, {"v1_microstep": fit})


def initdata_study(seed: int = 0) -> Study:
    grid = g.build_grid(16, 16, 17)
    b0 = idt.make_b0(idt.DataRecipe(seed=seed), grid)
    div = float(np.abs(dg.div_b0(grid, b0)).max())
    b3 = float(np.abs(b0[2][grid.boundary_mask]).max())
    jet = idt.time_jet(grid, static_equilibrium(grid), 3)
    static = max(float(np.abs(x).max()) for x in jet.v[1:] + jet.q[1:])
    s = idt.recipe_state(idt.DataRecipe(seed=seed), grid)
    k = dy.rhs(grid, s)
    j1 = idt.time_jet(grid, s, 1)
    first = max(float(np.abs(j1.v[1] - k.d_v).max()), float(np.abs(j1.q[1] - k.d_q).max()))
    metrics = {"div_b0": div, "b0_normal_boundary": b3, "static_jets": static, "first_jet_vs_rhs": first}
    ok = div <= 1e-3 and b3 == 0.0 and static == 0.0 and first <= 1e-12
    return Study("initdata", ok, metrics)


# --- monitors ------------------------------------------------------------------------


def constraint_study(n: tuple = (24, 24, 33), eps: float = 1e-3, t_end: float = 0.02) -> Study:
    """Normal-flux residual over a run, and detection of an injected boundary offset."""
    grid = g.build_grid(*n)
    s0 = idt.project_compatible(idt.DataRecipe(v_amp=0.1, order=0), grid)
    dt = 0.5 * dy.max_stable_dt(grid, s0)
    hook = lambda k, s: dg.normal_flux_residual(grid, s, tn.geometry(grid, s.eta, floor=None))  # noqa: E731
    _, rec = dy.evolve(grid, s0, t_end, dt, hooks=[hook])
    flux = max(r[0] for r in rec)
    bad = idt.recipe_state(idt.DataRecipe(v_amp=0.1, q_mean=eps), grid)
    measured = idt.compatibility_residuals(grid, idt.time_jet(grid, bad, 0))[0]
    expected = eps * np.sqrt(grid.volume)  # |Gamma| = 2 (two unit planes)
    rel = abs(measured - expected) / expected
    metrics = {"max_normal_flux": flux, "injected": eps, "measured_j0": measured, "expected_j0": expected,
               "relative_error": rel}
    return Study("constraints", flux <= 1e-10 and rel <= 0.01, metrics)


def energy_functional_study(n: tuple = (24, 24, 33), t_end: float = 0.02, order: int = 4,
                            c0: float = idt.TAYLOR_C0, bound: float = 2.0) -> Study:
    """High-order energy along a short compatible slab run (reported heuristic)."""
    grid = g.build_grid(*n)
    s0 = idt.project_compatible(idt.DataRecipe(order=3), grid, c0=c0)
    dt = 0.5 * dy.max_stable_dt(grid, s0)
    hook = lambda k, s: dg.diagnose(grid, s, k, energy_order=order)  # noqa: E731
    _, rec = dy.evolve(grid, s0, t_end, dt, hooks=[hook])
    recs = [r[0] for r in rec]
    e = [r.energy_functional for r in recs]
    ts = [r.taylor_sign_min for r in recs]
    metrics = {"E": e, "t": [r.t for r in recs], "ratio_max": max(e) / e[0], "taylor_min": min(ts)}
    ok = metrics["ratio_max"] <= bound and metrics["taylor_min"] >= c0
    return Study("energy_functional", ok, metrics)


SUITES = {
    "geometry": (piola_study, variation_study),
    "goodunknown": (goodunknown_study,),
    "norms": (norms_study,),
    "initdata": (initdata_study,),
}

# criterion number, label, study; the order matches the acceptance suite
ACCEPTANCE = (
    (1, "piola identity", piola_study),
    (2, "frozen-field formula", frozen_field_study),
    (3, "energy conservation", energy_drift_study),
    (4, "jacobian transport", jacobian_study),
    (5, "good-unknown decompositions", goodunknown_study),
    (6, "anisotropic norms", norms_study),
    (7, "compatibility projection", compatibility_study),
    (8, "constraint monitors", constraint_study),
    (9, "high-order energy boundedness", energy_functional_study),
)
