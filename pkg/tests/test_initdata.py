from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhdlab import diagnostics as dg
from mhdlab import dynamics as dy
from mhdlab import grid as g
from mhdlab import initdata as idt
from mhdlab.diagnostics import fit_slope
from mhdlab.errors import ConfigError
from mhdlab.state import static_equilibrium

coeffs = st.lists(st.floats(-2.0, 2.0), min_size=5, max_size=5)


def taylor_to_jet(a):
    """Polynomial coefficients ``a_j`` -> derivative stack ``j! a_j``."""
    return idt.Jet(np.array([factorial(j) * x for j, x in enumerate(a)]))


@settings(max_examples=40, deadline=None)
@given(a=coeffs, b=coeffs)
def test_jet_product_is_truncated_polynomial_product(a, b):
    prod = np.polynomial.polynomial.polymul(a, b)[:5]
    prod = np.pad(prod, (0, 5 - len(prod)))
    got = (taylor_to_jet(a) * taylor_to_jet(b)).c
    assert np.allclose(got, taylor_to_jet(prod).c, rtol=1e-12, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(a=coeffs, b=coeffs)
def test_jet_exp_and_reciprocal(a, b):
    ja, jb = taylor_to_jet(a), taylor_to_jet(b)
    lhs = (ja + jb).exp().c
    rhs = (ja.exp() * jb.exp()).c
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * np.abs(rhs).max())
    shifted = ja + 5.0  # keep the constant term away from zero
    one = (shifted * shifted.reciprocal()).c
    assert one[0] == pytest.approx(1.0) and np.allclose(one[1:], 0.0, atol=1e-9)


def test_jet_scalar_ops():
    j = idt.Jet.const(2.0, 3)
    assert j.order == 3
    assert np.array_equal((j * 3.0).c, [6.0, 0, 0, 0])
    assert np.array_equal((1.0 - j).c, [-1.0, 0, 0, 0])
    assert np.array_equal((j / 4.0).c, [0.5, 0, 0, 0])
    assert j.truncate(1).order == 1


def test_uniform_field_is_exact(slab16):
    b0 = idt.make_b0(idt.DataRecipe(psi_amp=0.0, beta=(0.4, -0.2, 0.0)), slab16)
    assert np.abs(dg.div_b0(slab16, b0)).max() == 0.0
    assert np.all(b0[2] == 0.0)


def test_normal_potential_gives_tangential_field(slab16, rng):
    Y1, Y2, _ = slab16.coords
    gfun = np.sin(2 * np.pi * Y1) * np.cos(4 * np.pi * Y2)
    psi = np.zeros((3,) + slab16.shape)
    psi[2] = gfun
    b0 = idt.make_b0(idt.DataRecipe(beta=(0.0, 0.0, 0.0)), slab16, psi=psi)
    assert np.allclose(b0[0], g.d_tan(slab16, gfun, 2), atol=1e-12)
    assert np.allclose(b0[1], -g.d_tan(slab16, gfun, 1), atol=1e-12)
    assert np.all(b0[2] == 0.0)
    assert np.abs(dg.div_b0(slab16, b0)).max() <= 1e-12


def test_zero_recipe(slab):
    assert np.all(idt.make_b0(idt.ZERO_FIELD, slab) == 0.0)


def test_recipe_field_is_tangent_and_nearly_solenoidal(slab16):
    b0 = idt.make_b0(idt.DataRecipe(seed=7), slab16)
    assert np.all(b0[2][slab16.boundary_mask] == 0.0)
    assert np.abs(dg.div_b0(slab16, b0)).max() <= 1e-3


def test_make_b0_rejections(slab):
    with pytest.raises(ConfigError):
        idt.make_b0(idt.DataRecipe(beta=(0.0, 0.0, 0.3)), slab)
    psi = np.ones((3,) + slab.shape)
    with pytest.raises(ConfigError):
        idt.make_b0(idt.DataRecipe(), slab, psi=psi)


def test_recipe_validation():
    with pytest.raises(ConfigError):
        idt.DataRecipe(order=4)
    with pytest.raises(ConfigError):
        idt.DataRecipe(modes=9)
    with pytest.raises(ConfigError):
        idt.DataRecipe(beta=(1.0, 0.0))


def test_static_jets_vanish(slab16):
    s = static_equilibrium(slab16, beta=0.6)
    Q0 = s.q + 0.5 * np.sum(s.b0**2, axis=0)
    jet = idt.jet_recursion(s.v, s.b0, Q0, s.rho0, 4, slab16)
    for stack in (jet.v, jet.q, jet.Q):
        assert all(np.abs(x).max() <= 1e-14 for x in stack[1:])
    assert max(idt.compatibility_residuals(slab16, jet)) <= 1e-14


def test_first_jet_matches_momentum_and_continuity(slab16):
    s = idt.recipe_state(idt.DataRecipe(v_amp=0.2, seed=3), slab16)
    jet = idt.time_jet(slab16, s, 2)
    b0 = s.b0
    Q0 = s.q + 0.5 * np.sum(b0**2, axis=0)
    tension = np.stack([sum(b0[l] * g.deriv(slab16, b0[i], l + 1) for l in range(3)) for i in range(3)])
    v1 = (tension - g.gradient(slab16, Q0)) / s.rho0
    assert np.abs(jet.v[1] - v1).max() <= 1e-12 * np.abs(v1).max()
    divv = sum(g.deriv(slab16, s.v[i], i + 1) for i in range(3))
    assert np.abs(jet.q[1] + divv).max() <= 1e-12
    k = dy.rhs(slab16, s)
    assert np.abs(jet.v[1] - k.d_v).max() <= 1e-12 and np.abs(jet.q[1] - k.d_q).max() <= 1e-12
    assert jet.order == 2 and jet.eta[1] is jet.v[0]


def _backward_step(grid, s0, dt):
    # the system is reversible: flip v, step forward, flip v back
    out = dy.rk4_step(grid, s0.replace(v=-s0.v), dt)
    return out.replace(v=-out.v, t=s0.t - dt)


def test_second_jet_against_micro_steps(slab16):
    s0 = idt.recipe_state(idt.DataRecipe(v_amp=0.2, seed=4), slab16)
    jet = idt.time_jet(slab16, s0, 2)
    errs, dts = [], [2e-3, 1e-3, 5e-4]
    for dt in dts:
        plus = dy.rhs(slab16, dy.rk4_step(slab16, s0, dt)).d_q
        minus = dy.rhs(slab16, _backward_step(slab16, s0, dt)).d_q
        errs.append(np.abs((plus - minus) / (2 * dt) - jet.q[2]).max())
    assert fit_slope(dts, errs, 1.8).passed


def test_time_jet_order_limit(slab):
    with pytest.raises(ConfigError):
        idt.time_jet(slab, static_equilibrium(slab), idt.MAX_JET_ORDER + 1)


def test_incompatible_offset_is_measured_exactly(slab16):
    eps = 2e-3
    s = idt.recipe_state(idt.DataRecipe(q_mean=eps), slab16)
    r0 = idt.compatibility_residuals(slab16, idt.time_jet(slab16, s, 0))[0]
    assert r0 == pytest.approx(eps * np.sqrt(2.0), rel=1e-10)


def test_projection_keeps_compatible_data(slab16):
    recipe = idt.DataRecipe()
    raw = idt.recipe_state(recipe, slab16)
    out = idt.project_compatible(recipe, slab16, order=0)
    assert np.abs(out.q - raw.q).max() <= 1e-14 and np.array_equal(out.v, raw.v)


def test_parabolic_pressure_taylor_sign(slab16):
    c = 1.0
    recipe = idt.DataRecipe(beta=(0.0, 0.0, 0.0), psi_amp=0.0, v_amp=0.0, taylor=c, taylor_mod=0.0)
    s = idt.project_compatible(recipe, slab16, order=0)
    Q0 = s.q
    assert np.abs(Q0[slab16.boundary_mask]).max() <= 1e-15
    assert dg.taylor_sign(slab16, s) == pytest.approx(2 * c, rel=1e-12)


@pytest.mark.parametrize("order", [1, 2])
def test_projection_reaches_tolerance(order):
    grid = g.build_grid(12, 12, 17)
    recipe = idt.DataRecipe(q_pert=0.01, order=order)
    s = idt.project_compatible(recipe, grid)
    res = idt.compatibility_residuals(grid, idt.time_jet(grid, s, order))
    assert max(res) <= 1e-8
    assert dg.taylor_sign(grid, s) >= idt.TAYLOR_C0
    assert np.abs(s.rho0 - s.eos.density(s.q)).max() == 0.0


def test_projection_rejects_torus_and_high_order(torus, slab):
    with pytest.raises(ConfigError):
        idt.project_compatible(idt.DataRecipe(), torus)
    with pytest.raises(ConfigError):
        idt.project_compatible(idt.DataRecipe(), slab, order=4)
