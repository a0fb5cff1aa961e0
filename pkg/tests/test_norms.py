import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhdlab import grid as g
from mhdlab import norms as nm
from mhdlab import tensor as tn
from mhdlab.errors import ConfigError
from mhdlab.verification import brute_force_count


def stack(grid, f):
    return nm.TimeDerivativeStack(grid, [f])


def test_small_index_sets():
    assert nm.enumerate_indices(0) == [nm.MultiIndex()]
    one = set(nm.enumerate_indices(1))
    assert one == {nm.MultiIndex(), nm.MultiIndex(i1=1), nm.MultiIndex(i2=1), nm.MultiIndex(i4=1)}
    assert len(nm.enumerate_indices(2)) == 11


@pytest.mark.parametrize("m", range(nm.MAX_ORDER + 1))
@pytest.mark.parametrize("with_time", [False, True])
def test_counts_match_brute_force(m, with_time):
    idx = nm.enumerate_indices(m, with_time)
    assert len(idx) == brute_force_count(m, with_time)
    assert len(set(idx)) == len(idx)
    assert idx == sorted(idx)
    assert all(i.weight <= m for i in idx)


def test_order_limits():
    with pytest.raises(ConfigError):
        nm.enumerate_indices(nm.MAX_ORDER + 1)
    with pytest.raises(ConfigError):
        nm.enumerate_indices(-1)


def test_weight_counts_normal_twice():
    assert nm.MultiIndex(1, 1, 1, 1, 1).weight == 6
    assert nm.MultiIndex(2, 0, 0, 3, 0).spatial == nm.MultiIndex(0, 0, 0, 3, 0)


def test_apply_index_examples():
    grid = g.build_grid(16, 16, 17)
    Y1, _, Y3 = grid.coords
    f = np.sin(2 * np.pi * Y1)
    assert np.array_equal(nm.apply_index(nm.MultiIndex(), stack(grid, f)), f)
    w = nm.apply_index(nm.MultiIndex(i4=1), stack(grid, Y3))
    assert np.allclose(w, 1 - Y3**2, atol=1e-12)
    d11 = nm.apply_index(nm.MultiIndex(i1=2), stack(grid, f))
    assert np.abs(d11 + 4 * np.pi**2 * f).max() <= 1e-9


def test_apply_index_reads_time_entries(slab):
    f, ft = np.ones(slab.shape), 2 * np.ones(slab.shape)
    st_ = nm.TimeDerivativeStack(slab, [f, ft])
    assert np.array_equal(nm.apply_index(nm.MultiIndex(i0=1), st_), ft)
    with pytest.raises(ConfigError):
        nm.apply_index(nm.MultiIndex(i0=2), st_)


def test_stack_shape_validation(slab):
    with pytest.raises(ConfigError):
        nm.TimeDerivativeStack(slab, [np.zeros((3, 3, 3))])


def test_weighted_indices_vanish_on_boundary(rng):
    grid = g.build_grid(8, 8, 9)
    f = rng.normal(size=grid.shape)
    for idx in nm.enumerate_indices(4):
        if idx.i4:
            assert np.all(nm.apply_index(idx, stack(grid, f))[grid.boundary_mask] == 0.0)


def test_norm_of_zero_and_one(slab):
    assert nm.aniso_norm(stack(slab, np.zeros(slab.shape)), 4) == 0.0
    for m in (0, 2, 5):
        assert nm.aniso_norm(stack(slab, np.ones(slab.shape)), m) == pytest.approx(np.sqrt(2.0), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-10, 10), m=st.integers(0, 5))
def test_homogeneity_and_nesting(seed, c, m):
    grid = g.build_grid(6, 6, 9)
    f = np.random.default_rng(seed).normal(size=grid.shape)
    s = stack(grid, f)
    base = nm.aniso_norm(s, m)
    assert nm.aniso_norm(s.scaled(c), m) == pytest.approx(abs(c) * base, rel=1e-12, abs=1e-300)
    assert base <= nm.aniso_norm(s, m + 1) * (1 + 1e-12)


def test_space_time_norm_includes_time_derivatives(slab):
    f = np.ones(slab.shape)
    s = nm.TimeDerivativeStack(slab, [f, 3 * f])
    assert nm.aniso_norm(s, 1, with_time=True) == pytest.approx(np.sqrt(2.0 + 18.0), rel=1e-12)


def test_sobolev_norm_and_embedding():
    grid = g.build_grid(8, 8, 17)
    Y1, _, Y3 = grid.coords
    f = np.cos(2 * np.pi * Y1) * (1 + Y3)
    assert nm.sobolev_norm(grid, np.ones(grid.shape), 3) == pytest.approx(np.sqrt(2.0))
    c = nm.embedding_constant(grid, [f, f**2], 2)
    assert 0.0 < c < 10.0


def test_energy_functional_of_identity_matches_brute_force():
    grid = g.build_grid(8, 8, 17)
    Y1, Y2, Y3 = grid.coords
    z = np.zeros((3,) + grid.shape)
    eta = nm.TimeDerivativeStack(grid, [tn.FlowMap(z), z, z])
    zero = nm.TimeDerivativeStack(grid, [z, z, z])
    rep = nm.energy_functional({"eta": eta, "v": zero, "b": zero, "Q": zero}, m=2)
    sigma = 1 - Y3**2
    # identity, d1, d2, d3, sigma d3, (sigma d3)^2; everything else vanishes
    brute = (g.integrate(grid, Y1**2 + Y2**2 + Y3**2) + 2 + 2 + 2
             + g.integrate(grid, sigma**2) + g.integrate(grid, (2 * Y3 * sigma) ** 2))
    assert rep.terms["eta"] == pytest.approx(brute, rel=1e-12)
    # weight-2 boundary index d3 gives A^{33} = 1 on both planes
    assert rep.terms["boundary"] == pytest.approx(2.0, rel=1e-12)
    assert rep.terms["v"] == rep.terms["b"] == rep.terms["Q"] == 0.0
    assert rep.total == pytest.approx(brute + 2.0, rel=1e-12)


def test_energy_functional_zero_and_homogeneity(slab, rng):
    z = np.zeros((3,) + slab.shape)
    zero = nm.TimeDerivativeStack(slab, [z, z, z])
    A = np.broadcast_to(np.eye(3).reshape(3, 3, 1, 1, 1), (3, 3) + slab.shape)
    rep = nm.energy_functional({"eta": zero, "v": zero, "b": zero, "Q": zero}, m=2, A=A)
    assert rep.total == 0.0
    v = nm.TimeDerivativeStack(slab, [rng.normal(size=z.shape) for _ in range(3)])
    one = nm.energy_functional({"eta": zero, "v": v, "b": zero, "Q": zero}, m=2, A=A)
    two = nm.energy_functional({"eta": zero, "v": v.scaled(2.0), "b": zero, "Q": zero}, m=2, A=A)
    assert two.terms["v"] == pytest.approx(4 * one.terms["v"], rel=1e-12)
    assert two.terms["eta"] == one.terms["eta"] == 0.0


def test_energy_functional_requires_all_stacks(slab):
    with pytest.raises(ConfigError):
        nm.energy_functional({"eta": nm.TimeDerivativeStack(slab, [np.zeros(slab.shape)])}, 1)


def test_boundary_energy_examples():
    grid = g.build_grid(32, 32, 9)
    Y1 = grid.coords[0]
    z = np.zeros((3,) + grid.shape)
    ident = nm.TimeDerivativeStack(grid, [tn.FlowMap(z)])
    A_id = tn.geometry(grid, tn.FlowMap(z)).A
    for idx in (nm.MultiIndex(i1=1), nm.MultiIndex(i2=2), nm.MultiIndex(i1=1, i2=1)):
        assert nm.boundary_energy(ident, A_id, idx) <= 1e-24
    eps = 1e-3
    disp = z.copy()
    disp[2] = eps * np.sin(2 * np.pi * Y1)
    eta = tn.FlowMap(disp)
    st_ = nm.TimeDerivativeStack(grid, [eta])
    assert nm.boundary_energy(st_, tn.geometry(grid, eta).A, nm.MultiIndex(i4=1)) == 0.0
    # linearised about the identity (A = I): |2 pi eps cos|^2 over both planes
    lin = nm.boundary_energy(st_, A_id, nm.MultiIndex(i1=1))
    assert lin == pytest.approx((2 * np.pi * eps) ** 2, rel=1e-10)
    # with the exact inverse the contraction A^{3i} d1 eta_i cancels identically
    exact = nm.boundary_energy(st_, tn.geometry(grid, eta).A, nm.MultiIndex(i1=1))
    assert exact <= 1e-28


def test_boundary_energy_needs_slab(torus):
    z = np.zeros((3,) + torus.shape)
    with pytest.raises(ConfigError):
        nm.boundary_energy(nm.TimeDerivativeStack(torus, [z]), np.zeros((3, 3) + torus.shape),
                           nm.MultiIndex(i1=1))
