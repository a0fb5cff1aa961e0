import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhdlab import grid as g
from mhdlab import tensor as tn
from mhdlab.diagnostics import fit_slope
from mhdlab.errors import JacobianFloorError
from mhdlab.verification import smooth_displacement


def stretched(grid):
    return tn.FlowMap(np.zeros((3,) + grid.shape), np.diag([1.0, 1.0, 2.0]))


def test_identity_geometry(slab):
    snap = tn.geometry(slab, tn.FlowMap.identity(slab))
    eye = np.eye(3).reshape(3, 3, 1, 1, 1)
    assert np.all(snap.grad_eta == eye)
    assert np.all(snap.J == 1.0)
    assert np.all(snap.A == eye)
    assert np.all(snap.Ahat == eye)
    assert np.abs(tn.piola_residual(slab, snap)).max() <= 1e-14


def test_stretched_geometry(slab):
    snap = tn.geometry(slab, stretched(slab))
    assert np.allclose(snap.J, 2.0)
    assert np.allclose(np.diagonal(snap.A, axis1=0, axis2=1)[..., :], [1.0, 1.0, 0.5])
    assert np.allclose(np.diagonal(snap.Ahat, axis1=0, axis2=1), [2.0, 2.0, 1.0])
    assert np.abs(tn.piola_residual(slab, snap)).max() <= 1e-13


def test_deformation_gradient_of_shear():
    grid = g.build_grid(16, 16, 9)
    _, Y2, _ = grid.coords
    disp = np.zeros((3,) + grid.shape)
    disp[0] = 0.1 * np.sin(2 * np.pi * Y2)
    G = tn.deformation_gradient(grid, tn.FlowMap(disp))
    expect = np.broadcast_to(np.eye(3).reshape(3, 3, 1, 1, 1), G.shape).copy()
    expect[0, 1] = 0.2 * np.pi * np.cos(2 * np.pi * Y2)
    assert np.abs(G - expect).max() <= 1e-12


def test_inverse_matches_linalg(slab16):
    snap = tn.geometry(slab16, smooth_displacement(slab16, 0.05, seed=3))
    G = np.moveaxis(snap.grad_eta, (0, 1), (-2, -1))
    inv = np.linalg.inv(G)
    assert np.abs(np.moveaxis(snap.A, (0, 1), (-2, -1)) - inv).max() <= 1e-12
    assert np.abs(snap.J - np.linalg.det(G)).max() <= 1e-12
    assert snap.inverse_residual() <= 1e-12


def test_row_three_cofactor_identity(slab16):
    snap = tn.geometry(slab16, smooth_displacement(slab16, 0.05, seed=4))
    contraction = np.einsum("i...,i...->...", snap.Ahat[2], snap.grad_eta[:, 2])
    assert np.abs(contraction - snap.J).max() <= 1e-13


@settings(max_examples=25, deadline=None)
@given(entries=st.lists(st.floats(-0.3, 0.3), min_size=9, max_size=9))
def test_affine_maps_are_exact(entries):
    grid = g.build_grid(4, 4, 5)
    M = np.eye(3) + np.reshape(entries, (3, 3))
    snap = tn.geometry(grid, tn.FlowMap(np.zeros((3,) + grid.shape), M), floor=None)
    assert np.allclose(snap.J, np.linalg.det(M), atol=1e-13)
    A = np.moveaxis(snap.A, (0, 1), (-2, -1))[0, 0, 0]
    assert np.allclose(A, np.linalg.inv(M), atol=1e-10)
    assert np.abs(tn.piola_residual(grid, snap)).max() <= 1e-12


def test_piola_converges_under_normal_refinement():
    errs, hs = [], []
    for n3 in (17, 33, 65):
        grid = g.build_grid(16, 16, n3)
        snap = tn.geometry(grid, smooth_displacement(grid, 0.05, seed=0))
        errs.append(np.abs(tn.piola_residual(grid, snap)).max())
        hs.append(grid.h3)
    assert fit_slope(hs, errs, 3.5).status == "ok"


def test_jacobian_floor(slab):
    squash = tn.FlowMap(np.zeros((3,) + slab.shape), np.diag([1.0, 1.0, 0.05]))
    with pytest.raises(JacobianFloorError):
        tn.geometry(slab, squash)
    flip = tn.FlowMap(np.zeros((3,) + slab.shape), np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(JacobianFloorError):
        tn.geometry(slab, flip, floor=None)
    assert tn.geometry(slab, squash, floor=None).J.min() == pytest.approx(0.05)


def test_covariant_operators(slab):
    snap = tn.geometry(slab, stretched(slab))
    grad = tn.cov_grad(slab, snap.A, slab.coords[2])
    assert np.allclose(grad[0], 0.0) and np.allclose(grad[1], 0.0)
    assert np.allclose(grad[2], 0.5)
    ident = tn.geometry(slab, tn.FlowMap.identity(slab))
    Y1 = slab.coords[0]
    f = np.sin(2 * np.pi * Y1) * slab.coords[2] ** 2
    assert np.allclose(tn.cov_grad(slab, ident.A, f), g.gradient(slab, f), atol=1e-12)
    X = np.ones((3,) + slab.shape) * np.array([1.0, -2.0, 0.5]).reshape(3, 1, 1, 1)
    assert np.abs(tn.cov_div(slab, snap.A, X)).max() <= 1e-12


def test_cov_grad_of_vector_field_has_component_axis(slab):
    snap = tn.geometry(slab, tn.FlowMap.identity(slab))
    v = np.stack(slab.coords)
    grad = tn.cov_grad(slab, snap.A, v)
    assert grad.shape == (3, 3) + slab.shape
    assert np.allclose(grad[2, 2], 1.0, atol=1e-12)


def test_variation_identity_for_affine_map(slab):
    res = tn.spatial_variation_residual(slab, stretched(slab), 3)
    assert np.abs(res).max() <= 1e-13


def test_tangential_variation_is_spectral():
    grid = g.build_grid(32, 32, 9)
    eta = smooth_displacement(grid, 0.01, seed=1, normal=False)
    for axis in (1, 2):
        assert np.abs(tn.spatial_variation_residual(grid, eta, axis)).max() <= 1e-9


def test_temporal_variation_is_second_order(slab16):
    V = smooth_displacement(slab16, 1.0, seed=2)
    t = 0.05
    errs = []
    dts = [0.02, 0.01, 0.005]
    for dt in dts:
        em, ep, mid = (tn.FlowMap((t + s) * V.disp) for s in (-dt, dt, 0.0))
        errs.append(np.abs(tn.temporal_variation_residual(slab16, em, ep, mid, dt)).max())
    assert fit_slope(dts, errs, 1.8).status == "ok"
