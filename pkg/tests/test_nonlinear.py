import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qthalf.grid import Grid
from qthalf.nonlinear import (
    RhsPair,
    assemble_f,
    assemble_G,
    assemble_G_route2,
    assemble_rhs,
    rhs_norms,
)
from qthalf.tensor_ops import ModelParams, bulk_derivative, trace, transpose

from oracles import ROUTE_GRIDS, observed_orders, route_gaps, smooth_state

EXPONENTS = (4 / 3, 8 / 5, 8.0)


def params(N):
    return ModelParams(N=N, xi=0.7, a=1.0, b=1.2, c=0.8)


@pytest.mark.parametrize("N", [2, 3])
def test_zero_state(N):
    g = Grid(N, 8, 9)
    u = np.zeros((N,) + g.shape)
    Q = np.zeros((N, N) + g.shape)
    assert not assemble_G(u, Q, g, params(N)).any()
    assert not assemble_f(u, Q, g, params(N)).any()


@pytest.mark.parametrize("N", [2, 3])
def test_G_without_flow_is_bulk_derivative(N):
    g = Grid(N, 8, 17)
    _, Q = smooth_state(g)
    G = assemble_G(np.zeros((N,) + g.shape), Q, g, params(N))
    np.testing.assert_allclose(G, bulk_derivative(Q, params(N)), atol=1e-15)


@pytest.mark.parametrize("N", [2, 3])
def test_f_without_order_is_advection(N):
    g = Grid(N, 8, 17)
    u, _ = smooth_state(g)
    f = assemble_f(u, np.zeros((N, N) + g.shape), g, params(N))
    adv = np.stack([sum(u[j] * g.diff(u[i], j) for j in range(N)) for i in range(N)])
    np.testing.assert_allclose(f, -adv, atol=1e-13)


@pytest.mark.parametrize("N", [2, 3])
def test_G_routes_agree_pointwise(N):
    for g in ROUTE_GRIDS[N][:2]:
        u, Q = smooth_state(g)
        G1 = assemble_G(u, Q, g, params(N))
        G2 = assemble_G_route2(u, Q, g, params(N))
        assert np.max(np.abs(G1 - G2)) <= 1e-12


@pytest.mark.parametrize("N", [2, 3])
def test_f_routes_converge(N):
    hs, f_gap, _ = route_gaps(params(N), ROUTE_GRIDS[N])
    assert min(observed_orders(hs, f_gap)) >= 1.9


@pytest.mark.parametrize("N", [2, 3])
def test_G_symmetric_traceless_for_solenoidal_flow(N):
    g = Grid(N, 16, 17)
    X = g.mesh()
    z = X[-1]
    rng = np.random.default_rng(0)
    if N == 2:
        psi = np.sin(X[0] + 0.3) * np.sin(z) ** 2
        u = np.stack([g.diff(psi, 1), -g.diff(psi, 0)])
    else:
        A = [np.sin(X[0] + rng.uniform()) * np.cos(X[1]) * np.sin(z) ** 2 for _ in range(3)]
        u = np.stack([
            g.diff(A[2], 1) - g.diff(A[1], 2),
            g.diff(A[0], 2) - g.diff(A[2], 0),
            g.diff(A[1], 0) - g.diff(A[0], 1),
        ])
    _, Q = smooth_state(g)
    G = assemble_G(u, Q, g, params(N))
    assert np.max(np.abs(trace(G))) <= 1e-12
    assert np.max(np.abs(G - transpose(G))) <= 1e-12


@pytest.mark.parametrize("N", [2, 3])
def test_translation_equivariance(N):
    g = Grid(N, 16, 17)
    u, Q = smooth_state(g)
    p = params(N)
    base = assemble_rhs(u, Q, g, p)
    for shift in (1, 3):
        for ax in range(N - 1):
            ru, rQ = np.roll(u, shift, axis=1 + ax), np.roll(Q, shift, axis=2 + ax)
            moved = assemble_rhs(ru, rQ, g, p)
            assert np.max(np.abs(moved.f - np.roll(base.f, shift, axis=1 + ax))) <= 1e-12
            assert np.max(np.abs(moved.G - np.roll(base.G, shift, axis=2 + ax))) <= 1e-12


def test_rhs_norms_zero():
    g = Grid(2, 8, 9)
    rn = rhs_norms(RhsPair(np.zeros((2,) + g.shape), np.zeros((2, 2) + g.shape)), g, EXPONENTS, t=2.0)
    assert rn["weight"] == 3.0
    assert all(v == 0.0 for part in ("f", "gradG") for v in rn[part].values())
    assert set(rn["f"]) == {float(r) for r in EXPONENTS}


@settings(max_examples=25, deadline=None)
@given(st.floats(-1e3, 1e3, allow_nan=False).filter(lambda c: abs(c) > 1e-6))
def test_rhs_norms_homogeneous(c):
    g = Grid(2, 8, 17)
    rhs = assemble_rhs(*smooth_state(g), g, params(2))
    a = rhs_norms(rhs, g, EXPONENTS)
    b = rhs_norms(rhs.scaled(c), g, EXPONENTS)
    for part in ("f", "gradG"):
        for r in a[part]:
            assert b[part][r] == pytest.approx(abs(c) * a[part][r], rel=1e-12)


@pytest.mark.parametrize("N", [2, 3])
def test_quadratic_smallness(N):
    g = Grid(N, 16, 33)
    u, Q = smooth_state(g)
    scales = np.geomspace(1e-4, 1e-1, 7)
    vals = [sum(rhs_norms(assemble_rhs(s * u, s * Q, g, params(N)), g, [2.0])[k][2.0] for k in ("f", "gradG"))
            for s in scales]
    assert np.polyfit(np.log(scales), np.log(vals), 1)[0] >= 1.9
