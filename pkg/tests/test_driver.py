import math
from fractions import Fraction

import numpy as np
import pytest

from qthalf.driver import (
    bulk_minimum,
    exponent_setup,
    gn_check,
    picard_iterate,
    simulate,
    small_data,
    surrogate_norm,
    total_energy,
    weighted_norm_E,
)
from qthalf.grid import Grid
from qthalf.linear import Trajectory, cell_divergence, linear_evolve
from qthalf.tensor_ops import ModelParams, bulk_energy, project_sym_traceless, sym_traceless_residual

SCH = exponent_setup(2, Fraction(1, 4))
PRM = ModelParams(N=2, xi=0.8)
GRID = Grid(2, 16, 17, 16.0, 8.0)


# -- exponents ---------------------------------------------------------------

def test_exponents_two_dimensions():
    s = exponent_setup(2, Fraction(1, 4))
    assert (s.q0, s.q1, s.q2, s.p) == (Fraction(4, 3), Fraction(8, 5), Fraction(8), 10)


def test_exponents_three_dimensions():
    s = exponent_setup(3, "1/4")
    assert (s.q0, s.q1, s.q2) == (Fraction(2), Fraction(12, 5), Fraction(12))
    assert s.p > 8


@pytest.mark.parametrize("N", [2, 3])
@pytest.mark.parametrize("theta", [Fraction(1, 10), Fraction(1, 4), Fraction(2, 5), Fraction(49, 100)])
def test_exponent_identities_exact(N, theta):
    s = exponent_setup(N, theta)
    assert 1 / s.q0 == 1 / s.q1 + 1 / s.q2
    assert N * (1 / s.q1 - 1 / s.q2) == 1
    assert (1 - theta) / s.q1 + theta / s.q2 == Fraction(1, N)
    assert Fraction(1, s.p) < theta / 2
    for q, qt, kappa in s.pairs:
        assert kappa == N * (1 / qt - 1 / q)


@pytest.mark.parametrize("theta", [0, 0.5, 0.6, -0.1])
def test_exponent_rejects_theta(theta):
    with pytest.raises(ValueError, match="0 < theta < 1/2"):
        exponent_setup(2, theta)


def test_exponent_rejects_dimension():
    with pytest.raises(ValueError):
        exponent_setup(4, 0.25)


# -- weighted norm -----------------------------------------------------------

SMOOTH = Grid(2, 16, 33, 2 * np.pi, np.pi)


def smooth_run(k=1):
    """Free evolution of a low-mode, wall-compatible state."""
    g = SMOOTH
    x, z = g.mesh()
    psi = np.sin(k * x) * np.sin(z) ** 2
    u0 = np.stack([g.diff(psi, 1), -g.diff(psi, 0)])
    Q0 = np.zeros((2, 2) + g.shape)
    Q0[0, 0] = np.cos(k * x) * np.cos(z)
    Q0[1, 1] = -Q0[0, 0]
    Q0[0, 1] = Q0[1, 0] = 0.5 * np.cos(2 * z)
    return linear_evolve(u0, Q0, g, PRM, 4.0, 0.025, scheme="cn")


@pytest.fixture(scope="module")
def reference_run():
    return smooth_run()


def test_E_zero():
    z = np.zeros((5, 2) + GRID.shape), np.zeros((5, 2, 2) + GRID.shape)
    tr = Trajectory(GRID, np.linspace(0, 1, 5), *z)
    rep = weighted_norm_E(tr, SCH)
    assert rep.E_total == 0.0 and all(v == 0.0 for v in rep.components.values())


def test_E_rejects_short_trajectory(reference_run):
    tr = reference_run
    short = Trajectory(SMOOTH, tr.times[:2], tr.u[:2], tr.Q[:2])
    with pytest.raises(ValueError):
        weighted_norm_E(short, SCH)


def test_E_components_sum(reference_run):
    rep = weighted_norm_E(reference_run, SCH)
    assert len(rep.components) == 10
    assert all(v >= 0 for v in rep.components.values())
    assert rep.E_total == pytest.approx(sum(rep.components.values()), rel=1e-14)
    assert 0.0 <= rep.tail_fraction <= 1.0


@pytest.mark.parametrize("c", [-3.0, 0.5, 7.0])
def test_E_homogeneous(reference_run, c):
    E = weighted_norm_E(reference_run, SCH).E_total
    assert weighted_norm_E(reference_run.scaled(c), SCH).E_total == pytest.approx(abs(c) * E, rel=1e-12)


def test_E_triangle_inequality(reference_run):
    other = smooth_run(k=2)
    for c in (1.0, -1.0, 0.3):
        b = other.scaled(c)
        total = Trajectory(SMOOTH, reference_run.times, reference_run.u + b.u, reference_run.Q + b.Q)
        lhs = weighted_norm_E(total, SCH).E_total
        rhs = weighted_norm_E(reference_run, SCH).E_total + weighted_norm_E(b, SCH).E_total
        assert lhs <= rhs * (1 + 1e-12)


def test_E_quadrature_refinement(reference_run):
    tr = reference_run
    coarse = Trajectory(SMOOTH, tr.times[::2], tr.u[::2], tr.Q[::2])
    Ef = weighted_norm_E(tr, SCH).E_total
    Ec = weighted_norm_E(coarse, SCH).E_total
    assert abs(Ec - Ef) / Ef <= 0.02


# -- surrogate and GN --------------------------------------------------------

def test_surrogate_zero_and_homogeneous():
    u, Q = small_data(GRID, PRM, SCH, 1.0, seed=1)
    assert surrogate_norm(0 * u, 0 * Q, GRID, SCH) == 0.0
    assert surrogate_norm(u, Q, GRID, SCH) == pytest.approx(1.0, rel=1e-12)
    assert surrogate_norm(-2 * u, -2 * Q, GRID, SCH) == pytest.approx(2.0, rel=1e-12)


def test_gn_zero_is_undefined(caplog):
    assert math.isnan(gn_check(np.zeros((2,) + GRID.shape), GRID, SCH))
    assert "undefined" in caplog.text


def test_gn_rejects_level():
    with pytest.raises(ValueError):
        gn_check(np.ones(GRID.shape), GRID, SCH, level=2)


def test_gn_ratio_is_scale_free():
    g = Grid(2, 64, 65, 16.0, 8.0)
    x, z = g.mesh()
    v = np.exp(-((x - 8) ** 2 + (z - 4) ** 2))
    r = gn_check(v, g, SCH)
    assert np.isfinite(r) and r > 0
    assert gn_check(5.0 * v, g, SCH) == pytest.approx(r, rel=1e-12)


# -- energy ------------------------------------------------------------------

def test_bulk_minimum():
    assert bulk_minimum(ModelParams(N=2, a=0.3)) == 0.0
    p = ModelParams(N=3, a=0.01, b=1.0, c=1.0)
    fmin = bulk_minimum(p)
    assert fmin < 0
    rng = np.random.default_rng(0)
    Q = project_sym_traceless(rng.standard_normal((3, 3, 20000)))
    Q *= rng.uniform(0, 1.5, 20000)
    assert np.min(bulk_energy(Q, p)) >= fmin - 1e-12


def test_total_energy_of_rest_state():
    z = np.zeros((2,) + GRID.shape), np.zeros((2, 2) + GRID.shape)
    assert total_energy(*z, GRID, PRM) == 0.0


# -- simulation --------------------------------------------------------------

def test_simulate_zero():
    z = np.zeros((2,) + GRID.shape), np.zeros((2, 2) + GRID.shape)
    tr = simulate(*z, GRID, PRM, 1.0, 0.1)
    assert not tr.u.any() and not tr.Q.any() and tr.status == "ok"


def test_simulate_linear_mode_is_linear_evolve():
    u0, Q0 = small_data(GRID, PRM, SCH, 1e-2, seed=4)
    a = simulate(u0, Q0, GRID, PRM, 1.0, 0.1, nonlinear=False)
    b = linear_evolve(u0, Q0, GRID, PRM, 1.0, 0.1)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.Q, b.Q)


@pytest.fixture(scope="module")
def small_run():
    u0, Q0 = small_data(GRID, PRM, SCH, 1e-3, seed=1)
    return u0, Q0, simulate(u0, Q0, GRID, PRM, 8.0, 0.1)


def test_simulate_small_data(small_run):
    u0, Q0, tr = small_run
    assert tr.status == "ok"
    assert weighted_norm_E(tr, SCH).E_total <= 1e-2
    energy = np.array([d["energy"] for d in tr.diagnostics])
    # non-increasing up to an O(dt) slack (dt = 0.1) relative to the initial energy
    assert np.max(np.diff(energy)) <= 0.1 * 1e-3 * energy[0]


def test_simulate_invariants(small_run):
    _, _, tr = small_run
    for d in tr.diagnostics:
        assert d["sym_traceless"] <= 1e-10
        assert d["wall_u"] == 0.0
        assert d["div_rel"] <= 1e-8
    for k in range(len(tr)):
        assert sym_traceless_residual(tr.Q[k]) <= 1e-10
        assert np.max(np.abs(cell_divergence(GRID, tr.u[k]))) <= 1e-8 * np.max(np.abs(GRID.jacobian(tr.u[k])))


def test_simulate_blowup_detector():
    u0, Q0 = small_data(GRID, PRM, SCH, 1e-2, seed=1)
    tr = simulate(u0, Q0, GRID, PRM, 1.0, 0.1, blowup_factor=1e-3)
    assert tr.status == "halted"
    assert "blowup" in tr.diagnostics[-1]


# -- Picard ------------------------------------------------------------------

def test_picard_zero():
    z = np.zeros((2,) + GRID.shape), np.zeros((2, 2) + GRID.shape)
    res = picard_iterate(*z, GRID, PRM, SCH, 1.0, 0.1)
    assert res.converged and res.final_residual == 0.0
    assert not res.limit.u.any() and not res.limit.Q.any()


def test_picard_rejects_short_budget():
    z = np.zeros((2,) + GRID.shape), np.zeros((2, 2) + GRID.shape)
    with pytest.raises(ValueError):
        picard_iterate(*z, GRID, PRM, SCH, 1.0, 0.1, k_max=1)


def test_picard_small_data(small_run):
    u0, Q0, _ = small_run
    res = picard_iterate(u0, Q0, GRID, PRM, SCH, 8.0, 0.1)
    assert res.converged and not res.diverging
    assert res.max_delta <= 0.5
    assert res.final_residual <= 1e-8
    assert all(np.isfinite(r.E) for r in res.records)


def test_picard_limit_independent_of_budget(small_run):
    u0, Q0, _ = small_run
    a = picard_iterate(u0, Q0, GRID, PRM, SCH, 8.0, 0.1, k_max=3, tol=1e-14)
    b = picard_iterate(u0, Q0, GRID, PRM, SCH, 8.0, 0.1, k_max=8, tol=1e-14)
    diff = weighted_norm_E(a.limit - b.limit, SCH).E_total
    assert diff <= 1e-10 * weighted_norm_E(b.limit, SCH).E_total


def test_picard_limit_matches_simulation():
    u0, Q0 = small_data(GRID, PRM, SCH, 1e-3, seed=1)
    gaps = []
    for dt in (0.2, 0.1):
        sim = simulate(u0, Q0, GRID, PRM, 8.0, dt)
        lim = picard_iterate(u0, Q0, GRID, PRM, SCH, 8.0, dt).limit
        gaps.append(np.max(np.abs(sim.u - lim.u)) / np.max(np.abs(sim.u)))
    assert gaps[0] <= 1e-4
    assert gaps[1] <= 0.6 * gaps[0]


def test_small_data_properties():
    for N in (2, 3):
        g = Grid(N, 16, 17, 16.0, 8.0)
        sch = exponent_setup(N, 0.25)
        u, Q = small_data(g, ModelParams(N=N), sch, 1e-3, seed=0)
        assert surrogate_norm(u, Q, g, sch) == pytest.approx(1e-3, rel=1e-12)
        assert np.max(np.abs(u[..., [0, -1]])) == 0.0
        assert sym_traceless_residual(Q) <= 1e-15
        assert np.max(np.abs(cell_divergence(g, u))) <= 1e-10 * np.max(np.abs(g.jacobian(u)))
    with pytest.raises(ValueError):
        small_data(GRID, PRM, SCH, 1.0, radius=5.0)
