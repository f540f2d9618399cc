"""Numerical experiments built on the solver modules.

Each function returns plain numbers and arrays so the CLI, the tests and
interactive sessions can share them. Nothing here writes files.
"""
from __future__ import annotations

import cmath
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import tensor_ops as to
from .driver import ExponentScheme, gn_check, surrogate_norm
from .grid import Grid
from .linear import ModeSolver, Sector, linear_evolve, project_solenoidal
from .nonlinear import assemble_G, assemble_G_route2, assemble_rhs, rhs_norms

__all__ = [
    "log_slope",
    "worker_count",
    "mode_field",
    "CENTRED_MODES",
    "centred_data",
    "band_data",
    "vortex_data",
    "resolvent_norms",
    "ResolventSweep",
    "resolvent_sweep",
    "smoothing_slope",
    "DecayFit",
    "decay_fit",
    "regularity_ratio",
    "gn_dilation_sweep",
    "gn_random_sweep",
    "nonlinear_scaling",
    "invariant_suite",
]


def log_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs at least two positive samples")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def worker_count() -> int:
    """Threads for independent parameter points, from ``QTHALF_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("QTHALF_WORKERS", "1")))
    except ValueError:
        return 1


def _ordered_map(fn, items):
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))  # map keeps input order


# ---------------------------------------------------------------------------
# data generators
# ---------------------------------------------------------------------------

def mode_field(grid: Grid, rng: np.random.Generator, modes, lead_shape=(), weight=None):
    """Random combination of ``cos/sin(k . x_tan) cos(m pi x_N / H)``.

    ``modes`` holds integer tuples ``(k_1, .., k_{N-1}, m)`` with the tangential
    wavenumbers in units of ``2 pi / L_tan``. Every sample has zero normal
    derivative at both walls. ``weight(mode)`` scales each mode (default 1).
    """
    X = grid.mesh()
    out = np.zeros(tuple(lead_shape) + grid.shape)
    for idx in np.ndindex(*lead_shape):
        acc = np.zeros(grid.shape)
        for mode in modes:
            *kt, m = mode
            phase = sum(2.0 * math.pi * k * x / grid.L_tan for k, x in zip(kt, X[:-1]))
            a, b = rng.standard_normal(2)
            w = 1.0 if weight is None else weight(mode)
            acc += w * (a * np.cos(phase) + b * np.sin(phase)) * np.cos(m * math.pi * X[-1] / grid.H_wall)
        out[idx] = acc
    return out


CENTRED_MODES = {
    2: ((1, 1), (2, 0), (1, 2), (2, 1), (0, 2)),
    3: ((1, 0, 1), (0, 1, 1), (2, 0, 0), (1, 1, 2), (0, 2, 1)),
}


def centred_data(grid: Grid, seed: int):
    """Resolvent data ``(f, G)`` built from a few low modes of comparable size."""
    rng = np.random.default_rng(seed)
    modes = CENTRED_MODES[grid.N]
    f = mode_field(grid, rng, modes, (grid.N,))
    G = to.project_sym_traceless(mode_field(grid, rng, modes, (grid.N, grid.N)))
    return f, G


def band_data(grid: Grid, seed: int, kmax: int = 4):
    """Broad-band resolvent data: all modes up to ``kmax`` with weight ``1/(1+|k|^2)``."""
    rng = np.random.default_rng(seed)
    modes = list(np.ndindex(*[kmax + 1] * grid.N))
    weight = lambda m: 1.0 / (1.0 + sum(k * k for k in m))  # noqa: E731
    f = mode_field(grid, rng, modes, (grid.N,), weight)
    G = to.project_sym_traceless(mode_field(grid, rng, modes, (grid.N, grid.N), weight))
    return f, G


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    out = np.zeros_like(s)
    inner = (s > 0) & (s < 1)
    a = np.exp(-1.0 / np.where(inner, s, 1.0))
    b = np.exp(-1.0 / np.where(inner, 1.0 - s, 1.0))
    out[inner] = (a / (a + b))[inner]
    out[s >= 1] = 1.0
    return out


def vortex_data(grid: Grid, r_flat: float, r_cut: float, core: float):
    """Regularized point vortex ``u = (z, -x) / (r^2 + core^2)`` about the box
    centre, equal to the scale-free ``1/r`` swirl for ``core << r < r_flat`` and
    smoothly cut off by ``r_cut``. Normalized to unit ``L_2`` norm; ``Q = 0``.

    Only ``N = 2`` is supported: the profile must be scale invariant in the
    full space dimension.
    """
    if grid.N != 2:
        raise ValueError("vortex data is defined for N = 2 only")
    if not 0 < core < r_flat < r_cut:
        raise ValueError("need 0 < core < r_flat < r_cut")
    if r_cut >= min(0.5 * grid.L_tan, 0.5 * grid.H_wall):
        raise ValueError("cut-off radius must stay inside the box")
    x, z = grid.mesh()
    dx = x - 0.5 * grid.L_tan
    dz = z - 0.5 * grid.H_wall
    r = np.hypot(dx, dz)
    chi = 1.0 - _smoothstep((r - r_flat) / (r_cut - r_flat))
    u = np.stack([dz, -dx]) / (r**2 + core**2) * chi
    u = project_solenoidal(grid, u)
    u /= grid.lebesgue_norm(u, 2.0)
    return u, np.zeros((2, 2) + grid.shape)


# ---------------------------------------------------------------------------
# resolvent experiments
# ---------------------------------------------------------------------------

def resolvent_norms(u, Q, grid: Grid, q: float):
    """``(|U|, |grad U|, |grad^2 U|)`` in ``L_q`` with ``|(u, Q)| = |u| + |grad Q|``."""
    g = grid
    n0 = g.lebesgue_norm(u, q) + g.lebesgue_norm(g.grad(Q), q)
    n1 = g.lebesgue_norm(g.jacobian(u), q) + g.lebesgue_norm(g.gradient_stack(Q, 2), q)
    n2 = g.lebesgue_norm(g.gradient_stack(u, 2), q) + g.lebesgue_norm(g.gradient_stack(Q, 3), q)
    return n0, n1, n2


@dataclass
class ResolventSweep:
    magnitudes: np.ndarray
    ratios: dict = field(default_factory=dict)   # (arg, q) -> array of ratios
    slopes: dict = field(default_factory=dict)   # (arg, q) -> fitted slope
    max_residual: float = 0.0


def resolvent_sweep(grid: Grid, params, f, G, magnitudes, args, qs, sector: Sector | None = None):
    """Ratio ``(|lam| |U| + |lam|^{1/2} |grad U| + |grad^2 U|) / (|f| + |grad G|)``
    in ``L_q`` along rays ``lam = |lam| e^{i arg}`` and its log-log slope in ``|lam|``."""
    sector = sector or Sector.for_params(params)
    mags = np.asarray(magnitudes, dtype=float)
    points = [(a, m) for a in args for m in mags]
    for a, m in points:
        lam = m * cmath.exp(1j * a)
        if not sector.contains(lam):
            raise ValueError(f"lam={lam:.4g} (arg {a:.4f}) lies outside the sector")

    def solve(point):
        a, m = point
        solver = ModeSolver(grid, params, m * cmath.exp(1j * a))
        u, Q, _, resid = solver.solve(f, G)
        return u, Q, max(resid.values())

    sols = _ordered_map(solve, points)
    out = ResolventSweep(mags)
    out.max_residual = max(s[2] for s in sols)
    for q in qs:
        den = grid.lebesgue_norm(f, q) + grid.lebesgue_norm(grid.grad(G), q)
        for ia, a in enumerate(args):
            vals = []
            for im, m in enumerate(mags):
                u, Q, _ = sols[ia * len(mags) + im]
                n0, n1, n2 = resolvent_norms(u, Q, grid, q)
                vals.append((m * n0 + math.sqrt(m) * n1 + n2) / den)
            out.ratios[(a, q)] = np.array(vals)
            out.slopes[(a, q)] = log_slope(mags, vals)
    return out


def smoothing_slope(grid: Grid, params, f, G, magnitudes, q: float, q_tilde: float):
    """Slope of ``||u(lam)||_{L_q}`` against real ``lam`` for data normalized to
    ``||f||_{q~} + ||grad G||_{q~} = 1``. Returns ``(slope, values)``."""
    scale = grid.lebesgue_norm(f, q_tilde) + grid.lebesgue_norm(grid.grad(G), q_tilde)
    f, G = f / scale, G / scale
    mags = np.asarray(magnitudes, dtype=float)

    def solve(m):
        u, _, _, _ = ModeSolver(grid, params, float(m)).solve(f, G, residual=False)
        return grid.lebesgue_norm(u, q)

    vals = np.array(_ordered_map(solve, mags))
    return log_slope(mags, vals), vals


# ---------------------------------------------------------------------------
# time-domain decay
# ---------------------------------------------------------------------------

@dataclass
class DecayFit:
    slope: float
    window: tuple
    times: np.ndarray
    values: np.ndarray


def decay_fit(grid: Grid, params, u0, Q0, T: float, dt: float, q: float,
              store_every: int = 2, t_start: float = 1.0) -> DecayFit:
    """Evolve the linear problem from ``(u0, Q0)`` (Crank-Nicolson) and fit the
    log-log slope of ``||u||_q + ||grad Q||_q`` on ``[t_start, min(T, 0.1 (L/2pi)^2)]``.

    The upper end keeps the fit away from the discrete spectral gap of the
    periodic box.
    """
    t_end = min(T, 0.1 * (grid.L_tan / (2.0 * math.pi)) ** 2)
    if not t_end > t_start:
        raise ValueError(f"empty fit window [{t_start}, {t_end}]")
    traj = linear_evolve(u0, Q0, grid, params, T, dt, store_every=store_every, scheme="cn")
    vals = np.array([
        grid.lebesgue_norm(traj.u[k], q) + grid.lebesgue_norm(grid.grad(traj.Q[k]), q)
        for k in range(len(traj))
    ])
    mask = (traj.times >= t_start - 1e-12) & (traj.times <= t_end + 1e-12)
    slope = log_slope(traj.times[mask], vals[mask])
    return DecayFit(slope, (t_start, t_end), traj.times, vals)


# ---------------------------------------------------------------------------
# maximal regularity
# ---------------------------------------------------------------------------

def regularity_ratio(grid: Grid, params, scheme: ExponentScheme, u0, Q0, forcing_profile,
                     amplitude, T: float, dt: float, qs=None):
    """Maximal-regularity ratio for forcing ``amplitude(t) * (f, G)``:

    ``||(d_t, grad^2)(u, Q)||_{L_p(0,T; L_q x Hdot^1_q)}`` divided by
    ``surrogate(U0) + ||(f, grad G)||_{L_p(0,T; L_q)}``, for each ``q`` in ``qs``
    (default ``q1, q2``). Time derivatives are second-order differences of the
    implicit-Euler trajectory. Returns ``{q: ratio}``.
    """
    fs, Gs = forcing_profile
    qs = qs or (float(scheme.q1), float(scheme.q2))
    traj = linear_evolve(u0, Q0, grid, params, T, dt,
                         forcing=lambda n, t, u, Q: (amplitude(t) * fs, amplitude(t) * Gs))
    t = traj.times
    du = np.gradient(traj.u, t, axis=0, edge_order=2)
    dQ = np.gradient(traj.Q, t, axis=0, edge_order=2)
    gG = grid.grad(Gs)
    data0 = surrogate_norm(u0, Q0, grid, scheme)
    p = scheme.p
    out = {}
    for q in qs:
        num = np.array([
            grid.lebesgue_norm(du[k], q) + grid.lebesgue_norm(grid.grad(dQ[k]), q)
            + grid.lebesgue_norm(grid.gradient_stack(traj.u[k], 2), q)
            + grid.lebesgue_norm(grid.gradient_stack(traj.Q[k], 3), q)
            for k in range(len(t))
        ])
        fn = np.abs([amplitude(s) for s in t]) * (grid.lebesgue_norm(fs, q) + grid.lebesgue_norm(gG, q))
        lhs = trapezoid(num**p, t) ** (1.0 / p)
        rhs = data0 + trapezoid(fn**p, t) ** (1.0 / p)
        out[float(q)] = float(lhs / rhs)
    return out


# ---------------------------------------------------------------------------
# Gagliardo-Nirenberg
# ---------------------------------------------------------------------------

def gn_dilation_sweep(grid: Grid, scheme: ExponentScheme, scales, level: int = 0):
    """Ratios of :func:`gn_check` for Gaussians ``exp(-|x - c|^2 / 2 s^2)`` centred
    in the box, and their relative spread ``(max - min) / mean``."""
    X = grid.mesh()
    centre = [0.5 * grid.L_tan] * (grid.N - 1) + [0.5 * grid.H_wall]
    r2 = sum((x - c) ** 2 for x, c in zip(X, centre))
    ratios = np.array([gn_check(np.exp(-r2 / (2.0 * s * s)), grid, scheme, level) for s in scales])
    return ratios, float((ratios.max() - ratios.min()) / ratios.mean())


def gn_random_sweep(grid: Grid, scheme: ExponentScheme, samples: int, kmax: int = 4,
                    level: int = 0, seed: int = 0) -> float:
    """Largest :func:`gn_check` ratio over band-limited random scalar fields.

    Sample ``i`` uses its own generator seeded by ``(seed, i)``, so the same
    continuous fields are sampled on every grid."""
    modes = [m for m in np.ndindex(*([2 * kmax + 1] * (grid.N - 1) + [kmax + 1]))]
    modes = [tuple(k - kmax for k in m[:-1]) + (m[-1],) for m in modes]
    best = 0.0
    for i in range(samples):
        rng = np.random.default_rng([seed, i])
        v = mode_field(grid, rng, modes)
        r = gn_check(v, grid, scheme, level)
        if np.isfinite(r):
            best = max(best, r)
    return best


# ---------------------------------------------------------------------------
# nonlinear scaling
# ---------------------------------------------------------------------------

def nonlinear_scaling(u, Q, grid: Grid, params, scales, exponents):
    """Fitted exponent of ``||f(sU)||_r + ||grad G(sU)||_r`` in ``s`` for each ``r``."""
    out = {}
    vals = {float(r): [] for r in exponents}
    for s in scales:
        rn = rhs_norms(assemble_rhs(s * u, s * Q, grid, params), grid, exponents)
        for r in exponents:
            vals[float(r)].append(rn["f"][float(r)] + rn["gradG"][float(r)])
    for r, v in vals.items():
        out[r] = log_slope(scales, v)
    return out


# ---------------------------------------------------------------------------
# algebraic invariants
# ---------------------------------------------------------------------------

def _random_sym_traceless(rng, N, n):
    return to.project_sym_traceless(rng.standard_normal((N, N, n)))


def invariant_suite(seed: int = 42, samples: int = 1000, grid_n: int = 16) -> dict:
    """Largest residual of every algebraic invariant over ``samples`` random
    instances for ``N = 2`` and ``N = 3``. Returns ``{name: residual}``."""
    rng = np.random.default_rng(seed)
    res: dict[str, float] = {}

    def put(name, value):
        res[name] = max(res.get(name, 0.0), float(value))

    for N in (2, 3):
        prm = to.ModelParams(N=N, xi=float(rng.uniform(0.2, 2.0)) * rng.choice([-1, 1]),
                             a=float(rng.uniform(0.1, 2)), b=float(rng.uniform(0.1, 2)),
                             c=float(rng.uniform(0.1, 2)))
        n = samples
        Q = _random_sym_traceless(rng, N, n)
        put("sym_traceless_closure", to.sym_traceless_residual(Q))
        Fp = to.bulk_derivative(Q, prm)
        put("trace_bulk_derivative", np.max(np.abs(to.trace(Fp))))
        lapQ = _random_sym_traceless(rng, N, n)
        H = to.molecular_field(Q, lapQ, prm)
        put("molecular_field_sym_traceless", to.sym_traceless_residual(H))
        gQ = rng.standard_normal((N, N, N, n))
        gQ = 0.5 * (gQ + np.swapaxes(gQ, 1, 2))
        tau, sigma = to.stress_tensors(Q, H, gQ, prm)
        put("tau_symmetric", np.max(np.abs(tau - to.transpose(tau))))
        put("sigma_antisymmetric", np.max(np.abs(sigma + to.transpose(sigma))))
        J = rng.standard_normal((N, N, n))
        J = J - to.trace(J) / N * to.identity_like(J)
        S = to.coupling_tensor_S(J, Q, prm)
        put("trace_S_tracefree_gradient", np.max(np.abs(to.trace(S))))
        D, W = to.strain_and_vorticity(J)
        S0 = to.coupling_tensor_S(J, np.zeros_like(Q), prm)
        put("S_at_zero_Q_equals_beta_D", np.max(np.abs(S0 - prm.beta * D)))
        put("strain_vorticity_split", np.max(np.abs(D + W - J)))

        # tr G and the two G assemblies on a grid with a divergence-free velocity
        g = Grid(N, grid_n, grid_n + 1, 2.0 * math.pi, math.pi)
        modes = CENTRED_MODES[N]
        if N == 2:
            psi = mode_field(g, rng, modes) * np.sin(g.mesh()[-1]) ** 2
            u = np.stack([g.diff(psi, 1), -g.diff(psi, 0)])
        else:
            A = mode_field(g, rng, modes, (3,)) * np.sin(g.mesh()[-1]) ** 2
            u = np.stack([
                g.diff(A[2], 1) - g.diff(A[1], 2),
                g.diff(A[0], 2) - g.diff(A[2], 0),
                g.diff(A[1], 0) - g.diff(A[0], 1),
            ])
        Qg = to.project_sym_traceless(mode_field(g, rng, modes, (N, N)))
        G1 = assemble_G(u, Qg, g, prm)
        G2 = assemble_G_route2(u, Qg, g, prm)
        put("trace_G", np.max(np.abs(to.trace(G1))))
        put("symmetry_G", np.max(np.abs(G1 - to.transpose(G1))))
        put("G_route_equivalence", np.max(np.abs(G1 - G2)))
    return res
