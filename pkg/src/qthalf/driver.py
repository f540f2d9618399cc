"""Exponent bookkeeping, the weighted trajectory norm E, nonlinear simulation
and the Picard iteration with contraction measurement."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.integrate import trapezoid

from .grid import Grid, apply_boundary
from .linear import ModeSolver, Trajectory, cell_divergence, linear_evolve, project_solenoidal
from .nonlinear import assemble_rhs
from .tensor_ops import (
    ModelParams,
    bulk_energy,
    project_sym_traceless,
    sym_traceless_residual,
)

log = logging.getLogger(__name__)

__all__ = [
    "ExponentScheme",
    "exponent_setup",
    "WeightedNormReport",
    "weighted_norm_E",
    "surrogate_norm",
    "gn_check",
    "bulk_minimum",
    "total_energy",
    "simulate",
    "PicardRecord",
    "PicardResult",
    "picard_iterate",
    "smooth_bump",
    "small_data",
]


# ---------------------------------------------------------------------------
# exponents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentScheme:
    """Integrability exponents; the exact values are kept as fractions."""

    N: int
    theta: Fraction
    p: int
    q0: Fraction
    q1: Fraction
    q2: Fraction
    pairs: tuple  # (q, q_tilde, kappa) for the weighted semigroup estimates

    @property
    def q_list(self) -> tuple[float, float, float]:
        return float(self.q0), float(self.q1), float(self.q2)

    @property
    def theta_f(self) -> float:
        return float(self.theta)

    def as_dict(self) -> dict:
        return {
            "N": self.N,
            "theta": str(self.theta),
            "p": self.p,
            "q0": str(self.q0),
            "q1": str(self.q1),
            "q2": str(self.q2),
            "pairs": [[str(q), str(qt), str(k)] for q, qt, k in self.pairs],
        }


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x).limit_denominator(10**6)


def exponent_setup(N: int, theta, p_margin: int = 2) -> ExponentScheme:
    """Exponents ``1/q0 = (1+2 theta)/N``, ``1/q1 = (1+theta)/N``, ``1/q2 = theta/N``
    and the smallest integer ``p`` with ``p >= 2/theta + p_margin`` and ``p > 2/theta``.

    All identities are checked in exact rational arithmetic.
    """
    if N not in (2, 3):
        raise ValueError(f"N must be 2 or 3, got {N}")
    th = _as_fraction(theta)
    if not (0 < th < Fraction(1, 2)):
        raise ValueError(f"theta={theta} violates 0 < theta < 1/2")
    if p_margin < 0:
        raise ValueError("p_margin must be non-negative")
    q0 = N / (1 + 2 * th)
    q1 = N / (1 + th)
    q2 = N / th
    bound = 2 / th
    p = max(math.ceil(bound + p_margin), math.floor(bound) + 1)
    checks = {
        "1 < q0 < q1 < N < q2": 1 < q0 < q1 < N < q2,
        "1/q0 = 1/q1 + 1/q2": 1 / q0 == 1 / q1 + 1 / q2,
        "N(1/q1 - 1/q2) = 1": N * (1 / q1 - 1 / q2) == 1,
        "(1-theta)/q1 + theta/q2 = 1/N": (1 - th) / q1 + th / q2 == Fraction(1, N),
        "1/p < theta/2": Fraction(1, p) < th / 2,
    }
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        raise ValueError(f"exponent identities fail for N={N}, theta={th}: {failed}")
    pairs = ((q1, q0, N * (1 / q0 - 1 / q1)), (q2, q1, N * (1 / q1 - 1 / q2)))
    return ExponentScheme(N, th, p, q0, q1, q2, pairs)


# ---------------------------------------------------------------------------
# weighted norm
# ---------------------------------------------------------------------------

@dataclass
class WeightedNormReport:
    E_total: float
    components: dict
    T: float
    n_stamps: int
    tail_fraction: float

    def as_dict(self) -> dict:
        return {
            "E_total": self.E_total,
            "components": dict(sorted(self.components.items())),
            "T": self.T,
            "n_stamps": self.n_stamps,
            "tail_fraction": self.tail_fraction,
        }


def _lp_time(times, values, p):
    """``(int_0^T |v|^p dt)^{1/p}`` by the trapezoid rule; also the share of the
    integral coming from the last tenth of the horizon."""
    vp = np.abs(values) ** p
    total = trapezoid(vp, times)
    cut = times[-1] - 0.1 * (times[-1] - times[0])
    mask = times >= cut
    tail = trapezoid(vp[mask], times[mask]) if mask.sum() > 1 else 0.0
    return total ** (1.0 / p), (tail / total if total > 0 else 0.0)


def weighted_norm_E(traj: Trajectory, scheme: ExponentScheme) -> WeightedNormReport:
    """Finite-horizon surrogate of ``E(u, Q)``.

    For ``q`` in ``(q1, q2)``, with ``|(a, B)|_q = ||a||_{L_q} + ||grad B||_{L_q}``:
    ``||(1+t) d_t(u,Q)||``, ``||(1+t) grad^2(u,Q)||`` and ``||(1+t) grad Q||`` in
    ``L_p(0,T)``, plus the unweighted ``L_p(0,T)`` and ``L_inf(0,T)`` norms of
    ``(u, Q)``. ``d_t`` is a second-order difference on the stored stamps.
    """
    if len(traj) < 3:
        raise ValueError("trajectory needs at least 3 stored stamps for a time derivative")
    g = traj.grid
    t = np.asarray(traj.times, dtype=float)
    p = scheme.p
    du = np.gradient(traj.u, t, axis=0, edge_order=2)
    dQ = np.gradient(traj.Q, t, axis=0, edge_order=2)
    qs = (float(scheme.q1), float(scheme.q2))
    series = {q: {k: np.zeros(len(t)) for k in ("dt", "d2", "gQ", "U")} for q in qs}
    for k in range(len(t)):
        gQ = g.grad(traj.Q[k])
        gdQ = g.grad(dQ[k])
        d2u = g.gradient_stack(traj.u[k], 2)
        d3Q = g.gradient_stack(traj.Q[k], 3)
        for q in qs:
            s = series[q]
            nQ = g.lebesgue_norm(gQ, q)
            s["gQ"][k] = nQ
            s["U"][k] = g.lebesgue_norm(traj.u[k], q) + nQ
            s["dt"][k] = g.lebesgue_norm(du[k], q) + g.lebesgue_norm(gdQ, q)
            s["d2"][k] = g.lebesgue_norm(d2u, q) + g.lebesgue_norm(d3Q, q)
    comps = {}
    tails = []
    w = 1.0 + t
    for q in qs:
        s = series[q]
        tag = f"q{q:g}"
        for name, vals in (("weighted_dt", w * s["dt"]), ("weighted_d2", w * s["d2"]),
                           ("weighted_gradQ", w * s["gQ"]), ("Lp", s["U"])):
            val, tail = _lp_time(t, vals, p)
            comps[f"{tag}:{name}"] = float(val)
            tails.append(tail)
        comps[f"{tag}:Linf"] = float(np.max(s["U"]))
    total = float(sum(comps.values()))
    return WeightedNormReport(total, comps, float(t[-1]), len(t), float(max(tails)))


def surrogate_norm(u, Q, grid: Grid, scheme: ExponentScheme) -> float:
    """Data-size surrogate: ``sum_{i=1,2} (|U|_{q_i} + |grad^2 U|_{q_i}) + |U|_{q_0}``
    where ``|(u, Q)|_q = ||u||_{L_q} + ||grad Q||_{L_q}``. The second-derivative
    term stands in for the trace-space norm of the initial data."""
    g = grid
    gQ = g.grad(Q)
    d2u = g.gradient_stack(u, 2)
    d3Q = g.gradient_stack(Q, 3)
    total = 0.0
    for q in (float(scheme.q1), float(scheme.q2)):
        total += g.lebesgue_norm(u, q) + g.lebesgue_norm(gQ, q)
        total += g.lebesgue_norm(d2u, q) + g.lebesgue_norm(d3Q, q)
    q0 = float(scheme.q0)
    total += g.lebesgue_norm(u, q0) + g.lebesgue_norm(gQ, q0)
    return float(total)


# ---------------------------------------------------------------------------
# Gagliardo-Nirenberg ratio
# ---------------------------------------------------------------------------

def gn_check(v, grid: Grid, scheme: ExponentScheme, level: int = 0) -> float:
    """``||grad^l v||_inf / (||grad^{l+1} v||_{q1}^{1-theta} ||grad^{l+1} v||_{q2}^theta)``.

    Returns ``nan`` (and logs a warning) when the denominator vanishes.
    """
    if level not in (0, 1):
        raise ValueError("level must be 0 or 1")
    th = float(scheme.theta)
    num = grid.lebesgue_norm(grid.gradient_stack(v, level), math.inf)
    d = grid.gradient_stack(v, level + 1)
    n1 = grid.lebesgue_norm(d, float(scheme.q1))
    n2 = grid.lebesgue_norm(d, float(scheme.q2))
    den = n1 ** (1 - th) * n2**th
    if den == 0.0:
        log.warning("Gagliardo-Nirenberg ratio undefined: zero denominator")
        return float("nan")
    return float(num / den)


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def bulk_minimum(params: ModelParams) -> float:
    """Minimum of the bulk energy over symmetric traceless matrices.

    For ``N = 2`` the cubic term vanishes identically, so the minimum is 0 when
    ``a > 0``. For ``N = 3`` it is attained on uniaxial states
    ``Q = s (n n - I/3)`` and found from the roots of the 1-D derivative.
    """
    if params.N == 2:
        return 0.0
    a, b, c = params.a, params.b, params.c
    roots = np.roots([4.0 * c / 9.0, -6.0 * b / 27.0, 2.0 * a / 3.0, 0.0])
    cands = [0.0] + [r.real for r in roots if abs(r.imag) < 1e-12]
    return float(min(a * s**2 / 3 - 2 * b * s**3 / 27 + c * s**4 / 9 for s in cands))


def total_energy(u, Q, grid: Grid, params: ModelParams, f_min: float | None = None) -> float:
    """``1/2 ||u||_2^2 + int (1/2 |grad Q|^2 + F(Q) - F_min)``."""
    f_min = bulk_minimum(params) if f_min is None else f_min
    gQ = grid.grad(Q)
    dens = (
        0.5 * np.sum(u**2, axis=0)
        + 0.5 * np.sum(gQ**2, axis=(0, 1, 2))
        + bulk_energy(Q, params)
        - f_min
    )
    return float(np.sum(grid.weights * dens))


# ---------------------------------------------------------------------------
# nonlinear simulation
# ---------------------------------------------------------------------------

def _invariants(grid: Grid, u, Q) -> dict:
    gu = np.max(np.abs(grid.jacobian(u)))
    div = np.max(np.abs(cell_divergence(grid, u)))
    return {
        "sym_traceless": sym_traceless_residual(Q),
        "wall_u": float(max(np.max(np.abs(u[..., 0])), np.max(np.abs(u[..., -1])))),
        "div_rel": float(div / gu) if gu > 0 else float(div),
    }


def simulate(u0, Q0, grid: Grid, params: ModelParams, T: float, dt: float,
             nonlinear: bool = True, store_every: int = 1, diagnostics: bool = True,
             blowup_factor: float = 1e6, solver: ModeSolver | None = None) -> Trajectory:
    """IMEX time stepping of the full system: the coupled linear operator is
    implicit (one shifted resolvent solve per step) and ``(f, G)`` are explicit
    from the previous state. With ``nonlinear=False`` the call is exactly
    :func:`linear_evolve` with no forcing.

    Each step records energy and invariant residuals in ``diagnostics``; a
    state norm growing beyond ``blowup_factor`` times its initial value halts
    the run with ``status="halted"`` and a ``blowup`` entry.
    """
    u0 = np.asarray(u0, dtype=float)
    Q0 = np.asarray(Q0, dtype=float)
    f_min = bulk_minimum(params)
    ref = max(float(np.max(np.abs(u0))), float(np.max(np.abs(Q0))), 1e-300)
    records: list[dict] = []

    def monitor(n, t, u, Q):
        size = max(float(np.max(np.abs(u))), float(np.max(np.abs(Q))))
        if diagnostics:
            row = {"t": t, "energy": total_energy(u, Q, grid, params, f_min), "max_abs": size}
            row.update(_invariants(grid, u, Q))
            records.append(row)
        if not np.isfinite(size) or size > blowup_factor * ref:
            records.append({"t": t, "blowup": size / ref})
            log.error("blow-up detected at t=%g (growth %.3g)", t, size / ref)
            return True
        return False

    forcing = None
    if nonlinear:
        def forcing(n, t, u_prev, Q_prev):
            rhs = assemble_rhs(u_prev, Q_prev, grid, params)
            return rhs.f, rhs.G

    traj = linear_evolve(u0, Q0, grid, params, T, dt, forcing=forcing, store_every=store_every,
                         solver=solver, callback=monitor)
    if diagnostics:
        u, Q = traj.u[0], traj.Q[0]
        first = {"t": 0.0, "energy": total_energy(u, Q, grid, params, f_min),
                 "max_abs": max(float(np.max(np.abs(u))), float(np.max(np.abs(Q))))}
        first.update(_invariants(grid, u, Q))
        traj.diagnostics = [first] + records
    return traj


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------

@dataclass
class PicardRecord:
    k: int
    E: float
    E_diff: float | None
    delta: float | None
    residual: float

    def as_dict(self) -> dict:
        return {"k": self.k, "E": self.E, "E_diff": self.E_diff, "delta": self.delta,
                "residual": self.residual}


@dataclass
class PicardResult:
    records: list[PicardRecord]
    limit: Trajectory
    converged: bool
    diverging: bool
    reports: list[WeightedNormReport] = field(default_factory=list)

    @property
    def max_delta(self) -> float:
        ds = [r.delta for r in self.records if r.delta is not None]
        return max(ds) if ds else 0.0

    @property
    def final_residual(self) -> float:
        return self.records[-1].residual if self.records else 0.0


def picard_iterate(u0, Q0, grid: Grid, params: ModelParams, scheme: ExponentScheme, T: float,
                   dt: float, k_max: int = 12, tol: float = 1e-10,
                   delta_floor: float = 1e-10) -> PicardResult:
    """Iterate ``U^{k+1} = Phi(U^k)``: the linear problem with frozen right side
    ``(f(U^k), G(U^k))`` sampled at the new time level, same initial data each time.

    ``U^0 = Phi(0)`` is the free linear evolution. Record ``k`` holds
    ``E(U^k)``, ``E(U^k - U^{k-1})``, ``delta_k = E(U^{k+1} - U^k) / E(U^k - U^{k-1})``
    and the residual ``E(Phi(U^k) - U^k) / E(U^k)`` of ``U^k`` in the discrete
    nonlinear system. Iteration stops once the residual falls below ``tol``;
    ``delta_k`` is left undefined when its denominator is below
    ``delta_floor * E(U^k)`` (differences at roundoff level carry no information).
    Three consecutive ``delta_k > 1`` mark divergence (reported, not raised).
    """
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    solver = ModeSolver(grid, params, 1.0 / dt)

    def phi(prev: Trajectory | None) -> Trajectory:
        forcing = None
        if prev is not None:
            def forcing(n, t, u_old, Q_old):
                rhs = assemble_rhs(prev.u[n], prev.Q[n], grid, params)
                return rhs.f, rhs.G
        return linear_evolve(u0, Q0, grid, params, T, dt, forcing=forcing, solver=solver)

    iterates = [phi(None)]
    E_vals = [weighted_norm_E(iterates[0], scheme)]
    diffs: list[float | None] = [None]
    records: list[PicardRecord] = []
    converged = diverging = False
    run_above_one = 0
    for k in range(k_max):
        nxt = phi(iterates[-1])
        d_next = weighted_norm_E(nxt - iterates[-1], scheme).E_total
        Ek = E_vals[-1].E_total
        residual = d_next / Ek if Ek > 0 else 0.0
        d_prev = diffs[-1]
        delta = None
        if d_prev is not None and d_prev > delta_floor * Ek and d_prev > 0:
            delta = d_next / d_prev
        records.append(PicardRecord(k, Ek, d_prev, delta, residual))
        run_above_one = run_above_one + 1 if (delta is not None and delta > 1) else 0
        if run_above_one >= 3:
            diverging = True
            log.warning("Picard iteration diverging at k=%d", k)
            break
        if residual <= tol or Ek == 0.0:
            converged = True
            iterates.append(nxt)
            break
        iterates.append(nxt)
        E_vals.append(weighted_norm_E(nxt, scheme))
        diffs.append(d_next)
        iterates = iterates[-2:]
    return PicardResult(records, iterates[-1], converged, diverging, E_vals)


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

def smooth_bump(grid: Grid, centre, radius: float):
    """Compactly supported ``C^inf`` bump ``exp(1 - 1/(1 - r^2))`` (peak 1), with the
    tangential distance taken periodically."""
    X = grid.mesh()
    r2 = np.zeros(grid.shape)
    for j, (x, c) in enumerate(zip(X, centre)):
        d = x - c
        if j < grid.N - 1:
            d = (d + 0.5 * grid.L_tan) % grid.L_tan - 0.5 * grid.L_tan
        r2 = r2 + (d / radius) ** 2
    out = np.zeros(grid.shape)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def _random_sym_traceless(rng: np.random.Generator, N: int) -> np.ndarray:
    A = rng.standard_normal((N, N))
    return project_sym_traceless(A)


def small_data(grid: Grid, params: ModelParams, scheme: ExponentScheme, size: float,
               seed: int = 0, radius: float | None = None):
    """Divergence-free velocity (curl of bumps, then the discrete solenoidal
    projection) and a symmetric traceless ``Q`` bump, supported away from the
    walls and scaled to the surrogate norm ``size``."""
    rng = np.random.default_rng(seed)
    g, N = grid, grid.N
    R = radius if radius is not None else 0.35 * min(g.H_wall, g.L_tan)
    if not R < 0.5 * g.H_wall:
        raise ValueError("bump radius must be below half the wall distance")
    centre = [0.5 * g.L_tan] * (N - 1) + [0.5 * g.H_wall]
    shift = [0.1 * g.L_tan * rng.uniform(-1, 1) for _ in range(N - 1)] + [0.0]
    b1 = smooth_bump(g, centre, R)
    b2 = smooth_bump(g, [c + s for c, s in zip(centre, shift)], 0.8 * R)
    if N == 2:
        psi = rng.uniform(0.5, 1.5) * b1 + rng.uniform(-1, 1) * b2
        u = np.stack([g.diff(psi, 1), -g.diff(psi, 0)])
    else:
        A = [rng.uniform(-1, 1) * b1 + rng.uniform(-1, 1) * b2 for _ in range(3)]
        u = np.stack([
            g.diff(A[2], 1) - g.diff(A[1], 2),
            g.diff(A[0], 2) - g.diff(A[2], 0),
            g.diff(A[1], 0) - g.diff(A[0], 1),
        ])
    Q = _random_sym_traceless(rng, N)[..., None] * b1.ravel() + _random_sym_traceless(rng, N)[..., None] * b2.ravel()
    Q = Q.reshape((N, N) + g.shape)
    u, Q = apply_boundary(g, project_solenoidal(g, u), Q)
    s = surrogate_norm(u, Q, g, scheme)
    return u * (size / s), Q * (size / s)
