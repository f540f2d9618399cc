"""Linearized coupled Stokes / Q-tensor operator on the truncated half-space.

The linear problem, for data ``(f, G)`` and resolvent parameter ``lam``::

    lam u - lap u + grad p + beta Div(lap Q - a Q) = f,   div u = 0
    lam Q - beta D(u) - lap Q + a Q = G
    u = 0,  d_N Q = 0  on both walls

is solved per tangential Fourier mode as one sparse banded system in the
wall-normal direction. Unknown blocks per mode are ``u_1 .. u_N``, ``p`` and
the independent components of ``Q``. Velocity and Q use the grid nodes and the
grid's difference operators; the pressure lives on cell centres in x_N, with
continuity imposed per cell. Momentum and Q rows hold at interior nodes, with
``u = 0`` and one-sided ``d_N Q = 0`` rows at the walls.

In the tangential mean mode the pressure only balances the wall-normal
momentum; it is integrated from those rows and its top-wall value is pinned to
zero (the gauge).
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, apply_boundary
from .tensor_ops import ModelParams, project_sym_traceless

log = logging.getLogger(__name__)

__all__ = [
    "Sector",
    "ContourSpec",
    "ResolventSolution",
    "Trajectory",
    "SolverError",
    "QuadratureError",
    "q_components",
    "q_to_components",
    "components_to_q",
    "ModeSolver",
    "resolvent_solve",
    "centres_to_nodes",
    "cell_divergence",
    "project_solenoidal",
    "pressure_solve",
    "pressure_weak_residual",
    "apply_operator",
    "contour_nodes",
    "semigroup_apply",
    "linear_evolve",
    "step_norms",
]


class SolverError(RuntimeError):
    """A per-mode linear system could not be factorized."""


class QuadratureError(RuntimeError):
    """Contour quadrature failed its node-doubling check."""


# ---------------------------------------------------------------------------
# sector and contour
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sector:
    """Resolvent sector ``|arg lam| < pi - epsilon`` with ``tan(epsilon0) = |beta|/sqrt 2``."""

    beta: float
    epsilon: float = 0.70

    def __post_init__(self):
        if not self.epsilon0 < self.epsilon < math.pi / 2:
            raise ValueError(
                f"epsilon={self.epsilon} must lie in (epsilon0={self.epsilon0:.4f}, pi/2)"
            )

    @property
    def epsilon0(self) -> float:
        return math.atan(abs(self.beta) / math.sqrt(2.0))

    def contains(self, lam: complex) -> bool:
        lam = complex(lam)
        return lam != 0 and abs(cmath.phase(lam)) < math.pi - self.epsilon

    @classmethod
    def for_params(cls, params: ModelParams, epsilon: float | None = None) -> "Sector":
        if epsilon is None:
            eps0 = math.atan(abs(params.beta) / math.sqrt(2.0))
            epsilon = max(0.70, 0.5 * (eps0 + math.pi / 2)) if eps0 >= 0.70 else 0.70
        return cls(params.beta, epsilon)


@dataclass(frozen=True)
class ContourSpec:
    """Quadrature for ``S(t) = 1/(2 pi i) int_Gamma e^{lam t} R(lam) dlam``.

    ``omega`` and ``r_max`` default to ``1/t`` and ``40/t``. Ray nodes are
    spaced in ``log r`` (geometric spacing), arc nodes in the angle. ``rule``
    selects Gauss-Legendre (default) or the composite trapezoid rule on those
    variables.
    """

    omega: float | None = None
    n_ray: int = 64
    n_arc: int = 32
    r_max_factor: float = 40.0
    check_doubling: bool = False
    tol: float = 1e-6
    dt: float = 1e-3  # imex mode step
    rule: str = "gauss"

    def __post_init__(self):
        if self.rule not in ("gauss", "trapezoid"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if self.omega is not None and not self.omega > 0:
            raise ValueError("omega must be positive")
        if self.n_ray < 2 or self.n_arc < 2:
            raise ValueError("need at least two nodes per ray and on the arc")

    def radius(self, t: float) -> float:
        om = self.omega if self.omega is not None else 1.0 / t
        if om <= 0:
            raise ValueError("omega must be positive")
        return om


def _rule(kind: str, n: int):
    """Nodes and weights on [-1, 1]."""
    if kind == "gauss":
        return np.polynomial.legendre.leggauss(n)
    x = np.linspace(-1.0, 1.0, n)
    w = np.full(n, 2.0 / (n - 1))
    w[[0, -1]] *= 0.5
    return x, w


def contour_nodes(t: float, spec: ContourSpec, sector: Sector, half: bool = True):
    """Nodes ``lam_k`` and weights ``w_k`` with ``S(t)x ~ sum w_k e^{lam_k t} R(lam_k) x``.

    With ``half=True`` only the upper half of the contour is returned and the
    caller must take ``Im(sum) / pi`` instead (valid for real data, since
    ``R(conj lam) = conj R(lam)``); the weights then omit the ``1/(2 pi i)``.
    """
    om = spec.radius(t)
    r_max = spec.r_max_factor / t
    if r_max <= om:
        r_max = 10.0 * om
    phi = math.pi - sector.epsilon
    xr, wr = _rule(spec.rule, spec.n_ray)
    xa, wa = _rule(spec.rule, spec.n_arc)
    smax = math.log(r_max / om)
    s = 0.5 * smax * (xr + 1.0)
    ws = 0.5 * smax * wr
    r = om * np.exp(s)
    lam_ray = r * cmath.exp(1j * phi)
    w_ray = ws * r * cmath.exp(1j * phi)  # dlam = e^{i phi} r ds
    if half:
        eta = 0.5 * phi * (xa + 1.0)
        weta = 0.5 * phi * wa
    else:
        eta = phi * xa
        weta = phi * wa
    lam_arc = om * np.exp(1j * eta)
    w_arc = weta * 1j * lam_arc  # dlam = i lam deta
    if half:
        return np.concatenate([lam_arc, lam_ray]), np.concatenate([w_arc, w_ray])
    lam_low = np.conj(lam_ray)
    w_low = -np.conj(w_ray)  # traversed inward
    lam = np.concatenate([lam_low, lam_arc, lam_ray])
    w = np.concatenate([w_low, w_arc, w_ray]) / (2j * math.pi)
    return lam, w


# ---------------------------------------------------------------------------
# Q component bookkeeping
# ---------------------------------------------------------------------------

def q_components(N: int) -> list[tuple[int, int]]:
    """Independent entries of a symmetric traceless ``N x N`` matrix."""
    diag = [(i, i) for i in range(N - 1)]
    off = [(i, j) for i in range(N) for j in range(i + 1, N)]
    return diag + off


def _basis_matrices(N: int) -> list[np.ndarray]:
    mats = []
    for i, j in q_components(N):
        E = np.zeros((N, N))
        if i == j:
            E[i, i] = 1.0
            E[N - 1, N - 1] = -1.0
        else:
            E[i, j] = E[j, i] = 1.0
        mats.append(E)
    return mats


def q_to_components(Q) -> np.ndarray:
    N = Q.shape[0]
    return np.stack([Q[i, j] for i, j in q_components(N)])


def components_to_q(qc, N: int) -> np.ndarray:
    mats = _basis_matrices(N)
    return np.einsum("cij,c...->ij...", np.stack(mats), qc)


# ---------------------------------------------------------------------------
# per-mode system
# ---------------------------------------------------------------------------

def _stagger_matrices(n: int, h: float):
    """Node/cell-centre operators in x_N: averaging ``A`` and difference ``Dc``
    (centres -> nodes, zero wall rows) and their centre-row counterparts."""
    rows = np.arange(1, n - 1)
    avg = sp.csr_matrix(
        (np.full(2 * (n - 2), 0.5), (np.repeat(rows, 2), np.ravel(np.c_[rows - 1, rows]))),
        shape=(n, n - 1),
    )
    dif = sp.csr_matrix(
        (np.tile([-1.0 / h, 1.0 / h], n - 2), (np.repeat(rows, 2), np.ravel(np.c_[rows - 1, rows]))),
        shape=(n, n - 1),
    )
    c = np.arange(n - 1)
    cavg = sp.csr_matrix((np.full(2 * (n - 1), 0.5), (np.repeat(c, 2), np.ravel(np.c_[c, c + 1]))),
                         shape=(n - 1, n))
    cdif = sp.csr_matrix(
        (np.tile([-1.0 / h, 1.0 / h], n - 1), (np.repeat(c, 2), np.ravel(np.c_[c, c + 1]))),
        shape=(n - 1, n),
    )
    return avg, dif, cavg, cdif


def centres_to_nodes(pc: np.ndarray) -> np.ndarray:
    """Second-order interpolation of cell-centre values (last axis) to nodes."""
    out = np.empty(pc.shape[:-1] + (pc.shape[-1] + 1,), dtype=pc.dtype)
    out[..., 1:-1] = 0.5 * (pc[..., 1:] + pc[..., :-1])
    out[..., 0] = 1.5 * pc[..., 0] - 0.5 * pc[..., 1]
    out[..., -1] = 1.5 * pc[..., -1] - 0.5 * pc[..., -2]
    return out


class _ModeOperator:
    """Sparse per-mode matrix ``K + lam M`` for one tangential wavenumber.

    Velocity and Q live on the grid nodes in x_N, the pressure on the cell
    centres between them; continuity is imposed on each cell. This staggering
    removes the odd-even pressure mode a fully collocated layout would have.
    """

    def __init__(self, grid: Grid, params: ModelParams, kvec: np.ndarray):
        self.grid = grid
        self.params = params
        self.kvec = np.asarray(kvec, dtype=float)
        self.mean_mode = not np.any(self.kvec)
        N, n = grid.N, grid.n_wall
        self.m = len(q_components(N))
        self.nf = N + 1 + self.m
        self.sizes = [n] * N + [n - 1] + [n] * self.m
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.size = int(self.offsets[-1])
        self._build()

    def _build(self):
        g, prm = self.grid, self.params
        N, n, m, beta = g.N, g.n_wall, self.m, prm.beta
        I = sp.identity(n, format="csr", dtype=complex)
        k2 = float(np.sum(self.kvec**2))
        D1 = g.D1.astype(complex)
        D2 = g.D2.astype(complex)
        avg, dif, cavg, cdif = _stagger_matrices(n, g.h_wall)
        dirs = [1j * k * I for k in self.kvec] + [D1]
        grad_p = [1j * k * avg for k in self.kvec] + [dif]
        div_rows = [1j * k * cavg for k in self.kvec] + [cdif]
        lap = D2 - k2 * I
        LQ = lap - prm.a * I
        interior = np.ones(n)
        interior[[0, -1]] = 0.0
        Pint = sp.diags(interior).astype(complex)
        walls = sp.diags(1.0 - interior).astype(complex)
        bases = _basis_matrices(N)
        comps = q_components(N)
        ip = N
        iq = list(range(N + 1, N + 1 + m))

        K = [[None] * self.nf for _ in range(self.nf)]
        mass = [np.zeros(s) for s in self.sizes]

        for i in range(N):
            K[i][i] = Pint @ (-lap) + walls
            mass[i] = interior.copy()
            K[i][ip] = grad_p[i].astype(complex)
            for c in range(m):
                terms = [bases[c][i, j] * (dirs[j] @ LQ) for j in range(N) if bases[c][i, j] != 0.0]
                if terms:
                    K[i][iq[c]] = beta * (Pint @ sum(terms[1:], terms[0]))
        for j in range(N):
            K[ip][j] = div_rows[j].astype(complex)
        for c, (i, j) in enumerate(comps):
            K[iq[c]][iq[c]] = Pint @ (prm.a * I - lap) + walls @ D1
            mass[iq[c]] = interior.copy()
            Du: dict[int, sp.spmatrix] = {}
            Du[i] = 0.5 * dirs[j]
            Du[j] = Du[j] + 0.5 * dirs[i] if j in Du else 0.5 * dirs[i]
            for comp, op in Du.items():
                K[iq[c]][comp] = -beta * (Pint @ op)

        if self.mean_mode:
            # u_N vanishes identically; the centre pressure is integrated from the
            # wall-normal momentum rows and its extrapolated top-wall value pinned to 0.
            last = N - 1
            for col in range(self.nf):
                K[last][col] = None
                K[ip][col] = None
            K[last][last] = I
            mass[last][:] = 0.0
            rows = sp.csr_matrix(dif[1:-1])
            gauge = sp.csr_matrix(([-0.5, 1.5], ([0, 0], [n - 3, n - 2])), shape=(1, n - 1))
            K[ip][ip] = sp.vstack([rows, gauge]).astype(complex)
            for c in range(m):
                e = bases[c][N - 1, N - 1]
                if e != 0.0:
                    blk = (D1 @ LQ)[1:-1]
                    K[ip][iq[c]] = beta * e * sp.vstack([blk, sp.csr_matrix((1, n))])
            for i in range(N - 1):
                K[i][ip] = sp.csr_matrix((n, n - 1), dtype=complex)

        self.K = sp.bmat(K, format="csc", dtype=complex)
        self.M = sp.diags(np.concatenate(mass)).astype(complex).tocsc()

    def matrix(self, lam: complex) -> sp.csc_matrix:
        return (self.K + lam * self.M).tocsc()

    def rhs(self, fh: np.ndarray, Gh: np.ndarray) -> np.ndarray:
        """``fh``: (N, n) mode data; ``Gh``: (m, n) component data."""
        N, n = self.grid.N, self.grid.n_wall
        parts = [np.zeros(s, dtype=complex) for s in self.sizes]
        for i in range(N):
            parts[i][1:-1] = fh[i, 1:-1]
        for c in range(self.m):
            parts[N + 1 + c][1:-1] = Gh[c, 1:-1]
        if self.mean_mode:
            parts[N - 1][:] = 0.0
            parts[N][: n - 2] = fh[N - 1, 1:-1]
        return np.concatenate(parts)

    def split(self, x: np.ndarray):
        N = self.grid.N
        blocks = [x[self.offsets[b] : self.offsets[b + 1]] for b in range(self.nf)]
        return np.stack(blocks[:N]), blocks[N], np.stack(blocks[N + 1 :])


@lru_cache(maxsize=4096)
def _mode_operator(grid: Grid, params: ModelParams, kvec: tuple[float, ...]) -> _ModeOperator:
    return _ModeOperator(grid, params, np.array(kvec))


class ModeSolver:
    """Factorized per-mode systems at one fixed ``lam`` (factorizations cached).

    ``solve`` returns the pressure interpolated to the grid nodes.
    """

    def __init__(self, grid: Grid, params: ModelParams, lam: complex):
        self.grid = grid
        self.params = params
        self.lam = complex(lam)
        self._mats: dict[tuple[int, ...], sp.csc_matrix] = {}
        self._lu: dict[tuple[int, ...], object] = {}

    def operator(self, idx) -> _ModeOperator:
        kvec = tuple(float(k) for k in self.grid.kvecs[(slice(None),) + idx])
        return _mode_operator(self.grid, self.params, kvec)

    def matrix(self, idx) -> sp.csc_matrix:
        A = self._mats.get(idx)
        if A is None:
            A = self.operator(idx).matrix(self.lam)
            self._mats[idx] = A
        return A

    def _factor(self, idx):
        lu = self._lu.get(idx)
        if lu is None:
            op = self.operator(idx)
            try:
                lu = spla.splu(self.matrix(idx))
            except RuntimeError as exc:
                raise SolverError(
                    f"singular mode matrix at wavenumber {op.kvec.tolist()}, lam={self.lam}"
                ) from exc
            self._lu[idx] = lu
        return lu

    def solve_modes(self, fh: np.ndarray, Gch: np.ndarray, residual: bool = True):
        """Solve every mode. ``fh``: (N, *shape) tangentially transformed data,
        ``Gch``: (m, *shape). Returns transformed ``(u, p_centres, qc)`` and the
        relative residual of the assembled systems, per equation group."""
        g = self.grid
        N = g.N
        uh = np.zeros(fh.shape, dtype=complex)
        pch = np.zeros(g.tan_shape + (g.n_wall - 1,), dtype=complex)
        qh = np.zeros(Gch.shape, dtype=complex)
        rnum = np.zeros(3)
        rden = np.zeros(3)
        for idx in np.ndindex(*g.tan_shape):
            sl = (slice(None),) + idx
            op = self.operator(idx)
            b = op.rhs(fh[sl], Gch[sl])
            if not np.any(b):
                continue
            x = self._factor(idx).solve(b)
            if residual:
                A = self.matrix(idx)
                r = A @ x - b
                # scale: data plus the size of the largest single term in each row
                scale = abs(A) @ np.abs(x) + np.abs(b)
                o = op.offsets
                for grp, (lo, hi) in enumerate(((o[0], o[N]), (o[N], o[N + 1]), (o[N + 1], o[-1]))):
                    rnum[grp] = max(rnum[grp], float(np.max(np.abs(r[lo:hi]), initial=0.0)))
                    rden[grp] = max(rden[grp], float(np.max(scale[lo:hi], initial=0.0)))
            uh[sl], pch[idx], qh[sl] = op.split(x)
        resid = {
            name: (rnum[i] / rden[i] if rden[i] > 0 else 0.0)
            for i, name in enumerate(("momentum", "continuity", "q_equation"))
        }
        return uh, pch, qh, resid

    def solve(self, f, G, residual: bool = True):
        """Physical-space solve. Returns ``(u, Q, p, residuals)``; ``residuals`` maps
        each equation group to its relative residual (max row defect over the
        max row magnitude)."""
        g = self.grid
        f = np.asarray(f)
        Gc = q_to_components(project_sym_traceless(np.asarray(G)))
        real = np.isrealobj(f) and np.isrealobj(Gc) and self.lam.imag == 0.0
        uh, pch, qh, resid = self.solve_modes(g.fft_tan(f), g.fft_tan(Gc), residual)
        ph = centres_to_nodes(pch)
        u = g.ifft_tan(uh)
        p = g.ifft_tan(ph)
        qc = g.ifft_tan(qh)
        if real:
            u, p, qc = u.real, p.real, qc.real
        # the wall rows are identity rows; remove transform roundoff there
        u[..., 0] = 0.0
        u[..., -1] = 0.0
        return u, components_to_q(qc, g.N), p, resid


def cell_divergence(grid: Grid, u) -> np.ndarray:
    """Discrete divergence the solver enforces: on each cell between adjacent
    x_N nodes, tangential derivatives of the averaged velocity plus the
    difference quotient of ``u_N``. Shape ``tan_shape + (n_wall - 1,)``."""
    g = grid
    u = np.asarray(u)
    out = (u[g.N - 1][..., 1:] - u[g.N - 1][..., :-1]) / g.h_wall
    for j in range(g.N - 1):
        dj = g.diff(u[j], j)
        out = out + 0.5 * (dj[..., 1:] + dj[..., :-1])
    return out


def project_solenoidal(grid: Grid, u) -> np.ndarray:
    """Discrete Leray projection onto fields with zero wall values and zero
    :func:`cell_divergence`: per mode, ``v + grad_h pi = u`` at interior nodes,
    ``v = 0`` on the walls and ``div_h v = 0`` on every cell. Fields that are
    already discretely solenoidal are returned unchanged (to roundoff)."""
    g = grid
    N, n = g.N, g.n_wall
    u = np.asarray(u)
    uh = g.fft_tan(u)
    vh = np.zeros_like(uh, dtype=complex)
    avg, dif, cavg, cdif = _stagger_matrices(n, g.h_wall)
    interior = np.ones(n)
    interior[[0, -1]] = 0.0
    Pint = sp.diags(interior)
    for idx in np.ndindex(*g.tan_shape):
        sl = (slice(None),) + idx
        kvec = g.kvecs[sl]
        if not np.any(kvec):
            vh[sl] = uh[sl] * interior
            vh[(N - 1,) + idx] = 0.0
            continue
        grad_p = [1j * k * avg for k in kvec] + [dif]
        div_rows = [1j * k * cavg for k in kvec] + [cdif]
        blocks = [[None] * (N + 1) for _ in range(N + 1)]
        for i in range(N):
            blocks[i][i] = sp.identity(n, format="csr")
            blocks[i][N] = grad_p[i]
            blocks[N][i] = div_rows[i]
        A = sp.bmat(blocks, format="csc", dtype=complex)
        b = np.concatenate([(uh[sl] * interior).ravel(), np.zeros(n - 1)])
        x = spla.spsolve(A, b)
        vh[sl] = x[: N * n].reshape(N, n)
    v = g.ifft_tan(vh)
    return v.real if np.isrealobj(u) else v


@dataclass
class ResolventSolution:
    u: np.ndarray
    Q: np.ndarray
    p: np.ndarray
    residuals: dict

    @property
    def residual(self) -> float:
        return max(self.residuals.values())


def resolvent_solve(lam, f, G, grid: Grid, params: ModelParams, sector: Sector | None = None,
                    solver: ModeSolver | None = None, tol: float = 1e-8) -> ResolventSolution:
    """Solve the resolvent problem at ``lam`` for data ``(f, G)``.

    Raises ``ValueError`` if ``lam`` lies outside the sector and
    :class:`SolverError` if a mode matrix is singular.
    """
    sector = sector or Sector.for_params(params)
    if not sector.contains(lam):
        raise ValueError(f"lam={lam} lies outside the sector |arg lam| < pi - {sector.epsilon}")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(G))):
        raise ValueError("non-finite resolvent data")
    if solver is None or solver.lam != complex(lam):
        solver = ModeSolver(grid, params, lam)
    u, Q, p, resid = solver.solve(f, G)
    out = ResolventSolution(u, Q, p, resid)
    if out.residual > tol:
        raise SolverError(f"resolvent residual {out.residual:.3e} exceeds {tol:.1e} at lam={lam}")
    return out


# ---------------------------------------------------------------------------
# weak Dirichlet-Neumann pressure
# ---------------------------------------------------------------------------

def _p1_matrices(grid: Grid):
    n, h = grid.n_wall, grid.h_wall
    main = np.full(n, 2.0 / h)
    main[[0, -1]] = 1.0 / h
    stiff = sp.diags([np.full(n - 1, -1.0 / h), main, np.full(n - 1, -1.0 / h)], [-1, 0, 1])
    mm = np.full(n, 4.0 * h / 6.0)
    mm[[0, -1]] = 2.0 * h / 6.0
    mass = sp.diags([np.full(n - 1, h / 6.0), mm, np.full(n - 1, h / 6.0)], [-1, 0, 1])
    # (g, phi') for piecewise-linear g: row j collects int g phi_j'
    half = 0.5
    cmain = np.zeros(n)
    cmain[0] = -half
    cmain[-1] = half
    cgrad = sp.diags([np.full(n - 1, half), cmain, np.full(n - 1, -half)], [-1, 0, 1])
    return stiff.tocsr(), mass.tocsr(), cgrad.tocsr()


def _weak_forms_mode(grid, kvec, g_t, g_n, p):
    """Bilinear ``(grad p, grad phi)`` and linear ``(g, grad phi)`` forms as vectors in phi."""
    stiff, mass, cgrad = _p1_matrices(grid)
    k2 = float(np.sum(kvec**2))
    lhs = stiff @ p + k2 * (mass @ p)
    rhs = cgrad @ g_n
    for kj, gj in zip(kvec, g_t):
        rhs = rhs - 1j * kj * (mass @ gj)  # (g_j, d_j phi) with d_j phi = i k_j phi, conjugated
    return lhs, rhs


def _pressure_data(grid: Grid, params: ModelParams, u, Q):
    g = grid
    M = np.stack([np.stack([g.laplacian(Q[i, j]) for j in range(g.N)]) for i in range(g.N)])
    M = M - params.a * Q
    lap_u = np.stack([g.laplacian(u[i]) for i in range(g.N)])
    return lap_u - params.beta * g.Div(M)


def pressure_solve(u, Q, grid: Grid, params: ModelParams, data=None):
    """``p = K(u, Q)`` from the weak Dirichlet-Neumann problem.

    ``(grad p, grad phi) = (lap u - beta Div(lap Q - a Q), grad phi)`` for all
    ``phi`` vanishing on ``x_N = 0``; ``p = 0`` there and the condition at the top
    wall is the natural one of the weak form. Discretized with piecewise-linear
    elements in ``x_N`` (one tridiagonal solve per tangential mode). ``data`` may
    be given directly instead of ``(u, Q)``, e.g. a forcing ``f`` for ``K_2(f)``.
    """
    g = grid
    gv = _pressure_data(g, params, u, Q) if data is None else np.asarray(data)
    gh = g.fft_tan(gv)
    ph = np.zeros(g.shape, dtype=complex)
    stiff, mass, cgrad = _p1_matrices(g)
    for idx in np.ndindex(*g.tan_shape):
        kvec = g.kvecs[(slice(None),) + idx]
        col = gh[(slice(None),) + idx]
        if not np.any(col):
            continue
        k2 = float(np.sum(kvec**2))
        A = (stiff + k2 * mass).tolil()
        _, rhs = _weak_forms_mode(g, kvec, col[: g.N - 1], col[g.N - 1], np.zeros(g.n_wall))
        A[0, :] = 0.0
        A[0, 0] = 1.0
        rhs = np.array(rhs, dtype=complex)
        rhs[0] = 0.0
        ph[idx] = spla.spsolve(A.tocsc(), rhs)
    p = g.ifft_tan(ph)
    return p.real if np.isrealobj(gv) else p


def pressure_weak_residual(p, data, phi, grid: Grid) -> float:
    """Relative discrete weak-form defect ``|(grad p - g, grad phi)| / |(g, grad phi)|``.

    ``phi`` must vanish on ``x_N = 0``; the pairing is the same piecewise-linear
    form used by :func:`pressure_solve`, summed over tangential modes.
    """
    g = grid
    ph, gh, fh = g.fft_tan(p), g.fft_tan(data), g.fft_tan(phi)
    num = 0.0 + 0j
    den = 0.0
    for idx in np.ndindex(*g.tan_shape):
        kvec = g.kvecs[(slice(None),) + idx]
        col = gh[(slice(None),) + idx]
        lhs, rhs = _weak_forms_mode(g, kvec, col[: g.N - 1], col[g.N - 1], ph[idx])
        phic = np.conj(fh[idx])
        num += np.dot(lhs - rhs, phic)
        den += abs(np.dot(rhs, phic))
    return float(abs(num) / den) if den > 0 else float(abs(num))


def apply_operator(u, Q, grid: Grid, params: ModelParams):
    """``A_q(u, Q) = (lap u - grad K(u,Q) - beta Div(lap Q - aQ), beta D(u) + lap Q - a Q)``."""
    g = grid
    K = pressure_solve(u, Q, g, params)
    gv = _pressure_data(g, params, u, Q)
    Jud = g.jacobian(u)
    D = 0.5 * (Jud + np.swapaxes(Jud, 0, 1))
    lapQ = np.stack([np.stack([g.laplacian(Q[i, j]) for j in range(g.N)]) for i in range(g.N)])
    return gv - g.grad(K), params.beta * D + lapQ - params.a * Q


# ---------------------------------------------------------------------------
# semigroup and time stepping
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Stored states ``u[k], Q[k]`` at ``times[k]`` plus per-step diagnostics."""

    grid: Grid
    times: np.ndarray
    u: np.ndarray
    Q: np.ndarray
    p: np.ndarray | None = None
    diagnostics: list[dict] = field(default_factory=list)
    status: str = "ok"

    def __len__(self):
        return len(self.times)

    def scaled(self, c: float) -> "Trajectory":
        p = None if self.p is None else c * self.p
        return Trajectory(self.grid, self.times.copy(), c * self.u, c * self.Q, p, [])

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        if not np.array_equal(self.times, other.times):
            raise ValueError("trajectories have different time stamps")
        return Trajectory(self.grid, self.times.copy(), self.u - other.u, self.Q - other.Q)


def _contour_apply(t, u0, Q0, grid, params, spec, sector, cache):
    real = np.isrealobj(u0) and np.isrealobj(Q0)
    lams, ws = contour_nodes(t, spec, sector, half=real)
    acc_u = np.zeros(u0.shape, dtype=complex)
    acc_Q = np.zeros(Q0.shape, dtype=complex)
    for lam, w in zip(lams, ws):
        solver = cache.get(lam) if cache is not None else None
        if solver is None:
            solver = ModeSolver(grid, params, lam)
            if cache is not None:
                cache[lam] = solver
        u, Q, _, _ = solver.solve(u0, Q0)
        e = w * cmath.exp(lam * t)
        acc_u += e * u
        acc_Q += e * Q
    if real:
        return acc_u.imag / math.pi, acc_Q.imag / math.pi
    return acc_u, acc_Q


def semigroup_apply(t: float, u0, Q0, grid: Grid, params: ModelParams, mode: str = "contour",
                    spec: ContourSpec | None = None, sector: Sector | None = None,
                    cache: dict | None = None):
    """Apply the linear semigroup ``T(t)`` to ``(u0, Q0)``.

    ``mode='contour'`` evaluates the contour integral over ``Gamma_omega`` with one
    resolvent solve per node; ``mode='imex'`` steps the linear problem with
    Crank-Nicolson (implicit-Euler start) using ``spec.dt``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    spec = spec or ContourSpec()
    sector = sector or Sector.for_params(params)
    u0 = np.asarray(u0)
    Q0 = np.asarray(Q0)
    if not (np.any(u0) or np.any(Q0)):
        return np.zeros_like(u0, dtype=float), np.zeros_like(Q0, dtype=float)
    if mode == "imex":
        nsteps = max(1, int(round(t / spec.dt)))
        traj = linear_evolve(u0, Q0, grid, params, t, t / nsteps, store_every=nsteps, scheme="cn")
        return traj.u[-1], traj.Q[-1]
    if mode != "contour":
        raise ValueError(f"unknown semigroup mode {mode!r}")
    u, Q = _contour_apply(t, u0, Q0, grid, params, spec, sector, cache)
    if spec.check_doubling:
        fine = ContourSpec(spec.omega, 2 * spec.n_ray, 2 * spec.n_arc, spec.r_max_factor, rule=spec.rule)
        u2, Q2 = _contour_apply(t, u0, Q0, grid, params, fine, sector, None)
        scale = max(np.max(np.abs(u2)), np.max(np.abs(Q2)), 1e-300)
        change = max(np.max(np.abs(u - u2)), np.max(np.abs(Q - Q2))) / scale
        if change > spec.tol:
            raise QuadratureError(f"contour quadrature changed by {change:.2e} under node doubling")
        u, Q = u2, Q2
    return u, Q


Forcing = Callable[[int, float, np.ndarray, np.ndarray], "tuple[np.ndarray, np.ndarray] | None"]


def step_norms(grid: Grid, u, Q, u_prev, Q_prev, dt: float, exponents) -> dict:
    """``||(d_t, grad^2) u||_{L_q}`` and ``||(d_t, grad^2) Q||_{Hdot^1_q}`` for one step,
    with ``d_t`` the backward difference quotient."""
    out = {}
    du = (u - u_prev) / dt
    dQ = grid.grad((Q - Q_prev) / dt)
    d2u = grid.gradient_stack(u, 2)
    d3Q = grid.gradient_stack(Q, 3)
    for q in exponents:
        q = float(q)
        out[f"dt_q{q:g}"] = grid.lebesgue_norm(du, q) + grid.lebesgue_norm(dQ, q)
        out[f"d2_q{q:g}"] = grid.lebesgue_norm(d2u, q) + grid.lebesgue_norm(d3Q, q)
    return out


def linear_evolve(u0, Q0, grid: Grid, params: ModelParams, T: float, dt: float,
                  forcing: Forcing | None = None, store_every: int = 1,
                  solver: ModeSolver | None = None, diagnostics: bool = False,
                  norm_exponents: Sequence[float] = (),
                  callback: Callable | None = None, scheme: str = "euler") -> Trajectory:
    """Implicit time stepping of ``dU/dt = A U + F``.

    ``scheme='euler'``: each step is one resolvent solve at ``lam = 1/dt`` with
    data ``U^n / dt + F^{n+1}``. ``scheme='cn'``: Crank-Nicolson written as one
    solve at ``lam = 2/dt``, ``W = R(2/dt)(2 U^n / dt + F^{n+1/2})`` and
    ``U^{n+1} = 2W - U^n``; the first step is two implicit-Euler half steps
    (same ``lam``) to damp incompatible initial components.

    ``forcing(n, t_n, u_prev, Q_prev)`` returns the forcing ``(f, G)`` used in the
    step that produces level ``n`` (or ``None``); the previous state is passed
    so explicit treatments are possible. ``callback(n, t, u, Q)`` sees every new
    state and halts the run by returning ``True`` (the trajectory's ``status``
    is then ``"halted"``). With ``norm_exponents`` the per-step
    ``(d_t, grad^2)`` norms are recorded in ``diagnostics``.
    """
    if scheme not in ("euler", "cn"):
        raise ValueError(f"unknown time scheme {scheme!r}")
    nsteps = int(round(T / dt))
    if nsteps < 1 or not math.isclose(nsteps * dt, T, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    lam = (1.0 if scheme == "euler" else 2.0) / dt
    if solver is None or solver.lam != complex(lam):
        solver = ModeSolver(grid, params, lam)
    u, Q = apply_boundary(grid, np.asarray(u0, dtype=float), project_sym_traceless(np.asarray(Q0, dtype=float)))
    times = [0.0]
    us, Qs, ps = [u], [Q], [np.zeros(grid.shape)]
    diag = []
    record = diagnostics or bool(norm_exponents)
    status = "ok"

    def implicit(uu, QQ, extra):
        fu, fQ = uu * lam, QQ * lam
        if extra is not None:
            fu = fu + extra[0]
            fQ = fQ + extra[1]
        return solver.solve(fu, fQ, residual=diagnostics)

    for n in range(1, nsteps + 1):
        t = n * dt
        extra = forcing(n, t, u, Q) if forcing is not None else None
        u_prev, Q_prev = u, Q
        if scheme == "euler":
            u, Q, p, resid = implicit(u, Q, extra)
        elif n == 1:
            uh, Qh, _, _ = implicit(u, Q, extra)
            u, Q, p, resid = implicit(uh, Qh, extra)
        else:
            w, W, p, resid = implicit(u, Q, extra)
            u, Q = 2.0 * w - u_prev, 2.0 * W - Q_prev
        if record:
            row = {"t": t}
            if diagnostics:
                row["residual"] = max(resid.values())
            row.update(step_norms(grid, u, Q, u_prev, Q_prev, dt, norm_exponents))
            diag.append(row)
        halt = bool(callback(n, t, u, Q)) if callback is not None else False
        if halt or n % store_every == 0 or n == nsteps:
            times.append(t)
            us.append(u)
            Qs.append(Q)
            ps.append(p)
        if halt:
            status = "halted"
            break
    return Trajectory(grid, np.array(times), np.array(us), np.array(Qs), np.array(ps), diag, status)
