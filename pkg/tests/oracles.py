"""Independent reference solutions used by the test-suite.

Manufactured solutions are built symbolically with sympy: a smooth
``(u*, Q*, p*)`` satisfying the wall conditions is pushed through the
continuous linear operator to obtain the data ``(f, G)``. The solver never
sees the exact fields, so agreement under refinement checks the whole
discretization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import sympy as S

from qthalf.grid import Grid
from qthalf.tensor_ops import ModelParams


@dataclass
class Manufactured:
    N: int
    lam: complex
    params: ModelParams
    u: list
    Q: list
    p: object
    f: list
    G: list
    symbols: tuple

    def _ev(self, expr, mesh):
        fn = S.lambdify(self.symbols, expr, "numpy")
        return np.broadcast_to(np.asarray(fn(*mesh), dtype=complex), mesh[0].shape).copy()

    def sample(self, grid: Grid):
        m = grid.mesh()
        N = self.N
        ev = lambda e: self._ev(e, m)  # noqa: E731
        f = np.stack([ev(e) for e in self.f])
        G = np.array([[ev(self.G[i][j]) for j in range(N)] for i in range(N)])
        u = np.stack([ev(e) for e in self.u])
        Q = np.array([[ev(self.Q[i][j]) for j in range(N)] for i in range(N)])
        return f, G, u, Q, ev(self.p)


def _operator_data(N, X, u, Q, p, lam, params):
    lap = lambda g: sum(S.diff(g, v, 2) for v in X)  # noqa: E731
    beta = params.beta
    M = [[lap(Q[i][j]) - params.a * Q[i][j] for j in range(N)] for i in range(N)]
    f = [lam * u[i] - lap(u[i]) + S.diff(p, X[i]) + beta * sum(S.diff(M[i][j], X[j]) for j in range(N))
         for i in range(N)]
    D = [[(S.diff(u[i], X[j]) + S.diff(u[j], X[i])) / 2 for j in range(N)] for i in range(N)]
    G = [[lam * Q[i][j] - beta * D[i][j] - lap(Q[i][j]) + params.a * Q[i][j] for j in range(N)]
         for i in range(N)]
    return f, G


def manufactured_2d(lam=1.0 + 0.5j, params=None) -> Manufactured:
    """Divergence-free ``u*`` from a stream function with a nonzero tangential
    mean; ``Q*`` built from ``cos(k z)`` so ``d_N Q* = 0`` on ``z = 0, pi``; the
    pressure is an arbitrary smooth field (the gauge is handled in the check)."""
    params = params or ModelParams(N=2, xi=0.8, a=1.3)
    x, z = S.symbols("x z", real=True)
    H = S.pi
    psi = S.sin(x) * z**2 * (H - z) ** 2
    u = [S.diff(psi, z) + S.sin(z), -S.diff(psi, x)]
    Q11 = S.cos(x) * S.cos(z) + S.cos(2 * z)
    Q12 = S.sin(x) * S.cos(2 * z) + S.Rational(3, 10) * S.cos(z)
    Q = [[Q11, Q12], [Q12, -Q11]]
    p = S.sin(x) * z + S.cos(z) + 1
    f, G = _operator_data(2, (x, z), u, Q, p, lam, params)
    return Manufactured(2, lam, params, u, Q, p, f, G, (x, z))


def manufactured_3d(lam=2.0 - 1.0j, params=None) -> Manufactured:
    params = params or ModelParams(N=3, xi=0.9, a=0.7)
    x, y, z = S.symbols("x y z", real=True)
    H = S.pi
    w = z**2 * (H - z) ** 2
    p1 = S.sin(x) * S.cos(y) * w
    p2 = S.cos(x + y) * w
    u = [S.diff(p1, z) + S.sin(z), S.diff(p2, z) + S.sin(z) / 2, -S.diff(p1, x) - S.diff(p2, y)]
    Q11 = S.cos(x) * S.cos(z) + S.cos(2 * z)
    Q22 = S.sin(y) * S.cos(2 * z)
    Q12 = S.sin(x + y) * S.cos(z)
    Q13 = S.cos(y) * S.cos(z) / 2
    Q23 = S.Rational(3, 10) * S.cos(z) + S.sin(x) * S.cos(2 * z)
    Q = [[Q11, Q12, Q13], [Q12, Q22, Q23], [Q13, Q23, -Q11 - Q22]]
    p = S.sin(x) * S.cos(y) * z + S.cos(z) + 1
    f, G = _operator_data(3, (x, y, z), u, Q, p, lam, params)
    return Manufactured(3, lam, params, u, Q, p, f, G, (x, y, z))


def pressure_oracle(grid: Grid):
    """``p* = (1 + cos x) sin(z) z`` with ``p* = 0`` on the wall, and its exact
    gradient as pressure data."""
    x, z = grid.mesh()
    p = (1.0 + np.cos(x)) * np.sin(z) * z
    gx = -np.sin(x) * np.sin(z) * z
    gz = (1.0 + np.cos(x)) * (np.cos(z) * z + np.sin(z))
    return p, np.stack([gx, gz])


def observed_orders(hs, errs):
    """Pairwise orders ``log(e_i / e_{i+1}) / log(h_i / h_{i+1})``."""
    return [math.log(errs[i] / errs[i + 1]) / math.log(hs[i] / hs[i + 1]) for i in range(len(errs) - 1)]


def smooth_state(grid: Grid, scale_q: float = 0.3):
    """Smooth wall-compatible test state used for nonlinear assembly checks."""
    N = grid.N
    X = grid.mesh()
    x, z = X[0], X[-1]
    y = X[1] if N == 3 else 0.0 * x
    u = np.zeros((N,) + grid.shape)
    u[0] = np.sin(z) * np.cos(x + y)
    u[N - 1] = 0.5 * np.sin(x + y) * np.sin(z) ** 2
    Q = np.zeros((N, N) + grid.shape)
    Q[0, 0] = scale_q * np.cos(x) * np.cos(z)
    Q[0, 1] = Q[1, 0] = 0.2 * np.sin(x + y) * np.cos(2 * z)
    Q[N - 1, N - 1] = -Q[0, 0]
    if N == 3:
        Q[1, 2] = Q[2, 1] = 0.1 * np.cos(y) * np.cos(z)
        Q[1, 1] = 0.1 * np.cos(z)
        Q[2, 2] = -Q[0, 0] - Q[1, 1]
    return u, Q


def mms_errors(man: Manufactured, grids):
    """Discrete L2 errors (``u``, ``Q``, ``p``) and max-norm errors (``*_max``)
    of ``resolvent_solve`` on each grid, plus the largest relative residual and
    wall/divergence diagnostics."""
    from qthalf.linear import cell_divergence, resolvent_solve

    keys = ("u", "Q", "p")
    out = {"h": [], "residual": 0.0, "wall_u": 0.0, "div_rel": 0.0}
    for k in keys:
        out[k], out[k + "_max"] = [], []
    for g in grids:
        f, G, ue, Qe, pe = man.sample(g)
        sol = resolvent_solve(man.lam, f, G, g, man.params)
        out["h"].append(g.h_wall)
        for k, num, ex in zip(keys, (sol.u, sol.Q, sol.p), (ue, Qe, pe)):
            out[k].append(g.lebesgue_norm(num - ex, 2))
            out[k + "_max"].append(float(np.max(np.abs(num - ex))))
        out["residual"] = max(out["residual"], sol.residual)
        out["wall_u"] = max(out["wall_u"], float(np.max(np.abs(sol.u[..., [0, -1]]))))
        div = np.max(np.abs(cell_divergence(g, sol.u))) / np.max(np.abs(g.jacobian(sol.u)))
        out["div_rel"] = max(out["div_rel"], float(div))
    return out


MMS_GRIDS = {
    2: [Grid(2, n, n + 1, 2 * np.pi, np.pi) for n in (64, 128, 256)],
    3: [Grid(3, 8, n + 1, 2 * np.pi, np.pi) for n in (16, 32, 64)],
}
PRESSURE_GRIDS = [Grid(2, 16, n + 1, 2 * np.pi, np.pi) for n in (64, 128, 256)]


def pressure_errors(grids):
    """Discrete L2 errors of ``pressure_solve`` fed with exact gradient data."""
    from qthalf.linear import pressure_solve
    from qthalf.tensor_ops import ModelParams

    hs, errs = [], []
    for g in grids:
        p, data = pressure_oracle(g)
        ph = pressure_solve(None, None, g, ModelParams(N=2), data=data)
        hs.append(g.h_wall)
        errs.append(g.lebesgue_norm(ph - p, 2))
    return hs, errs


ROUTE_GRIDS = {
    2: [Grid(2, 16, n + 1, 2 * np.pi, np.pi) for n in (32, 64, 128)],
    3: [Grid(3, 16, n + 1, 2 * np.pi, np.pi) for n in (16, 32, 64)],
}


def route_gaps(params: ModelParams, grids):
    """Max pointwise gaps between the two assemblies of ``f`` and of ``G`` on the
    smooth reference state, per grid."""
    from qthalf.nonlinear import assemble_f, assemble_f_route2, assemble_G, assemble_G_route2

    hs, f_gap, G_gap = [], [], []
    for g in grids:
        u, Q = smooth_state(g)
        hs.append(g.h_wall)
        f_gap.append(float(np.max(np.abs(assemble_f(u, Q, g, params) - assemble_f_route2(u, Q, g, params)))))
        G_gap.append(float(np.max(np.abs(assemble_G(u, Q, g, params) - assemble_G_route2(u, Q, g, params)))))
    return hs, f_gap, G_gap
