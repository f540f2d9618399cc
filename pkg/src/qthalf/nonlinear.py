"""Nonlinear right-hand sides ``f(u, Q)`` and ``G(u, Q)``.

The primary assembly uses the reduced form, with every ``Div`` applied after
the products inside it are formed. A second assembly starts from the original
stresses ``tau`` and ``sigma`` and expands each divergence with the product
rule; it exists only as an independent cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .tensor_ops import (
    ModelParams,
    bulk_derivative,
    colon_grad,
    coupling_tensor_S,
    identity_like,
    matmul,
    molecular_field,
    project_sym_traceless,
    strain_and_vorticity,
    stress_tensors,
    trace,
)

__all__ = [
    "RhsPair",
    "assemble_G",
    "assemble_G_route2",
    "assemble_f",
    "assemble_f_route2",
    "assemble_rhs",
    "rhs_norms",
]


@dataclass
class RhsPair:
    f: np.ndarray
    G: np.ndarray

    def scaled(self, c: float) -> "RhsPair":
        return RhsPair(c * self.f, c * self.G)


def _advect(grid: Grid, u, F):
    """``(u . grad) F`` for any field ``F`` with leading component axes."""
    return sum(u[j] * grid.diff(F, j) for j in range(grid.N))


def assemble_G(u, Q, grid: Grid, params: ModelParams):
    """``-(u.grad)Q + xi(DQ + QD) + WQ - QW - 2 xi (Q + I/N) tr(Q grad u) + F'(Q)``."""
    xi = params.xi
    grad_u = grid.jacobian(u)
    D, W = strain_and_vorticity(grad_u)
    P = Q + identity_like(Q) / params.N
    G = (
        -_advect(grid, u, Q)
        + xi * (matmul(D, Q) + matmul(Q, D))
        + matmul(W, Q)
        - matmul(Q, W)
        - 2.0 * xi * P * colon_grad(Q, grad_u)
        + bulk_derivative(Q, params)
    )
    return G


def assemble_G_route2(u, Q, grid: Grid, params: ModelParams):
    """``-(u.grad)Q + S(grad u, Q) - beta D(u) + F'(Q)``."""
    grad_u = grid.jacobian(u)
    D, _ = strain_and_vorticity(grad_u)
    return (
        -_advect(grid, u, Q)
        + coupling_tensor_S(grad_u, Q, params)
        - params.beta * D
        + bulk_derivative(Q, params)
    )


def _laplacian_tensor(grid: Grid, Q):
    return grid.laplacian(Q)


def assemble_f(u, Q, grid: Grid, params: ModelParams):
    """Force density in conservative form:

    ``-(u.grad)u + Div[2 xi tr(HQ)(Q + I/N) - (xi + 1)HQ + (1 - xi)QH - gradQ (.) gradQ]
    - beta Div F'(Q)``.
    """
    xi = params.xi
    Fp = bulk_derivative(Q, params)
    H = molecular_field(Q, _laplacian_tensor(grid, Q), params)
    P = Q + identity_like(Q) / params.N
    HQ = matmul(H, Q)
    gQ = grid.grad(Q)
    gg = np.einsum("ikl...,jkl...->ij...", gQ, gQ)
    T = 2.0 * xi * trace(HQ) * P - (xi + 1.0) * HQ + (1.0 - xi) * matmul(Q, H) - gg
    return -_advect(grid, u, u) + grid.Div(T - params.beta * Fp)


def _div_product(grid: Grid, A, B, dA=None, dB=None):
    """``Div(AB)`` expanded as ``sum_j (d_j A) B + A (d_j B)`` row-wise."""
    N = grid.N
    dA = grid.grad(A) if dA is None else dA
    dB = grid.grad(B) if dB is None else dB
    out = np.zeros((N,) + A.shape[2:], dtype=np.result_type(A, B))
    for j in range(N):
        out += np.einsum("ik...,k...->i...", dA[j], B[:, j]) + np.einsum("ik...,k...->i...", A, dB[j][:, j])
    return out


def assemble_f_route2(u, Q, grid: Grid, params: ModelParams):
    """``-(u.grad)u + Div(tau + sigma) + beta Div(lap Q - a Q)`` with the
    divergences of the stresses expanded by the product rule."""
    g, N, xi = grid, grid.N, params.xi
    lapQ = _laplacian_tensor(g, Q)
    H = molecular_field(Q, lapQ, params)
    P = Q + identity_like(Q) / N
    gQ = g.grad(Q)  # gQ[j] = d_j Q
    gH = g.grad(H)
    s = trace(matmul(H, Q))
    grad_s = g.grad(s)
    # Div(s P) = P grad s + s Div P with Div P = Div Q
    div_Q = np.stack([sum(gQ[j][i, j] for j in range(N)) for i in range(N)])
    div_sP = np.einsum("ij...,j...->i...", P, grad_s) + s * div_Q
    # Div(gradQ (.) gradQ)_i = sum_j sum_kl (d_j d_i Q_kl) d_j Q_kl + d_i Q_kl lap Q_kl
    hess = np.stack([g.grad(gQ[i]) for i in range(N)])  # hess[i, j] = d_j d_i Q
    div_gg = np.einsum("ijkl...,jkl...->i...", hess, gQ) + np.einsum("ikl...,kl...->i...", gQ, lapQ)
    div_tau = (
        2.0 * xi * div_sP
        - xi * (_div_product(g, H, P, gH, gQ) + _div_product(g, P, H, gQ, gH))
        - div_gg
    )
    div_sigma = _div_product(g, Q, H, gQ, gH) - _div_product(g, H, Q, gH, gQ)
    div_lin = np.stack([sum(g.diff(lapQ[i, j] - params.a * Q[i, j], j) for j in range(N)) for i in range(N)])
    return -_advect(g, u, u) + div_tau + div_sigma + params.beta * div_lin


def assemble_rhs(u, Q, grid: Grid, params: ModelParams) -> RhsPair:
    """Both nonlinear right-hand sides; ``G`` is stored projected onto symmetric
    traceless matrices (a no-op up to roundoff)."""
    return RhsPair(assemble_f(u, Q, grid, params), project_sym_traceless(assemble_G(u, Q, grid, params)))


def rhs_norms(rhs: RhsPair, grid: Grid, exponents, t: float = 0.0) -> dict:
    """``||f||_{L_r}`` and ``||grad G||_{L_r}`` for each ``r`` in ``exponents``, plus
    the time weight ``1 + t``."""
    gG = grid.grad(rhs.G)
    out = {"weight": 1.0 + t, "f": {}, "gradG": {}}
    for r in exponents:
        key = float(r)
        out["f"][key] = grid.lebesgue_norm(rhs.f, key)
        out["gradG"][key] = grid.lebesgue_norm(gG, key)
    return out
