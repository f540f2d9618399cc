"""Pointwise tensor algebra of the Beris-Edwards Q-tensor model.

Every function here acts on arrays whose two leading axes are matrix indices
``(i, j)``; any trailing axes (grid points, random samples) are carried along
and broadcast. A single ``N x N`` matrix is simply the case with no trailing
axes.

Conventions
-----------
* Velocity gradient: ``grad_u[i, j] = d_j u_i`` (Jacobian layout).
* Tensor gradient: ``grad_Q[i, k, l] = d_i Q_kl``.
* The elastic constant ``L`` is fixed to 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelParams",
    "InvalidInput",
    "matmul",
    "trace",
    "identity_like",
    "project_sym_traceless",
    "sym_traceless_residual",
    "strain_and_vorticity",
    "bulk_energy",
    "bulk_derivative",
    "molecular_field",
    "coupling_tensor_S",
    "stress_tensors",
    "colon_grad",
]


class InvalidInput(ValueError):
    """Raised for non-finite or structurally invalid tensor input."""


@dataclass(frozen=True)
class ModelParams:
    """Material constants. ``beta = 2 xi / N`` is derived and stored."""

    N: int = 2
    xi: float = 1.0
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    beta: float = field(init=False)

    def __post_init__(self):
        if self.N not in (2, 3):
            raise InvalidInput(f"N must be 2 or 3, got {self.N}")
        if self.xi == 0:
            raise InvalidInput("xi must be nonzero")
        for name in ("a", "b", "c"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"{name} must be positive, got {getattr(self, name)}")
        object.__setattr__(self, "beta", 2.0 * self.xi / self.N)


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise InvalidInput("non-finite tensor input")


def matmul(A, B):
    """Pointwise matrix product over the two leading axes."""
    return np.einsum("ik...,kj...->ij...", A, B)


def trace(A):
    return np.einsum("ii...->...", A)


def identity_like(A):
    N = A.shape[0]
    eye = np.eye(N).reshape((N, N) + (1,) * (A.ndim - 2))
    return np.broadcast_to(eye, A.shape).astype(A.dtype, copy=True)


def transpose(A):
    return np.swapaxes(A, 0, 1)


def project_sym_traceless(A):
    """Symmetrize and remove the trace (project-then-store)."""
    A = np.asarray(A)
    S = 0.5 * (A + transpose(A))
    N = A.shape[0]
    return S - trace(S) / N * identity_like(S)


def sym_traceless_residual(A):
    """Largest pointwise violation of symmetry or tracelessness."""
    asym = np.max(np.abs(A - transpose(A))) if A.size else 0.0
    tr = np.max(np.abs(trace(A))) if A.size else 0.0
    return float(max(asym, tr))


def strain_and_vorticity(grad_u):
    """Return ``(D, W)`` with ``D`` symmetric, ``W`` antisymmetric, ``D + W = grad_u``."""
    grad_u = np.asarray(grad_u)
    _check_finite(grad_u)
    gt = transpose(grad_u)
    return 0.5 * (grad_u + gt), 0.5 * (grad_u - gt)


def bulk_energy(Q, params: ModelParams):
    """Landau-de Gennes bulk energy ``a/2 tr Q^2 - b/3 tr Q^3 + c/4 (tr Q^2)^2``."""
    Q2 = matmul(Q, Q)
    trQ2 = trace(Q2)
    trQ3 = trace(matmul(Q2, Q))
    return 0.5 * params.a * trQ2 - params.b / 3.0 * trQ3 + 0.25 * params.c * trQ2**2


def bulk_derivative(Q, params: ModelParams):
    """Nonlinear part of the molecular field, ``b(Q^2 - tr(Q^2) I/N) - c tr(Q^2) Q``.

    For traceless symmetric ``E`` the directional derivative of
    :func:`bulk_energy` along ``E`` is ``tr[(a Q - F'(Q)) E]``.
    """
    Q = np.asarray(Q)
    Q2 = matmul(Q, Q)
    trQ2 = trace(Q2)
    N = Q.shape[0]
    return params.b * (Q2 - trQ2 / N * identity_like(Q)) - params.c * trQ2 * Q


def molecular_field(Q, lapQ, params: ModelParams):
    """``H = lapQ - a Q + F'(Q)``; ``lapQ`` is supplied by the caller."""
    return lapQ - params.a * Q + bulk_derivative(Q, params)


def colon_grad(Q, grad_u):
    """``Q : grad u`` read as ``tr(Q grad_u)``.

    For symmetric ``Q`` this equals ``tr(Q D(u))`` and does not depend on
    whether ``grad_u`` is stored as the Jacobian or its transpose.
    """
    return trace(matmul(Q, grad_u))


def coupling_tensor_S(grad_u, Q, params: ModelParams):
    """Co-rotational coupling ``S(grad u, Q)``."""
    D, W = strain_and_vorticity(grad_u)
    xi = params.xi
    P = Q + identity_like(Q) / params.N
    return (
        matmul(xi * D + W, P)
        + matmul(P, xi * D - W)
        - 2.0 * xi * P * colon_grad(Q, grad_u)
    )


def stress_tensors(Q, H, grad_Q, params: ModelParams):
    """Return ``(tau, sigma)``.

    ``tau = 2 xi tr(HQ)(Q + I/N) - xi[H(Q + I/N) + (Q + I/N)H] - grad Q (.) grad Q``
    and ``sigma = QH - HQ``.
    """
    xi = params.xi
    P = Q + identity_like(Q) / params.N
    HQ = matmul(H, Q)
    QH = matmul(Q, H)
    gg = np.einsum("ikl...,jkl...->ij...", grad_Q, grad_Q)
    tau = 2.0 * xi * trace(HQ) * P - xi * (matmul(H, P) + matmul(P, H)) - gg
    sigma = QH - HQ
    return tau, sigma
