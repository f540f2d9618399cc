"""Truncated half-space grid: periodic tangential directions, walls in x_N.

Field layout: component axes first, then the ``N`` spatial axes
``(x_1, ..., x_{N-1}, x_N)``. A scalar field has shape ``grid.shape``, a vector
field ``(N,) + grid.shape`` and a tensor field ``(N, N) + grid.shape``.

Tangential derivatives are spectral (Nyquist multiplier zeroed, so the second
derivative is exactly the first applied twice). Wall-normal derivatives are
second-order central differences with second-order one-sided rows at
``x_N = 0`` and ``x_N = H_wall``.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Grid",
    "apply_boundary",
    "wall_normal_derivative",
    "save_snapshot",
    "load_snapshot",
    "SNAPSHOT_MAGIC",
]


@dataclass(frozen=True)
class Grid:
    N: int = 2
    n_tan: int = 32
    n_wall: int = 33
    L_tan: float = 2 * np.pi
    H_wall: float = np.pi

    def __post_init__(self):
        if self.N not in (2, 3):
            raise ValueError(f"N must be 2 or 3, got {self.N}")
        if self.n_tan < 4 or self.n_tan & (self.n_tan - 1):
            raise ValueError(f"n_tan must be a power of two >= 4, got {self.n_tan}")
        if self.n_wall < 8:
            raise ValueError(f"n_wall must be >= 8, got {self.n_wall}")
        if not (self.H_wall > 0 and self.L_tan > 0):
            raise ValueError("L_tan and H_wall must be positive")

    # -- geometry -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_tan,) * (self.N - 1) + (self.n_wall,)

    @property
    def tan_shape(self) -> tuple[int, ...]:
        return (self.n_tan,) * (self.N - 1)

    @property
    def h_tan(self) -> float:
        return self.L_tan / self.n_tan

    @property
    def h_wall(self) -> float:
        return self.H_wall / (self.n_wall - 1)

    @cached_property
    def x_tan(self) -> np.ndarray:
        return np.arange(self.n_tan) * self.h_tan

    @cached_property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, self.H_wall, self.n_wall)

    def mesh(self) -> list[np.ndarray]:
        """Coordinate arrays ``[x_1, ..., x_N]`` broadcast to ``shape``."""
        axes = [self.x_tan] * (self.N - 1) + [self.z]
        return list(np.meshgrid(*axes, indexing="ij"))

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(
            self.N,
            self.n_tan * factor,
            (self.n_wall - 1) * factor + 1,
            self.L_tan,
            self.H_wall,
        )

    # -- wavenumbers --------------------------------------------------------
    @cached_property
    def k1d(self) -> np.ndarray:
        """First-derivative wavenumbers along one tangential axis, Nyquist zeroed."""
        k = 2 * np.pi * np.fft.fftfreq(self.n_tan, d=self.h_tan)
        k[self.n_tan // 2] = 0.0
        return k

    @cached_property
    def kvecs(self) -> np.ndarray:
        """Wavenumber vectors of shape ``(N-1,) + tan_shape``."""
        ks = np.meshgrid(*([self.k1d] * (self.N - 1)), indexing="ij")
        return np.stack(ks)

    # -- wall-normal difference matrices ------------------------------------
    @cached_property
    def D1(self) -> sp.csr_matrix:
        n, h = self.n_wall, self.h_wall
        D = sp.lil_matrix((n, n))
        for j in range(1, n - 1):
            D[j, j - 1] = -0.5 / h
            D[j, j + 1] = 0.5 / h
        D[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
        D[n - 1, n - 3 : n] = np.array([1.0, -4.0, 3.0]) / (2 * h)
        return D.tocsr()

    @cached_property
    def D2(self) -> sp.csr_matrix:
        n, h = self.n_wall, self.h_wall
        D = sp.lil_matrix((n, n))
        for j in range(1, n - 1):
            D[j, j - 1 : j + 2] = np.array([1.0, -2.0, 1.0]) / h**2
        D[0, 0:4] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
        D[n - 1, n - 4 : n] = np.array([-1.0, 4.0, -5.0, 2.0]) / h**2
        return D.tocsr()

    # -- quadrature ---------------------------------------------------------
    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: uniform tangentially, trapezoidal in x_N."""
        wz = np.full(self.n_wall, self.h_wall)
        wz[0] = wz[-1] = 0.5 * self.h_wall
        w = wz * self.h_tan ** (self.N - 1)
        return np.broadcast_to(w, self.shape)

    @property
    def volume(self) -> float:
        return self.L_tan ** (self.N - 1) * self.H_wall

    # -- transforms ---------------------------------------------------------
    @property
    def tan_axes(self) -> tuple[int, ...]:
        return tuple(range(-self.N, -1))

    def fft_tan(self, f):
        return np.fft.fftn(f, axes=self.tan_axes)

    def ifft_tan(self, fh, real: bool | None = None):
        out = np.fft.ifftn(fh, axes=self.tan_axes)
        return out.real if real else out

    # -- derivatives --------------------------------------------------------
    def diff(self, f, direction: int, order: int = 1):
        """Derivative of ``f`` along spatial ``direction`` (0-based; ``N-1`` is x_N)."""
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2; compose calls for higher orders")
        if not 0 <= direction < self.N:
            raise ValueError(f"direction must be in [0, {self.N})")
        f = np.asarray(f)
        if direction == self.N - 1:
            D = self.D1 if order == 1 else self.D2
            moved = np.moveaxis(f, -1, 0)
            out = (D @ moved.reshape(self.n_wall, -1)).reshape(moved.shape)
            return np.moveaxis(out, 0, -1)
        axis = f.ndim - self.N + direction
        shape = [1] * f.ndim
        shape[axis] = self.n_tan
        mult = (1j * self.k1d) ** order
        fh = np.fft.fft(f, axis=axis) * mult.reshape(shape)
        out = np.fft.ifft(fh, axis=axis)
        return out.real if np.isrealobj(f) else out

    def grad(self, f):
        """Gradient, new axis inserted in front: ``out[j] = d_j f``."""
        return np.stack([self.diff(f, j) for j in range(self.N)])

    def jacobian(self, u):
        """``out[i, j] = d_j u_i`` for a vector field ``u``."""
        return np.stack([self.grad(u[i]) for i in range(self.N)])

    def laplacian(self, f):
        return sum(self.diff(f, j, 2) for j in range(self.N))

    def div(self, u):
        """Divergence of a vector field."""
        return sum(self.diff(u[j], j) for j in range(self.N))

    def Div(self, A):
        """Row-wise divergence of a matrix field: ``out_i = sum_j d_j A_ij``."""
        return np.stack([sum(self.diff(A[i, j], j) for j in range(self.N)) for i in range(self.N)])

    def derivative(self, f, alpha: tuple[int, ...]):
        """Mixed derivative ``D^alpha f`` built from order <= 2 calls."""
        out = f
        for j, m in enumerate(alpha):
            while m > 0:
                step = min(m, 2)
                out = self.diff(out, j, step)
                m -= step
        return out

    def multi_indices(self, s: int) -> list[tuple[int, ...]]:
        return [a for a in itertools.product(range(s + 1), repeat=self.N) if sum(a) == s]

    def gradient_stack(self, f, s: int):
        """All derivatives ``D^alpha f`` with ``|alpha| = s``, stacked on a new leading axis."""
        if s == 0:
            return np.asarray(f)[None]
        return np.stack([self.derivative(f, a) for a in self.multi_indices(s)])

    # -- norms --------------------------------------------------------------
    def pointwise_magnitude(self, f):
        f = np.asarray(f)
        lead = f.ndim - self.N
        if lead == 0:
            return np.abs(f)
        return np.sqrt(np.sum(np.abs(f) ** 2, axis=tuple(range(lead))))

    def lebesgue_norm(self, f, q: float) -> float:
        if not q > 1:
            raise ValueError("q must exceed 1")
        m = self.pointwise_magnitude(f)
        if np.isinf(q):
            return float(m.max())
        return float(np.sum(self.weights * m**q) ** (1.0 / q))

    def sobolev_seminorm(self, f, q: float, s: int) -> float:
        """L_q norm of the full s-th gradient array (surrogate for the Hdot^s_q norm)."""
        if s not in (0, 1, 2, 3):
            raise ValueError("s must be 0..3")
        return self.lebesgue_norm(self.gradient_stack(f, s), q)

    def inner(self, f, g) -> complex:
        """Discrete L2 pairing ``sum w f conj(g)`` summed over components."""
        prod = np.asarray(f) * np.conj(np.asarray(g))
        lead = prod.ndim - self.N
        if lead:
            prod = prod.sum(axis=tuple(range(lead)))
        return complex(np.sum(self.weights * prod))


# -- boundary conditions ---------------------------------------------------

def wall_normal_derivative(grid: Grid, f):
    """One-sided second-order ``d_N f`` at bottom and top walls, same stencil as ``diff``."""
    h = grid.h_wall
    bottom = (-3 * f[..., 0] + 4 * f[..., 1] - f[..., 2]) / (2 * h)
    top = (f[..., -3] - 4 * f[..., -2] + 3 * f[..., -1]) / (2 * h)
    return bottom, top


def apply_boundary(grid: Grid, u, Q):
    """Zero ``u`` on both walls and set wall values of ``Q`` so that ``d_N Q = 0``.

    Returns new arrays; inputs are not modified. The wall value of ``Q`` is the
    unique value that makes the one-sided stencil vanish, so the map is a
    projection (applying it twice changes nothing, bitwise).
    """
    u = np.array(u, copy=True)
    Q = np.array(Q, copy=True)
    u[..., 0] = 0.0
    u[..., -1] = 0.0
    Q[..., 0] = (4 * Q[..., 1] - Q[..., 2]) / 3.0
    Q[..., -1] = (4 * Q[..., -2] - Q[..., -3]) / 3.0
    return u, Q


# -- binary snapshots ------------------------------------------------------

SNAPSHOT_MAGIC = b"QTHALF-FIELD"
SNAPSHOT_VERSION = 1


def save_snapshot(path, grid: Grid, values) -> None:
    """Write a real field as header + little-endian u32 dims + row-major f64 data.

    The header is 16 bytes: the 12-byte magic followed by a u32 version. Dims are
    ``N, n_tan (N-1 times), n_wall, components``.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[values.ndim - grid.N :] != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    ncomp = int(np.prod(values.shape[: values.ndim - grid.N], dtype=np.int64))
    dims = (grid.N,) + grid.shape + (ncomp,)
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<I", SNAPSHOT_VERSION))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(np.ascontiguousarray(values).astype("<f8").tobytes())


def load_snapshot(path):
    """Read a snapshot. Returns ``(N, grid_shape, values)``; ``values`` has a
    leading flattened component axis of length ``components``."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:12] != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a field snapshot")
        (version,) = struct.unpack("<I", head[12:])
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {version}")
        (N,) = struct.unpack("<I", fh.read(4))
        rest = struct.unpack(f"<{N + 1}I", fh.read(4 * (N + 1)))
        shape, ncomp = tuple(rest[:N]), rest[N]
        data = np.frombuffer(fh.read(), dtype="<f8")
    expected = ncomp * int(np.prod(shape))
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {data.size}")
    return N, shape, data.reshape((ncomp,) + shape).astype(np.float64)
