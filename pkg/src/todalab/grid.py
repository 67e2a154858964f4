"""Square periodic grid, 5-point Laplacian, Green functions and divisor forcings."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "TorusGrid",
    "Divisor",
    "Forcing",
    "laplacian",
    "poisson_solve",
    "discrete_green",
    "forcing_from_divisor",
    "write_tgrd",
    "read_tgrd",
    "write_csv",
]

log = logging.getLogger(__name__)

MAGIC = b"TGRD"


@dataclass(frozen=True)
class TorusGrid:
    """``N x N`` nodes on the square torus of side ``L``."""

    L: float = 2 * np.pi
    N: int = 64

    def __post_init__(self):
        if self.N < 8 or self.N % 2:
            raise ValueError(f"N must be even and at least 8, got {self.N}")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def area(self) -> float:
        return self.L * self.L

    @cached_property
    def symbol(self) -> np.ndarray:
        """Eigenvalues of the 5-point Laplacian on the ``rfft2`` frequency grid."""
        k = np.arange(self.N)
        kr = np.arange(self.N // 2 + 1)
        s = 4.0 / self.h**2
        return -s * (np.sin(np.pi * k / self.N) ** 2)[:, None] - s * (np.sin(np.pi * kr / self.N) ** 2)[None, :]

    def coords(self):
        x = np.arange(self.N) * self.h
        return np.meshgrid(x, x, indexing="ij")

    def integrate(self, f):
        """``sum f h^2`` over the last two axes."""
        return np.sum(f, axis=(-2, -1)) * self.h**2

    def zeros(self, *lead):
        return np.zeros(lead + (self.N, self.N))


def laplacian(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    """5-point periodic Laplacian acting on the last two axes."""
    return (
        np.roll(f, 1, -1) + np.roll(f, -1, -1) + np.roll(f, 1, -2) + np.roll(f, -1, -2) - 4.0 * f
    ) / grid.h**2


def poisson_solve(grid: TorusGrid, f: np.ndarray, tol: float = 1e-10, project: bool = False) -> np.ndarray:
    """Mean-zero solution of ``laplacian(u) = f``.

    ``f`` must integrate to zero.  An integral within ``tol`` (relative to
    ``area * max|f|``) is removed silently.  A larger one is rejected unless
    ``project`` is set, in which case it is removed with a warning.
    """
    f = np.asarray(f, dtype=float)
    mean = f.mean(axis=(-2, -1), keepdims=True)
    scale = max(1.0, float(np.max(np.abs(f)))) if f.size else 1.0
    bad = float(np.max(np.abs(mean))) * grid.area
    if bad > tol * scale * grid.area:
        if not project:
            raise ValueError(f"right-hand side is not compatible: integral {bad:.3e}")
        log.warning("projecting out incompatible mean %.3e", bad)
    fh = np.fft.rfft2(f - mean)
    sym = grid.symbol.copy()
    sym[0, 0] = 1.0
    uh = fh / sym
    uh[..., 0, 0] = 0.0
    return np.fft.irfft2(uh, s=(grid.N, grid.N))


def discrete_green(grid: TorusGrid, p) -> np.ndarray:
    """Mean-zero ``g`` with ``laplacian(g) = 4 pi (delta_p - 1/A)``.

    ``delta_p`` is the grid delta, ``1/h^2`` at node ``p`` and 0 elsewhere.
    """
    i, j = _node(grid, p)
    g0 = _green_origin(grid)
    return np.roll(g0, (i, j), axis=(0, 1))


_GREEN_CACHE: dict = {}


def _green_origin(grid):
    key = (grid.L, grid.N)
    if key not in _GREEN_CACHE:
        f = np.full((grid.N, grid.N), -4 * np.pi / grid.area)
        f[0, 0] += 4 * np.pi / grid.h**2
        g = poisson_solve(grid, f)
        g.setflags(write=False)
        _GREEN_CACHE[key] = g
    return _GREEN_CACHE[key].copy()


def _node(grid, p):
    i, j = (int(x) for x in p)
    if (i, j) != tuple(p) or not (0 <= i < grid.N and 0 <= j < grid.N):
        raise ValueError(f"{p!r} is not a node of the {grid.N}x{grid.N} grid")
    return i, j


@dataclass(frozen=True)
class Divisor:
    """Grid points with positive multiplicities."""

    points: tuple[tuple[tuple[int, int], int], ...] = ()

    def __post_init__(self):
        for p, m in self.points:
            if int(m) != m or m <= 0:
                raise ValueError(f"multiplicity {m} at {p} is not a positive integer")

    @classmethod
    def from_list(cls, items) -> "Divisor":
        """Build from ``[[i, j, m], ...]`` or ``[((i, j), m), ...]``."""
        pts = []
        for it in items:
            if len(it) == 3:
                pts.append(((int(it[0]), int(it[1])), int(it[2])))
            else:
                (i, j), m = it
                pts.append(((int(i), int(j)), int(m)))
        return cls(tuple(pts))

    @property
    def degree(self) -> int:
        return sum(m for _, m in self.points)

    def multiplicity_field(self, grid: TorusGrid) -> np.ndarray:
        out = np.zeros((grid.N, grid.N))
        for p, m in self.points:
            out[_node(grid, p)] += m
        return out

    def to_list(self):
        return [[p[0], p[1], m] for p, m in self.points]


@dataclass(frozen=True, eq=False)
class Forcing:
    """Smoothed modulus datum ``G = exp(c + sum m g_p)`` of a divisor.

    ``rho`` is ``laplacian(log G)``, stored as its exact point-mass form.
    """

    grid: TorusGrid
    divisor: Divisor
    c: float
    log_G: np.ndarray
    rho: np.ndarray

    @property
    def G(self) -> np.ndarray:
        return np.exp(self.log_G)

    def mask(self, tau: float = 1e-6) -> np.ndarray:
        """Nodes where ``G >= tau * max G``."""
        return self.log_G >= np.log(tau) + self.log_G.max()

    def scaled(self, factor: float) -> "Forcing":
        """The same divisor with amplitude multiplied by ``factor``."""
        return Forcing(self.grid, self.divisor, self.c + np.log(factor), self.log_G + np.log(factor), self.rho)


def forcing_from_divisor(grid: TorusGrid, divisor: Divisor, c: float = 0.0) -> Forcing:
    log_G = np.full((grid.N, grid.N), float(c))
    for p, m in divisor.points:
        log_G += m * discrete_green(grid, p)
    rho = 4 * np.pi * (divisor.multiplicity_field(grid) / grid.h**2 - divisor.degree / grid.area)
    log_G.setflags(write=False)
    rho.setflags(write=False)
    return Forcing(grid, divisor, float(c), log_G, rho)


def write_tgrd(path, fields) -> None:
    """Write fields of shape ``(k, N, N)`` (or one ``(N, N)``) in TGRD format.

    Layout: ``b"TGRD"``, little-endian u32 ``N``, u32 field count, u32
    reserved (0), then row-major little-endian float64 values per field.
    """
    arr = np.asarray(fields, dtype="<f8")
    if arr.ndim == 2:
        arr = arr[None]
    k, n, n2 = arr.shape
    if n != n2:
        raise ValueError("fields must be square")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<III", n, k, 0))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_tgrd(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    n, k, _ = struct.unpack("<III", data[4:16])
    arr = np.frombuffer(data[16:], dtype="<f8")
    if arr.size != k * n * n:
        raise ValueError(f"{path}: expected {k * n * n} values, found {arr.size}")
    return arr.reshape(k, n, n).astype(float)


def write_csv(path, grid: TorusGrid, fields, names) -> None:
    """CSV with columns ``x, y`` followed by one column per field."""
    arr = np.asarray(fields, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    X, Y = grid.coords()
    cols = [X.ravel(), Y.ravel()] + [f.ravel() for f in arr]
    table = np.column_stack(cols)
    header = ",".join(["x", "y"] + list(names))
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
