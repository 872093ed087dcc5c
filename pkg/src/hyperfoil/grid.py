"""Uniform node-centred grid, field storage and finite-difference stencils.

All fields live on ``[-X, X]^2`` with ``X = h (n - 1) / 2``.  Solutions are
compactly supported inside the light cone ``r <= t - 1`` and the domain is
chosen wider than the cone, so stencils simply see zeros past the edge.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"HYPF"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIdddd")

# 1D centred stencils keyed by (derivative order, accuracy order); offsets are
# symmetric about zero and the weights still need dividing by h**deriv.
STENCILS_1D: dict[tuple[int, int], np.ndarray] = {
    (0, 2): np.array([1.0]),
    (0, 4): np.array([1.0]),
    (1, 2): np.array([-0.5, 0.0, 0.5]),
    (1, 4): np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0,
    (2, 2): np.array([1.0, -2.0, 1.0]),
    (2, 4): np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0,
    (3, 2): np.array([-0.5, 1.0, 0.0, -1.0, 0.5]),
    (3, 4): np.array([1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0]) / 8.0,
}


class NonFiniteFieldError(ValueError):
    """Raised when a field holds NaN or Inf values."""

    def __init__(self, message: str, index: tuple[int, ...] | None = None, t: float | None = None):
        super().__init__(message)
        self.index = index
        self.t = t


@dataclass(frozen=True)
class Grid:
    """Square-cell uniform grid centred on the origin.

    ``origin`` may be shifted for cropped sub-grids (hyperboloid slices);
    for a full grid it is ``(-X, -X)``.
    """

    nx: int
    ny: int
    h: float
    origin: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"grid step must be positive, got h={self.h}")
        if self.nx < 16 or self.ny < 16:
            raise ValueError(f"grid needs at least 16 nodes per axis, got {self.nx}x{self.ny}")
        if self.origin is None:
            object.__setattr__(self, "origin", (-0.5 * self.h * (self.nx - 1), -0.5 * self.h * (self.ny - 1)))

    @classmethod
    def covering(cls, half_width: float, h: float) -> "Grid":
        """Smallest centred grid with extent at least ``half_width``."""
        n = int(np.ceil(2.0 * half_width / h - 1e-9)) + 1
        return cls(n, n, h)

    @property
    def extent(self) -> float:
        return 0.5 * self.h * (self.nx - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @cached_property
    def x1(self) -> np.ndarray:
        return np.broadcast_to((self.origin[0] + self.h * np.arange(self.nx))[:, None], self.shape)

    @cached_property
    def x2(self) -> np.ndarray:
        return np.broadcast_to((self.origin[1] + self.h * np.arange(self.ny))[None, :], self.shape)

    @cached_property
    def r(self) -> np.ndarray:
        return np.hypot(self.x1, self.x2)

    def coord(self, axis: int) -> np.ndarray:
        return self.x1 if axis == 1 else self.x2

    def unit_radial(self, axis: int) -> np.ndarray:
        """``x_a / r`` with the value 0 at the origin."""
        xa = self.coord(axis)
        out = np.zeros(self.shape)
        np.divide(xa, self.r, out=out, where=self.r > 0)
        return out

    def crop(self, i0: int, i1: int, j0: int, j1: int) -> "Grid":
        """Sub-grid of node rows ``i0:i1`` and columns ``j0:j1``."""
        return Grid(
            i1 - i0, j1 - j0, self.h,
            (self.origin[0] + i0 * self.h, self.origin[1] + j0 * self.h),
        )


@dataclass(frozen=True)
class Field:
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != self.grid.shape:
            raise ValueError(f"field shape {self.data.shape} does not match grid {self.grid.shape}")

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    def check_finite(self, t: float | None = None) -> "Field":
        ensure_finite(self.data, t=t)
        return self


def ensure_finite(data: np.ndarray, t: float | None = None, what: str = "field"):
    if np.isfinite(data).all():
        return
    idx = tuple(int(i) for i in np.argwhere(~np.isfinite(data))[0])
    when = "" if t is None else f" at t={t:.6g}"
    raise NonFiniteFieldError(f"non-finite {what} value{when}, node {idx}", idx, t)


def _pad(a: np.ndarray, width: int) -> np.ndarray:
    return np.pad(a, width)


def apply_stencil_1d(a: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    """Centred stencil along array ``axis`` with zero values past the edge."""
    half = len(weights) // 2
    if half == 0:
        return a * weights[0]
    pad = [(0, 0)] * a.ndim
    pad[axis] = (half, half)
    p = np.pad(a, pad)
    n = a.shape[axis]
    out = np.zeros_like(a, dtype=float)
    for k, w in enumerate(weights):
        if w == 0.0:
            continue
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(k, k + n)
        out += w * p[tuple(sl)]
    return out


def partial(a: np.ndarray, h: float, n1: int, n2: int, order: int = 2) -> np.ndarray:
    """Mixed spatial derivative ``d1^n1 d2^n2`` of a raw array (product stencil)."""
    out = a
    if n1:
        out = apply_stencil_1d(out, STENCILS_1D[(n1, order)], 0) / h**n1
    if n2:
        out = apply_stencil_1d(out, STENCILS_1D[(n2, order)], 1) / h**n2
    if out is a:
        out = a.copy()
    return out


def laplacian_array(a: np.ndarray, h: float, order: int = 2) -> np.ndarray:
    """Compact Laplacian of a raw array, zero outside the grid."""
    if order == 2:
        p = _pad(a, 1)
        return (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4.0 * a) / (h * h)
    if order == 4:
        p = _pad(a, 2)
        c = p[2:-2, 2:-2]
        near = p[3:-1, 2:-2] + p[1:-3, 2:-2] + p[2:-2, 3:-1] + p[2:-2, 1:-3]
        far = p[4:, 2:-2] + p[:-4, 2:-2] + p[2:-2, 4:] + p[2:-2, :-4]
        return (16.0 * near - far - 60.0 * c) / (12.0 * h * h)
    raise ValueError(f"unsupported stencil order {order}")


def _check_order(order: int):
    if order not in (2, 4):
        raise ValueError(f"stencil order must be 2 or 4, got {order}")


def dx(f: Field, axis: int, order: int = 2) -> Field:
    """Centred first derivative along ``axis`` (1 or 2), truncation O(h^order)."""
    _check_order(order)
    if axis not in (1, 2):
        raise ValueError(f"axis must be 1 or 2, got {axis}")
    f.check_finite()
    w = STENCILS_1D[(1, order)]
    return Field(f.grid, apply_stencil_1d(f.data, w, axis - 1) / f.grid.h)


def laplacian(f: Field, order: int = 2) -> Field:
    _check_order(order)
    f.check_finite()
    return Field(f.grid, laplacian_array(f.data, f.grid.h, order))


def cone_mask(grid: Grid, t: float) -> np.ndarray:
    """Boolean mask of the nodes inside the cone ``r <= t - 1``."""
    return grid.r <= t - 1.0


def apply_cone_mask(f: Field, t: float) -> Field:
    return Field(f.grid, np.where(cone_mask(f.grid, t), f.data, 0.0))


def pairwise_sum(a: np.ndarray) -> float:
    """Fixed-tree pairwise sum of all entries.

    The tree depends only on the number of entries, so results are
    bit-identical from run to run regardless of threading.
    """
    v = np.ascontiguousarray(a, dtype=float).ravel()
    if v.size == 0:
        return 0.0
    n = 1 << int(np.ceil(np.log2(v.size)))
    if n != v.size:
        v = np.concatenate([v, np.zeros(n - v.size)])
    while v.size > 1:
        v = v[0::2] + v[1::2]
    return float(v[0])


def pairwise_sum_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise fixed-tree pairwise sums of a 2D array."""
    v = np.ascontiguousarray(a, dtype=float)
    if v.shape[-1] == 0:
        return np.zeros(v.shape[:-1])
    n = 1 << int(np.ceil(np.log2(v.shape[-1])))
    if n != v.shape[-1]:
        v = np.concatenate([v, np.zeros(v.shape[:-1] + (n - v.shape[-1],))], axis=-1)
    while v.shape[-1] > 1:
        v = v[..., 0::2] + v[..., 1::2]
    return v[..., 0]


def integrate(density: np.ndarray, h: float) -> float:
    """Node-sum quadrature ``h^2 * sum(density)``."""
    return h * h * pairwise_sum(density)


def write_snapshot(path: str | Path, f: Field, t: float):
    """Write ``f`` as a HYPF snapshot (little-endian, row-major)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, float(f.grid.nx), float(f.grid.ny), f.grid.h, float(t)))
        fh.write(np.ascontiguousarray(f.data, dtype="<f8").tobytes())


def read_snapshot(path: str | Path) -> tuple[Field, float]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, version, nx, ny, h, t = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    nx, ny = int(nx), int(ny)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {body.size}")
    return Field(Grid(nx, ny, h), body.reshape(nx, ny).astype(float)), t
