"""Factored low-rank space-time images and nuclear-norm proximal tools.

A dynamic image F (N voxels x K frames) is held as U diag(S) V^T with
orthonormal factors. Solver updates are represented as a factored base
plus a short list of rank-1 terms (:class:`LowRankUpdate`) so that no
N x K dense array is ever formed on realistically sized problems; the
randomized truncated SVD consumes either form through matrix-vector
products only.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import VoxelGrid
from .operator import FrameImage

# Ceiling on n_voxels * frame_count for explicitly densified matrices.
# 2**24 float64 elements is 128 MB; full-scale problems are far beyond
# it and must stay factored.
DENSE_ELEMENT_LIMIT = 2**24

# Relative cutoff below which singular values from exact factored
# arithmetic are treated as zero rank.
_RANK_EPS = 1e-14


def _apply_sign_convention(u: np.ndarray, v: np.ndarray):
    """Flip factor-column pairs so each U column's largest-magnitude
    entry is positive. Operates in place."""
    for r in range(u.shape[1]):
        j = int(np.argmax(np.abs(u[:, r])))
        if u[j, r] < 0:
            u[:, r] = -u[:, r]
            v[:, r] = -v[:, r]


@dataclass(frozen=True)
class FactoredImage:
    """Orthonormal factorization U diag(S) V^T of a space-time image.

    ``u`` is (N, R) with orthonormal columns, ``s`` the nonincreasing
    nonnegative singular values, ``v`` (K, R) with orthonormal columns.
    Factor columns are canonicalized so the largest-magnitude entry of
    each U column is positive. ``grid`` is optional; it is required
    only to materialize frames as :class:`FrameImage`.
    """

    u: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    grid: VoxelGrid | None = None

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64, order="C", copy=True)
        s = np.array(self.s, dtype=np.float64, copy=True)
        v = np.array(self.v, dtype=np.float64, order="C", copy=True)
        if u.ndim != 2 or v.ndim != 2 or s.ndim != 1:
            raise ValueError("u and v must be 2-d, s 1-d")
        r = s.shape[0]
        if u.shape[1] != r or v.shape[1] != r:
            raise ValueError(
                f"factor ranks disagree: u {u.shape}, s {s.shape}, v {v.shape}"
            )
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
            raise ValueError("factors must be finite")
        if np.any(s < 0):
            raise ValueError("singular values must be nonnegative")
        if r > 1 and np.any(s[:-1] < s[1:] - 1e-12 * max(s[0], 1.0)):
            raise ValueError("singular values must be nonincreasing")
        if r > 0:
            gram_u = u.T @ u - np.eye(r)
            gram_v = v.T @ v - np.eye(r)
            if np.linalg.norm(gram_u) > 1e-8 or np.linalg.norm(gram_v) > 1e-8:
                raise ValueError("factor columns must be orthonormal")
        if self.grid is not None and u.shape[0] != self.grid.n_voxels:
            raise ValueError(
                f"u has {u.shape[0]} rows but grid has {self.grid.n_voxels} voxels"
            )
        _apply_sign_convention(u, v)
        for arr in (u, s, v):
            arr.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, n: int, k: int, grid: VoxelGrid | None = None) -> "FactoredImage":
        return cls(np.zeros((n, 0)), np.zeros(0), np.zeros((k, 0)), grid)

    @classmethod
    def from_dense(
        cls, matrix: np.ndarray, grid: VoxelGrid | None = None, rank: int | None = None
    ) -> "FactoredImage":
        """Exact SVD factorization of a dense (N, K) matrix."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError(f"matrix must be 2-d, got shape {matrix.shape}")
        u, s, vt = np.linalg.svd(matrix, full_matrices=False)
        keep = s > (s[0] * _RANK_EPS if s.size and s[0] > 0 else 0.0)
        if rank is not None:
            keep &= np.arange(s.size) < rank
        return cls(u[:, keep], s[keep], vt[keep].T, grid)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.u.shape[0], self.v.shape[0])

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    @property
    def frame_count(self) -> int:
        return self.v.shape[0]

    def column_values(self, k: int) -> np.ndarray:
        """Frame k of the dense expansion as a length-N vector."""
        if not 0 <= k < self.frame_count:
            raise ValueError(f"frame index {k} outside [0, {self.frame_count})")
        return self.u @ (self.s * self.v[k])

    def matmat(self, w: np.ndarray) -> np.ndarray:
        """Product (U diag(S) V^T) @ w without densifying."""
        return self.u @ (self.s[:, None] * (self.v.T @ w))

    def rmatmat(self, y: np.ndarray) -> np.ndarray:
        """Product (U diag(S) V^T)^T @ y without densifying."""
        return self.v @ (self.s[:, None] * (self.u.T @ y))

    def to_dense(self) -> np.ndarray:
        n, k = self.shape
        if n * k > DENSE_ELEMENT_LIMIT:
            raise ValueError(
                f"refusing to densify {n} x {k} = {n * k} elements "
                f"(limit {DENSE_ELEMENT_LIMIT})"
            )
        return (self.u * self.s) @ self.v.T

    def nuclear_norm(self) -> float:
        return float(self.s.sum())

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.s))

    def inner(self, other: "FactoredImage") -> float:
        """Frobenius inner product <self, other> in factored form."""
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch: {self.shape} vs {other.shape}")
        m = (self.u.T @ other.u) * (self.v.T @ other.v)
        return float(self.s @ m @ other.s)


class LowRankUpdate:
    """A factored base plus accumulated rank-1 terms, never densified.

    Represents ``base_scale * base + sum_i scale_i * x_i y_i^T`` and
    exposes the matrix products the randomized SVD needs.
    """

    def __init__(self, base: FactoredImage, base_scale: float = 1.0):
        self.base = base
        self.base_scale = float(base_scale)
        self._xs: list[np.ndarray] = []
        self._ys: list[np.ndarray] = []
        self._scales: list[float] = []
        self._stacks = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.base.shape

    @property
    def grid(self) -> VoxelGrid | None:
        return self.base.grid

    @property
    def term_count(self) -> int:
        return len(self._xs)

    @property
    def rank_bound(self) -> int:
        """Upper bound on the numerical rank: base rank plus term count."""
        return self.base.rank + self.term_count

    def add_term(self, x: np.ndarray, y: np.ndarray, scale: float = 1.0):
        """Accumulate the rank-1 term scale * x y^T."""
        n, k = self.shape
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != (n,) or y.shape != (k,):
            raise ValueError(
                f"term shapes must be ({n},) and ({k},), got {x.shape}, {y.shape}"
            )
        self._xs.append(x)
        self._ys.append(y)
        self._scales.append(float(scale))
        self._stacks = None

    def _term_stacks(self):
        if self._stacks is None:
            n, k = self.shape
            m = len(self._xs)
            if m == 0:
                self._stacks = (np.zeros((n, 0)), np.zeros((k, 0)), np.zeros(0))
            else:
                self._stacks = (
                    np.column_stack(self._xs),
                    np.column_stack(self._ys),
                    np.asarray(self._scales),
                )
        return self._stacks

    def column_values(self, k: int) -> np.ndarray:
        """Frame k of the represented matrix as a length-N vector."""
        xs, ys, scales = self._term_stacks()
        out = self.base_scale * self.base.column_values(k)
        if scales.size:
            out = out + xs @ (scales * ys[k])
        return out

    def matmat(self, w: np.ndarray) -> np.ndarray:
        xs, ys, scales = self._term_stacks()
        out = self.base_scale * self.base.matmat(w)
        if scales.size:
            out = out + xs @ (scales[:, None] * (ys.T @ w))
        return out

    def rmatmat(self, y: np.ndarray) -> np.ndarray:
        xs, ys, scales = self._term_stacks()
        out = self.base_scale * self.base.rmatmat(y)
        if scales.size:
            out = out + ys @ (scales[:, None] * (xs.T @ y))
        return out

    def to_dense(self) -> np.ndarray:
        n, k = self.shape
        if n * k > DENSE_ELEMENT_LIMIT:
            raise ValueError(
                f"refusing to densify {n} x {k} = {n * k} elements "
                f"(limit {DENSE_ELEMENT_LIMIT})"
            )
        xs, ys, scales = self._term_stacks()
        return self.base_scale * self.base.to_dense() + (xs * scales) @ ys.T


def _as_product_operator(x):
    """Normalize truncated_svd input to (matmat, rmatmat, shape, grid)."""
    if isinstance(x, (FactoredImage, LowRankUpdate)):
        return x.matmat, x.rmatmat, x.shape, x.grid
    matrix = np.asarray(x, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {matrix.shape}")
    return (
        lambda w: matrix @ w,
        lambda y: matrix.T @ y,
        matrix.shape,
        None,
    )


def truncated_svd(
    x, r_max: int, oversample: int = 10, power_iters: int = 2, seed: int = 0
) -> FactoredImage:
    """Randomized truncated SVD with a Gaussian range finder.

    ``x`` may be a dense matrix, a :class:`FactoredImage`, or a
    :class:`LowRankUpdate`; only matrix products with ``x`` and its
    transpose are used. The sketch width is
    ``min(r_max + oversample, min(N, K))``, so the result is exact (to
    rounding) whenever that width reaches the numerical rank of ``x``.
    Deterministic for a fixed seed.
    """
    if r_max < 1:
        raise ValueError(f"r_max must be >= 1, got {r_max}")
    if oversample < 0 or power_iters < 0:
        raise ValueError("oversample and power_iters must be >= 0")
    matmat, rmatmat, (n, k), grid = _as_product_operator(x)
    max_rank = min(n, k)
    if r_max > max_rank:
        warnings.warn(
            f"r_max {r_max} exceeds min(N, K) = {max_rank}; clamping",
            stacklevel=2,
        )
        r_max = max_rank
    sketch = min(r_max + oversample, max_rank)
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((k, sketch))
    q, _ = np.linalg.qr(matmat(omega))
    for _ in range(power_iters):
        qk, _ = np.linalg.qr(rmatmat(q))
        q, _ = np.linalg.qr(matmat(qk))
    b = rmatmat(q).T
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    r = min(r_max, s.shape[0])
    return FactoredImage(q @ ub[:, :r], s[:r], vt[:r].T, grid)


def soft_threshold(s: np.ndarray, t: float) -> np.ndarray:
    """Shrink singular values toward zero: max(s - t, 0) elementwise."""
    if t < 0:
        raise ValueError(f"threshold must be >= 0, got {t}")
    return np.maximum(np.asarray(s, dtype=np.float64) - t, 0.0)


def prox_nuclear(x, t: float, r_max: int, seed: int = 0) -> FactoredImage:
    """Nuclear-norm proximal step: truncated SVD then spectral shrinkage.

    Singular values that shrink to zero are dropped along with their
    vectors, so the returned rank may be below ``r_max``.
    """
    if t < 0:
        raise ValueError(f"threshold must be >= 0, got {t}")
    f = truncated_svd(x, r_max, seed=seed)
    shrunk = soft_threshold(f.s, t)
    keep = shrunk > 0
    return FactoredImage(f.u[:, keep], shrunk[keep], f.v[:, keep], f.grid)


def add_scaled(a: float, f1: FactoredImage, b: float, f2: FactoredImage) -> FactoredImage:
    """Exact factored form of a*f1 + b*f2.

    Uses stacked factors, two thin QRs, and a small dense SVD; cost is
    O((N + K) (R1 + R2)^2). Singular values at relative machine noise
    are dropped.
    """
    if f1.shape != f2.shape:
        raise ValueError(f"shape mismatch: {f1.shape} vs {f2.shape}")
    if f1.grid is not None and f2.grid is not None and f1.grid != f2.grid:
        raise ValueError("operands live on different grids")
    grid = f1.grid if f1.grid is not None else f2.grid
    n, k = f1.shape
    left = np.hstack([f1.u * (a * f1.s), f2.u * (b * f2.s)])
    right = np.hstack([f1.v, f2.v])
    if left.shape[1] == 0:
        return FactoredImage.zeros(n, k, grid)
    qu, ru = np.linalg.qr(left)
    qv, rv = np.linalg.qr(right)
    us, s, vts = np.linalg.svd(ru @ rv.T, full_matrices=False)
    keep = s > (s[0] * _RANK_EPS if s.size and s[0] > 0 else 0.0)
    return FactoredImage(qu @ us[:, keep], s[keep], (qv @ vts.T)[:, keep], grid)


def frame_column(f: FactoredImage, k: int) -> FrameImage:
    """Materialize frame k of a factored image as a FrameImage."""
    if f.grid is None:
        raise ValueError("factored image has no grid; cannot build a FrameImage")
    return FrameImage(f.grid, f.column_values(k))


def column_difference_energy(f: FactoredImage) -> float:
    """Sum of squared frame-to-frame differences, sum_k |f_{k+1} - f_k|^2."""
    dv = np.diff(f.v, axis=0)
    return float(np.sum((dv * f.s) ** 2))
