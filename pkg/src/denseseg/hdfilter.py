"""High-dimensional Gaussian filtering: exact reference and lattice approximation.

The exact route computes ``out[i] = sum_j exp(-||f_i - f_j||^2 / 2) v[j]``
(self term included) in O(n^2) and serves as the oracle. The fast route embeds
the points on the permutohedral hyperplane in d+1 dimensions, scatters each
point's value onto the d+1 vertices of its enclosing simplex (splat), runs a
[1, 2, 1]/4 pass along each of the d+1 lattice directions (blur), and gathers
back with the same barycentric weights times a fixed gain (slice). Feature
coordinates must arrive pre-divided by their sigma; the kernel here is always
unit variance.

Lattices are immutable after construction; filtering allocates per-call
scratch, so one lattice may filter several value buffers concurrently.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from denseseg.core import ShapeError


@dataclass(frozen=True)
class FeaturePoints:
    """n points in a d-dimensional feature space, already scaled to unit sigma."""

    coords: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.coords), dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"feature coords must be 2-d (n, d), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"need at least one point and one dimension, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("feature coords must be finite")
        object.__setattr__(self, "coords", arr)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def d(self) -> int:
        return self.coords.shape[1]


def _as_value_matrix(values, n: int) -> tuple[np.ndarray, bool]:
    v = np.asarray(values)
    squeezed = v.ndim == 1
    if squeezed:
        v = v[:, None]
    if v.ndim != 2 or v.shape[0] != n:
        raise ShapeError(f"values must be (n, L) with n={n}, got shape {np.shape(values)}")
    return v, squeezed


def gaussian_filter_exact(values, feats: FeaturePoints, block_size: int = 2048) -> np.ndarray:
    """All-pairs unit-variance Gaussian filtering, float64, self term included."""
    v, squeezed = _as_value_matrix(values, feats.n)
    v = v.astype(np.float64)
    f = feats.coords
    sq = np.einsum("ij,ij->i", f, f)
    out = np.empty_like(v)
    for start in range(0, feats.n, block_size):
        stop = min(start + block_size, feats.n)
        block = f[start:stop]
        # ||a-b||^2 via the inner-product identity; clamp the tiny negatives
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (block @ f.T)
        np.maximum(d2, 0.0, out=d2)
        out[start:stop] = np.exp(-0.5 * d2) @ v
    return out[:, 0] if squeezed else out


def _tick(timer: dict | None, key: str, t0: float) -> float:
    if timer is None:
        return t0
    now = time.perf_counter()
    timer[key] = timer.get(key, 0.0) + (now - t0)
    return now


class PermutohedralLattice:
    """Simplex lattice for one fixed set of feature points.

    Exposed structure (read-only): ``offsets`` maps each point to the ids of
    its d+1 enclosing vertices (ids start at 1; row 0 of every vertex-indexed
    array is an all-zero sentinel for missing neighbors), ``barycentric``
    holds the matching interpolation weights, ``vertex_keys`` the integer
    lattice coordinates (first d of d+1, the last is implied by the zero-sum
    constraint), and ``blur_n1``/``blur_n2`` the neighbor ids along each of
    the d+1 blur directions.
    """

    def __init__(self, feats: FeaturePoints) -> None:
        if not isinstance(feats, FeaturePoints):
            feats = FeaturePoints(feats)
        n, d = feats.n, feats.d
        dp1 = d + 1
        self.num_points = n
        self.dim = d

        # Scale so the [1,2,1] blur chain matches a unit Gaussian, then project
        # onto the zero-sum hyperplane in d+1 coordinates.
        idx = np.arange(d, dtype=np.float64)
        scale = (dp1 * np.sqrt(2.0 / 3.0)) / np.sqrt((idx + 1.0) * (idx + 2.0))
        basis = np.zeros((dp1, d))
        basis[0, :] = 1.0
        for j in range(1, dp1):
            basis[j, j - 1] = -float(j)
            basis[j, j:] = 1.0
        elevated = (feats.coords * scale) @ basis.T  # (n, d+1), rows sum to 0

        # Nearest zero-remainder point along each coordinate (ties go down).
        v = elevated / dp1
        up = np.ceil(v) * dp1
        down = np.floor(v) * dp1
        rem0 = np.where(up - elevated < elevated - down, up, down)
        coord_sums = np.rint(rem0.sum(axis=1) / dp1).astype(np.int64)

        # rank[i] = how many coordinates exceed coordinate i (ties to the
        # earlier index), then shifted back onto the canonical simplex range.
        diff = elevated - rem0
        beats = (diff[:, :, None] > diff[:, None, :]) | (
            (diff[:, :, None] == diff[:, None, :])
            & (np.arange(dp1)[None, :, None] < np.arange(dp1)[None, None, :])
        )
        rank = beats.sum(axis=1) + coord_sums[:, None]
        low = rank < 0
        rank[low] += dp1
        rem0[low] += dp1
        high = rank > d
        rank[high] -= dp1
        rem0[high] -= dp1

        # Barycentric weights from the sorted fractional remainders; rem0 may
        # have moved in the wraparound fix above, so recompute the fractions.
        bary = np.zeros((n, d + 2))
        rows = np.arange(n)
        frac = (elevated - rem0) / dp1
        for c in range(dp1):
            bary[rows, d - rank[:, c]] += frac[:, c]
            bary[rows, d + 1 - rank[:, c]] -= frac[:, c]
        bary[:, 0] += 1.0 + bary[:, d + 1]
        self.barycentric = bary[:, :dp1]

        # Integer keys (first d coordinates) of each point's d+1 vertices.
        rem0_int = np.rint(rem0[:, :d]).astype(np.int64)
        keys = np.empty((n, dp1, d), dtype=np.int64)
        for remainder in range(dp1):
            canonical = np.where(
                rank[:, :d] <= d - remainder, remainder, remainder - dp1
            )
            keys[:, remainder, :] = rem0_int + canonical

        flat_keys = keys.reshape(-1, d)
        self._key_min = flat_keys.min(axis=0)
        shifted = flat_keys - self._key_min
        self._key_range = shifted.max(axis=0)
        # one spare bit per column keeps out-of-range neighbor queries from
        # carrying into the next column's field before the validity mask hits
        bits = np.array([int(r).bit_length() + 1 for r in self._key_range], dtype=np.int64)
        self._packable = int(bits.sum()) <= 63
        if self._packable:
            shifts = np.concatenate([np.cumsum(bits[::-1])[::-1][1:], [0]])
            self._key_shifts = shifts
            packed = (shifted << shifts).sum(axis=1)
            uniq, first, inverse = np.unique(packed, return_index=True, return_inverse=True)
            self._packed_vertex_keys = uniq
            self._table = None
        else:
            _, first, inverse = np.unique(
                flat_keys, axis=0, return_index=True, return_inverse=True
            )
            self._packed_vertex_keys = None
        self.num_vertices = len(first)
        self.vertex_keys = flat_keys[first]
        if not self._packable:
            self._table = {
                tuple(row): i + 1 for i, row in enumerate(self.vertex_keys.tolist())
            }
        self.offsets = (inverse.reshape(n, dp1) + 1).astype(np.int64)

        # Blur neighbors: along direction j the neighbor keys are
        # key -+ 1 in every stored coordinate, with +-(d+1) restored at j < d.
        self.blur_n1 = np.zeros((dp1, self.num_vertices + 1), dtype=np.int64)
        self.blur_n2 = np.zeros((dp1, self.num_vertices + 1), dtype=np.int64)
        for j in range(dp1):
            nk1 = self.vertex_keys - 1
            nk2 = self.vertex_keys + 1
            if j < d:
                nk1[:, j] += dp1
                nk2[:, j] -= dp1
            self.blur_n1[j, 1:] = self._lookup(nk1)
            self.blur_n2[j, 1:] = self._lookup(nk2)

        # Gain restoring the halved blur mass over d+1 passes, times the
        # classic correction matching the lattice kernel to the unit Gaussian.
        self.alpha = float(2 ** (dp1)) / (1.0 + 2.0 ** (-d))

        weights32 = self.barycentric.astype(np.float32)
        point_ids = np.repeat(np.arange(n, dtype=np.int64), dp1)
        self._splat = scipy.sparse.csr_matrix(
            (weights32.ravel(), (self.offsets.ravel(), point_ids)),
            shape=(self.num_vertices + 1, n),
        )
        self._slice = self._splat.T.tocsr()

    def _lookup(self, query_keys: np.ndarray) -> np.ndarray:
        """Vertex ids (1-based) for integer keys; 0 where the key is absent."""
        if self._packable:
            shifted = query_keys - self._key_min
            valid = np.all((shifted >= 0) & (shifted <= self._key_range), axis=1)
            packed = (shifted.clip(0) << self._key_shifts).sum(axis=1)
            pos = np.searchsorted(self._packed_vertex_keys, packed)
            pos = np.minimum(pos, len(self._packed_vertex_keys) - 1)
            found = valid & (self._packed_vertex_keys[pos] == packed)
            return np.where(found, pos + 1, 0)
        return np.array(
            [self._table.get(tuple(row), 0) for row in query_keys.tolist()], dtype=np.int64
        )

    def filter(self, values, timer: dict | None = None) -> np.ndarray:
        """Splat -> blur -> slice; float32 output approximating the exact filter."""
        v, squeezed = _as_value_matrix(values, self.num_points)
        t0 = time.perf_counter() if timer is not None else 0.0
        lat = self._splat @ np.ascontiguousarray(v, dtype=np.float32)
        t0 = _tick(timer, "splat", t0)
        scratch = np.empty_like(lat)
        gathered = np.empty_like(lat)
        for j in range(self.dim + 1):
            np.take(lat, self.blur_n1[j], axis=0, out=scratch)
            np.take(lat, self.blur_n2[j], axis=0, out=gathered)
            scratch += gathered
            scratch *= 0.25
            lat *= 0.5
            lat += scratch
        t0 = _tick(timer, "blur", t0)
        out = self._slice @ lat
        out *= np.float32(self.alpha)
        _tick(timer, "slice", t0)
        return out[:, 0] if squeezed else out


def lattice_build(feats: FeaturePoints) -> PermutohedralLattice:
    return PermutohedralLattice(feats)


def lattice_filter(
    lattice: PermutohedralLattice, values, timer: dict | None = None
) -> np.ndarray:
    return lattice.filter(values, timer=timer)


def lattice_filter_normalized(lattice: PermutohedralLattice, values) -> np.ndarray:
    """Filter with an appended all-ones column and divide it out.

    The homogeneous division cancels the lattice's spatially varying mass, so
    constant inputs come back as the same constants (up to float32 noise).
    """
    v, squeezed = _as_value_matrix(values, lattice.num_points)
    stacked = np.concatenate([v, np.ones((lattice.num_points, 1), v.dtype)], axis=1)
    filtered = lattice.filter(stacked)
    out = filtered[:, :-1] / filtered[:, -1:]
    return out[:, 0] if squeezed else out
