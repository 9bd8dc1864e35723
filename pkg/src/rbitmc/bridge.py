"""Brownian bridge in the Schauder (hat-function) basis, its level-l
truncation, and the random-bit version with per-coefficient bit counts.

Basis index i >= 1 decomposes as i = 2**m + k - 1 with level m and offset
k in 1..2**m; the hat s_i is supported on [(k-1)/2**m, k/2**m] with peak
height 2**(-m/2-1).  Truncating the expansion after 2**l - 1 terms gives the
piecewise-linear interpolation of the bridge on the dyadic grid of mesh
2**-l, so paths are evaluated either lazily (per point, one hat per level)
or via midpoint refinement on the dyadic nodes.

The random-bit version replaces coefficient i by its p_i-bit grid normal,
with p_i = 2 * (l - level(i)); coarsening to a lower level is an exact
re-truncation of the retained dyadic uniforms and draws no new bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bitcore import BitAllocation, BitSource, truncate_indices
from .errors import CapacityError
from .normal import bit_normal_mse, bit_normal_mse_extended, grid_normal_values

MAX_LEVEL = 25


def schauder_level(i: int) -> tuple[int, int]:
    """Level m and offset k (1-based) of basis index i = 2**m + k - 1."""
    if i < 1:
        raise ValueError("basis index must be >= 1")
    m = int(i).bit_length() - 1
    return m, i - (1 << m) + 1


def schauder(i: int, t) -> np.ndarray | float:
    """Hat function s_i evaluated at t in [0, 1]."""
    m, k = schauder_level(i)
    t = np.asarray(t, dtype=np.float64)
    center = (k - 0.5) / 2.0**m
    height = 2.0 ** (-m / 2.0 - 1.0)
    out = height * np.maximum(0.0, 1.0 - np.abs(t - center) * 2.0 ** (m + 1))
    return float(out) if out.ndim == 0 else out


def schauder_norm_sq(i) -> np.ndarray | float:
    """Exact squared L2 norm of s_i: the triangle integral 2**(-2m-2)/3."""
    i_arr = np.asarray(i, dtype=np.int64)
    if np.any(i_arr < 1):
        raise ValueError("basis index must be >= 1")
    m = np.floor(np.log2(i_arr)).astype(np.int64)
    # guard against log2 rounding at exact powers of two
    m = np.where(1 << (m + 1) <= i_arr, m + 1, m)
    m = np.where(1 << m > i_arr, m - 1, m)
    out = 2.0 ** (-2.0 * m - 2.0) / 3.0
    return float(out) if out.ndim == 0 else out


def allocation_bridge(level: int) -> BitAllocation:
    """Bit counts p_i = 2 * (level - m_i) for i = 1 .. 2**level - 1."""
    if level < 1:
        raise ValueError("level must be >= 1")
    if level > 30:
        raise CapacityError("bridge allocation capped at level 30")
    counts = np.concatenate([
        np.full(1 << m, 2 * (level - m), dtype=np.int64) for m in range(level)
    ])
    return BitAllocation(counts)


def allocation_bridge_total(level: int) -> int:
    """Closed form |p(level)| = 2**(level+2) - 2*level - 4."""
    return (1 << (level + 2)) - 2 * level - 4


@dataclass
class BridgePath:
    """Random-bit bridge sample: coefficients plus retained dyadic uniforms.

    ``retained_indices`` stores the 1-based grid index of each coefficient's
    dyadic uniform (not the float), so coarsening is a bit-exact shift.
    """

    level: int
    coeffs: np.ndarray
    retained_indices: np.ndarray
    allocation: BitAllocation

    def value(self, t) -> np.ndarray | float:
        """Evaluate the path at t in [0, 1] (lazy, one hat per level)."""
        return evaluate_coeffs(self.coeffs, self.level, t)

    def node_values(self) -> np.ndarray:
        """Path values at the dyadic nodes k * 2**-level, k = 0..2**level."""
        return nodes_from_coeffs(self.coeffs[np.newaxis, :], self.level)[0]


def evaluate_coeffs(coeffs: np.ndarray, level: int, t) -> np.ndarray | float:
    """Sum of coeffs_i * s_i(t) using the one-active-hat-per-level structure."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any((t_arr < 0.0) | (t_arr > 1.0)):
        raise ValueError("evaluation points must lie in [0, 1]")
    out = np.zeros_like(t_arr)
    for m in range(level):
        k = np.minimum((t_arr * 2.0**m).astype(np.int64), (1 << m) - 1)
        i = (1 << m) + k  # basis index minus one offset: i - 1 indexes coeffs
        center = (k + 0.5) / 2.0**m
        height = 2.0 ** (-m / 2.0 - 1.0)
        hat = height * np.maximum(0.0, 1.0 - np.abs(t_arr - center) * 2.0 ** (m + 1))
        out += coeffs[..., i - 1] * hat
    if np.asarray(t).ndim == 0:
        return float(out[0])
    return out


def nodes_from_coeffs(coeff_rows: np.ndarray, level: int) -> np.ndarray:
    """Node values at mesh 2**-level for a batch of coefficient rows.

    Midpoint refinement: level-m hats vanish on the level-m grid and
    contribute their peak at the new midpoints, so each refinement step is
    an average plus a scaled coefficient.
    """
    rows = np.atleast_2d(coeff_rows)
    n = rows.shape[0]
    vals = np.zeros((n, 2), dtype=np.float64)
    for m in range(level):
        mids = 0.5 * (vals[:, :-1] + vals[:, 1:]) + rows[:, (1 << m) - 1:(1 << (m + 1)) - 1] * 2.0 ** (-m / 2.0 - 1.0)
        merged = np.empty((n, vals.shape[1] + mids.shape[1]), dtype=np.float64)
        merged[:, 0::2] = vals
        merged[:, 1::2] = mids
        vals = merged
    return vals


def pl_l2_norm_sq(node_rows: np.ndarray) -> np.ndarray:
    """Exact squared L2[0,1] norm of piecewise-linear rows on a uniform grid."""
    rows = np.atleast_2d(node_rows)
    h = 1.0 / (rows.shape[1] - 1)
    a, b = rows[:, :-1], rows[:, 1:]
    return (h / 3.0) * np.sum(a * a + a * b + b * b, axis=1)


def pl_inner(node_rows_f: np.ndarray, node_rows_g: np.ndarray) -> np.ndarray:
    """Exact L2[0,1] inner product of piecewise-linear rows on a shared grid."""
    f = np.atleast_2d(node_rows_f)
    g = np.atleast_2d(node_rows_g)
    if f.shape[1] != g.shape[1]:
        raise ValueError("node grids must match")
    h = 1.0 / (f.shape[1] - 1)
    fa, fb = f[:, :-1], f[:, 1:]
    ga, gb = g[:, :-1], g[:, 1:]
    return (h / 6.0) * np.sum(fa * (2.0 * ga + gb) + fb * (ga + 2.0 * gb), axis=1)


def sample_bridge_batch(src: BitSource, level: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw n random-bit bridges at once: (coefficient rows, index rows).

    Bits are drawn level-block by level-block (all n rows of a block
    together), consuming exactly n * |p(level)| bits in total.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    if level > MAX_LEVEL:
        raise CapacityError(f"bridge sampling capped at level {MAX_LEVEL}")
    dim = (1 << level) - 1
    idx = np.empty((n, dim), dtype=np.uint64)
    coeffs = np.empty((n, dim), dtype=np.float64)
    for m in range(level):
        p = 2 * (level - m)
        lo, hi = (1 << m) - 1, (1 << (m + 1)) - 1
        block = src.draw_bits_array(p, n * (hi - lo)).reshape(n, hi - lo) + np.uint64(1)
        idx[:, lo:hi] = block
        coeffs[:, lo:hi] = grid_normal_values(block, p)
    return coeffs, idx


def sample_bridge(src: BitSource, level: int) -> BridgePath:
    """One random-bit bridge at the given level; consumes |p(level)| bits."""
    coeffs, idx = sample_bridge_batch(src, level, 1)
    return BridgePath(level, coeffs[0], idx[0], allocation_bridge(level))


def coarsen_indices_bridge(idx_rows: np.ndarray, level: int, new_level: int) -> np.ndarray:
    """Exact re-truncation of retained uniform indices to a lower level."""
    if new_level >= level:
        raise ValueError("coarsening requires new_level < level")
    rows = np.atleast_2d(idx_rows)
    dim = (1 << new_level) - 1
    out = np.empty((rows.shape[0], dim), dtype=np.uint64)
    for m in range(new_level):
        lo, hi = (1 << m) - 1, (1 << (m + 1)) - 1
        out[:, lo:hi] = truncate_indices(rows[:, lo:hi], 2 * (level - m), 2 * (new_level - m))
    return out


def coarsen(path: BridgePath, new_level: int) -> BridgePath:
    """Coupled coarse version of a sampled bridge; draws no bits."""
    idx = coarsen_indices_bridge(path.retained_indices[np.newaxis, :], path.level, new_level)[0]
    alloc = allocation_bridge(new_level)
    coeffs = np.empty(len(idx), dtype=np.float64)
    for m in range(new_level):
        p = 2 * (new_level - m)
        lo, hi = (1 << m) - 1, (1 << (m + 1)) - 1
        coeffs[lo:hi] = grid_normal_values(idx[lo:hi], p)
    return BridgePath(new_level, coeffs, idx, alloc)


def bridge_truncation_error_sq(level: int) -> float:
    """Exact E || B - B^(level) ||_{L2}^2 = 2**-level / 6 (tail of norm sums)."""
    if level < 1:
        raise ValueError("level must be >= 1")
    return 2.0 ** -level / 6.0


def bridge_bit_error_sq(level: int) -> float:
    """Exact E || B - B^(level, p(level)) ||_{L2}^2.

    Independence of the coefficients makes the pointwise-variance identity
    exact: sum_i mse(p_i) ||s_i||^2 plus the truncation tail.  Bit counts
    above the exact-mse capacity (p > 26, i.e. level > 13) fall back to the
    asymptotic surrogate; their weight in the sum is below 1e-4 relative.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    if level > MAX_LEVEL:
        raise CapacityError(f"bridge error formula capped at level {MAX_LEVEL}")
    acc = 0.0
    for m in range(level):
        p = 2 * (level - m)
        norm_sq = 2.0 ** (-2 * m - 2) / 3.0
        acc += (1 << m) * bit_normal_mse_extended(p) * norm_sq
    return acc + bridge_truncation_error_sq(level)


def precision_sum(level: int) -> float:
    """sum_i 2**-p_i / p_i * i**-2 for the bridge allocation at this level."""
    if level < 1:
        raise ValueError("level must be >= 1")
    total = 0.0
    for m in range(level):
        p = 2 * (level - m)
        i = np.arange(1 << m, 1 << (m + 1), dtype=np.float64)
        total += 2.0 ** -p / p * math.fsum(i ** -2.0)
    return total


def coupled_difference_mean_sq(level: int) -> float:
    """Exact E || B^(level) - B^(level, p(level)) ||_{L2}^2 (no truncation tail)."""
    acc = 0.0
    for m in range(level):
        p = 2 * (level - m)
        acc += (1 << m) * bit_normal_mse(p) * 2.0 ** (-2 * m - 2) / 3.0
    return acc
