"""Gaussian measures on a separable Hilbert space in Karhunen-Loeve
coordinates, with polynomially decaying eigenvalues

    lambda_i = c * i**-beta * ln(i+1)**-alpha,        beta > 1,

a per-coordinate bit allocation that equalizes the contributions of the
coefficient errors, coupled coarse/fine sampling, and the exact mean-square
error of the truncated random-bit expansion.

The shifted logarithm ln(i+1) replaces ln(i) in the analytic eigenvalue
model so that i = 1 is regular; the decay condition is asymptotic, so any
fixed finite prefix modification is admissible.  The Hilbert space never
appears explicitly: elements are represented by their coordinate vectors in
the (orthonormal) eigenbasis, hence ||x||^2 = sum_i coeffs_i**2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .bitcore import BitAllocation, BitSource, truncate_indices
from .errors import InternalInvariantError
from .normal import bit_normal_mse_extended, grid_normal_values

MAX_ALLOC_BITS = 63


@dataclass
class EigenSpec:
    """Eigenvalue model of the covariance operator.

    Analytic mode fixes lambda_i = scale * i**-beta * ln(i+1)**-alpha;
    explicit mode wraps a user-supplied vectorized eigenvalue function, for
    which the allocation formula is unavailable.
    """

    beta: float
    alpha: float
    scale: float = 1.0
    explicit: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.explicit is None and not self.beta > 1.0:
            raise ValueError("analytic mode requires beta > 1 for summability")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")

    @property
    def analytic(self) -> bool:
        return self.explicit is None

    def eigenvalues(self, i) -> np.ndarray:
        i_arr = np.asarray(i, dtype=np.float64)
        if self.explicit is not None:
            return np.asarray(self.explicit(i_arr), dtype=np.float64)
        return self.scale * i_arr ** -self.beta * np.log(i_arr + 1.0) ** -self.alpha


def allocation_kl(m: int, spec: EigenSpec) -> BitAllocation:
    """Bit counts p_i = ceil(max(ptilde_i, 1)) with

    ptilde_i = beta*log2(m/i) + max(alpha,0)*log2(log2(m+1)/log2(i+1)).
    """
    if m < 1:
        raise ValueError("m must be a positive integer")
    if not spec.analytic:
        raise ValueError("allocation formula requires the analytic eigenvalue mode")
    i = np.arange(1, m + 1, dtype=np.float64)
    ptilde = spec.beta * np.log2(m / i)
    if spec.alpha > 0.0:
        ptilde = ptilde + spec.alpha * np.log2(np.log2(m + 1.0) / np.log2(i + 1.0))
    counts = np.ceil(np.maximum(ptilde, 1.0)).astype(np.int64)
    if counts.max() > MAX_ALLOC_BITS:
        raise ValueError(f"allocation exceeds {MAX_ALLOC_BITS} bits per coefficient")
    return BitAllocation(counts)


@dataclass
class KLVector:
    """Truncated random-bit expansion: coordinates plus retained uniforms."""

    m: int
    coeffs: np.ndarray
    retained_indices: np.ndarray
    allocation: BitAllocation

    def norm_sq(self) -> float:
        return float(np.dot(self.coeffs, self.coeffs))


def _alloc_runs(counts: np.ndarray):
    """Contiguous runs of equal bit counts as (start, stop, p) triples."""
    edges = np.flatnonzero(np.diff(counts)) + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [len(counts)]])
    return [(int(a), int(b), int(counts[a])) for a, b in zip(starts, stops)]


def sample_kl_batch(src: BitSource, m: int, spec: EigenSpec,
                    n: int, allocation: Optional[BitAllocation] = None):
    """Draw n coordinate rows at once: (coeff rows, index rows, allocation).

    Bits are drawn run by run over the allocation (all n rows of a run
    together); total consumption is exactly n * |p(m)|.
    """
    alloc = allocation if allocation is not None else allocation_kl(m, spec)
    if len(alloc) != m:
        raise ValueError("allocation length must equal m")
    lam_sqrt = np.sqrt(spec.eigenvalues(np.arange(1, m + 1)))
    idx = np.empty((n, m), dtype=np.uint64)
    coeffs = np.empty((n, m), dtype=np.float64)
    for a, b, p in _alloc_runs(alloc.counts):
        block = src.draw_bits_array(p, n * (b - a)).reshape(n, b - a) + np.uint64(1)
        idx[:, a:b] = block
        coeffs[:, a:b] = lam_sqrt[a:b] * grid_normal_values(block, p)
    return coeffs, idx, alloc


def sample_kl(src: BitSource, m: int, spec: EigenSpec,
              allocation: Optional[BitAllocation] = None) -> KLVector:
    """One truncated random-bit sample; consumes exactly |p(m)| bits."""
    coeffs, idx, alloc = sample_kl_batch(src, m, spec, 1, allocation)
    return KLVector(m, coeffs[0], idx[0], alloc)


def coarsen_kl_indices(idx_rows: np.ndarray, alloc_fine: BitAllocation,
                       alloc_coarse: BitAllocation) -> np.ndarray:
    """Exact re-truncation of index rows to a coarser allocation."""
    m2 = len(alloc_coarse)
    if m2 > len(alloc_fine):
        raise ValueError("coarse dimension exceeds fine dimension")
    fine = alloc_fine.counts[:m2]
    coarse = alloc_coarse.counts
    if np.any(coarse > fine):
        bad = int(np.flatnonzero(coarse > fine)[0])
        raise InternalInvariantError(
            f"allocation not nested at coordinate {bad + 1}: "
            f"coarse p={int(coarse[bad])} > fine p={int(fine[bad])}")
    rows = np.atleast_2d(idx_rows)[:, :m2]
    out = np.empty_like(rows)
    for a, b, _ in _alloc_runs(np.stack([fine, coarse]).T @ np.array([1 << 32, 1])):
        # runs of identical (fine, coarse) pairs
        out[:, a:b] = truncate_indices(rows[:, a:b], int(fine[a]), int(coarse[a]))
    return out


def coarsen_kl(x: KLVector, m2: int, spec: EigenSpec,
               allocation: Optional[BitAllocation] = None) -> KLVector:
    """Coupled coarse version of a sampled vector; draws no bits."""
    if m2 >= x.m:
        raise ValueError("coarsening requires m2 < m")
    alloc2 = allocation if allocation is not None else allocation_kl(m2, spec)
    idx = coarsen_kl_indices(x.retained_indices[np.newaxis, :], x.allocation, alloc2)[0]
    lam_sqrt = np.sqrt(spec.eigenvalues(np.arange(1, m2 + 1)))
    coeffs = np.empty(m2, dtype=np.float64)
    for a, b, p in _alloc_runs(alloc2.counts):
        coeffs[a:b] = lam_sqrt[a:b] * grid_normal_values(idx[a:b], p)
    return KLVector(m2, coeffs, idx, alloc2)


def tail_sum(m: int, spec: EigenSpec, rel_increment: float = 1e-6) -> tuple[float, float]:
    """Certified interval for sum_{i > m} lambda_i.

    Direct summation proceeds until the next eigenvalue falls below
    ``rel_increment`` times the partial tail; the remainder is bracketed by
    the integral comparison  int_{M+1}^inf  <=  rest  <=  f(M+1) + int_{M+1}^inf,
    valid once the eigenvalue sequence is decreasing.
    """
    f = spec.eigenvalues
    partial = 0.0
    big_m = m
    chunk = max(1024, m)
    while True:
        i = np.arange(big_m + 1, big_m + chunk + 1, dtype=np.float64)
        vals = f(i)
        partial += float(np.sum(vals))
        big_m += chunk
        if vals[-1] <= rel_increment * partial:
            break
        if big_m > 1 << 26:
            break
        chunk *= 2
    while f(np.array([big_m + 1.0]))[0] > f(np.array([float(big_m)]))[0]:
        # extend past any non-monotone prefix before the integral bound applies
        partial += float(f(np.array([big_m + 1.0]))[0])
        big_m += 1
    # int_{M+1}^inf f(x) dx via x = 1/u, finite interval and regular integrand
    lo_u = 1.0 / (big_m + 1.0)
    integral, _ = quad(lambda u: float(f(np.array([1.0 / u]))[0]) / (u * u), 0.0, lo_u,
                       epsabs=0.0, epsrel=1e-10, limit=400)
    first = float(f(np.array([big_m + 1.0]))[0])
    return partial + integral, partial + integral + first


def kl_error_sq(m: int, spec: EigenSpec,
                allocation: Optional[BitAllocation] = None) -> float:
    """Exact E || X - X^(m, p(m)) ||^2 = sum_{i<=m} mse(p_i) lambda_i + tail(m).

    Independence of the coordinates makes the identity exact; bit counts
    beyond the exact-mse capacity use the asymptotic surrogate (flagged in
    the normal module).  The truncation tail enters as the midpoint of its
    certified interval.
    """
    alloc = allocation if allocation is not None else allocation_kl(m, spec)
    if len(alloc) != m:
        raise ValueError("allocation length must equal m")
    lam = spec.eigenvalues(np.arange(1, m + 1))
    head = math.fsum(bit_normal_mse_extended(int(p)) * lam[a:b].sum()
                     for a, b, p in _alloc_runs(alloc.counts))
    lo, hi = tail_sum(m, spec)
    return head + 0.5 * (lo + hi)


def kl_error_interval(m: int, spec: EigenSpec) -> tuple[float, float]:
    """kl_error_sq with the tail's certified interval exposed."""
    alloc = allocation_kl(m, spec)
    lam = spec.eigenvalues(np.arange(1, m + 1))
    head = math.fsum(bit_normal_mse_extended(int(p)) * lam[a:b].sum()
                     for a, b, p in _alloc_runs(alloc.counts))
    lo, hi = tail_sum(m, spec)
    return head + lo, head + hi
