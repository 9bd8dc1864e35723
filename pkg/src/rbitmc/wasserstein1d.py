"""Exact and empirical Wasserstein-2 distances between one-dimensional laws
and discrete uniform measures.

For a law given by its quantile function, the distance to a measure that
puts mass 1/n on points x_1 <= ... <= x_n is attained by the monotone
(quantile) coupling, so

    W_2^2 = sum_k  int_{(k-1)/n}^{k/n} (quantile(u) - x_k)^2 du

is exact and no transport solver is needed.  Cell integrals use closed
forms when the law provides them (normal, uniform) and adaptive quadrature
otherwise, switching to the tail parametrization u = 1 - 2**-t for cells
within 2**-40 of the endpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from . import normal as _normal
from .errors import CapacityError
from .normal import gaussian_cell_sq_error, optimal_points

_TAIL_EDGE = 2.0 ** -40
_LN2 = math.log(2.0)


@dataclass
class QuantileSpec:
    """A one-dimensional law described by its quantile function.

    ``tail_form(t)`` evaluates the quantile at 1 - 2**-t without forming
    1 - 2**-t in floating point; ``cell_average`` and ``cell_sq_error`` are
    optional closed forms for cell means and squared cell errors used in
    place of quadrature.
    """

    name: str
    quantile: Callable[[float], float]
    second_moment: float
    tail_form: Optional[Callable[[float], float]] = None
    cell_average: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    cell_sq_error: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None


def standard_normal_spec() -> QuantileSpec:
    def _cell_average(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        def edge_pdf(u):
            interior = (u > 0.0) & (u < 1.0)
            y = _normal.phi_inv(np.where(interior, u, 0.5))
            return np.where(interior, _normal.INV_SQRT_2PI * np.exp(-0.5 * y * y), 0.0)
        return (edge_pdf(lo) - edge_pdf(hi)) / (hi - lo)

    return QuantileSpec(
        name="normal",
        quantile=_normal.phi_inv,
        second_moment=1.0,
        tail_form=_normal.phi_inv_tail,
        cell_average=_cell_average,
        cell_sq_error=gaussian_cell_sq_error,
    )


def uniform_spec() -> QuantileSpec:
    def _cell_sq_error(lo, hi, c):
        # int_lo^hi (u - c)^2 du, exact cubic difference
        return ((hi - c) ** 3 - (lo - c) ** 3) / 3.0

    return QuantileSpec(
        name="uniform",
        quantile=lambda u: np.asarray(u, dtype=np.float64),
        second_moment=1.0 / 3.0,
        tail_form=lambda t: 1.0 - 2.0 ** -t,
        cell_average=lambda lo, hi: 0.5 * (lo + hi),
        cell_sq_error=_cell_sq_error,
    )


@dataclass
class DiscreteUniform:
    """Uniform distribution on a sorted finite support."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 1 or len(self.points) == 0:
            raise ValueError("support must be a non-empty 1-d sequence")
        if np.any(np.diff(self.points) < 0):
            raise ValueError("support points must be sorted")

    def __len__(self) -> int:
        return len(self.points)


def _cell_sq_error_quad(q: QuantileSpec, lo: float, hi: float, c: float) -> float:
    """Quadrature fallback for one cell, tail-parametrized near the endpoints."""
    if 1.0 - hi < _TAIL_EDGE and q.tail_form is not None:
        # upper tail: substitute u = 1 - 2**-t, du = ln2 * 2**-t dt; beyond
        # t_lo + 80 the remaining mass is below 1e-15 of the cell
        t_lo = -math.log2(1.0 - lo)
        t_hi = -math.log2(1.0 - hi) if hi < 1.0 else math.inf
        f = lambda t: (q.tail_form(t) - c) ** 2 * _LN2 * 2.0 ** -t
        v, _ = quad(f, t_lo, min(t_hi, t_lo + 80.0), epsabs=0.0, epsrel=1e-10, limit=300)
    elif lo < _TAIL_EDGE and q.tail_form is not None:
        # lower tail via u = 2**-t
        t_lo = -math.log2(hi)
        t_hi = -math.log2(lo) if lo > 0.0 else math.inf
        f = lambda t: (q.quantile(2.0 ** -t) - c) ** 2 * _LN2 * 2.0 ** -t
        v, _ = quad(f, t_lo, min(t_hi, t_lo + 80.0), epsabs=0.0, epsrel=1e-10, limit=300)
    else:
        v, _ = quad(lambda u: (q.quantile(u) - c) ** 2, lo, hi,
                    epsabs=0.0, epsrel=1e-10, limit=300)
    if not np.isfinite(v):
        raise ValueError(f"divergent cell integral on ({lo}, {hi})")
    return v


def w2_uniform(q: QuantileSpec, nu: DiscreteUniform) -> float:
    """Exact W2 distance between the law of q and a discrete uniform measure."""
    n = len(nu)
    if n & (n - 1):
        raise ValueError("support size must be a power of two (2**p points)")
    pts = nu.points
    lo = np.arange(0, n, dtype=np.float64) / n
    hi = np.arange(1, n + 1, dtype=np.float64) / n
    if q.cell_sq_error is not None:
        cells = np.asarray(q.cell_sq_error(lo, hi, pts), dtype=np.float64)
        total = math.fsum(cells)
    else:
        total = math.fsum(
            _cell_sq_error_quad(q, lo[k], hi[k], pts[k]) for k in range(n)
        )
    if not np.isfinite(total) or total < -1e-15:
        raise ValueError("divergent Wasserstein cell integral")
    return math.sqrt(max(total, 0.0))


def rbit_error(q: QuantileSpec, p: int) -> float:
    """Exact distance from the law to its best 2**p-point uniform approximation."""
    if p < 1:
        raise ValueError("p must be a positive integer")
    if p > _normal.MSE_EXACT_MAX_P:
        raise CapacityError(f"cell enumeration capped at p={_normal.MSE_EXACT_MAX_P}")
    return w2_uniform(q, DiscreteUniform(optimal_points(q, p)))


def w2_empirical(a, b) -> float:
    """Exact W2 between the empirical measures of two equal-size samples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) == 0:
        raise ValueError("samples must be non-empty 1-d sequences of equal length")
    d = np.sort(a) - np.sort(b)
    return math.sqrt(np.mean(d * d))
