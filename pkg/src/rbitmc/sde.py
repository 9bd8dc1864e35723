"""Scalar autonomous SDE approximation on [0, 1]:

    dX = a(X) dt + b(X) dW,     X(0) = x0,

by the Milstein scheme on m equidistant steps, its random-bit version with
q-bit grid normals as driving increments, and the continuous-time refinement
that adds one random-bit bridge per step on top of the piecewise-linear
skeleton interpolation.

Coefficients are assumed differentiable with bounded, Lipschitz continuous
derivatives (a caller obligation; it cannot be checked at runtime), and
b(x0) != 0 so the equation is genuinely stochastic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bitcore import BitSource, CostLedger, dyadic_values, truncate_indices
from .bridge import allocation_bridge_total, evaluate_coeffs, sample_bridge_batch
from .errors import ConfigurationError, NumericFailure
from .normal import Phi, grid_normal_values, phi_inv

PARENT_BITS = 63  # precision of the coupling uniforms in experiments
FINE_FACTOR = 64  # step refinement of the fallback reference scheme


@dataclass
class SDEModel:
    drift: Callable
    diffusion: Callable
    diffusion_deriv: Callable
    x0: float
    # exact pathwise solution (t_grid, W_grid) -> values, when available
    exact_strong_solution: Optional[Callable] = None

    def __post_init__(self):
        if self.diffusion(self.x0) == 0.0:
            raise ValueError("diffusion must not vanish at x0 (deterministic equation)")


def geometric_model(mu: float, sigma: float, x0: float = 1.0) -> SDEModel:
    """dX = mu X dt + sigma X dW with exact solution x0 exp((mu - sigma^2/2) t + sigma W)."""
    if sigma == 0.0 or x0 == 0.0:
        raise ValueError("geometric model requires sigma != 0 and x0 != 0")

    def exact(t_grid, w_grid):
        t = np.asarray(t_grid, dtype=np.float64)
        w = np.asarray(w_grid, dtype=np.float64)
        return x0 * np.exp((mu - 0.5 * sigma * sigma) * t + sigma * w)

    return SDEModel(
        drift=lambda x: mu * x,
        diffusion=lambda x: sigma * x,
        diffusion_deriv=lambda x: sigma * np.ones_like(np.asarray(x, dtype=np.float64)),
        x0=x0,
        exact_strong_solution=exact,
    )


@dataclass
class MilsteinPath:
    m: int
    values: np.ndarray            # shape (m + 1,), values at t_k = k/m
    increments_used: np.ndarray   # normalized increments driving the path
    bit_mode: str                 # "exact" or "bits(q)"
    retained_indices: Optional[np.ndarray] = None


def _milstein_rows(model: SDEModel, m: int, normals: np.ndarray) -> np.ndarray:
    """Milstein recursion for a batch: normals shape (rows, m) -> (rows, m+1)."""
    rows = normals.shape[0]
    out = np.empty((rows, m + 1), dtype=np.float64)
    x = np.full(rows, model.x0, dtype=np.float64)
    out[:, 0] = x
    inv_m = 1.0 / m
    sq_m = math.sqrt(inv_m)
    for k in range(m):
        y = normals[:, k]
        bx = model.diffusion(x)
        x = (x + model.drift(x) * inv_m + bx * sq_m * y
             + 0.5 * bx * model.diffusion_deriv(x) * inv_m * (y * y - 1.0))
        if not np.all(np.isfinite(x)):
            raise NumericFailure(f"non-finite state at step {k + 1}", step=k + 1)
        out[:, k + 1] = x
    return out


def milstein_path(model: SDEModel, m: int, normals) -> MilsteinPath:
    """Milstein scheme driven by the given normalized increments."""
    normals = np.asarray(normals, dtype=np.float64)
    if normals.shape != (m,):
        raise ValueError(f"expected {m} normalized increments, got shape {normals.shape}")
    values = _milstein_rows(model, m, normals[np.newaxis, :])[0]
    return MilsteinPath(m, values, normals.copy(), "exact")


def rbit_milstein_path(src: BitSource, model: SDEModel, m: int, q: int) -> MilsteinPath:
    """Random-bit Milstein scheme; consumes exactly m * q bits.

    The q-bit dyadic uniforms are retained (as grid indices) so the coupled
    exact-increment companion can be reconstructed by the caller.
    """
    idx = src.draw_bits_array(q, m) + np.uint64(1)
    y = grid_normal_values(idx, q)
    values = _milstein_rows(model, m, y[np.newaxis, :])[0]
    return MilsteinPath(m, values, y, f"bits({q})", retained_indices=idx)


def sde_bit_cost(m: int, q: int, level: int) -> int:
    """Total bit cost m * (q + 2**(level+2) - 2*level - 4) of the refined path."""
    if m < 1 or q < 1 or level < 1:
        raise ValueError("m, q, level must be positive integers")
    return m * (q + allocation_bridge_total(level))


@dataclass
class RefinedPath:
    """Skeleton values plus per-interval bridge coefficients of X^(q, level)."""

    m: int
    q: int
    level: int
    skeleton: MilsteinPath
    bridge_coeffs: np.ndarray  # shape (m, 2**level - 1)
    bits: int

    def evaluate(self, model: SDEModel, grid) -> np.ndarray:
        t = np.asarray(grid, dtype=np.float64)
        if np.any((t < 0.0) | (t > 1.0)) or np.any(np.diff(t) < 0):
            raise ValueError("grid must be sorted within [0, 1]")
        m = self.m
        k = np.minimum((t * m).astype(np.int64), m - 1)
        s = t * m - k
        xk = self.skeleton.values[k]
        xk1 = self.skeleton.values[k + 1]
        vals = s * xk1 + (1.0 - s) * xk
        bx = np.asarray(model.diffusion(xk), dtype=np.float64)
        for interval in np.unique(k):
            mask = k == interval
            bridge = evaluate_coeffs(self.bridge_coeffs[interval], self.level, s[mask])
            vals[mask] = vals[mask] + bx[mask] * bridge / math.sqrt(m)
        return vals


def refined_path_sample(src: BitSource, model: SDEModel, m: int, q: int, level: int) -> RefinedPath:
    """Draw one continuous-time random-bit approximation X^(q, level).

    Draw order: the m-step skeleton (m*q bits), then one level-`level`
    random-bit bridge per step in step order; total bits = sde_bit_cost.
    """
    before = src.bits_drawn
    skeleton = rbit_milstein_path(src, model, m, q)
    coeffs, _ = sample_bridge_batch(src, level, m)
    used = src.bits_drawn - before
    expected = sde_bit_cost(m, q, level)
    if used != expected:
        raise NumericFailure(f"bit accounting mismatch: {used} != {expected}")
    return RefinedPath(m, q, level, skeleton, coeffs, used)


def refined_path_eval(src: BitSource, model: SDEModel, m: int, q: int, level: int, grid) -> np.ndarray:
    """Values of a fresh X^(q, level) sample on the given grid."""
    return refined_path_sample(src, model, m, q, level).evaluate(model, grid)


def strong_error_experiment(model: SDEModel, m: int, q: int, reps: int, seed: int,
                            reference: str = "auto") -> tuple[float, CostLedger]:
    """RMS of max_k |X_ref(t_k) - X_m^(q)(t_k)| over coupled replications.

    The bit scheme and the reference share driving randomness: each step
    draws one 63-bit parent uniform per replication; the reference uses its
    full-precision normal, the bit scheme the q-bit truncation.  The
    reference is the exact strong solution when the model provides one,
    otherwise a Milstein path on a 64x finer grid over the same Brownian
    path (reference="fine" forces the fallback).
    """
    if reps < 1:
        raise ValueError("reps must be a positive integer")
    if reference not in ("auto", "exact", "fine"):
        raise ConfigurationError(f"unknown reference mode {reference!r}")
    if reference == "exact" and model.exact_strong_solution is None:
        raise ConfigurationError("model provides no exact strong solution")
    use_exact = (reference in ("auto", "exact")) and model.exact_strong_solution is not None
    src = BitSource(seed)
    ledger = CostLedger()
    if use_exact:
        y = np.empty((reps, m), dtype=np.float64)
        yq = np.empty((reps, m), dtype=np.float64)
        for k in range(m):
            idx = src.draw_bits_array(PARENT_BITS, reps) + np.uint64(1)
            y[:, k] = phi_inv(dyadic_values(idx, PARENT_BITS))
            idx_q = truncate_indices(idx, PARENT_BITS, q)
            yq[:, k] = grid_normal_values(idx_q, q)
        ledger.bits += PARENT_BITS * m * reps
        w = np.cumsum(y, axis=1) / math.sqrt(m)
        t = np.arange(1, m + 1, dtype=np.float64) / m
        ref = model.exact_strong_solution(t, w)
    else:
        mf = FINE_FACTOR * m
        yf = np.empty((reps, mf), dtype=np.float64)
        for k in range(mf):
            idx = src.draw_bits_array(53, reps) + np.uint64(1)
            yf[:, k] = phi_inv(dyadic_values(idx, 53))
        ledger.bits += 53 * mf * reps
        y = yf.reshape(reps, m, FINE_FACTOR).sum(axis=2) / math.sqrt(FINE_FACTOR)
        u = Phi(y)
        idx_q = np.minimum((u * 2.0**q).astype(np.int64), (1 << q) - 1).astype(np.uint64) + np.uint64(1)
        yq = grid_normal_values(idx_q, q)
        ref = _milstein_rows(model, mf, yf)[:, FINE_FACTOR::FINE_FACTOR]
    bit = _milstein_rows(model, m, yq)[:, 1:]
    ledger.coeff_ops += m * reps
    err = np.max(np.abs(ref - bit), axis=1)
    return float(np.sqrt(np.mean(err * err))), ledger
