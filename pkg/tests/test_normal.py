import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from rbitmc import normal as N
from rbitmc.bitcore import BitSource
from rbitmc.errors import CapacityError

mp.mp.dps = 40


def test_phi_and_Phi_basics():
    assert N.Phi(0.0) == 0.5
    assert abs(N.phi(0.0) - 0.3989422804014327) < 1e-16
    # tail equivalent: 1 - Phi(x) ~ phi(x)/x at x = 8 within 2 percent
    x = 8.0
    assert abs(N.Phi_c(x) / (N.phi(x) / x) - 1.0) < 0.02


def test_Phi_tail_absolute_accuracy():
    # complementary evaluation keeps tiny tail values meaningful
    val = N.Phi(-37.0)
    true = float(mp.ncdf(-37))
    assert val > 0.0
    assert abs(val - true) <= 1e-300 + 1e-13 * true


def test_phi_inv_median_and_quartile():
    assert N.phi_inv(0.5) == 0.0
    oracle = brentq(lambda y: N.Phi(y) - 0.75, 0.0, 1.0, xtol=1e-16, rtol=8.9e-16)
    assert abs(N.phi_inv(0.75) - oracle) < 1e-15
    assert abs(N.phi_inv(0.75) - 0.6744897501960817) < 1e-15


def test_phi_inv_residual_contract():
    rng = np.random.default_rng(7)
    us = np.concatenate([
        rng.uniform(1e-12, 1.0 - 1e-12, 500),
        2.0 ** -np.arange(2, 63, dtype=np.float64),
        1.0 - 2.0 ** -np.arange(2, 53, dtype=np.float64),
    ])
    ys = N.phi_inv(us)
    for u, y in zip(us, ys):
        resid = abs(float(mp.ncdf(mp.mpf(y)) - mp.mpf(u)))
        assert resid <= 1e-15 * max(u, 1.0 - u)


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=0.5, max_value=1.0, exclude_min=True, exclude_max=True))
def test_phi_inv_antisymmetry_exact(w):
    assert N.phi_inv(w) == -N.phi_inv(1.0 - w)


def test_phi_inv_domain_errors():
    for bad in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ValueError):
            N.phi_inv(bad)


def test_phi_inv_tail_values():
    assert N.phi_inv_tail(1.0) == 0.0
    assert abs(N.phi_inv_tail(2.0) - 0.6744897501960817) < 1e-14
    with pytest.raises(ValueError):
        N.phi_inv_tail(0.5)
    # ratio to sqrt(ln 4) sqrt(t): increasing on [10, 60], ~0.955 at t = 50
    ts = np.arange(10, 61, dtype=np.float64)
    ratios = [N.phi_inv_tail(t) / (math.sqrt(N.LN4) * math.sqrt(t)) for t in ts]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    at50 = ratios[40]
    assert 0.9 <= at50 <= 1.0
    assert abs(at50 - 0.955) < 5e-3


def test_bit_normal_support_examples():
    s1 = N.bit_normal_support(1).support
    assert np.allclose(s1, [-0.6744897502, 0.6744897502], atol=1e-9)
    s2 = N.bit_normal_support(2).support
    assert np.allclose(s2, [-1.1503493804, -0.3186393639, 0.3186393639, 1.1503493804], atol=1e-9)
    # antisymmetry, monotonicity, and an exactly-zero mean
    for p in (1, 2, 5, 8):
        s = N.bit_normal_support(p).support
        assert np.all(s[::-1] == -s)
        assert np.all(np.diff(s) > 0)
        assert math.fsum(s) == 0.0


def test_bit_normal_sampling_matches_support():
    src = BitSource(11)
    s2 = set(N.bit_normal_support(2).support)
    draws = {N.bit_normal_sample(src, 2) for _ in range(200)}
    assert draws <= s2
    assert src.bits_drawn == 400
    arr = N.bit_normal_sample_array(src, 2, 1000)
    assert set(arr) <= s2


def test_bit_normal_empirical_mean_p8():
    src = BitSource(20)
    n = 1_000_000
    draws = N.bit_normal_sample_array(src, 8, n)
    sigma_hat = draws.std(ddof=1)
    assert abs(draws.mean()) < 4.0 * sigma_hat / 1000.0


def test_mse_p1_closed_form():
    x = N.phi_inv(0.75)
    closed = 1.0 + x * x - 4.0 * x * N.phi(0.0)
    assert abs(N.bit_normal_mse(1) - closed) < 1e-16
    assert abs(N.bit_normal_mse(1) - 0.37862) < 2e-5


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("p", [1, 2, 4, 6])
def test_mse_against_quadrature_oracle(p):
    n = 1 << p
    total = 0.0
    for k in range(1, n + 1):
        c = N.phi_inv((2 * k - 1) / (2 * n))
        v, _ = quad(lambda u: (N.phi_inv(u) - c) ** 2, (k - 1) / n, k / n,
                    epsabs=1e-16, epsrel=1e-13, limit=300)
        total += v
    assert abs(N.bit_normal_mse(p) - total) < 1e-12 * total


def test_mse_monotone_decreasing():
    vals = [N.bit_normal_mse(p) for p in range(1, 17)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("p", [4, 8, 12, 16])
def test_mse_cross_moment_identity(p):
    mse = N.bit_normal_mse(p)
    ident = 1.0 + N.bit_normal_moment(p, 2) - 2.0 * N.bit_normal_cross_moment(p)
    assert abs(mse - ident) <= 1e-10 * mse


def test_mse_rate_slope_over_12_24():
    ps = np.arange(12, 25, dtype=np.float64)
    y = np.log(np.array([N.bit_normal_mse(int(p)) for p in ps]) * ps)
    slope = np.polyfit(ps * math.log(2.0), y, 1)[0]
    assert -1.10 <= slope <= -0.95


def test_optimal_points_divergent_quantile():
    from rbitmc.wasserstein1d import QuantileSpec
    heavy = QuantileSpec(name="divergent", quantile=lambda u: u ** -2.0, second_moment=math.inf)
    with pytest.raises(ValueError):
        with np.errstate(all="ignore"):
            N.optimal_points(heavy, 2)


def test_mse_capacity_and_surrogate():
    with pytest.raises(CapacityError):
        N.bit_normal_mse(27)
    surro = N.bit_normal_mse_surrogate(30)
    assert surro == N.MSE_SCALED_LIMIT * 2.0 ** -30 / 30
    assert N.bit_normal_mse_extended(12) == N.bit_normal_mse(12)
    assert N.bit_normal_mse_extended(30) == surro


def test_moments():
    x = N.phi_inv(0.75)
    assert abs(N.bit_normal_moment(1, 2) - x * x) < 1e-15
    assert abs(N.bit_normal_moment(1, 2) - 0.4549364231) < 1e-9
    for p in (2, 6, 10, 16):
        assert N.bit_normal_moment(p, 2) <= 1.0
        assert N.bit_normal_moment(p, 4) <= 3.0
    with pytest.raises(ValueError):
        N.bit_normal_moment(4, 3)


def test_monte_carlo_second_moment_consistency():
    p, n = 10, 1_000_000
    src = BitSource(31)
    draws = N.bit_normal_sample_array(src, p, n)
    m2 = N.bit_normal_moment(p, 2)
    m4 = N.bit_normal_moment(p, 4)
    se = math.sqrt((m4 - m2 * m2) / n)
    assert abs(np.mean(draws * draws) - m2) < 4.0 * se


def test_grid_normal_values_match_phi_inv():
    src = BitSource(8)
    idx = src.draw_bits_array(14, 1000) + np.uint64(1)
    direct = N.phi_inv((2.0 * idx.astype(np.float64) - 1.0) * 2.0 ** -15)
    assert np.array_equal(N.grid_normal_values(idx, 14), direct)


def test_optimal_points_normal_two_point():
    pts = N.optimal_points(_normal_spec(), 1)
    root = math.sqrt(2.0 / math.pi)
    assert np.allclose(pts, [-root, root], rtol=1e-13)


def _normal_spec():
    from rbitmc.wasserstein1d import standard_normal_spec
    return standard_normal_spec()


def _uniform_spec():
    from rbitmc.wasserstein1d import uniform_spec
    return uniform_spec()


def test_optimal_points_uniform_are_midpoints():
    for p in (1, 3, 6):
        pts = N.optimal_points(_uniform_spec(), p)
        mids = (2.0 * np.arange(1, (1 << p) + 1) - 1.0) * 2.0 ** -(p + 1)
        assert np.array_equal(pts, mids)


def test_optimal_points_interleave_midpoints_p4():
    p = 4
    opt = N.optimal_points(_normal_spec(), p)
    mid = N.bit_normal_support(p).support
    n = 1 << p
    for k in range(n // 2 + 1, n):  # 1-based cells in the upper half, not the last
        assert mid[k - 1] < opt[k - 1] < mid[k]


def test_func_g():
    assert abs(N.func_g(0.0) - 0.5) < 1e-15
    brute, _ = quad(lambda x: (x - 1.0) ** 2 * N.phi(x), 1.0, 40.0, epsabs=1e-15, epsrel=1e-12)
    assert abs(N.func_g(1.0) - brute) < 1e-12
    assert abs(N.func_g(1.0) - 0.0753) < 1e-4
    with pytest.raises(ValueError):
        N.func_g(-1.0)


def _h_series(a: float) -> float:
    total, term, n = 0.0, a, 0
    while True:
        contrib = term / (2 * n + 1)
        total += contrib
        if abs(contrib) < 1e-18 * abs(total):
            return total
        n += 1
        term *= a * a / (2.0 * n)


def test_func_h_series_oracle():
    for a in (0.1, 0.5, 1.0, 2.5):
        assert abs(N.func_h(a) - _h_series(a)) < 1e-10 * _h_series(a)
    assert abs(N.func_h(0.1) - 0.100167) < 1e-6
    with pytest.raises(ValueError):
        N.func_h(0.0)
    with pytest.raises(CapacityError):
        N.func_h(45.0)


def test_asymptotic_ratio_brackets():
    table = N.asymptotic_ratios(np.arange(10, 51, dtype=np.float64))
    for name in ("ratio1", "ratio2", "ratio3", "ratio4"):
        assert np.all(table[name] >= 0.5) and np.all(table[name] <= 2.0)
    assert abs(table["ratio1"][-1] - 0.955) < 5e-3
    assert np.all(table["ratio5"] > 0.0)
    with pytest.raises(ValueError):
        N.asymptotic_ratios([0.5])
