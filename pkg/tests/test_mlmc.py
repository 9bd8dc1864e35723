import math

import numpy as np
import pytest

from rbitmc import mlmc as M
from rbitmc.bitcore import BitSource, child_source
from rbitmc.bridge import BridgePath, allocation_bridge, allocation_bridge_total, pl_l2_norm_sq
from rbitmc.errors import ConfigurationError
from rbitmc.gausskl import EigenSpec, KLVector, allocation_kl

BRIDGE = M.bridge_model()
KL_SPEC = EigenSpec(beta=2.0, alpha=0.0)


def test_params_reference_case():
    p = M.mlmc_params(math.exp(-2.0), 2.0, 0.0)
    assert abs(p.z - (1.0 + math.exp(2.0))) < 1e-12
    assert p.L == 7
    assert abs(p.K - 2.0 * math.exp(4.0)) < 1e-9
    assert p.N == [55, 28, 14, 7, 4, 2, 1]
    assert M.theoretical_cost(p) == 830.0


def test_params_k_cases():
    assert abs(M.mlmc_params(math.exp(-2.0), 3.0, 0.0).K - math.exp(4.0)) < 1e-9
    # beta < 2 uses exponent beta/(beta-1) and the negative-log-power factor
    p = M.mlmc_params(math.exp(-2.0), 1.5, 1.0)
    assert abs(p.K - math.exp(-2.0) ** -3.0 * 2.0 ** -1.0) < 1e-9
    # beta = 2, alpha = 2 uses ln ln
    p = M.mlmc_params(math.exp(-3.0), 2.0, 2.0)
    assert abs(p.K - math.exp(6.0) * math.log(3.0)) < 1e-9


def test_params_validation_and_nl():
    with pytest.raises(ValueError):
        M.mlmc_params(0.2, 2.0, 0.0)  # above e^-2
    with pytest.raises(ValueError):
        M.mlmc_params(0.01, 1.0, 0.0)
    for eps in (2.0 ** -3, 2.0 ** -6, 1e-4):
        p = M.mlmc_params(eps, 2.0, 0.0)
        assert all(n >= 1 for n in p.N)


def test_cost_monotone_as_eps_shrinks():
    costs = [M.theoretical_cost(M.mlmc_params(2.0 ** -k, 2.0, 0.0)) for k in range(3, 9)]
    assert all(b >= a for a, b in zip(costs, costs[1:]))


def test_ledger_bits_identity_bridge_and_kl():
    params = M.mlmc_params(2.0 ** -3, 2.0, 0.0)
    res = M.mlmc_estimate(M.lookup_functional("norm"), BRIDGE, params, BitSource(1))
    expected = sum(n * allocation_bridge_total(l)
                   for l, n in zip(range(1, params.L + 1), params.N))
    assert res.ledger.bits == expected
    km = M.kl_model(KL_SPEC)
    res = M.mlmc_estimate(M.lookup_functional("norm"), km, params, BitSource(2))
    expected = sum(n * allocation_kl(1 << l, KL_SPEC).total
                   for l, n in zip(range(1, params.L + 1), params.N))
    assert res.ledger.bits == expected


def test_oracle_cost_uses_exact_dimensions():
    params = M.mlmc_params(math.exp(-2.0), 2.0, 0.0)
    res = M.mlmc_estimate(M.lookup_functional("coord1"), BRIDGE, params, BitSource(3))
    expected = 0
    for l, n in zip(range(1, params.L + 1), params.N):
        expected += n * ((1 << l) - 1)
        if l >= 2:
            expected += n * ((1 << (l - 1)) - 1)
    assert res.ledger.oracle_cost == expected


def test_estimator_deterministic():
    params = M.mlmc_params(2.0 ** -3, 2.0, 0.0)
    f = M.lookup_functional("coord1")
    a = M.mlmc_estimate(f, BRIDGE, params, BitSource(100))
    b = M.mlmc_estimate(f, BRIDGE, params, BitSource(100))
    assert a.estimate == b.estimate
    assert a.ledger.bits == b.ledger.bits


def test_coupling_bit_exact():
    src = BitSource(8)
    state = BRIDGE.sample_rows(src, 5, 64)
    c1 = BRIDGE.coarsen_rows(state)
    c2 = BRIDGE.coarsen_rows(state)
    assert np.array_equal(c1["idx"], c2["idx"])
    assert np.array_equal(c1["coeffs"], c2["coeffs"])


def test_zero_mean_estimator_200_runs():
    params = M.mlmc_params(math.exp(-2.0), 2.0, 0.0)
    f = M.lookup_functional("coord1")
    ests = np.array([M.mlmc_estimate(f, BRIDGE, params, child_source(40, r)).estimate
                     for r in range(200)])
    se = ests.std(ddof=1) / math.sqrt(len(ests))
    assert abs(ests.mean()) < 4.0 * se


def test_telescoping_matches_single_level():
    params = M.mlmc_params(2.0 ** -3, 2.0, 0.0)
    f = M.lookup_functional("norm")
    runs = np.array([M.mlmc_estimate(f, BRIDGE, params, child_source(41, r)).estimate
                     for r in range(60)])
    ref_mean, ref_se, _ = M.plain_mc(f, BRIDGE, params.L, 100_000, BitSource(4242))
    se = runs.std(ddof=1) / math.sqrt(len(runs))
    assert abs(runs.mean() - ref_mean) < 4.0 * math.sqrt(se * se + ref_se * ref_se)


def test_min_bits_mode():
    params = M.mlmc_params(2.0 ** -3, 2.0, 0.0)
    f = M.lookup_functional("norm")
    res = M.mlmc_estimate(f, BRIDGE, params, BitSource(50), min_bits=20)
    expected = sum(n * int(np.maximum(allocation_bridge(l).counts, 20).sum())
                   for l, n in zip(range(1, params.L + 1), params.N))
    assert res.ledger.bits == expected


def test_parallel_mode_reproducible():
    params = M.mlmc_params(2.0 ** -3, 2.0, 0.0)
    f = M.lookup_functional("coord1")
    a = M.mlmc_estimate(f, BRIDGE, params, BitSource(0), parallel=True, base_seed=99)
    b = M.mlmc_estimate(f, BRIDGE, params, BitSource(0), parallel=True, base_seed=99)
    assert a.estimate == b.estimate
    assert a.ledger.bits == b.ledger.bits
    with pytest.raises(ConfigurationError):
        M.mlmc_estimate(f, BRIDGE, params, BitSource(0), parallel=True)


def test_variance_decay_slope():
    f = M.lookup_functional("norm")
    levels = list(range(2, 9))
    variances = []
    for level in levels:
        src = BitSource(900 + level)
        state = BRIDGE.sample_rows(src, level, 2000)
        y = (f.rows(BRIDGE.functional_rows(state))
             - f.rows(BRIDGE.functional_rows(BRIDGE.coarsen_rows(state))))
        variances.append(float(np.var(y, ddof=1)))
    slope = np.polyfit(levels, np.log2(variances), 1)[0]
    assert slope <= -0.8


def _random_bridge_path(rng, level):
    dim = (1 << level) - 1
    coeffs = rng.standard_normal(dim)
    return BridgePath(level, coeffs, np.ones(dim, dtype=np.uint64),
                      allocation_bridge(level))


def _random_kl_vector(rng, m):
    coeffs = rng.standard_normal(m)
    return KLVector(m, coeffs, np.ones(m, dtype=np.uint64), allocation_kl(m, KL_SPEC))


def test_builtin_functionals_lipschitz_spot_check():
    rng = np.random.default_rng(6)
    catalog = M.builtin_functionals()
    # trivial values
    zero = KLVector(4, np.zeros(4), np.ones(4, dtype=np.uint64), allocation_kl(4, KL_SPEC))
    assert catalog["norm"].evaluate(zero) == 0.0
    v = _random_kl_vector(rng, 8)
    assert catalog["coord1"].evaluate(v) == v.coeffs[0]
    for _ in range(1000):
        x = _random_kl_vector(rng, 8)
        y = _random_kl_vector(rng, 8)
        dist = float(np.linalg.norm(x.coeffs - y.coeffs))
        for f in catalog.values():
            assert abs(f.evaluate(x) - f.evaluate(y)) <= dist + 1e-9
    from rbitmc.bridge import nodes_from_coeffs
    for _ in range(200):
        x = _random_bridge_path(rng, 4)
        y = _random_bridge_path(rng, 4)
        diff = nodes_from_coeffs((x.coeffs - y.coeffs)[np.newaxis, :], 4)
        dist = math.sqrt(float(pl_l2_norm_sq(diff)[0]))
        for f in catalog.values():
            assert abs(f.evaluate(x) - f.evaluate(y)) <= dist + 1e-9


def test_unknown_functional_rejected():
    with pytest.raises(ConfigurationError):
        M.lookup_functional("nope")


def test_cost_ratio_bracket():
    # theoretical cost vs the total of all ledger counters stays within the
    # recorded [1/8, 8] bracket over the acceptance eps grid
    f = M.lookup_functional("norm")
    for k in range(3, 7):
        params = M.mlmc_params(2.0 ** -k, 2.0, 0.0)
        res = M.mlmc_estimate(f, BRIDGE, params, BitSource(600 + k))
        ledger_total = res.ledger.bits + res.ledger.oracle_cost + res.ledger.coeff_ops
        ratio = M.theoretical_cost(params) / ledger_total
        assert 0.125 <= ratio <= 8.0
