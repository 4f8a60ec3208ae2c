import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from elforensics.ingest import ForensicsError
from elforensics.stuffing import (EXTREME_SIGMA, FitConfig, MomentEstimate, StuffingFitError,
                                  StuffingObjective, StuffingParams, _truncated_moments,
                                  apply_fraud, estimate_moments, fit_stuffing, simulate_forward,
                                  truncated_normal, untruncate)

from conftest import table_from

REFERENCE_MOMENTS = MomentEstimate(0.53, 0.23, 0.86, 0.085)


def sizes(n, seed=0):
    rng = np.random.default_rng(seed)
    s2 = math.log(1 + (109 / 332) ** 2)
    return np.maximum(100, np.rint(rng.lognormal(math.log(332) - s2 / 2, math.sqrt(s2), n))).astype(np.int64)


def test_moments_two_stations():
    m = estimate_moments(table_from([(100, 80, 32), (100, 90, 54)]))
    assert m.mu_v == pytest.approx(0.5)
    assert m.sd_v == pytest.approx(0.1)
    assert m.mu_t == pytest.approx(0.85)
    assert m.sd_t == pytest.approx(0.05)


def test_moments_errors():
    with pytest.raises(ForensicsError):
        estimate_moments(table_from([(100, 80, 32)]))
    with pytest.raises(ForensicsError):
        estimate_moments(table_from([(100, 80, 40), (200, 160, 80)]))
    # stations without valid votes do not count towards the two needed
    with pytest.raises(ForensicsError):
        estimate_moments(table_from([(100, 80, 32), (100, 0, 0)]))


def test_trimmed_moments_ignore_outliers():
    rows = [(1000, 850 + k % 7, 500 + k % 11) for k in range(300)] + [(1000, 1000, 1000)] * 3
    raw = estimate_moments(table_from(rows))
    trim = estimate_moments(table_from(rows), trimmed=True)
    assert trim.mu_v < raw.mu_v and trim.sd_v < raw.sd_v


@pytest.mark.parametrize("mu,sd", [(0.53, 0.23), (0.86, 0.085), (0.95, 0.2), (0.1, 0.4)])
def test_truncated_moments_match_scipy(mu, sd):
    a, b = -mu / sd, (1 - mu) / sd
    ref = stats.truncnorm(a, b, loc=mu, scale=sd)
    m, s = _truncated_moments(mu, sd)
    assert m == pytest.approx(ref.mean(), abs=1e-12)
    assert s == pytest.approx(ref.std(), abs=1e-12)


def test_untruncate_round_trip():
    law = untruncate(REFERENCE_MOMENTS)
    assert law.sd_v > REFERENCE_MOMENTS.sd_v
    assert _truncated_moments(law.mu_v, law.sd_v) == pytest.approx((REFERENCE_MOMENTS.mu_v, REFERENCE_MOMENTS.sd_v), abs=1e-8)
    assert _truncated_moments(law.mu_t, law.sd_t) == pytest.approx((REFERENCE_MOMENTS.mu_t, REFERENCE_MOMENTS.sd_t), abs=1e-8)


def test_untruncate_rejects_impossible_spread():
    # a [0, 1] variable with mean 0.5 cannot have a spread above 0.5
    with pytest.raises(ForensicsError):
        untruncate(MomentEstimate(0.5, 0.6, 0.8, 0.05))


def test_truncated_normal_sampling_matches_law(rng):
    n = 200_000
    u = rng.random(n)
    x = truncated_normal(u, 0.53, 0.23)
    assert x.min() >= 0 and x.max() <= 1
    # no spurious point masses at the bounds
    assert np.sum(x == 0) + np.sum(x == 1) == 0
    ref = stats.truncnorm(-0.53 / 0.23, 0.47 / 0.23, loc=0.53, scale=0.23)
    assert abs(x.mean() - ref.mean()) < 3 * ref.std() / math.sqrt(n)
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3


def test_moments_recovered_from_simulation():
    n = 100_000
    m = MomentEstimate(0.45, 0.12, 0.7, 0.1)
    sim = simulate_forward(m, StuffingParams(), np.full(n, 10**6), seed=3)
    got = estimate_moments(sim)
    ref_v = _truncated_moments(m.mu_v, m.sd_v)
    ref_t = _truncated_moments(m.mu_t, m.sd_t)
    assert abs(got.mu_v - ref_v[0]) < 3 * ref_v[1] / math.sqrt(n)
    assert abs(got.mu_t - ref_t[0]) < 3 * ref_t[1] / math.sqrt(n)


def test_no_fraud_gives_independent_rates():
    sim = simulate_forward(REFERENCE_MOMENTS, StuffingParams(), sizes(100_000), seed=5)
    ok = sim.T > 0
    rho = np.corrcoef(sim.v[ok], sim.t[ok])[0, 1]
    assert abs(rho) < 0.01


def test_full_intensity_fills_the_electorate():
    N = np.array([300, 500, 120])
    T = np.array([250, 400, 100])
    V = np.array([100, 300, 0])
    p = StuffingParams(1.0, 0.0, 1.3)
    T2, V2, x, kind = apply_fraud(N, T, V, np.zeros(3), np.ones(3), p)
    assert np.all(kind == 1) and np.all(x == 1)
    assert np.array_equal(T2, N)
    assert np.array_equal(V2, N)  # every 'No' vote flipped as well


def test_large_alpha_switches_off_flipping():
    N = np.array([300, 500, 120])
    T = np.array([250, 400, 100])
    V = np.array([100, 300, 0])
    x = 1 - 1e-9
    T2, V2, _, _ = apply_fraud(N, T, V, np.zeros(3), np.full(3, x), StuffingParams(1.0, 0.0, 1e12))
    assert np.array_equal(T2, N)
    assert np.array_equal(V2, V + (N - T))


def test_extreme_intensity_concentrates_near_one(rng):
    n = 50_000
    N = np.full(n, 400)
    T = np.full(n, 300)
    V = np.full(n, 150)
    _, _, x, kind = apply_fraud(N, T, V, np.ones(n) * 0.999999, rng.random(n), StuffingParams(0.0, 0.5, 1.0))
    assert np.all(kind == 2)
    assert x.min() >= 0 and x.max() <= 1
    expect = 1 - EXTREME_SIGMA * math.sqrt(2 / math.pi)
    assert x.mean() == pytest.approx(expect, abs=3 * EXTREME_SIGMA / math.sqrt(n) * 2)


def test_station_classes_follow_fractions(rng):
    n = 100_000
    u = rng.random(n)
    _, _, _, kind = apply_fraud(np.full(n, 200), np.full(n, 150), np.full(n, 70), u, rng.random(n),
                                StuffingParams(0.2, 0.05, 1.0))
    assert np.mean(kind == 1) == pytest.approx(0.2, abs=0.005)
    assert np.mean(kind == 2) == pytest.approx(0.05, abs=0.003)


@settings(max_examples=60, deadline=None)
@given(mu_v=st.floats(0.05, 0.95), sd_v=st.floats(0.01, 0.5), mu_t=st.floats(0.05, 0.95),
       sd_t=st.floats(0.01, 0.5), f=st.floats(0, 1), share=st.floats(0, 1), alpha=st.floats(0.1, 10),
       n=st.integers(1, 300), seed=st.integers(0, 2**32))
def test_simulation_invariants(mu_v, sd_v, mu_t, sd_t, f, share, alpha, n, seed):
    f_e = (1 - f) * share
    sim = simulate_forward(MomentEstimate(mu_v, sd_v, mu_t, sd_t), StuffingParams(f, f_e, alpha),
                           sizes(n, seed % 1000), seed)
    assert np.all(sim.V >= 0)
    assert np.all(sim.V <= sim.T)
    assert np.all(sim.T <= sim.N)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**63), n_parts=st.integers(1, 8), n=st.integers(1, 2000))
def test_simulation_deterministic_across_partitions(seed, n_parts, n):
    N = sizes(n, 1)
    p = StuffingParams(0.1, 0.02, 1.3)
    a = simulate_forward(REFERENCE_MOMENTS, p, N, seed)
    b = simulate_forward(REFERENCE_MOMENTS, p, N, seed)
    c = simulate_forward(REFERENCE_MOMENTS, p, N, seed, n_parts=n_parts)
    assert np.array_equal(a.T, b.T) and np.array_equal(a.V, b.V)
    assert np.array_equal(a.T, c.T) and np.array_equal(a.V, c.V)


def test_different_seeds_differ():
    N = sizes(1000)
    a = simulate_forward(REFERENCE_MOMENTS, StuffingParams(), N, 1)
    b = simulate_forward(REFERENCE_MOMENTS, StuffingParams(), N, 2)
    assert not np.array_equal(a.V, b.V)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), f1=st.floats(0, 0.9), df=st.floats(0, 0.1), alpha=st.floats(0.2, 5))
def test_more_fraud_never_lowers_totals(seed, f1, df, alpha):
    N = sizes(3000, 2)
    lo = simulate_forward(REFERENCE_MOMENTS, StuffingParams(f1, 0.0, alpha), N, seed)
    hi = simulate_forward(REFERENCE_MOMENTS, StuffingParams(f1 + df, 0.0, alpha), N, seed)
    assert hi.V.sum() >= lo.V.sum()
    assert hi.T.sum() >= lo.T.sum()
    # per station as well: the same stream decides the class
    assert np.all(hi.T >= lo.T) and np.all(hi.V >= lo.V)


@settings(max_examples=50, deadline=None)
@given(alpha=st.floats(1.0, 10.0), seed=st.integers(0, 2**32))
def test_stuffing_dominates_flipping_for_alpha_above_one(alpha, seed):
    rng = np.random.default_rng(seed)
    n = 500
    _, _, x, kind = apply_fraud(np.full(n, 400), np.full(n, 300), np.full(n, 100), rng.random(n),
                                rng.random(n), StuffingParams(0.5, 0.2, alpha))
    xs = x[kind > 0]
    assert np.all(xs ** alpha <= xs)


def test_objective_zero_for_own_simulation():
    N = sizes(5000)
    p = StuffingParams(0.08, 0.01, 1.4)
    obs = simulate_forward(REFERENCE_MOMENTS, p, N, seed=42)
    for objective in ("vote", "joint"):
        cfg = FitConfig(bins=100, objective=objective)
        obj = StuffingObjective(obs, REFERENCE_MOMENTS, 42, cfg)
        assert obj(p) == 0.0
        assert obj(StuffingParams(0.2, 0.0, 1.4)) > 0.0


def test_params_validation():
    with pytest.raises(ForensicsError):
        StuffingParams(0.7, 0.4, 1.0)
    with pytest.raises(ForensicsError):
        StuffingParams(-0.1, 0.0, 1.0)
    with pytest.raises(ForensicsError):
        StuffingParams(0.1, 0.0, 0.0)
    with pytest.raises(ForensicsError):
        MomentEstimate(0.5, 0.0, 0.8, 0.1)
    with pytest.raises(ForensicsError):
        simulate_forward(REFERENCE_MOMENTS, (0.1, 0.0, 1.0), [100], 0)
    with pytest.raises(ForensicsError):
        simulate_forward(REFERENCE_MOMENTS, StuffingParams(), [], 0)


def test_fit_config_round_trip():
    cfg = FitConfig(replicates=3, start=(0.02, 0.0, 1.1), objective="vote", bins=100)
    assert FitConfig.from_dict(cfg.to_dict()) == cfg
    assert FitConfig.from_dict({"replicates": 4, "unknown": 1}).replicates == 4


def small_fit(**kw):
    obs = simulate_forward(REFERENCE_MOMENTS, StuffingParams(0.1, 0.0, 1.5), sizes(3000, 9), seed=7)
    return fit_stuffing(obs, FitConfig(replicates=3, seed=1, moment_rounds=1, **kw), strict=False)


def test_fit_reports_replicate_spread():
    fit = small_fit()
    est = np.array([p.as_array() for p, _ in fit.replicate_estimates])
    assert len(est) == 3
    assert fit.params.as_array() == pytest.approx(est.mean(axis=0))
    sd = est.std(axis=0, ddof=1)
    assert [fit.uncertainties[k] for k in ("f", "f_e", "alpha")] == pytest.approx(sd)
    assert fit.objective_value >= 0
    d = fit.to_dict()
    assert d["uncertainty_kind"].startswith("standard deviation")
    assert len(d["replicates"]) == 3


def test_fit_is_deterministic():
    a, b = small_fit(), small_fit()
    assert a.params == b.params and a.uncertainties == b.uncertainties


def test_fit_parallel_replicates_match_serial():
    a, b = small_fit(), small_fit(n_jobs=3)
    assert a.params == b.params and a.uncertainties == b.uncertainties


def test_fit_budget_exhaustion_carries_best():
    obs = simulate_forward(REFERENCE_MOMENTS, StuffingParams(0.1, 0.0, 1.5), sizes(2000), seed=7)
    with pytest.raises(StuffingFitError) as exc:
        fit_stuffing(obs, FitConfig(replicates=2, maxiter=3, moment_rounds=1))
    assert isinstance(exc.value.best, StuffingParams)


@pytest.mark.slow
def test_recovers_strong_fraud():
    obs = simulate_forward(REFERENCE_MOMENTS, StuffingParams(0.10, 0.0, 1.5), sizes(100_000, 3), seed=2024)
    fit = fit_stuffing(obs, FitConfig(seed=5))
    assert 0.07 <= fit.params.f <= 0.13
    assert 1.0 <= fit.params.alpha <= 2.0
