import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from elforensics.anomaly import (BENFORD2, Z99, assignment_test, benford_by_level, benford_test,
                                 log_bf01, second_digit, village_totals)
from elforensics.ingest import ForensicsError, StationTable

from conftest import table_from


def benford_oracle(d):
    # product form: prod_k (10k + d + 1) / (10k + d), taken as an exact fraction
    r = Fraction(1)
    for k in range(1, 10):
        r *= Fraction(10 * k + d + 1, 10 * k + d)
    return math.log10(r.numerator) - math.log10(r.denominator)


def benford_sample(rng, n, decades=(2, 5)):
    """Integers floor(10**U), U uniform over whole decades: exact second-digit Benford law."""
    return np.floor(10.0 ** rng.uniform(*decades, n)).astype(np.int64)


def test_expected_probabilities_against_oracle():
    for d in range(10):
        assert abs(BENFORD2[d] - benford_oracle(d)) < 1e-12
    assert BENFORD2[0] == pytest.approx(0.11968, abs=5e-6)
    assert BENFORD2[9] == pytest.approx(0.08500, abs=5e-6)
    assert abs(BENFORD2.sum() - 1.0) < 1e-12
    assert np.all((BENFORD2 > 0) & (BENFORD2 < 0.13))
    assert np.all(np.diff(BENFORD2) < 0)


def test_second_digit_exhaustive():
    n = np.arange(100, 100_000)
    want = np.array([int(str(k)[1]) for k in n])
    assert np.array_equal(second_digit(n), want)


@settings(max_examples=300)
@given(st.integers(100, 10**6 - 1))
def test_second_digit_formula(n):
    assert second_digit([n])[0] == (n // 10 ** (int(math.log10(n)) - 1)) % 10 == int(str(n)[1])


def test_second_digit_rejects_single_digit():
    with pytest.raises(ValueError):
        second_digit([7])


def test_counts_and_filter():
    vals = [99, 5, 100, 110, 125, 1234, 5555, 9999, 100000, 2020, 3456, 4312, 987]
    r = benford_test(vals)
    assert r.n == 11  # 99 and 5 are below three digits
    assert r.counts.sum() == r.n
    assert list(r.counts) == [3, 1, 2, 1, 1, 1, 0, 0, 1, 1]
    with pytest.raises(ForensicsError):
        benford_test([150] * 9 + [20] * 50)


def test_chi2_and_p_value():
    rng = np.random.default_rng(1)
    r = benford_test(benford_sample(rng, 3000))
    exp = BENFORD2 * r.n
    chi2, p = stats.chisquare(r.counts, exp)
    assert r.chi2 == pytest.approx(chi2, rel=1e-12)
    assert r.p_value == pytest.approx(p, rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_bayes_factor_against_scipy(seed):
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(rng.integers(10, 400), BENFORD2 if seed % 2 else np.full(10, 0.1))
    n = int(counts.sum())
    h0 = stats.multinomial.logpmf(counts, n, BENFORD2)
    h1 = stats.dirichlet_multinomial.logpmf(counts, np.ones(10), n)
    assert log_bf01(counts) == pytest.approx(h0 - h1, rel=1e-10, abs=1e-10)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 60), min_size=10, max_size=10).filter(lambda c: sum(c) >= 10))
def test_posterior_odds_equal_bayes_factor(counts):
    vals = []
    for d, c in enumerate(counts):
        vals += [100 + 10 * d] * c
    r = benford_test(vals)
    assert 0.0 <= r.posterior <= 1.0
    lbf = log_bf01(counts)
    if abs(lbf) < 200:
        odds = r.posterior / (1 - r.posterior) if r.posterior < 1 else math.inf
        assert odds == pytest.approx(math.exp(lbf), rel=1e-9)
    # the log-space fields agree with each other at any magnitude
    assert r.log10_posterior == pytest.approx(-np.logaddexp(0, -lbf) / math.log(10), rel=1e-12, abs=1e-15)


def test_degenerate_digits_give_tiny_posterior():
    r = benford_test([130 + (k % 10) for k in range(1000)])  # second digit always 3
    assert r.counts[3] == 1000
    assert r.posterior < 1e-10
    assert r.log10_posterior < -10
    assert r.to_dict()["log10_posterior"] == r.log10_posterior


def test_extreme_posterior_stays_finite():
    r = benford_test([150] * 100_000)
    assert r.posterior == 0.0
    assert np.isfinite(r.log10_posterior) and r.log10_posterior < -1000


def test_benford_data_favours_null():
    rng = np.random.default_rng(7)
    wins = sum(benford_test(benford_sample(rng, 5000)).posterior > 0.5 for _ in range(20))
    assert wins >= 14


def test_calibration_bound():
    rng = np.random.default_rng(3)
    vals = np.r_[benford_sample(rng, 2000), np.full(120, 170)]
    r = benford_test(vals)
    p = r.p_value
    assert p < 1 / math.e
    assert r.log10_bf01_bound == pytest.approx(math.log10(-math.e * p * math.log(p)))
    assert benford_test(benford_sample(rng, 200)).log10_bf01_bound <= 0.0


def test_village_level_sums(clean_election):
    t = clean_election.table
    totals = village_totals(t)
    assert totals.sum() == t.V.sum()
    assert len(totals) == t.n_groups("village")
    r = benford_by_level(t, "village")
    assert r.level == "village" and r.n == int(np.sum(totals >= 100))
    with pytest.raises(ValueError):
        benford_by_level(t, "province")


def test_assignment_exact_expectation():
    t = table_from([(200, 100, 50, "D", "A"), (200, 100, 50, "D", "A")])
    r = assignment_test(t)
    assert np.all(r.z == 0.0)
    assert r.n_villages == 1 and r.exceed_count == 0


def test_assignment_variance_matches_hypergeometric():
    rows = [(300, 120, 40, "D", "A"), (300, 200, 110, "D", "A"), (300, 80, 20, "D", "A")]
    r = assignment_test(table_from(rows))
    Tv, Vv = 400, 170
    for k, (_, T, V, _, _) in enumerate(rows):
        h = stats.hypergeom(Tv, Vv, T)
        assert r.z[k] == pytest.approx((V - h.mean()) / h.std(), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 300), st.integers(0, 300), st.integers(0, 4)),
                min_size=2, max_size=30))
def test_assignment_yes_no_symmetry(rows):
    data = [(T + 50, T, min(V, T), "D", f"W{w}") for T, V, w in rows]
    try:
        a = assignment_test(table_from(data))
    except ForensicsError:
        return
    b = assignment_test(table_from([(N, T, T - V, d, w) for N, T, V, d, w in data]))
    assert np.array_equal(a.station_index, b.station_index)
    assert np.allclose(b.z, -a.z, rtol=1e-12, atol=1e-12)


def test_assignment_needs_a_testable_village():
    with pytest.raises(ForensicsError):
        assignment_test(table_from([(200, 100, 50, "D", "A"), (200, 100, 50, "D", "B")]))
    with pytest.raises(ForensicsError):
        assignment_test(table_from([(200, 100, 100, "D", "A"), (200, 80, 80, "D", "A")]))


def random_villages(rng, n_villages, per_village=3):
    """Villages whose ballots are dealt to stations by a true random assignment."""
    prov, dist, vil, sid, N, T, V = [], [], [], [], [], [], []
    for w in range(n_villages):
        Ts = rng.integers(150, 500, per_village)
        q = rng.uniform(0.2, 0.8)
        Vtot = rng.binomial(Ts.sum(), q)
        Vs = rng.multivariate_hypergeometric(Ts, Vtot)
        for k in range(per_village):
            prov.append("P"), dist.append(f"D{w // 50}"), vil.append(f"W{w}"), sid.append(str(k))
        N.extend(Ts + rng.integers(0, 100, per_village)), T.extend(Ts), V.extend(Vs)
    a = lambda x: np.array(x, dtype=object)
    return StationTable(a(prov), a(dist), a(vil), a(sid), np.array(N), np.array(T), np.array(V))


def test_assignment_calibrated_under_random_assignment(rng):
    r = assignment_test(random_villages(rng, 3400))
    assert r.n_stations == 10_200
    assert 0.005 <= r.exceed_fraction <= 0.015
    assert r.binomial_p > 0.01


def test_assignment_detects_shifted_votes(rng):
    t = random_villages(rng, 1000)
    V = t.V.copy()
    # move 15 'Yes' votes from the second to the first station of every fifth village
    for w in range(0, 1000, 5):
        i = 3 * w
        shift = min(15, V[i + 1], t.T[i] - V[i])
        V[i] += shift
        V[i + 1] -= shift
    bad = StationTable(t.province, t.district, t.village, t.station_id, t.N, t.T, V)
    r = assignment_test(bad)
    assert r.exceed_fraction > 0.02
    assert r.binomial_p < 0.01


def test_assignment_clean_synthetic(clean_election):
    r = assignment_test(clean_election.table)
    assert 0.005 <= r.exceed_fraction <= 0.015
    d = r.to_dict()
    assert d["threshold_abs_z"] == Z99 == pytest.approx(stats.norm.isf(0.005), rel=1e-15)


def test_permutation_mode_for_small_villages():
    rng = np.random.default_rng(5)
    rows = []
    for w in range(40):
        Ts = rng.integers(8, 20, 3)
        Vs = rng.multivariate_hypergeometric(Ts, int(Ts.sum() // 2))
        rows += [(int(T) + 100, int(T), int(V), "D", f"W{w}") for T, V in zip(Ts, Vs)]
    t = table_from(rows)
    a = assignment_test(t, permutation=True, n_perm=500, seed=1)
    b = assignment_test(t, permutation=True, n_perm=500, seed=1)
    plain = assignment_test(t)
    assert a.permutation_villages == 40
    assert np.array_equal(a.z, b.z)
    assert np.all(np.isfinite(a.z))
    # Monte Carlo z keeps the direction of the analytic deviation (0 when p = 1)
    nz = (plain.z != 0) & (a.z != 0)
    assert np.all(np.sign(a.z[nz]) == np.sign(plain.z[nz]))
    assert np.corrcoef(a.z, plain.z)[0, 1] > 0.9
