"""Numerical-anomaly tests: second-digit Benford law and within-village vote assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .ingest import ForensicsError, as_table

LN10 = math.log(10.0)
Z99 = 2.5758293035489004  # two-sided 99% normal quantile


def second_digit_probabilities():
    """b_d = sum_{k=1..9} log10(1 + 1/(10k + d)) for d = 0..9."""
    k = np.arange(1, 10)
    return np.array([np.log10(1.0 + 1.0 / (10 * k + d)).sum() for d in range(10)])


BENFORD2 = second_digit_probabilities()


def second_digit(values):
    """Second significant decimal digit of integers >= 10."""
    n = np.asarray(values, dtype=np.int64).copy()
    if np.any(n < 10):
        raise ValueError("second digit needs values >= 10")
    big = n >= 100
    while big.any():
        n[big] //= 10
        big = n >= 100
    return n % 10


@dataclass(frozen=True)
class BenfordResult:
    level: str
    counts: np.ndarray
    expected: np.ndarray
    n: int
    chi2: float
    p_value: float
    log10_bf01: float
    log10_posterior: float
    log10_bf01_bound: float

    @property
    def bf01(self):
        return 10.0 ** self.log10_bf01

    @property
    def posterior(self):
        """P(H0 | data) under equal prior odds (may underflow to 0; see ``log10_posterior``)."""
        return 10.0 ** self.log10_posterior

    def to_dict(self):
        return {
            "level": self.level,
            "n": self.n,
            "counts": self.counts.tolist(),
            "expected": self.expected.tolist(),
            "chi2": self.chi2,
            "dof": 9,
            "p_value": self.p_value,
            "log10_bf01": self.log10_bf01,
            "log10_posterior": self.log10_posterior,
            "log10_bf01_calibration_bound": self.log10_bf01_bound,
        }


def log_bf01(counts, probs=BENFORD2):
    """Natural-log Bayes factor of a fixed multinomial against a uniform-Dirichlet alternative.

    The multinomial coefficient cancels; the alternative's marginal is
    Gamma(K) prod Gamma(c_d + 1) / Gamma(n + K).
    """
    c = np.asarray(counts, dtype=float)
    K, n = len(c), c.sum()
    with np.errstate(divide="ignore"):
        log_h0 = float(np.sum(np.where(c > 0, c * np.log(probs), 0.0)))
    log_h1 = float(gammaln(K) + gammaln(c + 1).sum() - gammaln(n + K))
    return log_h0 - log_h1


def _log10_bound(p):
    # -e p ln p lower bound on the Bayes factor, valid for p < 1/e
    if p <= 0:
        return -math.inf
    if p >= 1 / math.e:
        return 0.0
    return math.log10(-math.e * p * math.log(p))


def benford_test(values, level="station", min_value=100):
    """Second-digit Benford test on counts ``>= min_value``."""
    x = np.asarray(values, dtype=np.int64)
    x = x[x >= min_value]
    if len(x) < 10:
        raise ForensicsError(f"only {len(x)} values >= {min_value}; Benford test needs at least 10")
    counts = np.bincount(second_digit(x), minlength=10).astype(np.int64)
    n = int(counts.sum())
    expected = BENFORD2 * n
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    p = float(stats.chi2.sf(chi2, 9))
    lbf = log_bf01(counts)
    # posterior = BF / (1 + BF), kept in log space
    log_post = -float(np.logaddexp(0.0, -lbf))
    return BenfordResult(level, counts, BENFORD2.copy(), n, chi2, p, lbf / LN10, log_post / LN10,
                         _log10_bound(p))


def village_totals(records):
    table = as_table(records)
    codes, n = table.codes("village")
    return np.bincount(codes, weights=table.V, minlength=n).astype(np.int64)


def benford_by_level(records, level="station", min_value=100):
    """Benford test on station 'Yes' counts or on their village sums."""
    table = as_table(records)
    if level == "station":
        return benford_test(table.V, "station", min_value)
    if level == "village":
        return benford_test(village_totals(table), "village", min_value)
    raise ValueError(f"unknown level {level!r}")


@dataclass(frozen=True)
class AssignmentResult:
    station_index: np.ndarray
    z: np.ndarray
    exceed_fraction: float
    exceed_count: int
    n_stations: int
    n_villages: int
    binomial_p: float
    expected_fraction: float = 0.01
    permutation_villages: int = 0

    def to_dict(self):
        return {
            "n_stations": self.n_stations,
            "n_villages": self.n_villages,
            "exceed_count": self.exceed_count,
            "exceed_fraction": self.exceed_fraction,
            "expected_fraction": self.expected_fraction,
            "threshold_abs_z": Z99,
            "binomial_p": self.binomial_p,
            "binomial_test": "one-sided, exceedances vs 1%",
            "aggregation": "operational: per-station z-scores pooled into an exceedance-fraction binomial test",
            "permutation_villages": self.permutation_villages,
            "z_quantiles": {str(q): float(np.quantile(self.z, q)) for q in (0.01, 0.5, 0.99)},
        }


def assignment_test(records, permutation=False, n_perm=1000, min_variance=5.0, seed=0):
    """Check that 'Yes' votes are spread over a village's stations as if at random.

    Under random assignment V_i is hypergeometric: the village's V_vil 'Yes'
    ballots among its T_vil valid ballots, T_i of which land in station i.
    With ``permutation`` the z-score of villages with any variance below
    ``min_variance`` comes from ``n_perm`` Monte Carlo reassignments instead.
    """
    table = as_table(records)
    codes, nv = table.codes("village")
    Tv = np.bincount(codes, weights=table.T, minlength=nv)
    Vv = np.bincount(codes, weights=table.V, minlength=nv)
    nst = np.bincount(codes, minlength=nv)
    testable_village = (nst >= 2) & (Vv > 0) & (Vv < Tv)
    Tvi, Vvi = Tv[codes], Vv[codes]
    q = np.where(testable_village[codes], Vvi / np.maximum(Tvi, 1), 0.0)
    m = table.T * q
    var = table.T * q * (1 - q) * (Tvi - table.T) / np.maximum(Tvi - 1, 1)
    use = testable_village[codes] & (var > 0)
    if not use.any():
        raise ForensicsError("no village with two or more stations and mixed votes")
    idx = np.flatnonzero(use)
    z = (table.V[idx] - m[idx]) / np.sqrt(var[idx])

    n_perm_villages = 0
    if permutation:
        rng = np.random.default_rng(seed)
        small = np.zeros(nv, dtype=bool)
        np.logical_or.at(small, codes[idx], var[idx] < min_variance)
        pos = {i: k for k, i in enumerate(idx)}
        for vil in np.flatnonzero(small):
            members = np.flatnonzero(codes == vil)
            draws = rng.multivariate_hypergeometric(table.T[members], int(Vv[vil]), size=n_perm)
            dev = np.abs(draws - m[members])
            obs = np.abs(table.V[members] - m[members])
            for j, st in enumerate(members):
                if st in pos:
                    pv = (np.sum(dev[:, j] >= obs[j] - 1e-9) + 1) / (n_perm + 1)
                    sign = np.sign(table.V[st] - m[st]) or 1.0
                    z[pos[st]] = sign * stats.norm.isf(pv / 2)
            n_perm_villages += 1

    k = int(np.sum(np.abs(z) > Z99))
    n = len(z)
    binom_p = float(stats.binomtest(k, n, 0.01, alternative="greater").pvalue)
    return AssignmentResult(idx, z, k / n, k, n, int(np.unique(codes[idx]).size), binom_p,
                            permutation_villages=n_perm_villages)
