"""Parametric ballot-stuffing model.

Honest stations draw independent truncated-normal turnout and vote share. A
fraction ``f`` of stations receive incremental fraud with intensity
x ~ U[0, 1]: a share x of non-voters is stuffed as 'Yes' ballots and a share
x**alpha of 'No' votes is flipped. A fraction ``f_e`` receive extreme fraud, the
same mechanism with x concentrated near 1.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, root
from scipy.special import ndtr, ndtri

from .ingest import ForensicsError, StationTable, as_table
from .rng import partitioned_uniforms, spawn_seeds

log = logging.getLogger(__name__)

EXTREME_SIGMA = 0.075
ALPHA_BOUNDS = (0.1, 10.0)
SQRT2PI = math.sqrt(2 * math.pi)


class StuffingFitError(ForensicsError):
    """Optimizer ran out of budget; ``best`` holds the best parameters found."""

    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class MomentEstimate:
    mu_v: float
    sd_v: float
    mu_t: float
    sd_t: float

    def __post_init__(self):
        if not (self.sd_v > 0 and self.sd_t > 0):
            raise ForensicsError("moment spreads must be positive")
        if not (0 < self.mu_v < 1 and 0 < self.mu_t < 1):
            raise ForensicsError("moment means must lie in (0, 1)")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class StuffingParams:
    f: float = 0.0
    f_e: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        if not (0 <= self.f <= 1 and 0 <= self.f_e <= 1):
            raise ForensicsError(f"fraud fractions must lie in [0, 1]: {self}")
        if self.f + self.f_e > 1 + 1e-12:
            raise ForensicsError(f"f + f_e exceeds 1: {self}")
        if not self.alpha > 0:
            raise ForensicsError(f"alpha must be positive: {self}")

    def as_array(self):
        return np.array([self.f, self.f_e, self.alpha])

    def to_dict(self):
        return dict(self.__dict__)


def _trimmed(x, k=3.0, rounds=5):
    for _ in range(rounds):
        m, s = x.mean(), x.std()
        keep = np.abs(x - m) <= k * s
        if keep.all():
            break
        x = x[keep]
    return x


def estimate_moments(records, trimmed=False):
    """Mean and population spread of vote share and turnout.

    With ``trimmed=True`` each variable is iteratively 3-sigma trimmed (5 rounds).
    """
    table = as_table(records)
    ok = ~table.flagged & (table.N > 0)
    if ok.sum() < 2:
        raise ForensicsError("need at least two stations with defined vote share")
    v, t = table.v[ok], table.t[ok]
    if trimmed:
        v, t = _trimmed(v), _trimmed(t)
    return MomentEstimate(float(v.mean()), float(v.std()), float(t.mean()), float(t.std()))


def _truncated_moments(mu, sd):
    """Mean and spread of Normal(mu, sd) truncated to [0, 1]."""
    a, b = (0.0 - mu) / sd, (1.0 - mu) / sd
    Z = ndtr(b) - ndtr(a)
    pa, pb = math.exp(-a * a / 2) / SQRT2PI, math.exp(-b * b / 2) / SQRT2PI
    r = (pa - pb) / Z
    var = sd * sd * (1.0 + (a * pa - b * pb) / Z - r * r)
    return float(mu + sd * r), float(math.sqrt(max(var, 0.0)))


def untruncate(moments):
    """Normal parameters whose [0, 1]-truncation has the given mean and spread.

    Observed rates are already truncated, so feeding their raw moments to the
    simulator would make simulated elections systematically too narrow.
    """

    def solve(mean, sd):
        def resid(z):
            m, s = _truncated_moments(z[0], np.exp(z[1]))
            return [m - mean, s - sd]

        with np.errstate(all="ignore"):  # trial points far in the tails underflow Z
            sol = root(resid, [mean, np.log(sd)], method="hybr")
        mu, sigma = float(sol.x[0]), float(np.exp(sol.x[1]))
        if not sol.success or not np.allclose(_truncated_moments(mu, sigma), (mean, sd), atol=1e-8):
            raise ForensicsError(f"no normal law truncates to mean {mean:.4g}, sd {sd:.4g}")
        return mu, sigma

    mu_v, sd_v = solve(moments.mu_v, moments.sd_v)
    mu_t, sd_t = solve(moments.mu_t, moments.sd_t)
    # MomentEstimate requires means inside (0, 1); the underlying normal need not comply
    return _NormalParams(mu_v, sd_v, mu_t, sd_t)


@dataclass(frozen=True)
class _NormalParams:
    mu_v: float
    sd_v: float
    mu_t: float
    sd_t: float


def truncated_normal(u, mu, sd, lo=0.0, hi=1.0):
    """Inverse-CDF draw from Normal(mu, sd) restricted to [lo, hi]."""
    a = ndtr((lo - mu) / sd)
    b = ndtr((hi - mu) / sd)
    return np.clip(mu + sd * ndtri(a + u * (b - a)), lo, hi)


def apply_fraud(N, T, V, u_class, u_x, params, extreme_sigma=EXTREME_SIGMA):
    """Apply the fraud mechanism to honest counts.

    Station class: incremental if ``u_class < f``, extreme if
    ``u_class >= 1 - f_e``, honest otherwise. Returns (T, V, intensity, kind)
    where kind is 0/1/2 for honest/incremental/extreme.
    """
    kind = np.zeros(len(N), dtype=np.int8)
    kind[u_class < params.f] = 1
    kind[u_class >= 1.0 - params.f_e] = 2
    x = np.zeros(len(N))
    T = np.array(T, dtype=np.int64)
    V = np.array(V, dtype=np.int64)
    idx = np.flatnonzero(kind)
    if len(idx) == 0:
        return T, V, x, kind
    xi = u_x[idx].copy()
    ext = kind[idx] == 2
    if ext.any():
        # |Normal(0, sigma)| truncated so that the intensity stays in [0, 1]
        top = ndtr(1.0 / extreme_sigma)
        xi[ext] = np.clip(1.0 - extreme_sigma * ndtri(0.5 + xi[ext] * (top - 0.5)), 0.0, 1.0)
    x[idx] = xi
    Ti, Vi = T[idx], V[idx]
    stuffed = np.rint(xi * (N[idx] - Ti)).astype(np.int64)
    flipped = np.rint(xi ** params.alpha * (Ti - Vi)).astype(np.int64)
    T[idx] = Ti + stuffed
    V[idx] = Vi + stuffed + flipped
    return T, V, x, kind


def _simulate_counts(moments, params, sizes, seed, n_parts=1, extreme_sigma=EXTREME_SIGMA):
    N = np.asarray(sizes, dtype=np.int64)
    u = partitioned_uniforms(seed, len(N), n_parts)
    t_hat = truncated_normal(u[:, 0], moments.mu_t, moments.sd_t)
    v_hat = truncated_normal(u[:, 1], moments.mu_v, moments.sd_v)
    T = np.rint(t_hat * N).astype(np.int64)
    V = np.rint(v_hat * T).astype(np.int64)
    T, V, _, _ = apply_fraud(N, T, V, u[:, 2], u[:, 3], params, extreme_sigma)
    return T, V


def simulate_forward(moments, params, station_sizes, seed, n_parts=1, extreme_sigma=EXTREME_SIGMA):
    """Simulate one election under the stuffing model.

    Station ``i`` always consumes the same block of its seed's random stream, so
    the output does not depend on ``n_parts``.
    """
    if not isinstance(params, StuffingParams):
        raise ForensicsError("params must be StuffingParams")
    N = np.asarray(station_sizes, dtype=np.int64)
    if len(N) == 0:
        raise ForensicsError("no station sizes given")
    T, V = _simulate_counts(moments, params, N, seed, n_parts, extreme_sigma)
    n = len(N)
    ids = np.arange(n).astype(str)
    sim = np.full(n, "sim", dtype=object)
    return StationTable(sim, sim, sim, ids, N, T, V, check=False)


def _reflect(z, lo, hi):
    span = hi - lo
    r = np.mod(z - lo, 2 * span)
    return lo + np.where(r > span, 2 * span - r, r)


def _to_params(z):
    f = float(_reflect(z[0], 0.0, 1.0))
    f_e = float(_reflect(z[1], 0.0, 1.0))
    alpha = float(_reflect(z[2], *ALPHA_BOUNDS))
    f_e = min(f_e, 1.0 - f)
    return StuffingParams(f, f_e, alpha)


@dataclass
class FitConfig:
    replicates: int = 10
    seed: int = 0
    bins: int = 40
    objective: str = "joint"  # "joint" 2-D fingerprint or "vote" marginal
    start: tuple = (0.01, 0.001, 1.0)
    step: tuple = (0.05, 0.01, 0.5)
    maxiter: int = 300
    xatol: float = 1e-4
    fatol: float = 1e-10
    trimmed_moments: bool = False
    untruncate: bool = True
    moment_rounds: int = 4
    profile: bool = False
    match_steps: int = 3
    moment_tol: float = 5e-4
    fit_extreme: bool = True
    extreme_sigma: float = EXTREME_SIGMA
    n_jobs: int = 1

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in ("start", "step"):
            if k in known:
                known[k] = tuple(known[k])
        return cls(**known)

    def to_dict(self):
        d = dict(self.__dict__)
        d["start"], d["step"] = list(self.start), list(self.step)
        return d


def _histogram(T, V, N, bins, objective):
    ok = T > 0
    v = V[ok] / T[ok]
    iv = np.minimum((v * bins).astype(np.int64), bins - 1)
    if objective == "vote":
        h = np.bincount(iv, minlength=bins)
    elif objective == "joint":
        it = np.minimum((T[ok] / N[ok] * bins).astype(np.int64), bins - 1)
        h = np.bincount(iv * bins + it, minlength=bins * bins)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return h / max(h.sum(), 1)


def _raw_moments(T, V, N):
    ok = T > 0
    v, t = V[ok] / T[ok], T[ok] / N[ok]
    return np.array([v.mean(), v.std(), t.mean(), t.std()])


class StuffingObjective:
    """Squared distance between observed and simulated normalized histograms.

    Deterministic for a fixed seed: the honest draws are made once and every
    evaluation only reapplies the fraud step.
    """

    def __init__(self, table, moments, seed, config):
        self.N = table.N
        self.config = config
        self.target = _histogram(table.T, table.V, table.N, config.bins, config.objective)
        u = partitioned_uniforms(seed, len(self.N), 1)
        self._u_class, self._u_x = u[:, 2], u[:, 3]
        self._uv, self._ut = u[:, 1], u[:, 0]
        self.observed = None
        self.set_moments(moments)

    def set_moments(self, moments):
        t_hat = truncated_normal(self._ut, moments.mu_t, moments.sd_t)
        v_hat = truncated_normal(self._uv, moments.mu_v, moments.sd_v)
        self._T = np.rint(t_hat * self.N).astype(np.int64)
        self._V = np.rint(v_hat * self._T).astype(np.int64)

    def simulate(self, params):
        T, V, _, _ = apply_fraud(self.N, self._T, self._V, self._u_class, self._u_x, params,
                                 self.config.extreme_sigma)
        return T, V

    def __call__(self, params):
        if self.observed is not None:
            self.match_moments(params)
        T, V = self.simulate(params)
        h = _histogram(T, V, self.N, self.config.bins, self.config.objective)
        return float(np.sum((h - self.target) ** 2))

    def match_moments(self, params, steps=None):
        """Shift the honest law until the full model reproduces the observed moments.

        Always restarts from the observed moments, so the objective stays a
        deterministic function of ``params``.
        """
        honest = self.observed.copy()
        for _ in range(self.config.match_steps if steps is None else steps):
            self.set_moments(self._law(honest))
            gap = self.observed - _raw_moments(*self.simulate(params), self.N)
            honest = honest + gap
            honest[[1, 3]] = np.maximum(honest[[1, 3]], 1e-6)
        self.set_moments(self._law(honest))
        self.honest = honest
        return honest

    def _law(self, honest):
        m = MomentEstimate(*honest)
        return untruncate(m) if self.config.untruncate else m


@dataclass
class StuffingFit:
    params: StuffingParams
    uncertainties: dict
    objective_value: float
    replicate_estimates: list
    moments: MomentEstimate
    config: FitConfig = field(default_factory=FitConfig)
    converged: list = field(default_factory=list)
    honest_moments: list = field(default_factory=list)

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "uncertainties": dict(self.uncertainties),
            "uncertainty_kind": "standard deviation over replicate seeds",
            "objective_value": self.objective_value,
            "moments": self.moments.to_dict(),
            "replicates": [dict(p.to_dict(), objective=o, converged=c, honest_moments=h.to_dict())
                           for (p, o), c, h in zip(self.replicate_estimates, self.converged, self.honest_moments)],
            "config": self.config.to_dict(),
        }


def _nelder_mead(obj, start, step, config):
    full = (lambda z: z) if config.fit_extreme else (lambda z: np.array([z[0], 0.0, z[1]]))
    if not config.fit_extreme:
        start, step = start[[0, 2]], step[[0, 2]]
    simplex = np.vstack([start] + [start + np.eye(len(start))[k] * step[k] for k in range(len(start))])
    res = minimize(lambda z: obj(_to_params(full(z))), start, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "maxiter": config.maxiter,
                            "xatol": config.xatol, "fatol": config.fatol})
    return _to_params(full(res.x)), float(res.fun), bool(res.success)


def _fit_one(table, moments, seed, config):
    """One replicate: Nelder-Mead fit, then re-centre the honest moments so the
    fitted model reproduces the observed moments, and refit."""
    observed = np.array([moments.mu_v, moments.sd_v, moments.mu_t, moments.sd_t])
    honest = observed.copy()
    start = np.asarray(config.start, dtype=float)
    step = np.asarray(config.step, dtype=float)
    if config.profile:
        obj = StuffingObjective(table, MomentEstimate(*observed), seed, config)
        obj.observed = observed
        best, value, ok = _nelder_mead(obj, start, step, config)
        return best, value, ok, MomentEstimate(*obj.match_moments(best))
    obj = None
    for rnd in range(max(1, config.moment_rounds)):
        law = MomentEstimate(*honest)
        law = untruncate(law) if config.untruncate else law
        if obj is None:
            obj = StuffingObjective(table, law, seed, config)
        else:
            obj.set_moments(law)
        best, value, ok = _nelder_mead(obj, start, step, config)
        gap = observed - _raw_moments(*obj.simulate(best), table.N)
        log.debug("round %d: %s objective %.3g moment gap %s", rnd, best, value, gap)
        if np.max(np.abs(gap)) < config.moment_tol:
            break
        honest = honest + gap
        honest[[1, 3]] = np.maximum(honest[[1, 3]], 1e-6)
        start = best.as_array()
        step = np.asarray(config.step, dtype=float) / 2
    return best, value, ok, MomentEstimate(*honest)


def fit_stuffing(records, config: FitConfig | None = None, strict=True):
    """Fit (f, f_e, alpha) by simulated minimum distance over replicate seeds.

    Point estimates are replicate means and uncertainties replicate standard
    deviations. With ``strict`` a replicate that exhausts the iteration budget
    raises :class:`StuffingFitError`.
    """
    config = config or FitConfig()
    table = as_table(records)
    table = table.subset(~table.flagged & (table.N > 0))
    moments = estimate_moments(table, trimmed=config.trimmed_moments)
    seeds = spawn_seeds(config.seed, config.replicates)

    def run(s):
        return _fit_one(table, moments, s, config)

    if config.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]

    if strict and not all(r[2] for r in results):
        best = min(results, key=lambda r: r[1])[0]
        raise StuffingFitError(f"Nelder-Mead did not converge within {config.maxiter} iterations", best)
    est = np.array([r[0].as_array() for r in results])
    mean = est.mean(axis=0)
    sd = est.std(axis=0, ddof=1) if len(est) > 1 else np.zeros(3)
    return StuffingFit(
        params=StuffingParams(*map(float, mean)),
        uncertainties={"f": float(sd[0]), "f_e": float(sd[1]), "alpha": float(sd[2])},
        objective_value=float(np.mean([r[1] for r in results])),
        replicate_estimates=[(r[0], r[1]) for r in results],
        moments=moments,
        config=config,
        converged=[r[2] for r in results],
        honest_moments=[r[3] for r in results],
    )
