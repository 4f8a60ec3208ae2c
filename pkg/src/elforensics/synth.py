"""Synthetic elections with injectable ballot-stuffing and voter rigging.

Honest rates are hierarchical: national moments, district means drawn around
them, village rates drawn around the district mean. Counts inside a village
are binomial at the village rates, which is exactly random assignment of the
village's voters to its stations. Stuffing then goes through the same fraud
step as the parametric model, and rigging shifts the rates of the smallest
stations.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import ForensicsError, StationTable
from .rigging import DEFAULT_P_GRID, acceptance_region, displacement_curve, nearest_rank_cutoff
from .fingerprint import standardize_scores
from .rng import station_uniforms
from .stuffing import (EXTREME_SIGMA, MomentEstimate, StuffingParams, apply_fraud, truncated_normal,
                       untruncate)

log = logging.getLogger(__name__)

# Descriptive statistics of the 2017 referendum stations (after the N >= 100 filter)
REFERENCE_MOMENTS = {"N": (332.0, 109.0), "t": (0.86, 0.085), "v": (0.53, 0.23)}


def lognormal_for(mean, sd):
    """(mu, sigma) of a log-normal with the given mean and standard deviation."""
    s2 = math.log(1.0 + (sd / mean) ** 2)
    return math.log(mean) - s2 / 2, math.sqrt(s2)


@dataclass
class SyntheticSpec:
    provinces: int = 10
    districts_per_province: int = 10
    villages_per_district: int = 20
    stations_per_village: int = 5
    size_mean: float = REFERENCE_MOMENTS["N"][0]
    size_sd: float = REFERENCE_MOMENTS["N"][1]
    size_floor: int = 100
    mu_v: float = REFERENCE_MOMENTS["v"][0]
    sd_v: float = REFERENCE_MOMENTS["v"][1]
    mu_t: float = REFERENCE_MOMENTS["t"][0]
    sd_t: float = REFERENCE_MOMENTS["t"][1]
    district_sd_v: float = 0.1
    district_sd_t: float = 0.03
    f: float = 0.0
    f_e: float = 0.0
    alpha: float = 1.0
    extreme_sigma: float = EXTREME_SIGMA
    rig_percentile: float = 0.0
    rig_dv: float = 0.0
    rig_dt: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("mu_v", "mu_t", "f", "f_e"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.size_floor < 1:
            raise ValueError("size floor must be at least 1")
        for name in ("sd_v", "sd_t", "district_sd_v", "district_sd_t", "size_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.district_sd_v > self.sd_v or self.district_sd_t > self.sd_t:
            raise ValueError("district spread exceeds total spread")
        if not 0 <= self.rig_percentile < 100:
            raise ValueError("rig_percentile must lie in [0, 100)")

    @property
    def n_stations(self):
        return (self.provinces * self.districts_per_province * self.villages_per_district
                * self.stations_per_village)

    @property
    def stuffing(self):
        return StuffingParams(self.f, self.f_e, self.alpha)

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return SyntheticSpec(**d)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SyntheticElection:
    table: StationTable
    spec: SyntheticSpec
    fraud_kind: np.ndarray
    rigged: np.ndarray
    warnings: dict = field(default_factory=dict)


def _labels(spec):
    P, D, W, S = (spec.provinces, spec.districts_per_province, spec.villages_per_district,
                  spec.stations_per_village)
    p, d, w, s = np.meshgrid(np.arange(P), np.arange(D), np.arange(W), np.arange(S), indexing="ij")
    p, d, w, s = (a.ravel() for a in (p, d, w, s))
    prov = np.array([f"P{i:02d}" for i in range(P)], dtype=object)[p]
    dist = np.array([f"D{j:02d}" for j in range(D)], dtype=object)[d]
    vil = np.array([f"V{k:03d}" for k in range(W)], dtype=object)[w]
    st = np.array([f"{l + 1}" for l in range(S)], dtype=object)[s]
    district_index = p * D + d
    village_index = district_index * W + w
    return prov, dist, vil, st, district_index, village_index


def _honest_law(spec):
    try:
        return untruncate(MomentEstimate(spec.mu_v, spec.sd_v, spec.mu_t, spec.sd_t))
    except ForensicsError:
        # zero spreads, means on the boundary or moments no truncated normal has
        log.warning("honest moments used as normal parameters directly")
        return spec


def generate_synthetic(spec: SyntheticSpec) -> SyntheticElection:
    """Draw one synthetic election; deterministic in ``spec.seed``."""
    prov, dist, vil, st, di, wi = _labels(spec)
    n = len(prov)
    n_dist = spec.provinces * spec.districts_per_province
    n_vil = n_dist * spec.villages_per_district
    ss = np.random.SeedSequence(spec.seed)
    s_size, s_dist, s_vil, s_count, s_fraud = (int(c.generate_state(1, np.uint64)[0]) for c in ss.spawn(5))

    mu, sigma = lognormal_for(spec.size_mean, spec.size_sd)
    N = np.maximum(spec.size_floor, np.rint(np.random.default_rng(s_size).lognormal(mu, sigma, n))).astype(np.int64)

    # the spec moments describe the [0, 1]-bounded rates; find the normal law behind them,
    # then split its spread into a district part and a within-district part
    law = _honest_law(spec)
    within_v = math.sqrt(max(law.sd_v ** 2 - spec.district_sd_v ** 2, 0.0))
    within_t = math.sqrt(max(law.sd_t ** 2 - spec.district_sd_t ** 2, 0.0))
    ud = np.random.default_rng(s_dist).random((n_dist, 2))
    dist_v = truncated_normal(ud[:, 0], law.mu_v, max(spec.district_sd_v, 1e-12))
    dist_t = truncated_normal(ud[:, 1], law.mu_t, max(spec.district_sd_t, 1e-12))
    uv = np.random.default_rng(s_vil).random((n_vil, 2))
    vil_district = np.arange(n_vil) // spec.villages_per_district
    vil_v = truncated_normal(uv[:, 0], dist_v[vil_district], max(within_v, 1e-12))
    vil_t = truncated_normal(uv[:, 1], dist_t[vil_district], max(within_t, 1e-12))

    rng = np.random.default_rng(s_count)
    T = rng.binomial(N, vil_t[wi])
    V = rng.binomial(T, vil_v[wi])

    u = station_uniforms(s_fraud, 0, n)
    T, V, _, kind = apply_fraud(N, T, V, u[:, 2], u[:, 3], spec.stuffing, spec.extreme_sigma)

    rigged = np.zeros(n, dtype=bool)
    warnings = {"clamped_turnout": 0, "clamped_vote": 0}
    if spec.rig_percentile > 0 and (spec.rig_dv or spec.rig_dt):
        cutoff = nearest_rank_cutoff(np.sort(N), spec.rig_percentile)
        rigged = N <= cutoff
        t = T[rigged] / N[rigged] + spec.rig_dt
        with np.errstate(invalid="ignore", divide="ignore"):
            v = np.where(T[rigged] > 0, V[rigged] / np.maximum(T[rigged], 1), 0.0) + spec.rig_dv
        warnings["clamped_turnout"] = int(np.sum(t > 1))
        warnings["clamped_vote"] = int(np.sum(v > 1))
        t, v = np.clip(t, 0, 1), np.clip(v, 0, 1)
        T[rigged] = np.rint(t * N[rigged]).astype(np.int64)
        V[rigged] = np.rint(v * T[rigged]).astype(np.int64)
        if warnings["clamped_turnout"] or warnings["clamped_vote"]:
            log.warning("rigging clamped %s", warnings)

    table = StationTable(prov, dist, vil, st, N, T, V, check=True)
    return SyntheticElection(table, spec, kind, rigged, warnings)


def clean_ensemble_curves(spec: SyntheticSpec, n_elections=200, p_grid=DEFAULT_P_GRID, seed=0):
    """Displacement curves of ``n_elections`` fraud-free elections sharing ``spec``'s geometry."""
    clean = spec.replace(f=0.0, f_e=0.0, rig_percentile=0.0, rig_dv=0.0, rig_dt=0.0)
    seeds = np.random.SeedSequence(seed).spawn(n_elections)
    curves = []
    for k, s in enumerate(seeds):
        e = generate_synthetic(clean.replace(seed=int(s.generate_state(1, np.uint64)[0])))
        curves.append(displacement_curve(standardize_scores(e.table), p_grid, label=f"synthetic{k:03d}"))
    return curves


def synthetic_acceptance_region(spec: SyntheticSpec, n_elections=200, confidence=0.95,
                                p_grid=DEFAULT_P_GRID, seed=0):
    curves = clean_ensemble_curves(spec, n_elections, p_grid, seed)
    prov = f"synthetic clean ensemble: {n_elections} elections x {spec.n_stations} stations, seed {seed}"
    return acceptance_region(curves, confidence, provenance=prov)
