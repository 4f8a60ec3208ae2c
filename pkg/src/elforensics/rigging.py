"""Voter-rigging test: small-vs-large station displacement in the standardized fingerprint."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .fingerprint import ScoreSet, standardize_scores
from .ingest import ForensicsError, as_table

DEFAULT_P_GRID = tuple(range(1, 91))
PROVINCE_P_GRID = tuple(range(1, 90))


@dataclass(frozen=True)
class DisplacementCurve:
    """delta(p) over a percentile grid; NaN marks grid points with an empty group."""

    p: np.ndarray
    dv: np.ndarray
    dt: np.ndarray
    delta: np.ndarray
    n_small: np.ndarray
    label: str = ""

    def at(self, p):
        return float(self.delta[np.flatnonzero(self.p == p)[0]])

    def to_dict(self):
        return {
            "label": self.label,
            "p": self.p.tolist(),
            "dv": _nan_to_none(self.dv),
            "dt": _nan_to_none(self.dt),
            "delta": _nan_to_none(self.delta),
            "n_small": self.n_small.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        f = lambda xs: np.array([math.nan if x is None else x for x in xs], dtype=float)
        return cls(np.asarray(d["p"], dtype=np.int64), f(d["dv"]), f(d["dt"]), f(d["delta"]),
                   np.asarray(d["n_small"], dtype=np.int64), d.get("label", ""))


def _nan_to_none(a):
    return [None if not np.isfinite(x) else float(x) for x in a]


def nearest_rank_cutoff(sorted_sizes, p):
    """Nearest-rank p-th percentile of an ascending array."""
    k = max(1, math.ceil(p / 100.0 * len(sorted_sizes)))
    return sorted_sizes[k - 1]


def displacement_curve(scores: ScoreSet, p_grid=DEFAULT_P_GRID, label=""):
    """Centroid shift of the smallest p% of stations against the rest.

    Small stations have N at or below the nearest-rank p-th percentile of N.
    delta(p) is the Euclidean length of (dv, dt), signed by dv + dt so that a
    shift toward high vote and high turnout is positive.
    """
    if len(scores) == 0:
        raise ForensicsError("no standardized scores")
    p_grid = np.asarray(p_grid, dtype=float)
    if np.any((p_grid <= 0) | (p_grid >= 100)):
        raise ForensicsError("percentiles must lie strictly between 0 and 100")
    N = np.asarray(scores.N)
    order = np.argsort(N, kind="stable")
    sN = N[order]
    # prefix sums over stations sorted by size make each grid point O(1)
    cz_v = np.r_[0.0, np.cumsum(scores.z_v[order])]
    cz_t = np.r_[0.0, np.cumsum(scores.z_t[order])]
    n = len(N)
    dv = np.full(len(p_grid), np.nan)
    dt = np.full(len(p_grid), np.nan)
    n_small = np.zeros(len(p_grid), dtype=np.int64)
    for k, p in enumerate(p_grid):
        m = int(np.searchsorted(sN, nearest_rank_cutoff(sN, p), side="right"))
        n_small[k] = m
        if 0 < m < n:
            dv[k] = cz_v[m] / m - (cz_v[n] - cz_v[m]) / (n - m)
            dt[k] = cz_t[m] / m - (cz_t[n] - cz_t[m]) / (n - m)
    # a shift exactly along the anti-diagonal counts as positive so |delta| stays the norm
    delta = np.where(dv + dt < 0, -1.0, 1.0) * np.hypot(dv, dt)
    return DisplacementCurve(p_grid.astype(np.int64), dv, dt, delta, n_small, label)


def group_displacement(z_v, z_t, small):
    """(dv, dt, delta) between the ``small`` mask and its complement."""
    small = np.asarray(small, dtype=bool)
    dv = z_v[small].mean() - z_v[~small].mean()
    dt = z_t[small].mean() - z_t[~small].mean()
    return dv, dt, (-1.0 if dv + dt < 0 else 1.0) * math.hypot(dv, dt)


@dataclass(frozen=True)
class AcceptanceRegion:
    p: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    confidence: float
    provenance: str
    n_reference: int

    def exits(self, curve):
        """Boolean mask of grid points where ``curve`` leaves the region (either side)."""
        lo, hi, d = self._align(curve)
        with np.errstate(invalid="ignore"):
            return np.isfinite(d) & ((d > hi) | (d < lo))

    def exceeds(self, curve):
        """Grid points where ``curve`` lies above the upper bound."""
        lo, hi, d = self._align(curve)
        with np.errstate(invalid="ignore"):
            return np.isfinite(d) & (d > hi)

    def _align(self, curve):
        if not np.array_equal(curve.p, self.p):
            raise ForensicsError("curve and region use different percentile grids")
        return self.lower, self.upper, curve.delta

    def to_dict(self):
        return {
            "p": self.p.tolist(),
            "lower": _nan_to_none(self.lower),
            "upper": _nan_to_none(self.upper),
            "confidence": self.confidence,
            "provenance": self.provenance,
            "n_reference": self.n_reference,
        }

    @classmethod
    def from_dict(cls, d):
        f = lambda xs: np.array([math.nan if x is None else x for x in xs], dtype=float)
        return cls(np.asarray(d["p"], dtype=np.int64), f(d["lower"]), f(d["upper"]),
                   d["confidence"], d["provenance"], d["n_reference"])


def acceptance_region(reference_curves, confidence=0.95, provenance="reference"):
    """Per-p empirical quantiles (1 - c)/2 and (1 + c)/2 across reference curves."""
    curves = list(reference_curves)
    if not curves:
        raise ForensicsError("acceptance region needs at least one reference curve")
    if not 0 < confidence <= 1:
        raise ForensicsError("confidence must lie in (0, 1]")
    p = curves[0].p
    if any(not np.array_equal(c.p, p) for c in curves):
        raise ForensicsError("reference curves use different percentile grids")
    D = np.vstack([c.delta for c in curves])
    with np.errstate(invalid="ignore"), _quiet_nan():
        lower = np.nanquantile(D, (1 - confidence) / 2, axis=0)
        upper = np.nanquantile(D, (1 + confidence) / 2, axis=0)
    return AcceptanceRegion(p.copy(), lower, upper, float(confidence), provenance, len(curves))


class _quiet_nan:
    def __enter__(self):
        import warnings
        self._w = warnings.catch_warnings()
        self._w.__enter__()
        warnings.simplefilter("ignore", RuntimeWarning)

    def __exit__(self, *exc):
        return self._w.__exit__(*exc)


def consecutive_run(mask):
    """Length of the longest run of True values."""
    best = run = 0
    for m in mask:
        run = run + 1 if m else 0
        best = max(best, run)
    return best


@dataclass
class ProvinceRanking:
    entries: list  # (province, mean delta, max delta), mean delta descending
    excluded: list = field(default_factory=list)
    p_grid: tuple = PROVINCE_P_GRID

    def to_dict(self):
        return {
            "p_grid": [int(p) for p in self.p_grid],
            "entries": [{"province": p, "mean_delta": m, "max_delta": x} for p, m, x in self.entries],
            "excluded": list(self.excluded),
        }


def rank_provinces(records, p_grid=PROVINCE_P_GRID, min_scores=10, spread="sample"):
    """Rank provinces by mean delta(p), each province analysed as a separate election.

    Districts nest inside provinces, so the district-neighbourhood Z-scores are
    the same whether computed nationally or per province; the percentile cut
    uses the province's own electorate sizes.
    """
    table = as_table(records)
    scores = standardize_scores(table, spread=spread)
    provinces = sorted(set(table.province.tolist()))
    entries, excluded = [], []
    for prov in provinces:
        mask = scores.province == prov
        if mask.sum() < min_scores:
            excluded.append(prov)
            continue
        curve = displacement_curve(scores.subset(mask), p_grid, label=prov)
        d = curve.delta[np.isfinite(curve.delta)]
        if len(d) == 0:
            excluded.append(prov)
            continue
        entries.append((prov, float(d.mean()), float(d.max())))
    entries.sort(key=lambda e: (-e[1], e[0]))
    return ProvinceRanking(entries, excluded, tuple(p_grid))


def read_reference_curves(path, p_grid=None):
    """Reference displacements from a CSV file with columns ``election_id,p,delta``.

    Grid points an election does not list are NaN. The grid defaults to the
    union of all listed percentiles.
    """
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for k, row in enumerate(csv.DictReader(fh), start=2):
            try:
                rows.setdefault(row["election_id"], {})[int(row["p"])] = float(row["delta"])
            except (KeyError, ValueError) as e:
                raise ForensicsError(f"{path}: row {k}: {e}") from None
    if not rows:
        raise ForensicsError(f"{path}: no reference curves")
    grid = np.array(sorted(p_grid or {p for r in rows.values() for p in r}), dtype=np.int64)
    curves = []
    for eid, r in rows.items():
        delta = np.array([r.get(int(p), math.nan) for p in grid])
        nan = np.full(len(grid), math.nan)
        curves.append(DisplacementCurve(grid, nan, nan, delta, np.zeros(len(grid), np.int64), eid))
    return curves


def write_reference_curves(curves, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["election_id", "p", "delta"])
        for i, c in enumerate(curves):
            eid = c.label or f"election{i}"
            for p, d in zip(c.p, c.delta):
                if np.isfinite(d):
                    w.writerow([eid, int(p), repr(float(d))])
