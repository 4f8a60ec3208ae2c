"""Vote-turnout fingerprints, district-standardized scores and cumulative vote curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import ForensicsError, as_table

RAW_GEOMETRY = ((100, 100), ((0.0, 1.0), (0.0, 1.0)))
STANDARDIZED_GEOMETRY = ((60, 60), ((-6.0, 6.0), (-6.0, 6.0)))


@dataclass(frozen=True)
class Fingerprint:
    """2-D station-count histogram; x is vote share (or Z_v), y turnout (or Z_t).

    ``cells[i, j]`` counts stations in x-bin ``i`` and y-bin ``j``.
    """

    bins_x: int
    bins_y: int
    range_x: tuple
    range_y: tuple
    cells: np.ndarray
    out_of_range: int
    axes: str = "raw"

    @property
    def total(self):
        return int(self.cells.sum())

    def edges(self):
        return (np.linspace(*self.range_x, self.bins_x + 1),
                np.linspace(*self.range_y, self.bins_y + 1))

    def to_dict(self):
        return {
            "axes": self.axes,
            "bins_x": self.bins_x,
            "bins_y": self.bins_y,
            "range_x": list(self.range_x),
            "range_y": list(self.range_y),
            "out_of_range": self.out_of_range,
            "cells": self.cells.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["bins_x"], d["bins_y"], tuple(d["range_x"]), tuple(d["range_y"]),
                   np.asarray(d["cells"], dtype=np.int64), d["out_of_range"], d.get("axes", "raw"))


def histogram_xy(x, y, bins=(100, 100), ranges=((0.0, 1.0), (0.0, 1.0)), axes="raw"):
    """Bin points into a :class:`Fingerprint`; NaN or out-of-range points are tallied, not binned."""
    (nx, ny), (rx, ry) = bins, ranges
    if nx < 1 or ny < 1:
        raise ForensicsError("fingerprint needs at least one bin per axis")
    if not (rx[1] > rx[0] and ry[1] > ry[0]):
        raise ForensicsError("degenerate fingerprint range")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise ForensicsError("cannot build a fingerprint from no stations")
    inside = (np.isfinite(x) & np.isfinite(y)
              & (x >= rx[0]) & (x <= rx[1]) & (y >= ry[0]) & (y <= ry[1]))
    ix = np.minimum(((x[inside] - rx[0]) / (rx[1] - rx[0]) * nx).astype(np.int64), nx - 1)
    iy = np.minimum(((y[inside] - ry[0]) / (ry[1] - ry[0]) * ny).astype(np.int64), ny - 1)
    cells = np.bincount(ix * ny + iy, minlength=nx * ny).reshape(nx, ny).astype(np.int64)
    return Fingerprint(nx, ny, tuple(map(float, rx)), tuple(map(float, ry)), cells,
                       int((~inside).sum()), axes)


def compute_fingerprint(data, bins=None, ranges=None, axes="raw"):
    """Fingerprint of stations (``axes='raw'``) or of a :class:`ScoreSet` (``'standardized'``)."""
    if axes == "raw":
        table = as_table(data)
        default = RAW_GEOMETRY
        x, y = table.v, table.t
    elif axes == "standardized":
        default = STANDARDIZED_GEOMETRY
        x, y = data.z_v, data.z_t
    else:
        raise ValueError(f"unknown axes {axes!r}")
    return histogram_xy(x, y, bins or default[0], ranges or default[1], axes)


@dataclass(frozen=True)
class StandardizedScore:
    station: int
    z_v: float
    z_t: float
    neighborhood_size: int


@dataclass
class ScoreSet:
    """Columnar standardized scores.

    ``index`` points into the station table the scores were computed from;
    ``N`` and ``province`` are carried along for the rigging test.
    """

    index: np.ndarray
    z_v: np.ndarray
    z_t: np.ndarray
    neighborhood_size: np.ndarray
    N: np.ndarray
    province: np.ndarray
    skipped: int

    def __len__(self):
        return len(self.index)

    def __iter__(self):
        for i in range(len(self)):
            yield StandardizedScore(int(self.index[i]), float(self.z_v[i]), float(self.z_t[i]),
                                    int(self.neighborhood_size[i]))

    def subset(self, mask):
        return ScoreSet(self.index[mask], self.z_v[mask], self.z_t[mask],
                        self.neighborhood_size[mask], self.N[mask], self.province[mask], 0)


def _leave_one_out(x, groups, n_groups, ddof):
    """Leave-one-out mean and spread of ``x`` within each group.

    Returns (mean, sd, others); sd is NaN where fewer than 2 others or zero spread.
    """
    n = np.bincount(groups, minlength=n_groups).astype(float)
    gmean = np.bincount(groups, weights=x, minlength=n_groups) / np.maximum(n, 1)
    d = x - gmean[groups]
    ss = np.bincount(groups, weights=d * d, minlength=n_groups)
    ni = n[groups]
    m = ni - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        loo_mean = gmean[groups] - d / m
        ss_loo = ss[groups] - d * d * ni / m
    # removing a dominant point leaves ss_loo as a small difference of large
    # numbers; redo those stations with an explicit two-pass sum
    bad = np.flatnonzero((m >= 2) & (ss_loo < 1e-4 * ss[groups]))
    if len(bad):
        order = np.argsort(groups, kind="stable")
        starts = np.searchsorted(groups[order], np.arange(n_groups))
        for i in bad:
            g = groups[i]
            members = order[starts[g]:starts[g] + int(n[g])]
            others = x[members[members != i]]
            loo_mean[i] = others.mean()
            ss_loo[i] = np.sum((others - loo_mean[i]) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        sd = np.sqrt(np.maximum(ss_loo, 0.0) / (m - ddof))
    # identical neighbours can leave a spread of a few ulps from rounding in the mean
    ok = (m >= 2) & (sd > 64 * np.finfo(float).eps * np.abs(loo_mean))
    return loo_mean, np.where(ok, sd, np.nan), m


def standardize_scores(records, spread="sample", level="district"):
    """Z-scores of vote share and turnout against each station's district neighbours.

    The neighbourhood of a station is every *other* station in its district.
    Stations with fewer than two neighbours, zero neighbourhood spread, or an
    undefined vote share are skipped and counted in ``ScoreSet.skipped``.
    """
    table = as_table(records)
    ddof = {"sample": 1, "population": 0}[spread]
    usable = ~table.flagged & (table.N > 0)
    idx = np.flatnonzero(usable)
    groups, _ = table.codes(level)
    g = groups[idx]
    # re-code so bincount sizes stay compact
    uniq, g = np.unique(g, return_inverse=True)
    mv, sv, others = _leave_one_out(table.v[idx], g, len(uniq), ddof)
    mt, st, _ = _leave_one_out(table.t[idx], g, len(uniq), ddof)
    with np.errstate(invalid="ignore"):
        z_v = (table.v[idx] - mv) / sv
        z_t = (table.t[idx] - mt) / st
    ok = np.isfinite(z_v) & np.isfinite(z_t)
    prov, _ = table.codes("province")
    return ScoreSet(
        index=idx[ok],
        z_v=z_v[ok],
        z_t=z_t[ok],
        neighborhood_size=others[ok].astype(np.int64),
        N=table.N[idx[ok]],
        province=table.province[idx[ok]],
        skipped=int(len(table) - ok.sum()),
    )


@dataclass(frozen=True)
class CumulativeCurve:
    mode: str
    x: np.ndarray
    y: np.ndarray

    @property
    def final(self):
        return float(self.y[-1])

    def crossings(self, level=0.5):
        """Abscissae where the curve moves from one side of ``level`` to the other."""
        above = self.y > level
        k = np.flatnonzero(above[1:] != above[:-1]) + 1
        return self.x[k]

    def to_dict(self):
        return {"mode": self.mode, "x": self.x.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], np.asarray(d["x"], dtype=float), np.asarray(d["y"], dtype=float))


def size_rank_order(table):
    """Station order by electorate descending; ties broken by region key."""
    keys = [np.asarray(getattr(table, k), dtype=str) for k in ("station_id", "village", "district", "province")]
    return np.lexsort(keys + [-table.N])


def cumulative_curve(records, mode="size"):
    """Running vote percentage sum(V)/sum(T).

    ``mode='turnout'``: one point per distinct turnout level, over stations at
    or below that level. ``mode='size'``: stations ranked by electorate
    (largest first), one point per rank.
    """
    table = as_table(records)
    if len(table) == 0:
        raise ForensicsError("cumulative curve of an empty station list")
    if mode == "turnout":
        order = np.argsort(table.t, kind="stable")
        t = table.t[order]
        cv = np.cumsum(table.V[order])
        ct = np.cumsum(table.T[order])
        last = np.flatnonzero(np.r_[t[1:] != t[:-1], True])
        x, cv, ct = t[last], cv[last], ct[last]
    elif mode == "size":
        order = size_rank_order(table)
        cv = np.cumsum(table.V[order])
        ct = np.cumsum(table.T[order])
        x = np.arange(1, len(table) + 1, dtype=float)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    keep = ct > 0
    if not keep.any():
        raise ForensicsError("no valid votes in any station")
    return CumulativeCurve(mode, x[keep].astype(float), cv[keep] / ct[keep])
