"""Polling-station records: parsing, validation, electorate filter, summary statistics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class ForensicsError(ValueError):
    """Base class for input errors raised by this package."""


class ParseError(ForensicsError):
    def __init__(self, row, message):
        super().__init__(f"row {row}: {message}")
        self.row = row


class ValidationError(ForensicsError):
    def __init__(self, region, message):
        super().__init__(f"station {region.label()}: {message}")
        self.region = region


class DuplicateKeyError(ForensicsError):
    def __init__(self, region, row=None):
        where = f" (row {row})" if row is not None else ""
        super().__init__(f"duplicate station key {region.label()}{where}")
        self.region = region
        self.row = row


@dataclass(frozen=True, order=True)
class RegionKey:
    province: str
    district: str
    village: str
    station_id: str

    def label(self):
        return "/".join((self.province, self.district, self.village, self.station_id))


@dataclass(frozen=True)
class StationRecord:
    """One polling station.

    ``rel_turnout`` and ``vote_share`` are derived on construction; ``vote_share``
    is NaN when no valid votes were cast (see :attr:`flagged`).
    """

    region: RegionKey
    eligible: int
    turnout: int
    yes_votes: int
    rel_turnout: float = field(init=False)
    vote_share: float = field(init=False)

    def __post_init__(self):
        N, T, V = self.eligible, self.turnout, self.yes_votes
        if V < 0 or T < 0 or N < 0:
            raise ValidationError(self.region, "negative count")
        if V > T:
            raise ValidationError(self.region, f"yes votes {V} exceed turnout {T}")
        if T > N:
            raise ValidationError(self.region, f"turnout {T} exceeds electorate {N}")
        object.__setattr__(self, "rel_turnout", T / N if N > 0 else math.nan)
        object.__setattr__(self, "vote_share", V / T if T > 0 else math.nan)

    @property
    def flagged(self):
        """True when the vote share is undefined (T = 0)."""
        return self.turnout == 0


class StationTable:
    """Columnar, immutable view of a list of station records.

    Iterating yields :class:`StationRecord` objects; the statistics modules work
    on the numpy columns directly.
    """

    _LEVELS = ("province", "district", "village", "station_id")

    def __init__(self, province, district, village, station_id, N, T, V, check=True):
        self.province = np.asarray(province, dtype=object)
        self.district = np.asarray(district, dtype=object)
        self.village = np.asarray(village, dtype=object)
        self.station_id = np.asarray(station_id, dtype=object)
        self.N = np.asarray(N, dtype=np.int64)
        self.T = np.asarray(T, dtype=np.int64)
        self.V = np.asarray(V, dtype=np.int64)
        n = len(self.N)
        for col in (self.province, self.district, self.village, self.station_id, self.T, self.V):
            if len(col) != n:
                raise ValueError("column lengths differ")
        if check:
            bad = (self.V < 0) | (self.V > self.T) | (self.T > self.N)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                rec = self.region(i)
                msg = (f"turnout {self.T[i]} exceeds electorate {self.N[i]}" if self.T[i] > self.N[i]
                       else f"yes votes {self.V[i]} invalid for turnout {self.T[i]}")
                raise ValidationError(rec, msg)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.t = np.where(self.N > 0, self.T / np.maximum(self.N, 1), np.nan)
            self.v = np.where(self.T > 0, self.V / np.maximum(self.T, 1), np.nan)
        for arr in (self.N, self.T, self.V, self.t, self.v):
            arr.setflags(write=False)
        self._codes = {}

    @classmethod
    def from_records(cls, records: Iterable[StationRecord]):
        if isinstance(records, StationTable):
            return records
        records = list(records)
        cols = [[getattr(r.region, k) for r in records] for k in cls._LEVELS]
        return cls(*cols,
                   [r.eligible for r in records],
                   [r.turnout for r in records],
                   [r.yes_votes for r in records])

    def __len__(self):
        return len(self.N)

    def region(self, i) -> RegionKey:
        return RegionKey(str(self.province[i]), str(self.district[i]),
                         str(self.village[i]), str(self.station_id[i]))

    def __getitem__(self, i) -> StationRecord:
        return StationRecord(self.region(i), int(self.N[i]), int(self.T[i]), int(self.V[i]))

    def __iter__(self) -> Iterator[StationRecord]:
        for i in range(len(self)):
            yield self[i]

    def records(self):
        return list(self)

    def subset(self, mask_or_index):
        idx = np.asarray(mask_or_index)
        return StationTable(self.province[idx], self.district[idx], self.village[idx],
                            self.station_id[idx], self.N[idx], self.T[idx], self.V[idx],
                            check=False)

    @property
    def flagged(self):
        return self.T == 0

    def codes(self, level):
        """Integer group codes for ``level`` in {'province', 'district', 'village'}.

        Districts and villages are keyed by their full path, so equal names in
        different parents stay distinct.
        """
        if level not in self._codes:
            depth = self._LEVELS.index(level) + 1
            keys = ["\x1f".join(parts) for parts in zip(*(getattr(self, k) for k in self._LEVELS[:depth]))]
            uniq, inv = np.unique(np.asarray(keys, dtype=str), return_inverse=True) if keys else ([], np.zeros(0, int))
            self._codes[level] = (np.asarray(inv, dtype=np.int64), len(uniq))
        return self._codes[level]

    def n_groups(self, level):
        return self.codes(level)[1]

    def check_unique(self):
        keys = {}
        for i, k in enumerate(zip(self.province, self.district, self.village, self.station_id)):
            if k in keys:
                raise DuplicateKeyError(self.region(i))
            keys[k] = i


def as_table(records) -> StationTable:
    return StationTable.from_records(records)


@dataclass
class FormatConfig:
    """Delimiter and column mapping for station result files.

    ``columns`` maps each logical field to the header name used in the file.
    """

    delimiter: str = ";"
    columns: dict = field(default_factory=lambda: {
        "province": "province",
        "district": "district",
        "village": "village",
        "station": "station",
        "eligible": "N",
        "turnout": "T",
        "yes": "V",
    })

    @classmethod
    def from_dict(cls, d):
        base = cls()
        cols = dict(base.columns)
        cols.update(d.get("columns", {}))
        return cls(delimiter=d.get("delimiter", base.delimiter), columns=cols)

    def to_dict(self):
        return {"delimiter": self.delimiter, "columns": dict(self.columns)}


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, encoding="utf-8", newline="")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _count(value, name, row):
    try:
        return int(value.strip())
    except (ValueError, AttributeError):
        raise ParseError(row, f"non-numeric {name} {value!r}") from None


def parse_results(source, fmt: FormatConfig | None = None) -> StationTable:
    """Read a delimiter-separated results file with a header row.

    ``source`` may be a path, raw bytes, or a binary/text stream. Row numbers in
    errors count the header as row 1.
    """
    fmt = fmt or FormatConfig()
    fh = _open_text(source)
    try:
        reader = csv.reader(fh, delimiter=fmt.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(1, "missing header row") from None
        try:
            pos = {k: header.index(name) for k, name in fmt.columns.items()}
        except ValueError as e:
            raise ParseError(1, f"header lacks mapped column: {e}") from None

        cols = {k: [] for k in fmt.columns}
        seen = set()
        for rownum, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(rownum, f"expected {len(header)} fields, got {len(row)}")
            region = RegionKey(*(row[pos[k]].strip() for k in ("province", "district", "village", "station")))
            N = _count(row[pos["eligible"]], "electorate", rownum)
            T = _count(row[pos["turnout"]], "turnout", rownum)
            V = _count(row[pos["yes"]], "yes votes", rownum)
            StationRecord(region, N, T, V)  # raises ValidationError
            if region in seen:
                raise DuplicateKeyError(region, rownum)
            seen.add(region)
            for k, val in zip(("province", "district", "village", "station"), (region.province, region.district, region.village, region.station_id)):
                cols[k].append(val)
            cols["eligible"].append(N)
            cols["turnout"].append(T)
            cols["yes"].append(V)
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    return StationTable(cols["province"], cols["district"], cols["village"], cols["station"],
                        cols["eligible"], cols["turnout"], cols["yes"], check=False)


def write_results(records, dest, fmt: FormatConfig | None = None):
    """Write stations in the format :func:`parse_results` reads."""
    fmt = fmt or FormatConfig()
    table = as_table(records)
    order = ("province", "district", "village", "station", "eligible", "turnout", "yes")
    own = not hasattr(dest, "write")
    fh = open(dest, "w", encoding="utf-8", newline="") if own else dest
    try:
        w = csv.writer(fh, delimiter=fmt.delimiter, lineterminator="\n")
        w.writerow([fmt.columns[k] for k in order])
        for i in range(len(table)):
            w.writerow([table.province[i], table.district[i], table.village[i], table.station_id[i],
                        int(table.N[i]), int(table.T[i]), int(table.V[i])])
    finally:
        if own:
            fh.close()


@dataclass(frozen=True)
class ExclusionSummary:
    min_electorate: int
    excluded_station_count: int
    excluded_vote_fraction: float

    def to_dict(self):
        return dict(self.__dict__)


def filter_stations(records, min_electorate=100):
    """Keep stations with electorate N >= ``min_electorate``.

    Returns ``(retained, summary)``; the summary's vote fraction is
    sum(T) over excluded stations divided by sum(T) over all.
    """
    if min_electorate < 0:
        raise ValueError("min_electorate must be non-negative")
    table = as_table(records)
    keep = table.N >= min_electorate
    total = int(table.T.sum())
    excluded_votes = int(table.T[~keep].sum())
    summary = ExclusionSummary(int(min_electorate), int((~keep).sum()),
                               excluded_votes / total if total > 0 else 0.0)
    return table.subset(keep), summary


@dataclass(frozen=True)
class DatasetSummary:
    station_count: int
    village_count: int
    district_count: int
    province_count: int
    flagged_count: int
    mean: dict
    std: dict
    exclusion: ExclusionSummary | None = None

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("station_count", "village_count", "district_count",
                                           "province_count", "flagged_count")}
        d["mean"] = dict(self.mean)
        d["std"] = dict(self.std)
        d["std_convention"] = "population"
        d["exclusion"] = self.exclusion.to_dict() if self.exclusion else None
        return d


def summarize(records, exclusion: ExclusionSummary | None = None) -> DatasetSummary:
    """Means and population standard deviations of N, T, V, t, v.

    Stations with T = 0 are left out of the v statistics only.
    """
    table = as_table(records)
    if len(table) == 0:
        raise ForensicsError("cannot summarize an empty station list")
    cols = {"N": table.N.astype(float), "T": table.T.astype(float), "V": table.V.astype(float),
            "t": table.t, "v": table.v[~table.flagged]}
    mean, std = {}, {}
    for k, x in cols.items():
        x = x[np.isfinite(x)]
        mean[k] = float(x.mean()) if len(x) else math.nan
        std[k] = float(x.std()) if len(x) else math.nan
    return DatasetSummary(
        station_count=len(table),
        village_count=table.n_groups("village"),
        district_count=table.n_groups("district"),
        province_count=table.n_groups("province"),
        flagged_count=int(table.flagged.sum()),
        mean=mean,
        std=std,
        exclusion=exclusion,
    )
