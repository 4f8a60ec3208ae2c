import numpy as np
import pytest

from elforensics.ingest import RegionKey, StationRecord, StationTable
from elforensics.synth import SyntheticSpec, generate_synthetic


def station(N, T, V, province="P", district="D", village="W", sid="1"):
    return StationRecord(RegionKey(province, district, village, str(sid)), N, T, V)


def table_from(rows):
    """rows: (N, T, V) or (N, T, V, district) or (N, T, V, district, village)."""
    recs = []
    for i, r in enumerate(rows):
        district = r[3] if len(r) > 3 else "D"
        village = r[4] if len(r) > 4 else "W"
        recs.append(station(r[0], r[1], r[2], district=district, village=village, sid=i))
    return StationTable.from_records(recs)


@pytest.fixture(scope="session")
def clean_election():
    return generate_synthetic(SyntheticSpec(seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(20170416)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
