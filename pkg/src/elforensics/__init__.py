"""Election forensics on polling-station results.

Ballot-stuffing and voter-rigging fingerprints, second-digit Benford and
vote-assignment tests, and a synthetic-election generator to check them.
"""

__version__ = "0.1.0"

from .ingest import (DatasetSummary, FormatConfig, ForensicsError, RegionKey, StationRecord,
                     StationTable, filter_stations, parse_results, summarize, write_results)
from .fingerprint import (CumulativeCurve, Fingerprint, compute_fingerprint, cumulative_curve,
                          standardize_scores)
from .stuffing import (FitConfig, MomentEstimate, StuffingFit, StuffingParams, estimate_moments,
                       fit_stuffing, simulate_forward)
from .rigging import (AcceptanceRegion, DisplacementCurve, ProvinceRanking, acceptance_region,
                      displacement_curve, rank_provinces)
from .anomaly import AssignmentResult, BenfordResult, assignment_test, benford_by_level, benford_test
from .synth import SyntheticSpec, generate_synthetic

__all__ = [
    "AcceptanceRegion", "AssignmentResult", "BenfordResult", "CumulativeCurve", "DatasetSummary",
    "DisplacementCurve", "Fingerprint", "FitConfig", "ForensicsError", "FormatConfig",
    "MomentEstimate", "ProvinceRanking", "RegionKey", "StationRecord", "StationTable",
    "StuffingFit", "StuffingParams", "SyntheticSpec", "acceptance_region", "assignment_test",
    "benford_by_level", "benford_test", "compute_fingerprint", "cumulative_curve",
    "displacement_curve", "estimate_moments", "filter_stations", "fit_stuffing",
    "generate_synthetic", "parse_results", "rank_provinces", "simulate_forward",
    "standardize_scores", "summarize", "write_results",
]
