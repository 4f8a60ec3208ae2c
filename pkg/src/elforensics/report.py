"""Full forensic pipeline and the consolidated JSON report."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .anomaly import assignment_test, benford_by_level
from .fingerprint import compute_fingerprint, cumulative_curve, standardize_scores
from .ingest import FormatConfig, ForensicsError, filter_stations, parse_results, summarize
from .rigging import (DEFAULT_P_GRID, AcceptanceRegion, acceptance_region, consecutive_run,
                      displacement_curve, nearest_rank_cutoff, rank_provinces,
                      read_reference_curves)
from .stuffing import FitConfig, fit_stuffing
from .synth import SyntheticSpec, synthetic_acceptance_region

log = logging.getLogger(__name__)

TESTS = ("stuffing", "rigging", "benford", "assignment")

THRESHOLDS = {
    "stuffing": "signal if f > 2 x replicate spread of f",
    "rigging": "signal if delta(p) lies above the acceptance region at >= 3 consecutive grid points",
    "benford": "signal if P(H0|data) < 0.05 at any tested aggregation level",
    "assignment": "signal if one-sided binomial p of |z| > 2.576 exceedances vs 1% is < 0.01",
}


@dataclass
class PipelineConfig:
    input: str | None = None
    format: FormatConfig = field(default_factory=FormatConfig)
    min_electorate: int = 100
    seed: int = 0
    out_dir: str = "forensics_out"
    tests: dict = field(default_factory=lambda: {t: True for t in TESTS})
    stuffing: dict = field(default_factory=dict)
    rigging: dict = field(default_factory=lambda: {
        "p_grid": list(DEFAULT_P_GRID),
        "confidence": 0.95,
        "reference": None,
        "baseline_elections": 200,
        "baseline_spec": None,
        "province_ranking": True,
        "spread": "sample",
    })
    benford: dict = field(default_factory=lambda: {"levels": ["station", "village"], "min_value": 100})
    assignment: dict = field(default_factory=lambda: {"permutation": False, "n_perm": 1000})
    plots: bool = True

    @classmethod
    def from_dict(cls, d):
        base = cls()
        kw = {}
        for k in ("input", "min_electorate", "seed", "out_dir", "plots"):
            if k in d:
                kw[k] = d[k]
        if "format" in d:
            kw["format"] = FormatConfig.from_dict(d["format"])
        for k in ("tests", "stuffing", "rigging", "benford", "assignment"):
            merged = dict(getattr(base, k))
            merged.update(d.get(k, {}))
            kw[k] = merged
        return cls(**kw)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {
            "input": self.input,
            "format": self.format.to_dict(),
            "min_electorate": self.min_electorate,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "tests": dict(self.tests),
            "stuffing": dict(self.stuffing),
            "rigging": dict(self.rigging),
            "benford": dict(self.benford),
            "assignment": dict(self.assignment),
            "plots": self.plots,
        }


@dataclass
class ReportBundle:
    """Everything the pipeline computed, as plain JSON-ready sections."""

    sections: dict
    verdicts: dict
    errors: dict
    artifacts: dict = field(default_factory=dict)
    objects: dict = field(default_factory=dict)  # in-memory result objects, not serialized

    def to_dict(self):
        return {
            "version": __version__,
            "verdicts": self.verdicts,
            "thresholds": THRESHOLDS,
            "errors": self.errors,
            "artifacts": self.artifacts,
            **self.sections,
        }


def dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=False, ensure_ascii=False)
        fh.write("\n")


def load_report(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def baseline_spec_for(table, summary, seed=0, base: dict | None = None):
    """Clean synthetic election resembling ``table`` in size and vote/turnout moments."""
    spec = SyntheticSpec(**(base or {}))
    if base:
        return spec.replace(seed=seed)
    per_province = spec.districts_per_province * spec.villages_per_district * spec.stations_per_village
    sd_v, sd_t = summary.std["v"], summary.std["t"]
    return spec.replace(
        provinces=max(1, round(len(table) / per_province)),
        size_mean=summary.mean["N"], size_sd=summary.std["N"],
        size_floor=max(1, int(table.N.min())),
        mu_v=min(max(summary.mean["v"], 0.01), 0.99), sd_v=sd_v,
        mu_t=min(max(summary.mean["t"], 0.01), 0.99), sd_t=sd_t,
        district_sd_v=min(spec.district_sd_v, 0.5 * sd_v),
        district_sd_t=min(spec.district_sd_t, 0.5 * sd_t),
        seed=seed,
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if (isinstance(x, float) and not math.isfinite(x)) else
                        (repr(x) if isinstance(x, float) else x) for x in r])


def _stuffing_section(table, cfg):
    fit_cfg = FitConfig.from_dict({"seed": cfg.seed, **cfg.stuffing})
    fit = fit_stuffing(table, fit_cfg)
    signal = fit.params.f > 2 * fit.uncertainties["f"]
    return fit.to_dict(), signal, fit


def _rigging_section(table, summary, cfg, out):
    rc = cfg.rigging
    p_grid = tuple(rc.get("p_grid") or DEFAULT_P_GRID)
    scores = standardize_scores(table, spread=rc.get("spread", "sample"))
    curve = displacement_curve(scores, p_grid, label="observed")
    if rc.get("reference"):
        ref = Path(rc["reference"])
        if not ref.exists():
            raise ForensicsError(f"reference curve file not found: {ref}")
        refs = read_reference_curves(ref, p_grid)
        region = acceptance_region(refs, rc.get("confidence", 0.95), provenance=f"file:{ref.name}")
    else:
        spec = baseline_spec_for(table, summary, cfg.seed, rc.get("baseline_spec"))
        region = synthetic_acceptance_region(spec, rc.get("baseline_elections", 200),
                                             rc.get("confidence", 0.95), p_grid, seed=cfg.seed)
    above = region.exceeds(curve)
    run = consecutive_run(above)
    section = {
        "curve": curve.to_dict(),
        "region": region.to_dict(),
        "standardized_stations": len(scores),
        "skipped_stations": scores.skipped,
        "exceed_p": [int(p) for p in curve.p[above]],
        "longest_exceed_run": run,
    }
    ranking = None
    if rc.get("province_ranking", True) and table.n_groups("province") > 1:
        ranking = rank_provinces(table, spread=rc.get("spread", "sample"))
        section["province_ranking"] = ranking.to_dict()
    return section, run >= 3, (scores, curve, region, ranking)


def _benford_section(table, cfg):
    out, signal, results = {}, False, {}
    for level in cfg.benford.get("levels", ["station", "village"]):
        r = benford_by_level(table, level, cfg.benford.get("min_value", 100))
        out[level] = r.to_dict()
        results[level] = r
        signal |= r.log10_posterior < math.log10(0.05)
    return out, signal, results


def _assignment_section(table, cfg):
    r = assignment_test(table, permutation=cfg.assignment.get("permutation", False),
                        n_perm=cfg.assignment.get("n_perm", 1000), seed=cfg.seed)
    return r.to_dict(), r.binomial_p < 0.01, r


def run_pipeline(cfg: PipelineConfig, table=None) -> ReportBundle:
    """Ingest, filter and run every enabled test; write report, artifacts and figures.

    A failing test is recorded as not-run with its error; the others still run.
    ``table`` may be given instead of ``cfg.input`` (already parsed stations).
    """
    if table is None:
        if not cfg.input:
            raise ForensicsError("no input file given")
        path = Path(cfg.input)
        if not path.is_file():
            raise ForensicsError(f"input file not found: {path}")
        table = parse_results(path, cfg.format)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    retained, exclusion = filter_stations(table, cfg.min_electorate)
    summary = summarize(retained, exclusion)
    sections = {"config": cfg.to_dict(), "seed": cfg.seed, "summary": summary.to_dict()}
    artifacts, objects = {}, {"table": retained, "summary": summary}

    fp = compute_fingerprint(retained)
    dump_json({**fp.to_dict(), "seed": cfg.seed}, out / "fingerprint.json")
    artifacts["fingerprint"] = "fingerprint.json"
    curves = {}
    for mode in ("turnout", "size"):
        c = cumulative_curve(retained, mode)
        curves[mode] = c
        name = f"cumulative_{mode}.csv"
        _write_csv(out / name, ["x", "cumulative_vote_share"], zip(c.x.tolist(), c.y.tolist()))
        artifacts[f"cumulative_{mode}"] = name
        dump_json({**c.to_dict(), "seed": cfg.seed}, out / f"cumulative_{mode}.json")
        artifacts[f"cumulative_{mode}_json"] = f"cumulative_{mode}.json"
    sections["cumulative"] = {
        m: {"final": c.final, "crossings_of_half": c.crossings(0.5).tolist(), "points": len(c.x)}
        for m, c in curves.items()
    }

    runners = {
        "stuffing": lambda: _stuffing_section(retained, cfg),
        "rigging": lambda: _rigging_section(retained, summary, cfg, out),
        "benford": lambda: _benford_section(retained, cfg),
        "assignment": lambda: _assignment_section(retained, cfg),
    }
    verdicts, errors = {}, {}
    for name in TESTS:
        if not cfg.tests.get(name, True):
            verdicts[name] = "not-run"
            continue
        try:
            section, signal, obj = runners[name]()
        except ForensicsError as e:
            log.error("%s test failed: %s", name, e)
            verdicts[name] = "not-run"
            errors[name] = f"{type(e).__name__}: {e}"
            continue
        sections[name] = section
        objects[name] = obj
        verdicts[name] = "signal" if signal else "no-signal"

    if "rigging" in objects:
        scores, curve, region, _ = objects["rigging"]
        _write_csv(out / "displacement.csv", ["p", "dv", "dt", "delta", "n_small", "lower", "upper"],
                   zip(curve.p.tolist(), curve.dv.tolist(), curve.dt.tolist(), curve.delta.tolist(),
                       curve.n_small.tolist(), region.lower.tolist(), region.upper.tolist()))
        artifacts["displacement"] = "displacement.csv"
        sfp = compute_fingerprint(scores, axes="standardized")
        dump_json({**sfp.to_dict(), "seed": cfg.seed}, out / "standardized_fingerprint.json")
        artifacts["standardized_fingerprint"] = "standardized_fingerprint.json"
        objects["standardized_fingerprint"] = sfp

    bundle = ReportBundle(sections, verdicts, errors, artifacts, objects)
    if cfg.plots:
        bundle.artifacts.update(_figures(bundle, fp, curves, out))
    dump_json(bundle.to_dict(), out / "report.json")
    dump_json({"created": _dt.datetime.now(_dt.timezone.utc).isoformat(), "version": __version__},
              out / "meta.json")
    return bundle


def _figures(bundle, fp, curves, out):
    from .plotting import emit_plot

    figs = {}
    emit_plot(fp, "heatmap", out / "fingerprint.svg")
    figs["fig_fingerprint"] = "fingerprint.svg"
    emit_plot(curves["turnout"], "line", out / "cumulative_turnout.svg")
    figs["fig_cumulative_turnout"] = "cumulative_turnout.svg"
    emit_plot(curves["size"], "line", out / "cumulative_size.svg")
    figs["fig_cumulative_size"] = "cumulative_size.svg"
    if "rigging" in bundle.objects:
        scores, curve, region, _ = bundle.objects["rigging"]
        emit_plot(bundle.objects["standardized_fingerprint"], "heatmap", out / "standardized_fingerprint.svg")
        figs["fig_standardized_fingerprint"] = "standardized_fingerprint.svg"
        emit_plot(small_large_fingerprints(scores), "contour", out / "standardized_contours.svg")
        figs["fig_standardized_contours"] = "standardized_contours.svg"
        emit_plot((curve, region), "line", out / "displacement.svg")
        figs["fig_displacement"] = "displacement.svg"
    return figs


def small_large_fingerprints(scores, p=10):
    """Standardized fingerprints of the smallest p% of stations and of the rest."""
    sN = np.sort(scores.N)
    small = scores.N <= nearest_rank_cutoff(sN, p)
    return {
        "small": compute_fingerprint(scores.subset(small), axes="standardized"),
        "large": compute_fingerprint(scores.subset(~small), axes="standardized"),
    }
