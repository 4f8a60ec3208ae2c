"""Command-line interface: ``elforensics <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .ingest import FormatConfig, ForensicsError, filter_stations, parse_results, summarize, write_results

log = logging.getLogger("elforensics")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for options whose default comes from the config."""

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--input", help="station results file (delimiter-separated, header row)")
    g.add_argument("--config", help="JSON pipeline config; command-line flags override it")
    g.add_argument("--seed", type=int, default=None, help="master random seed (default: 0)")
    g.add_argument("--min-electorate", type=int, default=None,
                   help="drop stations with fewer registered voters (default: 100)")
    g.add_argument("--out-dir", default=None, help="output directory (default: forensics_out)")
    g.add_argument("--delimiter", default=None, help="field delimiter of the input (default: ';')")
    g.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return p


def _config(args):
    from .report import PipelineConfig

    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if args.input is not None:
        cfg.input = args.input
    if args.seed is not None:
        cfg.seed = args.seed
    if args.min_electorate is not None:
        cfg.min_electorate = args.min_electorate
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.delimiter is not None:
        cfg.format = FormatConfig(args.delimiter, cfg.format.columns)
    return cfg


def _stations(cfg, filtered=True):
    if not cfg.input:
        raise ForensicsError("--input is required")
    path = Path(cfg.input)
    if not path.is_file():
        raise ForensicsError(f"input file not found: {path}")
    table = parse_results(path, cfg.format)
    if not filtered:
        return table, None
    return filter_stations(table, cfg.min_electorate)


def _out(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj, out, name):
    from .report import dump_json

    dump_json(obj, out / name)
    print(json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False)[:4000])


def cmd_ingest(args, cfg):
    table, excl = _stations(cfg)
    out = _out(cfg)
    write_results(table, out / "stations_filtered.csv", cfg.format)
    _emit({"stations_retained": len(table), "exclusion": excl.to_dict()}, out, "ingest.json")


def cmd_summarize(args, cfg):
    table, excl = _stations(cfg)
    _emit(summarize(table, excl).to_dict(), _out(cfg), "summary.json")


def cmd_fingerprint(args, cfg):
    from .fingerprint import compute_fingerprint, standardize_scores
    from .plotting import emit_plot
    from .report import dump_json

    table, _ = _stations(cfg)
    out = _out(cfg)
    bins = (args.bins, args.bins) if args.bins else None
    data = standardize_scores(table) if args.axes == "standardized" else table
    fp = compute_fingerprint(data, bins=bins, axes=args.axes)
    dump_json({**fp.to_dict(), "seed": cfg.seed}, out / f"fingerprint_{args.axes}.json")
    emit_plot(fp, "heatmap", out / f"fingerprint_{args.axes}.svg")
    print(f"{fp.total} stations binned, {fp.out_of_range} outside range -> {out}")


def cmd_stuffing(args, cfg):
    from .stuffing import FitConfig, fit_stuffing

    table, _ = _stations(cfg)
    d = {"seed": cfg.seed, **cfg.stuffing}
    for k in ("replicates", "objective", "bins"):
        if getattr(args, k) is not None:
            d[k] = getattr(args, k)
    fit = fit_stuffing(table, FitConfig.from_dict(d))
    _emit(fit.to_dict(), _out(cfg), "stuffing.json")


def cmd_rigging(args, cfg):
    from .report import _rigging_section, dump_json
    from .plotting import emit_plot

    if args.reference:
        cfg.rigging["reference"] = args.reference
    if args.baseline_elections:
        cfg.rigging["baseline_elections"] = args.baseline_elections
    table, excl = _stations(cfg)
    out = _out(cfg)
    section, signal, (scores, curve, region, _) = _rigging_section(table, summarize(table, excl), cfg, out)
    section["verdict"] = "signal" if signal else "no-signal"
    dump_json(section, out / "rigging.json")
    emit_plot((curve, region), "line", out / "displacement.svg")
    print(f"verdict: {section['verdict']}; above region at p = {section['exceed_p']}")
    if "province_ranking" in section:
        for e in section["province_ranking"]["entries"][:10]:
            print(f"  {e['province']}: mean delta {e['mean_delta']:.3f}, max {e['max_delta']:.3f}")


def cmd_benford(args, cfg):
    from .anomaly import benford_by_level

    table, _ = _stations(cfg)
    r = benford_by_level(table, args.level, args.min_value)
    _emit(r.to_dict(), _out(cfg), f"benford_{args.level}.json")


def cmd_assignment(args, cfg):
    from .anomaly import assignment_test

    table, _ = _stations(cfg)
    r = assignment_test(table, permutation=args.permutation, n_perm=args.n_perm, seed=cfg.seed)
    _emit(r.to_dict(), _out(cfg), "assignment.json")


def cmd_synth(args, cfg):
    from .synth import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec.from_file(args.spec) if args.spec else SyntheticSpec()
    if args.seed is not None:
        spec = spec.replace(seed=args.seed)
    e = generate_synthetic(spec)
    out = _out(cfg)
    path = Path(args.output) if args.output else out / "synthetic_stations.csv"
    write_results(e.table, path, cfg.format)
    print(f"{len(e.table)} stations -> {path}")
    if any(e.warnings.values()):
        print(f"rigging clamped: {e.warnings}")


def cmd_report(args, cfg):
    from .report import run_pipeline

    if args.no_plots:
        cfg.plots = False
    if args.reference:
        cfg.rigging["reference"] = args.reference
    for t in args.skip or []:
        cfg.tests[t] = False
    bundle = run_pipeline(cfg)
    for k, v in bundle.verdicts.items():
        print(f"{k:11s} {v}")
    for k, v in bundle.errors.items():
        print(f"error in {k}: {v}", file=sys.stderr)
    print(f"report -> {Path(cfg.out_dir) / 'report.json'}")


def cmd_plot(args, cfg):
    from .fingerprint import CumulativeCurve, Fingerprint
    from .plotting import emit_plot
    from .rigging import AcceptanceRegion, DisplacementCurve

    with open(args.artifact, encoding="utf-8") as fh:
        d = json.load(fh)
    if "cells" in d:
        art = Fingerprint.from_dict(d)
    elif "mode" in d:
        art = CumulativeCurve.from_dict(d)
    elif "curve" in d:
        art = (DisplacementCurve.from_dict(d["curve"]),
               AcceptanceRegion.from_dict(d["region"]) if d.get("region") else None)
    elif "delta" in d:
        art = DisplacementCurve.from_dict(d)
    else:
        raise ForensicsError(f"{args.artifact}: unrecognised artifact")
    if isinstance(art, tuple) and art[1] is None:
        art = art[0]
    out = Path(args.output) if args.output else _out(cfg) / (Path(args.artifact).stem + ".svg")
    emit_plot(art, args.kind, out)
    print(out)


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(
        prog="elforensics",
        description="Election forensics on polling-station results.",
        parents=[common],
        formatter_class=_Formatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help, description=help,
                           formatter_class=_Formatter)
        p.set_defaults(func=func)
        return p

    add("ingest", cmd_ingest, "parse, validate and filter a results file")
    add("summarize", cmd_summarize, "descriptive statistics of the filtered stations")
    p = add("fingerprint", cmd_fingerprint, "vote-turnout fingerprint (JSON + SVG)")
    p.add_argument("--axes", choices=["raw", "standardized"], default="raw",
                   help="vote/turnout rates or district-standardized scores")
    p.add_argument("--bins", type=int, default=None, help="bins per axis (default: 100 raw, 60 standardized)")
    p = add("stuffing", cmd_stuffing, "fit the ballot-stuffing model")
    p.add_argument("--replicates", type=int, default=None, help="replicate seeds (default: 10)")
    p.add_argument("--objective", choices=["joint", "vote"], default=None, help="histogram compared (default: joint)")
    p.add_argument("--bins", type=int, default=None, help="histogram bins per axis (default: 40)")
    p = add("rigging", cmd_rigging, "voter-rigging displacement test")
    p.add_argument("--reference", help="CSV of reference curves: election_id,p,delta")
    p.add_argument("--baseline-elections", type=int, default=None,
                   help="synthetic clean elections in the baseline when no reference file is given (default: 200)")
    p = add("benford", cmd_benford, "second-digit Benford test on 'Yes' counts")
    p.add_argument("--level", choices=["station", "village"], default="station",
                   help="test station counts or village sums")
    p.add_argument("--min-value", type=int, default=100, help="only counts >= this are tested")
    p = add("assignment", cmd_assignment, "within-village vote-assignment test")
    p.add_argument("--permutation", action="store_true",
                   help="Monte Carlo reassignment for villages with small variance")
    p.add_argument("--n-perm", type=int, default=1000, help="reassignments per village in permutation mode")
    p = add("synth", cmd_synth, "write a synthetic election in the input file format")
    p.add_argument("--spec", help="JSON synthetic-election spec")
    p.add_argument("--output", help="output file (default: <out-dir>/synthetic_stations.csv)")
    p = add("report", cmd_report, "run the full pipeline and write report.json plus figures")
    p.add_argument("--reference", help="CSV of reference displacement curves")
    p.add_argument("--skip", action="append", choices=["stuffing", "rigging", "benford", "assignment"],
                   help="leave a test out of the report (repeatable)")
    p.add_argument("--no-plots", action="store_true", help="skip the SVG figures")
    p = add("plot", cmd_plot, "render a saved fingerprint/curve JSON as SVG")
    p.add_argument("artifact", help="JSON artifact written by another command")
    p.add_argument("--kind", choices=["heatmap", "contour", "line"], required=True,
                   help="heatmap/contour for fingerprints, line for curves")
    p.add_argument("--output", help="SVG path (default: <out-dir>/<artifact>.svg)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except (ForensicsError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
