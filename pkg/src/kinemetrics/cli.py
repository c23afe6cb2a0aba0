"""Command-line entry point: ``kinemetrics <command> ...``.

Every failure from the toolkit maps to the exit code of its error family;
outputs are written to temporary files and renamed into place, so a failed
run never leaves half-written results behind.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .calibration import pivot_calibrate, reference_calibrate
from .errors import (
    DegenerateVariance,
    EmptyTrack,
    InvalidConfig,
    IoFailure,
    KinemetricsError,
    MissingFile,
    NoPairs,
    StatsError,
    TooFewGroups,
)
from .io import capture, files
from .metrics import DEFAULT_SMOOTH_PASSES, DEFAULT_SMOOTH_WINDOW
from .pipeline import AnalysisSettings, analyze_trial, summary_text
from .pose import RigidTransform
from .stats import DEFAULT_ALPHA, GroupSample, aggregate_participants, one_way_anova, tukey_hsd
from .sync import INSTRUMENTS

log = logging.getLogger("kinemetrics")

PROG = "kinemetrics"
HELP_WIDTH = 100
UNITS = {
    "t_usage": "s", "t_track": "s", "t_capt": "s", "pct_captured": "",
    "avg_velocity": "mm/s", "avg_acceleration": "mm/s²", "avg_jerk": "mm/s³",
    "path_length": "mm", "npl_annotated": "mm/s", "npl_captured": "mm/s",
    "asd": "mm", "bit_usage": "s", "bit_track": "s", "bit_capt": "s",
    "coord_idx": "", "efficiency_idx": "",
}


def _setup_logging() -> None:
    level = os.environ.get("KINEMETRICS_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    warnings.simplefilter("always", files.AnnotationOverlapWarning)


# ---------------------------------------------------------------------------
# calibrate


def _body_track(log_: files.PoseLog, body: str | None, path):
    if body is None:
        if len(log_.tracks) != 1:
            raise InvalidConfig(f"{path} holds {sorted(log_.tracks)}; pick one with --body")
        body = next(iter(log_.tracks))
    if body not in log_.tracks:
        raise EmptyTrack(f"{path}: no samples of body {body!r}")
    return log_.tracks[body]


def cmd_calibrate(args) -> int:
    pose_log = files.read_pose_log(args.log)
    if args.kind == "pivot":
        tr = _body_track(pose_log, args.body, args.log)
        samples = [RigidTransform(q, p) for q, p, v in zip(tr.q, tr.p, tr.visible) if v]
        cal = pivot_calibrate(samples)
        files.write_pivot_calibration(args.out, cal, tr.body_id)
        print(f"pivot calibration of {tr.body_id}: {cal.sample_count} samples")
        print(f"tip offset  {' '.join(f'{v:.4f}' for v in cal.tip_offset)} mm")
        print(f"pivot point {' '.join(f'{v:.4f}' for v in cal.pivot_point)} mm")
        print(f"rms residual {cal.rms_residual:.4f} mm, rotation coverage {cal.rotation_coverage_deg:.1f} deg")
    else:
        right = _body_track(pose_log, args.right_body, args.log)
        left = _body_track(pose_log, args.left_body, args.log)
        lt = {int(t): (q, p) for t, q, p, v in zip(left.t, left.q, left.p, left.visible) if v}
        pairs = [
            (RigidTransform(q, p), RigidTransform(*lt[int(t)]))
            for t, q, p, v in zip(right.t, right.q, right.p, right.visible)
            if v and int(t) in lt
        ]
        if not pairs:
            raise NoPairs(f"{args.log}: {right.body_id} and {left.body_id} are never visible at the same time")
        cal = reference_calibrate(pairs)
        files.write_reference_calibration(args.out, cal)
        l2r = cal.left_to_right
        print(f"reference calibration: {cal.pair_count} pairs")
        print(f"left-to-right rotation (w x y z) {' '.join(f'{v:.6f}' for v in l2r.rotation)}")
        print(f"left-to-right translation {' '.join(f'{v:.4f}' for v in l2r.translation)} mm")
        print(f"rms residual {cal.rms_residual:.4f} mm")
    return 0


# ---------------------------------------------------------------------------
# capture


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def cmd_capture(args) -> int:
    sources = []
    try:
        for p in args.input or []:
            try:
                sources.append(open(p, "rb"))
            except FileNotFoundError:
                raise MissingFile(p) from None
            except OSError as e:
                raise IoFailure(f"cannot open {p}: {e}") from e
        for host, port in args.connect or []:
            sources.append(capture.connect(host, port))
        summary = capture.capture_stream(sources, args.session, args.camera)
    finally:
        for s in sources:
            s.close()
    print(f"session {args.session}: {sum(summary.counts.values())} records, "
          f"{summary.dropped} dropped, {summary.out_of_order} out of order, {summary.keepalives} keepalives")
    for body in sorted(summary.counts):
        print(f"  {body}: {summary.counts[body]} records, visibility {summary.visibility_ratio(body):.3f}")
    return 0


# ---------------------------------------------------------------------------
# analyze


def _settings(args) -> AnalysisSettings:
    overrides = {
        "rate_hz": args.rate_hz,
        "gap_threshold_ms": args.gap_ms,
        "ref_match_ms": args.ref_match_ms,
        "smooth_window": args.smooth_window,
        "smooth_passes": args.smooth_passes,
        "contact_threshold_mm": args.contact_threshold_mm,
        "contact_hold_ms": args.contact_hold_ms,
        "contact_pair_ms": args.contact_pair_ms,
        "asd_pair_ms": args.asd_pair_ms,
        "asd_mode": args.asd_mode,
        "coord_denominator": args.coord_denominator,
    }
    return AnalysisSettings(**{k: v for k, v in overrides.items() if v is not None})


def _analyze_one(path: str, settings: AnalysisSettings):
    try:
        analysis = analyze_trial(files.load_manifest(path), settings)
    except KinemetricsError as e:
        e.where = path
        raise
    return analysis.report, summary_text(analysis)


def _run_parallel(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*items)))


def cmd_analyze(args) -> int:
    settings = _settings(args)
    results = _run_parallel(_analyze_one, [(m, settings) for m in args.manifests], args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files.write_report(out / "report.csv", [r for r, _ in results])
    files.atomic_write_text(out / "summary.txt", "\n".join(s for _, s in results))
    files.dump_json(out / "settings.json", {"schema": files.SCHEMA, "kind": "analysis-settings", **settings.to_dict()})
    for _, s in results:
        print(s)
    print(f"wrote {out / 'report.csv'} ({len(results)} trials)")
    return 0


# ---------------------------------------------------------------------------
# compare


def _metric_selection(rows: list[dict], spec: list[str] | None) -> list[tuple[str, str]]:
    subjects = {"instrument": [], "pair": []}
    for r in rows:
        if r["subject"] not in subjects[r["row_type"]]:
            subjects[r["row_type"]].append(r["subject"])
    rank = {n: i for i, n in enumerate(INSTRUMENTS)}
    subjects["instrument"].sort(key=lambda s: rank.get(s, len(rank)))
    subjects["pair"].sort()
    if spec is None:
        return [(m, s) for s in subjects["instrument"] for m in files.INSTRUMENT_METRICS] + [
            (m, s) for s in subjects["pair"] for m in files.PAIR_METRICS
        ]
    out = []
    for item in spec:
        metric, _, subject = item.partition(":")
        if metric not in files.METRIC_COLUMNS:
            raise InvalidConfig(f"unknown metric {metric!r}; choose from {', '.join(files.METRIC_COLUMNS)}")
        kind = "instrument" if metric in files.INSTRUMENT_METRICS else "pair"
        chosen = [subject] if subject else subjects[kind]
        for s in chosen:
            if s not in subjects[kind]:
                raise InvalidConfig(f"no {kind} rows for {s!r}")
            out.append((metric, s))
    return out


def _samples(rows: list[dict], metric: str, subject: str) -> list[GroupSample]:
    per = [
        GroupSample(r["group"], r["participant"], (r[metric],))
        for r in rows
        if r["subject"] == subject and r[metric] is not None
    ]
    return aggregate_participants(per)


def _compare_one(rows, metric: str, subject: str, alpha: float):
    samples = _samples(rows, metric, subject)
    table = one_way_anova(samples)
    return table, tukey_hsd(samples, table, alpha)


def _p_text(p: float) -> str:
    return "p < 0.001" if p < 0.001 else f"p = {p:.3f}"


def _num(x: float) -> str:
    return f"{x:.4g}"


def compare_text(metric: str, subject: str, table, comps, alpha: float) -> str:
    unit = UNITS.get(metric, "")
    sep = " " if unit else ""
    lines = [
        f"{subject} {metric}: F({table.df_between}, {table.df_within}) = {table.F:.3f}, {_p_text(table.p)}"
        + ("  (significant)" if table.p < alpha else "")
    ]
    for c in comps:
        mark = " *" if c.p_adj < alpha else ""
        lines.append(
            f"  {c.group_a} vs {c.group_b}: mean difference = {_num(c.mean_diff)}{sep}{unit} "
            f"[CI: {_num(c.ci_low)}, {_num(c.ci_high)}], {_p_text(c.p_adj)}{mark}"
        )
    return "\n".join(lines)


def cmd_compare(args) -> int:
    rows = [r for p in args.reports for r in files.read_report(p)]
    groups = sorted({r["group"] for r in rows})
    if len(groups) < 2:
        raise TooFewGroups(f"comparison needs at least 2 groups, the reports hold {groups or 'none'}")
    explicit = args.metrics is not None
    selection = _metric_selection(rows, args.metrics)
    anova_rows, tukey_rows, text = [], [], []
    for metric, subject in selection:
        try:
            table, comps = _compare_one(rows, metric, subject, args.alpha)
        except StatsError as e:
            if explicit:
                e.where = f"{subject} {metric}"
                raise
            kind = "degenerate" if isinstance(e, DegenerateVariance) else "skipped"
            log.warning("%s %s %s: %s", subject, metric, kind, e)
            continue
        anova_rows.append((metric, subject, table))
        tukey_rows += [(metric, subject, c) for c in comps]
        text.append(compare_text(metric, subject, table, comps, args.alpha))
    if not anova_rows:
        raise TooFewGroups("no metric has at least 2 groups with 2 or more participants")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files.atomic_write_text(out / "anova.csv", files.format_anova(anova_rows))
    files.atomic_write_text(out / "tukey.csv", files.format_tukey(tukey_rows))
    report = "\n".join(text) + "\n"
    files.atomic_write_text(out / "comparison.txt", report)
    print(report, end="")
    return 0


# ---------------------------------------------------------------------------
# simulate


def _sim_overrides(args) -> dict:
    o = {}
    if args.noise is not None:
        o["noise_sigma_mm"] = args.noise
    if args.dropout is not None:
        o["dropout_rate"] = args.dropout
    return o


def _simulate_one(cfg, out_dir: str, wire: bool):
    from . import sim

    trial = sim.simulate_trial(cfg)
    sim.write_trial(trial, out_dir, wire=wire)
    return trial.ground_truth.report


def cmd_simulate(args) -> int:
    from dataclasses import replace

    from . import sim

    out = Path(args.out)
    if args.preset:
        if args.config:
            raise InvalidConfig("--config and --preset are mutually exclusive")
        cfgs = sim.cohort_configs(args.preset, args.seed, **_sim_overrides(args))
        jobs = []
        for cfg in cfgs:
            name = f"{cfg.participant}-t{cfg.trial}"
            jobs.append((cfg, str(out / name), args.wire))
        reports = _run_parallel(_simulate_one, jobs, args.jobs)
        files.write_report(out / "ground_truth.csv", reports)
        files.atomic_write_text(out / "manifests.txt", "".join(f"{Path(d).name}/manifest.json\n" for _, d, _ in jobs))
        print(f"wrote {len(cfgs)} trials of preset {args.preset} to {out}")
        return 0

    if args.config:
        cfg = sim.load_config(args.config)
        overrides = _sim_overrides(args)
        if args.seed_given:
            overrides["seed"] = args.seed
        if overrides:
            cfg = replace(cfg, **overrides)
            cfg.validate()
    else:
        cfg = sim.default_config(args.seed, **_sim_overrides(args))
    if args.write_config:
        sim.save_config(args.write_config, cfg)
    trial = sim.simulate_trial(cfg)
    sim.write_trial(trial, out, wire=args.wire)
    gt = trial.ground_truth
    print(f"simulated {cfg.participant} ({cfg.group}) trial {cfg.trial}, seed {cfg.seed}, {cfg.duration_s:g} s")
    print(f"injected contact at {gt.contact_time_ns / 1e9:.3f} s, sync offset {gt.sync_offset_ns / 1e9:.3f} s")
    for name, m in gt.report.instruments.items():
        pct = "undefined" if m.time.pct_captured is None else f"{100 * m.time.pct_captured:.1f}%"
        print(f"  {name}: usage {m.time.t_usage:.2f} s, captured {pct}, path {m.motion.path_length:.1f} mm")
    print(f"wrote {out / 'manifest.json'}")
    return 0


# ---------------------------------------------------------------------------
# docs


def docs_markdown(parser: argparse.ArgumentParser) -> str:
    out = [
        "# kinemetrics command reference",
        "",
        "Generated by `kinemetrics docs`. Set `KINEMETRICS_LOG` (DEBUG, INFO, WARNING, ERROR) to change log verbosity.",
        "",
        "## Exit codes",
        "",
        "| code | meaning |",
        "|---|---|",
    ]
    for code, name in _exit_codes():
        out.append(f"| {code} | {name} |")
    out += ["", "## kinemetrics", "", "```", parser.format_help().rstrip(), "```"]
    for name, sub in _subparsers(parser).items():
        out += ["", f"## kinemetrics {name}", "", "```", sub.format_help().rstrip(), "```"]
        for sname, ssub in _subparsers(sub).items():
            out += ["", f"### kinemetrics {name} {sname}", "", "```", ssub.format_help().rstrip(), "```"]
    return "\n".join(out) + "\n"


def _subparsers(parser: argparse.ArgumentParser) -> dict:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def _exit_codes() -> list[tuple[int, str]]:
    from .io import wire  # noqa: F401  registers the wire error family

    seen = {0: "success", 2: "usage error (bad command-line arguments)"}

    def walk(cls):
        seen.setdefault(cls.exit_code, cls.__name__)
        for sub in sorted(cls.__subclasses__(), key=lambda c: c.__name__):
            walk(sub)

    walk(KinemetricsError)
    return sorted(seen.items())


def cmd_docs(args) -> int:
    text = docs_markdown(build_parser())
    if args.out == "-":
        print(text, end="")
    else:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        files.atomic_write_text(args.out, text)
    return 0


# ---------------------------------------------------------------------------
# parser


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH, max_help_position=36)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog=PROG,
        description="Kinematic metrics from optically tracked surgical instruments.",
        formatter_class=_formatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_, fn):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=_formatter)
        sp.set_defaults(func=fn)
        return sp

    cal = add("calibrate", "estimate a calibration artifact from a recorded pose log", cmd_calibrate)
    csub = cal.add_subparsers(dest="kind", required=True, metavar="KIND")
    piv = csub.add_parser("pivot", help="tip offset from a pivoting recording", formatter_class=_formatter,
                          description="Estimate the tool tip offset from a recording of the tool pivoting about its tip.")
    piv.add_argument("log", help="pose log of the pivoting tool")
    piv.add_argument("--out", required=True, help="calibration document to write (JSON)")
    piv.add_argument("--body", help="body id to use when the log holds several")
    ref = csub.add_parser("reference", help="left-to-right reference transform", formatter_class=_formatter,
                          description="Estimate the left-to-right reference transform from a log in which one camera "
                                      "sees both reference markers; samples are paired by identical timestamps.")
    ref.add_argument("log", help="pose log holding both reference bodies")
    ref.add_argument("--out", required=True, help="calibration document to write (JSON)")
    ref.add_argument("--right-body", default="ref-right", help="body id of the right reference (default: %(default)s)")
    ref.add_argument("--left-body", default="ref-left", help="body id of the left reference (default: %(default)s)")

    cap = add("capture", "record live pose streams into pose logs", cmd_capture)
    src = cap.add_argument_group("sources (at least one; several are read concurrently)")
    src.add_argument("--input", action="append", metavar="FILE", help="recorded wire stream file")
    src.add_argument("--connect", action="append", type=_host_port, metavar="HOST:PORT", help="TCP stream to read")
    cap.add_argument("--session", required=True, help="session folder for pose logs and summary.json")
    cap.add_argument("--camera", default="", help="camera id written into every log header")

    an = add("analyze", "compute the metrics report of one or more trials", cmd_analyze)
    an.add_argument("manifests", nargs="+", metavar="MANIFEST", help="trial manifest (JSON)")
    an.add_argument("--out", required=True, help="output folder for report.csv, summary.txt and settings.json")
    an.add_argument("--jobs", type=int, default=1, help="trials analysed in parallel (default: %(default)s)")
    th = an.add_argument_group("threshold overrides")
    th.add_argument("--rate-hz", type=float, help="resampling rate (default 100)")
    th.add_argument("--gap-ms", type=float, help="longest gap bridged within a tracked interval (default 150)")
    th.add_argument("--ref-match-ms", type=float, help="reference sample matching window (default 50)")
    th.add_argument("--smooth-window", type=int, help=f"moving-average window, odd (default {DEFAULT_SMOOTH_WINDOW})")
    th.add_argument("--smooth-passes", type=int, help=f"moving-average passes (default {DEFAULT_SMOOTH_PASSES})")
    th.add_argument("--contact-threshold-mm", type=float, help="tip distance counted as contact (default 5)")
    th.add_argument("--contact-hold-ms", type=float, help="minimum contact duration (default 500)")
    th.add_argument("--contact-pair-ms", type=float, help="sample pairing window for contact (default 20)")
    th.add_argument("--asd-pair-ms", type=float, help="sample pairing window for separation distance (default 20)")
    th.add_argument("--asd-mode", choices=("capt", "track"), help="separation distance over captured or tracked time")
    th.add_argument("--coord-denominator", choices=("total", "alone"), help="coordination index denominator")

    cmp_ = add("compare", "group statistics over metrics reports", cmd_compare)
    cmp_.add_argument("reports", nargs="+", metavar="REPORT", help="metrics report table (report.csv)")
    cmp_.add_argument("--out", required=True, help="output folder for anova.csv, tukey.csv and comparison.txt")
    cmp_.add_argument("--metrics", nargs="+", metavar="METRIC[:SUBJECT]",
                      help="metrics to compare, optionally for one instrument or pair (default: all)")
    cmp_.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="significance level (default: %(default)s)")

    si = add("simulate", "generate synthetic trials with ground truth", cmd_simulate)
    si.add_argument("--out", required=True, help="output folder")
    si.add_argument("--config", help="simulation config (JSON); default: built-in trial")
    si.add_argument("--preset", choices=sorted(_presets()), help="generate a whole synthetic cohort")
    si.add_argument("--seed", type=int, help="random seed (default 0)")
    si.add_argument("--noise", type=float, help="position noise sigma in mm")
    si.add_argument("--dropout", type=float, help="fraction of tool frames lost to occlusion")
    si.add_argument("--wire", action="store_true", help="also write the binary wire stream of each camera")
    si.add_argument("--write-config", metavar="PATH", help="save the resolved config of a single trial")
    si.add_argument("--jobs", type=int, default=1, help="cohort trials generated in parallel (default: %(default)s)")

    dc = add("docs", "write this command reference as Markdown", cmd_docs)
    dc.add_argument("--out", default="-", help="output file, '-' for stdout (default: %(default)s)")
    return p


def _presets():
    from .sim import COHORT_PRESETS

    return COHORT_PRESETS


def _validate(args, parser) -> None:
    if args.command == "capture" and not (args.input or args.connect):
        parser.error("capture needs --input or --connect")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    if args.command == "compare" and not 0 < args.alpha < 1:
        parser.error("--alpha must lie in (0, 1)")
    if args.command == "simulate":
        args.seed_given = args.seed is not None
        if args.seed is None:
            args.seed = 0


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(args, parser)
    try:
        return args.func(args)
    except KinemetricsError as e:
        stage = getattr(e, "stage", None)
        subject = getattr(e, "where", None)
        prefix = f"{subject}: " if subject else ""
        where = f" in stage {stage}" if stage else ""
        print(f"{PROG} {args.command}: {prefix}{type(e).__name__}{where}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
