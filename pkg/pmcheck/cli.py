"""
Command-line entry point
Subcommands for trace checking, crash simulation, level hashing workloads,
state exploration and reporting

Exit codes:
    0 = success (check: no bugs found)
    1 = check found at least one bug
    2 = usage error
    3 = input error (unreadable file, malformed trace or graph spec, ...)
"""

import argparse
import json
import logging
import sys
from typing import IO, Callable, Dict, List, Optional, Sequence

from ml.rl.explorer import GraphSpec, Policy, compare_policies, load_graph_spec, run_exploration
from pmcheck import __version__
from pmcheck.config import Config
from pmcheck.logging_config import setup_logging
from pmem.crash_enum import always_consistent_factory, crash_points, fence_crash_points, sweep_crash_points
from pmem.errors import PMCheckError
from pmem.oracles import (
    BugReport,
    check_trace,
    render_bar_chart,
    reports_to_csv,
    reports_to_text,
    summarize,
    summary_to_dict,
)
from pmem.trace_model import load_trace, parse_trace, write_trace
from scripts.metrics_integration import metrics_collector, track_latency
from services.levelhash_recovery import RecoveryOracle
from services.levelhash_service import KnobTag, generate_workload, parse_knob

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BUGS = 1
EXIT_USAGE = 2
EXIT_INPUT = 3

FORMATS = ("json", "csv", "text")


def _add_format_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--format", choices=FORMATS, dest="format", help="Output format")
    for name in FORMATS:
        group.add_argument(f"--{name}", action="store_const", const=name, dest="format",
                           help=f"Shorthand for --format {name}")


def build_parser(config: Config) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmcheck",
        description="Persistent-memory crash-consistency toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, type=str.upper,
                        choices=("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"))
    parser.add_argument("--log-json", action="store_true", default=config.LOG_JSON,
                        help="Structured JSON log records on stderr")
    parser.add_argument("--metrics-out", metavar="PATH",
                        help="Save command latency and memory records as JSON")

    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("check", help="Run the bug oracles over a trace")
    p.add_argument("trace", help="JSON-lines trace file")
    _add_format_flags(p)
    p.set_defaults(handler=cmd_check)

    p = sub.add_parser("crash-sim", help="Enumerate and check crash images")
    p.add_argument("trace", help="JSON-lines trace file")
    p.add_argument("--at", type=int, action="append", metavar="N",
                   help="Crash before event N (repeatable); defaults to the trace's crash markers")
    p.add_argument("--all-fences", action="store_true", help="Crash before every fence")
    p.add_argument("--cap", type=int, default=config.CRASH_CAP,
                   help="Refuse crash points with more pending lines than this")
    p.add_argument("--checker", choices=("levelhash", "none"), default="levelhash")
    p.add_argument("--workers", type=int, default=config.WORKERS)
    p.set_defaults(handler=cmd_crash_sim)

    p = sub.add_parser("levelhash", help="Generate a level hashing workload trace")
    p.add_argument("--ops", type=int, required=True, help="Number of operations")
    p.add_argument("--seed", type=int, default=config.SEED)
    p.add_argument("--knob", default=KnobTag.NONE.value, choices=[t.value for t in KnobTag])
    p.add_argument("--level-exponent", type=int, default=config.LEVEL_EXPONENT)
    p.add_argument("--no-movement", dest="movement", action="store_false",
                   help="Resize instead of attempting one-step movement")
    p.add_argument("--out", metavar="PATH", help="Trace destination (stdout by default)")
    p.set_defaults(handler=cmd_levelhash)

    p = sub.add_parser("explore", help="Explore a seeded workload tree under one policy")
    _add_exploration_flags(p, config)
    p.add_argument("--policy", choices=[policy.value for policy in Policy], default=Policy.QLEARN.value)
    p.add_argument("--out", metavar="PATH", help="Result destination (stdout by default)")
    p.set_defaults(handler=cmd_explore)

    p = sub.add_parser("report", help="Summarize bug reports as a bar chart")
    p.add_argument("input", help="Trace, or the JSON report array produced by check")
    _add_format_flags(p)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("compare", help="Run every exploration policy on the same tree")
    _add_exploration_flags(p, config)
    p.add_argument("--workers", type=int, default=config.WORKERS)
    p.add_argument("--plot", metavar="PNG", help="Save the discovery curves as a chart")
    p.add_argument("--out", metavar="PATH", help="Result destination (stdout by default)")
    p.set_defaults(handler=cmd_compare)

    return parser


def _add_exploration_flags(parser: argparse.ArgumentParser, config: Config) -> None:
    parser.add_argument("--budget", type=int, required=True, help="Maximum expansions")
    parser.add_argument("--seed", type=int, default=config.SEED)
    parser.add_argument("--graph", metavar="JSON", help="Workload tree spec (defaults apply when omitted)")
    parser.add_argument("--alpha", type=float, default=config.QL_ALPHA)
    parser.add_argument("--gamma", type=float, default=config.QL_GAMMA)
    parser.add_argument("--epsilon", type=float, default=config.QL_EPSILON)
    parser.add_argument("--max-depth", type=int, default=config.MAX_DEPTH)


def _emit(text: str, out: IO[str], path: Optional[str] = None) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        logger.info(f"✅ Wrote {path}")
    else:
        out.write(text)


def _format_reports(reports: Sequence[BugReport], fmt: str) -> str:
    if fmt == "csv":
        return reports_to_csv(reports)
    if fmt == "text":
        return reports_to_text(reports)
    return json.dumps([r.to_dict() for r in reports], indent=2) + "\n"


@track_latency("check")
def cmd_check(args: argparse.Namespace, config: Config, out: IO[str]) -> int:
    events, regions = load_trace(args.trace)
    result = check_trace(events, regions)
    _emit(_format_reports(result.reports, args.format or "json"), out)
    logger.info(f"📊 {result.bug_count} unique bugs in {args.trace}")
    return EXIT_BUGS if result.reports else EXIT_OK


@track_latency("crash-sim")
def cmd_crash_sim(args: argparse.Namespace, config: Config, out: IO[str]) -> int:
    events, regions = load_trace(args.trace)
    points: List[int] = list(args.at or [])
    if args.all_fences:
        points.extend(fence_crash_points(events))
    if not args.at and not args.all_fences:
        points = crash_points(events)
    if not points:
        logger.warning(f"⚠️ No crash points in {args.trace}, crashing at the end of the trace")
        points = [len(events)]

    factory = RecoveryOracle(events) if args.checker == "levelhash" else always_consistent_factory
    sweep = sweep_crash_points(events, points, factory, regions, cap=args.cap, workers=max(1, args.workers))

    for point, result in sweep:
        pending_k = len(result.results[-1][0].included_pending) if result.results else 0
        record = {
            "crash_event": point,
            "pending_k": pending_k,
            "images": [
                {"included_pending": list(image.included_pending), "verdict": verdict.to_dict()}
                for image, verdict in result.results
            ],
            "summary": dict(sorted(result.summary.items())),
        }
        out.write(json.dumps(record, separators=(",", ":")) + "\n")
    return EXIT_OK


@track_latency("levelhash")
def cmd_levelhash(args: argparse.Namespace, config: Config, out: IO[str]) -> int:
    knob = parse_knob(args.knob)
    workload = generate_workload(args.ops, args.seed, knob, args.level_exponent, args.movement)
    _emit(write_trace(workload.events, workload.regions), out, args.out)
    return EXIT_OK


def _graph_spec(args: argparse.Namespace) -> GraphSpec:
    if args.graph:
        return load_graph_spec(args.graph, args.max_depth)
    return GraphSpec.from_dict({}, args.max_depth)


@track_latency("explore")
def cmd_explore(args: argparse.Namespace, config: Config, out: IO[str]) -> int:
    spec = _graph_spec(args)
    qconfig = config.qconfig(seed=args.seed, alpha=args.alpha, gamma=args.gamma, epsilon=args.epsilon)
    result = run_exploration(spec, Policy(args.policy), args.budget, qconfig,
                             config.REWARD_BUG, config.REWARD_SITE)
    _emit(result.to_json() + "\n", out, args.out)
    return EXIT_OK


@track_latency("compare")
def cmd_compare(args: argparse.Namespace, config: Config, out: IO[str]) -> int:
    spec = _graph_spec(args)
    qconfig = config.qconfig(seed=args.seed, alpha=args.alpha, gamma=args.gamma, epsilon=args.epsilon)
    results = compare_policies(spec, args.budget, qconfig, workers=max(1, args.workers),
                               reward_bug=config.REWARD_BUG, reward_site=config.REWARD_SITE)
    payload = [results[policy.value].to_dict() for policy in Policy]
    _emit(json.dumps(payload, indent=2) + "\n", out, args.out)

    if args.plot:
        # matplotlib is only needed for plotting
        from scripts.performance_metrics import MetricsVisualizer

        visualizer = MetricsVisualizer()
        fig = visualizer.create_discovery_chart({name: r.discovery_curve for name, r in results.items()})
        visualizer.save_figure(fig, args.plot)
    return EXIT_OK


def _load_reports(path: str) -> List[BugReport]:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    if text.lstrip().startswith("["):
        return [BugReport.from_dict(item) for item in json.loads(text)]
    events, regions = parse_trace(text)
    return check_trace(events, regions).reports


@track_latency("report")
def cmd_report(args: argparse.Namespace, config: Config, out: IO[str]) -> int:
    reports = _load_reports(args.input)
    summary = summarize(reports)
    fmt = args.format or "text"
    if fmt == "json":
        out.write(json.dumps(summary_to_dict(summary), indent=2) + "\n")
    elif fmt == "csv":
        out.write(reports_to_csv(reports))
    else:
        out.write(render_bar_chart(summary))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None, out: Optional[IO[str]] = None,
         environ: Optional[Dict[str, str]] = None) -> int:
    """
    Run one subcommand

    Args:
        argv: arguments without the program name (sys.argv[1:] by default)
        out: result stream (stdout by default)
        environ: environment for configuration (os.environ by default)

    Returns:
        Process exit code
    """
    out = out if out is not None else sys.stdout
    config = Config(environ)
    try:
        config.validate()
    except PMCheckError as e:
        print(f"pmcheck: {e}", file=sys.stderr)
        return EXIT_USAGE

    parser = build_parser(config)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help and --version exit 0, usage errors exit 2
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    setup_logging(args.log_level, args.log_json)
    handler: Callable[[argparse.Namespace, Config, IO[str]], int] = args.handler
    try:
        code = handler(args, config, out)
    except (PMCheckError, OSError, ValueError) as e:
        # ValueError covers json.JSONDecodeError and bad CLI values
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"pmcheck {args.command}: {e}", file=sys.stderr)
        code = EXIT_INPUT

    if args.metrics_out:
        metrics_collector.save_metrics(args.metrics_out)
    return code


if __name__ == "__main__":
    sys.exit(main())
