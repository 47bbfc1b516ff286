import argparse
import contextlib
import logging
import sys
from collections.abc import Sequence
from typing import Any, NoReturn

import numpy as np

from derand.applications import (Graph, SetSystem, partition_yes_no,
                                 sample_graph_neighbors, sample_sets)
from derand.baselines import (monte_carlo_round, randomized_walk,
                              sequential_conditional_fix)
from derand.config import ConstantProfile, FixingConfig
from derand.error import DerandError, InvalidArgument
from derand.instances import format_vector, parse_instance, parse_vector
from derand.integral_rounding import even_granularity, round_probabilities_to_grid
from derand.matrix import ConstraintMatrix
from derand.report import RunReport, read_report, write_report
from derand.runner import FixMode, run_fix, scaled_delta

logger = logging.getLogger(__name__)

#: Relative tolerance when comparing recomputed deviations with a report
VERIFY_TOLERANCE = 1e-9

class CommandParser (argparse.ArgumentParser):
    """
    Argument parser raising :class:`InvalidArgument` instead of exiting.
    """
    def error (self, message: str) -> NoReturn:
        raise InvalidArgument(f"{self.prog}: {message}")

def _add_common (parser: argparse.ArgumentParser, k: bool = True):
    parser.add_argument("instance", type=str, help="Instance file")
    if k:
        parser.add_argument("--k", type=int, default=64, help="Walk granularity")

    parser.add_argument(
        "--profile", type=str, default=ConstantProfile.PRACTICAL.value,
        choices=[profile.value for profile in ConstantProfile], help="Constant profile"
    )
    parser.add_argument("--threads", type=int, default=1, help="Seed search threads")
    parser.add_argument(
        "--early-exit", action="store_true", help="Stop the walk once nothing moves"
    )
    parser.add_argument(
        "--output", type=str, default="-", help="JSON report file, standard output by default"
    )
    parser.add_argument(
        "--vector", type=str, default="-", help="Result vector file, standard output by default"
    )
    parser.add_argument(
        "--strict", action="store_true", help="Exit with status 2 when some row is bad"
    )
    parser.add_argument("--timing", action="store_true", help="Record the wall time")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More logging")

def _add_probabilities (parser: argparse.ArgumentParser, deltas: bool = True):
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--p", type=float, default=0.5, help="Uniform probability")
    group.add_argument("--p-file", type=str, help="One probability per column")

    if deltas:
        group = parser.add_mutually_exclusive_group()
        group.add_argument("--delta-file", type=str, help="One deviation bound per row")
        group.add_argument(
            "--delta-scale", type=float, help="Bounds Delta_i = scale * sum_j a_ij p_j"
        )

def build_parser () -> CommandParser:
    parser = CommandParser(prog="derand", description="Deterministic dependent rounding")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CommandParser)

    fix = commands.add_parser("fix", help="Round probabilities against a constraint matrix")
    _add_common(fix)
    _add_probabilities(fix)
    fix.add_argument(
        "--mode", type=str, default=FixMode.CHERNOFF.value,
        choices=[mode.value for mode in FixMode], help="Rounding guarantee"
    )
    fix.add_argument("--trace", type=str, help="Line-delimited walk step records")

    samplers = (("sample-sets", "Sample a set system"), ("sample-graph", "Sample a graph"))
    for name, summary in samplers:
        sample = commands.add_parser(name, help=summary)
        _add_common(sample)
        sample.add_argument("--p", type=float, default=0.5, help="Sampling rate")
        sample.add_argument("--epsilon", type=float, default=0.3, help="Window half-width")
        if name == "sample-graph":
            sample.add_argument("--threshold", type=int, help="Minimum constrained degree")

    partition = commands.add_parser("partition", help="Split elements into YES, NO and MAYBE")
    _add_common(partition)

    baseline = commands.add_parser("baseline", help="Randomized or sequential reference")
    _add_common(baseline)
    _add_probabilities(baseline)
    baseline.add_argument(
        "--method", type=str, default="monte-carlo", choices=["monte-carlo", "walk", "sequential"]
    )
    baseline.add_argument("--seed", type=int, default=0, help="Generator seed")

    verify = commands.add_parser("verify", help="Recompute deviations of an output vector")
    _add_common(verify, k=False)
    _add_probabilities(verify)
    verify.add_argument("--q-file", type=str, required=True, help="Vector to check")
    verify.add_argument("--against", type=str, help="Report whose rows are cross-checked")

    serve = commands.add_parser("serve", help="Serve rounding requests over HTTP")
    serve.add_argument(
        "--profile", type=str, default=ConstantProfile.PRACTICAL.value,
        choices=[profile.value for profile in ConstantProfile]
    )
    serve.add_argument("--threads", type=int, default=1)
    serve.add_argument("--host", type=str, default="127.0.0.1", help="App host")
    serve.add_argument("--port", type=int, default=8000, help="App port")
    serve.add_argument("-v", "--verbose", action="count", default=0)

    return parser

def _config (args: argparse.Namespace) -> FixingConfig:
    return FixingConfig.for_profile(
        args.profile, threads=args.threads, early_exit=getattr(args, "early_exit", False)
    )

def _matrix (instance: Any) -> ConstraintMatrix:
    if isinstance(instance, SetSystem):
        return instance.to_matrix()

    if not isinstance(instance, ConstraintMatrix):
        raise InvalidArgument(f"Expected a matrix or a set system, got {type(instance).__name__}")

    return instance

def _expect (instance: Any, kind: type) -> Any:
    if not isinstance(instance, kind):
        raise InvalidArgument(f"Expected a {kind.__name__} instance, got {type(instance).__name__}")

    return instance

def _probability_vector (args: argparse.Namespace, n: int) -> np.ndarray:
    if args.p_file:
        return parse_vector(args.p_file, n)

    return np.full(n, args.p)

def _delta_vector (args: argparse.Namespace, A: ConstraintMatrix, p: np.ndarray) -> np.ndarray:
    if args.delta_file:
        return parse_vector(args.delta_file, A.m)

    if args.delta_scale is None:
        raise InvalidArgument("Give --delta-file or --delta-scale")

    return scaled_delta(A, p, args.delta_scale)

def _write_vector (values: Sequence[Any] | np.ndarray, destination: str):
    text = values if isinstance(values, str) else format_vector(np.asarray(values))

    if destination == "-":
        sys.stdout.write(text)
        return

    with open(destination, "w", encoding="utf-8") as handle:
        handle.write(text)

def _run_fix (args: argparse.Namespace) -> tuple[Any, int]:
    config = _config(args)
    A = _matrix(parse_instance(args.instance))
    p = _probability_vector(args, A.n)
    delta = _delta_vector(args, A, p)

    with contextlib.ExitStack() as stack:
        trace = None
        if args.trace:
            stream = stack.enter_context(open(args.trace, "w", encoding="utf-8"))
            trace = lambda record: stream.write(record.to_json() + "\n")

        q, report = run_fix(A, p, delta, args.mode, args.k, config, trace, args.timing)

    _write_vector(q, args.vector)
    return report, report.bad_count

def _run_sample (args: argparse.Namespace) -> tuple[Any, int]:
    config = _config(args)
    instance = parse_instance(args.instance)

    if args.command == "sample-graph":
        graph = _expect(instance, Graph)
        sample, report = sample_graph_neighbors(
            graph, args.p, args.epsilon, args.k, config, args.threshold
        )
        n = graph.vertex_count

    else:
        system = _expect(instance, SetSystem)
        sample, report = sample_sets(system, args.p, args.epsilon, args.k, config)
        n = system.n

    indicator = np.zeros(n, dtype=np.int8)
    indicator[sample] = 1
    _write_vector(indicator, args.vector)

    return report, len(set(report.bad) | set(report.outside_window))

def _run_partition (args: argparse.Namespace) -> tuple[Any, int]:
    system = _expect(parse_instance(args.instance), SetSystem)
    labels, report = partition_yes_no(system, args.k, _config(args))

    _write_vector("".join(f"{label.value}\n" for label in labels), args.vector)
    return report, len(report.bad)

def _run_baseline (args: argparse.Namespace) -> tuple[Any, int]:
    config = _config(args)
    instance = parse_instance(args.instance)

    if args.method == "sequential":
        system = _expect(instance, SetSystem)
        A = system.to_matrix()
        p = np.full(system.n, 0.5)
        delta = system.sizes / 6
        if args.delta_scale or args.delta_file:
            delta = _delta_vector(args, A, p)

        q = (sequential_conditional_fix(system).labels + 1) // 2
        k = 0

    else:
        A = _matrix(instance)
        p = _probability_vector(args, A.n)
        delta = _delta_vector(args, A, p)
        k = even_granularity(args.k)

        if args.method == "walk":
            grid = round_probabilities_to_grid(p, k)
            q = randomized_walk(A, grid, k, args.seed, config.horizon).q

        else:
            q = monte_carlo_round(p, args.seed)

    deviations = A.deviations(p, q)
    bad = np.flatnonzero(deviations > delta)
    report = RunReport.from_rows(
        f"baseline-{args.method}", args.k, k, config.profile.value, A.n,
        deviations, delta, np.zeros(A.m), bad, details={ "seed": args.seed },
    )

    _write_vector(q, args.vector)
    return report, report.bad_count

def _run_verify (args: argparse.Namespace) -> tuple[Any, int]:
    A = _matrix(parse_instance(args.instance))
    p = _probability_vector(args, A.n)
    q = parse_vector(args.q_file, A.n)

    deviations = A.deviations(p, q)
    mismatches = []

    if args.against:
        expected = read_report(args.against)
        if expected.m != A.m:
            raise InvalidArgument(f"Report has {expected.m} rows, the instance {A.m}")

        delta = np.array([row.delta for row in expected.rows])
        for i, (row, deviation) in enumerate(zip(expected.rows, deviations)):
            slack = VERIFY_TOLERANCE * max(1.0, deviation)
            drifted = abs(row.deviation - deviation) > slack
            if drifted or (not row.bad and deviation > row.delta + slack):
                mismatches.append(i)

    else:
        delta = _delta_vector(args, A, p)

    bad = np.flatnonzero(deviations > delta)
    report = RunReport.from_rows(
        "verify", 0, 0, args.profile, A.n, deviations, delta, np.zeros(A.m), bad,
        details={ "mismatches": mismatches, "consistent": not mismatches },
    )

    _write_vector(deviations, args.vector)
    if mismatches:
        write_report(report, args.output)
        raise InvalidArgument(f"Report disagrees with the deviations of rows {mismatches[:10]}")

    return report, report.bad_count

def _run_serve (args: argparse.Namespace) -> tuple[Any, int]:
    from derand.server import create_app

    app = create_app(_config(args))
    logger.info(f"Serving on {args.host}:{args.port}")
    app.run(args.host, args.port)

    return None, 0

COMMANDS = {
    "fix": _run_fix,
    "sample-sets": _run_sample,
    "sample-graph": _run_sample,
    "partition": _run_partition,
    "baseline": _run_baseline,
    "verify": _run_verify,
    "serve": _run_serve,
}

def run_command (argv: Sequence[str]) -> int:
    """
    Runs one subcommand.

    :return: 0 on success, 1 on invalid input or I/O errors, 2 when ``--strict`` is set
        and some row is bad
    """
    try:
        args = build_parser().parse_args(list(argv))

    except InvalidArgument as exc:
        print(exc.message, file=sys.stderr)
        return 1

    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    try:
        report, bad = COMMANDS[args.command](args)
        if report is not None:
            write_report(report, args.output)

    except DerandError as exc:
        logger.error(exc.message)
        return 1

    except OSError as exc:
        logger.error(f"{exc.filename or ''}: {exc.strerror}")
        return 1

    if bad:
        logger.warning(f"{bad} bad rows")

    return 2 if getattr(args, "strict", False) and bad else 0

def main ():
    sys.exit(run_command(sys.argv[1:]))

if __name__ == "__main__":
    main()
