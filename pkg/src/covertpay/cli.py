"""covertpay command line: run scenarios, replicate tables, encode commands, correlate logs."""
import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import records
from .analysis import DEFAULT_FEE_TOLERANCE_SAT, DEFAULT_WINDOW_S, correlate
from .codec import REFERENCE_CODEBOOK, Codebook, build_codebook, frame, load_frequency_table, make_scheme
from .errors import CovertPayError
from .harness import replicate_tables, run_scenario
from .payments import ForwardingEvent
from .scenario import load_scenario


def _cmd_run(args):
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    report = run_scenario(scenario, out_dir=args.out)
    sys.stdout.write(report.to_text())
    return 0


def _cmd_replicate(args):
    text, ok = replicate_tables() if args.seed is None else replicate_tables(args.seed)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "tables.txt").write_text(text)
    return 0 if ok else 1


def _cmd_encode(args):
    codebook = Codebook.load(args.codebook) if args.codebook else REFERENCE_CODEBOOK
    scheme = make_scheme(args.scheme, codebook)
    amounts = scheme.encode(args.command)
    if args.framed:
        amounts = frame(amounts)
    print(",".join(map(str, amounts)))
    print(f"payments={len(amounts)} total_sat={sum(amounts)}", file=sys.stderr)
    return 0


def _monitor_arg(spec):
    if "=" in spec:
        node, path = spec.split("=", 1)
    else:
        path = spec
        node = Path(spec).name.split(".")[0]
    return node, path


def _cmd_correlate(args):
    receipts = [(int(r["timestamp"]), int(r["amount"])) for r in records.read_jsonl(args.cc_log)]
    logs = {}
    for spec in args.monitor_logs:
        node, path = _monitor_arg(spec)
        logs[node] = [ForwardingEvent.from_record(r) for r in records.read_jsonl(path)]
    channels = {}
    if args.channels:
        for r in records.read_jsonl(args.channels):
            channels[int(r["chan_id"])] = (r["node1"], r["node2"])
    ranking = correlate(receipts, logs, channels, args.window, args.fee_tolerance)
    rows = [f.as_record() for f in ranking]
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        records.write_jsonl(Path(args.out) / "findings.jsonl", rows)
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 0


def _cmd_build_codebook(args):
    book = build_codebook(load_frequency_table(args.frequencies), args.arity)
    if args.codebook_out:
        book.dump(args.codebook_out)
    else:
        for char in sorted(book.codes):
            print(f"{ord(char)} {book.codes[char]}")
    return 0


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="covertpay", description=__doc__)
    parser.add_argument("--seed", type=_u64, default=None, help="override the scenario seed (u64)")
    parser.add_argument("--out", default=None, help="directory for reports and logs")
    # the global options are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("run", parents=[common], help="run a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("replicate-tables", parents=[common], help="compare simulated and published table values")
    p.set_defaults(func=_cmd_replicate)

    p = sub.add_parser("encode", parents=[common], help="encode a command as payment amounts")
    p.add_argument("command")
    p.add_argument("--scheme", choices=("ascii", "huffman"), default="ascii")
    p.add_argument("--codebook", default=None, help="codebook file; defaults to the built-in quaternary table")
    p.add_argument("--framed", action="store_true", help="include start/end sentinels")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("correlate", parents=[common], help="timing-correlate C&C receipts with forwarding logs")
    p.add_argument("cc_log")
    p.add_argument("monitor_logs", nargs="+", help="PATH or NODE=PATH; node id defaults to the file stem")
    p.add_argument("--window", type=float, default=DEFAULT_WINDOW_S)
    p.add_argument("--fee-tolerance", type=int, default=DEFAULT_FEE_TOLERANCE_SAT)
    p.add_argument("--channels", default=None, help="channels.jsonl used to resolve upstream peers")
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser("build-codebook", parents=[common], help="n-ary Huffman codebook from a frequency table")
    p.add_argument("frequencies")
    p.add_argument("--arity", type=int, default=4)
    p.add_argument("--codebook-out", default=None, help="write the codebook file here instead of stdout")
    p.set_defaults(func=_cmd_build_codebook)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CovertPayError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
