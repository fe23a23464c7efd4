"""Command-line entry point: generate, train, eval, stream, bench.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

USAGE_ERROR = 1
DATA_ERROR = 2

log = logging.getLogger("fusewake")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fusewake", description="Multimodal drowsiness detection on synthetic sessions.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    g = sub.add_parser("generate", help="write seeded synthetic sessions")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--sessions", type=int, required=True)
    g.add_argument("--subjects", type=int, required=True)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--duration", type=float, default=300.0, help="session length in seconds (default 300)")
    g.add_argument("--params", help="JSON file overriding generator parameters")

    t = sub.add_parser("train", help="fit a model bundle on a session directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="run config JSON (defaults when omitted)")
    t.add_argument("--out", required=True, help="model bundle path")

    e = sub.add_parser("eval", help="evaluate every scoring path on held-out sessions")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="report path; writes <stem>.json and <stem>.csv")

    s = sub.add_parser("stream", help="replay a session, one JSON line per closed window")
    s.add_argument("--model", required=True)
    s.add_argument("--session", required=True)
    s.add_argument("--fast", action="store_true", help="do not pace frames at the recording rate")

    b = sub.add_parser("bench", help="per-frame latency of the streaming path")
    b.add_argument("--model", required=True)
    b.add_argument("--session", required=True)
    b.add_argument("--warmup", type=int, default=100, help="frames excluded at start (>= 100)")
    return p


def _session_files(data: str) -> list[Path]:
    d = Path(data)
    if not d.is_dir():
        raise FileNotFoundError(f"data directory not found: {data}")
    files = sorted(d.glob("*.jsonl"))
    if not files:
        raise FileNotFoundError(f"no session files (*.jsonl) in {data}")
    return files


def _load_sessions(data: str):
    from .core import load_session

    return [load_session(f) for f in _session_files(data)]


def cmd_generate(args) -> int:
    from .core import write_session
    from .synth import GenParams, generate_dataset

    params = GenParams.from_json(args.params) if args.params else GenParams()
    if args.sessions < 1 or args.subjects < 1:
        raise UsageError("--sessions and --subjects must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for session in generate_dataset(args.seed, args.sessions, args.subjects, params, args.duration):
        write_session(session, out / f"{session.id}.jsonl")
    log.info("wrote %d sessions to %s", args.sessions, out)
    return 0


def cmd_train(args) -> int:
    from .config import load_config
    from .pipeline import train_pipeline

    cfg = load_config(args.config)
    bundle = train_pipeline(_load_sessions(args.data), cfg)
    bundle.save(args.out)
    log.info("model written to %s", args.out)
    return 0


def _report_paths(report: str) -> tuple[Path, Path]:
    p = Path(report)
    stem = p.with_suffix("") if p.suffix in (".json", ".csv") else p
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".csv")


def cmd_eval(args) -> int:
    from .evaluation import report_csv, report_json
    from .pipeline import AUX_PATHS, PATHS, ModelBundle, evaluate_sessions, held_out_sessions

    bundle = ModelBundle.load(args.model)
    sessions = held_out_sessions(bundle, _load_sessions(args.data))
    reports = evaluate_sessions(bundle, sessions, PATHS + AUX_PATHS)
    rows = {k: reports[k] for k in PATHS}
    extra = {
        "auxiliary": {k: reports[k].to_dict() for k in AUX_PATHS},
        "sessions": sorted(s.id for s in sessions),
        "subjects": sorted({s.subject_id for s in sessions}),
    }
    json_path, csv_path = _report_paths(args.report)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(report_json(rows, extra), encoding="utf-8")
    csv_path.write_text(report_csv(rows), encoding="utf-8")
    for path, r in rows.items():
        print(f"{path:16s} accuracy={r.accuracy:.4f} f1={'-' if r.f1 is None else format(r.f1, '.4f')}")
    return 0


def cmd_stream(args) -> int:
    from .core import load_session
    from .pipeline import ModelBundle
    from .stream import StreamReplay

    replay = StreamReplay(ModelBundle.load(args.model), load_session(args.session))
    for line in replay.run(pace=not args.fast):
        print(json.dumps(line.as_dict()), flush=True)
    return 0


def cmd_bench(args) -> int:
    from .core import load_session
    from .pipeline import ModelBundle
    from .stream import latency_benchmark

    stats = latency_benchmark(ModelBundle.load(args.model), load_session(args.session), args.warmup)
    print(json.dumps(stats.as_dict(), sort_keys=True))
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "stream": cmd_stream, "bench": cmd_bench}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return USAGE_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "bench":
        # the measurement is single-threaded; only effective before BLAS loads
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")
    try:
        return COMMANDS[args.command](args)
    except BrokenPipeError:
        # downstream reader closed early (e.g. `| head`); not an error
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except UsageError as exc:
        print(f"fusewake {args.command}: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (OSError, ValueError, KeyError) as exc:
        # SessionFormatError, ConfigError, AlignmentError and the physio
        # errors are ValueErrors; json.JSONDecodeError too
        print(f"fusewake {args.command}: error: {exc}", file=sys.stderr)
        return DATA_ERROR


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
