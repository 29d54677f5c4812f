import argparse
import json
import logging
import os
import pathlib
import sys
from contextlib import contextmanager, redirect_stderr, redirect_stdout
from os import devnull
from typing import Dict, Optional

import sdfuzz
from sdfuzz.abi import read_abi
from sdfuzz.analyze import analyze as run_analysis
from sdfuzz.bench import CONFIGURATIONS, run_bench
from sdfuzz.bytecode import read_bytecode
from sdfuzz.config import CampaignConfig
from sdfuzz.fuzzer import run_campaign
from sdfuzz.report import (
    build_report,
    read_report,
    replay as replay_finding,
    write_json,
    write_metrics_csv,
)

logger = logging.getLogger("sdfuzz")

EXIT_SUCCESS = 0
EXIT_FAILURE = 1
EXIT_INPUT_ERROR = 2


@contextmanager
def suppress_stdout_stderr():
    """A context manager that redirects stdout and stderr to devnull"""
    with open(devnull, "w") as fnull:
        with redirect_stderr(fnull) as err, redirect_stdout(fnull) as out:
            yield (err, out)


def write_json_stdout(data):
    sys.stdout.write(json.dumps(data))
    sys.stdout.write("\n")
    sys.stdout.flush()


def default_report_path(bytecode_path: str) -> pathlib.Path:
    path = pathlib.Path(bytecode_path)
    return path.with_name(f"{path.stem}.report.json")


def _campaign_config(args) -> CampaignConfig:
    return CampaignConfig(
        max_test_cases=args.max_cases,
        rng_seed=args.rng,
        gamma=args.gamma,
        timeout=args.timeout,
        max_seq_len=args.seq_len,
        ablation=args.ablate,
        record_wall_time=args.wall_time,
    )


def do_analyze(bytecode_path: str, abi_path: str, out: Optional[str] = None) -> Dict:
    static = run_analysis(read_bytecode(bytecode_path), read_abi(abi_path))
    content = static.to_dict()
    if out is not None:
        write_json(content, out)
    return content


def do_fuzz(
    bytecode_path: str,
    abi_path: str,
    config: CampaignConfig,
    out: Optional[str] = None,
    metrics_out: Optional[str] = None,
) -> Dict:
    bytecode = read_bytecode(bytecode_path)
    abi = read_abi(abi_path)
    result = run_campaign(bytecode, abi, config)
    report = build_report(result)
    path = pathlib.Path(out) if out else default_report_path(bytecode_path)
    write_json(report, path)
    if metrics_out is not None:
        write_metrics_csv(result.metrics, metrics_out)
    logger.info("Report written to %s", path)
    return {
        "report": str(path),
        "findings": len(report["findings"]),
        "test_cases": result.executed,
        "warnings": report["static"]["warnings"],
    }


def handle(line) -> str:
    data = json.loads(line)
    operation = data.pop("operation")
    if operation == "analyze":
        content = do_analyze(data["bytecode"], data["abi"], data.get("out"))
        response = "Analysis of {}: {} code target(s)".format(
            data["bytecode"], len(content["code_targets"])
        )
    elif operation == "fuzz":
        config = CampaignConfig.from_dict(data.get("config", {}))
        summary = do_fuzz(data["bytecode"], data["abi"], config, data.get("out"))
        response = "Campaign on {}: {} finding(s), report written to {}".format(
            data["bytecode"], summary["findings"], summary["report"]
        )
    elif operation == "replay":
        verdict = replay_finding(read_report(data["report"]), int(data["finding"]))
        response = verdict.message
    elif operation == "process_ID":
        response = str(os.getpid())
    else:
        response = (
            'Invalid operation. Valid options are: "analyze", "fuzz", "replay", '
            '"process_ID".'
        )

    return response


def serve(_) -> int:
    """
    Answer one JSON request per line on stdin until stdin closes.
    """
    try:
        write_json_stdout({"success": True, "message": "Initialized sdfuzz server"})
        for line in sys.stdin:
            try:
                with suppress_stdout_stderr():
                    message = handle(line)
                response = {"success": True, "message": message}

            except Exception as error:
                response = {"success": False, "message": str(error)}

            write_json_stdout(response)

    except Exception as error:
        write_json_stdout({"success": False, "message": str(error)})
    return EXIT_SUCCESS


def analyze(args) -> int:
    content = do_analyze(args.bytecode[0], args.abi[0], args.out)
    write_json_stdout(content)
    return EXIT_SUCCESS


def fuzz(args) -> int:
    summary = do_fuzz(
        args.bytecode[0],
        args.abi[0],
        _campaign_config(args),
        args.out,
        args.metrics_out,
    )
    write_json_stdout(summary)
    return EXIT_SUCCESS


def replay(args) -> int:
    verdict = replay_finding(read_report(args.report[0]), args.finding[0])
    print(verdict.message)
    return EXIT_SUCCESS if verdict.reproduced else EXIT_FAILURE


def bench(args) -> int:
    config = CampaignConfig(max_test_cases=args.max_cases, max_seq_len=args.seq_len)
    result = run_bench(
        args.suite[0],
        seeds=args.seeds,
        workers=args.workers,
        config=config,
        configurations=tuple(args.configurations),
    )
    if args.out is not None:
        result.runs.to_csv(args.out, index=False)
    if args.metrics_out is not None:
        result.metrics.to_csv(args.metrics_out, index=False)
    print(result.summary.to_string(index=False))
    return EXIT_SUCCESS


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, received: {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    defaults = CampaignConfig()
    parser = argparse.ArgumentParser(prog="sdfuzz")
    parser.add_argument("--version", action="version", version=sdfuzz.__version__)
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging level, messages go to stderr",
    )
    subparsers = parser.add_subparsers(help="sub-command help")
    parser_serve = subparsers.add_parser("serve", help="JSON-lines request loop on stdin")
    parser_analyze = subparsers.add_parser("analyze", help="static targets only")
    parser_fuzz = subparsers.add_parser("fuzz", help="run a campaign and write a report")
    parser_replay = subparsers.add_parser("replay", help="re-execute a finding's witness")
    parser_bench = subparsers.add_parser("bench", help="ablation benchmark over a suite")

    parser_serve.set_defaults(func=serve)

    for subparser in (parser_analyze, parser_fuzz):
        subparser.add_argument("bytecode", type=str, nargs=1, help="path to .hex or .easm file")
        subparser.add_argument("abi", type=str, nargs=1, help="path to .abi.json file")
        subparser.add_argument("--out", type=str, default=None, help="output JSON path")

    parser_analyze.set_defaults(func=analyze)

    parser_fuzz.set_defaults(func=fuzz)
    parser_fuzz.add_argument("--max-cases", type=int, default=defaults.max_test_cases)
    parser_fuzz.add_argument("--timeout", type=float, default=None, help="seconds")
    parser_fuzz.add_argument("--gamma", type=float, default=defaults.gamma)
    parser_fuzz.add_argument("--ablate", choices=["code", "state", "both"], default=None)
    parser_fuzz.add_argument("--seq-len", type=int, default=defaults.max_seq_len)
    parser_fuzz.add_argument("--rng", type=int, default=defaults.rng_seed)
    parser_fuzz.add_argument("--metrics-out", type=str, default=None, help="CSV path")
    parser_fuzz.add_argument(
        "--wall-time",
        action="store_true",
        help="record wall time in the report; reports are then no longer reproducible",
    )

    parser_replay.set_defaults(func=replay)
    parser_replay.add_argument("report", type=str, nargs=1, help="path to report JSON")
    parser_replay.add_argument("finding", type=int, nargs=1, help="finding index")

    parser_bench.set_defaults(func=bench)
    parser_bench.add_argument("suite", type=str, nargs=1, help="fixture directory")
    parser_bench.add_argument("--seeds", type=_positive_int, default=10)
    parser_bench.add_argument("--workers", type=_positive_int, default=None)
    parser_bench.add_argument("--max-cases", type=int, default=defaults.max_test_cases)
    parser_bench.add_argument("--seq-len", type=int, default=defaults.max_seq_len)
    parser_bench.add_argument(
        "--configurations",
        nargs="+",
        choices=list(CONFIGURATIONS),
        default=list(CONFIGURATIONS),
    )
    parser_bench.add_argument("--out", type=str, default=None, help="runs CSV path")
    parser_bench.add_argument("--metrics-out", type=str, default=None, help="CSV path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level, format="%(levelname)s: %(name)s: %(message)s"
    )
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return EXIT_INPUT_ERROR

    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as error:
        logger.error("%s", error)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
