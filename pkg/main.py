"""
PHASE command line: synth, ingest, featurize, fit-codec, train, score,
evaluate, explain, report.

    python main.py synth --config configs/benchmark.env --out out
    python main.py featurize --config configs/benchmark.env --out out --input out/corpus.tsv --manifest out/manifest.csv
"""
import argparse
import sys
from typing import Dict, List, Optional

from config import load_config
from errors import ConfigError, DataError, PhaseError
from helpers import configure_logging
from routers import pipeline_router

# flag -> config key
PATH_FLAGS = {
    "input": "input_path",
    "format": "input_format",
    "manifest": "manifest_path",
    "records": "records_path",
    "sequences": "sequences_path",
    "codec": "codec_path",
    "model": "model_path",
    "report": "report_path",
    "scores": "scores_path",
}


class CliParser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; usage errors are config errors here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> CliParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="dotenv-style config file (KEY=VALUE)")
    common.add_argument("--seed", help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    for flag in PATH_FLAGS:
        common.add_argument(f"--{flag}", metavar="PATH" if flag != "format" else "FORMAT")
    common.add_argument("--pseudonymize", action="store_true", help="ingest: rewrite addresses with PSEUDONYM_KEY")

    parser = CliParser(prog="phase", description="Behavioral-fidelity toolkit for Zeek connection logs")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=CliParser)
    sub.required = True
    for name, handler in pipeline_router.COMMANDS.items():
        summary = (handler.__doc__ or "").strip().splitlines()
        sub.add_parser(name, parents=[common], help=summary[0] if summary else None)
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip().lower()] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    for flag, key in PATH_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if args.pseudonymize:
        overrides["pseudonymize"] = "true"
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args.config, collect_overrides(args))
        configure_logging(config.log_level)
        pipeline_router.run(args.command, config)
    except PhaseError as e:
        print(f"❌ {e.detail}", file=sys.stderr)
        return e.exit_code
    except (OSError, UnicodeError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
