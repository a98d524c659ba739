import argparse
import sys

from lab import add_common_args, run_cli, run_command


def main(argv=None):
    parser = argparse.ArgumentParser(description="Check frustration-freeness, LTQO, local gap and invertibility.")
    parser.add_argument("scenario", help="Scenario name under config/scenarios or a TOML path.")
    parser.add_argument("--L", dest="length", type=int, help="Override the chain length.")
    parser.add_argument("--no-contract", action="store_true", help="Skip the stitching-map channel checks.")
    add_common_args(parser)
    args = parser.parse_args(argv)
    overrides = {"L": args.length} if args.length else None
    ops = ("check",) if args.no_contract else ("check", "contract")
    return run_cli(lambda: run_command(args, ops, overrides))


if __name__ == "__main__":
    sys.exit(main())
