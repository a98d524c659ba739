import argparse
import sys

from lab import add_common_args, run_cli, run_command


def main(argv=None):
    parser = argparse.ArgumentParser(description="Energy series on concentric balls and the recursion replay.")
    parser.add_argument("scenario", help="Scenario name under config/scenarios or a TOML path.")
    parser.add_argument("--L", dest="length", type=int, help="Override the chain length.")
    add_common_args(parser)
    args = parser.parse_args(argv)
    overrides = {"L": args.length} if args.length else None
    return run_cli(lambda: run_command(args, ("iso",), overrides))


if __name__ == "__main__":
    sys.exit(main())
