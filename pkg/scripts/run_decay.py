import argparse
import sys

from lab import add_common_args, run_cli, run_command


def main(argv=None):
    parser = argparse.ArgumentParser(description="Profile the local distance of the perturbed ground state.")
    parser.add_argument("scenario", help="Scenario name under config/scenarios or a TOML path.")
    parser.add_argument("--L", dest="length", type=int, help="Override the chain length.")
    parser.add_argument("--c", dest="strength", type=float, help="Override the impurity size decay c.")
    add_common_args(parser)
    args = parser.parse_args(argv)
    overrides = {}
    if args.length:
        overrides["L"] = args.length
    if args.strength is not None:
        overrides["c"] = args.strength
    return run_cli(lambda: run_command(args, ("decay",), overrides))


if __name__ == "__main__":
    sys.exit(main())
