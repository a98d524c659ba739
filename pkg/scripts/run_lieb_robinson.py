import argparse
import sys

from lab import add_common_args, run_cli, run_command


def main(argv=None):
    parser = argparse.ArgumentParser(description="Measure commutator growth against the Lieb-Robinson bound.")
    parser.add_argument("scenario", nargs="?", default="lr-chain",
                        help="Scenario name under config/scenarios or a TOML path.")
    add_common_args(parser)
    args = parser.parse_args(argv)
    return run_cli(lambda: run_command(args, ("lr",)))


if __name__ == "__main__":
    sys.exit(main())
