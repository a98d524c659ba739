import argparse
import sys

from lab import RunContext, add_common_args, prepare, report, run_cli, run_sweep
from scenarios import load_sweep
from settings import resolve_results_dir


def _run(args):
    config = prepare(args)
    spec = load_sweep(args.sweep, config)
    out_dir = resolve_results_dir(args.out, config)
    if not args.out:
        out_dir = out_dir / spec.name
    store = run_sweep(spec, config, out_dir, jobs=config["jobs"], resume=args.resume, fmt=args.fmt,
                      ctx=RunContext())
    report(store, args.fmt)
    print(f"Wrote {len(store.rows)} rows to {out_dir}")


def main(argv=None):
    parser = argparse.ArgumentParser(description="Run a sweep over scenario axes into a result store.")
    parser.add_argument("sweep", help="Sweep name under config/sweeps or a TOML path.")
    parser.add_argument("--resume", action="store_true", help="Skip cells listed in progress.json.")
    add_common_args(parser)
    args = parser.parse_args(argv)
    return run_cli(lambda: _run(args))


if __name__ == "__main__":
    sys.exit(main())
