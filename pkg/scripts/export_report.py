import argparse
import sys
from pathlib import Path

from decay import beta_grid
from errors import EXIT_FLAG_MISMATCH, ConfigError
from lab import add_common_args, check_round_trip, fit_decay, prepare, report, run_cli
from results_store import ResultStore


def _run(args):
    config = prepare(args)
    source = Path(args.results)
    if not (source / "results.jsonl").exists():
        raise ConfigError(f"no results.jsonl in {source}")
    store = ResultStore(source, config.get("record_wall_time", False)).load()
    if args.out:
        store.out_dir = Path(args.out)
    written = report(store, args.fmt, profiles=not args.no_profiles)
    for path in written:
        if path is not None:
            print(f"Wrote {path}")

    betas = beta_grid(config["beta_start"], config["beta_stop"], config["beta_step"])
    groups = {}
    for row in store.sorted_rows():
        if row.metric in ("decay_R", "decay_distance"):
            base = tuple((k, row.axes[k]) for k in ("L", "c") if k in row.axes)
            groups.setdefault((row.scenario, base), []).append(row)
    for (scenario, base), rows in groups.items():
        fit = fit_decay(rows, args.radius, args.d, args.d_gamma, betas)
        label = " ".join(f"{k}={v}" for k, v in base)
        if "beta" in fit:
            print(f"{scenario} {label}: beta {fit['beta']:.2f} residual {fit['residual']:.3e} "
                  f"over {fit['rows']} centers (p = {fit['predicted_p']:.3f})")
        else:
            print(f"{scenario} {label}: {fit['message']}")

    if args.fmt in ("csv", "both") and not check_round_trip(store):
        print("CSV round trip differs from the result store")
        return EXIT_FLAG_MISMATCH
    return None


def main(argv=None):
    parser = argparse.ArgumentParser(description="Write CSV, summary and decay profiles for a result store.")
    parser.add_argument("results", help="Directory holding results.jsonl.")
    parser.add_argument("--radius", type=int, default=1, help="Ball radius used for the decay fit.")
    parser.add_argument("--d", type=float, default=1.0, help="Graph dimension for the exponent p.")
    parser.add_argument("--d-gamma", dest="d_gamma", type=float, default=0.0, help="Gap exponent for p.")
    parser.add_argument("--no-profiles", action="store_true", help="Skip the per-center .dat files.")
    add_common_args(parser)
    args = parser.parse_args(argv)
    return run_cli(lambda: _run(args))


if __name__ == "__main__":
    sys.exit(main())
