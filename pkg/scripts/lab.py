import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from decay import F_FUNCTION, beta_grid, decay_exponent, fit_stretched_exponent, tabulate
from dynamics import TimeDependentInteraction, measure_lr
from errors import (
    EXIT_CONFIG,
    EXIT_FLAG_MISMATCH,
    EXIT_OK,
    EXIT_RESOURCE,
    EXIT_RUN_ERROR,
    ConfigError,
    EigensolverError,
    GeometryError,
    ResourceCapError,
    StitchLabError,
)
from lattice import fit_dimension
from model import check_frustration_free, measure_gap, measure_ltqo, verify_certificate
from results_store import ResultRow, ResultStore, load_progress, read_csv, save_progress, sort_key
from scenarios import load_scenario
from settings import load_config, load_env, resolve_jobs, resolve_results_dir
from stitching import build_stitching_map, decay_profile, eigen_residual, ground_space, isoperimetry_series, verify_definition
from tensorops import DensityMatrix, choi_check

ASSUMPTIONS = ("frustration_free", "ltqo", "gap", "invertible")
OPS = ("check", "contract", "decay", "iso", "lr")
DEFAULT_RADII = (1, 2, 3)


class RunContext:
    def __init__(self, log_every_seconds=15, quiet=False):
        self.counter = 1
        self.cell_count = 0
        self.last_log_time = time.time()
        self.log_every_seconds = log_every_seconds
        self.quiet = quiet

    def next_counter(self):
        value = self.counter
        self.counter += 1
        return value

    def log(self, message, force=False):
        if self.quiet:
            return
        now = time.time()
        if force or (now - self.last_log_time) >= self.log_every_seconds:
            stamp = time.strftime("%H:%M:%S")
            print(f"[{stamp}] {message}")
            self.last_log_time = now

    def note_cell(self, scenario, axes, seconds):
        self.cell_count += 1
        label = " ".join(f"{k}={v}" for k, v in axes.items()) or "-"
        self.log(f"{scenario} {label}: done in {seconds:.2f}s [{self.cell_count}]")


def add_common_args(parser):
    parser.add_argument("--config", help="Path to config.toml (default config/config.toml).")
    parser.add_argument("--seed", type=int, help="Root seed for every random probe.")
    parser.add_argument("--jobs", type=int, help="Worker processes (falls back to STITCHLAB_JOBS).")
    parser.add_argument("--out", help="Output directory for result files.")
    parser.add_argument("--max-dim", dest="max_dim", type=int, help="Hilbert dimension cap.")
    parser.add_argument("--format", dest="fmt", choices=("csv", "jsonl", "both"), default="both")
    return parser


def prepare(args):
    load_env()
    config = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    if getattr(args, "max_dim", None) is not None:
        config["max_dim"] = args.max_dim
    config["jobs"] = resolve_jobs(getattr(args, "jobs", None), config)
    return config


def run_cli(fn):
    """Run ``fn`` and map its outcome to a process exit code."""
    try:
        code = fn()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceCapError as exc:
        print(f"resource cap exceeded: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except StitchLabError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR
    return EXIT_OK if code is None else int(code)


def cell_key(scenario, axes, op):
    payload = json.dumps([scenario, sorted((k, str(v)) for k, v in axes.items()), op])
    return int(hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16], 16)


def cell_rng(root_seed, scenario, axes, op):
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), cell_key(scenario, axes, op)]))


def site_axis(graph, index):
    label = graph.label(index)
    if isinstance(label, tuple):
        return ",".join(str(part) for part in label)
    return label


def _flag(ok):
    return "pass" if ok else "fail"


@dataclass
class OpResult:
    rows: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)


class CellRun:
    """One scenario instance plus the seed and config a cell runs under."""

    def __init__(self, scenario, config, seed, plan_overrides=None):
        self.scenario = scenario
        self.config = config
        self.seed = seed
        self.plan = dict(scenario.plan)
        self.plan.update(plan_overrides or {})
        self.base_axes = dict(scenario.params)
        self._ground = None

    @property
    def model(self):
        return self.scenario.model

    @property
    def graph(self):
        return self.scenario.graph

    def rng(self, op, **axes):
        return cell_rng(self.seed, self.scenario.name, {**self.base_axes, **axes}, op)

    def row(self, metric, value, flag="", **axes):
        return ResultRow(self.scenario.name, {**self.base_axes, **axes}, metric, float(value), flag)

    def x_axis(self, index):
        return site_axis(self.graph, index)

    def centers(self, key="centers"):
        labels = self.plan.get(key)
        if labels is None and key != "centers":
            labels = self.plan.get("centers")
        if labels is None:
            return list(range(self.graph.size))
        return self.scenario.sites(labels)

    def ground(self):
        if self._ground is None:
            self._ground = ground_space(self.model, self.scenario.perturbation, tol=self.model.kernel_tol,
                                        rng=self.rng("ground"))
        return self._ground

    def d_pair(self):
        return float(self.plan.get("d", 1.0)), float(self.plan.get("d_gamma", 0.0))


def check_op(cell):
    out = OpResult()
    model, graph, config = cell.model, cell.graph, cell.config
    d_candidates = tuple(cell.plan.get("d_candidates", (0.0, 1.0, 2.0)))

    ff = check_frustration_free(model)
    out.flags["frustration_free"] = ff.passed
    out.rows += [
        cell.row("ff_term_residual", ff.max_term_residual, _flag(ff.passed)),
        cell.row("ff_min_term_eig", ff.min_term_eig),
        cell.row("ff_h_residual", ff.h_residual),
    ]
    out.notes.append(f"{_flag(ff.passed).upper()} frustration-free: worst residual {ff.max_term_residual:.3e} "
                     f"on {ff.worst_residual_term}, lowest term eigenvalue {ff.min_term_eig:.3e}")

    try:
        dim_fit = fit_dimension(graph, [d for d in d_candidates if d > 0] or [1.0], config["dimension_cap"])
        out.rows.append(cell.row("dimension_d", dim_fit.d))
        out.rows.append(cell.row("dimension_c", dim_fit.c_gamma_cap))
    except GeometryError as exc:
        out.notes.append(f"INFO dimension: {exc}")

    ltqo_ok = True
    gap_ok = True
    worst_ltqo = None
    worst_gap = None
    for x in cell.centers("ltqo_centers"):
        xa = cell.x_axis(x)
        profile = measure_ltqo(
            model, x,
            cell.plan.get("ltqo_r", [1, 2]),
            cell.plan.get("ltqo_k", [0, 1]),
            samples=config["ltqo_samples"],
            rng=cell.rng("ltqo", x=xa),
            d_candidates=d_candidates,
            tail_ratio=config["ltqo_tail_ratio"],
            zero_tol=config["ltqo_zero_tol"],
        )
        for r, k, sup in profile.rows:
            out.rows.append(cell.row("ltqo_sup", sup, x=xa, r=r, k=k))
            if worst_ltqo is None or sup > worst_ltqo[0]:
                worst_ltqo = (sup, xa, r, k)
        out.rows.append(cell.row("ltqo_d_o", profile.fitted.d_o, _flag(profile.fitted.passed), x=xa))
        ltqo_ok = ltqo_ok and profile.fitted.passed

        try:
            gaps = measure_gap(model, x, cell.plan.get("gap_r", [1, 2]), d_candidates, config["gap_c_cap"],
                               rng=cell.rng("gap", x=xa))
        except EigensolverError as exc:
            gap_ok = False
            out.notes.append(f"FAIL gap at x={xa}: {exc}")
            continue
        for r, gamma, kernel_dim in gaps.rows:
            out.rows.append(cell.row("gap", gamma, x=xa, r=r))
            out.rows.append(cell.row("kernel_dim", kernel_dim, x=xa, r=r))
            if worst_gap is None or gamma < worst_gap[0]:
                worst_gap = (gamma, xa, r)
        c_gamma, d_gamma = gaps.fitted
        ok = c_gamma <= config["gap_c_cap"]
        out.rows.append(cell.row("gap_c_gamma", c_gamma, _flag(ok), x=xa))
        out.rows.append(cell.row("gap_d_gamma", d_gamma, x=xa))
        gap_ok = gap_ok and ok
    out.flags["ltqo"] = ltqo_ok
    out.flags["gap"] = gap_ok
    if worst_ltqo is not None:
        out.notes.append(f"{_flag(ltqo_ok).upper()} LTQO: largest sup {worst_ltqo[0]:.3e} "
                         f"at x={worst_ltqo[1]} r={worst_ltqo[2]} k={worst_ltqo[3]}")
    if worst_gap is not None:
        out.notes.append(f"{_flag(gap_ok).upper()} local gap: smallest {worst_gap[0]:.6g} "
                         f"at x={worst_gap[1]} r={worst_gap[2]}")

    cert = verify_certificate(cell.scenario.certificate, model)
    out.flags["invertible"] = cert.passed
    out.rows.append(cell.row("certificate_fidelity", cert.fidelity, _flag(cert.passed)))
    out.notes.append(f"{_flag(cert.passed).upper()} invertibility: fidelity {cert.fidelity:.12f}, "
                     f"product {cert.product_ok}, split {cert.split_ok}")
    return out


def _random_probe(rng, space):
    vec = rng.standard_normal(space.dim) + 1j * rng.standard_normal(space.dim)
    vec /= np.linalg.norm(vec)
    return DensityMatrix(space, tuple(range(space.n_sites)), vector=vec)


def contract_op(cell):
    """Channel and defining-property checks of stitching maps on the plan's regions."""
    out = OpResult()
    regions = cell.plan.get("regions", [])
    if not regions:
        return out
    scenario = cell.scenario
    small_l = cell.plan.get("contract_L")
    if small_l and scenario.graph.size > int(small_l):
        scenario = scenario.rebuild(L=int(small_l))
    space = scenario.model.space
    n_probes = int(cell.plan.get("contract_probes", 4))
    all_ok = True
    for labels in regions:
        z = frozenset(scenario.sites(labels))
        tag = ",".join(str(site_axis(scenario.graph, s)) for s in sorted(z))
        smap = build_stitching_map(scenario.model, scenario.certificate, z)
        rng = cell.rng("contract", region=tag)
        choi = choi_check(smap.cpmap, rng, max_dim=cell.config["choi_max_dim"])
        probes = [_random_probe(rng, space) for _ in range(n_probes)]
        singles = [frozenset([s]) for s in range(scenario.graph.size)]
        result = verify_definition(smap, probes, singles, [1, 2])
        prop1 = max((row["lhs"] for row in result["property1"] if row["dist"] > smap.light_cone), default=0.0)
        prop2 = max((row["excess"] for row in result["property2"] if row["r"] >= smap.light_cone), default=0.0)
        ok = choi.cp and choi.tp_or_ip and result["passed"]
        all_ok = all_ok and ok
        axes = {"L": scenario.graph.size, "region": tag}
        out.rows += [
            cell.row("choi_min_eig", choi.min_choi_eig, _flag(choi.cp), **axes),
            cell.row("tp_residual", choi.tp_residual, _flag(choi.tp_or_ip), **axes),
            cell.row("ground_fixed", result["property3"], **axes),
            cell.row("light_cone_max", prop1, **axes),
            cell.row("local_contraction_excess", prop2, **axes),
            cell.row("light_cone", smap.light_cone, _flag(ok), **axes),
        ]
        out.notes.append(f"{_flag(ok).upper()} stitching map on Z={{{tag}}}: min Choi eig {choi.min_choi_eig:.2e}, "
                         f"ground residual {result['property3']:.2e}")
    out.flags["contract"] = all_ok
    return out


def fit_decay(rows, radius=1, d=1.0, d_gamma=0.0, betas=None):
    """Stretched-exponential fit of decay rows at a fixed ball radius against the anchor distance."""
    anchor = {}
    values = {}
    for row in rows:
        key = (row.scenario, tuple((k, v) for k, v in sorted(row.axes.items(), key=lambda kv: kv[0])
                                   if k not in ("r",)))
        if row.metric == "decay_R":
            anchor[key] = row.value
        elif row.metric == "decay_distance" and row.axes.get("r") == radius:
            values[key] = row.value
    keys = sorted(set(anchor) & set(values), key=lambda k: anchor[k])
    distances = [anchor[k] for k in keys]
    measured = [values[k] for k in keys]
    report = {"radius": radius, "predicted_p": decay_exponent(d, d_gamma), "rows": len(keys)}
    if not measured or all(v == 0.0 for v in measured):
        report["message"] = "nothing to fit"
        return report
    fit = fit_stretched_exponent(distances, measured, betas)
    if fit is None:
        report["message"] = "fewer than 4 nonzero rows"
        return report
    report.update(fit)
    return report


def decay_op(cell):
    out = OpResult()
    model = cell.model
    j = cell.scenario.perturbation
    energy, basis = cell.ground()
    phi = basis[:, 0] if basis.shape[1] == 1 else basis
    residual, _ = eigen_residual(model, j, basis[:, 0])
    out.rows += [
        cell.row("ground_energy", energy),
        cell.row("ground_degeneracy", basis.shape[1]),
        cell.row("ground_residual", residual),
    ]
    d, d_gamma = cell.d_pair()
    radii = cell.plan.get("radii", list(DEFAULT_RADII))
    for x in cell.centers():
        xa = cell.x_axis(x)
        report = decay_profile(model, j, phi, x, radii, d, d_gamma)
        out.rows.append(cell.row("decay_R", report.R, x=xa))
        for row in report.rows:
            out.rows.append(cell.row("decay_distance", row.distance, "flag" if row.flagged else "", x=xa, r=row.r))
            out.rows.append(cell.row("decay_pbar", row.pbar, x=xa, r=row.r))
            out.rows.append(cell.row("decay_energy", row.energy, x=xa, r=row.r))
        for tri in report.triangle:
            ok = tri.sigma_theta <= tri.sigma_theta_bound + 1e-10
            out.rows.append(cell.row("triangle_slack", tri.sigma_theta_bound - tri.sigma_theta, _flag(ok),
                                     x=xa, r=tri.r))
        if report.flagged:
            out.notes.append(f"INFO decay at x={xa}: no ground overlap at r={report.flagged}")

    betas = beta_grid(cell.config["beta_start"], cell.config["beta_stop"], cell.config["beta_step"])
    fit_radius = int(cell.plan.get("fit_radius", 1))
    fit = fit_decay(out.rows, fit_radius, d, d_gamma, betas)
    out.rows.append(cell.row("predicted_p", fit["predicted_p"], r=fit_radius))
    if "beta" in fit:
        out.rows += [
            cell.row("fit_beta", fit["beta"], r=fit_radius),
            cell.row("fit_amplitude", fit["amplitude"], r=fit_radius),
            cell.row("fit_residual", fit["residual"], r=fit_radius),
        ]
        out.notes.append(f"INFO decay fit at r={fit_radius}: beta {fit['beta']:.2f}, "
                         f"residual {fit['residual']:.3e}, p = {fit['predicted_p']:.3f}")
    else:
        out.notes.append(f"INFO decay fit: {fit['message']}")
    return out


def iso_op(cell):
    out = OpResult()
    model = cell.model
    j = cell.scenario.perturbation
    _, basis = cell.ground()
    phi = basis[:, 0]
    all_ok = True
    for x in cell.centers("iso_centers"):
        xa = cell.x_axis(x)
        for r in cell.plan.get("iso_r", [1]):
            try:
                series = isoperimetry_series(model, j, phi, x, r)
            except GeometryError as exc:
                out.notes.append(f"INFO isoperimetry skipped at x={xa} r={r}: {exc}")
                continue
            for row in series.rows:
                out.rows.append(cell.row("iso_energy", row.energy, x=xa, r=r, i=row.i))
                out.rows.append(cell.row("iso_delta", row.delta, x=xa, r=r, i=row.i))
                out.rows.append(cell.row("iso_slack", row.slack, x=xa, r=r, i=row.i))
            ok = series.superadditive() and series.replayed_bound >= series.exact_e1 - 1e-10
            all_ok = all_ok and ok
            out.rows += [
                cell.row("iso_c", series.c_empirical, x=xa, r=r),
                cell.row("iso_exact_e1", series.exact_e1, x=xa, r=r),
                cell.row("iso_replayed_bound", series.replayed_bound, _flag(ok), x=xa, r=r),
                cell.row("iso_apriori_bound", series.apriori_bound, x=xa, r=r),
            ]
            out.notes.append(f"{_flag(ok).upper()} isoperimetry at x={xa} r={r}: E_1 {series.exact_e1:.3e}, "
                             f"replayed bound {series.replayed_bound:.3e}")
    out.flags["isoperimetry"] = all_ok
    return out


def pair_axis(graph, region_a, region_b):
    left = ",".join(str(site_axis(graph, s)) for s in region_a)
    right = ",".join(str(site_axis(graph, s)) for s in region_b)
    return f"{left}|{right}"


def lr_op(cell):
    out = OpResult()
    pairs_raw = cell.plan.get("lr_pairs", [])
    if not pairs_raw:
        return out
    graph = cell.graph
    times = [float(t) for t in cell.plan.get("lr_times", [0.5, 1.0, 2.0])]
    horizon = max(times) if max(times) > 0 else 1.0
    z = TimeDependentInteraction(((horizon, cell.model.interaction),), cell.model.space)
    f = tabulate(cell.plan.get("lr_f", "exp(1.0)"), graph.diameter(), F_FUNCTION)
    pairs = [(tuple(cell.scenario.sites(a)), tuple(cell.scenario.sites(b))) for a, b in pairs_raw]
    measurement = measure_lr(z, pairs, times, f, graph, rng=cell.rng("lr"),
                             pauli_cap=cell.config["lr_pauli_cap"])
    for row in measurement.rows:
        pa = pair_axis(graph, row.region_a, row.region_b)
        ok = row.measured <= row.bound + 1e-9
        out.rows.append(cell.row("lr_measured", row.measured, _flag(ok), pair=pa, t=row.t))
        out.rows.append(cell.row("lr_bound", row.bound, pair=pa, t=row.t))
    violations = measurement.violations()
    out.rows += [
        cell.row("lr_c_f", measurement.c_f),
        cell.row("lr_z_norm", measurement.z_norm),
        cell.row("lr_violations", len(violations), _flag(not violations)),
    ]
    out.flags["lieb_robinson"] = not violations
    out.notes.append(f"{_flag(not violations).upper()} Lieb-Robinson: {len(violations)} violation(s) "
                     f"over {len(measurement.rows)} rows, C_F {measurement.c_f:.4g}")
    return out


OP_TABLE = {"check": check_op, "contract": contract_op, "decay": decay_op, "iso": iso_op, "lr": lr_op}


@dataclass
class ScenarioOutcome:
    scenario: object
    rows: list
    flags: dict
    notes: list
    mismatches: list

    @property
    def exit_code(self):
        return EXIT_FLAG_MISMATCH if self.mismatches else EXIT_OK


def _plan_overrides(axes):
    plan = {}
    if "x" in axes:
        for key in ("centers", "ltqo_centers", "iso_centers"):
            plan[key] = [axes["x"]]
    if "r" in axes:
        plan["radii"] = [axes["r"]]
        plan["iso_r"] = [axes["r"]]
    return plan


def run_scenario(name, config, ops=None, overrides=None, plan_overrides=None, seed=None, ctx=None):
    """Run the requested ops on a scenario and compare assumption flags with its expectations."""
    ctx = ctx or RunContext(quiet=True)
    scenario = load_scenario(name, overrides, config)
    seed = config.get("seed", 0) if seed is None else seed
    cell = CellRun(scenario, config, seed, plan_overrides)
    ops = ops or OPS
    rows, flags, notes = [], {}, []
    for op in ops:
        if op not in OP_TABLE:
            raise ConfigError(f"unknown op {op!r}")
        ctx.log(f"{scenario.name}: running {op}")
        result = OP_TABLE[op](cell)
        rows += result.rows
        flags.update(result.flags)
        notes += result.notes
    mismatches = []
    for key in ASSUMPTIONS:
        if key in scenario.expected and key in flags and bool(scenario.expected[key]) != bool(flags[key]):
            mismatches.append(f"{key}: expected {_flag(scenario.expected[key])}, got {_flag(flags[key])}")
    for key in ("contract", "isoperimetry", "lieb_robinson"):
        if flags.get(key) is False:
            mismatches.append(f"{key}: failed")
    return ScenarioOutcome(scenario, sorted(rows, key=sort_key), flags, notes, mismatches)


def _cell_id(scenario, axes):
    return json.dumps([scenario, sorted((k, str(v)) for k, v in axes.items())])


def _run_cell(scenario, axes, ops, seed, config):
    start = time.time()
    overrides = {k: axes[k] for k in ("L", "c") if k in axes}
    outcome = run_scenario(scenario, config, ops, overrides, _plan_overrides(axes), seed)
    return _cell_id(scenario, axes), outcome.rows, time.time() - start


def run_sweep(spec, config, out_dir, jobs=1, resume=False, fmt="both", ctx=None):
    """Run every cell of a sweep and merge rows into the store; returns the store."""
    ctx = ctx or RunContext()
    store = ResultStore(out_dir, config.get("record_wall_time", False)).load()
    completed = set(load_progress(out_dir).get("completed", [])) if resume else set()
    seed = spec.seed if spec.seed is not None else config.get("seed", 0)
    pending = [axes for axes in spec.cells() if _cell_id(spec.scenario, axes) not in completed]
    ctx.log(f"{spec.name}: {len(pending)} of {len(spec.cells())} cells to run", force=True)

    def finish(axes, cell_id, rows, seconds):
        if store.record_wall_time:
            rows = [ResultRow(r.scenario, r.axes, r.metric, r.value, r.flag, seconds) for r in rows]
        store.upsert_rows(rows)
        store.note_timing(spec.scenario, axes, ",".join(spec.ops), seconds)
        completed.add(cell_id)
        store.write_jsonl()
        save_progress(out_dir, completed)
        ctx.note_cell(spec.scenario, axes, seconds)

    if jobs <= 1:
        for axes in pending:
            finish(axes, *_run_cell(spec.scenario, axes, spec.ops, seed, config))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run_cell, spec.scenario, axes, spec.ops, seed, config): axes
                       for axes in pending}
            for future in as_completed(futures):
                finish(futures[future], *future.result())
    store.write(fmt)
    ctx.log(f"{spec.name}: {len(store.rows)} rows in {out_dir}", force=True)
    return store


def report(store, fmt="both", profiles=True):
    """Write result files and per-center decay profiles; returns the written paths."""
    written = store.write(fmt)
    if profiles:
        groups = {}
        for row in store.sorted_rows():
            if row.metric != "decay_distance":
                continue
            axes = {k: v for k, v in row.axes.items() if k != "r"}
            name = "_".join([row.scenario] + [f"{k}{axes[k]}" for k in axes])
            groups.setdefault(name, []).append((row.axes["r"], row.value))
        for name, points in groups.items():
            written.append(store.write_profile(name, points))
    return written


def check_round_trip(store):
    """Re-read the CSV mirror and compare it with the in-memory rows."""
    path = store.out_dir / "results.csv"
    reread = read_csv(path)
    expected = store.sorted_rows()
    if len(reread) != len(expected):
        return False
    for a, b in zip(expected, reread):
        if a.key != b.key or a.flag != b.flag:
            return False
        if not (a.value == b.value or (np.isnan(a.value) and np.isnan(b.value))):
            return False
    return True


def run_command(args, ops, overrides=None):
    """Shared body of the single-scenario entry scripts."""
    config = prepare(args)
    ctx = RunContext()
    outcome = run_scenario(args.scenario, config, ops, overrides, ctx=ctx)
    out_dir = resolve_results_dir(args.out, config)
    if not args.out:
        out_dir = out_dir / outcome.scenario.name
    store = ResultStore(out_dir, config.get("record_wall_time", False)).load()
    store.upsert_rows(outcome.rows)
    report(store, args.fmt)
    for note in outcome.notes:
        print(note)
    for mismatch in outcome.mismatches:
        print(f"MISMATCH {mismatch}")
    ctx.log(f"{outcome.scenario.name}: {len(outcome.rows)} rows written to {out_dir}", force=True)
    return outcome.exit_code
