import copy
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from decay import M_FUNCTION, tabulate
from errors import ConfigError, GeometryError
from lattice import chain, explicit, grid, read_edge_list, ring
from model import (
    CIRCUIT,
    LOCAL_STATES,
    TRIVIAL_PRODUCT,
    Gate,
    HamiltonianModel,
    Interaction,
    InvertibilityCertificate,
    assemble,
    circuit_state,
    parse_complex,
    parse_matrix,
    split_physical,
)
from settings import BASE_DIR, SCENARIO_DIR, SWEEP_DIR, read_toml
from tensorops import LocalOperator, SiteSpace, StateVector, kernel_spectrum, product_vector

SECTIONS = {"name", "description", "graph", "hamiltonian", "perturbation", "certificate", "plan", "expected"}
TERM_KEYS = {"op", "sites", "each_site", "each_bond", "each_window", "coefficient", "size_decay", "layer"}
EXPECTED_KEYS = ("frustration_free", "ltqo", "gap", "invertible")
SWEEP_AXES = ("L", "c", "x", "r")
SECTION_KEYS = {
    "graph": {"kind", "L", "width", "height", "edges", "n_vertices", "path"},
    "hamiltonian": {"terms", "ground_state", "kernel_tol"},
    "perturbation": {"anchor", "terms"},
    "certificate": {"kind", "reference", "aux_dims", "gates", "m_budget", "norm_bound"},
}


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    path: Path
    params: dict
    graph: object
    model: HamiltonianModel
    perturbation: Interaction
    certificate: InvertibilityCertificate
    plan: dict
    expected: dict
    raw: dict = field(default_factory=dict, repr=False)

    def site(self, label):
        return resolve_site(self.graph, label, "plan")

    def sites(self, labels):
        return [self.site(label) for label in labels]

    def rebuild(self, **overrides):
        return build_scenario(self.raw, self.path, {**self.params, **overrides}, self.model.space.max_dim,
                              self.model.kernel_tol, self.model.dense_limit, self.model.max_iter)


@dataclass(frozen=True)
class SweepSpec:
    name: str
    scenario: str
    axes: dict
    ops: tuple
    seed: int = None

    def cells(self):
        names = [a for a in SWEEP_AXES if a in self.axes] + sorted(a for a in self.axes if a not in SWEEP_AXES)
        if not names:
            return [{}]
        return [dict(zip(names, values)) for values in itertools.product(*(self.axes[n] for n in names))]


def scenario_path(name_or_path):
    path = Path(name_or_path)
    if path.suffix == ".toml" and path.exists():
        return path
    candidate = SCENARIO_DIR / f"{name_or_path}.toml"
    if candidate.exists():
        return candidate
    raise ConfigError(f"unknown scenario {name_or_path!r}")


def sweep_path(name_or_path):
    path = Path(name_or_path)
    if path.suffix == ".toml" and path.exists():
        return path
    candidate = SWEEP_DIR / f"{name_or_path}.toml"
    if candidate.exists():
        return candidate
    raise ConfigError(f"unknown sweep {name_or_path!r}")


def resolve_site(graph, label, where):
    if isinstance(label, list):
        label = tuple(label)
    if isinstance(label, int) and label < 0:
        if -label > graph.size:
            raise ConfigError(f"{where}: site {label} out of range")
        return graph.size + label
    try:
        return graph.index(label)
    except GeometryError:
        raise ConfigError(f"{where}: site not in graph: {label!r}") from None


def _check_keys(section, allowed, where):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")


def build_graph_from(section, params, path):
    kind = section.get("kind", "chain")
    length = int(params.get("L", section.get("L", 0)))
    if kind == "chain":
        return chain(length)
    if kind == "ring":
        return ring(length)
    if kind == "grid":
        return grid(int(section["width"]), int(section["height"]))
    if kind == "explicit":
        return explicit(section["edges"], section.get("n_vertices"))
    if kind == "edge_file":
        edge_path = Path(section["path"])
        if not edge_path.is_absolute():
            edge_path = (path.parent if path else BASE_DIR) / edge_path
        return read_edge_list(edge_path)
    raise ConfigError(f"graph.kind: unknown graph kind {kind!r}")


def _edge_list(graph):
    return sorted(graph.edges)


def _expand_supports(graph, entry, where):
    if "sites" in entry:
        return [tuple(resolve_site(graph, s, where) for s in entry["sites"])]
    if entry.get("each_site"):
        return [(i,) for i in range(graph.size)]
    if entry.get("each_bond"):
        return [tuple(edge) for edge in _edge_list(graph)]
    if entry.get("each_window"):
        width = int(entry["each_window"])
        return [tuple(range(i, i + width)) for i in range(graph.size - width + 1)]
    raise ConfigError(f"{where}: term needs sites, each_site, each_bond or each_window")


def _ordered_matrix(matrix, support):
    """Reorder a matrix given on ``support`` (config order) to ascending site order."""
    order = list(support)
    if order == sorted(order):
        return matrix
    n = len(order)
    tensor = matrix.reshape([2] * (2 * n))
    target = np.argsort(order)
    perm = list(target) + [n + t for t in target]
    return tensor.transpose(perm).reshape(matrix.shape)


def parse_terms(graph, entries, where, n_sites):
    ops = []
    for idx, entry in enumerate(entries or []):
        here = f"{where}[{idx}]"
        _check_keys(entry, TERM_KEYS, here)
        try:
            matrix = parse_matrix(entry["op"])
        except KeyError:
            raise ConfigError(f"{here}: missing op") from None
        except ConfigError as exc:
            raise ConfigError(f"{here}.op: {exc}") from None
        coefficient = float(entry.get("coefficient", 1.0))
        if "size_decay" in entry:
            coefficient *= math.exp(-float(entry["size_decay"]) * n_sites)
        for support in _expand_supports(graph, entry, here):
            if len(set(support)) != len(support):
                raise ConfigError(f"{here}: repeated site in support")
            if matrix.shape[0] != 2 ** len(support):
                raise ConfigError(f"{here}: operator dimension {matrix.shape[0]} does not fit {len(support)} site(s)")
            ordered = _ordered_matrix(coefficient * matrix, support)
            try:
                ops.append(LocalOperator(tuple(sorted(support)), ordered))
            except ValueError as exc:
                raise ConfigError(f"{here}: {exc}") from None
    return ops


def _local_state(spec, where):
    if isinstance(spec, str):
        if spec not in LOCAL_STATES:
            raise ConfigError(f"{where}: unknown local state {spec!r}")
        return LOCAL_STATES[spec].copy()
    vec = np.array([parse_complex(v) for v in spec], dtype=complex)
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ConfigError(f"{where}: zero local state")
    return vec / norm


def _reference(section, n, where):
    spec = section.get("reference", "down")
    if isinstance(spec, list) and spec and isinstance(spec[0], (list, str)) and len(spec) == n:
        return tuple(_local_state(s, f"{where}.reference[{i}]") for i, s in enumerate(spec))
    return tuple(_local_state(spec, f"{where}.reference") for _ in range(n))


def _greedy_layers(supports):
    layers = []
    assignment = []
    for support in supports:
        for k, used in enumerate(layers):
            if not used & set(support):
                used |= set(support)
                assignment.append(k)
                break
        else:
            layers.append(set(support))
            assignment.append(len(layers) - 1)
    return assignment


def parse_certificate(graph, section, diameter):
    where = "certificate"
    kind = section.get("kind", TRIVIAL_PRODUCT)
    n = graph.size
    reference = _reference(section, n, where)
    aux = section.get("aux_dims", 1)
    aux_dims = tuple(aux) if isinstance(aux, list) else tuple(int(aux) for _ in range(n))
    gates = []
    for idx, entry in enumerate(section.get("gates", [])):
        here = f"{where}.gates[{idx}]"
        _check_keys(entry, TERM_KEYS, here)
        try:
            unitary = parse_matrix(entry["op"])
        except ConfigError as exc:
            raise ConfigError(f"{here}.op: {exc}") from None
        supports = _expand_supports(graph, entry, here)
        if "layer" in entry:
            layers = [int(entry["layer"])] * len(supports)
        else:
            base = max((g.layer for g in gates), default=-1) + 1
            layers = [base + k for k in _greedy_layers(supports)]
        for support, layer in zip(supports, layers):
            gates.append(Gate(tuple(sorted(support)), _ordered_matrix(unitary, support), layer))
    budget = section.get("m_budget")
    m_budget = tabulate(budget, diameter + 1, M_FUNCTION) if budget else None
    try:
        return InvertibilityCertificate(
            kind=CIRCUIT if gates else kind,
            reference=reference,
            aux_dims=aux_dims,
            gates=tuple(gates),
            m_budget=m_budget,
            norm_bound=section.get("norm_bound"),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _ground_vector(spec, space, interaction, certificate, kernel_tol):
    if spec in LOCAL_STATES:
        return StateVector(space, product_vector([LOCAL_STATES[spec]] * space.n_sites))
    if spec == "certificate":
        out = split_physical(circuit_state(certificate), space.local_dims, certificate.aux_dims)
        u, _, _ = np.linalg.svd(out, full_matrices=False)
        return StateVector(space, u[:, 0])
    if spec == "kernel":
        basis, _, _ = kernel_spectrum(assemble(interaction, space), tol=kernel_tol)
        if basis.shape[1] != 1:
            raise ConfigError(f"hamiltonian.ground_state: kernel has dimension {basis.shape[1]}, expected 1")
        return StateVector(space, basis[:, 0])
    raise ConfigError(f"hamiltonian.ground_state: unknown ground state {spec!r}")


def build_scenario(raw, path=None, overrides=None, max_dim=16384, kernel_tol=1e-8, dense_limit=2048,
                   max_iter=600):
    overrides = dict(overrides or {})
    _check_keys(raw, SECTIONS, "scenario")
    for section, allowed in SECTION_KEYS.items():
        _check_keys(raw.get(section, {}), allowed, section)
    params = dict(overrides)
    graph_section = dict(raw.get("graph", {}))
    try:
        graph = build_graph_from(graph_section, params, path)
    except (GeometryError, KeyError, ValueError) as exc:
        raise ConfigError(f"graph: {exc}") from None
    space = SiteSpace(tuple(2 for _ in range(graph.size)), graph, max_dim)

    ham = raw.get("hamiltonian", {})
    h_ops = parse_terms(graph, ham.get("terms"), "hamiltonian.terms", graph.size)
    interaction = Interaction.from_terms(h_ops, label="h")

    pert = copy.deepcopy(raw.get("perturbation", {}))
    if "c" in params:
        for entry in pert.get("terms", []):
            if "size_decay" in entry:
                entry["size_decay"] = float(params["c"])
    j_ops = parse_terms(graph, pert.get("terms"), "perturbation.terms", graph.size)
    anchor = None
    if "anchor" in pert:
        anchor = frozenset(resolve_site(graph, s, "perturbation.anchor") for s in pert["anchor"])
    try:
        perturbation = Interaction.from_terms(j_ops, anchor=anchor if j_ops else None, label="j")
    except ValueError as exc:
        raise ConfigError(f"perturbation: {exc}") from None

    certificate = parse_certificate(graph, raw.get("certificate", {}), graph.diameter())
    tol = float(ham.get("kernel_tol", kernel_tol))
    ground = _ground_vector(ham.get("ground_state", "down"), space, interaction, certificate, tol)
    model = HamiltonianModel(space, interaction, ground, tol, dense_limit, max_iter)

    expected = dict(raw.get("expected", {}))
    _check_keys(expected, EXPECTED_KEYS, "expected")
    name = raw.get("name") or (path.stem if path else "scenario")
    resolved = {"L": graph.size}
    decays = {float(entry["size_decay"]) for entry in pert.get("terms", []) if "size_decay" in entry}
    if len(decays) == 1:
        resolved["c"] = decays.pop()
    return Scenario(name, path, resolved, graph, model, perturbation, certificate,
                    dict(raw.get("plan", {})), expected, raw)


def load_scenario(name_or_path, overrides=None, config=None):
    config = config or {}
    path = scenario_path(name_or_path)
    raw = read_toml(path)
    try:
        return build_scenario(
            raw,
            path,
            overrides,
            max_dim=int(config.get("max_dim", 16384)),
            kernel_tol=float(config.get("kernel_tol", 1e-8)),
            dense_limit=int(config.get("dense_limit", 2048)),
            max_iter=int(config.get("lanczos_max_iter", 600)),
        )
    except ConfigError as exc:
        if exc.path is None:
            raise ConfigError(str(exc), path=path) from None
        raise


def load_sweep(name_or_path, config=None):
    config = config or {}
    path = sweep_path(name_or_path)
    raw = read_toml(path)
    _check_keys(raw, {"name", "scenario", "axes", "ops", "seed"}, "sweep")
    if "scenario" not in raw:
        raise ConfigError("sweep needs a scenario", path=path)
    axes = {}
    for name, values in raw.get("axes", {}).items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"axes.{name}: expected a non-empty list", path=path)
        axes[name] = values
    spec = SweepSpec(
        name=raw.get("name", path.stem),
        scenario=raw["scenario"],
        axes=axes,
        ops=tuple(raw.get("ops", ["decay"])),
        seed=raw.get("seed"),
    )
    cap = int(config.get("sweep_cap", 256))
    if len(spec.cells()) > cap:
        raise ConfigError(f"sweep has {len(spec.cells())} cells, cap is {cap}", path=path)
    return spec
