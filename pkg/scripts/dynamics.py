import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh, schur

from decay import check_f_function
from errors import EigensolverError, GeometryError, ResourceCapError
from lattice import boundary, fatten, region_distance
from model import Interaction, assemble, interaction_norm_f, truncate_across
from tensorops import (
    DEFAULT_DENSE_LIMIT,
    LocalOperator,
    delta_decomposition,
    embed,
    operator_norm,
    tracial_expectation,
    weyl_operators,
)

UNITARITY_TOL = 1e-9
EVOLVED_DROP_TOL = 1e-14
GENERATOR_DROP_TOL = 1e-13
TIME_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TimeDependentInteraction:
    """Piecewise-constant generator: ``layers`` is a list of ``(duration, Interaction)``."""

    layers: tuple
    space: object

    def __post_init__(self):
        layers = tuple((float(tau), inter) for tau, inter in self.layers)
        for tau, _ in layers:
            if tau <= 0:
                raise ValueError("layer durations must be positive")
        object.__setattr__(self, "layers", layers)

    @property
    def total_time(self):
        return sum(tau for tau, _ in self.layers)

    def boundaries(self):
        times = [0.0]
        for tau, _ in self.layers:
            times.append(times[-1] + tau)
        return times

    def is_zero(self):
        return all(inter.is_empty() for _, inter in self.layers)

    def map_layers(self, fn):
        return TimeDependentInteraction(tuple((tau, fn(inter)) for tau, inter in self.layers), self.space)

    def norm_f(self, f, graph):
        if not self.layers:
            return 0.0
        return max(float(interaction_norm_f(inter, f, graph)) for _, inter in self.layers)


@dataclass(frozen=True, eq=False)
class Propagator:
    unitary: np.ndarray
    generator: TimeDependentInteraction
    interval: tuple

    def unitarity_residual(self):
        u = self.unitary
        return operator_norm(u.conj().T @ u - np.eye(u.shape[0]))


@dataclass(frozen=True)
class LRRow:
    region_a: tuple
    region_b: tuple
    t: float
    measured: float
    bound: float


@dataclass(frozen=True)
class LRMeasurement:
    rows: list
    c_f: float
    z_norm: float

    def violations(self, tol=1e-9):
        return [row for row in self.rows if row.measured > row.bound + tol]


@dataclass(frozen=True, eq=False)
class StitchingDynamics:
    """``V(t) = Û(t) U(t)^dagger`` for a certificate generator and its truncation across ``∂Z``."""

    q: TimeDependentInteraction
    q_hat: TimeDependentInteraction
    l: TimeDependentInteraction
    z_region: frozenset

    def v(self, t=None):
        t = self.q.total_time if t is None else t
        u = propagate(self.q, 0.0, t).unitary
        u_hat = propagate(self.q_hat, 0.0, t).unitary
        return u_hat @ u.conj().T

    @property
    def v_final(self):
        return self.v()


class PropagatorCache:
    """Propagators keyed by generator identity and interval; one writer at a time."""

    def __init__(self):
        self._lock = threading.Lock()
        self._items = {}

    def get(self, z, s, t):
        key = (id(z), round(s, 12), round(t, 12))
        found = self._items.get(key)
        if found is not None and found.generator is z:
            return found
        prop = propagate(z, s, t)
        with self._lock:
            self._items.setdefault(key, prop)
            return self._items[key]

    def __len__(self):
        return len(self._items)


def _layer_exponential(interaction, space, tau):
    if space.dim > DEFAULT_DENSE_LIMIT:
        raise ResourceCapError(f"propagation needs a dense generator, dimension {space.dim} too large")
    h = assemble(interaction, space, matrix_free=False)
    w, v = eigh(h)
    return (v * np.exp(1j * tau * w)) @ v.conj().T


def propagate(z, s, t):
    """Ordered product of layer exponentials ``exp(i tau H_k)``, later layers on the left."""
    total = z.total_time
    if s < -TIME_TOL or t > total + TIME_TOL or s > t + TIME_TOL:
        raise ValueError(f"interval [{s}, {t}] outside [0, {total}]")
    u = np.eye(z.space.dim, dtype=complex)
    start = 0.0
    for tau, inter in z.layers:
        stop = start + tau
        overlap = min(stop, t) - max(start, s)
        if overlap > TIME_TOL and not inter.is_empty():
            u = _layer_exponential(inter, z.space, overlap) @ u
        start = stop
    prop = Propagator(u, z, (s, t))
    residual = prop.unitarity_residual()
    if residual > UNITARITY_TOL:
        raise EigensolverError(f"propagator unitarity residual {residual:.3e}")
    return prop


def heisenberg(z, t, s, a):
    """``α_z(t, s)[A] = U^dagger A U`` for a local operator ``A``."""
    u = propagate(z, s, t).unitary
    return u.conj().T @ embed(a, z.space) @ u


def _unit_local(rng, dim):
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = 0.5 * (g + g.conj().T)
    return h / operator_norm(h)


def _basis_on(region, space, cap):
    local = [weyl_operators(space.local_dims[s]) for s in region]
    ops = []
    for index in np.ndindex(*[len(b) for b in local]):
        if not any(index):
            continue
        m = np.ones((1, 1), dtype=complex)
        for basis, i in zip(local, index):
            m = np.kron(m, basis[i])
        ops.append(m)
        if len(ops) >= cap:
            break
    return ops


def measure_lr(z, pairs, times, f, graph, rng=None, samples=8, pauli_cap=64):
    rng = np.random.default_rng(0) if rng is None else rng
    space = z.space
    c_f = check_f_function(f, graph).c_f
    z_norm = z.norm_f(f, graph)
    rows = []
    for region_a, region_b in pairs:
        region_a = tuple(sorted(region_a))
        region_b = tuple(sorted(region_b))
        if set(region_a) & set(region_b):
            raise GeometryError(f"regions {region_a} and {region_b} overlap")
        f_sum = sum(f(int(graph.distance[x, y])) for x in region_a for y in region_b)
        basis_a = _basis_on(region_a, space, int(math.isqrt(pauli_cap)) or 1)
        basis_b = _basis_on(region_b, space, int(math.isqrt(pauli_cap)) or 1)
        for t in times:
            u = propagate(z, 0.0, t).unitary
            probes_a = [_unit_local(rng, space.dim_of(region_a)) for _ in range(samples)] + basis_a
            probes_b = [_unit_local(rng, space.dim_of(region_b)) for _ in range(samples)] + basis_b
            evolved = [u.conj().T @ embed(LocalOperator(region_a, a, hermitian_flag=False), space) @ u
                       for a in probes_a]
            full_b = [embed(LocalOperator(region_b, b, hermitian_flag=False), space) for b in probes_b]
            measured = 0.0
            for ea in evolved:
                for fb in full_b:
                    measured = max(measured, operator_norm(ea @ fb - fb @ ea))
            bound = (1.0 / c_f) * math.exp(c_f * abs(t) * z_norm) * f_sum
            rows.append(LRRow(region_a, region_b, float(t), measured, bound))
    return LRMeasurement(rows=rows, c_f=c_f, z_norm=z_norm)


def evolve_interaction(z, t, s, g, graph):
    """Terms ``Δ_{X_k}(α_z(t, s)[g_X])`` collected by support ``X_k``."""
    space = z.space
    u = propagate(z, s, t).unitary
    collected = {}
    for key, op in g.terms.items():
        evolved = u.conj().T @ embed(op, space) @ u
        for shell in delta_decomposition(evolved, key, space, graph):
            skey = frozenset(shell.support)
            collected[skey] = collected.get(skey, 0) + shell.matrix
    terms = {}
    for key, matrix in collected.items():
        matrix = 0.5 * (matrix + matrix.conj().T)
        if operator_norm(matrix) > EVOLVED_DROP_TOL:
            terms[key] = LocalOperator(tuple(sorted(key)), matrix)
    return Interaction(terms, g.anchor, g.label)


def evolved_norm_check(z, t, s, g, f, f_prime, graph):
    """Measured ``|||α[g]|||_{F'}`` next to ``e^{C_F |t-s| |||z|||_F} |||g|||_F`` (reported, not asserted)."""
    c_f = check_f_function(f, graph).c_f
    evolved = evolve_interaction(z, t, s, g, graph)
    lhs = float(interaction_norm_f(evolved, f_prime, graph))
    rhs = math.exp(c_f * abs(t - s) * z.norm_f(f, graph)) * float(interaction_norm_f(g, f, graph))
    return {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs + 1e-12}


def inverse_generator(z, graph):
    """Layer k becomes ``-α_z(t_{k-1}, 0)[z_k]`` so that its propagator is ``U_z^dagger``."""
    layers = []
    start = 0.0
    for tau, inter in z.layers:
        if inter.is_empty():
            layers.append((tau, inter))
        else:
            evolved = evolve_interaction(z, start, 0.0, inter, graph)
            layers.append((tau, evolved.scaled(-1.0)))
        start += tau
    return TimeDependentInteraction(tuple(layers), z.space)


def _unitary_log(w):
    """Principal ``-i log W`` of a unitary, Hermitian by construction."""
    t, q = schur(w, output="complex")
    phases = np.angle(np.diag(t))
    gen = (q * phases) @ q.conj().T
    return 0.5 * (gen + gen.conj().T)


def _anchored_terms(generator, anchor, space, graph):
    terms = {}
    for shell in delta_decomposition(generator, anchor, space, graph):
        m = 0.5 * (shell.matrix + shell.matrix.conj().T)
        if operator_norm(m) > GENERATOR_DROP_TOL:
            terms[frozenset(shell.support)] = LocalOperator(shell.support, m)
    return Interaction(terms, anchor if terms else None)


def combined_generator(z1, z2, anchor, graph, sub_steps=4):
    """Piecewise-constant generator of ``U_{z2} U_{z1}^dagger``, decomposed in shells around ``anchor``."""
    if z1.space.local_dims != z2.space.local_dims:
        raise ValueError("generators live on different spaces")
    if abs(z1.total_time - z2.total_time) > TIME_TOL:
        raise ValueError("generators have different total times")
    space = z1.space
    anchor = frozenset(anchor)
    grid = sorted(set(z1.boundaries()) | set(z2.boundaries()))
    times = [grid[0]]
    for a, b in zip(grid[:-1], grid[1:]):
        times += [a + (b - a) * (j + 1) / sub_steps for j in range(sub_steps)]

    def combined(t):
        return propagate(z2, 0.0, t).unitary @ propagate(z1, 0.0, t).unitary.conj().T

    layers = []
    previous = np.eye(space.dim, dtype=complex)
    for a, b in zip(times[:-1], times[1:]):
        current = combined(b)
        increment = current @ previous.conj().T
        generator = _unitary_log(increment) / (b - a)
        if operator_norm(generator) <= GENERATOR_DROP_TOL or not anchor:
            layer = Interaction({})
        else:
            layer = _anchored_terms(generator, anchor, space, graph)
        layers.append((b - a, layer))
        previous = current
    return TimeDependentInteraction(tuple(layers), space)


def truncated_generator(q, z_region):
    return q.map_layers(lambda inter: truncate_across(inter, z_region))


def stitching_generator(q, z_region, graph, sub_steps=4):
    if q.space.n_sites != graph.size:
        raise ValueError("certificate and region live on different graphs")
    z_region = frozenset(z_region)
    q_hat = truncated_generator(q, z_region)
    anchor = boundary(graph, z_region)
    l = combined_generator(q_hat, q, anchor, graph, sub_steps=sub_steps)
    return StitchingDynamics(q=q, q_hat=q_hat, l=l, z_region=z_region)


def certificate_generator(cert, space):
    """One unit of time per circuit layer, generated by the principal logarithms of the gates."""
    layers = []
    for layer in cert.layers():
        terms = [LocalOperator(g.support, _unitary_log(np.asarray(g.unitary, dtype=complex))) for g in layer]
        layers.append((1.0, Interaction.from_terms(terms)))
    return TimeDependentInteraction(tuple(layers), space)


def light_cone_radius(q, graph):
    """Spread of a piecewise-constant generator: sum over layers of the largest term diameter."""
    radius = 0
    for _, inter in q.layers:
        widths = [int(graph.distance[np.ix_(sorted(k), sorted(k))].max()) for k in inter.terms]
        radius += max(widths, default=0)
    return radius


def vz_locality_tails(dyn, x_region, r_grid, graph, rng=None, samples=4):
    """Locality tails and displacement of ``O -> V^dagger O V`` and of the exchanged map."""
    rng = np.random.default_rng(0) if rng is None else rng
    space = dyn.q.space
    v = dyn.v_final
    x_sites = tuple(sorted(x_region))
    dist_to_cut = region_distance(graph, x_region, boundary(graph, dyn.z_region)) if boundary(
        graph, dyn.z_region) else math.inf
    rows = []
    for exchanged, w in ((False, v), (True, v.conj().T)):
        probes = []
        for _ in range(samples):
            local = _unit_local(rng, space.dim_of(x_sites))
            probes.append(embed(LocalOperator(x_sites, local), space))
        images = [w.conj().T @ o @ w for o in probes]
        shift = max(operator_norm(img - o) for img, o in zip(images, probes))
        for r in r_grid:
            keep = fatten(graph, x_region, r)
            tail = max(operator_norm(img - tracial_expectation(img, space, keep)) for img in images)
            rows.append({"exchanged": exchanged, "r": r, "tail": tail, "shift": shift,
                         "dist_to_cut": dist_to_cut})
    return rows
