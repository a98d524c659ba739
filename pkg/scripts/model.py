import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from scipy.sparse.linalg import LinearOperator

from errors import ConfigError, EigensolverError, GeometryError
from lattice import ball
from tensorops import (
    DEFAULT_DENSE_LIMIT,
    DEFAULT_KERNEL_TOL,
    DEFAULT_LANCZOS_MAX_ITER,
    LocalOperator,
    SiteSpace,
    StateVector,
    apply_local,
    embed,
    extend,
    kernel_spectrum,
    operator_norm,
    product_vector,
    reduced_from_vector,
    trace_norm,
)

TERM_DROP_TOL = 1e-14
TRIVIAL_PRODUCT = "trivial-product"
CIRCUIT = "finite-depth-circuit"

UP = np.array([1.0, 0.0], dtype=complex)
DOWN = np.array([0.0, 1.0], dtype=complex)
PLUS = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2)

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

_BELL = (np.kron(UP, UP) + np.kron(DOWN, DOWN)) / np.sqrt(2)
_SINGLET = (np.kron(UP, DOWN) - np.kron(DOWN, UP)) / np.sqrt(2)

PRESETS = {
    "identity": _PAULI["I"],
    "pauli_x": _PAULI["X"],
    "pauli_y": _PAULI["Y"],
    "pauli_z": _PAULI["Z"],
    "proj_up": np.outer(UP, UP.conj()),
    "proj_down": np.outer(DOWN, DOWN.conj()),
    "bell_proj": np.outer(_BELL, _BELL.conj()),
    "singlet_proj": np.outer(_SINGLET, _SINGLET.conj()),
    "hadamard": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    "cz": np.diag([1, 1, 1, -1]).astype(complex),
}

LOCAL_STATES = {"up": UP, "down": DOWN, "plus": PLUS}

STABILIZER_PATTERN = re.compile(r"^\s*stabilizer\(\s*([IXYZ]+)\s*\)\s*$")
PAULI_PATTERN = re.compile(r"^\s*pauli\(\s*([IXYZ]+)\s*\)\s*$")
COMPLEX_CHARS = re.compile(r"[^0-9.eE+\-i]")


def pauli_string(letters):
    out = np.ones((1, 1), dtype=complex)
    for letter in letters:
        out = np.kron(out, _PAULI[letter])
    return out


def parse_complex(text):
    if isinstance(text, (int, float)):
        return complex(text)
    raw = str(text).strip().replace(" ", "")
    if not raw or COMPLEX_CHARS.search(raw):
        raise ConfigError(f"bad complex literal {text!r}")
    try:
        return complex(raw.replace("i", "j"))
    except ValueError:
        raise ConfigError(f"bad complex literal {text!r}") from None


def parse_matrix(spec):
    """Preset name, ``pauli(XZ)``, ``stabilizer(ZXZ)`` or an inline row-major matrix."""
    if isinstance(spec, str):
        if spec in PRESETS:
            return PRESETS[spec].copy()
        match = STABILIZER_PATTERN.match(spec)
        if match:
            p = pauli_string(match.group(1))
            return 0.5 * (np.eye(p.shape[0]) - p)
        match = PAULI_PATTERN.match(spec)
        if match:
            return pauli_string(match.group(1))
        raise ConfigError(f"unknown operator preset {spec!r}")
    rows = [[parse_complex(v) for v in row] for row in spec]
    n = len(rows)
    if n == 0 or any(len(row) != n for row in rows):
        raise ConfigError("inline matrix must be square")
    if n & (n - 1):
        raise ConfigError(f"inline matrix dimension {n} is not a power of two")
    return np.array(rows, dtype=complex)


@dataclass(frozen=True, eq=False)
class Interaction:
    terms: dict
    anchor: frozenset = None
    label: str = ""

    def __post_init__(self):
        terms = {}
        for key, op in self.terms.items():
            key = frozenset(key)
            if key != frozenset(op.support):
                raise ValueError(f"term key {sorted(key)} differs from its support {list(op.support)}")
            if not op.hermitian_flag:
                raise ValueError(f"term on {sorted(key)} is not flagged Hermitian")
            terms[key] = op
        anchor = None if self.anchor is None else frozenset(self.anchor)
        if anchor is not None:
            for key in terms:
                if not key & anchor:
                    raise ValueError(f"term on {sorted(key)} does not intersect the anchor {sorted(anchor)}")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "anchor", anchor)

    @classmethod
    def from_terms(cls, ops, anchor=None, label=""):
        merged = {}
        for op in ops:
            key = frozenset(op.support)
            if key in merged:
                op = LocalOperator(op.support, merged[key].matrix + op.matrix)
            merged[key] = op
        return cls(merged, anchor, label)

    @property
    def supports(self):
        return sorted(self.terms, key=lambda s: (len(s), sorted(s)))

    def is_empty(self):
        return not self.terms

    def scaled(self, factor):
        return Interaction(
            {k: LocalOperator(op.support, factor * op.matrix) for k, op in self.terms.items()},
            self.anchor,
            self.label,
        )

    def plus(self, other):
        anchor = self.anchor if self.anchor == other.anchor else None
        return Interaction.from_terms(list(self.terms.values()) + list(other.terms.values()), anchor)

    def norms(self):
        return {k: operator_norm(op.matrix) for k, op in self.terms.items()}


@dataclass(frozen=True, eq=False)
class HamiltonianModel:
    space: object
    interaction: Interaction
    ground_vector: StateVector = None
    kernel_tol: float = DEFAULT_KERNEL_TOL
    dense_limit: int = DEFAULT_DENSE_LIMIT
    max_iter: int = DEFAULT_LANCZOS_MAX_ITER

    @property
    def graph(self):
        return self.space.graph

    def with_interaction(self, interaction, ground_vector=None):
        return HamiltonianModel(self.space, interaction, ground_vector, self.kernel_tol,
                                self.dense_limit, self.max_iter)


@dataclass(frozen=True)
class NormEvaluation:
    value: float
    worst: object
    diagnostic: str = ""

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class FrustrationReport:
    passed: bool
    min_term_eig: float
    worst_eig_term: tuple
    max_term_residual: float
    worst_residual_term: tuple
    h_residual: float


@dataclass(frozen=True)
class LtqoFit:
    d_o: float
    m_table: tuple
    passed: bool
    tail_ratio: float


@dataclass(frozen=True)
class LtqoProfile:
    center: int
    rows: list
    fitted: LtqoFit
    lower_bound: bool = True


@dataclass(frozen=True)
class GapProfile:
    center: int
    rows: list
    fitted: tuple


@dataclass(frozen=True, eq=False)
class Gate:
    support: tuple
    unitary: np.ndarray
    layer: int = 0


@dataclass(frozen=True, eq=False)
class InvertibilityCertificate:
    kind: str
    reference: tuple
    aux_dims: tuple = None
    gates: tuple = ()
    m_budget: object = None
    norm_bound: float = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in (TRIVIAL_PRODUCT, CIRCUIT):
            raise ValueError(f"unknown certificate kind {self.kind!r}")
        if self.kind == TRIVIAL_PRODUCT and self.gates:
            raise ValueError("a trivial-product certificate has no gates")
        aux = tuple(self.aux_dims) if self.aux_dims else tuple(1 for _ in self.reference)
        object.__setattr__(self, "aux_dims", aux)
        for v in self.reference:
            if abs(np.linalg.norm(v) - 1.0) > 1e-10:
                raise ValueError("reference product state has an unnormalized factor")
        for gate in self.gates:
            u = np.asarray(gate.unitary)
            if operator_norm(u.conj().T @ u - np.eye(u.shape[0])) > 1e-10:
                raise ValueError(f"gate on {gate.support} is not unitary")
        for layer in self.layers():
            seen = set()
            for gate in layer:
                if seen & set(gate.support):
                    raise ValueError("gates within a layer must have disjoint supports")
                seen |= set(gate.support)

    @property
    def local_dims(self):
        return tuple(len(v) for v in self.reference)

    def layers(self):
        if not self.gates:
            return []
        depth = max(g.layer for g in self.gates) + 1
        return [[g for g in self.gates if g.layer == k] for k in range(depth)]

    def depth(self):
        return len(self.layers())


@dataclass(frozen=True)
class CertificateReport:
    fidelity: float
    passed: bool
    product_ok: bool
    split_ok: bool
    aux_state: np.ndarray = field(default=None, repr=False)


def _check_supports(interaction, space):
    for key, op in interaction.terms.items():
        if any(s < 0 or s >= space.n_sites for s in key):
            raise GeometryError(f"term support {sorted(key)} outside graph")
        op.check(space)


def assemble(interaction, space, matrix_free=None, dense_limit=DEFAULT_DENSE_LIMIT):
    """Dense Hamiltonian, or a ``LinearOperator`` applying the terms on the fly above ``dense_limit``."""
    _check_supports(interaction, space)
    if matrix_free is None:
        matrix_free = space.dim > dense_limit
    if not matrix_free:
        total = np.zeros((space.dim, space.dim), dtype=complex)
        for op in interaction.terms.values():
            total += embed(op, space)
        return total
    ops = list(interaction.terms.values())

    def matvec(v):
        v = np.asarray(v, dtype=complex).reshape(-1)
        out = np.zeros_like(v)
        for op in ops:
            out += apply_local(op.matrix, op.support, v, space)
        return out

    return LinearOperator((space.dim, space.dim), matvec=matvec, rmatvec=matvec, dtype=complex)


def apply_hamiltonian(interaction, space, vector):
    out = np.zeros(space.dim, dtype=complex)
    for op in interaction.terms.values():
        out += apply_local(op.matrix, op.support, vector, space)
    return out


def obc_restrict(interaction, z):
    z = frozenset(z)
    return Interaction({k: op for k, op in interaction.terms.items() if k <= z}, interaction.anchor,
                       interaction.label)


def truncate_across(interaction, z):
    z = frozenset(z)
    kept = {k: op for k, op in interaction.terms.items() if k <= z or not (k & z)}
    anchor = interaction.anchor
    if anchor is not None and not kept:
        anchor = None
    return Interaction(kept, anchor, interaction.label)


def crossing_terms(interaction, z):
    z = frozenset(z)
    return Interaction({k: op for k, op in interaction.terms.items() if (k & z) and not k <= z})


def localize(interaction, sites):
    """Terms inside ``sites`` re-indexed to positions in ``sorted(sites)``."""
    order = sorted(sites)
    position = {s: i for i, s in enumerate(order)}
    terms = {}
    for key, op in obc_restrict(interaction, sites).terms.items():
        new_key = frozenset(position[s] for s in key)
        terms[new_key] = LocalOperator(tuple(position[s] for s in op.support), op.matrix)
    return Interaction(terms)


def _term_diameter(graph, key):
    idx = sorted(key)
    return int(graph.distance[np.ix_(idx, idx)].max())


def interaction_norm_m(interaction, m, graph):
    totals = np.zeros(graph.size)
    diagnostic = ""
    for key, norm in interaction.norms().items():
        if norm == 0:
            continue
        weight = m(1 + _term_diameter(graph, key))
        if weight == 0:
            diagnostic = f"m({1 + _term_diameter(graph, key)}) = 0 with nonzero term on {sorted(key)}"
            return NormEvaluation(math.inf, tuple(sorted(key)), diagnostic)
        for x in key:
            totals[x] += norm / weight
    if not interaction.terms:
        return NormEvaluation(0.0, None)
    worst = int(np.argmax(totals))
    return NormEvaluation(float(totals[worst]), worst, diagnostic)


def interaction_norm_f(interaction, f, graph):
    acc = np.zeros((graph.size, graph.size))
    for key, norm in interaction.norms().items():
        idx = sorted(key)
        acc[np.ix_(idx, idx)] += norm
    table = f.values[graph.distance]
    blocked = (table == 0) & (acc > 0)
    if blocked.any():
        x, y = np.argwhere(blocked)[0]
        diagnostic = f"F({graph.distance[x, y]}) = 0 with nonzero terms covering ({x}, {y})"
        return NormEvaluation(math.inf, (int(x), int(y)), diagnostic)
    ratios = np.divide(acc, table, out=np.zeros_like(acc), where=table > 0)
    x, y = np.unravel_index(int(np.argmax(ratios)), ratios.shape)
    return NormEvaluation(float(ratios[x, y]), (int(x), int(y)))


def interaction_commutator(z1, z2, space):
    terms = []
    for s1, a in z1.terms.items():
        for s2, b in z2.terms.items():
            if not s1 & s2:
                continue
            support = tuple(sorted(s1 | s2))
            am = extend(a, support, space).matrix
            bm = extend(b, support, space).matrix
            c = 1j * (am @ bm - bm @ am)
            if operator_norm(c) > TERM_DROP_TOL:
                terms.append(LocalOperator(support, 0.5 * (c + c.conj().T)))
    anchor = z1.anchor if z1.anchor is not None else z2.anchor
    merged = Interaction.from_terms(terms)
    kept = {k: op for k, op in merged.terms.items() if operator_norm(op.matrix) > TERM_DROP_TOL}
    if anchor is not None and any(not (k & anchor) for k in kept):
        anchor = None
    return Interaction(kept, anchor)


def check_frustration_free(model):
    if model.ground_vector is None:
        raise ValueError("frustration-freeness check needs a ground vector")
    omega = model.ground_vector.amplitudes
    tol = model.kernel_tol
    min_eig, worst_eig = math.inf, None
    max_res, worst_res = 0.0, None
    h_omega = np.zeros_like(omega)
    for key, op in sorted(model.interaction.terms.items(), key=lambda item: sorted(item[0])):
        low = float(np.linalg.eigvalsh(op.matrix).min())
        if low < min_eig:
            min_eig, worst_eig = low, tuple(sorted(key))
        image = apply_local(op.matrix, op.support, omega, model.space)
        h_omega += image
        residual = float(np.linalg.norm(image))
        if residual > max_res:
            max_res, worst_res = residual, tuple(sorted(key))
    if min_eig is math.inf:
        min_eig = 0.0
    h_residual = float(np.linalg.norm(h_omega))
    passed = min_eig >= -tol and max_res <= tol
    return FrustrationReport(passed, min_eig, worst_eig, max_res, worst_res, h_residual)


def region_hamiltonian(model, sites):
    local_space = model.space.sub(sites)
    local = localize(model.interaction, sites)
    return local_space, assemble(local, local_space, dense_limit=model.dense_limit)


def region_kernel(model, sites, rng=None):
    local_space, h = region_hamiltonian(model, sites)
    basis, values, gap = kernel_spectrum(h, tol=model.kernel_tol, dense_limit=model.dense_limit, rng=rng,
                                         max_iter=model.max_iter)
    return local_space, basis, values, gap


def support_projector(rho, cutoff=1e-12):
    """Projector onto the range of a density matrix."""
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    keep = v[:, w > cutoff]
    return keep @ keep.conj().T


def adapted_ground_basis(basis, local_space, positions, mu_region):
    """Rotate a kernel basis to diagonalize its weight outside the range of ``mu_region`` on ``positions``.

    Returns the rotated basis ordered by decreasing weight, and the weights.
    """
    if basis.shape[1] <= 1:
        return basis, np.zeros(basis.shape[1])
    q = support_projector(mu_region)
    projected = np.stack([apply_local(q, positions, basis[:, j], local_space) for j in range(basis.shape[1])], axis=1)
    gram = basis.conj().T @ projected
    weight = np.eye(basis.shape[1]) - 0.5 * (gram + gram.conj().T)
    w, v = eigh(weight)
    order = np.argsort(-w)
    return basis @ v[:, order], w[order]


def _random_unit_combinations(rng, basis, count):
    k = basis.shape[1]
    coeffs = rng.standard_normal((k, count)) + 1j * rng.standard_normal((k, count))
    coeffs /= np.linalg.norm(coeffs, axis=0, keepdims=True)
    return basis @ coeffs


def measure_ltqo(model, x, r_grid, k_grid, samples=64, rng=None, d_candidates=(0.0, 1.0, 2.0),
                 tail_ratio=0.5, zero_tol=1e-9):
    """Lower estimate of the kernel-sphere sup of ``|rho_psi - mu|`` on shrunken balls."""
    if model.ground_vector is None:
        raise ValueError("LTQO measurement needs the ground vector")
    rng = np.random.default_rng(0) if rng is None else rng
    graph = model.graph
    omega = model.ground_vector.amplitudes
    rows = []
    for r in sorted(r_grid):
        outer = sorted(ball(graph, x, r))
        local_space, basis, _, _ = region_kernel(model, outer, rng)
        if basis.shape[1] == 0:
            raise EigensolverError(f"kernel of H on B_{r}({x}) is empty")
        for k in sorted(k_grid):
            if k > r:
                continue
            inner = sorted(ball(graph, x, r - k))
            positions = [outer.index(s) for s in inner]
            mu = reduced_from_vector(omega, model.space, inner)
            adapted, _ = adapted_ground_basis(basis, local_space, positions, mu)
            candidates = adapted
            if basis.shape[1] > 1 and samples:
                candidates = np.hstack([adapted, _random_unit_combinations(rng, basis, samples)])
            worst = 0.0
            for j in range(candidates.shape[1]):
                rho = reduced_from_vector(candidates[:, j], local_space, positions)
                worst = max(worst, trace_norm(rho - mu))
            rows.append((r, k, min(worst, 2.0)))
    fitted = fit_ltqo(rows, d_candidates, tail_ratio=tail_ratio, zero_tol=zero_tol)
    return LtqoProfile(center=x, rows=rows, fitted=fitted)


def fit_ltqo(rows, d_candidates=(0.0, 1.0, 2.0), tail_ratio=0.5, zero_tol=1e-9):
    """Smallest candidate ``d_O`` with its covering, non-increasing ``m_O`` table.

    Only ``min(d_candidates)`` is fitted. A larger ``d_O`` divides each row by a larger
    ``r**d_O`` and so gives a pointwise smaller table, while the verdict reads the raw
    sups and does not depend on ``d_O``. The fit passes when, at the largest radius,
    the measured sup decays along k below ``tail_ratio`` of its unshrunk value, or
    vanishes everywhere.
    """
    if not rows:
        raise ValueError("no LTQO rows to fit")
    d_o = float(min(d_candidates))
    k_max = max(k for _, k, _ in rows)
    raw = np.zeros(k_max + 1)
    for r, k, sup in rows:
        raw[k] = max(raw[k], sup / (r ** d_o if r >= 1 else 1.0))
    table = np.maximum.accumulate(raw[::-1])[::-1]

    r_top = max(r for r, _, _ in rows)
    top = np.zeros(k_max + 1)
    for r, k, sup in rows:
        if r == r_top:
            top[k] = max(top[k], sup)
    top = np.maximum.accumulate(top[::-1])[::-1]
    k_top = max(k for r, k, _ in rows if r == r_top)
    vanishing = all(sup <= zero_tol for _, _, sup in rows)
    passed = vanishing or top[k_top] <= tail_ratio * top[0]
    return LtqoFit(d_o=d_o, m_table=tuple(float(v) for v in table), passed=bool(passed), tail_ratio=tail_ratio)


def measure_gap(model, x, r_grid, d_candidates=(0.0, 1.0, 2.0), cap=16.0, rng=None):
    graph = model.graph
    rows = []
    for r in sorted(r_grid):
        sites = sorted(ball(graph, x, r))
        _, basis, _, gap = region_kernel(model, sites, rng)
        if gap is None:
            raise EigensolverError(f"no gap resolvable at tolerance on B_{r}({x})")
        rows.append((r, gap, basis.shape[1]))
    return GapProfile(center=x, rows=rows, fitted=fit_gap(rows, d_candidates, cap))


def fit_gap(rows, d_candidates=(0.0, 1.0, 2.0), cap=16.0):
    """``(C_gamma, d_gamma)`` for the smallest candidate exponent whose constant stays within ``cap``."""
    best = None
    for d in sorted(d_candidates):
        c = max((1.0 / gamma) / (r ** d if r >= 1 else 1.0) for r, gamma, _ in rows)
        if best is None or c < best[0]:
            best = (c, float(d))
        if c <= cap:
            return float(c), float(d)
    return best


def intersection_projector(interaction, space, tol=1e-12, max_squarings=64):
    """Projector onto the common kernel of all terms, as the limit of products of term-kernel projections."""
    product = np.eye(space.dim, dtype=complex)
    for op in interaction.terms.values():
        w, v = np.linalg.eigh(op.matrix)
        kernel = v[:, w <= DEFAULT_KERNEL_TOL]
        local = LocalOperator(op.support, kernel @ kernel.conj().T)
        product = embed(local, space) @ product
    for _ in range(max_squarings):
        squared = product @ product
        if operator_norm(squared - product) <= tol:
            product = squared
            break
        product = squared
    return 0.5 * (product + product.conj().T)


def kernel_projector_of(model, sites):
    local_space, h = region_hamiltonian(model, sites)
    basis, _, _ = kernel_spectrum(np.asarray(h), tol=model.kernel_tol, dense_limit=np.inf)
    return basis @ basis.conj().T


def circuit_state(cert):
    """``U Π`` on the doubled space, gates applied layer by layer."""
    space_dims = tuple(len(v) for v in cert.reference)
    vec = product_vector(cert.reference)
    space = SiteSpace(space_dims)
    for layer in cert.layers():
        for gate in layer:
            vec = apply_local(np.asarray(gate.unitary), gate.support, vec, space)
    return vec


def split_physical(vec, phys_dims, aux_dims):
    """Matrix ``M[phys, aux]`` of a vector on sites with local space ``phys ⊗ aux``."""
    shape = []
    for d, a in zip(phys_dims, aux_dims):
        shape += [d, a]
    n = len(phys_dims)
    tensor = vec.reshape(shape).transpose([2 * i for i in range(n)] + [2 * i + 1 for i in range(n)])
    return tensor.reshape(int(np.prod(phys_dims)), int(np.prod(aux_dims)))


def verify_certificate(cert, model, fidelity_tol=1e-9):
    phys_dims = model.space.local_dims
    if len(cert.reference) != len(phys_dims):
        raise ValueError("certificate and model have different site counts")
    for d, a, v in zip(phys_dims, cert.aux_dims, cert.reference):
        if len(v) != d * a:
            raise ValueError("reference factor dimension differs from phys x aux")
    if model.ground_vector is None:
        raise ValueError("certificate check needs the ground vector")

    out = split_physical(circuit_state(cert), phys_dims, cert.aux_dims)
    omega = model.ground_vector.amplitudes
    rho = out @ out.conj().T
    fidelity = float(np.vdot(omega, rho @ omega).real)
    _, _, vh = np.linalg.svd(out)
    aux_state = vh[0]

    product_ok = all(abs(np.linalg.norm(v) - 1.0) <= 1e-10 for v in cert.reference)
    split_ok = True
    for i in range(model.space.n_sites):
        reduced = reduced_from_vector(omega, model.space, [i])
        rank = int((np.linalg.eigvalsh(reduced) > 1e-10).sum())
        allowed = 1
        for gate in cert.gates:
            if i in gate.support:
                allowed *= int(np.prod([len(cert.reference[s]) for s in gate.support if s != i]))
        if rank > allowed:
            split_ok = False
    passed = fidelity >= 1.0 - fidelity_tol and product_ok and split_ok
    return CertificateReport(fidelity, passed, product_ok, split_ok, aux_state)
