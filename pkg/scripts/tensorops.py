import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import eigh, eigh_tridiagonal, svdvals
from scipy.sparse.linalg import LinearOperator

from errors import EigensolverError, KernelAmbiguityError, ResourceCapError
from lattice import fatten

DEFAULT_MAX_DIM = 2 ** 14
DEFAULT_DENSE_LIMIT = 2 ** 11
DEFAULT_KERNEL_TOL = 1e-8
DEFAULT_LANCZOS_MAX_ITER = 600
HERMITIAN_TOL = 1e-10
STATE_TOL = 1e-10
CHOI_MAX_DIM = 64
DUMP_MAGIC = b"STLB0001"

SCHRODINGER = "schrodinger"
HEISENBERG = "heisenberg"


@dataclass(frozen=True, eq=False)
class SiteSpace:
    local_dims: tuple
    graph: object = None
    max_dim: int = DEFAULT_MAX_DIM

    def __post_init__(self):
        dims = tuple(int(d) for d in self.local_dims)
        if not dims or min(dims) < 1:
            raise ValueError("local dimensions must be positive integers")
        object.__setattr__(self, "local_dims", dims)
        total = 1
        for d in dims:
            total *= d
        if total > self.max_dim:
            raise ResourceCapError(f"Hilbert dimension {total} exceeds cap {self.max_dim}")

    @property
    def n_sites(self):
        return len(self.local_dims)

    @property
    def dim(self):
        return int(np.prod(self.local_dims))

    def dims(self, sites):
        return tuple(self.local_dims[s] for s in sites)

    def dim_of(self, sites):
        return int(np.prod(self.dims(sites))) if sites else 1

    def rest(self, sites):
        keep = set(sites)
        return tuple(s for s in range(self.n_sites) if s not in keep)

    def sub(self, sites):
        return SiteSpace(self.dims(sorted(sites)), None, self.max_dim)

    def with_dims(self, sites, new_dims):
        dims = list(self.local_dims)
        for s, d in zip(sites, new_dims):
            dims[s] = d
        return SiteSpace(tuple(dims), self.graph, self.max_dim)


@dataclass(frozen=True, eq=False)
class LocalOperator:
    support: tuple
    matrix: np.ndarray
    hermitian_flag: bool = True

    def __post_init__(self):
        support = tuple(sorted(int(s) for s in self.support))
        matrix = np.asarray(self.matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("local operator must be a square matrix")
        if self.hermitian_flag and not is_hermitian(matrix):
            raise ValueError("operator flagged Hermitian is not Hermitian")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "matrix", matrix)

    def check(self, space):
        if any(s < 0 or s >= space.n_sites for s in self.support):
            raise ValueError(f"support {self.support} outside space")
        if self.matrix.shape[0] != space.dim_of(self.support):
            raise ValueError(
                f"dimension mismatch: matrix {self.matrix.shape[0]} vs support {space.dim_of(self.support)}"
            )


@dataclass(frozen=True, eq=False)
class StateVector:
    space: SiteSpace
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.space.dim:
            raise ValueError("state vector length does not match the space")
        if abs(np.linalg.norm(amps) - 1.0) > STATE_TOL:
            raise ValueError("state vector is not normalized")
        object.__setattr__(self, "amplitudes", amps)

    def density(self):
        return DensityMatrix(self.space, tuple(range(self.space.n_sites)), vector=self.amplitudes)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """State on ``sites`` of ``space``; stored as a matrix or, when pure, as a vector."""

    space: SiteSpace
    sites: tuple
    matrix: np.ndarray = None
    vector: np.ndarray = None

    @property
    def dims(self):
        return self.space.dims(self.sites)

    @property
    def dim(self):
        return int(np.prod(self.dims)) if self.sites else 1

    @property
    def is_pure_form(self):
        return self.vector is not None

    def to_matrix(self):
        if self.matrix is not None:
            return self.matrix
        return np.outer(self.vector, self.vector.conj())

    def validate(self, tol=STATE_TOL):
        if self.vector is not None:
            return abs(np.linalg.norm(self.vector) - 1.0) <= tol
        m = self.matrix
        if abs(np.trace(m).real - 1.0) > tol or not is_hermitian(m, tol):
            return False
        return np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() >= -tol


@dataclass(frozen=True)
class ChoiReport:
    cp: bool
    tp_or_ip: bool
    min_choi_eig: float
    tp_residual: float
    unital_residual: float
    contractive: bool
    compressed: bool


@dataclass(frozen=True, eq=False)
class LinearMap:
    """Linear map on full matrices given by callables (not necessarily CP)."""

    dim_in: int
    dim_out: int
    forward: Callable
    adjoint: Callable
    direction: str = SCHRODINGER

    def apply(self, x):
        return self.forward(x)

    def apply_adjoint(self, y):
        return self.adjoint(y)


def is_hermitian(matrix, tol=HERMITIAN_TOL):
    scale = max(1.0, float(np.abs(matrix).max())) if matrix.size else 1.0
    return bool(np.abs(matrix - matrix.conj().T).max(initial=0.0) <= tol * scale)


def pure_state(amplitudes, space):
    return StateVector(space, amplitudes).density()


def mixed_state(matrix, space, sites=None):
    sites = tuple(range(space.n_sites)) if sites is None else tuple(sorted(sites))
    return DensityMatrix(space, sites, matrix=np.asarray(matrix, dtype=complex))


def product_vector(local_vectors):
    vec = np.ones(1, dtype=complex)
    for v in local_vectors:
        vec = np.kron(vec, np.asarray(v, dtype=complex))
    return vec


def _split_matrix(matrix, dims, support):
    """Reorder a full matrix to axes (support, rest, support', rest')."""
    n = len(dims)
    support = list(support)
    rest = [s for s in range(n) if s not in set(support)]
    ds = int(np.prod([dims[s] for s in support])) if support else 1
    dr = int(np.prod([dims[s] for s in rest])) if rest else 1
    perm = support + rest + [n + s for s in support] + [n + s for s in rest]
    tensor = matrix.reshape(tuple(dims) + tuple(dims)).transpose(perm)
    return tensor.reshape(ds, dr, ds, dr)


def _merge_matrix(block, dims, support):
    n = len(dims)
    support = list(support)
    rest = [s for s in range(n) if s not in set(support)]
    order = support + rest
    shape = tuple(dims[s] for s in order)
    tensor = block.reshape(shape + shape)
    perm = order + [n + s for s in order]
    inverse = np.argsort(perm)
    total = int(np.prod(dims))
    return tensor.transpose(inverse).reshape(total, total)


def _split_vector(vector, dims, support):
    n = len(dims)
    support = list(support)
    rest = [s for s in range(n) if s not in set(support)]
    ds = int(np.prod([dims[s] for s in support])) if support else 1
    tensor = vector.reshape(tuple(dims)).transpose(support + rest)
    return tensor.reshape(ds, -1)


def _merge_vector(block, dims, support):
    n = len(dims)
    support = list(support)
    rest = [s for s in range(n) if s not in set(support)]
    order = support + rest
    tensor = block.reshape(tuple(dims[s] for s in order))
    return tensor.transpose(np.argsort(order)).reshape(-1)


def embed(op, space):
    op.check(space)
    dims = space.local_dims
    rest_dim = space.dim // op.matrix.shape[0]
    block = np.einsum("ab,cd->acbd", op.matrix, np.eye(rest_dim))
    return _merge_matrix(block, dims, op.support)


def extend(op, support, space):
    """Same operator written on a larger support."""
    support = tuple(sorted(support))
    if not set(op.support) <= set(support):
        raise ValueError("extended support must contain the original support")
    if support == op.support:
        return op
    local = space.sub(support)
    positions = [support.index(s) for s in op.support]
    moved = LocalOperator(tuple(positions), op.matrix, hermitian_flag=False)
    return LocalOperator(support, embed(moved, local), hermitian_flag=op.hermitian_flag)


def apply_local(matrix, support, vector, space):
    """``(matrix ⊗ 1) @ vector`` without forming the full operator."""
    dims = space.local_dims
    block = _split_vector(np.asarray(vector, dtype=complex), dims, support)
    return _merge_vector(matrix @ block, dims, support)


def apply_local_left(matrix, support, full, space):
    """``(matrix ⊗ 1) @ full`` for a full square matrix."""
    dims = space.local_dims
    cols = [apply_local(matrix, support, full[:, j], space) for j in range(full.shape[1])]
    return np.stack(cols, axis=1)


def reduce_operator(matrix, space, keep, normalize=False):
    """``tr_{keep^c}(matrix)`` as a matrix on ``keep``, optionally divided by ``dim(keep^c)``."""
    keep = tuple(sorted(keep))
    block = _split_matrix(np.asarray(matrix), space.local_dims, keep)
    reduced = np.einsum("ajbj->ab", block)
    if normalize:
        reduced = reduced / block.shape[1]
    return reduced


def reduced_from_vector(vector, space, keep):
    keep = tuple(sorted(keep))
    block = _split_vector(np.asarray(vector), space.local_dims, keep)
    return block @ block.conj().T


def partial_trace(rho, keep):
    keep = tuple(sorted(keep))
    if not set(keep) <= set(rho.sites):
        raise ValueError("kept sites must belong to the state")
    positions = [rho.sites.index(s) for s in keep]
    local = rho.space.sub(rho.sites)
    if rho.vector is not None:
        reduced = reduced_from_vector(rho.vector, local, positions)
    else:
        reduced = reduce_operator(rho.matrix, local, positions)
    return DensityMatrix(rho.space, keep, matrix=reduced)


def trace_norm(matrix):
    if is_hermitian(matrix, 1e-12):
        return float(np.abs(np.linalg.eigvalsh(0.5 * (matrix + matrix.conj().T))).sum())
    return float(svdvals(matrix).sum())


def operator_norm(matrix):
    if matrix.size == 0:
        return 0.0
    return float(svdvals(matrix)[0])


def local_trace_distance(rho, omega, x_region):
    if rho.space is not omega.space and rho.space.local_dims != omega.space.local_dims:
        raise ValueError("states live on different spaces")
    x_region = tuple(sorted(x_region))
    if not x_region:
        return 0.0
    a = partial_trace(rho, x_region).matrix
    b = partial_trace(omega, x_region).matrix
    return trace_norm(a - b)


def _as_operator(matrix):
    if isinstance(matrix, LinearOperator):
        return matrix, matrix.shape[0], False
    return np.asarray(matrix), matrix.shape[0], True


def _lanczos_run(apply, start, numiter, locked):
    dim = start.size
    basis = np.zeros((numiter, dim), dtype=complex)
    alpha = np.zeros(numiter)
    beta = np.zeros(max(numiter - 1, 0))
    basis[0] = start
    steps = numiter
    for j in range(numiter):
        w = apply(basis[j])
        alpha[j] = np.vdot(basis[j], w).real
        if j == numiter - 1:
            break
        # full reorthogonalization, twice for stability
        for _ in range(2):
            w -= basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
            if locked.shape[1]:
                w -= locked @ (locked.conj().T @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-12:
            steps = j + 1
            break
        basis[j + 1] = w / beta[j]
    return alpha[:steps], beta[: steps - 1], basis[:steps].T


def lanczos_lowest(operator, k, rng=None, max_iter=DEFAULT_LANCZOS_MAX_ITER, tol=1e-9, stop_above=None):
    """Lowest eigenpairs by deflated Lanczos with full reorthogonalization.

    Pairs are found one at a time in the complement of the converged ones, which
    resolves degenerate eigenvalues. With ``stop_above`` the search stops after the
    first eigenvalue exceeding it.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    op, dim, _ = _as_operator(operator)
    apply = op.matvec if isinstance(op, LinearOperator) else (lambda v: op @ v)
    locked = np.zeros((dim, 0), dtype=complex)
    values = []
    scale = 1.0
    while len(values) < min(k, dim):
        remaining = dim - locked.shape[1]
        numiter = min(remaining, 40)
        while True:
            start = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
            start -= locked @ (locked.conj().T @ start)
            start /= np.linalg.norm(start)
            alpha, beta, basis = _lanczos_run(apply, start, numiter, locked)
            ritz, vecs = eigh_tridiagonal(alpha, beta)
            scale = max(scale, float(np.abs(ritz).max()))
            x = basis @ vecs[:, 0]
            x -= locked @ (locked.conj().T @ x)
            x /= np.linalg.norm(x)
            ax = apply(x)
            theta = float(np.vdot(x, ax).real)
            residual = np.linalg.norm(ax - theta * x)
            # a Krylov space of full size is exact
            if residual <= tol * scale or numiter >= remaining:
                break
            if numiter >= max_iter:
                raise EigensolverError(
                    f"Lanczos did not converge after {max_iter} iterations (residual {residual:.3g})"
                )
            numiter = min(remaining, max_iter, numiter * 2)
        locked = np.hstack([locked, x[:, None]])
        values.append(theta)
        if stop_above is not None and theta > stop_above:
            break
    order = np.argsort(values)
    return np.asarray(values)[order], locked[:, order]


def hermitian_eigensolve(matrix, want="full", dense_limit=DEFAULT_DENSE_LIMIT, rng=None,
                         max_iter=DEFAULT_LANCZOS_MAX_ITER):
    op, dim, dense = _as_operator(matrix)
    if dense and not is_hermitian(op):
        raise EigensolverError("matrix is not Hermitian")
    if want == "full":
        if not dense:
            raise EigensolverError("full spectrum requires an explicit matrix")
        return eigh(0.5 * (op + op.conj().T))
    k = int(want)
    if dense and dim <= dense_limit:
        values, vectors = eigh(0.5 * (op + op.conj().T), subset_by_index=[0, min(k, dim) - 1])
        return values, vectors
    return lanczos_lowest(op, k, rng=rng, max_iter=max_iter)


def _check_ambiguity(values, tol):
    ambiguous = values[(values > tol) & (values <= 10 * tol)]
    if ambiguous.size:
        raise KernelAmbiguityError(
            f"kernel tolerance ambiguous: eigenvalue {ambiguous.min():.3e} in ({tol:.1e}, {10 * tol:.1e})"
        )


def kernel_spectrum(matrix, tol=DEFAULT_KERNEL_TOL, dense_limit=DEFAULT_DENSE_LIMIT, rng=None,
                    max_iter=DEFAULT_LANCZOS_MAX_ITER, max_kernel=64):
    """Kernel basis plus the lowest eigenvalue above ``tol`` (``None`` if every eigenvalue is in the kernel)."""
    op, dim, dense = _as_operator(matrix)
    if dense and dim <= dense_limit:
        values, vectors = hermitian_eigensolve(op, "full")
    else:
        values, vectors = lanczos_lowest(op, min(dim, max_kernel + 1), rng=rng, max_iter=max_iter,
                                         stop_above=10 * tol)
    if values.min() < -tol:
        raise ValueError(f"operator is not positive semidefinite (min eigenvalue {values.min():.3e})")
    _check_ambiguity(values, tol)
    inside = values <= tol
    above = values[~inside]
    gap = float(above.min()) if above.size else None
    return vectors[:, inside], values, gap


def kernel_projector(matrix, tol=DEFAULT_KERNEL_TOL):
    basis, _, _ = kernel_spectrum(np.asarray(matrix), tol=tol, dense_limit=np.inf)
    return basis @ basis.conj().T


class CPMap:
    """Kraus-form CP map acting on ``support``, possibly changing the local dimensions there.

    ``apply`` is ``X -> sum K X K^dagger``; the direction tag selects whether trace
    preservation or identity preservation is the defining property.
    """

    def __init__(self, kraus, support, space_in, space_out=None, direction=SCHRODINGER):
        self.kraus = tuple(np.asarray(k, dtype=complex) for k in kraus)
        self.support = tuple(sorted(support))
        self.space_in = space_in
        self.space_out = space_out or space_in
        self.direction = direction
        d_in = space_in.dim_of(self.support)
        d_out = self.space_out.dim_of(self.support)
        for k in self.kraus:
            if k.shape != (d_out, d_in):
                raise ValueError(f"Kraus operator shape {k.shape} does not match support ({d_out}, {d_in})")
        if self.space_in.rest(self.support) and (
            self.space_in.dims(self.space_in.rest(self.support))
            != self.space_out.dims(self.space_out.rest(self.support))
        ):
            raise ValueError("spaces may only differ on the map's support")

    @property
    def dim_in(self):
        return self.space_in.dim

    @property
    def dim_out(self):
        return self.space_out.dim

    def _conjugate(self, kraus, x, dims_in, dims_out):
        block = _split_matrix(np.asarray(x, dtype=complex), dims_in, self.support)
        stacked = np.stack(kraus)
        out = np.einsum("kab,bcde,kfd->afce", stacked, block, stacked.conj(), optimize=True)
        return _merge_matrix(out, dims_out, self.support)

    def apply(self, x):
        return self._conjugate(self.kraus, x, self.space_in.local_dims, self.space_out.local_dims)

    def apply_adjoint(self, y):
        adj = [k.conj().T for k in self.kraus]
        return self._conjugate(adj, y, self.space_out.local_dims, self.space_in.local_dims)

    def dual(self):
        flipped = HEISENBERG if self.direction == SCHRODINGER else SCHRODINGER
        return CPMap([k.conj().T for k in self.kraus], self.support, self.space_out, self.space_in, flipped)

    def local_residual(self):
        d_in = self.kraus[0].shape[1]
        d_out = self.kraus[0].shape[0]
        if self.direction == SCHRODINGER:
            total = sum(k.conj().T @ k for k in self.kraus)
            return operator_norm(total - np.eye(d_in))
        total = sum(k @ k.conj().T for k in self.kraus)
        return operator_norm(total - np.eye(d_out))


class MapSequence:
    """Composition of CP maps; stages are applied left to right."""

    def __init__(self, stages, direction=SCHRODINGER):
        self.stages = tuple(stages)
        if not self.stages:
            raise ValueError("map sequence needs at least one stage")
        self.direction = direction

    @property
    def space_in(self):
        return self.stages[0].space_in

    @property
    def space_out(self):
        return self.stages[-1].space_out

    @property
    def dim_in(self):
        return self.space_in.dim

    @property
    def dim_out(self):
        return self.space_out.dim

    def apply(self, x):
        for stage in self.stages:
            x = stage.apply(x)
        return x

    def apply_adjoint(self, y):
        for stage in reversed(self.stages):
            y = stage.apply_adjoint(y)
        return y


def unitary_map(unitary, space, direction=SCHRODINGER):
    return CPMap([unitary], tuple(range(space.n_sites)), space, space, direction)


def conditional_expectation(sigma_b, full_space):
    """Identity-preserving map ``O -> tr_b((1 ⊗ sigma_b) O) ⊗ 1_b``."""
    if not sigma_b.validate():
        raise ValueError("sigma_b is not a density matrix")
    rho = sigma_b.to_matrix()
    weights, vectors = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    d_b = rho.shape[0]
    kraus = []
    for p, phi in zip(weights, vectors.T):
        if p <= 1e-14:
            continue
        for j in range(d_b):
            k = np.zeros((d_b, d_b), dtype=complex)
            k[j, :] = np.sqrt(p) * phi.conj()
            kraus.append(k)
    return CPMap(kraus, sigma_b.sites, full_space, full_space, HEISENBERG)


def tracial_expectation(matrix, space, keep):
    """``E_{keep^c}``: normalized partial trace onto ``keep``, re-embedded on the full space."""
    keep = tuple(sorted(keep))
    if len(keep) == space.n_sites:
        return np.array(matrix, dtype=complex)
    local = reduce_operator(matrix, space, keep, normalize=True)
    if not keep:
        return local[0, 0] * np.eye(space.dim, dtype=complex)
    return embed(LocalOperator(keep, local, hermitian_flag=False), space)


def delta_decomposition(op_full, x, space, graph):
    """Shell terms ``Δ_{X_k}(A)`` as local operators on the fattenings ``X_k``."""
    x = frozenset(x)
    if not x:
        raise ValueError("delta decomposition needs a nonempty region")
    terms = []
    previous = None
    k = 0
    while True:
        shell = tuple(sorted(fatten(graph, x, k)))
        restricted = LocalOperator(shell, reduce_operator(op_full, space, shell, normalize=True),
                                   hermitian_flag=False)
        local = restricted.matrix
        if previous is not None:
            local = local - extend(previous, shell, space).matrix
        terms.append(LocalOperator(shell, local, hermitian_flag=False))
        previous = restricted
        if len(shell) == space.n_sites:
            break
        k += 1
    return terms


def _random_isometry(rng, rows, cols):
    g = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
    q, _ = np.linalg.qr(g)
    return q[:, :cols]


def _random_hermitian(rng, dim):
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (g + g.conj().T)


def choi_check(cpmap, rng=None, max_dim=CHOI_MAX_DIM, samples=10, tol=1e-10):
    rng = np.random.default_rng(0) if rng is None else rng
    d_in, d_out = cpmap.dim_in, cpmap.dim_out
    compressed = d_in * d_out > max_dim
    if compressed:
        k_in = min(d_in, max(1, int(np.sqrt(max_dim))))
        k_out = min(d_out, max_dim // k_in)
        w_in = _random_isometry(rng, d_in, k_in)
        w_out = _random_isometry(rng, d_out, k_out)
    else:
        k_in, k_out = d_in, d_out
        w_in, w_out = np.eye(d_in), np.eye(d_out)

    choi = np.zeros((k_in * k_out, k_in * k_out), dtype=complex)
    for i in range(k_in):
        for j in range(k_in):
            unit = np.outer(w_in[:, i], w_in[:, j].conj())
            image = w_out.conj().T @ cpmap.apply(unit) @ w_out
            choi[i * k_out:(i + 1) * k_out, j * k_out:(j + 1) * k_out] = image
    choi /= k_in
    min_eig = float(np.linalg.eigvalsh(0.5 * (choi + choi.conj().T)).min())

    tp_residual = operator_norm(cpmap.apply_adjoint(np.eye(d_out)) - np.eye(d_in))
    unital_residual = operator_norm(cpmap.apply(np.eye(d_in)) - np.eye(d_out))

    contractive = True
    for _ in range(samples):
        x = _random_hermitian(rng, d_in)
        image = cpmap.apply(x)
        if cpmap.direction == SCHRODINGER:
            ok = trace_norm(image) <= trace_norm(x) * (1 + 1e-10) + tol
        else:
            ok = operator_norm(image) <= operator_norm(x) * (1 + 1e-10) + tol
        contractive = contractive and ok

    residual = tp_residual if cpmap.direction == SCHRODINGER else unital_residual
    return ChoiReport(
        cp=min_eig >= -tol,
        tp_or_ip=residual <= tol,
        min_choi_eig=min_eig,
        tp_residual=tp_residual,
        unital_residual=unital_residual,
        contractive=contractive,
        compressed=compressed,
    )


def transpose_map(dim):
    return LinearMap(dim, dim, lambda x: np.asarray(x).T.copy(), lambda y: np.asarray(y).T.copy())


def weyl_operators(dim):
    """Clock-and-shift unitaries ``X^a Z^b``; they twirl ``B(C^dim)`` onto the identity."""
    omega = np.exp(2j * np.pi / dim)
    shift = np.roll(np.eye(dim), 1, axis=0)
    clock = np.diag(omega ** np.arange(dim))
    ops = []
    for a in range(dim):
        for b in range(dim):
            ops.append(np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b))
    return ops


def commutator_tail_check(a, z_region, space, max_basis=4096):
    """Compare ``||A - E_{Z^c}(A)||`` with commutators against a unitary basis of ``A_{Z^c}``."""
    z_region = tuple(sorted(z_region))
    outside = space.rest(z_region)
    lhs = operator_norm(a - tracial_expectation(a, space, z_region))
    if not outside:
        return {"lhs": lhs, "max_commutator": 0.0, "basis_size": 0}
    local_bases = [weyl_operators(space.local_dims[s]) for s in outside]
    size = int(np.prod([len(b) for b in local_bases]))
    if size > max_basis:
        raise ResourceCapError(f"commutator basis of size {size} exceeds {max_basis}")
    worst = 0.0
    for index in np.ndindex(*[len(b) for b in local_bases]):
        w = np.ones((1, 1), dtype=complex)
        for basis, i in zip(local_bases, index):
            w = np.kron(w, basis[i])
        full = embed(LocalOperator(outside, w, hermitian_flag=False), space)
        worst = max(worst, operator_norm(full @ a - a @ full))
    return {"lhs": lhs, "max_commutator": worst, "basis_size": size}


def locality_tail(heisenberg_map, op, space, x_region, r, graph):
    """``||Υ(O) - E_{(X_r)^c} Υ(O)||`` for a map acting on full matrices."""
    image = heisenberg_map(op)
    keep = fatten(graph, x_region, r)
    return operator_norm(image - tracial_expectation(image, space, keep)), image


def composition_tails(first, second, space, graph, x_region, r, rng, samples=5):
    """Measured locality tail of ``second ∘ first`` against the two-step triangle bound."""
    half = r // 2
    inner = fatten(graph, x_region, half)
    x_sites = tuple(sorted(x_region))
    rows = []
    for _ in range(samples):
        local = _random_hermitian(rng, space.dim_of(x_sites))
        local /= operator_norm(local)
        op = embed(LocalOperator(x_sites, local), space)
        composed_tail, _ = locality_tail(lambda o: second(first(o)), op, space, x_region, r, graph)
        e1, image = locality_tail(first, op, space, x_region, half, graph)
        truncated = tracial_expectation(image, space, inner)
        e2, _ = locality_tail(second, truncated, space, inner, r - half, graph)
        rows.append({"lhs": composed_tail, "bound": 2 * e1 + e2})
    return rows


def dump_matrix(path, matrix):
    matrix = np.ascontiguousarray(matrix, dtype="<c16")
    rows, cols = matrix.shape
    with Path(path).open("wb") as f:
        f.write(DUMP_MAGIC)
        f.write(struct.pack("<II", rows, cols))
        f.write(matrix.tobytes(order="C"))


def load_matrix(path):
    data = Path(path).read_bytes()
    if data[:8] != DUMP_MAGIC:
        raise ValueError(f"{path}: not a matrix dump")
    rows, cols = struct.unpack("<II", data[8:16])
    return np.frombuffer(data[16:], dtype="<c16").reshape(rows, cols).copy()


def kron_regions(space, parts):
    """Full matrix of ``⊗ matrix_i`` where ``parts`` is a list of (sites, matrix) covering every site once."""
    order = [s for sites, _ in parts for s in sorted(sites)]
    if sorted(order) != list(range(space.n_sites)):
        raise ValueError("regions must partition the sites")
    product = np.ones((1, 1), dtype=complex)
    for _, matrix in parts:
        product = np.kron(product, matrix)
    return _merge_matrix(product, space.local_dims, order)


def random_kraus_map(rng, space, support, n_kraus=3):
    """Random trace-preserving CP map on ``support`` from a Haar-like isometry."""
    support = tuple(sorted(support))
    d = space.dim_of(support)
    iso = _random_isometry(rng, d * n_kraus, d)
    kraus = [iso[i * d:(i + 1) * d, :] for i in range(n_kraus)]
    return CPMap(kraus, support, space, space, SCHRODINGER)
