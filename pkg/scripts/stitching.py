import math
from dataclasses import dataclass, field

import numpy as np

from decay import decay_exponent, fit_stretched_exponent
from dynamics import certificate_generator, light_cone_radius, stitching_generator
from errors import GeometryError, ResourceCapError
from lattice import ball, boundary, complement, distance_to, fatten, region_diameter, region_distance
from model import (
    HamiltonianModel,
    adapted_ground_basis,
    apply_hamiltonian,
    assemble,
    circuit_state,
    localize,
    obc_restrict,
    verify_certificate,
)
from tensorops import (
    SCHRODINGER,
    CPMap,
    DensityMatrix,
    MapSequence,
    SiteSpace,
    _split_vector,
    apply_local,
    conditional_expectation,
    hermitian_eigensolve,
    kernel_spectrum,
    kron_regions,
    partial_trace,
    reduce_operator,
    reduced_from_vector,
    trace_norm,
    unitary_map,
)

FULL_MAP_LIMIT = 1024
SPLIT_TOL = 1e-9
GROUND_RESIDUAL_TOL = 1e-6
SUPERADDITIVITY_TOL = 1e-10
CLASSES = ("a", "b", "c", "d", "e")


@dataclass(frozen=True, eq=False)
class StitchingMap:
    z_region: frozenset
    cpmap: MapSequence
    v: np.ndarray
    certificate: object
    kappa: DensityMatrix
    model: HamiltonianModel
    light_cone: int
    dynamics: object = None

    @property
    def product_split(self):
        """True when the map is ``ρ -> κ ⊗ tr_Z ρ`` on the model space."""
        return self.v is None

    def apply(self, rho_matrix):
        return self.cpmap.apply(rho_matrix)


@dataclass(frozen=True)
class StitchAudit:
    z_region: frozenset
    r: int
    class_contributions: dict
    lhs_total: float
    rhs_energy_term: float
    rhs_boundary_term: int
    empirical_c: float


@dataclass(frozen=True)
class IsoperimetryRow:
    i: int
    radius: int
    energy: float
    delta: float
    slack: float


@dataclass(frozen=True)
class IsoperimetrySeries:
    center: int
    r: int
    rows: list
    a: float
    b: list
    c_empirical: float
    replayed_bound: float
    apriori_bound: float
    exact_e1: float

    def superadditive(self, tol=SUPERADDITIVITY_TOL):
        return all(row.slack >= -tol for row in self.rows[:-1])


@dataclass(frozen=True)
class DecayRow:
    r: int
    distance: float
    pbar: float
    energy: float
    overlap: float
    flagged: bool = False


@dataclass(frozen=True)
class TriangleRow:
    r: int
    k: int
    sigma_theta: float
    sigma_theta_bound: float
    theta_mu: float
    lhs: float


@dataclass(frozen=True)
class DecayReport:
    center: int
    R: float
    rows: list
    triangle: list
    predicted_p: float
    fit: dict = None
    n_ground: int = 1
    flagged: list = field(default_factory=list)


def _join_physical(matrix, phys_dims, aux_dims):
    n = len(phys_dims)
    tensor = matrix.reshape(tuple(phys_dims) + tuple(aux_dims))
    order = []
    for i in range(n):
        order += [i, n + i]
    return tensor.transpose(order).reshape(-1)


def _aux_embedding(space, doubled, phys_dims, aux_dims, aux_state):
    dim = space.dim
    cols = []
    for p in range(dim):
        e = np.zeros(dim, dtype=complex)
        e[p] = 1.0
        cols.append(_join_physical(np.outer(e, aux_state), phys_dims, aux_dims))
    iso = np.stack(cols, axis=1)
    sites = tuple(range(space.n_sites))
    embed_stage = CPMap([iso], sites, space, doubled, SCHRODINGER)
    a_total = int(np.prod(aux_dims))
    traces = []
    for b in range(a_total):
        eb = np.zeros(a_total, dtype=complex)
        eb[b] = 1.0
        rows = [_join_physical(np.outer(np.eye(dim)[p], eb), phys_dims, aux_dims) for p in range(dim)]
        traces.append(np.stack(rows, axis=0))
    trace_stage = CPMap(traces, sites, doubled, space, SCHRODINGER)
    return embed_stage, trace_stage


def schmidt_values(vector, space, z_region):
    block = _split_vector(vector, space.local_dims, sorted(z_region))
    return np.linalg.svd(block, compute_uv=False)


def build_stitching_map(model, certificate, z_region, sub_steps=4):
    graph = model.graph
    z_region = frozenset(z_region)
    if not z_region or z_region == graph.all_sites:
        raise GeometryError("stitching region must be a proper nonempty subset")
    report = verify_certificate(certificate, model)
    if not report.passed:
        raise ValueError(f"certificate does not reproduce the ground state (fidelity {report.fidelity:.12f})")
    space = model.space
    phys_dims = space.local_dims
    aux_dims = certificate.aux_dims
    has_aux = any(a > 1 for a in aux_dims)
    doubled = SiteSpace(tuple(d * a for d, a in zip(phys_dims, aux_dims)), graph, space.max_dim)

    if not certificate.gates:
        mu_z = reduced_from_vector(model.ground_vector.amplitudes, space, z_region)
        kappa = DensityMatrix(space, tuple(sorted(z_region)), matrix=mu_z)
        replace = conditional_expectation(kappa, space).dual()
        return StitchingMap(z_region, MapSequence([replace]), None, certificate, kappa, model, 0)

    if doubled.dim > FULL_MAP_LIMIT:
        raise ResourceCapError(f"stitching map on dimension {doubled.dim} exceeds {FULL_MAP_LIMIT}")
    q = certificate_generator(certificate, doubled)
    dyn = stitching_generator(q, z_region, graph, sub_steps=sub_steps)
    v = dyn.v_final
    psi = circuit_state(certificate)
    split = v @ psi
    schmidt = schmidt_values(split, doubled, z_region)
    if schmidt.size > 1 and schmidt[1] > SPLIT_TOL:
        raise ValueError(f"V(Ω ⊗ Ω') is not a product across the cut (second Schmidt value {schmidt[1]:.3e})")
    kappa = DensityMatrix(doubled, tuple(sorted(z_region)), matrix=reduced_from_vector(split, doubled, z_region))

    stages = []
    trace_stage = None
    if has_aux:
        embed_stage, trace_stage = _aux_embedding(space, doubled, phys_dims, aux_dims, report.aux_state)
        stages.append(embed_stage)
    stages.append(unitary_map(v, doubled))
    stages.append(conditional_expectation(kappa, doubled).dual())
    stages.append(unitary_map(v.conj().T, doubled))
    if trace_stage is not None:
        stages.append(trace_stage)
    return StitchingMap(z_region, MapSequence(stages), v, certificate, kappa, model,
                        light_cone_radius(q, graph), dyn)


def apply_to_state(smap, sigma):
    space = smap.model.space
    if space.dim > FULL_MAP_LIMIT:
        raise ResourceCapError(f"full stitched state on dimension {space.dim} exceeds {FULL_MAP_LIMIT}")
    return DensityMatrix(space, tuple(range(space.n_sites)), matrix=smap.apply(sigma.to_matrix()))


def _reduce_state(sigma, x_region):
    return partial_trace(sigma, x_region).matrix


def stitched_reduction(smap, sigma, x_region, stitched=None):
    """Reduced state of ``Σ_Z(σ)`` on ``x_region``; product-split maps never form the full matrix."""
    x_sites = tuple(sorted(x_region))
    space = smap.model.space
    if not smap.product_split:
        stitched = stitched if stitched is not None else apply_to_state(smap, sigma)
        return partial_trace(stitched, x_sites).matrix
    inside = tuple(s for s in x_sites if s in smap.z_region)
    outside = tuple(s for s in x_sites if s not in smap.z_region)
    local = space.sub(x_sites)
    parts = []
    if inside:
        kappa_sites = smap.kappa.sites
        kappa_space = space.sub(kappa_sites)
        kappa_x = reduce_operator(smap.kappa.matrix, kappa_space, [kappa_sites.index(s) for s in inside])
        parts.append(([x_sites.index(s) for s in inside], kappa_x))
    if outside:
        parts.append(([x_sites.index(s) for s in outside], _reduce_state(sigma, outside)))
    return kron_regions(local, parts)


def reference_reduction(smap, sigma, x_region):
    """Reduced state of ``tr_{Z^c}μ ⊗ tr_Z ρ`` on ``x_region``."""
    space = smap.model.space
    x_sites = tuple(sorted(x_region))
    inside = tuple(s for s in x_sites if s in smap.z_region)
    outside = tuple(s for s in x_sites if s not in smap.z_region)
    parts = []
    if inside:
        mu = reduced_from_vector(smap.model.ground_vector.amplitudes, space, inside)
        parts.append(([x_sites.index(s) for s in inside], mu))
    if outside:
        parts.append(([x_sites.index(s) for s in outside], _reduce_state(sigma, outside)))
    return kron_regions(space.sub(x_sites), parts)


def _cut_distance(smap, x_region):
    graph = smap.model.graph
    cut = boundary(graph, smap.z_region)
    return region_distance(graph, x_region, cut) if cut else math.inf


def verify_definition(smap, probes, x_regions, r_grid, tol1=1e-8, tol2=1e-9, tol3=1e-9):
    """Measured sides of the three defining properties of a stitching map."""
    graph = smap.model.graph
    space = smap.model.space
    stitched = [None if smap.product_split else apply_to_state(smap, p) for p in probes]

    prop1 = []
    for idx, probe in enumerate(probes):
        for x in x_regions:
            lhs = trace_norm(stitched_reduction(smap, probe, x, stitched[idx]) - reference_reduction(smap, probe, x))
            dist = _cut_distance(smap, x)
            prop1.append({"probe": idx, "x": tuple(sorted(x)), "dist": dist, "lhs": lhs,
                          "ok": dist <= smap.light_cone or lhs <= tol1})

    prop2 = []
    for i in range(len(probes)):
        for j in range(i, len(probes)):
            for x in x_regions:
                lhs = trace_norm(stitched_reduction(smap, probes[i], x, stitched[i])
                                 - stitched_reduction(smap, probes[j], x, stitched[j]))
                for r in r_grid:
                    fat = tuple(sorted(fatten(graph, x, r)))
                    base = trace_norm(_reduce_state(probes[i], fat) - _reduce_state(probes[j], fat))
                    excess = lhs - base
                    prop2.append({"pair": (i, j), "x": tuple(sorted(x)), "r": r, "lhs": lhs, "base": base,
                                  "excess": excess, "ok": r < smap.light_cone or excess <= tol2})

    mu = DensityMatrix(space, tuple(range(space.n_sites)), vector=smap.model.ground_vector.amplitudes)
    if smap.product_split and space.dim > FULL_MAP_LIMIT:
        # upper bound 2 sqrt(1 - <Ω|μ_Z ⊗ μ_{Z^c}|Ω>) from the Schmidt values of Ω
        z_sites = tuple(sorted(smap.z_region))
        fidelity = float(np.sum(schmidt_values(mu.vector, space, z_sites) ** 6))
        prop3 = 2 * math.sqrt(max(1.0 - fidelity, 0.0))
    else:
        prop3 = trace_norm(smap.apply(mu.to_matrix()) - mu.to_matrix())
    passed = all(row["ok"] for row in prop1) and all(row["ok"] for row in prop2) and prop3 <= tol3
    return {"property1": prop1, "property2": prop2, "property3": prop3, "passed": passed}


def ball_projector(model, sites):
    """Kernel projector of ``H_B`` as a local matrix on ``sorted(sites)``."""
    local_space = model.space.sub(sites)
    h = assemble(localize(model.interaction, sites), local_space, matrix_free=False)
    basis, _, gap = kernel_spectrum(h, tol=model.kernel_tol, dense_limit=np.inf)
    return basis @ basis.conj().T, gap


def excitation_weight(projector, rho_local):
    return float(max(0.0, 1.0 - np.trace(projector @ rho_local).real))


def verify_seamlessness(smap, sigma, x, r_grid, k_grid, tol=1e-8):
    if not sigma.is_pure_form:
        raise ValueError("seamlessness is stated for pure states")
    graph = smap.model.graph
    stitched = None if smap.product_split else apply_to_state(smap, sigma)
    rows = []
    for r in r_grid:
        outer = tuple(sorted(ball(graph, x, r)))
        p_outer, _ = ball_projector(smap.model, outer)
        rhs = excitation_weight(p_outer, _reduce_state(sigma, outer))
        for k in k_grid:
            if k > r:
                continue
            inner = tuple(sorted(ball(graph, x, r - k)))
            p_inner, _ = ball_projector(smap.model, inner)
            lhs = excitation_weight(p_inner, stitched_reduction(smap, sigma, inner, stitched))
            residue = max(0.0, lhs - 3 * rhs)
            rows.append({"r": r, "k": k, "lhs": lhs, "rhs": 3 * rhs, "residue": residue,
                         "ok": k <= smap.light_cone or residue <= tol})
    return rows


def stinespring_inequality_check(p, cpmap, trials, rng, tol=1e-11):
    dim = cpmap.dim_in
    rows = []
    violations = 0
    for _ in range(trials):
        vecs = []
        for _ in range(2):
            g = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
            vecs.append(g / np.linalg.norm(g) * rng.uniform(0.05, 1.0))
        a, b = vecs
        paa = np.trace(p @ cpmap.apply(np.outer(a, a.conj()))).real
        pbb = np.trace(p @ cpmap.apply(np.outer(b, b.conj()))).real
        lhs = abs(np.trace(p @ cpmap.apply(np.outer(a, b.conj()))))
        first = math.sqrt(max(paa, 0.0) * max(pbb, 0.0))
        second = math.sqrt(max(paa, 0.0))
        ok = lhs <= first + tol and lhs <= second + tol
        violations += 0 if ok else 1
        rows.append({"lhs": lhs, "cauchy_schwarz": first, "single": second, "ok": ok})
    return {"rows": rows, "violations": violations}


def classify_term(graph, key, z_region, r):
    cut = boundary(graph, z_region)
    half = r // 2
    near = fatten(graph, cut, half) if cut else frozenset()
    if key <= (z_region - near):
        return "a"
    if key <= (complement(graph, z_region) - near):
        return "b"
    if key & near:
        return "c" if region_diameter(graph, key) < r / 4 else "d"
    return "e"


def energy_audit(smap, sigma, r, d=1.0, d_gamma=0.0):
    graph = smap.model.graph
    z = smap.z_region
    cut = boundary(graph, z)
    strip = fatten(graph, cut, r) if cut else frozenset()
    deep = z - strip
    stitched = None if smap.product_split else apply_to_state(smap, sigma)
    contributions = {c: 0.0 for c in CLASSES}
    for key, op in smap.model.interaction.terms.items():
        if key <= deep:
            continue
        support = op.support
        after = np.trace(op.matrix @ stitched_reduction(smap, sigma, support, stitched)).real
        before = np.trace(op.matrix @ _reduce_state(sigma, support)).real
        contributions[classify_term(graph, key, z, r)] += float(after - before)
    total = sum(contributions.values())
    rhs_energy = sum(float(np.trace(op.matrix @ _reduce_state(sigma, op.support)).real)
                     for key, op in obc_restrict(smap.model.interaction, strip).terms.items())
    scale = (max(r, 1) ** (d + d_gamma)) * rhs_energy
    if scale > 0:
        empirical = max(total, 0.0) / scale
    else:
        empirical = 0.0 if total <= 1e-12 else math.inf
    return StitchAudit(z, r, contributions, total, rhs_energy, len(cut), empirical)


def _check_anchor(smap, j):
    if j.anchor is None:
        raise ValueError("perturbation has no anchor")
    if j.anchor & smap.z_region:
        raise GeometryError("perturbation anchor overlaps the stitching region")


def j_insensitivity(smap, sigma, j):
    graph = smap.model.graph
    if j.is_empty():
        return 0.0, math.inf
    _check_anchor(smap, j)
    stitched = None if smap.product_split else apply_to_state(smap, sigma)
    lhs = 0.0
    for op in j.terms.values():
        after = np.trace(op.matrix @ stitched_reduction(smap, sigma, op.support, stitched)).real
        before = np.trace(op.matrix @ _reduce_state(sigma, op.support)).real
        lhs += after - before
    return abs(float(lhs)), region_distance(graph, smap.z_region, j.anchor)


def j_class_audit(smap, sigma, j, r):
    """Change of ``<J>`` split into terms meeting ``(Z)_r`` and terms beyond it."""
    graph = smap.model.graph
    near_region = fatten(graph, smap.z_region, r)
    stitched = None if smap.product_split else apply_to_state(smap, sigma)
    near = far = 0.0
    for key, op in j.terms.items():
        after = np.trace(op.matrix @ stitched_reduction(smap, sigma, op.support, stitched)).real
        before = np.trace(op.matrix @ _reduce_state(sigma, op.support)).real
        if key & near_region:
            near += after - before
        else:
            far += after - before
    return {"near": float(near), "far": float(far), "r": r}


def _vector_term_energy(interaction, space, phi):
    return {key: float(np.vdot(phi, apply_local(op.matrix, op.support, phi, space)).real)
            for key, op in interaction.terms.items()}


def _region_energy(energies, region):
    return sum(e for key, e in energies.items() if key <= region)


def ground_space(model, j, tol=1e-8, k=8, rng=None):
    """Lowest eigenvalue of ``H + J`` and an orthonormal basis of its eigenspace."""
    total = model.interaction.plus(j) if not j.is_empty() else model.interaction
    h = assemble(total, model.space, dense_limit=model.dense_limit)
    values, vectors = hermitian_eigensolve(h, min(k, model.space.dim), dense_limit=model.dense_limit, rng=rng,
                                           max_iter=model.max_iter)
    ground = values[0]
    mask = values <= ground + max(tol, tol * abs(ground))
    return float(ground), vectors[:, mask]


def eigen_residual(model, j, phi):
    total = model.interaction.plus(j) if not j.is_empty() else model.interaction
    h_phi = apply_hamiltonian(total, model.space, phi)
    energy = float(np.vdot(phi, h_phi).real)
    return float(np.linalg.norm(h_phi - energy * phi)), energy


def _distance_to_anchor(graph, x, j):
    if j.is_empty() or j.anchor is None:
        return float(graph.distance[x].max() + 1)
    return float(distance_to(graph, j.anchor)[x])


def isoperimetry_series(model, j, phi, x, r):
    graph = model.graph
    residual, _ = eigen_residual(model, j, phi)
    if residual > GROUND_RESIDUAL_TOL:
        raise ValueError(f"phi is not an eigenvector of H + J (residual {residual:.3e})")
    R = _distance_to_anchor(graph, x, j)
    i_star = math.ceil(R / (2 * r)) - 1
    if i_star < 2:
        raise GeometryError(f"geometry too tight: i* = {i_star} for R = {R}, r = {r}")
    energies = _vector_term_energy(model.interaction, model.space, phi)
    rows = []
    for i in range(1, i_star + 1):
        radius = (2 * i - 1) * r
        e_i = _region_energy(energies, ball(graph, x, radius))
        shell = boundary(graph, ball(graph, x, radius + r))
        strip = fatten(graph, shell, r - 1) if shell else frozenset()
        delta = _region_energy(energies, strip)
        rows.append([i, radius, e_i, delta])
    finished = []
    for idx, (i, radius, e_i, delta) in enumerate(rows):
        slack = rows[idx + 1][2] - e_i - delta if idx + 1 < len(rows) else 0.0
        finished.append(IsoperimetryRow(i, radius, e_i, delta, slack))

    ratios = [row.energy / row.delta for row in finished if row.delta > 0]
    c_emp = max(ratios) if ratios else 1.0
    c_emp = max(c_emp, 1e-300)
    a = 1.0 + 1.0 / c_emp
    b = [max(0.0, row.energy - c_emp * row.delta) / c_emp for row in finished]
    last = finished[-1].energy
    tail = sum(b[jdx - 1] * a ** (-jdx) for jdx in range(1, i_star))
    replayed = last * a ** (1 - i_star) + tail
    norm_sum = sum(float(np.linalg.norm(op.matrix, 2)) for op in
                   obc_restrict(model.interaction, ball(graph, x, finished[-1].radius)).terms.values())
    apriori = norm_sum * a ** (1 - i_star) + tail
    return IsoperimetrySeries(x, r, finished, a, b, c_emp, replayed, apriori, finished[0].energy)


def _ground_candidates(model, phi, x, radius):
    phi = np.asarray(phi)
    if phi.ndim == 1 or phi.shape[1] == 1:
        return phi.reshape(-1, 1)
    sites = sorted(ball(model.graph, x, radius))
    mu = reduced_from_vector(model.ground_vector.amplitudes, model.space, sites)
    adapted, _ = adapted_ground_basis(phi, model.space, sites, mu)
    return adapted


def decay_profile(model, j, phi, x, radii, d=1.0, d_gamma=0.0):
    """Local distance of ``Φ`` from the unperturbed ground state on growing balls around ``x``.

    ``phi`` is a vector or a matrix whose columns span a degenerate ground space;
    each row then carries the worst column.
    """
    graph = model.graph
    space = model.space
    omega = model.ground_vector.amplitudes
    rows, triangle, flagged = [], [], []
    n_ground = 1 if np.asarray(phi).ndim == 1 else np.asarray(phi).shape[1]
    for r in sorted(radii):
        sites = tuple(sorted(ball(graph, x, r)))
        k = r // 2
        inner = tuple(sorted(ball(graph, x, r - k)))
        p_ball, _ = ball_projector(model, sites)
        energy_terms = obc_restrict(model.interaction, sites)
        mu = reduced_from_vector(omega, space, sites)
        mu_inner = reduced_from_vector(omega, space, inner)
        worst_row, worst_tri = None, None
        for column in _ground_candidates(model, phi, x, r).T:
            rho = reduced_from_vector(column, space, sites)
            distance = trace_norm(rho - mu)
            pbar = excitation_weight(p_ball, rho)
            energy = sum(np.vdot(column, apply_local(op.matrix, op.support, column, space)).real
                         for op in energy_terms.terms.values())
            overlap = math.sqrt(max(0.0, 1.0 - pbar))
            row = DecayRow(r, distance, pbar, float(energy), overlap, overlap <= 1e-12)
            theta = apply_local(p_ball, sites, column, space)
            norm = np.linalg.norm(theta)
            if norm > 1e-12:
                theta = theta / norm
                rho_inner = reduced_from_vector(column, space, inner)
                theta_inner = reduced_from_vector(theta, space, inner)
                tri = TriangleRow(r, k, trace_norm(rho_inner - theta_inner), 2 * math.sqrt(pbar),
                                  trace_norm(theta_inner - mu_inner), trace_norm(rho_inner - mu_inner))
            else:
                tri = None
            if worst_row is None or row.distance > worst_row.distance:
                worst_row, worst_tri = row, tri
        rows.append(worst_row)
        if worst_row.flagged:
            flagged.append(r)
        if worst_tri is not None:
            triangle.append(worst_tri)
    return DecayReport(
        center=x,
        R=_distance_to_anchor(graph, x, j),
        rows=rows,
        triangle=triangle,
        predicted_p=decay_exponent(d, d_gamma),
        n_ground=n_ground,
        flagged=flagged,
    )


def profile_centers(model, j, phi, centers, radius, d=1.0, d_gamma=0.0, betas=None):
    reports = [decay_profile(model, j, phi, x, [radius], d, d_gamma) for x in centers]
    distances = [rep.R for rep in reports]
    values = [rep.rows[0].distance for rep in reports]
    fit = fit_stretched_exponent(distances, values, betas)
    return {"reports": reports, "R": distances, "values": values, "fit": fit,
            "predicted_p": decay_exponent(d, d_gamma)}


def gap_energy_check(model, phi, x, r):
    sites = tuple(sorted(ball(model.graph, x, r)))
    p_ball, gap = ball_projector(model, sites)
    rho = reduced_from_vector(phi, model.space, sites)
    pbar = excitation_weight(p_ball, rho)
    energy = sum(float(np.trace(op.matrix @ reduced_from_vector(phi, model.space, op.support)).real)
                 for op in obc_restrict(model.interaction, sites).terms.values())
    if gap is None:
        return {"pbar": pbar, "energy": energy, "gamma": None, "holds": pbar <= 1e-10}
    return {"pbar": pbar, "energy": energy, "gamma": gap, "holds": pbar <= energy / gap + 1e-10}
