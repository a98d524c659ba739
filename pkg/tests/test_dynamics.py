import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import expm

from conftest import random_hermitian
from decay import F_FUNCTION, tabulate
from dynamics import (
    PropagatorCache,
    TimeDependentInteraction,
    certificate_generator,
    combined_generator,
    evolve_interaction,
    evolved_norm_check,
    heisenberg,
    inverse_generator,
    light_cone_radius,
    measure_lr,
    propagate,
    stitching_generator,
    vz_locality_tails,
)
from errors import GeometryError
from lattice import boundary, chain
from model import PRESETS, Interaction, assemble, circuit_state
from scenarios import load_scenario
from tensorops import LocalOperator, SiteSpace, embed, product_vector


def _singlet_chain(n):
    graph = chain(n)
    space = SiteSpace((2,) * n, graph)
    inter = Interaction.from_terms([LocalOperator((i, i + 1), PRESETS["singlet_proj"]) for i in range(n - 1)])
    return graph, space, inter


def _random_layers(rng, n, count):
    graph = chain(n)
    space = SiteSpace((2,) * n, graph)
    layers = []
    for _ in range(count):
        ops = [LocalOperator((i, i + 1), random_hermitian(rng, 4)) for i in range(n - 1)]
        layers.append((0.5, Interaction.from_terms(ops)))
    return graph, TimeDependentInteraction(tuple(layers), space)


def test_durations_must_be_positive():
    _, space, inter = _singlet_chain(3)
    with pytest.raises(ValueError):
        TimeDependentInteraction(((0.0, inter),), space)


def test_static_propagator_is_the_exponential():
    _, space, inter = _singlet_chain(4)
    z = TimeDependentInteraction(((2.0, inter),), space)
    h = assemble(inter, space, matrix_free=False)
    assert_allclose(propagate(z, 0.0, 1.3).unitary, expm(1.3j * h), atol=1e-10)
    with pytest.raises(ValueError):
        propagate(z, 0.0, 2.5)


def test_propagators_compose_in_time_order(rng):
    _, z = _random_layers(rng, 3, 2)
    full = propagate(z, 0.0, 1.0).unitary
    first = propagate(z, 0.0, 0.5).unitary
    second = propagate(z, 0.5, 1.0).unitary
    assert_allclose(full, second @ first, atol=1e-10)


def test_heisenberg_at_equal_times_is_identity():
    _, space, inter = _singlet_chain(3)
    z = TimeDependentInteraction(((1.0, inter),), space)
    a = LocalOperator((0,), PRESETS["pauli_z"])
    assert_allclose(heisenberg(z, 0.4, 0.4, a), embed(a, space), atol=1e-12)


def test_evolved_interaction_sums_to_the_evolved_operator(rng):
    graph, z = _random_layers(rng, 3, 1)
    g = Interaction.from_terms([LocalOperator((0,), PRESETS["pauli_z"])])
    evolved = evolve_interaction(z, 0.5, 0.0, g, graph)
    total = assemble(evolved, z.space, matrix_free=False)
    u = propagate(z, 0.0, 0.5).unitary
    assert_allclose(total, u.conj().T @ embed(g.terms[frozenset({0})], z.space) @ u, atol=1e-10)


def test_inverse_generator_propagates_the_adjoint(rng):
    graph, z = _random_layers(rng, 3, 2)
    inverse = inverse_generator(z, graph)
    u = propagate(z, 0.0, z.total_time).unitary
    assert_allclose(propagate(inverse, 0.0, z.total_time).unitary, u.conj().T, atol=1e-9)


def test_combined_generator_reproduces_the_product(rng):
    graph, z1 = _random_layers(rng, 3, 2)
    _, z2 = _random_layers(rng, 3, 2)
    l = combined_generator(z1, z2, {1}, graph, sub_steps=3)
    target = propagate(z2, 0.0, 1.0).unitary @ propagate(z1, 0.0, 1.0).unitary.conj().T
    assert_allclose(propagate(l, 0.0, l.total_time).unitary, target, atol=1e-9)
    assert len(l.layers) == 6


def test_certificate_generator_rebuilds_the_circuit(cluster):
    cert = cluster.certificate
    space = SiteSpace(cert.local_dims, cluster.graph)
    q = certificate_generator(cert, space)
    u = propagate(q, 0.0, q.total_time).unitary
    assert_allclose(u @ product_vector(cert.reference), circuit_state(cert), atol=1e-10)
    assert light_cone_radius(q, cluster.graph) == 2


def test_stitching_dynamics_split_the_cluster_state(cluster):
    cert = cluster.certificate
    space = SiteSpace(cert.local_dims, cluster.graph)
    q = certificate_generator(cert, space)
    dyn = stitching_generator(q, {0, 1, 2}, cluster.graph)
    split = dyn.v_final @ circuit_state(cert)
    block = split.reshape(8, 8)
    singular = np.linalg.svd(block, compute_uv=False)
    assert singular[1] <= 1e-9
    assert_allclose(dyn.v(0.0), np.eye(space.dim), atol=1e-12)
    assert light_cone_radius(dyn.q_hat, cluster.graph) <= 2


def _cluster_dynamics(scenario, z_region):
    cert = scenario.certificate
    space = SiteSpace(cert.local_dims, scenario.graph)
    return stitching_generator(certificate_generator(cert, space), z_region, scenario.graph)


def test_vz_leaves_operators_far_from_the_cut_unchanged():
    scenario = load_scenario("cluster-chain", {"L": 8})
    dyn = _cluster_dynamics(scenario, {0, 1, 2})
    radius = light_cone_radius(dyn.q, scenario.graph)
    for x in ({6}, {7}):
        rows = vz_locality_tails(dyn, x, [0], scenario.graph, rng=np.random.default_rng(3))
        assert {row["exchanged"] for row in rows} == {False, True}
        for row in rows:
            assert row["dist_to_cut"] > radius
            assert row["shift"] <= 1e-9


def test_vz_tail_vanishes_once_the_fattened_region_covers_the_image(cluster):
    dyn = _cluster_dynamics(cluster, {0, 1, 2})
    rows = vz_locality_tails(dyn, {2}, [0, 1, 2], cluster.graph, rng=np.random.default_rng(3))
    assert len(rows) == 6
    for row in rows:
        assert row["dist_to_cut"] == 0
        if row["r"] == 0:
            assert row["tail"] > 1e-3
        else:
            assert row["tail"] <= 1e-9


def test_stitching_generator_is_anchored_at_the_boundary(cluster):
    z_region = {0, 1, 2}
    dyn = _cluster_dynamics(cluster, z_region)
    cut = boundary(cluster.graph, z_region)
    assert cut == frozenset({2, 3})
    nonempty = [inter for _, inter in dyn.l.layers if not inter.is_empty()]
    assert nonempty
    for inter in nonempty:
        assert inter.anchor == cut
        assert all(key & cut for key in inter.terms)


def test_stitching_generator_conjugates_by_v(cluster, rng):
    dyn = _cluster_dynamics(cluster, {0, 1, 2})
    space = dyn.q.space
    v = dyn.v_final
    for x in (0, 2, 3):
        a = LocalOperator((x,), random_hermitian(rng, 2))
        evolved = heisenberg(dyn.l, dyn.l.total_time, 0.0, a)
        assert_allclose(evolved, v @ embed(a, space) @ v.conj().T, atol=1e-8)


def test_lieb_robinson_rows_stay_below_the_bound():
    graph, space, inter = _singlet_chain(5)
    z = TimeDependentInteraction(((1.0, inter),), space)
    f = tabulate("exp(1.0)", graph.diameter(), F_FUNCTION)
    result = measure_lr(z, [((0,), (4,)), ((1,), (2,))], [0.0, 0.5, 1.0], f, graph,
                        rng=np.random.default_rng(5))
    assert len(result.rows) == 6
    assert not result.violations()
    for row in result.rows:
        if row.t == 0.0:
            assert row.measured <= 1e-14


def test_lieb_robinson_needs_disjoint_regions():
    graph, space, inter = _singlet_chain(3)
    z = TimeDependentInteraction(((1.0, inter),), space)
    f = tabulate("exp(1.0)", graph.diameter(), F_FUNCTION)
    with pytest.raises(GeometryError):
        measure_lr(z, [((0, 1), (1, 2))], [0.5], f, graph)


def test_evolved_norm_check_reports_both_sides():
    graph, space, inter = _singlet_chain(4)
    z = TimeDependentInteraction(((1.0, inter),), space)
    f = tabulate("exp(1.0)", graph.diameter(), F_FUNCTION)
    g = Interaction.from_terms([LocalOperator((0,), PRESETS["pauli_z"])])
    result = evolved_norm_check(z, 0.5, 0.0, g, f, f, graph)
    assert set(result) == {"lhs", "rhs", "holds"}
    assert result["rhs"] > 0


def test_propagator_cache_reuses_entries():
    _, space, inter = _singlet_chain(3)
    z = TimeDependentInteraction(((1.0, inter),), space)
    cache = PropagatorCache()
    first = cache.get(z, 0.0, 0.5)
    assert cache.get(z, 0.0, 0.5) is first
    assert len(cache) == 1
