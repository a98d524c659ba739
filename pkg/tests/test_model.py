import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_vector
from decay import DecayFunction
from errors import ConfigError
from lattice import chain
from model import (
    CIRCUIT,
    DOWN,
    PLUS,
    PRESETS,
    TRIVIAL_PRODUCT,
    UP,
    Gate,
    Interaction,
    InvertibilityCertificate,
    adapted_ground_basis,
    assemble,
    check_frustration_free,
    fit_gap,
    fit_ltqo,
    interaction_commutator,
    interaction_norm_m,
    intersection_projector,
    measure_gap,
    measure_ltqo,
    parse_complex,
    parse_matrix,
    pauli_string,
    verify_certificate,
)
from scenarios import load_scenario
from tensorops import LocalOperator, SiteSpace, product_vector

Z = np.diag([1.0, -1.0]).astype(complex)


def test_parse_matrix_presets_and_inline():
    assert_allclose(parse_matrix("stabilizer(ZZ)"), 0.5 * (np.eye(4) - np.kron(Z, Z)))
    assert_allclose(parse_matrix("pauli(XZ)"), pauli_string("XZ"))
    assert_allclose(parse_matrix([["1", "0"], ["0", "-1"]]), Z)
    assert parse_complex("1+2i") == 1 + 2j
    assert parse_complex(0.5) == 0.5


@pytest.mark.parametrize("spec", ["foo", [["1", "0"]], [["1", "0", "0"]] * 3, [["x", "0"], ["0", "1"]]])
def test_bad_matrices_raise_config_error(spec):
    with pytest.raises(ConfigError):
        parse_matrix(spec)


def test_interaction_terms_must_meet_the_anchor():
    with pytest.raises(ValueError, match="anchor"):
        Interaction.from_terms([LocalOperator((3,), Z)], anchor={0})


def test_from_terms_merges_equal_supports():
    inter = Interaction.from_terms([LocalOperator((0,), Z), LocalOperator((0,), 2 * Z)])
    assert list(inter.terms) == [frozenset({0})]
    assert_allclose(inter.terms[frozenset({0})].matrix, 3 * Z)


def test_matrix_free_hamiltonian_matches_dense(bell8, rng):
    model = bell8.model
    dense = assemble(model.interaction, model.space, matrix_free=False)
    lazy = assemble(model.interaction, model.space, matrix_free=True)
    v = random_vector(rng, model.space.dim)
    assert_allclose(lazy.matvec(v), dense @ v, atol=1e-12)


def test_bell_chain_is_frustration_free(bell10):
    report = check_frustration_free(bell10.model)
    assert report.passed
    assert report.max_term_residual <= 1e-10
    assert report.h_residual <= 1e-10
    assert report.min_term_eig >= -1e-12


def test_bell_chain_has_unit_local_gap(bell10, rng):
    profile = measure_gap(bell10.model, 4, [1, 2, 3], rng=rng)
    for r, gap, kernel_dim in profile.rows:
        assert gap == pytest.approx(1.0, abs=1e-9)
        assert kernel_dim == 1
    assert profile.fitted == (pytest.approx(1.0), 0.0)


def test_bell_chain_ltqo_vanishes(bell10, rng):
    profile = measure_ltqo(bell10.model, 4, [1, 2, 3, 4, 5], [0, 1, 2, 3, 4, 5], rng=rng)
    assert len(profile.rows) == 20
    assert max(sup for _, _, sup in profile.rows) <= 1e-10
    assert profile.fitted.passed


def test_ising_ltqo_fails(ising8, rng):
    profile = measure_ltqo(ising8.model, 5, [1, 2], [0, 1, 2], rng=rng)
    assert not profile.fitted.passed
    assert max(sup for _, _, sup in profile.rows) >= 2.0 - 1e-9


def test_fit_ltqo_rules():
    assert fit_ltqo([(2, 0, 0.0), (2, 1, 1e-12)]).passed
    assert not fit_ltqo([(3, 0, 2.0), (3, 1, 2.0), (3, 2, 2.0)]).passed
    fit = fit_ltqo([(3, 0, 1.0), (3, 1, 0.2), (3, 2, 0.0)])
    assert fit.passed
    assert fit.m_table == (1.0, 0.2, 0.0)


def test_fit_ltqo_uses_the_smallest_candidate():
    rows = [(2, 0, 1.0), (2, 1, 0.3), (3, 0, 1.5), (3, 1, 0.9)]
    low = fit_ltqo(rows, (2.0, 0.0))
    high = fit_ltqo(rows, (1.0,))
    assert low.d_o == 0.0
    assert high.d_o == 1.0
    assert low.m_table == (1.5, 0.9)
    assert all(h <= lo for h, lo in zip(high.m_table, low.m_table))
    assert low.passed == high.passed


def test_fit_gap_prefers_small_exponents():
    assert fit_gap([(1, 1.0, 1), (2, 1.0, 1)]) == (1.0, 0.0)
    c, d = fit_gap([(1, 0.5, 1), (2, 0.05, 1), (4, 0.01, 1)], cap=30.0)
    assert d == 1.0
    assert c == pytest.approx(25.0)


def test_m_norm_is_infinite_where_m_vanishes():
    graph = chain(3)
    inter = Interaction.from_terms([LocalOperator((0, 1), np.kron(Z, Z))])
    result = interaction_norm_m(inter, DecayFunction(np.array([1.0, 0.0, 0.0])), graph)
    assert math.isinf(result.value)
    assert result.worst == (0, 1)
    assert "m(2) = 0" in result.diagnostic


def test_commutator_of_interactions():
    space = SiteSpace((2, 2))
    za = Interaction.from_terms([LocalOperator((0,), Z)])
    zz = Interaction.from_terms([LocalOperator((0, 1), np.kron(Z, Z))])
    assert interaction_commutator(za, zz, space).is_empty()
    xa = Interaction.from_terms([LocalOperator((0,), PRESETS["pauli_x"])])
    comm = interaction_commutator(za, xa, space)
    assert list(comm.terms) == [frozenset({0})]


def test_intersection_projector_matches_the_ground_state():
    scenario = load_scenario("bell-impurity", {"L": 4})
    omega = scenario.model.ground_vector.amplitudes
    projector = intersection_projector(scenario.model.interaction, scenario.model.space)
    assert_allclose(projector, np.outer(omega, omega.conj()), atol=1e-8)


def test_adapted_basis_isolates_the_far_state():
    space = SiteSpace((2, 2))
    a = product_vector([UP, UP])
    b = product_vector([DOWN, DOWN])
    basis = np.stack([(a + b) / np.sqrt(2), (a - b) / np.sqrt(2)], axis=1)
    adapted, weights = adapted_ground_basis(basis, space, [0], np.outer(DOWN, DOWN))
    assert_allclose(weights, [1.0, 0.0], atol=1e-12)
    assert abs(np.vdot(a, adapted[:, 0])) == pytest.approx(1.0)


def test_cluster_certificate_reproduces_the_ground_state(cluster):
    cert = cluster.certificate
    assert cert.kind == CIRCUIT
    assert cert.depth() == 2
    report = verify_certificate(cert, cluster.model)
    assert report.passed
    assert report.fidelity == pytest.approx(1.0, abs=1e-10)


def test_gates_in_one_layer_must_be_disjoint():
    cz = PRESETS["cz"]
    with pytest.raises(ValueError, match="disjoint"):
        InvertibilityCertificate(CIRCUIT, (PLUS,) * 3, gates=(Gate((0, 1), cz, 0), Gate((1, 2), cz, 0)))


def test_wrong_reference_state_fails_verification(bell8):
    cert = InvertibilityCertificate(TRIVIAL_PRODUCT, (UP,) * 8)
    report = verify_certificate(cert, bell8.model)
    assert not report.passed
    assert report.fidelity == pytest.approx(0.0, abs=1e-12)
