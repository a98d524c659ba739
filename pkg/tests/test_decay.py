import math

import numpy as np
import pytest
from hypothesis import given, seed, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from conftest import random_hermitian
from decay import (
    F_FUNCTION,
    M_FUNCTION,
    DecayFunction,
    beta_grid,
    check_class_m,
    check_f_function,
    decay_exponent,
    decay_scale,
    f_from_m,
    fit_stretched_exponent,
    m_from_f,
    superadditive_envelope,
    tabulate,
)
from errors import ClassMError, ConfigError, ConvolutionError
from lattice import chain, fit_dimension
from model import Interaction, interaction_norm_f, interaction_norm_m
from tensorops import LocalOperator

TABLE = arrays(np.float64, (12,), elements=st.one_of(st.just(0.0), st.floats(min_value=1e-3, max_value=2.0)))


def compositions(r):
    for mask in range(2 ** (r - 1)):
        parts, length = [], 1
        for bit in range(r - 1):
            if mask >> bit & 1:
                parts.append(length)
                length = 1
            else:
                length += 1
        parts.append(length)
        yield parts


def brute_envelope(values):
    out = []
    for r in range(1, len(values) + 1):
        out.append(max(math.prod(values[p - 1] for p in parts) for parts in compositions(r)))
    return np.array(out)


def test_presets_tabulate_from_the_right_start():
    m = tabulate("exp(1.0)", 5)
    assert m.start == 1
    assert_allclose(m.values, np.exp(-np.arange(1, 6)))
    f = tabulate("stretched(2.0, 0.5)", 4, F_FUNCTION)
    assert f.start == 0
    assert f(0) == 1.0
    assert_allclose(f(4), math.exp(-4.0))
    assert tabulate("power(2)", 3).values.tolist() == [1.0, 0.25, 1 / 9]


@pytest.mark.parametrize("spec", ["gauss(1)", "exp(1, 2)", "stretched(1)", "exp(x)", [1.0, 0.5]])
def test_bad_decay_specs_raise_config_error(spec):
    with pytest.raises(ConfigError):
        tabulate(spec, 4)


def test_class_m_rejects_increasing_tables():
    with pytest.raises(ClassMError, match="r=2"):
        check_class_m(tabulate([0.5, 0.6, 0.1], 3))


def test_polynomial_decay_is_flagged():
    report = check_class_m(tabulate("power(2)", 60))
    assert report.polynomial_flags[0.9]
    fast = check_class_m(tabulate("exp(1.0)", 60))
    assert not fast.polynomial_flags[0.1]


def test_f_function_constants_on_a_chain():
    report = check_f_function(tabulate("exp(1.0)", 4, F_FUNCTION), chain(5))
    assert report.c_f >= 1.0
    assert report.c_f_prime == pytest.approx(sum(math.exp(-k) for k in range(3)) + math.exp(-1) + math.exp(-2))


def test_f_function_without_convolution_property():
    f = DecayFunction(np.array([1.0, 1.0, 0.0]), F_FUNCTION)
    with pytest.raises(ConvolutionError):
        check_f_function(f, chain(3))


@seed(7)
@settings(max_examples=50, deadline=None)
@given(values=TABLE)
def test_envelope_matches_composition_search(values):
    envelope = superadditive_envelope(DecayFunction(values, M_FUNCTION)).values
    assert_allclose(envelope, brute_envelope(values.tolist()), rtol=1e-12, atol=0.0)


@seed(11)
@settings(max_examples=50, deadline=None)
@given(values=TABLE, extra=TABLE)
def test_envelope_is_an_idempotent_monotone_majorant(values, extra):
    f = DecayFunction(values, M_FUNCTION)
    s = superadditive_envelope(f)
    assert (s.values >= values).all()
    assert_allclose(superadditive_envelope(s).values, s.values, rtol=1e-12, atol=0.0)
    bigger = superadditive_envelope(DecayFunction(values + extra, M_FUNCTION))
    assert (bigger.values >= s.values * (1 - 1e-12)).all()
    for r1 in range(1, 12):
        for r2 in range(1, 13 - r1):
            assert s(r1 + r2) >= s(r1) * s(r2) * (1 - 1e-12)


def _random_interaction(rng, n_sites, count):
    ops = []
    for _ in range(count):
        width = int(rng.integers(1, 4))
        start = int(rng.integers(0, n_sites - width + 1))
        support = tuple(range(start, start + width))
        ops.append(LocalOperator(support, random_hermitian(rng, 2 ** width)))
    return Interaction.from_terms(ops)


def test_norm_comparisons_hold_both_ways(rng):
    graph = chain(10)
    dim_fit = fit_dimension(graph, [1.0])
    m = tabulate("exp(1.0)", 10)
    f_of_m = f_from_m(m, dim_fit)
    big_f = tabulate("exp(1.0)", 9, F_FUNCTION)
    m_of_f = m_from_f(big_f, dim_fit)
    for _ in range(20):
        z = _random_interaction(rng, 10, 6)
        lhs = float(interaction_norm_f(z, f_of_m, graph))
        rhs = float(interaction_norm_m(z, m, graph))
        assert lhs <= rhs * (1 + 1e-12) + 1e-12
        lhs = float(interaction_norm_m(z, m_of_f, graph))
        rhs = float(interaction_norm_f(z, big_f, graph))
        assert lhs <= rhs * (1 + 1e-12) + 1e-12


def test_stretched_fit_recovers_the_exponent():
    R = np.arange(1, 11, dtype=float)
    assert fit_stretched_exponent(R, np.exp(-R))["beta"] == pytest.approx(1.0)
    fit = fit_stretched_exponent(R, 3.0 * np.exp(-np.sqrt(R)))
    assert fit["beta"] == pytest.approx(0.5)
    assert fit["amplitude"] == pytest.approx(3.0)
    assert fit["rows"] == 10


def test_stretched_fit_needs_enough_rows():
    assert fit_stretched_exponent([1, 2, 3, 4], [0.5, 0.2, 0.0, 0.0]) is None


def test_decay_scale():
    assert decay_exponent(1.0, 0.0) == pytest.approx(1 / 3)
    assert decay_scale(64, 1.0, 1.0) == (2, 1)
    assert beta_grid(0.1, 0.3, 0.1) == (0.1, 0.2, 0.3)
