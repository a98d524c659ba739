import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import ConfigError, ResourceCapError
from model import PRESETS
from scenarios import SweepSpec, load_scenario, load_sweep, resolve_site
from lattice import chain

BUNDLED = ["bell-impurity", "bell-impurity-degenerate", "ising-ltqo-fail", "cluster-chain", "lr-chain"]


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_load(name):
    scenario = load_scenario(name, {"L": 6})
    assert scenario.name == name
    assert scenario.graph.size == 6
    assert scenario.params["L"] == 6
    assert scenario.model.ground_vector is not None


def test_negative_sites_count_from_the_end():
    graph = chain(8)
    assert resolve_site(graph, -1, "plan") == 7
    assert resolve_site(graph, 1, "plan") == 0
    with pytest.raises(ConfigError, match="plan"):
        resolve_site(graph, -9, "plan")
    with pytest.raises(ConfigError, match="not in graph"):
        resolve_site(graph, 42, "plan")


def test_size_decay_scales_with_the_length(bell8):
    coupling = bell8.perturbation.terms[frozenset({0, 7})].matrix
    assert_allclose(coupling, -math.exp(-0.5 * 8) * PRESETS["bell_proj"], atol=1e-15)
    assert bell8.perturbation.anchor == frozenset({0, 7})
    assert bell8.params == {"L": 8, "c": 0.5}


def test_c_override_replaces_the_size_decay():
    scenario = load_scenario("bell-impurity", {"L": 8, "c": 1.0})
    coupling = scenario.perturbation.terms[frozenset({0, 7})].matrix
    assert_allclose(coupling, -math.exp(-8.0) * PRESETS["bell_proj"], atol=1e-15)
    assert scenario.params["c"] == 1.0


def test_rebuild_keeps_existing_params():
    scenario = load_scenario("bell-impurity", {"L": 8, "c": 1.0})
    smaller = scenario.rebuild(L=6)
    assert smaller.params == {"L": 6, "c": 1.0}


def test_cluster_gates_are_layered_greedily(cluster):
    cert = cluster.certificate
    assert len(cert.gates) == 5
    assert [len(layer) for layer in cert.layers()] == [3, 2]


def test_unknown_key_reports_its_section(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('[graph]\nkind = "chain"\nL = 4\nfoo = 1\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="graph: unknown keys foo"):
        load_scenario(path)


def test_bad_term_reports_its_key_path(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('[graph]\nkind = "chain"\nL = 4\n\n[[hamiltonian.terms]]\nop = "proj_up"\n'
                    'each_site = true\n\n[[hamiltonian.terms]]\nop = "nonsense"\neach_bond = true\n',
                    encoding="utf-8")
    with pytest.raises(ConfigError, match=r"hamiltonian\.terms\[1\]\.op"):
        load_scenario(path)


def test_toml_syntax_errors_carry_a_line(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text('[graph]\nkind = "chain"\nL = \n', encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_scenario(path)
    assert info.value.line == 3
    assert str(path) in str(info.value)


def test_disconnected_explicit_graph_is_a_config_error(tmp_path):
    path = tmp_path / "split.toml"
    path.write_text('[graph]\nkind = "explicit"\nedges = [[0, 1], [2, 3]]\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="not connected"):
        load_scenario(path)


def test_unknown_scenario():
    with pytest.raises(ConfigError, match="unknown scenario"):
        load_scenario("no-such-scenario")


def test_hilbert_dimension_cap():
    with pytest.raises(ResourceCapError):
        load_scenario("bell-impurity", {"L": 15}, {"max_dim": 16384})


def test_kernel_ground_state_must_be_unique(tmp_path):
    path = tmp_path / "free.toml"
    path.write_text('[graph]\nkind = "chain"\nL = 3\n\n[hamiltonian]\nground_state = "kernel"\n\n'
                    '[[hamiltonian.terms]]\nop = "stabilizer(ZZ)"\neach_bond = true\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="kernel has dimension 2"):
        load_scenario(path)


def test_sweep_cells_follow_axis_order():
    spec = SweepSpec("s", "bell-impurity", {"c": [0.5, 1.0], "L": [8, 10]}, ("decay",))
    assert spec.cells() == [{"L": 8, "c": 0.5}, {"L": 8, "c": 1.0}, {"L": 10, "c": 0.5}, {"L": 10, "c": 1.0}]
    assert SweepSpec("s", "bell-impurity", {}, ("decay",)).cells() == [{}]


def test_bundled_sweeps_and_the_cell_cap():
    spec = load_sweep("bell-coupling")
    assert spec.scenario == "bell-impurity"
    assert len(spec.cells()) == 3
    with pytest.raises(ConfigError, match="cap is 2"):
        load_sweep("bell-length", {"sweep_cap": 2})


def test_sweep_axes_must_be_lists(tmp_path):
    path = tmp_path / "sweep.toml"
    path.write_text('scenario = "bell-impurity"\n\n[axes]\nL = 8\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="axes.L"):
        load_sweep(path)


def test_ground_state_from_the_certificate(cluster):
    omega = cluster.model.ground_vector.amplitudes
    assert np.linalg.norm(omega) == pytest.approx(1.0)
