import pytest

from errors import GeometryError
from lattice import (
    ball,
    boundary,
    chain,
    complement,
    explicit,
    fatten,
    fit_dimension,
    grid,
    read_edge_list,
    region,
    region_diameter,
    region_distance,
    ring,
    satisfies_dimension,
)


def test_chain_labels_and_distances():
    graph = chain(5)
    assert graph.vertices == (1, 2, 3, 4, 5)
    assert graph.index(3) == 2
    assert graph.distance[0, 4] == 4
    assert graph.diameter() == 4


def test_ring_wraps_around():
    graph = ring(6)
    assert graph.distance[0, 5] == 1
    assert graph.diameter() == 3
    with pytest.raises(GeometryError):
        ring(2)


def test_grid_uses_manhattan_distance():
    graph = grid(3, 2)
    assert graph.size == 6
    assert graph.distance[graph.index((1, 1)), graph.index((3, 2))] == 3


def test_unknown_site_is_rejected():
    with pytest.raises(GeometryError):
        chain(4).index(99)
    with pytest.raises(GeometryError):
        ball(chain(4), 7, 1)


def test_disconnected_graph_is_rejected():
    with pytest.raises(GeometryError, match="not connected"):
        explicit([(0, 1), (2, 3)])


def test_ball_and_fatten():
    graph = chain(7)
    assert ball(graph, 3, 2) == frozenset({1, 2, 3, 4, 5})
    assert fatten(graph, {0}, 2) == frozenset({0, 1, 2})
    assert fatten(graph, {0, 6}, 1) == frozenset({0, 1, 5, 6})
    assert complement(graph, {0, 1}) == frozenset(range(2, 7))


def test_boundary_holds_both_sides_of_the_cut():
    graph = chain(6)
    assert boundary(graph, {0, 1, 2}) == frozenset({2, 3})
    assert boundary(graph, graph.all_sites) == frozenset()


def test_region_distance_and_diameter():
    graph = chain(8)
    assert region_distance(graph, {0, 1}, {5, 7}) == 4
    assert region_diameter(graph, {1, 4, 6}) == 5
    assert region_diameter(graph, set()) == 0
    assert region(graph, [1, 8]) == frozenset({0, 7})


def test_chain_fits_dimension_one():
    fit = fit_dimension(chain(10), [1.0, 2.0])
    assert fit.d == 1.0
    assert fit.c_gamma_cap == pytest.approx(2.0)
    assert satisfies_dimension(chain(10), fit)


def test_grid_needs_dimension_two_under_a_tight_cap():
    graph = grid(5, 5)
    fit = fit_dimension(graph, [1.0, 2.0], cap=4.0)
    assert fit.d == 2.0
    assert satisfies_dimension(graph, fit)
    with pytest.raises(GeometryError, match="no dimension candidate"):
        fit_dimension(graph, [1.0], cap=4.0)


def test_single_vertex_keeps_a_positive_constant():
    graph = explicit([], 1)
    fit = fit_dimension(graph, [1.0, 2.0])
    assert fit.d == 1.0
    assert fit.c_gamma_cap == 1.0
    assert satisfies_dimension(graph, fit)


def test_read_edge_list(tmp_path):
    path = tmp_path / "edges.txt"
    path.write_text("0 1\n1 2  # spur\n\n2 3\n", encoding="utf-8")
    graph = read_edge_list(path)
    assert graph.size == 4
    assert graph.distance[0, 3] == 3

    bad = tmp_path / "bad.txt"
    bad.write_text("0 1\n1 2 3\n", encoding="utf-8")
    with pytest.raises(GeometryError, match=":2:"):
        read_edge_list(bad)
