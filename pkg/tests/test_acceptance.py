"""End-to-end runs of the bundled scenarios through the lab layer."""

import pytest

from lab import run_scenario


def _values(outcome, metric, **axes):
    return [row.value for row in outcome.rows
            if row.metric == metric and all(row.axes.get(k) == v for k, v in axes.items())]


@pytest.mark.parametrize("name", [
    "bell-impurity",
    "bell-impurity-degenerate",
    "ising-ltqo-fail",
    "cluster-chain",
])
def test_stitching_maps_are_channels_on_bundled_regions(config, name):
    outcome = run_scenario(name, config, ops=("contract",))
    assert outcome.flags["contract"] is True
    assert outcome.exit_code == 0
    assert len(_values(outcome, "light_cone")) == 3
    assert max(_values(outcome, "ground_fixed")) <= 1e-8


def test_cluster_chain_satisfies_every_assumption(config):
    outcome = run_scenario("cluster-chain", config, ops=("check",))
    assert outcome.flags == {"frustration_free": True, "ltqo": True, "gap": True, "invertible": True}
    assert _values(outcome, "certificate_fidelity")[0] == pytest.approx(1.0)


def test_bell_impurity_decays_away_from_the_ends(config):
    outcome = run_scenario("bell-impurity", config, ops=("decay",))
    assert _values(outcome, "ground_degeneracy") == [1.0]
    assert _values(outcome, "ground_residual")[0] <= 1e-6
    profile = [_values(outcome, "decay_distance", x=x, r=1)[0] for x in range(2, 7)]
    assert all(a > b for a, b in zip(profile, profile[1:]))
    assert profile[-1] <= 1e-3
    slack = _values(outcome, "triangle_slack")
    assert min(slack) >= -1e-10


def test_degenerate_impurity_reports_the_worst_ground_vector(config):
    outcome = run_scenario("bell-impurity-degenerate", config, ops=("decay",), overrides={"L": 6})
    assert _values(outcome, "ground_degeneracy") == [4.0]
    assert outcome.exit_code == 0
    near_ends = [_values(outcome, "decay_distance", x=x, r=1)[0] for x in (2, 5)]
    middle = [_values(outcome, "decay_distance", x=x, r=1)[0] for x in (3, 4)]
    assert near_ends == pytest.approx([2.0, 2.0], abs=1e-9)
    assert max(middle) <= 1e-10


def test_ising_without_pin_stays_far_from_the_pinned_state(config):
    outcome = run_scenario("ising-ltqo-fail", config, ops=("check", "decay"), overrides={"L": 8})
    assert outcome.flags["ltqo"] is False
    assert outcome.exit_code == 0
    assert _values(outcome, "ground_degeneracy") == [2.0]
    for r in (1, 2):
        assert _values(outcome, "decay_distance", x=4, r=r)[0] == pytest.approx(2.0, abs=1e-8)


@pytest.mark.parametrize("name", ["bell-impurity", "ising-ltqo-fail"])
def test_isoperimetry_bound_holds(config, name):
    outcome = run_scenario(name, config, ops=("iso",))
    assert outcome.flags["isoperimetry"] is True
    exact = _values(outcome, "iso_exact_e1")
    replayed = _values(outcome, "iso_replayed_bound")
    assert len(exact) == len(replayed) == 1
    assert replayed[0] >= exact[0] - 1e-10


def test_lieb_robinson_bound_on_singlet_chain(config):
    outcome = run_scenario("lr-chain", config, ops=("lr",))
    assert outcome.flags["lieb_robinson"] is True
    measured = {(r.axes["pair"], r.axes["t"]): r.value for r in outcome.rows if r.metric == "lr_measured"}
    bound = {(r.axes["pair"], r.axes["t"]): r.value for r in outcome.rows if r.metric == "lr_bound"}
    assert len(measured) == 6 * 4
    for key, value in measured.items():
        assert value <= bound[key] + 1e-9
    assert all(value <= 1e-14 for (pair, t), value in measured.items() if t == 0.0)
    assert _values(outcome, "lr_violations") == [0.0]
