import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyberder.feeder import (
    FeederError,
    feeder_from_dict,
    feeder_to_dict,
    load_feeder,
    net_injection,
    parse_feeder,
    solve_power_flow,
)
from oracles import newton_raphson, random_radial_doc, two_bus_voltage


def two_node_doc(r=0.01, x=0.01, p_kw=100.0):
    return {
        "base_kva": 1000.0,
        "base_kv": 1.0,
        "nodes": [0, 1],
        "lines": [{"from": 0, "to": 1, "r_ohm": r, "x_ohm": x}],
        "loads": [{"node": 1, "p_kw": p_kw, "q_kvar": 0.0}],
    }


def test_smallest_feeder_has_one_branch():
    f = feeder_from_dict(two_node_doc())
    assert f.n == 1
    assert f.head == 0


def test_bundled_ieee37_counts(ieee37):
    assert ieee37.n == 36
    assert len(ieee37.der_capacity) == 18


def test_duplicated_line_is_a_cycle():
    doc = two_node_doc()
    doc["lines"].append(dict(doc["lines"][0]))
    with pytest.raises(FeederError, match="cycle"):
        feeder_from_dict(doc)


def test_cycle_among_three_nodes():
    doc = {
        "base_kva": 1000.0,
        "base_kv": 1.0,
        "nodes": [0, 1, 2, 3],
        "lines": [
            {"from": 0, "to": 1, "r_ohm": 0.01, "x_ohm": 0.01},
            {"from": 1, "to": 2, "r_ohm": 0.01, "x_ohm": 0.01},
            {"from": 2, "to": 1, "r_ohm": 0.01, "x_ohm": 0.01},
        ],
    }
    with pytest.raises(FeederError):
        feeder_from_dict(doc)


def test_negative_impedance_rejected():
    with pytest.raises(FeederError, match="negative"):
        feeder_from_dict(two_node_doc(r=-0.01))


def test_parse_error_has_position():
    with pytest.raises(FeederError, match="line 1 column"):
        parse_feeder('{"base_kva": 1000,')


def test_missing_field_named():
    doc = two_node_doc()
    del doc["base_kv"]
    with pytest.raises(FeederError, match="base_kv"):
        feeder_from_dict(doc)


def test_head_cannot_carry_load():
    doc = two_node_doc()
    doc["loads"].append({"node": 0, "p_kw": 1.0})
    with pytest.raises(FeederError, match="head"):
        feeder_from_dict(doc)


def test_round_trip_through_dict(feeder6):
    again = feeder_from_dict(feeder_to_dict(feeder6))
    assert again.nodes == feeder6.nodes
    np.testing.assert_allclose(again.load_vector(), feeder6.load_vector(), rtol=1e-15)
    np.testing.assert_allclose(again.branch_impedance, feeder6.branch_impedance, rtol=1e-15)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_feeder("/nonexistent/feeder.json")


def test_flat_profile_without_load(feeder6):
    sol = solve_power_flow(feeder6, np.zeros(feeder6.n, dtype=complex))
    assert sol.converged
    np.testing.assert_allclose(sol.magnitudes, feeder6.head_voltage)
    assert sol.head_power == 0


def test_cancelling_injection_is_flat(feeder6):
    sol = solve_power_flow(feeder6, feeder6.load_vector() - feeder6.load_vector())
    np.testing.assert_allclose(sol.magnitudes, feeder6.head_voltage)
    assert abs(sol.head_power) == 0


def test_two_node_matches_newton_and_closed_form(feeder2):
    s = -feeder2.load_vector()
    sol = solve_power_flow(feeder2, s)
    v_nr, _ = newton_raphson(feeder2, s)
    assert sol.magnitudes[0] < 1.0
    assert abs(sol.magnitudes[0] - abs(v_nr[0])) <= 1e-8
    assert abs(sol.magnitudes[0] - two_bus_voltage(0.01, 0.01, 0.1, 0.0)) <= 1e-8


def test_power_balance_with_losses(ieee37):
    s = -ieee37.load_vector()
    sol = solve_power_flow(ieee37, s)
    losses = sol.losses(ieee37)
    assert losses.real >= 0
    assert abs(sol.head_power - (-s.sum() + losses)) <= 1e-8


def test_voltage_falls_with_load():
    mags = []
    for p in np.linspace(10, 400, 10):
        f = feeder_from_dict(two_node_doc(p_kw=p))
        mags.append(solve_power_flow(f, -f.load_vector()).magnitudes[0])
    assert np.all(np.diff(mags) < 0)


def test_divergence_reported():
    f = feeder_from_dict(two_node_doc(r=0.5, x=0.5, p_kw=5000.0))
    sol = solve_power_flow(f, -f.load_vector())
    assert not sol.converged


def test_net_injection_signs(feeder6):
    s = net_injection(feeder6)
    np.testing.assert_allclose(s, -feeder6.load_vector())
    doc = feeder_to_dict(feeder6)
    doc["loads"] = [{"node": 3, "p_kw": 30.0, "q_kvar": 10.0}]
    f = feeder_from_dict(doc)
    s = net_injection(f, {3: (0.05, 0.02)})
    assert s[f.positions([3])[0]] == pytest.approx(0.02 + 0.01j)
    s = net_injection(f, {3: (0.03, 0.01)})
    assert s[f.positions([3])[0]] == pytest.approx(0)


def test_net_injection_rejects_non_der(feeder6):
    with pytest.raises(FeederError):
        net_injection(feeder6, {1: (0.1, 0.0)})


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=2, max_value=6))
def test_sweep_matches_newton_on_random_radials(seed, n_nodes):
    rng = np.random.default_rng(seed)
    f = feeder_from_dict(random_radial_doc(rng, n_nodes))
    s = -f.load_vector()
    sol = solve_power_flow(f, s, tol=1e-12)
    v_nr, head_nr = newton_raphson(f, s)
    assert sol.converged
    assert np.max(np.abs(sol.voltages - v_nr)) <= 1e-7
    assert abs(sol.head_power - head_nr) <= 1e-7


def test_document_schema_example_loads(tmp_path):
    path = tmp_path / "f.json"
    path.write_text(json.dumps(two_node_doc()))
    assert load_feeder(path).n == 1
