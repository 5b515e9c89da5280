import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tapopf.case_model import (BranchRecord, BusType, Case, CaseError, IsolatedBusError, ParseError,
                               load_case, parse_case, permute_buses, serialize_case, to_case,
                               to_internal, validate_case)
from tapopf.randcase import random_case

from conftest import DATA

TWO_BUS = {
    "baseMVA": 100,
    "bus": [{"id": 1, "type": "REF"}, {"id": 2, "type": "PQ", "Pd": 100, "Qd": 20}],
    "branch": [{"fbus": 1, "tbus": 2, "r": 0.0, "x": 0.1}],
    "gen": [{"bus": 1, "c1": 10}],
}


def two_bus(**branch):
    doc = json.loads(json.dumps(TWO_BUS))
    doc["branch"][0].update(branch)
    return parse_case(json.dumps(doc))


def codes(rep):
    return [i.code for i in rep]


def test_parse_minimal_two_bus():
    c = two_bus()
    assert (len(c.buses), len(c.branches), len(c.gens)) == (2, 1, 1)
    assert c.buses[0].type is BusType.REF
    assert c.gens[0].cost.c1 == 10


def test_parser_keeps_zero_tap():
    c = two_bus(tau=0)
    assert c.branches[0].tau0 == 0
    m = to_internal(c)
    assert m.tau0[0] == 1.0


def test_case9_counts():
    c = load_case(DATA / "case9.mpc")
    assert (len(c.buses), len(c.branches), len(c.gens)) == (9, 9, 3)
    assert c.gencosts[1].c2 == 0.085


def test_json_and_table_fixtures_agree():
    assert load_case(DATA / "case9.json") == load_case(DATA / "case9.mpc")


def test_table_format_warns_on_extra_columns():
    text = """baseMVA 100
BUS
1 3 0 0 0 0 1 0 0.9 1.1 99
2 1 50 0
BRANCH
1 2 0 0.1
GEN
1
"""
    c = parse_case(text, "mpc")
    assert len(c.warnings) == 1 and "line 3" in c.warnings[0]
    assert c.buses[1].Pd == 50


def test_json_unknown_key_warns():
    doc = json.loads(json.dumps(TWO_BUS))
    doc["bus"][0]["zone"] = 4
    c = parse_case(json.dumps(doc))
    assert any("zone" in w for w in c.warnings)


@pytest.mark.parametrize("text, line", [
    ("baseMVA 100\nBUS\n1 3\n2 1 x\n", 4),
    ("baseMVA 100\n1 3\n", 2),
    ("BUS\n1 3\n", None),
    ("baseMVA 100\nBUS\n1 3\nGEN\n1\nCOST\n0 1 0\n0 1 0\n", 7),
])
def test_table_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as err:
        parse_case(text, "mpc")
    assert err.value.line == line


def test_json_parse_errors():
    with pytest.raises(ParseError):
        parse_case("{not json")
    with pytest.raises(ParseError):
        parse_case(json.dumps({"baseMVA": 100, "bus": [{"type": "REF"}]}))
    doc = json.loads(json.dumps(TWO_BUS))
    doc["bus"][1]["id"] = 1
    with pytest.raises(ParseError, match="duplicate bus"):
        parse_case(json.dumps(doc))


def test_unknown_format():
    with pytest.raises(ValueError):
        parse_case("", "xml")


def test_validate_good_case_is_empty():
    assert validate_case(two_bus()) == []
    assert validate_case(load_case(DATA / "good.json")).ok


def test_validate_two_slack_once():
    rep = validate_case(load_case(DATA / "twoslack.json"))
    assert codes(rep) == ["multiple slack"]


def test_validate_nonpositive_tap_lower_bound():
    rep = validate_case(two_bus(adjustable=True, tau=1.0, tauMin=0.0))
    assert "nonpositive tap lower bound" in codes(rep)


@pytest.mark.parametrize("change, code", [
    ({"tbus": 7}, "unknown bus"),
    ({"tbus": 1}, "self loop"),
    ({"x": 0.0}, "zero impedance"),
    ({"tau": -1.0}, "negative tap"),
    ({"Imax": -1.0}, "negative current limit"),
    ({"adjustable": True, "tau": 1.2}, "tap outside bounds"),
    ({"adjustable": True, "theta": 5.0, "thetaMin": -1.0, "thetaMax": 1.0}, "shift outside bounds"),
])
def test_validate_branch_problems(change, code):
    assert code in codes(validate_case(two_bus(**change)))


def test_validate_case_level_problems():
    c = two_bus()
    assert "nonpositive baseMVA" in codes(validate_case(replace(c, baseMVA=0.0)))
    no_ref = replace(c, buses=tuple(replace(b, type=BusType.PQ) for b in c.buses))
    assert "no slack" in codes(validate_case(no_ref))
    bad_v = replace(c, buses=(replace(c.buses[0], Vmin=1.2),) + c.buses[1:])
    assert "bad voltage bounds" in codes(validate_case(bad_v))
    bad_p = replace(c, gens=(replace(c.gens[0], Pmin=5, Pmax=1),))
    assert "bad P bounds" in codes(validate_case(bad_p))
    bad_cost = replace(c, gens=(replace(c.gens[0], cost=replace(c.gens[0].cost, c2=float("nan"))),))
    assert "nonfinite cost" in codes(validate_case(bad_cost))


def test_to_internal_rejects_invalid():
    with pytest.raises(CaseError):
        to_internal(load_case(DATA / "twoslack.json"))


def test_to_internal_per_unit_and_incidence():
    m = to_internal(two_bus())
    assert m.ys[0] == pytest.approx(-10j)
    assert m.Sd[1].real == pytest.approx(1.0)
    assert m.Cf.toarray().tolist() == [[1, 0]]
    assert m.Ct.toarray().tolist() == [[0, 1]]


def test_out_of_service_branch_isolating_bus():
    with pytest.raises(IsolatedBusError):
        to_internal(two_bus(status=False))


def test_out_of_service_branch_dropped():
    c = load_case(DATA / "case9.mpc")
    branches = list(c.branches)
    # a parallel copy of branch 2 that is switched off
    branches.append(replace(branches[1], status=False))
    m = to_internal(replace(c, branches=tuple(branches)))
    assert m.nl == 9
    assert list(m.branch_rows) == list(range(9))


def test_shunts_aggregate_per_bus():
    c = two_bus()
    c = replace(c, buses=(c.buses[0], replace(c.buses[1], Gs=3.0, Bs=-4.0)))
    m = to_internal(c)
    assert m.Ysh[1] == pytest.approx(0.03 - 0.04j)


@pytest.mark.parametrize("name", ["case2.json", "case9.json", "case9.mpc", "case3_tap.json",
                                  "case3_tap_bound.json", "good.json", "twoslack.json"])
def test_round_trip_fixtures(name):
    c = load_case(DATA / name)
    for fmt in ("json", "mpc"):
        assert parse_case(serialize_case(c, fmt), fmt) == c


def test_internal_rebuild_is_stable(case9):
    again = to_internal(to_case(case9))
    assert case9.equals(again, tol=1e-12)
    assert to_internal(to_case(again)).equals(again, tol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), fmt=st.sampled_from(["json", "mpc"]))
def test_round_trip_random(seed, fmt):
    c = random_case(np.random.default_rng(seed))
    assert parse_case(serialize_case(c, fmt), fmt) == c


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), data=st.data())
def test_bus_permutation_invariance(seed, data):
    c = random_case(np.random.default_rng(seed))
    order = data.draw(st.permutations(range(len(c.buses))))
    a, b = to_internal(c), to_internal(permute_buses(c, order))
    # bus i of the permuted case is bus order[i] of the original
    P = np.asarray(order)
    assert np.array_equal(b.bus_ids, a.bus_ids[P])
    assert np.allclose(b.Sd, a.Sd[P])
    assert np.allclose(b.Ysh, a.Ysh[P])
    assert np.array_equal(a.f, P[b.f]) and np.array_equal(a.t, P[b.t])
    assert np.allclose(a.ys, b.ys)
    assert np.array_equal(a.gen_bus, P[b.gen_bus])


def test_branch_defaults():
    br = BranchRecord(1, 2, 0.0, 0.1, theta0=3.0)
    assert (br.thetaMin, br.thetaMax) == (3.0, 3.0)
    assert (br.tauMin, br.tauMax) == (0.9, 1.1)


def test_case_equality_ignores_warnings():
    c = two_bus()
    assert replace(c, warnings=("x",)) == c
    assert isinstance(c, Case)
