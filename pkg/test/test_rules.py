import json

import numpy as np
import pytest

from dcim_core.errors import ConfigurationError
from dcim_core.model import build_constraint_matrix
from dcim_core.rules import (
    BUILTIN_POLICIES,
    ConstraintRule,
    PolicyCatalog,
    get_policy,
    load_policy_file,
    parse_policy_list,
    save_policy_file,
)
from dcim_core.states import NetworkState, StateSpace


def test_builtin_policies_are_nested():
    p1, p2, p3, p4, p5 = (get_policy(f"P{k}") for k in range(1, 6))
    assert p1.issubset(p2) and p2.issubset(p4) and p4.issubset(p5)
    assert p1.issubset(p3) and p3.issubset(p4)
    assert not p2.issubset(p3) and not p3.issubset(p2)


def test_builtin_constraint_matrices_are_nested(thirty_node, rng):
    p1, p2, p3, p4, p5 = (get_policy(f"P{k}") for k in range(1, 6))
    for _ in range(50):
        state = NetworkState.random(thirty_node.n, thirty_node.m, rng)
        c = {
            rule.name: build_constraint_matrix(rule, state, thirty_node.topology, thirty_node.states)
            for rule in (p1, p2, p3, p4, p5)
        }
        for name in ("P2", "P3", "P4", "P5"):
            assert np.all(c["P1"] <= c[name]), name
        assert np.all(c["P2"] <= c["P4"]) and np.all(c["P3"] <= c["P4"])
        assert np.all(c["P4"] <= c["P5"])


def test_receiver_comes_first():
    p1 = get_policy("P1")
    assert p1.evaluate("U", "O")
    assert not p1.evaluate("O", "U")


def test_table_is_indexed_receiver_sender():
    states = StateSpace.load_balancing()
    table = get_policy("P3").table(states)
    o, n, u = (states.index(x) for x in "ONU")
    assert table[u, o] and table[n, o]
    assert table.sum() == 2


def test_always_and_never():
    states = StateSpace.load_balancing()
    assert ConstraintRule.always(states).table(states).all()
    assert not ConstraintRule.never().table(states).any()


def test_rule_with_unknown_label():
    rule = ConstraintRule("odd", frozenset({("U", "Z")}))
    with pytest.raises(ConfigurationError, match="'Z'"):
        rule.check(StateSpace.load_balancing())


def test_catalog_lookup_and_duplicates():
    assert BUILTIN_POLICIES.names == ["P1", "P2", "P3", "P4", "P5"]
    assert parse_policy_list("P3, P1").names == ["P3", "P1"]
    with pytest.raises(ConfigurationError, match="P9"):
        parse_policy_list("P1,P9")
    with pytest.raises(ConfigurationError):
        parse_policy_list(" , ")
    with pytest.raises(ConfigurationError, match="duplicate"):
        PolicyCatalog([get_policy("P1"), get_policy("P1")])


def test_policy_file_round_trip(tmp_path):
    rule = ConstraintRule("balance", frozenset({("U", "O")}), ((1, 0, True),))
    path = tmp_path / "policies.json"
    save_policy_file(path, [rule, get_policy("P5")])
    catalog = load_policy_file(path)
    assert catalog.names == ["balance", "P5"]
    assert catalog.get("balance") == rule


def test_policy_file_single_object(tmp_path):
    path = tmp_path / "one.json"
    path.write_text(json.dumps({"name": "idle", "allowed_pairs": []}))
    catalog = load_policy_file(path)
    assert len(catalog) == 1 and catalog[0].allowed_pairs == frozenset()


def test_policy_file_errors_name_the_path(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"policies": [{"name": "x", "allowed_pairs": [["U"]]}]}))
    with pytest.raises(ConfigurationError, match=r"\$\.policies\[0\]\.allowed_pairs\[0\]"):
        load_policy_file(path)
    path.write_text("{not json")
    with pytest.raises(ConfigurationError, match="invalid JSON"):
        load_policy_file(path)
