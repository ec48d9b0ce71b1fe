import copy
import json

import numpy as np
import pytest

from _helpers import block_expansion, random_d, random_model, random_topology
from dcim_core.engine import im_step_marginal, step_marginal, step_operators
from dcim_core.errors import (
    BankRangeError,
    ConfigurationError,
    ContractViolationError,
    DimensionError,
    MissingTransitionError,
    ModelValidationError,
)
from dcim_core.model import (
    InfluenceSpec,
    TransitionBank,
    activation_count,
    build_constraint_matrix,
    build_effective_influence,
    build_total_influence,
    check_constraint_matrix,
    load_model,
    model_from_json,
    model_to_json,
    resolve_constraint,
    select_internal_mc,
    validate_model,
)
from dcim_core.rules import ConstraintRule, get_policy
from dcim_core.states import NetworkState, StateSpace

LOAD = StateSpace.load_balancing()

TWO_NODE_DOC = {
    "states": ["O", "N", "U"],
    "nodes": 2,
    "self_influence": [0.4, 0.7],
    "edges": [
        {"from": 1, "to": 0, "d": 0.6, "A": [[0.5, 0.5, 0.0]] * 3},
        {"from": 0, "to": 1, "d": 0.3, "A": [[0.5, 0.5, 0.0]] * 3},
    ],
    "internal_mc": [
        [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.3, 0.6]],
        [[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.0, 0.4, 0.6]],
    ],
}


def _doc(**changes):
    doc = copy.deepcopy(TWO_NODE_DOC)
    doc.update(changes)
    return doc


def _validation_error(doc):
    with pytest.raises(ModelValidationError) as exc:
        validate_model(model_from_json(doc)).raise_if_failed()
    return exc.value


# --- E ------------------------------------------------------------------------


def test_effective_influence_folds_deactivated_weight():
    d = np.array([[0.4, 0.6], [0.3, 0.7]])
    c = np.array([[1, 0], [1, 1]])
    e = build_effective_influence(d, c)
    np.testing.assert_allclose(e, [[1.0, 0.0], [0.3, 0.7]], atol=1e-15)


def test_effective_influence_is_row_stochastic(rng):
    for _ in range(10000):
        n = int(rng.integers(1, 21))
        topology = random_topology(rng, n, rng.random())
        d = random_d(rng, topology)
        c = (rng.random((n, n)) < 0.5) & topology
        np.fill_diagonal(c, True)
        e = build_effective_influence(d, c)
        assert np.all(e >= 0)
        assert np.abs(e.sum(axis=1) - 1.0).max() <= 1e-12


def test_all_active_constraint_leaves_d_unchanged(rng):
    for _ in range(200):
        n = int(rng.integers(1, 8))
        topology = random_topology(rng, n, 0.6)
        d = random_d(rng, topology)
        c = topology | np.eye(n, dtype=bool)
        assert np.array_equal(build_effective_influence(d, c), d)


def test_identity_constraint_isolates_nodes(three_node):
    c = np.eye(3)
    e = build_effective_influence(three_node.d, c)
    np.testing.assert_allclose(e, np.eye(3), atol=1e-14)
    state = NetworkState.from_labels(["O", "U", "N"], LOAD)
    p = step_marginal(state, three_node, c).reshape(3, 3)
    for i in range(3):
        expected = three_node.bank.a_self[i][state.indices[i]]
        np.testing.assert_allclose(p[i], expected, atol=1e-14)


def test_effective_influence_dimension_checks():
    with pytest.raises(DimensionError):
        build_effective_influence(np.eye(2), np.eye(3))
    with pytest.raises(DimensionError):
        build_effective_influence(np.ones((2, 3)), np.ones((2, 3)))


# --- C ------------------------------------------------------------------------


def test_constraint_matrix_orientation(three_node):
    # node 0 underloaded, its senders 1 and 2 overloaded
    state = NetworkState.from_labels(["U", "O", "O"], LOAD)
    c = build_constraint_matrix(get_policy("P1"), state, three_node.topology, LOAD)
    assert c.dtype == np.uint8
    assert c.tolist() == [[1, 1, 1], [0, 1, 0], [0, 0, 1]]


def test_constraint_matrix_overrides(three_node):
    state = NetworkState.from_labels(["U", "O", "O"], LOAD)
    rule = ConstraintRule("pinned", frozenset({("U", "O")}), ((1, 0, True), (0, 2, False)))
    c = build_constraint_matrix(rule, state, three_node.topology, LOAD)
    assert c.tolist() == [[1, 1, 0], [1, 1, 0], [0, 0, 1]]


def test_explicit_constraint_checks(three_node):
    with pytest.raises(ConfigurationError, match="c_ii"):
        check_constraint_matrix(np.zeros((3, 3)), 3)
    with pytest.raises(ConfigurationError, match="0 or 1"):
        check_constraint_matrix(np.full((3, 3), 2), 3)
    with pytest.raises(DimensionError):
        check_constraint_matrix(np.eye(2), 3)
    off_topology = np.eye(3, dtype=np.uint8)
    off_topology[1, 2] = 1
    state = NetworkState.from_labels(["U", "O", "O"], LOAD)
    with pytest.raises(ConfigurationError, match="no edge 2->1"):
        resolve_constraint(off_topology, state, three_node)


# --- x and dynamic banks ------------------------------------------------------


def test_activation_count_conventions():
    c = np.array([[1, 1, 0], [0, 1, 0], [1, 1, 1]])
    assert activation_count(1, c, "column-sum") == 2
    assert activation_count(1, c, "row-sum") == 0
    assert activation_count(2, c, "row-sum") == 2
    with pytest.raises(ConfigurationError):
        activation_count(0, c, "diagonal")


def test_select_internal_mc_follows_column_sum(dynamic_three_node):
    model = dynamic_three_node
    bank = model.bank
    c = np.eye(3, dtype=np.uint8)
    assert np.array_equal(select_internal_mc(0, c, bank), bank.a_dynamic[0][0])
    c[1, 0] = c[2, 0] = 1
    assert np.array_equal(select_internal_mc(0, c, bank), bank.a_dynamic[0][2])
    c[2, 1] = 1
    assert np.array_equal(select_internal_mc(1, c, bank), bank.a_dynamic[1][1])
    with pytest.raises(ContractViolationError):
        select_internal_mc(2, c, bank)


def test_select_internal_mc_out_of_range():
    mat = np.eye(2)
    bank = TransitionBank(np.stack([mat, mat]), np.zeros((2, 2, 2, 2)), (np.stack([mat]), None))
    c = np.ones((2, 2), dtype=np.uint8)
    with pytest.raises(BankRangeError, match="x = 1"):
        select_internal_mc(0, c, bank)


def test_dynamic_internal_mc_reaches_the_marginal(dynamic_three_node):
    model = dynamic_three_node
    state = NetworkState.from_labels(["O", "U", "U"], LOAD)
    ops = step_operators(state, model, get_policy("P1"))
    # both receivers take work from overloaded node 0
    assert ops.c[1, 0] == 1 and ops.c[2, 0] == 1
    assert np.array_equal(ops.a[0, 0], model.bank.a_dynamic[0][2])
    p = step_marginal(state, model, get_policy("P1"))
    np.testing.assert_allclose(p, block_expansion(model, state, ops.c, ops.e), atol=1e-12)


# --- H ------------------------------------------------------------------------


def test_total_influence_blocks(two_node):
    c = np.array([[1, 1], [0, 1]])
    e = build_effective_influence(two_node.d, c)
    h = build_total_influence(e, two_node.bank, c)
    m = 3
    assert h.shape == (6, 6)
    for u in range(2):
        for v in range(2):
            block = h[u * m:(u + 1) * m, v * m:(v + 1) * m]
            a = two_node.bank.a_self[u] if u == v else two_node.bank.a_cross[u, v]
            np.testing.assert_allclose(block, e[v, u] * a, atol=0)
    # edge 0->1 is off, so node 0 contributes nothing to node 1
    np.testing.assert_allclose(h[:3, 3:], 0.0)


def test_marginal_matches_block_expansion(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        model = random_model(rng, n, edge_p=rng.random(), dynamic=bool(rng.random() < 0.3))
        state = NetworkState.random(n, 3, rng)
        rule = get_policy(f"P{int(rng.integers(1, 6))}")
        ops = step_operators(state, model, rule)
        p = step_marginal(state, model, rule)
        np.testing.assert_allclose(p, block_expansion(model, state, ops.c, ops.e), rtol=0, atol=1e-12)
        assert np.abs(p.reshape(n, 3).sum(axis=1) - 1.0).max() <= 1e-10


def test_always_rule_reduces_to_unconstrained_model(rng):
    always = ConstraintRule.always(LOAD)
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        model = random_model(rng, n, edge_p=rng.random())
        state = NetworkState.random(n, 3, rng)
        assert np.array_equal(step_marginal(state, model, always), im_step_marginal(state, model))


def test_missing_cross_transition_is_reported():
    a_self = np.stack([np.eye(2), np.eye(2)])
    bank = TransitionBank(a_self, np.zeros((2, 2, 2, 2)))
    c = np.ones((2, 2))
    e = np.array([[0.5, 0.5], [0.0, 1.0]])
    with pytest.raises(MissingTransitionError, match="edge 1->0"):
        build_total_influence(e, bank, c)


# --- Validation and model files -----------------------------------------------


def test_bundled_models_validate(two_node, three_node, dynamic_three_node, thirty_node):
    for model in (two_node, three_node, dynamic_three_node, thirty_node):
        assert validate_model(model).ok
    assert dynamic_three_node.dynamic and not three_node.dynamic
    assert thirty_node.n == 30


def test_d_row_error_names_its_source():
    err = _validation_error(_doc(self_influence=[0.4, 0.8]))
    assert "$.self_influence[1] + $.edges(to=1)" in err.report.locations()
    assert "$.self_influence[0] + $.edges(to=0)" not in err.report.locations()


def test_internal_mc_error_names_its_source():
    doc = _doc()
    doc["internal_mc"][0] = [[0.6, 0.3, 0.2], [0.2, 0.5, 0.3], [0.1, 0.3, 0.6]]
    err = _validation_error(doc)
    assert err.report.locations() == ["$.internal_mc[0]"]
    assert "row 0" in str(err)


def test_cross_transition_error_names_its_source():
    doc = _doc()
    doc["edges"][1]["A"] = [[0.5, 0.4, 0.0]] * 3
    err = _validation_error(doc)
    assert err.report.locations() == ["$.edges[1].A"]


def test_missing_cross_transition_fails_validation():
    doc = _doc()
    del doc["edges"][0]["A"]
    err = _validation_error(doc)
    assert any(loc.startswith("$.edges[0]") for loc in err.report.locations())


def test_wrong_bank_size_fails_validation():
    doc = _doc(x_convention="column-sum")
    row = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.3, 0.6]]
    # node 0 influences one node, so it needs two bank members
    doc["internal_mc"][0] = {"bank": [row, row, row]}
    err = _validation_error(doc)
    assert err.report.locations() == ["$.internal_mc[0].bank"]
    assert "requires 2" in str(err)


def test_structural_errors_raise_immediately():
    with pytest.raises(ModelValidationError, match=r"\$\.nodes"):
        model_from_json(_doc(nodes=0))
    doc = _doc()
    doc["edges"].append({"from": 1, "to": 0})
    with pytest.raises(ModelValidationError, match="duplicate edge"):
        model_from_json(doc)
    with pytest.raises(ModelValidationError, match=r"\$\.x_convention"):
        model_from_json(_doc(x_convention="diagonal"))


def test_sparsity_violation():
    d = np.array([[0.5, 0.5], [0.0, 1.0]])
    model = InfluenceSpec.create(LOAD, d, np.eye(3), topology=np.zeros((2, 2), dtype=bool))
    report = validate_model(model)
    assert not report.ok
    assert report.locations() == ["D[0]"]
    assert "no edge 1->0" in report.issues[0].message


def test_validate_never_raises_on_shape_errors():
    bank = TransitionBank(np.zeros((2, 3, 3)), np.zeros((1, 1, 3, 3)))
    model = InfluenceSpec(LOAD, np.eye(2), np.zeros((2, 2), dtype=bool), bank)
    report = validate_model(model)
    assert report.locations() == ["A_cross"]
    assert report.to_json()["ok"] is False


def test_scalar_self_influence_splits_the_rest():
    doc = _doc(self_influence=0.5)
    for edge in doc["edges"]:
        del edge["d"]
    doc["nodes"] = 3
    doc["internal_mc"].append(doc["internal_mc"][0])
    model = model_from_json(doc)
    np.testing.assert_allclose(model.d, [[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])


def test_bank_head_doubles_as_the_static_chain(dynamic_three_node):
    bank = dynamic_three_node.bank
    assert np.array_equal(bank.a_self[0], bank.a_dynamic[0][0])
    assert not bank.is_dynamic(2)
    static = dynamic_three_node.static()
    assert not static.dynamic


def test_model_file_round_trip(tmp_path, three_node):
    path = tmp_path / "copy.json"
    path.write_text(json.dumps(model_to_json(three_node)))
    again = load_model(path)
    assert np.array_equal(again.d, three_node.d)
    assert np.array_equal(again.topology, three_node.topology)
    assert np.array_equal(again.bank.a_self, three_node.bank.a_self)
    for i, j in three_node.edges():
        assert np.array_equal(again.bank.a_cross[j, i], three_node.bank.a_cross[j, i])


def test_load_model_x_convention_override(tmp_path):
    from dcim_core import get_model_path

    model = load_model(get_model_path("two_node"), x_convention="row-sum")
    assert model.x_convention == "row-sum"
    with pytest.raises(ConfigurationError):
        load_model(get_model_path("two_node"), x_convention="diagonal")
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    with pytest.raises(ConfigurationError, match="invalid JSON"):
        load_model(bad)
