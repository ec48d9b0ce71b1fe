import numpy as np
import pytest

from _helpers import block_expansion, random_model
from dcim_core.engine import (
    NodeStreams,
    expected_state,
    expected_state_fixed,
    run_trajectory,
    sample_frequencies,
    step_marginal,
    step_operators,
    step_sample,
    step_sample_batch,
)
from dcim_core.errors import ConfigurationError, DimensionError
from dcim_core.model import InfluenceSpec
from dcim_core.rules import ConstraintRule, get_policy
from dcim_core.states import NetworkState, StateSpace, check_block_probabilities

LOAD = StateSpace.load_balancing()


def _absorbing_model(n=3):
    """Every transition lands in N."""
    to_normal = np.tile([0.0, 1.0, 0.0], (3, 1))
    topology = ~np.eye(n, dtype=bool)
    d = np.full((n, n), 0.5 / (n - 1))
    np.fill_diagonal(d, 0.5)
    return InfluenceSpec.create(LOAD, d, to_normal, topology=topology, default_cross=to_normal)


def _ergodic_model():
    from dcim_core import get_model_path, load_model

    return load_model(get_model_path("single_node_ergodic"))


def test_single_identity_node():
    model = InfluenceSpec.create(LOAD, [[1.0]], np.eye(3))
    p = step_marginal(NetworkState.from_labels(["N"], LOAD), model, ConstraintRule.never())
    assert p.tolist() == [0.0, 1.0, 0.0]


def test_three_node_p1_matches_block_expansion(three_node):
    rule = get_policy("P1")
    for labels in (["U", "O", "O"], ["O", "N", "U"], ["U", "U", "O"]):
        state = NetworkState.from_labels(labels, LOAD)
        ops = step_operators(state, three_node, rule)
        p = step_marginal(state, three_node, rule)
        np.testing.assert_allclose(p, block_expansion(three_node, state, ops.c, ops.e), atol=1e-12)


def test_marginal_is_pure(three_node):
    state = NetworkState.from_labels(["U", "O", "N"], LOAD)
    first = step_marginal(state, three_node, get_policy("P4"))
    assert np.array_equal(first, step_marginal(state, three_node, get_policy("P4")))


def test_batch_sampling_matches_marginal(rng):
    for k in range(20):
        n = int(rng.integers(1, 6))
        model = random_model(rng, n, edge_p=0.6, dynamic=k % 4 == 0)
        state = NetworkState.random(n, 3, rng)
        rule = get_policy(f"P{k % 5 + 1}")
        samples = step_sample_batch(state, model, rule, 100_000, np.random.default_rng(k))
        assert samples.shape == (100_000, n)
        freq = sample_frequencies(samples, 3)
        assert np.abs(freq - step_marginal(state, model, rule)).max() <= 0.01


def test_sampling_never_picks_zero_weight_entries(two_node):
    # node 1's own chain cannot leave U for O
    state = NetworkState.from_labels(["O", "U"], LOAD)
    never = ConstraintRule.never()
    samples = step_sample_batch(state, two_node, never, 5000, np.random.default_rng(3))
    p = step_marginal(state, two_node, never).reshape(2, 3)
    assert p[1, LOAD.index("O")] == 0.0
    for i in range(2):
        for k in np.nonzero(p[i] == 0)[0]:
            assert not np.any(samples[:, i] == k)


def test_step_sample_with_generator_and_streams(three_node):
    state = NetworkState.from_labels(["U", "O", "N"], LOAD)
    nxt = step_sample(state, three_node, get_policy("P2"), np.random.default_rng(1))
    assert nxt.n == 3 and nxt.m == 3
    with pytest.raises(DimensionError):
        step_sample(state, three_node, get_policy("P2"), NodeStreams(1, 0, 4))


def test_node_streams_do_not_depend_on_buffering():
    big, small = NodeStreams(5, 3, 4), NodeStreams(5, 3, 4, buffer=7)
    for _ in range(300):
        assert np.array_equal(big.draw(), small.draw())


def test_node_streams_differ_between_runs():
    a, b = NodeStreams(5, 0, 2), NodeStreams(5, 1, 2)
    assert not np.array_equal(a.draw(), b.draw())
    assert a.init_rng.integers(0, 2 ** 32) != b.init_rng.integers(0, 2 ** 32)


def test_trajectory_is_reproducible(three_node):
    start = NetworkState.from_labels(["U", "O", "N"], LOAD)
    runs = [
        run_trajectory(start, three_node, get_policy("P3"), 50, NodeStreams(7, 0, 3))
        for _ in range(2)
    ]
    assert np.array_equal(runs[0].state_matrix(), runs[1].state_matrix())
    assert np.array_equal(runs[0].prob_matrix(), runs[1].prob_matrix())
    assert runs[0].seed == 7


def test_trajectory_shapes_and_constraints(three_node):
    start = NetworkState.from_labels(["U", "O", "N"], LOAD)
    traj = run_trajectory(
        start, three_node, get_policy("P3"), 1, np.random.default_rng(0), record_constraints=True
    )
    assert traj.horizon == 1
    assert traj.state_matrix().shape == (2, 3)
    assert traj.prob_matrix().shape == (1, 9)
    assert traj.constraints[0].shape == (3, 3)
    np.testing.assert_allclose(traj.step_probs[0], step_marginal(start, three_node, get_policy("P3")))


def test_trajectory_without_probabilities(three_node):
    start = NetworkState.from_labels(["U", "O", "N"], LOAD)
    traj = run_trajectory(start, three_node, get_policy("P3"), 3, np.random.default_rng(0), record_probs=False)
    with pytest.raises(ValueError):
        traj.prob_matrix()


def test_horizon_must_be_positive(three_node):
    start = NetworkState.from_labels(["U", "O", "N"], LOAD)
    with pytest.raises(ConfigurationError):
        run_trajectory(start, three_node, get_policy("P3"), 0, np.random.default_rng(0))


def test_absorbing_model_stays_normal():
    model = _absorbing_model()
    start = NetworkState.from_labels(["O", "U", "O"], LOAD)
    traj = run_trajectory(start, model, ConstraintRule.never(), 20, NodeStreams(0, 0, 3))
    assert np.all(traj.state_matrix()[1:] == LOAD.index("N"))


def test_long_trajectory_stays_normalized(thirty_node):
    streams = NodeStreams(11, 0, 30)
    start = NetworkState.random(30, 3, streams.init_rng)
    traj = run_trajectory(start, thirty_node, get_policy("P3"), 1000, streams)
    for p in traj.step_probs:
        assert check_block_probabilities(p, 3, tol=1e-10)


def test_expected_state_of_empty_sequence(three_node):
    start = NetworkState.from_labels(["U", "O", "N"], LOAD)
    assert np.array_equal(expected_state(start, []), start.vector)


def test_expected_state_composes_frozen_steps(three_node):
    start = NetworkState.from_labels(["U", "O", "N"], LOAD)
    h = step_operators(start, three_node, get_policy("P5")).total_influence()
    p = start.vector
    for _ in range(20):
        p = p @ h
    np.testing.assert_allclose(expected_state(start, [h] * 20), p, atol=1e-10)
    np.testing.assert_allclose(expected_state_fixed(start, h, 20), p, atol=1e-10)
    np.testing.assert_allclose(expected_state(start, [h]), step_marginal(start, three_node, get_policy("P5")))


def test_expected_state_of_ergodic_chain():
    model = _ergodic_model()
    start = NetworkState(np.array([1]), 2)
    h = step_operators(start, model, ConstraintRule.never()).total_influence()
    np.testing.assert_allclose(expected_state_fixed(start, h, 10_000), [2 / 3, 1 / 3], atol=1e-8)


def test_expected_state_dimension_mismatch():
    with pytest.raises(DimensionError, match=r"H\[1\]"):
        expected_state(np.array([1.0, 0.0]), [np.eye(2), np.eye(3)])
    with pytest.raises(DimensionError):
        expected_state_fixed(np.array([1.0, 0.0]), np.eye(3), 2)
