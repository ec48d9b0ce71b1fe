"""Time evolution: exact one-step marginals and Monte Carlo trajectories.

C, E and the effective transition blocks are rebuilt from S[t] before any
node moves, and every node then updates synchronously. The exact marginal
p[t+1] = S[t] H is only exact for one step from a known state; multi-step
statistics come from sampled trajectories.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError, DimensionError
from .model import (
    InfluenceSpec,
    build_effective_influence,
    effective_transitions,
    resolve_constraint,
    total_influence_from_blocks,
)
from .states import NetworkState, as_state

log = logging.getLogger(__name__)


class NodeStreams:
    """Independent uniform streams for the nodes of one run.

    The streams are spawned from SeedSequence([seed, run_id]), so a run is
    reproducible on its own no matter which worker executes it or in which
    order. The first child seeds ``init_rng`` (initial-state draws); child
    k+1 feeds node k. Uniforms are pre-drawn in blocks of ``buffer`` steps.
    """

    def __init__(self, seed: int, run_id: int, n: int, buffer: int = 256):
        root = np.random.SeedSequence([int(seed), int(run_id)])
        init_seq, *node_seqs = root.spawn(n + 1)
        self.seed = int(seed)
        self.run_id = int(run_id)
        self.n = n
        self.init_rng = np.random.default_rng(init_seq)
        self._gens = [np.random.default_rng(s) for s in node_seqs]
        self._buffer = buffer
        self._block = np.empty((n, 0, 2))
        self._pos = 0

    def draw(self) -> np.ndarray:
        """Two uniforms per node, shape (n, 2): neighbor pick and next-state pick."""
        if self._pos >= self._block.shape[1]:
            self._block = np.stack([g.random((self._buffer, 2)) for g in self._gens])
            self._pos = 0
        u = self._block[:, self._pos]
        self._pos += 1
        return u


RandomSource = Union[np.random.Generator, NodeStreams]


def _uniforms(rng: RandomSource, n: int) -> np.ndarray:
    if isinstance(rng, NodeStreams):
        if rng.n != n:
            raise DimensionError(f"random streams are for {rng.n} nodes, model has {n}")
        return rng.draw()
    return rng.random((n, 2))


class StepOperators(NamedTuple):
    """Everything one synchronous step needs, built from S[t]."""

    c: np.ndarray
    e: np.ndarray
    a: np.ndarray

    def total_influence(self) -> np.ndarray:
        return total_influence_from_blocks(self.e, self.a)


def step_operators(state, model: InfluenceSpec, rule) -> StepOperators:
    """C from (rule, state), then E, then the A blocks with A_ii(x) from that same C."""
    state = as_state(state, model.m)
    c = resolve_constraint(rule, state, model)
    e = build_effective_influence(model.d, c)
    a = effective_transitions(model.bank, c, model.x_convention)
    return StepOperators(c, e, a)


def step_marginal(state, model: InfluenceSpec, rule) -> np.ndarray:
    """p[t+1] = S[t] H for the H induced by ``rule`` at ``state``."""
    state = as_state(state, model.m)
    ops = step_operators(state, model, rule)
    return state.vector @ ops.total_influence()


def _choose(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    # index k with cum[k-1] <= u*total < cum[k]; zero-weight entries are skipped
    total = cum[..., -1:]
    k = (cum <= u[..., None] * total).sum(axis=-1)
    return np.minimum(k, cum.shape[-1] - 1)


def sample_next(s: np.ndarray, ops: StepOperators, u: np.ndarray) -> np.ndarray:
    """Next state indices for uniforms ``u`` of shape (..., n, 2)."""
    n = s.shape[0]
    determiner = _choose(np.cumsum(ops.e, axis=1), u[..., 0])
    # row of A_Ji selected by J's current state
    rows = ops.a[determiner, np.arange(n), s[determiner]]
    return _choose(np.cumsum(rows, axis=-1), u[..., 1])


def step_sample(state, model: InfluenceSpec, rule, rng: RandomSource) -> NetworkState:
    """Draw S[t+1]: each node picks a determining node J from row i of E, then
    its next state from row s_J of A_Ji (A_ii(x) when J = i)."""
    state = as_state(state, model.m)
    ops = step_operators(state, model, rule)
    u = _uniforms(rng, model.n)
    return NetworkState(sample_next(state.indices, ops, u), model.m)


def step_sample_batch(state, model: InfluenceSpec, rule, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` independent next-state draws from one state, shape (size, n)."""
    state = as_state(state, model.m)
    ops = step_operators(state, model, rule)
    u = rng.random((size, model.n, 2))
    return sample_next(state.indices, ops, u)


def sample_frequencies(samples: np.ndarray, m: int) -> np.ndarray:
    """Empirical per-node state frequencies of (size, n) samples as a length n*m vector."""
    samples = np.asarray(samples)
    size, n = samples.shape
    counts = np.zeros((n, m))
    for i in range(n):
        counts[i] = np.bincount(samples[:, i], minlength=m)
    return (counts / size).reshape(-1)


@dataclass
class Trajectory:
    states: list
    step_probs: Optional[list] = None
    seed: Optional[int] = None
    run_id: int = 0
    constraints: Optional[list] = field(default=None, repr=False)

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def state_matrix(self) -> np.ndarray:
        """(horizon + 1, n) state indices."""
        return np.stack([s.indices for s in self.states])

    def prob_matrix(self) -> np.ndarray:
        """(horizon, n*m) step-wise probability vectors."""
        if not self.step_probs:
            raise ValueError("trajectory was recorded without probability vectors")
        return np.stack(self.step_probs)


def run_trajectory(
    initial,
    model: InfluenceSpec,
    rule,
    horizon: int,
    rng: RandomSource,
    *,
    run_id: int = 0,
    record_probs: bool = True,
    record_constraints: bool = False,
) -> Trajectory:
    """Iterate marginal + sample for ``horizon`` steps."""
    if horizon < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
    state = as_state(initial, model.m)
    states = [state]
    probs = [] if record_probs else None
    constraints = [] if record_constraints else None
    for t in range(horizon):
        ops = step_operators(state, model, rule)
        if record_probs:
            probs.append(state.vector @ ops.total_influence())
        if record_constraints:
            constraints.append(ops.c)
        u = _uniforms(rng, model.n)
        state = NetworkState(sample_next(state.indices, ops, u), model.m)
        states.append(state)
    seed = rng.seed if isinstance(rng, NodeStreams) else None
    log.debug("run %d: %d steps, final state %s", run_id, horizon, state.key())
    return Trajectory(states, probs, seed, run_id, constraints)


def expected_state(initial, h_sequence: Sequence[np.ndarray]) -> np.ndarray:
    """S[0] H_h1 H_h2 ... H_ht for a frozen sequence of total influence matrices."""
    if isinstance(initial, NetworkState):
        p = initial.vector
    else:
        p = np.asarray(initial, dtype=float).reshape(-1)
    for k, h in enumerate(h_sequence):
        h = np.asarray(h)
        if h.shape != (p.size, p.size):
            raise DimensionError(f"H[{k}] has shape {h.shape}, state vector has length {p.size}")
        p = p @ h
    return p


def expected_state_fixed(initial, h: np.ndarray, steps: int) -> np.ndarray:
    """S[0] H^steps."""
    p = initial.vector if isinstance(initial, NetworkState) else np.asarray(initial, dtype=float)
    h = np.asarray(h)
    if h.shape != (p.size, p.size):
        raise DimensionError(f"H has shape {h.shape}, state vector has length {p.size}")
    return p @ np.linalg.matrix_power(h, steps)


# --- Unconstrained influence model -------------------------------------------


def im_total_influence(d, bank) -> np.ndarray:
    """H = D' (x) {A_ij} of the unconstrained model, assembled block by block."""
    d = np.asarray(d, dtype=float)
    n, m = bank.n, bank.m
    h = np.zeros((n * m, n * m))
    for u in range(n):
        for v in range(n):
            a = bank.a_self[u] if u == v else bank.a_cross[u, v]
            h[u * m:(u + 1) * m, v * m:(v + 1) * m] = d[v, u] * a
    return h


def im_step_marginal(state, model: InfluenceSpec) -> np.ndarray:
    state = as_state(state, model.m)
    return state.vector @ im_total_influence(model.d, model.bank)
