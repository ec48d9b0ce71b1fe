"""Step-wise policy evaluation and optimum constraint search.

The objective throughout is the step-wise X-expectancy (1/n) sum_i p_i,X[t+1]
with X = N unless stated otherwise. Best Policy picks the best catalog rule
at each step; the optimizers search over every binary C on the topology,
exhaustively (brute force) or edge by edge (greedy, fixed internal MCs only).
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolationError, SearchSpaceTooLarge
from .engine import StepOperators, step_operators
from .model import InfluenceSpec
from .rules import ConstraintRule
from .states import NetworkState, as_state

log = logging.getLogger(__name__)

DEFAULT_TARGET = "N"
DEFAULT_EDGE_CAP = 20
# floating slack when comparing objective values reached through different sums
DOMINANCE_TOL = 1e-12
# brute-force objectives equal to this many decimals are ties
TIE_DECIMALS = 12


def _state_expectancy(p: np.ndarray, m: int, target: int) -> float:
    return float(p.reshape(-1, m)[:, target].mean())


def evaluate(state: NetworkState, model: InfluenceSpec, rule) -> tuple[StepOperators, np.ndarray]:
    """Operators and p[t+1] for a rule or explicit C at ``state``."""
    ops = step_operators(state, model, rule)
    return ops, state.vector @ ops.total_influence()


def stepwise_expectancy(state, model: InfluenceSpec, rule, target_state: str = DEFAULT_TARGET) -> float:
    """(1/n) sum_i p_i,target[t+1]."""
    target = model.states.index(target_state)
    state = as_state(state, model.m)
    _, p = evaluate(state, model, rule)
    return _state_expectancy(p, model.m, target)


class PolicyChoice(NamedTuple):
    rule: ConstraintRule
    value: float
    index: int
    values: tuple


def best_policy(state, model: InfluenceSpec, catalog: Sequence[ConstraintRule], target_state: str = DEFAULT_TARGET) -> PolicyChoice:
    """Argmax of the step-wise expectancy over ``catalog``; ties go to the lowest index."""
    if len(catalog) == 0:
        raise ConfigurationError("best_policy needs a nonempty catalog")
    state = as_state(state, model.m)
    values = tuple(stepwise_expectancy(state, model, rule, target_state) for rule in catalog)
    best = 0
    for k in range(1, len(values)):
        if values[k] > values[best]:
            best = k
    return PolicyChoice(catalog[best], values[best], best, values)


class ConstraintSearchSpace:
    """Every binary assignment to the directed edges of a topology.

    Edges are ordered row-major as (receiver i, sender j). Candidate ``mask``
    activates edge k iff bit (E - 1 - k) is set, so ascending masks visit the
    matrices in lexicographic order of their edge entries.
    """

    def __init__(self, topology):
        topology = np.array(topology, dtype=bool)
        np.fill_diagonal(topology, False)
        self.topology = topology
        self.n = topology.shape[0]
        self.edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(topology))]

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def cardinality(self) -> int:
        return 2 ** self.edge_count

    def __len__(self) -> int:
        return self.cardinality

    def check_cap(self, cap: int = DEFAULT_EDGE_CAP) -> None:
        if self.edge_count > cap:
            raise SearchSpaceTooLarge(
                f"brute-force search over {self.edge_count} edges needs 2^{self.edge_count} "
                f"candidates, above the cap of 2^{cap}; raise the cap or use greedy mode",
                bound=f"2^{self.edge_count}",
            )

    def bits(self, masks: np.ndarray) -> np.ndarray:
        """(len(masks), E) edge activations."""
        shifts = np.arange(self.edge_count - 1, -1, -1, dtype=np.int64)
        return ((np.asarray(masks, dtype=np.int64)[:, None] >> shifts) & 1).astype(np.uint8)

    def matrices(self, masks: np.ndarray) -> np.ndarray:
        """Candidate C matrices, shape (len(masks), n, n), unit diagonal."""
        masks = np.asarray(masks, dtype=np.int64)
        c = np.broadcast_to(np.eye(self.n, dtype=np.uint8), (masks.size, self.n, self.n)).copy()
        if self.edges:
            rows, cols = np.array(self.edges).T
            c[:, rows, cols] = self.bits(masks)
        return c

    def matrix(self, mask: int) -> np.ndarray:
        return self.matrices(np.array([mask]))[0]

    def mask_of(self, c) -> int:
        c = np.asarray(c)
        mask = 0
        for i, j in self.edges:
            mask = (mask << 1) | int(c[i, j])
        return mask


def _objective_tables(state: NetworkState, model: InfluenceSpec, target: int):
    """Per-node self terms (by activation count) and per-edge cross terms.

    self_terms[i, x] = S_i A_ii(x) e_target, cross[i, j] = S_j A_ji e_target.
    """
    n, s = model.n, state.indices
    bank = model.bank
    # x ranges over 0..n-1 for any node
    width = max([n] + [bank.a_dynamic[i].shape[0] for i in range(n) if bank.is_dynamic(i)])
    self_terms = np.empty((n, width))
    for i in range(n):
        if bank.is_dynamic(i):
            members = bank.a_dynamic[i]
            self_terms[i, : members.shape[0]] = members[:, s[i], target]
            self_terms[i, members.shape[0]:] = np.nan
        else:
            self_terms[i] = bank.a_self[i, s[i], target]
    idx = np.arange(n)
    cross = bank.a_cross[idx[None, :], idx[:, None], s[None, :], target]
    return self_terms, cross


def _chunk_values(masks, space, d, self_terms, cross, convention) -> np.ndarray:
    c = space.matrices(masks).astype(float)
    n = space.n
    off = ~np.eye(n, dtype=bool)
    e_diag = np.diag(d) + (d[None] * (1.0 - c)).sum(axis=2)
    e_off = d[None] * c * off
    if convention == "column-sum":
        x = c.sum(axis=1) - 1.0
    else:
        x = c.sum(axis=2) - 1.0
    x = x.astype(np.intp)
    self_val = self_terms[np.arange(n)[None, :], x]
    per_node = e_diag * self_val + (e_off * cross[None]).sum(axis=2)
    return per_node.mean(axis=1)


def optimize_bruteforce(
    state,
    model: InfluenceSpec,
    topology=None,
    *,
    target_state: str = DEFAULT_TARGET,
    cap: int = DEFAULT_EDGE_CAP,
    workers: Optional[int] = None,
    chunk: int = 2048,
) -> tuple[np.ndarray, float]:
    """Exhaustive search over every C on ``topology``; dynamic banks allowed.

    Among candidates with equal objective the lexicographically smallest C
    wins. The returned value is the step-wise expectancy of C_opt.
    """
    state = as_state(state, model.m)
    target = model.states.index(target_state)
    space = ConstraintSearchSpace(model.topology if topology is None else topology)
    if np.any(space.topology & ~model.topology):
        raise ConfigurationError("search topology must be a subgraph of the model topology")
    space.check_cap(cap)

    self_terms, cross = _objective_tables(state, model, target)
    total = space.cardinality
    starts = list(range(0, total, chunk))

    def scan(start: int) -> tuple[float, int]:
        masks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        values = _chunk_values(masks, space, model.d, self_terms, cross, model.x_convention)
        values = np.round(values, TIE_DECIMALS)
        k = int(np.argmax(values))
        return float(values[k]), int(masks[k])

    if len(starts) == 1 or workers == 1:
        results = [scan(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers or os.cpu_count()) as pool:
            results = list(pool.map(scan, starts))

    best_value, best_mask = results[0]
    for value, mask in results[1:]:
        if value > best_value:
            best_value, best_mask = value, mask
    c_opt = space.matrix(best_mask)
    value = stepwise_expectancy(state, model, c_opt, target_state)
    log.debug("brute force: %d candidates, best mask %d, value %.6f", total, best_mask, value)
    return c_opt, value


def optimize_greedy(state, model: InfluenceSpec, topology=None, *, target_state: str = DEFAULT_TARGET) -> np.ndarray:
    """c_ij = 1 iff S_i A_ii e_N <= S_j A_ji e_N for every edge j->i; c_ii = 1.

    Requires fixed internal MCs: with static A_ii each c_ij only enters node
    i's own term, so the per-edge choice maximizes the objective.
    """
    if model.dynamic:
        raise ContractViolationError(
            "greedy optimization requires fixed internal MCs; this model has dynamic banks"
        )
    state = as_state(state, model.m)
    target = model.states.index(target_state)
    topology = model.topology if topology is None else np.asarray(topology, dtype=bool)
    n, s = model.n, state.indices
    idx = np.arange(n)
    self_val = model.bank.a_self[idx, s, target]
    # cross_val[i, j] = A_ji[s_j, target]
    cross_val = model.bank.a_cross[idx[None, :], idx[:, None], s[None, :], target]
    c = (self_val[:, None] <= cross_val) & topology
    np.fill_diagonal(c, True)
    return c.astype(np.uint8)


# --- Strategies driving the experiment harness ------------------------------


class Decision(NamedTuple):
    """The constraint chosen at one step and what it yields."""

    c: np.ndarray
    ops: StepOperators
    p: np.ndarray
    value: float
    choice: Optional[int] = None
    values: Optional[tuple] = None


class Strategy:
    """Chooses C from the current state; stateless so runs can share one."""

    name = "strategy"

    def decide(self, state: NetworkState, model: InfluenceSpec, target: int) -> Decision:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


class FixedPolicy(Strategy):
    def __init__(self, rule: ConstraintRule):
        self.rule = rule
        self.name = rule.name

    def decide(self, state, model, target):
        ops, p = evaluate(state, model, self.rule)
        return Decision(ops.c, ops, p, _state_expectancy(p, model.m, target))


class BestPolicyStrategy(Strategy):
    """Per-step argmax over a catalog; ``choice`` is the winning catalog index."""

    name = "BestPolicy"

    def __init__(self, catalog: Sequence[ConstraintRule]):
        if len(catalog) == 0:
            raise ConfigurationError("Best Policy needs a nonempty catalog")
        self.catalog = tuple(catalog)

    def decide(self, state, model, target):
        best = None
        values = []
        for k, rule in enumerate(self.catalog):
            ops, p = evaluate(state, model, rule)
            value = _state_expectancy(p, model.m, target)
            values.append(value)
            if best is None or value > best.value:
                best = Decision(ops.c, ops, p, value, k)
        return best._replace(values=tuple(values))


class OptimumStrategy(Strategy):
    """Greedy optimum constraint at every step."""

    name = "Optimum"

    def __init__(self, target_state: str = DEFAULT_TARGET):
        self.target_state = target_state

    def decide(self, state, model, target):
        c = optimize_greedy(state, model, target_state=model.states.labels[target])
        ops, p = evaluate(state, model, c)
        return Decision(c, ops, p, _state_expectancy(p, model.m, target))
