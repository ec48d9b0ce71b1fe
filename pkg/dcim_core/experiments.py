"""Experiment harness for the computing-node load-distribution study.

Every strategy in a comparison is run on the same per-run random streams
(common random numbers): run r always starts from the same uniformly drawn
state and consumes the same uniforms, whichever rule picks C. Runs are
independent work items reduced in run order, so worker count never changes
a report.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import networkx as nx
import numpy as np

from .engine import NodeStreams, sample_next
from .errors import ConfigurationError, ContractViolationError, InvalidTopologyError
from .model import InfluenceSpec
from .policy import (
    DEFAULT_TARGET,
    DOMINANCE_TOL,
    BestPolicyStrategy,
    FixedPolicy,
    OptimumStrategy,
    Strategy,
    optimize_bruteforce,
    stepwise_expectancy,
)
from .rules import ConstraintRule
from .states import LOAD_STATES, NetworkState, StateSpace

log = logging.getLogger(__name__)

ESTIMATORS = ("prob", "indicator")
TOPOLOGY_KINDS = ("gnp", "regular")
DEFAULT_CROSS_ROW = (0.5, 0.5, 0.0)
NORMALIZATION_TOL = 1e-6


def resolve_seed(rng=None) -> int:
    """An integer seed from an int, a Generator, or fresh OS entropy."""
    if rng is None:
        return int(np.random.SeedSequence().entropy % (2 ** 63))
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63))
    return int(rng)


# --- Topologies and default models -------------------------------------------


@dataclass(frozen=True)
class TopologySpec:
    """Random directed topology parameters.

    ``gnp``: every ordered pair is an edge with probability ``p``.
    ``regular``: an undirected ``degree``-regular graph, used in both directions.
    """

    kind: str
    n: int
    p: Optional[float] = None
    degree: Optional[int] = None
    seed: Optional[int] = None

    def validate(self) -> None:
        if self.kind not in TOPOLOGY_KINDS:
            raise InvalidTopologyError(f"unknown topology kind {self.kind!r}; expected one of {TOPOLOGY_KINDS}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise InvalidTopologyError(f"node count must be a positive integer, got {self.n!r}")
        if self.kind == "gnp":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise InvalidTopologyError(f"edge probability must lie in [0, 1], got {self.p!r}")
        else:
            if self.degree is None or not 0 <= self.degree < self.n:
                raise InvalidTopologyError(f"degree must lie in 0..{self.n - 1}, got {self.degree!r}")
            if (self.n * self.degree) % 2:
                raise InvalidTopologyError(f"n * degree must be even for a regular graph, got {self.n} * {self.degree}")

    @property
    def parameter(self) -> float:
        return float(self.p) if self.kind == "gnp" else float(self.degree)

    @property
    def label(self) -> str:
        if self.kind == "gnp":
            return f"gnp(n={self.n},p={self.p:g})"
        return f"regular(n={self.n},k={self.degree})"

    def to_json(self) -> dict:
        return {"kind": self.kind, "n": self.n, "p": self.p, "degree": self.degree, "seed": self.seed}


class GeneratedTopology(NamedTuple):
    graph: nx.DiGraph
    topology: np.ndarray
    d: np.ndarray
    spec: TopologySpec


def default_influence_weights(topology, self_weight: float = 0.5) -> np.ndarray:
    """d_ii = self_weight, the rest split evenly over in-neighbors; d_ii = 1 without any."""
    topology = np.asarray(topology, dtype=bool)
    n = topology.shape[0]
    d = np.zeros((n, n))
    for i in range(n):
        senders = np.nonzero(topology[i])[0]
        if senders.size == 0:
            d[i, i] = 1.0
            continue
        d[i, i] = self_weight
        d[i, senders] = (1.0 - self_weight) / senders.size
    return d


def generate_topology(spec: TopologySpec, rng=None, self_weight: float = 0.5) -> GeneratedTopology:
    """Random graph per ``spec`` and its default row-stochastic D.

    A graph edge u -> v means u may influence v, i.e. topology[v, u] is True.
    """
    spec.validate()
    seed = spec.seed if spec.seed is not None else resolve_seed(rng) % (2 ** 32)
    if spec.kind == "gnp":
        graph = nx.gnp_random_graph(spec.n, spec.p, seed=seed, directed=True)
    else:
        graph = nx.random_regular_graph(spec.degree, spec.n, seed=seed).to_directed()
    topology = np.zeros((spec.n, spec.n), dtype=bool)
    for u, v in graph.edges():
        if u != v:
            topology[v, u] = True
    if spec.n > 1 and not nx.is_weakly_connected(graph):
        log.warning("%s: generated graph is not weakly connected", spec.label)
    return GeneratedTopology(graph, topology, default_influence_weights(topology, self_weight), spec)


def lighter_shift(m: int) -> np.ndarray:
    """Deterministic move to the next lighter load state (O -> N -> U, U stays)."""
    shift = np.zeros((m, m))
    for s in range(m):
        shift[s, min(s + 1, m - 1)] = 1.0
    return shift


def build_load_balancing_model(
    topology,
    d=None,
    *,
    seed: int = 0,
    cross_row: Sequence[float] = DEFAULT_CROSS_ROW,
    concentration: float = 1.0,
    dynamic: bool = False,
    name: str = "load-balancing",
) -> InfluenceSpec:
    """Computing-node model on ``topology``.

    Internal MCs are seeded Dirichlet draws; every cross-transition row is
    ``cross_row``. With ``dynamic`` each node i gets a bank A_ii^(h),
    h = 0..k_i, blending its base chain toward the lighter-load shift with
    weight h / (2 (k_i + 1)).
    """
    topology = np.array(topology, dtype=bool)
    np.fill_diagonal(topology, False)
    n = topology.shape[0]
    states = StateSpace(LOAD_STATES)
    m = states.m
    if len(cross_row) != m or abs(sum(cross_row) - 1.0) > 1e-12:
        raise ConfigurationError(f"cross-transition row must have {m} entries summing to 1, got {list(cross_row)}")
    if d is None:
        d = default_influence_weights(topology)
    rng = np.random.default_rng(seed)
    a_self = rng.dirichlet(np.full(m, concentration), size=(n, m))
    cross = np.tile(np.asarray(cross_row, dtype=float), (m, 1))

    banks = None
    if dynamic:
        shift = lighter_shift(m)
        banks = []
        for i in range(n):
            k = int(topology[:, i].sum())
            weights = 0.5 * np.arange(k + 1) / (k + 1)
            banks.append(np.stack([(1.0 - w) * a_self[i] + w * shift for w in weights]))
    return InfluenceSpec.create(
        states,
        d,
        a_self,
        topology=topology,
        default_cross=cross,
        a_dynamic=banks,
        name=name,
    )


# --- Reports -----------------------------------------------------------------


def _stderr(values: np.ndarray) -> np.ndarray:
    runs = values.shape[0]
    if runs < 2:
        return np.zeros(values.shape[1:])
    return values.std(axis=0, ddof=1) / np.sqrt(runs)


@dataclass
class StrategyResult:
    """Per-run expectancies of one strategy, shape (runs, m) for each estimator."""

    name: str
    prob: np.ndarray
    indicator: np.ndarray
    series: np.ndarray
    selections: Optional[np.ndarray] = None
    dominance_violations: int = 0
    optimum_mismatches: Optional[int] = None

    def per_run(self, estimator: str = "prob") -> np.ndarray:
        if estimator not in ESTIMATORS:
            raise ConfigurationError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
        return self.prob if estimator == "prob" else self.indicator

    def mean(self, estimator: str = "prob") -> np.ndarray:
        return self.per_run(estimator).mean(axis=0)

    def stderr(self, estimator: str = "prob") -> np.ndarray:
        return _stderr(self.per_run(estimator))

    def selection_totals(self) -> Optional[np.ndarray]:
        return None if self.selections is None else self.selections.sum(axis=0)


@dataclass
class ExpectancyReport:
    states: tuple
    results: dict
    horizon: int
    runs: int
    seed: int
    target: str = DEFAULT_TARGET
    catalog: tuple = ()
    metadata: dict = field(default_factory=dict)

    @property
    def strategies(self) -> list[str]:
        return list(self.results)

    def __getitem__(self, name: str) -> StrategyResult:
        return self.results[name]

    def expectancy(self, strategy: str, state: str, estimator: str = "prob") -> float:
        return float(self.results[strategy].mean(estimator)[self.states.index(state)])

    def check_normalization(self, tol: float = NORMALIZATION_TOL) -> bool:
        for result in self.results.values():
            for estimator in ESTIMATORS:
                if abs(result.mean(estimator).sum() - 1.0) > tol:
                    return False
        return True

    def rows(self, estimator: str = "prob"):
        """(policy, state, expectancy, stderr) in strategy then state order."""
        for name, result in self.results.items():
            means, errs = result.mean(estimator), result.stderr(estimator)
            for k, label in enumerate(self.states):
                yield name, label, float(means[k]), float(errs[k])

    def to_json(self) -> dict:
        out = {
            "states": list(self.states),
            "target": self.target,
            "horizon": self.horizon,
            "runs": self.runs,
            "seed": self.seed,
            "catalog": list(self.catalog),
            "metadata": self.metadata,
            "strategies": {},
        }
        for name, r in self.results.items():
            entry = {
                "expectancy": {e: dict(zip(self.states, r.mean(e).tolist())) for e in ESTIMATORS},
                "stderr": {e: dict(zip(self.states, r.stderr(e).tolist())) for e in ESTIMATORS},
                "series": r.series.tolist(),
                "dominance_violations": r.dominance_violations,
            }
            if r.selections is not None:
                entry["selection_counts"] = {
                    "aggregate": dict(zip(self.catalog, r.selection_totals().tolist())),
                    "per_run": r.selections.tolist(),
                }
            if r.optimum_mismatches is not None:
                entry["bruteforce_mismatches"] = r.optimum_mismatches
            out["strategies"][name] = entry
        return out


# --- Ensembles ---------------------------------------------------------------


class _RunResult(NamedTuple):
    prob: np.ndarray
    indicator: np.ndarray
    series: np.ndarray
    selections: Optional[np.ndarray]
    violations: int
    mismatches: int


def _run_strategy(
    model: InfluenceSpec,
    strategy: Strategy,
    horizon: int,
    seed: int,
    run_id: int,
    target: int,
    check_against: Sequence[ConstraintRule] = (),
    bruteforce_check: bool = False,
) -> _RunResult:
    n, m = model.n, model.m
    streams = NodeStreams(seed, run_id, n)
    state = NetworkState.random(n, m, streams.init_rng)
    series = np.empty((horizon, m))
    indicator = np.zeros(m)
    catalog_size = len(getattr(strategy, "catalog", ()))
    selections = np.zeros(catalog_size, dtype=np.int64) if catalog_size else None
    violations = mismatches = 0
    label = model.states.labels[target]
    for t in range(horizon):
        decision = strategy.decide(state, model, target)
        series[t] = decision.p.reshape(n, m).mean(axis=0)
        if decision.choice is not None:
            selections[decision.choice] += 1
        if decision.values is not None:
            violations += sum(v > decision.value + DOMINANCE_TOL for v in decision.values)
        for rule in check_against:
            if stepwise_expectancy(state, model, rule, label) > decision.value + DOMINANCE_TOL:
                violations += 1
        if bruteforce_check:
            _, best = optimize_bruteforce(state, model, target_state=label, workers=1)
            if abs(best - decision.value) > DOMINANCE_TOL:
                mismatches += 1
        state = NetworkState(sample_next(state.indices, decision.ops, streams.draw()), m)
        indicator += np.bincount(state.indices, minlength=m) / n
    return _RunResult(series.mean(axis=0), indicator / horizon, series, selections, violations, mismatches)


def run_ensemble(
    model: InfluenceSpec,
    strategy: Strategy,
    horizon: int,
    runs: int,
    seed: int,
    *,
    target_state: str = DEFAULT_TARGET,
    check_against: Sequence[ConstraintRule] = (),
    bruteforce_check: bool = False,
    workers: Optional[int] = None,
) -> StrategyResult:
    """One strategy over ``runs`` independent runs on the shared random streams."""
    if horizon < 1 or runs < 1:
        raise ConfigurationError(f"horizon and runs must both be >= 1, got {horizon} and {runs}")
    target = model.states.index(target_state)

    def one(run_id: int) -> _RunResult:
        return _run_strategy(model, strategy, horizon, seed, run_id, target, check_against, bruteforce_check)

    if workers == 1 or runs == 1:
        results = [one(r) for r in range(runs)]
    else:
        with ThreadPoolExecutor(max_workers=workers or os.cpu_count()) as pool:
            results = list(pool.map(one, range(runs)))

    selections = None
    if results[0].selections is not None:
        selections = np.stack([r.selections for r in results])
    violations = sum(r.violations for r in results)
    if violations:
        log.warning("%s: %d per-step dominance violations", strategy.name, violations)
    log.info("%s: %d runs x %d steps done", strategy.name, runs, horizon)
    return StrategyResult(
        strategy.name,
        np.stack([r.prob for r in results]),
        np.stack([r.indicator for r in results]),
        np.mean([r.series for r in results], axis=0),
        selections,
        violations,
        sum(r.mismatches for r in results) if bruteforce_check else None,
    )


def overall_expectancy(
    model: InfluenceSpec,
    rule: ConstraintRule,
    horizon: int,
    runs: int,
    rng=None,
    *,
    target_state: str = DEFAULT_TARGET,
    workers: Optional[int] = None,
) -> ExpectancyReport:
    """Long-run state occupancy under a single rule, averaged over random initial states."""
    seed = resolve_seed(rng)
    result = run_ensemble(model, FixedPolicy(rule), horizon, runs, seed, target_state=target_state, workers=workers)
    return ExpectancyReport(
        model.states.labels, {rule.name: result}, horizon, runs, seed, target_state, (rule.name,),
        {"model": model.name},
    )


def compare_policies(
    model: InfluenceSpec,
    catalog: Sequence[ConstraintRule],
    horizon: int,
    runs: int,
    rng=None,
    *,
    best_policy: bool = True,
    target_state: str = DEFAULT_TARGET,
    workers: Optional[int] = None,
    metadata: Optional[dict] = None,
) -> ExpectancyReport:
    """Every catalog rule plus the adaptive Best Policy on common random numbers."""
    if len(catalog) == 0:
        raise ConfigurationError("compare_policies needs a nonempty catalog")
    seed = resolve_seed(rng)
    results = {}
    for rule in catalog:
        results[rule.name] = run_ensemble(
            model, FixedPolicy(rule), horizon, runs, seed, target_state=target_state, workers=workers
        )
    if best_policy:
        strategy = BestPolicyStrategy(catalog)
        results[strategy.name] = run_ensemble(
            model, strategy, horizon, runs, seed, target_state=target_state, workers=workers
        )
    meta = {"model": model.name}
    meta.update(metadata or {})
    return ExpectancyReport(
        model.states.labels, results, horizon, runs, seed, target_state, tuple(r.name for r in catalog), meta
    )


def compare_with_optimum(
    model: InfluenceSpec,
    catalog: Sequence[ConstraintRule],
    horizon: int,
    runs: int,
    rng=None,
    *,
    best_policy: bool = True,
    bruteforce_check: bool = False,
    target_state: str = DEFAULT_TARGET,
    workers: Optional[int] = None,
) -> ExpectancyReport:
    """compare_policies plus the greedy Optimum strategy.

    At every state the Optimum visits, each catalog rule is evaluated too and
    any rule beating it is counted as a dominance violation. With
    ``bruteforce_check`` every step is also checked against exhaustive search.
    """
    if model.dynamic:
        raise ContractViolationError("the Optimum strategy requires fixed internal MCs")
    seed = resolve_seed(rng)
    if len(catalog):
        report = compare_policies(
            model, catalog, horizon, runs, seed,
            best_policy=best_policy, target_state=target_state, workers=workers,
        )
    else:
        report = ExpectancyReport(model.states.labels, {}, horizon, runs, seed, target_state, (), {"model": model.name})
    strategy = OptimumStrategy(target_state)
    report.results[strategy.name] = run_ensemble(
        model, strategy, horizon, runs, seed,
        target_state=target_state, check_against=tuple(catalog),
        bruteforce_check=bruteforce_check, workers=workers,
    )
    return report


@dataclass
class SweepResult:
    specs: list
    reports: list

    def table(self, estimator: str = "prob"):
        """(topology, kind, parameter, policy, expectancy, stderr) for the target state."""
        for spec, report in zip(self.specs, self.reports):
            k = report.states.index(report.target)
            for name, result in report.results.items():
                yield (
                    spec.label,
                    spec.kind,
                    spec.parameter,
                    name,
                    float(result.mean(estimator)[k]),
                    float(result.stderr(estimator)[k]),
                )

    def to_json(self) -> dict:
        return {
            "topologies": [s.to_json() for s in self.specs],
            "reports": [r.to_json() for r in self.reports],
        }


def topology_sweep(
    specs: Sequence[TopologySpec],
    catalog: Sequence[ConstraintRule],
    horizon: int,
    runs: int,
    rng=None,
    *,
    model_seed: int = 0,
    dynamic: bool = False,
    best_policy: bool = True,
    target_state: str = DEFAULT_TARGET,
    workers: Optional[int] = None,
) -> SweepResult:
    """compare_policies on a default model over each generated topology."""
    seed = resolve_seed(rng)
    reports = []
    for spec in specs:
        generated = generate_topology(spec, seed)
        model = build_load_balancing_model(
            generated.topology, generated.d, seed=model_seed, dynamic=dynamic, name=spec.label
        )
        log.info("sweep: %s with %d edges", spec.label, model.edge_count)
        reports.append(
            compare_policies(
                model, catalog, horizon, runs, seed,
                best_policy=best_policy, target_state=target_state, workers=workers,
                metadata={"topology": spec.to_json(), "edges": model.edge_count},
            )
        )
    return SweepResult(list(specs), reports)
