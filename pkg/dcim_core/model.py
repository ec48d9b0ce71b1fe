"""Influence model specification and the exact matrix constructions.

Layout conventions used throughout the package:

* ``d[i, j]`` is the influence node i receives from node j (rows sum to 1).
* ``topology[i, j]`` is True iff the directed edge j -> i exists, i.e. j may
  influence i. It has the same orientation as D and C.
* ``a_cross[u, v]`` is A_uv: rows indexed by the sender u's current state,
  columns give the receiver v's next-state distribution.
* H is node-major, state-minor: block (u, v) occupies rows u*m..u*m+m-1 and
  columns v*m..v*m+m-1 and equals e_vu * A_uv, so that p[t+1] = S[t] H.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .errors import (
    BankRangeError,
    ConfigurationError,
    ContractViolationError,
    DimensionError,
    MissingTransitionError,
    ModelValidationError,
)
from .rules import ConstraintRule
from .states import NetworkState, StateSpace

log = logging.getLogger(__name__)

X_CONVENTIONS = ("column-sum", "row-sum")

# constructed matrices vs propagated vectors
MATRIX_TOL = 1e-12
VECTOR_TOL = 1e-10


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TransitionBank:
    """A_ii, A_uv and the optional dynamic internal banks A_ii^(0..k_i)."""

    a_self: np.ndarray
    a_cross: np.ndarray
    a_dynamic: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "a_self", _frozen(self.a_self))
        object.__setattr__(self, "a_cross", _frozen(self.a_cross))
        n = self.a_self.shape[0]
        dyn = tuple(self.a_dynamic) if self.a_dynamic else (None,) * n
        dyn = tuple(None if b is None else _frozen(b) for b in dyn)
        object.__setattr__(self, "a_dynamic", dyn)

    @property
    def n(self) -> int:
        return self.a_self.shape[0]

    @property
    def m(self) -> int:
        return self.a_self.shape[-1]

    def is_dynamic(self, i: int) -> bool:
        return i < len(self.a_dynamic) and self.a_dynamic[i] is not None

    @property
    def any_dynamic(self) -> bool:
        return any(b is not None for b in self.a_dynamic)


@dataclass(frozen=True, eq=False)
class InfluenceSpec:
    """A complete (possibly dynamic) influence model.

    Instances are immutable; every array is read-only so a model can be
    shared by concurrent simulation runs.
    """

    states: StateSpace
    d: np.ndarray
    topology: np.ndarray
    bank: TransitionBank
    x_convention: str = "column-sum"
    name: str = ""
    # validation location -> JSON path it came from
    sources: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "d", _frozen(self.d))
        object.__setattr__(self, "topology", _frozen(self.topology, dtype=bool))

    @classmethod
    def create(
        cls,
        states: StateSpace,
        d,
        a_self,
        *,
        topology=None,
        a_cross=None,
        default_cross=None,
        a_dynamic=None,
        x_convention: str = "column-sum",
        name: str = "",
    ) -> "InfluenceSpec":
        """Assemble a model from plain arrays.

        ``a_cross`` may be a dense (n, n, m, m) array or a mapping
        {(u, v): A_uv}; edges without an explicit matrix get
        ``default_cross``. ``topology`` defaults to the off-diagonal support
        of D.
        """
        d = np.asarray(d, dtype=float)
        n, m = d.shape[0], states.m
        a_self = np.asarray(a_self, dtype=float)
        if a_self.ndim == 2:
            a_self = np.broadcast_to(a_self, (n, m, m))
        if topology is None:
            topology = d > 0
        topology = np.array(topology, dtype=bool)
        np.fill_diagonal(topology, False)

        if a_cross is not None and not isinstance(a_cross, Mapping):
            cross = np.array(a_cross, dtype=float)
        else:
            cross = np.zeros((n, n, m, m))
            explicit = dict(a_cross or {})
            for i, j in zip(*np.nonzero(topology)):
                # edge j -> i uses A_ji
                mat = explicit.get((int(j), int(i)), default_cross)
                if mat is not None:
                    cross[j, i] = mat
        bank = TransitionBank(a_self, cross, tuple(a_dynamic) if a_dynamic else ())
        return cls(states, d, topology, bank, x_convention=x_convention, name=name)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def m(self) -> int:
        return self.states.m

    @property
    def dynamic(self) -> bool:
        return self.bank.any_dynamic

    def out_degree(self, i: int) -> int:
        return int(self.topology[:, i].sum())

    def in_degree(self, i: int) -> int:
        return int(self.topology[i, :].sum())

    def bank_degree(self, i: int) -> int:
        """k_i: the largest activation count node i can reach under the x convention."""
        return self.out_degree(i) if self.x_convention == "column-sum" else self.in_degree(i)

    def edges(self) -> list[tuple[int, int]]:
        """(receiver i, sender j) pairs in row-major order."""
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.topology))]

    @property
    def edge_count(self) -> int:
        return int(self.topology.sum())

    def with_x_convention(self, convention: str) -> "InfluenceSpec":
        if convention not in X_CONVENTIONS:
            raise ConfigurationError(f"x-convention must be one of {X_CONVENTIONS}, got {convention!r}")
        return replace(self, x_convention=convention)

    def static(self) -> "InfluenceSpec":
        """The same model with every dynamic bank dropped (A_ii kept)."""
        bank = TransitionBank(self.bank.a_self, self.bank.a_cross, ())
        return replace(self, bank=bank)

    def where(self, key: str) -> str:
        return self.sources.get(key, key)


# --- Validation --------------------------------------------------------------


@dataclass(frozen=True)
class ValidationIssue:
    location: str
    message: str


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    def error(self, location: str, message: str) -> None:
        self.issues.append(ValidationIssue(location, message))

    @property
    def ok(self) -> bool:
        return not self.issues

    def raise_if_failed(self) -> None:
        if self.issues:
            raise ModelValidationError(self)

    def locations(self) -> list[str]:
        return [issue.location for issue in self.issues]

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "issues": [{"location": i.location, "message": i.message} for i in self.issues],
        }


def _stochastic_problem(mat: np.ndarray, tol: float = MATRIX_TOL) -> Optional[str]:
    """Describe the first row-stochasticity violation of ``mat``, or None."""
    if not np.all(np.isfinite(mat)):
        return "contains non-finite entries"
    if np.any(mat < 0) or np.any(mat > 1):
        return "has entries outside [0, 1]"
    sums = mat.sum(axis=-1)
    bad = np.nonzero(np.abs(sums - 1.0) > tol)[0]
    if bad.size:
        row = int(bad[0])
        return f"row {row} sums to {sums[row]:.15g}, not 1"
    return None


def validate_model(spec: InfluenceSpec) -> ValidationReport:
    """Check every invariant of ``spec`` and report all violations."""
    report = ValidationReport()
    n, m = spec.d.shape[0] if spec.d.ndim == 2 else 0, spec.m
    bank = spec.bank

    if spec.d.ndim != 2 or spec.d.shape[0] != spec.d.shape[1]:
        report.error("D", f"must be square, has shape {spec.d.shape}")
        return report
    if spec.topology.shape != (n, n):
        report.error("topology", f"shape {spec.topology.shape} does not match D {spec.d.shape}")
        return report
    if bank.a_self.shape != (n, m, m):
        report.error("A_self", f"expected shape {(n, m, m)}, got {bank.a_self.shape}")
        return report
    if bank.a_cross.shape != (n, n, m, m):
        report.error("A_cross", f"expected shape {(n, n, m, m)}, got {bank.a_cross.shape}")
        return report
    if spec.x_convention not in X_CONVENTIONS:
        report.error("x_convention", f"must be one of {X_CONVENTIONS}, got {spec.x_convention!r}")

    d = spec.d
    for i in range(n):
        row = d[i]
        loc = spec.where(f"D[{i}]")
        if np.any(row < 0) or np.any(row > 1):
            report.error(loc, f"row {i} of D has entries outside [0, 1]")
        total = row.sum()
        if abs(total - 1.0) > MATRIX_TOL:
            report.error(loc, f"row {i} of D is not stochastic (sums to {total:.15g})")
        for j in range(n):
            if j != i and d[i, j] > 0 and not spec.topology[i, j]:
                report.error(loc, f"d[{i},{j}] = {d[i, j]:g} but the topology has no edge {j}->{i}")

    for i in range(n):
        problem = _stochastic_problem(bank.a_self[i])
        if problem:
            report.error(spec.where(f"A_self[{i}]"), f"internal MC of node {i} {problem}")

    for i, j in spec.edges():
        mat = bank.a_cross[j, i]
        loc = spec.where(f"A_cross[{j},{i}]")
        if not mat.any():
            report.error(loc, f"edge {j}->{i} has no cross-transition matrix A_{j}{i}")
            continue
        problem = _stochastic_problem(mat)
        if problem:
            report.error(loc, f"A_{j}{i} {problem}")

    if len(bank.a_dynamic) not in (0, n):
        report.error("bank", f"dynamic bank list has {len(bank.a_dynamic)} entries for {n} nodes")
    else:
        for i, members in enumerate(bank.a_dynamic):
            if members is None:
                continue
            loc = spec.where(f"bank[{i}]")
            k = spec.bank_degree(i)
            if members.ndim != 3 or members.shape[1:] != (m, m):
                report.error(loc, f"dynamic bank of node {i} must be a list of {m}x{m} matrices")
                continue
            if members.shape[0] != k + 1:
                report.error(
                    loc,
                    f"dynamic bank of node {i} has {members.shape[0]} matrices; "
                    f"k_i = {k} requires {k + 1}",
                )
            for h, mat in enumerate(members):
                problem = _stochastic_problem(mat)
                if problem:
                    report.error(f"{loc}[{h}]", f"A_{i}{i}^({h}) {problem}")

    if report.ok:
        log.debug("model %r passed validation (n=%d, m=%d)", spec.name, n, m)
    return report


# --- Matrix constructions ----------------------------------------------------


def check_constraint_matrix(c, n: int) -> np.ndarray:
    """Validate a user-supplied C (binary, unit diagonal) and return it as uint8."""
    c = np.asarray(c)
    if c.shape != (n, n):
        raise DimensionError(f"constraint matrix must be {n}x{n}, got {c.shape}")
    if not np.all((c == 0) | (c == 1)):
        raise ConfigurationError("constraint matrix entries must be 0 or 1")
    if not np.all(np.diag(c) == 1):
        raise ConfigurationError("constraint matrix must have c_ii = 1 for every node")
    return c.astype(np.uint8)


def build_constraint_matrix(
    rule: ConstraintRule, state: NetworkState, topology, states: StateSpace
) -> np.ndarray:
    """C for the current state: c_ij = rule(s_i, s_j) on edges j->i, unit diagonal."""
    topology = np.asarray(topology, dtype=bool)
    n = topology.shape[0]
    if state.n != n:
        raise DimensionError(f"state has {state.n} nodes, topology has {n}")
    table = rule.table(states)
    s = state.indices
    c = table[s[:, None], s[None, :]] & topology
    for i, j, active in rule.overrides:
        if i != j and topology[i, j]:
            c[i, j] = active
        else:
            log.warning("rule %s: override (%d, %d) is not an edge, ignored", rule.name, i, j)
    np.fill_diagonal(c, True)
    return c.astype(np.uint8)


def build_effective_influence(d, c) -> np.ndarray:
    """E = D o C + I o (D x (1 - C')).

    Deactivated influences fold back into the diagonal, so E stays row
    stochastic for any binary C with unit diagonal.
    """
    d = np.asarray(d, dtype=float)
    c = np.asarray(c, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DimensionError(f"D must be square, got {d.shape}")
    if c.shape != d.shape:
        raise DimensionError(f"C has shape {c.shape}, D has {d.shape}")
    n = d.shape[0]
    return d * c + np.eye(n) * (d @ (np.ones((n, n)) - c.T))


def activation_count(node: int, c, convention: str = "column-sum") -> int:
    """x for node i: nodes it influences (column-sum) or is influenced by (row-sum)."""
    c = np.asarray(c)
    if convention == "column-sum":
        total = c[:, node].sum()
    elif convention == "row-sum":
        total = c[node, :].sum()
    else:
        raise ConfigurationError(f"x-convention must be one of {X_CONVENTIONS}, got {convention!r}")
    return int(total - c[node, node])


def select_internal_mc(node: int, c, bank: TransitionBank, convention: str = "column-sum") -> np.ndarray:
    """A_ii(x): the member of node i's dynamic bank picked by the activation count."""
    if not bank.is_dynamic(node):
        raise ContractViolationError(f"node {node} has no dynamic internal MC bank")
    members = bank.a_dynamic[node]
    x = activation_count(node, c, convention)
    if not 0 <= x < members.shape[0]:
        raise BankRangeError(
            f"node {node}: x = {x} outside its bank A^(0..{members.shape[0] - 1}); "
            "topology and bank disagree"
        )
    return members[x]


def effective_transitions(bank: TransitionBank, c, convention: str = "column-sum") -> np.ndarray:
    """(n, n, m, m) transition blocks with each diagonal replaced by A_ii(x) when dynamic."""
    a = np.array(bank.a_cross)
    for i in range(bank.n):
        if bank.is_dynamic(i):
            a[i, i] = select_internal_mc(i, c, bank, convention)
        else:
            a[i, i] = bank.a_self[i]
    return a


def total_influence_from_blocks(e: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Assemble H with block (u, v) = e_vu * a[u, v]."""
    n, m = a.shape[0], a.shape[-1]
    weights = e.T
    off = (weights > 0) & ~np.eye(n, dtype=bool)
    if off.any():
        row_ok = np.all(np.abs(a.sum(axis=3) - 1.0) <= 1e-9, axis=2)
        missing = off & ~row_ok
        if missing.any():
            u, v = (int(k) for k in np.argwhere(missing)[0])
            raise MissingTransitionError(
                f"edge {u}->{v} is active (e_{v}{u} = {weights[u, v]:g}) but A_{u}{v} is missing or not stochastic"
            )
    blocks = weights[:, :, None, None] * a
    return blocks.transpose(0, 2, 1, 3).reshape(n * m, n * m)


def build_total_influence(e, bank: TransitionBank, c, convention: str = "column-sum") -> np.ndarray:
    """H = E' (x) {A_ij}, with diagonal blocks e_ii * A_ii(x)."""
    e = np.asarray(e, dtype=float)
    n = bank.n
    if e.shape != (n, n):
        raise DimensionError(f"E has shape {e.shape}, bank has {n} nodes")
    a = effective_transitions(bank, c, convention)
    return total_influence_from_blocks(e, a)


def resolve_constraint(rule, state: NetworkState, model: InfluenceSpec) -> np.ndarray:
    """C from either a rule (evaluated on ``state``) or an explicit matrix."""
    if isinstance(rule, ConstraintRule):
        return build_constraint_matrix(rule, state, model.topology, model.states)
    c = check_constraint_matrix(rule, model.n)
    off_edges = (c == 1) & ~model.topology & ~np.eye(model.n, dtype=bool)
    if off_edges.any():
        i, j = (int(k) for k in np.argwhere(off_edges)[0])
        raise ConfigurationError(f"c[{i},{j}] = 1 but the topology has no edge {j}->{i}")
    return c


# --- JSON model files --------------------------------------------------------


def _matrix(value, m: int, where: str, report: ValidationReport) -> Optional[np.ndarray]:
    try:
        mat = np.array(value, dtype=float)
    except (TypeError, ValueError):
        report.error(where, "expected a numeric matrix")
        return None
    if mat.shape != (m, m):
        report.error(where, f"expected a {m}x{m} matrix, got shape {mat.shape}")
        return None
    return mat


def model_from_json(doc: Mapping, name: str = "") -> InfluenceSpec:
    """Build a model from a parsed model document; structural errors raise ModelValidationError.

    Schema (node ids are 0-based; edge ``from`` j ``to`` i means j influences i)::

        {
          "name": "optional",
          "states": ["O", "N", "U"],
          "nodes": 2,
          "edges": [{"from": 1, "to": 0, "d": 0.6, "A": [[...]]}],
          "self_influence": 0.5 | [d_00, d_11, ...],
          "internal_mc": [matrix | {"A": matrix, "bank": [matrix, ...]}, ...],
          "default_internal_mc": matrix,
          "default_cross_A": matrix,
          "x_convention": "column-sum" | "row-sum"
        }
    """
    report = ValidationReport()
    if not isinstance(doc, Mapping):
        report.error("$", "model file must contain a JSON object")
        raise ModelValidationError(report)

    try:
        states = StateSpace(tuple(doc.get("states", ())))
    except ConfigurationError as exc:
        report.error("$.states", str(exc))
        raise ModelValidationError(report) from None
    m = states.m
    n = doc.get("nodes")
    if not isinstance(n, int) or n < 1:
        report.error("$.nodes", f"expected a positive integer node count, got {n!r}")
        raise ModelValidationError(report)

    sources: dict[str, str] = {}
    topology = np.zeros((n, n), dtype=bool)
    weights: dict[tuple[int, int], Optional[float]] = {}
    cross: dict[tuple[int, int], np.ndarray] = {}

    default_cross = None
    if "default_cross_A" in doc:
        default_cross = _matrix(doc["default_cross_A"], m, "$.default_cross_A", report)

    for k, edge in enumerate(doc.get("edges", [])):
        where = f"$.edges[{k}]"
        if not isinstance(edge, Mapping):
            report.error(where, "expected an object with 'from' and 'to'")
            continue
        src, dst = edge.get("from"), edge.get("to")
        if not (isinstance(src, int) and isinstance(dst, int) and 0 <= src < n and 0 <= dst < n):
            report.error(where, f"'from'/'to' must be node ids in 0..{n - 1}, got {src!r}->{dst!r}")
            continue
        if src == dst:
            report.error(where, "self loops belong in self_influence / internal_mc")
            continue
        if topology[dst, src]:
            report.error(where, f"duplicate edge {src}->{dst}")
            continue
        topology[dst, src] = True
        weights[(dst, src)] = None if edge.get("d") is None else float(edge["d"])
        if "A" in edge:
            mat = _matrix(edge["A"], m, f"{where}.A", report)
            if mat is not None:
                cross[(src, dst)] = mat
                sources[f"A_cross[{src},{dst}]"] = f"{where}.A"
        elif default_cross is not None:
            sources[f"A_cross[{src},{dst}]"] = "$.default_cross_A"
        else:
            sources[f"A_cross[{src},{dst}]"] = f"{where} (no 'A' and no default_cross_A)"

    self_influence = doc.get("self_influence", 0.5)
    d = np.zeros((n, n))
    for i in range(n):
        senders = [j for j in range(n) if topology[i, j]]
        if isinstance(self_influence, list):
            if len(self_influence) != n:
                report.error("$.self_influence", f"expected {n} entries, got {len(self_influence)}")
                raise ModelValidationError(report)
            d_ii = float(self_influence[i])
            sources[f"D[{i}]"] = f"$.self_influence[{i}] + $.edges(to={i})"
        else:
            # shared weight: isolated nodes keep all their influence
            d_ii = float(self_influence) if senders else 1.0
            sources[f"D[{i}]"] = f"$.self_influence + $.edges(to={i})"
        d[i, i] = d_ii
        given = [j for j in senders if weights[(i, j)] is not None]
        free = [j for j in senders if weights[(i, j)] is None]
        for j in given:
            d[i, j] = weights[(i, j)]
        if free:
            share = (1.0 - d_ii - sum(d[i, j] for j in given)) / len(free)
            for j in free:
                d[i, j] = share

    default_self = None
    if "default_internal_mc" in doc:
        default_self = _matrix(doc["default_internal_mc"], m, "$.default_internal_mc", report)
    entries = doc.get("internal_mc", [None] * n)
    if not isinstance(entries, list) or len(entries) != n:
        report.error("$.internal_mc", f"expected a list with one entry per node ({n})")
        raise ModelValidationError(report)

    a_self = np.zeros((n, m, m))
    dynamic: list = [None] * n
    for i, entry in enumerate(entries):
        where = f"$.internal_mc[{i}]"
        static = None
        if entry is None:
            if default_self is None:
                report.error(where, "missing internal MC and no default_internal_mc")
                continue
            static = default_self
            sources[f"A_self[{i}]"] = "$.default_internal_mc"
        elif isinstance(entry, Mapping):
            if "bank" in entry:
                members = [_matrix(mat, m, f"{where}.bank[{h}]", report) for h, mat in enumerate(entry["bank"])]
                if all(mat is not None for mat in members) and members:
                    dynamic[i] = np.stack(members)
                    sources[f"bank[{i}]"] = f"{where}.bank"
            if "A" in entry:
                static = _matrix(entry["A"], m, f"{where}.A", report)
                sources[f"A_self[{i}]"] = f"{where}.A"
            elif dynamic[i] is not None:
                static = dynamic[i][0]
                sources[f"A_self[{i}]"] = f"{where}.bank[0]"
            elif default_self is not None:
                static = default_self
                sources[f"A_self[{i}]"] = "$.default_internal_mc"
            else:
                report.error(where, "expected 'A' and/or 'bank'")
        else:
            static = _matrix(entry, m, where, report)
            sources[f"A_self[{i}]"] = where
        if static is not None:
            a_self[i] = static

    convention = doc.get("x_convention", "column-sum")
    if convention not in X_CONVENTIONS:
        report.error("$.x_convention", f"must be one of {X_CONVENTIONS}, got {convention!r}")
    if not report.ok:
        raise ModelValidationError(report)

    spec = InfluenceSpec.create(
        states,
        d,
        a_self,
        topology=topology,
        a_cross=cross,
        default_cross=default_cross,
        a_dynamic=dynamic if any(b is not None for b in dynamic) else None,
        x_convention=convention,
        name=str(doc.get("name", name)),
    )
    return replace(spec, sources=sources)


def load_model(path, validate: bool = True, x_convention: Optional[str] = None) -> InfluenceSpec:
    """Read a JSON model file; with ``validate`` the model must pass validate_model."""
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    spec = model_from_json(doc, name=path.stem)
    if x_convention is not None:
        spec = spec.with_x_convention(x_convention)
    if validate:
        validate_model(spec).raise_if_failed()
    log.info("loaded model %r from %s (n=%d, m=%d, edges=%d)", spec.name, path, spec.n, spec.m, spec.edge_count)
    return spec


def model_to_json(spec: InfluenceSpec) -> dict:
    """Serialize a model with every weight and matrix written out explicitly."""
    edges = []
    for i, j in spec.edges():
        edges.append({"from": j, "to": i, "d": float(spec.d[i, j]), "A": spec.bank.a_cross[j, i].tolist()})
    internal: list = []
    for i in range(spec.n):
        entry: dict = {"A": spec.bank.a_self[i].tolist()}
        if spec.bank.is_dynamic(i):
            entry["bank"] = spec.bank.a_dynamic[i].tolist()
        internal.append(entry)
    return {
        "name": spec.name,
        "states": list(spec.states.labels),
        "nodes": spec.n,
        "edges": edges,
        "self_influence": [float(spec.d[i, i]) for i in range(spec.n)],
        "internal_mc": internal,
        "x_convention": spec.x_convention,
    }


def save_model(spec: InfluenceSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_json(spec), fh, indent=2)
