"""Constraint rules: boolean activation logic for c_ij.

A rule is a set of (receiver_state, sender_state) label pairs. Node i gets
influenced by (receives workload from) node j at time t iff
(state(i), state(j)) is in the set. Per-edge overrides pin individual
c_ij entries regardless of the node states.

The five load-distribution policies of the computing-node scenario are
shipped as the built-in catalog, addressable by name.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigurationError
from .states import StateSpace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConstraintRule:
    """c_ij = 1 iff (state(i), state(j)) is an allowed pair."""

    name: str
    allowed_pairs: frozenset = field(default_factory=frozenset)
    # (i, j, active) triples; applied after the pair lookup, edges only
    overrides: tuple = ()

    def __post_init__(self):
        pairs = frozenset((str(r), str(s)) for r, s in self.allowed_pairs)
        object.__setattr__(self, "allowed_pairs", pairs)
        object.__setattr__(
            self, "overrides", tuple((int(i), int(j), bool(v)) for i, j, v in self.overrides)
        )

    @classmethod
    def always(cls, states: StateSpace, name: str = "always") -> "ConstraintRule":
        return cls(name, frozenset((r, s) for r in states.labels for s in states.labels))

    @classmethod
    def never(cls, name: str = "never") -> "ConstraintRule":
        return cls(name, frozenset())

    def check(self, states: StateSpace) -> None:
        """Raise ConfigurationError if the rule names a label outside ``states``."""
        for receiver, sender in sorted(self.allowed_pairs):
            for label in (receiver, sender):
                if label not in states:
                    raise ConfigurationError(
                        f"rule {self.name!r} references unknown state label {label!r}; "
                        f"states are {list(states.labels)}"
                    )

    def table(self, states: StateSpace) -> np.ndarray:
        """Boolean m x m lookup indexed [receiver_state, sender_state]."""
        self.check(states)
        out = np.zeros((states.m, states.m), dtype=bool)
        for receiver, sender in self.allowed_pairs:
            out[states.index(receiver), states.index(sender)] = True
        return out

    def evaluate(self, receiver: str, sender: str) -> bool:
        return (receiver, sender) in self.allowed_pairs

    def issubset(self, other: "ConstraintRule") -> bool:
        return self.allowed_pairs <= other.allowed_pairs

    def to_json(self) -> dict:
        doc = {"name": self.name, "allowed_pairs": [list(p) for p in sorted(self.allowed_pairs)]}
        if self.overrides:
            doc["overrides"] = [[i, j, int(v)] for i, j, v in self.overrides]
        return doc

    def __str__(self) -> str:
        return self.name


# Receiver first, sender second: (U, O) reads "an underloaded node takes
# workload from an overloaded neighbor".
_BUILTIN_PAIRS = {
    "P1": {("U", "O")},
    "P2": {("U", "O"), ("U", "N")},
    "P3": {("U", "O"), ("N", "O")},
    "P4": {("U", "O"), ("U", "N"), ("N", "O")},
    "P5": {("U", "O"), ("U", "N"), ("N", "O"), ("N", "N")},
}


class PolicyCatalog(Sequence):
    """An ordered, name-addressable collection of rules.

    Order matters: Best-Policy ties go to the lowest index.
    """

    def __init__(self, rules: Iterable[ConstraintRule] = ()):
        self._rules = tuple(rules)
        names = [r.name for r in self._rules]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigurationError(f"duplicate policy names in catalog: {dupes}")

    @classmethod
    def builtin(cls) -> "PolicyCatalog":
        return cls(ConstraintRule(name, frozenset(pairs)) for name, pairs in _BUILTIN_PAIRS.items())

    def __getitem__(self, index):
        return self._rules[index]

    def __len__(self) -> int:
        return len(self._rules)

    def __iter__(self) -> Iterator[ConstraintRule]:
        return iter(self._rules)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self._rules]

    def get(self, name: str) -> ConstraintRule:
        for rule in self._rules:
            if rule.name == name:
                return rule
        raise ConfigurationError(f"unknown policy {name!r}; known policies: {self.names}")

    def select(self, names: Iterable[str]) -> "PolicyCatalog":
        return PolicyCatalog(self.get(n) for n in names)

    def __repr__(self) -> str:
        return f"PolicyCatalog({self.names})"


BUILTIN_POLICIES = PolicyCatalog.builtin()


def get_policy(name: str) -> ConstraintRule:
    return BUILTIN_POLICIES.get(name)


def parse_policy_list(spec: str) -> PolicyCatalog:
    """Parse a comma-separated list of built-in names, e.g. ``"P1,P3"``."""
    names = [n.strip() for n in spec.split(",") if n.strip()]
    if not names:
        raise ConfigurationError("empty policy list")
    return BUILTIN_POLICIES.select(names)


def _rule_from_doc(doc, where: str) -> ConstraintRule:
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{where}: expected an object, got {type(doc).__name__}")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigurationError(f"{where}.name: a non-empty string is required")
    pairs = doc.get("allowed_pairs")
    if not isinstance(pairs, list):
        raise ConfigurationError(f"{where}.allowed_pairs: expected a list of [receiver, sender] pairs")
    for k, pair in enumerate(pairs):
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(x, str) for x in pair)):
            raise ConfigurationError(f"{where}.allowed_pairs[{k}]: expected [receiver, sender] labels")
    overrides = doc.get("overrides", [])
    for k, item in enumerate(overrides):
        if not (isinstance(item, list) and len(item) == 3):
            raise ConfigurationError(f"{where}.overrides[{k}]: expected [i, j, 0|1]")
    return ConstraintRule(name, frozenset(tuple(p) for p in pairs), tuple(tuple(o) for o in overrides))


def load_policy_file(path) -> PolicyCatalog:
    """Load one policy object, a list of them, or ``{"policies": [...]}``."""
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    if isinstance(doc, dict) and "policies" in doc:
        doc = doc["policies"]
        prefix = "$.policies"
    else:
        prefix = "$"
    if isinstance(doc, list):
        rules = [_rule_from_doc(d, f"{prefix}[{k}]") for k, d in enumerate(doc)]
    else:
        rules = [_rule_from_doc(doc, prefix)]
    log.debug("loaded %d policies from %s", len(rules), path)
    return PolicyCatalog(rules)


def save_policy_file(path, rules: Iterable[ConstraintRule]) -> None:
    with open(path, "w") as fh:
        json.dump({"policies": [r.to_json() for r in rules]}, fh, indent=2)
