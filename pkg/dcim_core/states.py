"""Node and network state representations.

A node's state is a one-hot vector s_i[t] of length m; the network state
S[t] is the node-major concatenation of the n node vectors. Internally a
NetworkState keeps only the n state indices and materializes the one-hot
vector on demand.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigurationError, DimensionError

LOAD_STATES = ("O", "N", "U")


@dataclass(frozen=True)
class StateSpace:
    """Ordered state labels shared by every node."""

    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ConfigurationError(f"a state space needs at least 2 states, got {len(labels)}")
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"state labels must be unique: {list(labels)}")

    @classmethod
    def load_balancing(cls) -> "StateSpace":
        """The (overload, normal, underload) space used for computing nodes."""
        return cls(LOAD_STATES)

    @property
    def m(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigurationError(
                f"unknown state label {label!r}; expected one of {list(self.labels)}"
            ) from None

    def __contains__(self, label) -> bool:
        return label in self.labels

    def __len__(self) -> int:
        return len(self.labels)


def node_vector(index: int, m: int) -> np.ndarray:
    """One-hot vector s_i[t] for state ``index``."""
    if not 0 <= index < m:
        raise DimensionError(f"state index {index} outside 0..{m - 1}")
    vec = np.zeros(m)
    vec[index] = 1.0
    return vec


def is_one_hot(vec) -> bool:
    vec = np.asarray(vec)
    return vec.ndim == 1 and bool(np.all((vec == 0) | (vec == 1))) and int(vec.sum()) == 1


@dataclass(frozen=True, eq=False)
class NetworkState:
    """Network state S[t], stored as the current state index of every node."""

    indices: np.ndarray
    m: int

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.intp).reshape(-1)
        if idx.size == 0:
            raise DimensionError("a network state needs at least one node")
        if np.any(idx < 0) or np.any(idx >= self.m):
            raise DimensionError(f"state indices must lie in 0..{self.m - 1}, got {idx.tolist()}")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_labels(cls, labels: Iterable[str], states: StateSpace) -> "NetworkState":
        return cls(np.array([states.index(label) for label in labels]), states.m)

    @classmethod
    def from_vector(cls, vector, m: int) -> "NetworkState":
        """Parse a concatenated one-hot vector of length m*n."""
        vec = np.asarray(vector, dtype=float).reshape(-1)
        if vec.size % m:
            raise DimensionError(f"vector length {vec.size} is not a multiple of m={m}")
        blocks = vec.reshape(-1, m)
        for i, block in enumerate(blocks):
            if not is_one_hot(block):
                raise DimensionError(f"block {i} of the state vector is not one-hot: {block.tolist()}")
        return cls(blocks.argmax(axis=1), m)

    @classmethod
    def uniform(cls, n: int, index: int, m: int) -> "NetworkState":
        return cls(np.full(n, index), m)

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator) -> "NetworkState":
        """Uniform draw over the m**n one-hot configurations."""
        return cls(rng.integers(0, m, size=n), m)

    @property
    def n(self) -> int:
        return int(self.indices.size)

    @property
    def vector(self) -> np.ndarray:
        """The concatenated one-hot vector S[t] of length m*n."""
        vec = np.zeros((self.n, self.m))
        vec[np.arange(self.n), self.indices] = 1.0
        return vec.reshape(-1)

    def node_vector(self, i: int) -> np.ndarray:
        return node_vector(int(self.indices[i]), self.m)

    def labels(self, states: StateSpace) -> list[str]:
        return [states.labels[k] for k in self.indices]

    def key(self) -> tuple[int, ...]:
        return tuple(int(k) for k in self.indices)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkState):
            return NotImplemented
        return self.m == other.m and np.array_equal(self.indices, other.indices)

    def __hash__(self) -> int:
        return hash((self.m, self.key()))

    def __repr__(self) -> str:
        return f"NetworkState({self.key()}, m={self.m})"


def block_sums(p: np.ndarray, m: int) -> np.ndarray:
    """Per-node sums of a length m*n probability vector."""
    return np.asarray(p).reshape(-1, m).sum(axis=1)


def check_block_probabilities(p: np.ndarray, m: int, tol: float = 1e-10) -> bool:
    """True when every m-block is nonnegative and sums to 1 within ``tol``."""
    p = np.asarray(p)
    return bool(np.all(p >= -tol) and np.allclose(block_sums(p, m), 1.0, rtol=0.0, atol=tol))


def as_state(state, m: int) -> NetworkState:
    """Accept a NetworkState, an index sequence or a one-hot vector."""
    if isinstance(state, NetworkState):
        if state.m != m:
            raise DimensionError(f"state has m={state.m}, model has m={m}")
        return state
    arr = np.asarray(state)
    if arr.dtype.kind == "f":
        return NetworkState.from_vector(arr, m)
    return NetworkState(arr, m)


def all_states(n: int, m: int) -> Iterator[NetworkState]:
    """Every joint configuration in lexicographic index order."""
    for combo in itertools.product(range(m), repeat=n):
        yield NetworkState(np.array(combo), m)
