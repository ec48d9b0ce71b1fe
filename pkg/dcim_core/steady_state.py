"""Convergence diagnostics for the family of total influence matrices.

A DCIM with a fixed rule only ever multiplies by matrices from a finite
family (one per distinct constraint/activation signature). Whether S[0]
times an arbitrary product of them settles is checked three ways: every
member alone (eigenvalue dominance cross-checked by powering), the shared
eigenvalue-1 left eigenspace with joint spectral radius bounds on its
complement, and empirical running averages along sampled trajectories.
"""

from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .engine import NodeStreams, run_trajectory, step_operators
from .errors import ConfigurationError, DimensionError, SearchSpaceTooLarge
from .model import InfluenceSpec, activation_count
from .states import NetworkState, all_states, as_state, check_block_probabilities

log = logging.getLogger(__name__)

DEFAULT_STATE_CAP = 3 ** 10
DEFAULT_FAMILY_CAP = 4096
DEFAULT_PRODUCT_CAP = 200_000
EIGEN_GAP = 1e-9
SUBSPACE_TOL = 1e-8
NULL_RCOND = 1e-10
# larger power limits are summarized, not written out
POWER_LIMIT_JSON_MAX = 64

CONVERGES = "converges"
OSCILLATES = "oscillates"
INDETERMINATE = "indeterminate"


@dataclass
class MatrixFamily:
    """Indexed finite set of total influence matrices.

    ``provenance[k]`` records the state and (C, x) signature that first
    produced member k. ``lower_bound`` marks families built from sampled
    states, which may miss members.
    """

    members: list
    provenance: list = field(default_factory=list)
    lower_bound: bool = False
    states_visited: int = 0

    @classmethod
    def of(cls, matrices: Sequence[np.ndarray]) -> "MatrixFamily":
        members = [np.asarray(h, dtype=float) for h in matrices]
        if not members:
            raise ConfigurationError("a matrix family needs at least one member")
        size = members[0].shape
        for k, h in enumerate(members):
            if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape != size:
                raise DimensionError(f"member {k} has shape {h.shape}, expected square {size}")
        return cls(members, [{} for _ in members])

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.members[k]

    @property
    def size(self) -> int:
        return self.members[0].shape[0]


@dataclass(frozen=True)
class ProductSequence:
    """A finite prefix h_1, h_2, ... of an infinite member sequence."""

    indices: tuple

    def check(self, family: MatrixFamily) -> None:
        bad = [k for k in self.indices if not 0 <= k < len(family)]
        if bad:
            raise ConfigurationError(f"product sequence uses indices {bad} outside 0..{len(family) - 1}")

    def product(self, family: MatrixFamily) -> np.ndarray:
        self.check(family)
        out = np.eye(family.size)
        for k in self.indices:
            out = out @ family[k]
        return out

    def matrices(self, family: MatrixFamily) -> list:
        self.check(family)
        return [family[k] for k in self.indices]

    @classmethod
    def random(cls, family: MatrixFamily, length: int, rng: np.random.Generator) -> "ProductSequence":
        return cls(tuple(int(k) for k in rng.integers(0, len(family), size=length)))


def enumerate_family(
    model: InfluenceSpec,
    rule,
    cap: int = DEFAULT_FAMILY_CAP,
    *,
    state_cap: int = DEFAULT_STATE_CAP,
    sample: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> MatrixFamily:
    """Distinct H matrices reachable under ``rule``, deduplicated by (C, x).

    Sweeps all m^n joint states, refusing beyond ``state_cap``. With
    ``sample`` only that many random states are visited and the result is a
    lower-bound family.
    """
    if cap < 1:
        raise ConfigurationError(f"family cap must be >= 1, got {cap}")
    n, m = model.n, model.m
    if sample is None:
        total = m ** n
        if total > state_cap:
            raise SearchSpaceTooLarge(
                f"state sweep needs {m}^{n} = {total} joint states, above the cap of {state_cap}; "
                "use a sampled (lower-bound) family instead",
                bound=f"{m}^{n}",
            )
        states = all_states(n, m)
    else:
        rng = rng if rng is not None else np.random.default_rng()
        log.warning("sampling %d states: the result is a lower-bound family", sample)
        states = (NetworkState.random(n, m, rng) for _ in range(sample))

    members, provenance, seen = [], [], {}
    visited = 0
    for state in states:
        visited += 1
        ops = step_operators(state, model, rule)
        x = tuple(activation_count(i, ops.c, model.x_convention) for i in range(n))
        signature = (ops.c.tobytes(), x)
        if signature in seen:
            continue
        if len(members) >= cap:
            raise SearchSpaceTooLarge(
                f"matrix family has more than {cap} members; raise the family cap",
                bound=cap,
            )
        seen[signature] = len(members)
        members.append(ops.total_influence())
        provenance.append({"state": list(state.key()), "c": ops.c.tolist(), "x": list(x)})
    log.info("matrix family: %d members from %d states", len(members), visited)
    return MatrixFamily(members, provenance, lower_bound=sample is not None, states_visited=visited)


# --- Single matrix -----------------------------------------------------------


@dataclass
class LimitReport:
    verdict: str
    dominance: bool = False
    eigenvalues: Optional[np.ndarray] = None
    second_modulus: Optional[float] = None
    stationary: Optional[np.ndarray] = None
    power_limit: Optional[np.ndarray] = None
    iterations: int = 0
    period: Optional[int] = None
    diagnostic: str = ""

    def occupancy(self, m: int) -> Optional[np.ndarray]:
        """The stationary vector rescaled so each m-block sums to 1."""
        if self.stationary is None:
            return None
        return self.stationary * (self.stationary.size // m)

    @property
    def power_limit_is_identity(self) -> Optional[bool]:
        if self.power_limit is None:
            return None
        return bool(np.allclose(self.power_limit, np.eye(self.power_limit.shape[0]), rtol=0.0, atol=1e-12))

    def _power_limit_json(self):
        if self.power_limit is None or self.power_limit.shape[0] > POWER_LIMIT_JSON_MAX:
            return None
        return self.power_limit.tolist()

    def to_json(self) -> dict:
        def arr(x):
            if x is None:
                return None
            x = np.asarray(x)
            if np.iscomplexobj(x):
                return {"real": x.real.tolist(), "imag": x.imag.tolist()}
            return x.tolist()

        return {
            "verdict": self.verdict,
            "dominance": self.dominance,
            "eigenvalue_moduli": None if self.eigenvalues is None else np.abs(self.eigenvalues).tolist(),
            "second_modulus": self.second_modulus,
            "stationary": arr(self.stationary),
            "power_limit": self._power_limit_json(),
            "power_limit_is_identity": self.power_limit_is_identity,
            "iterations": self.iterations,
            "period": self.period,
            "diagnostic": self.diagnostic,
        }


def _left_eigen(h: np.ndarray):
    w, v = scipy.linalg.eig(h.T)
    order = np.argsort(-np.abs(w), kind="stable")
    return w[order], v[:, order]


def limit_exists(h, tol: float = 1e-10, *, max_iter: int = 10_000, max_period: int = 8) -> LimitReport:
    """Does S[0] H^t settle? Spectral dominance test cross-checked by powering H."""
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionError(f"H must be square, got {h.shape}")
    try:
        w, v = _left_eigen(h)
    except (np.linalg.LinAlgError, ValueError) as exc:
        log.warning("eigen-solver failed: %s", exc)
        return LimitReport(INDETERMINATE, diagnostic=f"eigen-solver failure: {exc}")

    near_one = np.abs(w - 1.0) <= EIGEN_GAP
    stationary = None
    second = None
    dominance = False
    if near_one.any():
        k = int(np.argmin(np.abs(w - 1.0)))
        vec = np.real(v[:, k])
        if abs(vec.sum()) > 0:
            stationary = vec / vec.sum()
        rest = np.delete(np.abs(w), k)
        second = float(rest.max()) if rest.size else 0.0
        dominance = int(near_one.sum()) == 1 and second < 1.0 - EIGEN_GAP

    threshold = max(tol * (1.0 - second) if dominance else tol, 1e-15)
    history = [h]
    current = h
    period = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        nxt = current @ h
        step = np.abs(nxt - current).max()
        if step < threshold:
            converged = True
            current = nxt
            break
        history.append(nxt)
        if len(history) > max_period + 1:
            history.pop(0)
        for p in range(2, max_period + 1):
            if len(history) <= p:
                break
            # a geometric approach closes p-step gaps about as fast as 1-step ones
            gap = np.abs(history[-1] - history[-1 - p]).max()
            if gap < tol and gap < 1e-3 * step:
                period = p
                break
        current = nxt
        if period:
            break

    if period:
        verdict = OSCILLATES
        diagnostic = f"power sequence repeats with period {period}"
    elif dominance and converged:
        verdict = CONVERGES
        diagnostic = ""
    else:
        verdict = INDETERMINATE
        if not near_one.any():
            diagnostic = "no eigenvalue at 1"
        elif not dominance:
            diagnostic = "eigenvalue 1 does not dominate (repeated or unit-modulus eigenvalues)"
        else:
            diagnostic = f"power iteration did not settle within {max_iter} steps"
    return LimitReport(
        verdict,
        dominance=dominance,
        eigenvalues=w,
        second_modulus=second,
        stationary=stationary,
        power_limit=current if converged else None,
        iterations=it,
        period=period,
        diagnostic=diagnostic,
    )


# --- Families ----------------------------------------------------------------


def unit_left_eigenspace(h: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of {v : v H = v}."""
    return scipy.linalg.null_space(h.T - np.eye(h.shape[0]), rcond=NULL_RCOND)


def common_unit_eigenspace(family: MatrixFamily) -> np.ndarray:
    stacked = np.vstack([h.T - np.eye(family.size) for h in family.members])
    return scipy.linalg.null_space(stacked, rcond=NULL_RCOND)


def _restricted_members(family: MatrixFamily):
    """Members acting on the complement of the shared eigenvalue-1 eigenspace.

    Every member fixes the shared space pointwise. With no shared direction
    the members are returned unrestricted.
    """
    shared = common_unit_eigenspace(family)
    if shared.shape[1] == 0:
        return [h.T for h in family.members], False
    q = scipy.linalg.null_space(shared.T)
    return [q.T @ h.T @ q for h in family.members], True


@dataclass
class JsrEstimate:
    lower: float
    upper: float
    depth: int
    restricted: bool
    dimension: int

    @property
    def inconclusive(self) -> bool:
        return self.lower < 1.0 <= self.upper

    def to_json(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "depth": self.depth,
            "restricted_to_complement": self.restricted,
            "dimension": self.dimension,
            "inconclusive": self.inconclusive,
        }


def estimate_jsr(family: MatrixFamily, depth: int = 4, *, product_cap: int = DEFAULT_PRODUCT_CAP) -> JsrEstimate:
    """Bounds on the joint spectral radius over products of length <= depth.

    lower = max rho(P)^(1/l); upper = min over l of max ||P||_2^(1/l). A
    single-member family returns its spectral radius for both.
    """
    if depth < 1:
        raise ConfigurationError(f"JSR depth must be >= 1, got {depth}")
    k = len(family)
    total = sum(k ** level for level in range(1, depth + 1))
    if total > product_cap:
        raise SearchSpaceTooLarge(
            f"JSR estimate at depth {depth} needs {k}^{depth} products of length {depth} "
            f"({total} in total), above the cap of {product_cap}",
            bound=f"{k}^{depth}",
        )
    mats, restricted = _restricted_members(family)
    dim = mats[0].shape[0]
    if dim == 0:
        return JsrEstimate(0.0, 0.0, depth, restricted, 0)
    base = np.stack(mats)
    if k == 1:
        rho = float(np.abs(np.linalg.eigvals(base[0])).max())
        return JsrEstimate(rho, rho, depth, restricted, dim)

    lower, upper = 0.0, np.inf
    level = base
    for length in range(1, depth + 1):
        if length > 1:
            level = np.einsum("pij,qjk->pqik", level, base).reshape(-1, dim, dim)
        rho = np.abs(np.linalg.eigvals(level)).max(axis=1)
        lower = max(lower, float(rho.max()) ** (1.0 / length))
        norms = np.linalg.norm(level, ord=2, axis=(1, 2))
        upper = min(upper, float(norms.max()) ** (1.0 / length))
    return JsrEstimate(lower, upper, depth, restricted, dim)


@dataclass
class RcpReport:
    members: list
    eigenspace_dims: list
    shared_eigenspace: bool
    max_angle: float
    jsr: Optional[JsrEstimate]
    verdict: str
    lower_bound_family: bool = False
    notes: list = field(default_factory=list)

    @property
    def all_converge(self) -> bool:
        return all(r.verdict == CONVERGES for r in self.members)

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "family_size": len(self.members),
            "lower_bound_family": self.lower_bound_family,
            "all_members_converge": self.all_converge,
            "shared_eigenspace": self.shared_eigenspace,
            "max_principal_angle": self.max_angle,
            "eigenspace_dims": self.eigenspace_dims,
            "jsr": None if self.jsr is None else self.jsr.to_json(),
            "members": [r.to_json() for r in self.members],
            "notes": self.notes,
        }


def rcp_conditions(
    family: MatrixFamily,
    tol: float = SUBSPACE_TOL,
    *,
    depth: int = 4,
    product_cap: int = DEFAULT_PRODUCT_CAP,
    workers: Optional[int] = None,
) -> RcpReport:
    """Sufficient conditions for every product sequence to converge.

    ``converges`` needs every member to converge, one shared eigenvalue-1
    left eigenspace and a JSR upper bound below 1 on its complement.
    """
    if len(family) == 0:
        raise ConfigurationError("rcp_conditions needs a nonempty family")
    with ThreadPoolExecutor(max_workers=workers or os.cpu_count()) as pool:
        members = list(pool.map(limit_exists, family.members))

    spaces = [unit_left_eigenspace(h) for h in family.members]
    dims = [int(s.shape[1]) for s in spaces]
    shared = True
    max_angle = 0.0
    for a, b in itertools.combinations(range(len(spaces)), 2):
        if dims[a] != dims[b] or dims[a] == 0:
            shared = False
            continue
        angle = float(scipy.linalg.subspace_angles(spaces[a], spaces[b]).max())
        max_angle = max(max_angle, angle)
        if angle >= tol:
            shared = False
    if len(spaces) == 1 and dims[0] == 0:
        shared = False

    notes = []
    try:
        jsr = estimate_jsr(family, depth, product_cap=product_cap)
    except SearchSpaceTooLarge as exc:
        jsr = None
        notes.append(str(exc))
    if jsr is not None and jsr.inconclusive:
        notes.append(f"JSR bounds [{jsr.lower:.6g}, {jsr.upper:.6g}] contain 1: inconclusive at depth {depth}")

    if any(r.verdict == OSCILLATES for r in members):
        verdict = OSCILLATES
    elif all(r.verdict == CONVERGES for r in members) and shared and jsr is not None and jsr.upper < 1.0:
        verdict = CONVERGES
    else:
        verdict = INDETERMINATE
    if family.lower_bound:
        notes.append("lower-bound family: built from sampled states and may miss members")
    return RcpReport(members, dims, shared, max_angle, jsr, verdict, family.lower_bound, notes)


# --- Sampled paths -----------------------------------------------------------


@dataclass
class EmpiricalReport:
    converged: list
    converged_at: list
    averages: list
    spread: float
    tol: float
    horizon: int
    window: int

    @property
    def converged_runs(self) -> int:
        return int(sum(self.converged))

    def to_json(self) -> dict:
        return {
            "runs": len(self.converged),
            "converged_runs": self.converged_runs,
            "converged_at": self.converged_at,
            "spread": self.spread,
            "tol": self.tol,
            "horizon": self.horizon,
            "window": self.window,
        }


def _running_average(probs: np.ndarray, tol: float, window: int):
    avg = np.cumsum(probs, axis=0) / np.arange(1, probs.shape[0] + 1)[:, None]
    for t in range(2 * window - 1, avg.shape[0]):
        if np.abs(avg[t] - avg[t - window]).max() < tol:
            return avg, t + 1
    return avg, None


def empirical_convergence(
    initial,
    model: InfluenceSpec,
    rule,
    horizon: int,
    ensemble: int,
    tol: float = 1e-3,
    *,
    seed: int = 0,
    window: Optional[int] = None,
    workers: Optional[int] = None,
) -> EmpiricalReport:
    """Running time-averages of p[t] over an ensemble of sampled paths.

    ``initial`` may be None, in which case each run starts from a uniformly
    random state. ``spread`` is the largest pairwise L-inf distance between
    the final averages of the runs that converged.
    """
    if horizon < 1 or ensemble < 1:
        raise ConfigurationError("horizon and ensemble must both be >= 1")
    window = window or max(1, horizon // 10)

    def one(run_id: int):
        streams = NodeStreams(seed, run_id, model.n)
        start = (
            NetworkState.random(model.n, model.m, streams.init_rng)
            if initial is None
            else as_state(initial, model.m)
        )
        traj = run_trajectory(start, model, rule, horizon, streams, run_id=run_id)
        return _running_average(traj.prob_matrix(), tol, window)

    with ThreadPoolExecutor(max_workers=workers or os.cpu_count()) as pool:
        results = list(pool.map(one, range(ensemble)))

    averages = [avg[-1] for avg, _ in results]
    for avg in averages:
        if not check_block_probabilities(avg, model.m):
            log.warning("running average left the probability simplex")
    converged = [at is not None for _, at in results]
    finals = [a for a, ok in zip(averages, converged) if ok]
    spread = 0.0
    for a, b in itertools.combinations(finals, 2):
        spread = max(spread, float(np.abs(a - b).max()))
    log.info("empirical convergence: %d/%d runs settled, spread %.3g", sum(converged), ensemble, spread)
    return EmpiricalReport(converged, [at for _, at in results], averages, spread, tol, horizon, window)
