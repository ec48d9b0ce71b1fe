"""dcim-core - Dynamic and Constraint-based Influence Model simulation.

Networked Markov chains whose influence links are switched on and off by
boolean rules over the current node states, with time-varying internal
chains selected by how many links a node currently drives.

Usage::

    from dcim_core import load_model, get_policy, step_marginal
    model = load_model("three_node.json")
    p = step_marginal(state, model, get_policy("P3"))
"""

import logging
import os

try:
    from importlib.metadata import version as _pkg_version
    __version__ = _pkg_version("dcim-core")
except Exception:
    __version__ = "0.0.0-dev"

logging.getLogger(__name__).addHandler(logging.NullHandler())

_PACKAGE_DIR = os.path.dirname(os.path.abspath(__file__))
_DATA_DIR = os.path.join(_PACKAGE_DIR, "data")

from .engine import (  # noqa: E402
    NodeStreams,
    Trajectory,
    expected_state,
    im_step_marginal,
    run_trajectory,
    step_marginal,
    step_sample,
    step_sample_batch,
)
from .errors import (  # noqa: E402
    BankRangeError,
    ConfigurationError,
    ContractViolationError,
    DcimError,
    DimensionError,
    InvalidTopologyError,
    MissingTransitionError,
    ModelValidationError,
    SearchSpaceTooLarge,
)
from .experiments import (  # noqa: E402
    ExpectancyReport,
    TopologySpec,
    build_load_balancing_model,
    compare_policies,
    compare_with_optimum,
    generate_topology,
    overall_expectancy,
    topology_sweep,
)
from .model import (  # noqa: E402
    InfluenceSpec,
    TransitionBank,
    build_constraint_matrix,
    build_effective_influence,
    build_total_influence,
    load_model,
    select_internal_mc,
    validate_model,
)
from .policy import (  # noqa: E402
    ConstraintSearchSpace,
    best_policy,
    optimize_bruteforce,
    optimize_greedy,
    stepwise_expectancy,
)
from .rules import BUILTIN_POLICIES, ConstraintRule, PolicyCatalog, get_policy, load_policy_file  # noqa: E402
from .states import NetworkState, StateSpace  # noqa: E402
from .steady_state import (  # noqa: E402
    MatrixFamily,
    ProductSequence,
    empirical_convergence,
    enumerate_family,
    estimate_jsr,
    limit_exists,
    rcp_conditions,
)


def get_version():
    """Return the package version string."""
    return __version__


def get_data_dir():
    """Return the path to the bundled data directory."""
    return _DATA_DIR


def get_model_path(name):
    """Return the path of a bundled model fixture, e.g. ``"three_node"``."""
    return os.path.join(get_data_dir(), "models", f"{name}.json")
