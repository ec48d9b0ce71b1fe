"""CLI entry point for the dcim command.

Exit codes: 0 success, 1 user or configuration error (bad flags, invalid
model, refused search), 2 internal failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from ._config import RunConfig, resolve_config
from .engine import NodeStreams, run_trajectory
from .errors import ConfigurationError, DcimError
from .experiments import TopologySpec, compare_policies, compare_with_optimum, topology_sweep
from .model import load_model, model_from_json, validate_model
from .output import (
    ensure_dir,
    write_json,
    write_manifest,
    write_msgpack,
    write_report,
    write_sweep,
    write_trajectories,
)
from .policy import optimize_bruteforce, optimize_greedy, stepwise_expectancy
from .rules import BUILTIN_POLICIES, PolicyCatalog, get_policy, load_policy_file, parse_policy_list
from .states import NetworkState
from .steady_state import empirical_convergence, enumerate_family, rcp_conditions

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 like every other user error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def _common(parser):
    parser.add_argument("--config", help="YAML run-config file (default: DCIM_CONF, ~/.dcim/dcim.yaml)")
    parser.add_argument("--model", help="JSON model file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--format", choices=("csv", "json", "msgpack"), help="output format")
    parser.add_argument("--seed", type=int, help="base seed; generated and recorded when omitted")
    parser.add_argument("--workers", type=int, help="worker threads (default: CPU count)")
    parser.add_argument("--x-convention", dest="x_convention", choices=("column-sum", "row-sum"),
                        help="how the activation count x of dynamic internal MCs is taken from C")
    parser.add_argument("--target", help="state label the expectancy objective maximizes (default N)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser.add_argument("--log-level", dest="log_level", help="logging level name")


def _ensemble(parser):
    parser.add_argument("--horizon", type=int, help="steps per run")
    parser.add_argument("--runs", type=int, help="runs per ensemble")
    parser.add_argument("--estimator", choices=("prob", "indicator"), help="expectancy estimator in CSV tables")


def _policy_flags(parser, many: bool):
    if many:
        parser.add_argument("--policies", help="comma-separated built-in policies, e.g. P1,P3")
        parser.add_argument("--best-policy", dest="best_policy", action="store_true", default=None,
                            help="add the per-step Best Policy strategy")
    else:
        parser.add_argument("--policy", help=f"built-in policy ({', '.join(BUILTIN_POLICIES.names)}) "
                                             "or a name from --policy-file")
    parser.add_argument("--policy-file", dest="policy_file", help="JSON policy file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dcim", description="Dynamic constraint-based influence model simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("simulate", help="sample trajectories under one policy")
    _common(p)
    _policy_flags(p, many=False)
    p.add_argument("--horizon", type=int, help="steps per trajectory")
    p.add_argument("--trajectories", type=int, help="number of trajectories (default 1)")
    p.add_argument("--state", help="initial state labels, e.g. O,N,U (default: random)")

    p = sub.add_parser("compare", help="overall expectancy of policies, Best Policy and Optimum")
    _common(p)
    _ensemble(p)
    _policy_flags(p, many=True)
    p.add_argument("--optimum", action="store_true", default=None, help="add the greedy Optimum strategy")
    p.add_argument("--bruteforce-check", dest="bruteforce_check", action="store_true", default=None,
                   help="check every Optimum step against exhaustive search (small models)")

    p = sub.add_parser("optimize", help="optimum constraint matrix for one state")
    _common(p)
    p.add_argument("--mode", choices=("greedy", "bruteforce"), help="search algorithm")
    p.add_argument("--state", help="state labels, e.g. O,N,U, or 'random'")
    p.add_argument("--cap", type=int, help="brute-force edge cap (searches at most 2^cap matrices)")

    p = sub.add_parser("analyze", help="steady-state diagnostics for one policy")
    _common(p)
    _ensemble(p)
    _policy_flags(p, many=False)
    p.add_argument("--family-cap", dest="family_cap", type=int, help="maximum distinct H matrices")
    p.add_argument("--state-cap", dest="state_cap", type=int, help="maximum joint states swept")
    p.add_argument("--sample-family", dest="sample_family", type=int,
                   help="sample this many states instead of sweeping (lower-bound family)")
    p.add_argument("--jsr-depth", dest="jsr_depth", type=int, help="maximum product length for JSR bounds")
    p.add_argument("--tol", type=float, help="running-average convergence tolerance")

    p = sub.add_parser("sweep", help="policy comparison over generated topologies")
    _common(p)
    _ensemble(p)
    _policy_flags(p, many=True)
    p.add_argument("--kind", choices=("gnp", "regular"), help="topology generator")
    p.add_argument("--nodes", type=int, help="node count")
    p.add_argument("--params", help="comma-separated edge probabilities (gnp) or degrees (regular)")
    p.add_argument("--model-seed", dest="model_seed", type=int, help="seed for the internal MCs")
    p.add_argument("--dynamic", action="store_true", default=None, help="give nodes dynamic internal MC banks")

    p = sub.add_parser("validate", help="check a model file and list every issue")
    _common(p)
    return parser


# --- helpers -----------------------------------------------------------------


def _setup_logging(config: RunConfig, verbose: int) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = getattr(logging, str(config.log_level).upper(), None)
        if not isinstance(level, int):
            raise ConfigurationError(f"unknown log level {config.log_level!r}")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _model(config: RunConfig):
    if not config.model:
        raise ConfigurationError("--model is required")
    return load_model(config.model, x_convention=config.x_convention)


def _single_rule(config: RunConfig, model):
    if config.policy_file:
        catalog = load_policy_file(config.policy_file)
        rule = catalog.get(config.policy) if config.policy else catalog[0]
    elif config.policy:
        rule = get_policy(config.policy)
    else:
        raise ConfigurationError("a policy is required: use --policy or --policy-file")
    rule.check(model.states)
    return rule


def _catalog(config: RunConfig, model) -> PolicyCatalog:
    catalog = load_policy_file(config.policy_file) if config.policy_file else parse_policy_list(config.policies)
    for rule in catalog:
        rule.check(model.states)
    return catalog


def _state(config: RunConfig, model, rng):
    if config.state is None or config.state == "random":
        return NetworkState.random(model.n, model.m, rng)
    labels = [s.strip() for s in config.state.split(",")]
    if len(labels) != model.n:
        raise ConfigurationError(f"--state gives {len(labels)} labels for a {model.n}-node model")
    return NetworkState.from_labels(labels, model.states)


def _finish(config: RunConfig, command: str, extra=None) -> None:
    write_manifest(config.out, command, config.to_json(), config.model, extra)
    log.info("%s: outputs in %s", command, config.out)


# --- subcommands -------------------------------------------------------------


def cmd_simulate(config: RunConfig) -> int:
    model = _model(config)
    rule = _single_rule(config, model)
    trajectories = []
    for run_id in range(config.trajectories):
        streams = NodeStreams(config.seed, run_id, model.n)
        initial = _state(config, model, streams.init_rng)
        trajectories.append(run_trajectory(initial, model, rule, config.horizon, streams, run_id=run_id))
    ensure_dir(config.out)
    write_trajectories(config.out, trajectories, model.states, config.format)
    _finish(config, "simulate", {"policy": rule.to_json()})
    return EXIT_OK


def cmd_compare(config: RunConfig) -> int:
    model = _model(config)
    catalog = _catalog(config, model)
    kwargs = dict(best_policy=config.best_policy, target_state=config.target, workers=config.workers)
    if config.optimum:
        report = compare_with_optimum(
            model, catalog, config.horizon, config.runs, config.seed,
            bruteforce_check=config.bruteforce_check, **kwargs,
        )
    else:
        report = compare_policies(model, catalog, config.horizon, config.runs, config.seed, **kwargs)
    if not report.check_normalization():
        log.warning("expectancies do not sum to 1 within tolerance")
    write_report(config.out, report, config.format, config.estimator)
    _finish(config, "compare", {"policies": [r.to_json() for r in catalog]})
    return EXIT_OK


def cmd_optimize(config: RunConfig) -> int:
    model = _model(config)
    state = _state(config, model, np.random.default_rng(config.seed))
    if config.mode == "greedy":
        c = optimize_greedy(state, model, target_state=config.target)
        value = stepwise_expectancy(state, model, c, config.target)
    else:
        c, value = optimize_bruteforce(
            state, model, target_state=config.target, cap=config.cap, workers=config.workers
        )
    doc = {
        "mode": config.mode,
        "target": config.target,
        "state": state.labels(model.states),
        "value": value,
        "c": c.tolist(),
        "active_edges": [[j, i] for i, j in model.edges() if c[i, j]],
        "edges": model.edge_count,
    }
    ensure_dir(config.out)
    write_json(os.path.join(config.out, "optimum.json"), doc)
    print(f"{config.mode}: step-wise {config.target}-expectancy {value:.12g}")
    _finish(config, "optimize")
    return EXIT_OK


def cmd_analyze(config: RunConfig) -> int:
    model = _model(config)
    rule = _single_rule(config, model)
    family = enumerate_family(
        model, rule, config.family_cap,
        state_cap=config.state_cap,
        sample=config.sample_family,
        rng=np.random.default_rng(config.seed),
    )
    rcp = rcp_conditions(family, depth=config.jsr_depth, workers=config.workers)
    empirical = empirical_convergence(
        None, model, rule, config.horizon, config.runs, config.tol,
        seed=config.seed, workers=config.workers,
    )
    doc = {
        "model": model.name,
        "policy": rule.to_json(),
        "family": {
            "size": len(family),
            "lower_bound": family.lower_bound,
            "states_visited": family.states_visited,
            "provenance": family.provenance,
        },
        "rcp": rcp.to_json(),
        "empirical": empirical.to_json(),
    }
    for member, report in zip(doc["rcp"]["members"], rcp.members):
        occupancy = report.occupancy(model.m)
        member["occupancy"] = None if occupancy is None else occupancy.tolist()
    ensure_dir(config.out)
    if config.format == "msgpack":
        write_msgpack(os.path.join(config.out, "analysis.msgpack"), doc)
    else:
        write_json(os.path.join(config.out, "analysis.json"), doc)
    print(f"family of {len(family)}: {rcp.verdict}")
    _finish(config, "analyze")
    return EXIT_OK


def cmd_sweep(config: RunConfig) -> int:
    catalog = parse_policy_list(config.policies) if not config.policy_file else load_policy_file(config.policy_file)
    specs = []
    for item in config.params.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            if config.kind == "gnp":
                specs.append(TopologySpec("gnp", config.nodes, p=float(item), seed=config.seed % (2 ** 32)))
            else:
                specs.append(TopologySpec("regular", config.nodes, degree=int(item), seed=config.seed % (2 ** 32)))
        except ValueError:
            raise ConfigurationError(f"params: cannot parse {item!r}") from None
    if not specs:
        raise ConfigurationError("params: no topology parameters given")
    sweep = topology_sweep(
        specs, catalog, config.horizon, config.runs, config.seed,
        model_seed=config.model_seed, dynamic=config.dynamic,
        best_policy=config.best_policy, target_state=config.target, workers=config.workers,
    )
    write_sweep(config.out, sweep, config.format, config.estimator)
    _finish(config, "sweep")
    return EXIT_OK


def cmd_validate(config: RunConfig) -> int:
    if not config.model:
        raise ConfigurationError("--model is required")
    with open(config.model) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{config.model}: invalid JSON: {exc}") from exc
    try:
        report = validate_model(model_from_json(doc))
    except DcimError as exc:
        report = getattr(exc, "report", None)
        if report is None:
            raise
    if config.format == "json":
        print(json.dumps(report.to_json(), indent=2))
    else:
        for issue in report.issues:
            print(f"{issue.location}: {issue.message}")
        print("ok" if report.ok else f"{len(report.issues)} issue(s)")
    return EXIT_OK if report.ok else EXIT_USER


COMMANDS = {
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "optimize": cmd_optimize,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    """Run one dcim subcommand and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    values = vars(args).copy()
    command = values.pop("command")
    config_path = values.pop("config", None)
    verbose = values.pop("verbose", 0)
    try:
        config = resolve_config(values, config_path).with_seed()
        _setup_logging(config, verbose)
        log.debug("resolved config: %s", config)
        return COMMANDS[command](config)
    except (DcimError, OSError) as exc:
        print(f"dcim {command}: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        log.debug("internal failure", exc_info=True)
        print(f"dcim {command}: internal error (run with -vv for the traceback)", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
