"""Artifact writers: trajectories, reports, plot data and run manifests.

Nothing written here carries a timestamp or host detail, so two runs with
the same configuration and seed produce byte-identical files.
"""

import csv
import hashlib
import json
import logging
import os
from pathlib import Path

import msgpack
import numpy as np

from .errors import ConfigurationError

log = logging.getLogger(__name__)

FORMATS = ("csv", "json", "msgpack")


def _plain(obj):
    """JSON/msgpack hook for numpy values."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, doc) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False, default=_plain)
        fh.write("\n")
    log.debug("wrote %s", path)
    return path


def write_msgpack(path, doc) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(msgpack.packb(doc, default=_plain, use_bin_type=True))
    log.debug("wrote %s", path)
    return path


def read_msgpack(path):
    with open(path, "rb") as fh:
        return msgpack.unpackb(fh.read(), raw=False)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --- Trajectories ------------------------------------------------------------


def trajectory_rows(trajectory, states):
    """Rows of (run_id, t, node_id, state_label, p_<label>...).

    Row t carries p[t], the distribution state t was drawn from; t = 0 carries
    the indicator of the initial state.
    """
    m = states.m
    for t, state in enumerate(trajectory.states):
        if t == 0:
            probs = state.vector.reshape(-1, m)
        else:
            probs = trajectory.step_probs[t - 1].reshape(-1, m)
        for node, k in enumerate(state.indices):
            yield [trajectory.run_id, t, node, states.labels[k]] + [repr(float(x)) for x in probs[node]]


def write_trajectory_csv(path, trajectories, states) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "t", "node_id", "state_label"] + [f"p_{label}" for label in states.labels])
        for trajectory in trajectories:
            writer.writerows(trajectory_rows(trajectory, states))
    log.debug("wrote %s", path)
    return path


def trajectory_doc(trajectories, states) -> dict:
    return {
        "states": list(states.labels),
        "runs": [
            {
                "run_id": tr.run_id,
                "seed": tr.seed,
                "path": tr.state_matrix().tolist(),
                "step_probs": tr.prob_matrix().tolist() if tr.step_probs else None,
            }
            for tr in trajectories
        ],
    }


def write_trajectories(out_dir, trajectories, states, fmt: str = "csv") -> Path:
    out_dir = ensure_dir(out_dir)
    if fmt == "csv":
        return write_trajectory_csv(out_dir / "trajectory.csv", trajectories, states)
    if fmt == "json":
        return write_json(out_dir / "trajectory.json", trajectory_doc(trajectories, states))
    if fmt == "msgpack":
        return write_msgpack(out_dir / "trajectory.msgpack", trajectory_doc(trajectories, states))
    raise ConfigurationError(f"unknown output format {fmt!r}; expected one of {FORMATS}")


# --- Expectancy reports ------------------------------------------------------


def write_report_csv(path, report, estimator: str = "prob") -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "state", "expectancy", "stderr"])
        for name, label, value, err in report.rows(estimator):
            writer.writerow([name, label, repr(value), repr(err)])
    log.debug("wrote %s", path)
    return path


def write_selection_csv(path, report) -> Path:
    """Best-Policy selection counts: one aggregate row then one row per run."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "run_id"] + list(report.catalog))
        for name, result in report.results.items():
            if result.selections is None:
                continue
            writer.writerow([name, "all"] + result.selection_totals().tolist())
            for run_id, counts in enumerate(result.selections):
                writer.writerow([name, run_id] + counts.tolist())
    return path


def write_series_plot_data(path, report, state: str = None) -> Path:
    """x = step, one column per strategy, y = per-step expectancy of ``state``."""
    path = Path(path)
    k = report.states.index(state or report.target)
    names = report.strategies
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + names)
        for t in range(report.horizon):
            writer.writerow([t + 1] + [repr(float(report[n].series[t, k])) for n in names])
    return path


def write_report(out_dir, report, fmt: str = "csv", estimator: str = "prob") -> list:
    """Report table in ``fmt`` (JSON keeps the full per-step series) plus plot data."""
    out_dir = ensure_dir(out_dir)
    written = []
    if fmt == "csv":
        written.append(write_report_csv(out_dir / "report.csv", report, estimator))
    elif fmt == "json":
        written.append(write_json(out_dir / "report.json", report.to_json()))
    elif fmt == "msgpack":
        written.append(write_msgpack(out_dir / "report.msgpack", report.to_json()))
    else:
        raise ConfigurationError(f"unknown output format {fmt!r}; expected one of {FORMATS}")
    if any(r.selections is not None for r in report.results.values()):
        written.append(write_selection_csv(out_dir / "selections.csv", report))
    written.append(write_series_plot_data(out_dir / "plot_series.csv", report))
    return written


def write_sweep(out_dir, sweep, fmt: str = "csv", estimator: str = "prob") -> list:
    """Sweep table plus plot data with x = topology parameter, one column per policy."""
    out_dir = ensure_dir(out_dir)
    rows = list(sweep.table(estimator))
    written = []
    if fmt == "csv":
        path = out_dir / "sweep.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["topology", "kind", "parameter", "policy", "expectancy", "stderr"])
            for label, kind, param, name, value, err in rows:
                writer.writerow([label, kind, repr(param), name, repr(value), repr(err)])
        written.append(path)
    elif fmt == "json":
        written.append(write_json(out_dir / "sweep.json", sweep.to_json()))
    elif fmt == "msgpack":
        written.append(write_msgpack(out_dir / "sweep.msgpack", sweep.to_json()))
    else:
        raise ConfigurationError(f"unknown output format {fmt!r}; expected one of {FORMATS}")

    policies = []
    for row in rows:
        if row[3] not in policies:
            policies.append(row[3])
    table = {}
    for label, kind, param, name, value, _ in rows:
        table.setdefault((kind, param), {})[name] = value
    path = out_dir / "plot_sweep.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "parameter"] + policies)
        for (kind, param), values in table.items():
            writer.writerow([kind, repr(param)] + [repr(values.get(p, float("nan"))) for p in policies])
    written.append(path)
    return written


# --- Manifests ---------------------------------------------------------------


def write_manifest(out_dir, subcommand: str, config: dict, model_path=None, extra: dict = None) -> Path:
    from . import __version__

    doc = {
        "tool": "dcim",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
    }
    if model_path is not None and os.path.isfile(model_path):
        doc["model_sha256"] = sha256_file(model_path)
    if extra:
        doc.update(extra)
    return write_json(Path(out_dir) / "manifest.json", doc)
