"""Line-oriented run records: one ``dotted.key = value`` per line."""
from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from .core import PypParams, RunResult
from .dataset import Dataset
from .metrics import accuracy, alpha_hat, discovery_rate, nmi


def _fmt(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _parse(text: str) -> Any:
    if text == "true":
        return True
    if text == "false":
        return False
    if text == "none":
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def flatten(record: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in record.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out


def format_record(record: Mapping[str, Any]) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in flatten(record).items())


def write_record(record: Mapping[str, Any], path) -> None:
    Path(path).write_text(format_record(record))


def read_record(path) -> dict[str, Any]:
    """Parse a record file back into a flat ``{dotted_key: value}`` dict."""
    out: dict[str, Any] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        out[key] = _parse(value)
    return out


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_fingerprint(ds: Dataset, path=None) -> dict[str, Any]:
    return {
        "path": str(path) if path is not None else None,
        "rows": ds.n,
        "cols": ds.d,
        "sha256": file_sha256(path) if path is not None else ds.fingerprint(),
    }


def params_echo(params: PypParams) -> dict[str, Any]:
    return {
        "variant": params.variant,
        "lambda": params.lam,
        "theta": params.theta,
        "k": params.fixed_c,
        "agglomeration": params.agglomeration,
        "alg1_offset": params.alg1_offset,
        "max_iter": params.max_iter,
        "tol": params.tol,
        "seed": params.seed,
    }


def evaluate(true_labels, pred_labels, found_sizes=None) -> dict[str, float]:
    """ACC, NMI, discovery rate and alpha-hat of the found cluster sizes."""
    true_labels = np.asarray(true_labels)
    pred_labels = np.asarray(pred_labels)
    if found_sizes is None:
        found_sizes = np.unique(pred_labels, return_counts=True)[1]
    true_c = np.unique(true_labels).size
    return {
        "acc": accuracy(true_labels, pred_labels),
        "nmi": nmi(true_labels, pred_labels),
        "discovery_rate": discovery_rate(len(found_sizes), true_c),
        "alpha_hat": alpha_hat(found_sizes),
        "true_c": true_c,
    }


def run_record(params: Optional[PypParams], ds: Dataset, result: RunResult, path=None,
               extra: Optional[Mapping[str, Any]] = None) -> dict[str, Any]:
    record: dict[str, Any] = {}
    if params is not None:
        record["params"] = params_echo(params)
    if extra:
        record.setdefault("params", {}).update(extra)
    record["dataset"] = dataset_fingerprint(ds, path)
    record["result"] = {
        "c": result.state.c,
        "objective": result.objective_trace[-1] if result.objective_trace else math.nan,
        "iterations": result.iterations,
        "converged": result.converged,
        "wall_time": result.wall_time,
    }
    if ds.labels is not None:
        record["metrics"] = evaluate(ds.labels, result.state.assignments, result.state.sizes)
    return record


def write_assignments(assignments, path) -> None:
    """``point,cluster`` rows, both 1-based."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "cluster"])
        for i, k in enumerate(np.asarray(assignments)):
            w.writerow([i + 1, int(k) + 1])


def read_assignments(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([int(r[1]) for r in rows[1:]], dtype=np.int64)
