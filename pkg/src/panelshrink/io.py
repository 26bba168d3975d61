"""File formats: problem JSON, long-format panel CSV, result tables.

Floating-point numbers are written as shortest round-trip decimal strings
(`repr`), which re-parse to bitwise-identical doubles on any platform and
keep committed golden files locale-proof.  Readers accept both plain JSON
numbers and the string form.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .model import NormalMeansProblem, Unit, symmetrize
from .panel import PanelDataset
from .shrinkage import WeightSpec

__all__ = [
    "write_problem",
    "read_problem",
    "read_panel_csv",
    "write_estimates_csv",
    "write_hyperparams_json",
    "read_weight_csv",
]


def _num(x) -> str:
    return repr(float(x))


def _vec(a) -> list:
    return [_num(v) for v in np.asarray(a, dtype=float)]


def _mat(a) -> list:
    return [_vec(row) for row in np.asarray(a, dtype=float)]


def _parse_vec(raw) -> np.ndarray:
    return np.array([float(v) for v in raw], dtype=float)


def _parse_mat(raw) -> np.ndarray:
    return np.array([[float(v) for v in row] for row in raw], dtype=float)


def write_problem(problem: NormalMeansProblem, path) -> None:
    """Serialize a problem to JSON (schema: {T, k, units: [...]})."""
    units = []
    for u in problem.units:
        entry = {
            "id": u.id,
            "mask": [bool(m) for m in u.mask],
            "y": _vec(u.y),
            "sigma": _mat(u.sigma),
        }
        if u.z is not None:
            entry["z"] = _mat(u.z)
        if u.theta_true is not None:
            entry["theta_true"] = _vec(u.theta_true)
        units.append(entry)
    payload = {"T": problem.T, "k": problem.k, "units": units}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def read_problem(path) -> NormalMeansProblem:
    """Read a problem JSON file; noise covariances are re-symmetrized."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        T = int(payload["T"])
        k = int(payload["k"])
        units = []
        for entry in payload["units"]:
            units.append(
                Unit(
                    id=str(entry["id"]),
                    y=_parse_vec(entry["y"]),
                    sigma=symmetrize(_parse_mat(entry["sigma"])),
                    mask=np.array(entry["mask"], dtype=bool),
                    z=_parse_mat(entry["z"]) if "z" in entry else None,
                    theta_true=_parse_vec(entry["theta_true"])
                    if "theta_true" in entry
                    else None,
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed problem file {path}: {exc}") from exc
    return NormalMeansProblem(units=tuple(units), T=T, k=k)


def read_panel_csv(path) -> PanelDataset:
    """Read long-format records: header unit,period,individual,outcome,x1..xp."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        expected = ["unit", "period", "individual", "outcome"]
        if [h.strip() for h in header[:4]] != expected:
            raise ValueError(
                f"{path}: header must start with {','.join(expected)}, got {header[:4]}"
            )
        p = len(header) - 4
        unit_ids, periods, individuals, outcomes, covariates = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4 + p:
                raise ValueError(
                    f"{path}: line {lineno}: expected {4 + p} fields, got {len(row)}"
                )
            try:
                unit_ids.append(row[0].strip())
                periods.append(int(row[1]))
                individuals.append(row[2].strip())
                outcomes.append(float(row[3]))
                covariates.append([float(v) for v in row[4:]])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    if not outcomes:
        raise ValueError(f"{path}: no data rows")
    T = max(periods)
    return PanelDataset(
        unit_ids=np.array(unit_ids, dtype=object),
        periods=np.array(periods, dtype=int),
        individuals=np.array(individuals, dtype=object),
        outcomes=np.array(outcomes, dtype=float),
        covariates=np.array(covariates, dtype=float).reshape(len(outcomes), p),
        T=T,
        p=p,
    )


def write_estimates_csv(problem: NormalMeansProblem, estimates, path) -> None:
    """One row per observed (unit, period): unit,period,estimate."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("unit,period,estimate\n")
        for unit, est in zip(problem.units, estimates):
            periods = np.flatnonzero(unit.mask) + 1
            for t, v in zip(periods, est):
                fh.write(f"{unit.id},{t},{_num(v)}\n")


def write_hyperparams_json(fit_result, path) -> None:
    """Hyperparameters, objective and diagnostics of a fit, as JSON."""
    hyper = fit_result.hyperparams
    payload = {"objective": _num(fit_result.objective)}
    if hyper is None:
        payload["center"] = "none (unshrunk)"
    else:
        payload["center"] = hyper.center
        payload["lambda"] = _mat(hyper.lam)
        if hyper.mu is not None:
            payload["mu"] = _vec(hyper.mu)
        if hyper.gamma is not None:
            payload["gamma"] = _vec(hyper.gamma)
    diag = {}
    for key, val in fit_result.diagnostics.items():
        if isinstance(val, (bool, int, str)):
            diag[key] = val
        elif isinstance(val, float):
            diag[key] = _num(val)
        elif isinstance(val, np.ndarray):
            diag[key] = _mat(val) if val.ndim == 2 else _vec(val)
    payload["diagnostics"] = diag
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def read_weight_csv(path, T: int) -> WeightSpec:
    """Weight file: a T x T matrix, or R rows of T nonnegative entries.

    A square matrix is used as-is; otherwise the rows define linear
    combinations of interest (a single row w gives the weighted-mean loss
    with matrix w w').
    """
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != T:
        raise ValueError(f"{path}: expected rows of length T={T}")
    if arr.shape[0] == T:
        return WeightSpec.matrix(arr)
    return WeightSpec.linear_combination(arr)
