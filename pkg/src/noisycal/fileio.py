"""CSV and JSON interchange.

Conventions shared by every reader and writer here:

* class labels are 1-based in files and 0-based in memory;
* floats are written with ``repr`` so a rerun with the same seed produces
  byte-identical files;
* malformed input raises FileFormatError carrying the offending 1-based
  line number where one exists.
"""

from __future__ import annotations

import csv
import json
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .calibrate import PredictionSet, ThresholdResult
from .errors import FileFormatError
from .noise_model import TransitionMatrix, transition_from_matrix

__all__ = [
    "RESULTS_HEADER",
    "SUMMARY_HEADER",
    "read_probability_csv",
    "write_probability_csv",
    "write_scores_csv",
    "read_transition_csv",
    "write_transition_csv",
    "read_dataset_csv",
    "write_dataset_csv",
    "write_results_csv",
    "write_summary_csv",
    "write_prediction_sets_csv",
    "read_prediction_sets_csv",
    "write_threshold_json",
]

RESULTS_HEADER = (
    "method",
    "n",
    "K",
    "alpha",
    "delta_method",
    "delta_value",
    "tau_hat",
    "coverage",
    "avg_size",
    "seed",
)

SUMMARY_HEADER = (
    "method",
    "repetitions",
    "mean_coverage",
    "se_coverage",
    "mean_size",
    "se_size",
)


def _read_rows(path: str) -> list[list[str]]:
    try:
        with open(path, newline="") as handle:
            return [row for row in csv.reader(handle)]
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc


def _parse_float(cell: str, line: int) -> float:
    try:
        return float(cell)
    except ValueError as exc:
        raise FileFormatError(f"not a number: {cell!r}", line=line) from exc


def _parse_label(cell: str, k: int, line: int) -> int:
    try:
        label = int(cell)
    except ValueError as exc:
        raise FileFormatError(f"not an integer label: {cell!r}", line=line) from exc
    if not 1 <= label <= k:
        raise FileFormatError(f"label {label} outside 1..{k}", line=line)
    return label - 1


def _numbered_header(header: list[str], prefix: str) -> int:
    """Count of leading prefix_1, prefix_2, ... columns; 0 if malformed."""
    k = 0
    while k < len(header) and header[k] == f"{prefix}_{k + 1}":
        k += 1
    return k


def read_probability_csv(
    path: str, prefix: str = "p"
) -> tuple[
    NDArray[np.float64], NDArray[np.int64] | None, NDArray[np.int64] | None
]:
    """Read rows of ``p_1..p_K[,y_noisy][,y_true]``.

    Returns (values, y_noisy, y_true) with absent label columns as None.
    With ``prefix="s"`` the same layout reads score files.
    """
    rows = _read_rows(path)
    if not rows:
        raise FileFormatError(f"{path} is empty")
    header = [cell.strip() for cell in rows[0]]
    k = _numbered_header(header, prefix)
    if k == 0:
        raise FileFormatError(
            f"header must start with {prefix}_1,...,{prefix}_K", line=1
        )
    tail = header[k:]
    if tail not in ([], ["y_noisy"], ["y_true"], ["y_noisy", "y_true"]):
        raise FileFormatError(
            f"columns after {prefix}_{k} must be [y_noisy][,y_true], got {tail}",
            line=1,
        )
    has_noisy = "y_noisy" in tail
    has_true = "y_true" in tail

    values = np.empty((len(rows) - 1, k))
    y_noisy = np.empty(len(rows) - 1, dtype=np.int64) if has_noisy else None
    y_true = np.empty(len(rows) - 1, dtype=np.int64) if has_true else None
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != len(header):
            raise FileFormatError(
                f"expected {len(header)} cells, got {len(row)}", line=line
            )
        values[i] = [_parse_float(cell, line) for cell in row[:k]]
        cursor = k
        if has_noisy:
            y_noisy[i] = _parse_label(row[cursor], k, line)
            cursor += 1
        if has_true:
            y_true[i] = _parse_label(row[cursor], k, line)
    if values.shape[0] == 0:
        raise FileFormatError(f"{path} has a header but no data rows")
    return values, y_noisy, y_true


def _write_numbered_csv(
    path: str,
    values: NDArray[np.float64],
    prefix: str,
    y_noisy: NDArray[np.int64] | None,
    y_true: NDArray[np.int64] | None,
) -> None:
    values = np.asarray(values, dtype=np.float64)
    k = values.shape[1]
    header = [f"{prefix}_{j + 1}" for j in range(k)]
    if y_noisy is not None:
        header.append("y_noisy")
    if y_true is not None:
        header.append("y_true")
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for i in range(values.shape[0]):
            row: list[str] = [repr(float(v)) for v in values[i]]
            if y_noisy is not None:
                row.append(str(int(y_noisy[i]) + 1))
            if y_true is not None:
                row.append(str(int(y_true[i]) + 1))
            writer.writerow(row)


def write_probability_csv(
    path: str,
    probs: NDArray[np.float64],
    y_noisy: NDArray[np.int64] | None = None,
    y_true: NDArray[np.int64] | None = None,
) -> None:
    _write_numbered_csv(path, probs, "p", y_noisy, y_true)


def write_scores_csv(
    path: str,
    scores: NDArray[np.float64],
    y_noisy: NDArray[np.int64] | None = None,
    y_true: NDArray[np.int64] | None = None,
) -> None:
    """Score export mirroring the probability layout with s_1..s_K."""
    _write_numbered_csv(path, scores, "s", y_noisy, y_true)


def read_transition_csv(path: str) -> TransitionMatrix:
    """Read a headerless K x K column-stochastic matrix.

    Column sums may drift from 1 by up to 1e-6 (files store rounded
    decimals); anything further off is rejected, never repaired.
    """
    rows = _read_rows(path)
    if not rows:
        raise FileFormatError(f"{path} is empty")
    k = len(rows)
    matrix = np.empty((k, k))
    for i, row in enumerate(rows):
        line = i + 1
        if len(row) != k:
            raise FileFormatError(
                f"expected {k} cells for a {k} x {k} matrix, got {len(row)}",
                line=line,
            )
        matrix[i] = [_parse_float(cell, line) for cell in row]
    if np.any(matrix < 0.0):
        raise FileFormatError("transition matrix has negative entries")
    colsums = matrix.sum(axis=0)
    if np.any(np.abs(colsums - 1.0) > 1e-6):
        worst = int(np.argmax(np.abs(colsums - 1.0)))
        raise FileFormatError(
            f"column {worst + 1} sums to {colsums[worst]!r}, not 1 within 1e-6"
        )
    return transition_from_matrix(matrix / colsums)


def write_transition_csv(path: str, tm: TransitionMatrix) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        for row in np.asarray(tm.T):
            writer.writerow([repr(float(v)) for v in row])


def read_dataset_csv(
    path: str,
) -> tuple[NDArray[np.float64], NDArray[np.int64], NDArray[np.int64]]:
    """Read ``x_1..x_d,y_true,y_noisy`` rows."""
    rows = _read_rows(path)
    if not rows:
        raise FileFormatError(f"{path} is empty")
    header = [cell.strip() for cell in rows[0]]
    d = _numbered_header(header, "x")
    if d == 0 or header[d:] != ["y_true", "y_noisy"]:
        raise FileFormatError(
            "header must be x_1,...,x_d,y_true,y_noisy", line=1
        )
    n = len(rows) - 1
    if n == 0:
        raise FileFormatError(f"{path} has a header but no data rows")
    x = np.empty((n, d))
    y_true = np.empty(n, dtype=np.int64)
    y_noisy = np.empty(n, dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != d + 2:
            raise FileFormatError(
                f"expected {d + 2} cells, got {len(row)}", line=line
            )
        x[i] = [_parse_float(cell, line) for cell in row[:d]]
        for target, cell in ((y_true, row[d]), (y_noisy, row[d + 1])):
            try:
                label = int(cell)
            except ValueError as exc:
                raise FileFormatError(
                    f"not an integer label: {cell!r}", line=line
                ) from exc
            if label < 1:
                raise FileFormatError(f"label {label} is not 1-based", line=line)
            target[i] = label - 1
    return x, y_true, y_noisy


def write_dataset_csv(
    path: str,
    x: NDArray[np.float64],
    y_true: NDArray[np.int64],
    y_noisy: NDArray[np.int64],
) -> None:
    x = np.asarray(x, dtype=np.float64)
    header = [f"x_{j + 1}" for j in range(x.shape[1])] + ["y_true", "y_noisy"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for i in range(x.shape[0]):
            row = [repr(float(v)) for v in x[i]]
            row.append(str(int(y_true[i]) + 1))
            row.append(str(int(y_noisy[i]) + 1))
            writer.writerow(row)


def _format_cell(value: object) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _row_cells(row: dict, header: Sequence[str]) -> list[str]:
    missing = [name for name in header if name not in row]
    if missing:
        raise FileFormatError(f"row is missing columns {missing}")
    return [_format_cell(row[name]) for name in header]


def write_results_csv(path: str, rows: Sequence[dict]) -> None:
    """One row per (repetition, method); fixed column order."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RESULTS_HEADER)
        for row in rows:
            writer.writerow(_row_cells(row, RESULTS_HEADER))


def write_summary_csv(path: str, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SUMMARY_HEADER)
        for row in rows:
            writer.writerow(_row_cells(row, SUMMARY_HEADER))


def write_prediction_sets_csv(path: str, sets: Sequence[PredictionSet]) -> None:
    """Rows of ``row,tau,set_size,labels`` with 1-based ;-joined labels."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["row", "tau", "set_size", "labels"])
        for i, pset in enumerate(sets):
            labels = ";".join(str(int(v) + 1) for v in pset.labels)
            writer.writerow(
                [str(i + 1), repr(float(pset.tau)), str(len(pset.labels)), labels]
            )


def read_prediction_sets_csv(path: str) -> list[PredictionSet]:
    rows = _read_rows(path)
    if not rows or [cell.strip() for cell in rows[0]] != [
        "row",
        "tau",
        "set_size",
        "labels",
    ]:
        raise FileFormatError("header must be row,tau,set_size,labels", line=1)
    sets = []
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != 4:
            raise FileFormatError(f"expected 4 cells, got {len(row)}", line=line)
        tau = _parse_float(row[1], line)
        if row[3] == "":
            labels = np.empty(0, dtype=np.int64)
        else:
            try:
                labels = np.array(
                    [int(cell) - 1 for cell in row[3].split(";")], dtype=np.int64
                )
            except ValueError as exc:
                raise FileFormatError(
                    f"bad label list {row[3]!r}", line=line
                ) from exc
        if int(row[2]) != labels.size:
            raise FileFormatError(
                f"set_size {row[2]} does not match {labels.size} labels", line=line
            )
        sets.append(PredictionSet(labels=labels, tau=tau))
    return sets


def write_threshold_json(path: str, result: ThresholdResult) -> None:
    payload = {
        "tau": float(result.tau),
        "i_hat": None if result.i_hat is None else int(result.i_hat),
        "method": result.method.value,
        "set_I_empty": bool(result.set_I_empty),
        "warning": result.warning,
        "correction": None
        if result.correction is None
        else result.correction.to_dict(),
    }
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
