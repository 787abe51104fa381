"""Deterministic CSV ingestion and emission plus the run config format.

All files are UTF-8, comma separated, newline terminated, unquoted
(identifiers are restricted to ``[A-Za-z0-9_.-]``). Report numbers are
written with 6 significant digits; NaN is the literal ``NaN``; the
reject-everything threshold is the literal ``REJECT_ALL``. Writers go
through a temp file and an atomic rename, so a failed write never
leaves a partial file behind.
"""

from __future__ import annotations

import csv
import math
import os
import re
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    InconsistentDimension,
    MissingColumn,
    MissingThreshold,
    ParseError,
    ValueOutOfRange,
)
from .gram import EmbeddingBatch
from .policy import CLIP_TOL, CalibrationItem, Threshold

ID_PATTERN = re.compile(r"^[A-Za-z0-9_.-]*$")

ITEM_REQUIRED = ("id", "group_id", "q_score", "severity")
ITEM_OPTIONAL = (
    "judge_norm",
    "judge_correctness",
    "judge_faithfulness",
    "judge_completeness",
    "judge_clarity",
)

THRESHOLD_COLUMNS = ("calibrator", "alpha", "lambda_hat", "G", "I", "K_or_eta", "seed", "n")
REJECT_ALL_LITERAL = "REJECT_ALL"


def format_number(x: float) -> str:
    """Fixed 6-significant-digit rendering; NaN as the literal ``NaN``."""
    if math.isnan(x):
        return "NaN"
    if x == 0.0:
        return "0"
    return f"{x:.6g}"


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_number(float(value))
    return str(value)


def _parse_cell(text: str):
    if text == "":
        return None
    if text == "NaN":
        return float("nan")
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _atomic_writer(path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.with_name(path.name + ".tmp")


def _check_id(value: str, row: int, column: str) -> str:
    if not ID_PATTERN.match(value):
        raise ParseError(f"{column} {value!r} contains characters outside [A-Za-z0-9_.-]", row=row)
    return value


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ParseError(f"cannot parse {column}={text!r} as a number", row=row) from exc


def _parse_unit(text: str, row: int, column: str) -> float:
    value = _parse_float(text, row, column)
    if not math.isfinite(value):
        raise ValueOutOfRange(f"{column}={text!r} is not finite", row=row)
    if value < -CLIP_TOL or value > 1.0 + CLIP_TOL:
        raise ValueOutOfRange(f"{column}={value!r} outside [0, 1]", row=row)
    return min(max(value, 0.0), 1.0)


def _open_reader(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty (no header)", row=1)
        return header, [row for row in reader]


def load_items(path, kind: str = "other") -> list[CalibrationItem]:
    """Calibration items from an item CSV, in file order.

    The header must contain ``id,group_id,q_score,severity``; the judge
    columns are optional and validated for range but recorded nowhere
    (they are rubric metadata, not inputs). Row numbers count from the
    line after the header.
    """
    header, rows = _open_reader(path)
    for column in ITEM_REQUIRED:
        if column not in header:
            raise MissingColumn(f"item file is missing required column {column!r}")
    for column in header:
        if column not in ITEM_REQUIRED + ITEM_OPTIONAL:
            raise MissingColumn(f"item file has unknown column {column!r}")
    index = {column: header.index(column) for column in header}
    items = []
    for offset, row in enumerate(rows):
        rownum = offset + 2
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", row=rownum)
        _check_id(row[index["id"]], rownum, "id")
        group = _check_id(row[index["group_id"]], rownum, "group_id")
        q = _parse_unit(row[index["q_score"]], rownum, "q_score")
        m = _parse_unit(row[index["severity"]], rownum, "severity")
        for column in ITEM_OPTIONAL:
            if column in index and row[index[column]] != "":
                _parse_unit(row[index[column]], rownum, column)
        items.append(CalibrationItem(q_score=q, severity=m, group_id=group, kind=kind))
    return items


def load_scores(path) -> tuple[list[str], np.ndarray]:
    """Deployment scores: just the id and q_score columns.

    Severity columns, if present, are deliberately never read.
    """
    header, rows = _open_reader(path)
    for column in ("id", "q_score"):
        if column not in header:
            raise MissingColumn(f"scores file is missing required column {column!r}")
    id_at, q_at = header.index("id"), header.index("q_score")
    ids, scores = [], []
    for offset, row in enumerate(rows):
        rownum = offset + 2
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", row=rownum)
        ids.append(_check_id(row[id_at], rownum, "id"))
        scores.append(_parse_unit(row[q_at], rownum, "q_score"))
    return ids, np.asarray(scores, dtype=float)


def load_embeddings(path) -> list[EmbeddingBatch]:
    """Embedding batches grouped by (group_id, class_label), in file order.

    The header fixes the dimension through contiguous ``dim_0 ... dim_{d-1}``
    columns; any row with a different cell count is an inconsistent
    dimension. The empty class label means unlabeled.
    """
    header, rows = _open_reader(path)
    if header[:2] != ["group_id", "class_label"]:
        raise MissingColumn("embedding file must start with group_id,class_label")
    dim_names = header[2:]
    expected = [f"dim_{i}" for i in range(len(dim_names))]
    if not dim_names or dim_names != expected:
        raise MissingColumn("embedding columns must be contiguous dim_0..dim_{d-1}")
    d = len(dim_names)

    order: list[tuple[str, str]] = []
    grouped: dict[tuple[str, str], list[list[float]]] = {}
    for offset, row in enumerate(rows):
        rownum = offset + 2
        if len(row) != len(header):
            raise InconsistentDimension(
                f"row {rownum}: expected dimension {d}, found {len(row) - 2} coordinates"
            )
        gid = _check_id(row[0], rownum, "group_id")
        label = row[1]
        if label not in ("", "good", "bad"):
            raise ParseError(f"class_label must be good, bad or empty, got {label!r}", row=rownum)
        coords = [_parse_float(cell, rownum, "embedding") for cell in row[2:]]
        if not all(math.isfinite(c) for c in coords):
            raise ParseError("embedding coordinates must be finite", row=rownum)
        key = (gid, label)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(coords)

    batches = []
    for gid, label in order:
        rows_arr = np.asarray(grouped[(gid, label)], dtype=float)
        norms = np.linalg.norm(rows_arr, axis=1)
        batches.append(
            EmbeddingBatch(
                rows=rows_arr,
                group_id=gid,
                class_label=label or None,
                l2_normalized=bool(np.all(np.abs(norms - 1.0) <= 1e-9)),
            )
        )
    return batches


def write_embeddings(path, batches: Iterable[EmbeddingBatch]) -> None:
    """Embedding CSV writer; floats use shortest-exact rendering, so a
    write/load cycle reproduces the file byte for byte."""
    batches = list(batches)
    if not batches:
        raise ValueError("need at least one batch to write")
    d = batches[0].d
    for batch in batches:
        if batch.d != d:
            raise InconsistentDimension(f"batch dimensions differ: {batch.d} vs {d}")
    path = Path(path)
    tmp = _atomic_writer(path)
    with open(tmp, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["group_id", "class_label"] + [f"dim_{i}" for i in range(d)])
        for batch in batches:
            label = batch.class_label or ""
            for row in batch.rows:
                writer.writerow([batch.group_id, label] + [repr(float(x)) for x in row])
    os.replace(tmp, path)


def write_report(path, rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> None:
    """Generic report writer with deterministic order and formatting."""
    rows = list(rows)
    if columns is None:
        if not rows:
            raise ValueError("cannot infer columns from zero rows")
        columns = list(rows[0].keys())
    path = Path(path)
    tmp = _atomic_writer(path)
    with open(tmp, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(list(columns))
        for row in rows:
            writer.writerow([_format_cell(row.get(col)) for col in columns])
    os.replace(tmp, path)


def read_report(path) -> list[dict]:
    """Read back a report CSV with typed cells (ints, floats, bools)."""
    header, rows = _open_reader(path)
    return [dict(zip(header, (_parse_cell(cell) for cell in row))) for row in rows]


def write_thresholds(path, rows: Sequence[Mapping]) -> None:
    write_report(path, rows, columns=THRESHOLD_COLUMNS)


def threshold_row(
    threshold: Threshold, batch_count: int, batch_size: int, k_or_eta: str, n: int
) -> dict:
    return {
        "calibrator": threshold.calibrator,
        "alpha": threshold.alpha,
        "lambda_hat": REJECT_ALL_LITERAL if threshold.is_reject_all else threshold.value,
        "G": batch_count,
        "I": batch_size,
        "K_or_eta": k_or_eta,
        "seed": threshold.seed,
        "n": n,
    }


def load_thresholds(path) -> list[dict]:
    """Threshold rows with a reconstructed Threshold under key 'threshold'."""
    header, rows = _open_reader(path)
    for column in THRESHOLD_COLUMNS:
        if column not in header:
            raise MissingColumn(f"threshold file is missing column {column!r}")
    index = {column: header.index(column) for column in header}
    out = []
    for offset, row in enumerate(rows):
        rownum = offset + 2
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", row=rownum)
        raw_lambda = row[index["lambda_hat"]]
        alpha = _parse_float(row[index["alpha"]], rownum, "alpha")
        seed_text = row[index["seed"]]
        seed = int(seed_text) if seed_text else None
        value = None if raw_lambda == REJECT_ALL_LITERAL else _parse_unit(raw_lambda, rownum, "lambda_hat")
        threshold = Threshold(
            value=value, alpha=alpha, calibrator=row[index["calibrator"]], seed=seed
        )
        out.append(
            {
                "threshold": threshold,
                "calibrator": row[index["calibrator"]],
                "alpha": alpha,
                "G": row[index["G"]],
                "I": row[index["I"]],
                "K_or_eta": row[index["K_or_eta"]],
                "n": row[index["n"]],
            }
        )
    if not out:
        raise MissingThreshold("threshold file has no rows")
    return out


def select_threshold(
    rows: Sequence[Mapping], calibrator: str | None = None, alpha: float | None = None
) -> Threshold:
    """Pick one threshold row, by calibrator and/or alpha when given."""
    matches = [
        row
        for row in rows
        if (calibrator is None or row["calibrator"] == calibrator)
        and (alpha is None or abs(row["alpha"] - alpha) <= 1e-12)
    ]
    if not matches:
        raise MissingThreshold(
            f"no threshold row matches calibrator={calibrator!r}, alpha={alpha!r}"
        )
    if len(matches) > 1:
        raise MissingThreshold(
            f"{len(matches)} threshold rows match; disambiguate with calibrator/alpha"
        )
    return matches[0]["threshold"]


def parse_config(path) -> dict[str, str]:
    """Plain-text ``key = value`` config with ``#`` comments.

    Later assignments win. Key validation happens per subcommand, where
    the set of known keys is defined.
    """
    config: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {raw.strip()!r}", row=lineno)
            key, value = line.split("=", 1)
            config[key.strip()] = value.strip()
    return config
