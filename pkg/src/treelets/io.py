"""CSV ingestion, atomic file output and run manifests."""

import csv
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DimensionError, InsufficientDataError, NonFiniteInputError, TreeletError

__all__ = [
    "LabeledData",
    "read_csv",
    "format_float",
    "matrix_csv",
    "write_csv",
    "atomic_write_text",
    "file_sha256",
    "write_manifest",
]


class CsvFormatError(TreeletError):
    code = "csv-format"


@dataclass(frozen=True)
class LabeledData:
    X: np.ndarray
    target: np.ndarray  # class ids (str or int) or real responses
    header: Optional[list] = None

    @property
    def classes(self):
        return np.unique(self.target)


def _parse_cell(tok, row, col):
    try:
        v = float(tok)
    except ValueError:
        raise CsvFormatError(f"non-numeric cell {tok!r} at row {row}, column {col}") from None
    if not math.isfinite(v):
        raise NonFiniteInputError(f"non-finite cell {tok!r} at row {row}, column {col}")
    return v


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_csv(path, header=False, delimiter=",", target=None):
    """Read a rectangular numeric table.

    Parameters
    ----------
    header : bool or "auto"
        First line holds column names; "auto" treats the first line as a
        header when any of its cells is not a number.
    target : {None, "label", "response"}
        Treat the last column as class labels (kept as strings, or ints when
        all are integral) or as a real response; a `LabeledData` is returned.

    Row and column numbers in error messages are 1-based file positions.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    names = None
    if header == "auto":
        header = bool(rows) and not all(_is_number(c) for c in rows[0])
    if header:
        if not rows:
            raise CsvFormatError(f"{path}: empty file")
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first = 2
    else:
        first = 1
    if not rows:
        raise InsufficientDataError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise CsvFormatError(f"ragged row {i + first}: {len(r)} fields, expected {width}")
    ncol = width - (1 if target else 0)
    if ncol < 1:
        raise DimensionError("no variable columns")
    X = np.empty((len(rows), ncol))
    for i, r in enumerate(rows):
        for j in range(ncol):
            X[i, j] = _parse_cell(r[j].strip(), i + first, j + 1)
    if not target:
        return X
    tok = [r[-1].strip() for r in rows]
    if target == "response":
        y = np.array([_parse_cell(t, i + first, width) for i, t in enumerate(tok)])
    elif target == "label":
        try:
            vals = [float(t) for t in tok]
            y = np.array([int(v) for v in vals]) if all(v.is_integer() for v in vals) else np.array(tok)
        except ValueError:
            y = np.array(tok)
    else:
        raise TreeletError(f"target must be None, 'label' or 'response', got {target!r}")
    return LabeledData(X, y, names)


def format_float(v):
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(v))


def matrix_csv(A, header=None):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    lines = [",".join(header)] if header else []
    lines += [",".join(format_float(v) for v in row) for row in A]
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text):
    """Write to a temp file in the target directory, fsync, then rename over `path`."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=os.path.basename(path), dir=d)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_csv(path, A, header=None):
    atomic_write_text(path, matrix_csv(A, header))


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path, command, config, seed=None, inputs=(), result=None):
    """Write ``<out_path>.manifest.json`` describing how `out_path` was produced.

    No timestamps are recorded, so a rerun yields an identical manifest.
    """
    from . import __version__

    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {os.fspath(p): file_sha256(p) for p in inputs},
        "output": os.path.basename(os.fspath(out_path)),
        "output_sha256": file_sha256(out_path),
        "result": result,
        "version": __version__,
        "numpy": np.__version__,
    }
    mpath = os.fspath(out_path) + ".manifest.json"
    atomic_write_text(mpath, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return mpath
