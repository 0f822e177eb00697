"""Deterministic CSV/JSON emission.

Floats are written with ``repr``, the shortest decimal string that reads
back to the same double, so golden files compare byte for byte across
runs and languages.
"""
import csv
import json
import math
import os

import numpy as np


def fmt(x):
    """Shortest round-trip text for a scalar."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


class CsvAppender:
    """Single-owner CSV writer that flushes every row.

    Opening an existing file with a matching header appends to it; a
    missing or empty file gets the header first.
    """

    def __init__(self, path, columns):
        self.path = os.fspath(path)
        self.columns = tuple(columns)
        existing = read_csv(self.path) if os.path.exists(self.path) else None
        if existing is not None and existing[0] and tuple(existing[0]) != self.columns:
            raise ValueError(f"{self.path}: header {existing[0]} does not match {self.columns}")
        fresh = existing is None or not existing[0]
        self._fh = open(self.path, "a" if not fresh else "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if fresh:
            self._writer.writerow(self.columns)
            self._fh.flush()

    def write(self, row):
        if isinstance(row, dict):
            row = [row[c] for c in self.columns]
        self._writer.writerow([fmt(v) for v in row])
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_csv(path):
    """``(header, rows)`` with rows as lists of strings; ``([], [])`` for an empty file."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def dumps(obj):
    """Canonical JSON: sorted keys, fixed indentation, non-finite floats as strings."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))
