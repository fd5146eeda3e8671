"""Long-CSV datasets, trace CSVs and deterministic JSON artifacts.

Every number written as text uses 17 significant digits so that a round trip
through the files reproduces the in-memory doubles.
"""
from __future__ import annotations

import csv
import math
import re
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError
from .linalg import check_spd, scale_by_min_eig
from .models.data import Dataset

HEADER = ["subject_id", "time", "row", "col", "value"]
FMT = "%.17g"


def fmt(x) -> str:
    return FMT % float(x)


# ---------------------------------------------------------------- datasets


def ingest(path, scale_min_eig: bool = False, validate_spd: bool = False) -> Dataset:
    """Read ``subject_id,time,row,col,value`` records into a Dataset.

    Upper-triangle entries are authoritative; a lower-triangle entry must
    agree with its mirror.  Row, column and time indices are 1-based.
    """
    cells = defaultdict(dict)
    p = 0
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header != HEADER:
            raise DataError(f"{path}: header must be {','.join(HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields")
            sid = rec[0].strip()
            try:
                t, i, j = int(rec[1]), int(rec[2]), int(rec[3])
                val = float(rec[4])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed record") from None
            if t < 1 or i < 1 or j < 1:
                raise DataError(f"{path}:{lineno}: indices are 1-based")
            if not math.isfinite(val):
                raise DataError(f"{path}:{lineno}: non-finite value")
            key = (i, j)
            if key in cells[(sid, t)]:
                raise DataError(f"duplicate cell (row={i}, col={j}) for subject {sid}, time {t}")
            cells[(sid, t)][key] = val
            p = max(p, i, j)
    if not cells:
        raise DataError(f"{path}: no records")
    times = defaultdict(list)
    for sid, t in cells:
        times[sid].append(t)
    ids = sorted(times)
    stacks = []
    for sid in ids:
        ts = sorted(times[sid])
        if ts != list(range(1, len(ts) + 1)):
            missing = sorted(set(range(1, max(ts) + 1)) - set(ts))
            raise DataError(f"subject {sid}: missing time points {missing[:5]}")
        stack = np.empty((len(ts), p, p))
        for t in ts:
            got = cells[(sid, t)]
            m = stack[t - 1]
            for i in range(1, p + 1):
                for j in range(i, p + 1):
                    if (i, j) in got:
                        v = got[(i, j)]
                    elif (j, i) in got:
                        v = got[(j, i)]
                    else:
                        raise DataError(f"subject {sid}, time {t}: missing cell (row={i}, col={j})")
                    if (i, j) in got and (j, i) in got and i != j:
                        a, b = got[(i, j)], got[(j, i)]
                        if abs(a - b) > 1e-12 * max(abs(a), abs(b), 1e-300):
                            raise DataError(f"subject {sid}, time {t}: asymmetric cells ({i},{j}) and ({j},{i})")
                    m[i - 1, j - 1] = m[j - 1, i - 1] = v
            if validate_spd:
                try:
                    check_spd(m, strict=True)
                except DomainError:
                    raise DataError(f"subject {sid}, time {t}: matrix is not positive definite") from None
            if scale_min_eig:
                try:
                    stack[t - 1] = scale_by_min_eig(m)
                except DomainError:
                    raise DataError(f"subject {sid}, time {t}: cannot scale a non-PD matrix") from None
        stacks.append(stack)
    return Dataset(ids, stacks, symmetrize=False)


def write_dataset(path, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(HEADER) + "\n")
        iu = np.triu_indices(data.p)
        for sid, stack in zip(data.subject_ids, data.matrices):
            for t, m in enumerate(stack, start=1):
                vals = m[iu]
                for a, b, v in zip(iu[0], iu[1], vals):
                    fh.write(f"{sid},{t},{a + 1},{b + 1},{fmt(v)}\n")


# ---------------------------------------------------------------- JSON


def _dump(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return fmt(x)
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _dump(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_dump(str(k), indent, level + 1)}: {_dump(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_dump(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _dump(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 1) -> str:
    """Deterministic JSON with 17-significant-digit floats."""
    return _dump(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


# ---------------------------------------------------------------- traces


def trace_columns(params: dict, loglik=None):
    """Flatten ``{name: (kept, ...)}`` into ``(names, matrix)`` with
    ``name[i;j;...]`` column labels (0-based indices)."""
    names, blocks = [], []
    for key in params:
        arr = np.asarray(params[key], dtype=float)
        kept = arr.shape[0]
        tail = arr.shape[1:]
        if not tail:
            names.append(f"{key}[]")
            blocks.append(arr[:, None])
            continue
        for idx in np.ndindex(*tail):
            names.append(f"{key}[{';'.join(map(str, idx))}]")
        blocks.append(arr.reshape(kept, -1))
    if loglik is not None:
        names.extend(f"loglik[{j}]" for j in range(loglik.shape[1]))
        blocks.append(np.asarray(loglik, dtype=float))
    return names, np.hstack(blocks) if blocks else np.zeros((0, 0))


def write_trace_csv(path, trace) -> None:
    names, mat = trace_columns(trace.params, trace.loglik)
    with open(path, "w", newline="") as fh:
        fh.write("iteration," + ",".join(names) + "\n")
        for k, row in enumerate(mat):
            fh.write(str(k) + "," + ",".join(fmt(v) for v in row) + "\n")


_COL = re.compile(r"^([A-Za-z_0-9]+)\[([0-9;]*)\]$")


def read_trace_csv(path) -> dict:
    """Inverse of ``write_trace_csv``: ``{name: array (kept, ...)}``."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: empty trace")
            rows = [[float(v) for v in rec[1:]] for rec in reader if rec]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except ValueError:
        raise DataError(f"{path}: non-numeric trace entry") from None
    if not header or header[0] != "iteration":
        raise DataError(f"{path}: not a trace file")
    mat = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
    groups = {}
    for col, name in enumerate(header[1:]):
        m = _COL.match(name)
        if not m:
            raise DataError(f"{path}: bad column name {name!r}")
        key = m.group(1)
        idx = tuple(int(x) for x in m.group(2).split(";")) if m.group(2) else ()
        groups.setdefault(key, []).append((idx, col))
    out = {}
    for key, entries in groups.items():
        if entries[0][0] == ():
            out[key] = mat[:, entries[0][1]]
            continue
        shape = tuple(max(ix[d] for ix, _ in entries) + 1 for d in range(len(entries[0][0])))
        arr = np.full((mat.shape[0],) + shape, np.nan)
        for ix, col in entries:
            arr[(slice(None),) + ix] = mat[:, col]
        out[key] = arr
    return out
