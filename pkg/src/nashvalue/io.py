"""Atomic CSV/JSON writers shared by every output path."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_csv(path, columns, rows, int_columns=frozenset(), header_comment: str | None = None) -> None:
    """Write rows with full float precision so reloads are lossless."""
    buf = io.StringIO()
    if header_comment:
        buf.writelines(f"# {line}\n" for line in header_comment.splitlines())
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    int_idx = {j for j, c in enumerate(columns) if c in int_columns}
    for row in rows:
        writer.writerow([str(int(v)) if j in int_idx else _fmt(v) for j, v in enumerate(row)])
    _atomic_write(path, buf.getvalue())


def write_json(path, data: dict) -> None:
    _atomic_write(path, json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def config_hash(data: dict) -> str:
    blob = json.dumps(data, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def provenance(seed, scale, config: dict) -> str:
    """One-line run stamp embedded at the top of emitted CSVs."""
    return f"nashvalue {__version__} seed={seed} scale={scale} config={config_hash(config)}"


def read_csv(path):
    """Column names and a float array, skipping ``#`` comment lines."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"empty CSV: {path}")
    columns = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    return columns, data.reshape(-1, len(columns))
