"""Artifact writers: atomic write-then-rename, CSV with 17 significant
digits and a leading ``# {json}`` metadata line, JSON with sorted keys."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np

FLOAT_FMT = ".17g"


def _default(o):
    if isinstance(o, Fraction):
        return o.numerator if o.denominator == 1 else f"{o.numerator}/{o.denominator}"
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats by strings so the output stays valid JSON."""
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def dumps(obj) -> str:
    return json.dumps(_clean(json.loads(json.dumps(obj, default=_default, allow_nan=True))),
                      sort_keys=True, indent=2, allow_nan=False)


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write_bytes(path, (dumps(obj) + "\n").encode())


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), FLOAT_FMT)


def write_csv(path, header, rows, meta: dict | None = None) -> Path:
    """RFC-4180 CSV (CRLF line ends); ``meta`` goes into a leading comment line."""
    buf = io.StringIO(newline="")
    if meta is not None:
        buf.write("# " + json.dumps(_clean(json.loads(json.dumps(meta, default=_default))),
                                    sort_keys=True, separators=(",", ":")) + "\r\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return atomic_write_bytes(path, buf.getvalue().encode())


def read_csv(path):
    """Return (meta, header, rows-as-strings)."""
    meta = None
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("# "):
            meta = json.loads(first[2:])
        else:
            fh.seek(0)
        r = csv.reader(fh)
        header = next(r)
        rows = [row for row in r if row]
    return meta, header, rows


def write_snapshots_csv(path, times, snaps, meta=None) -> Path:
    def rows():
        for t, snap in zip(times, snaps):
            for pid, (vx, vy) in enumerate(snap):
                yield (float(t), pid, float(vx), float(vy))
    return write_csv(path, ["t", "particle_id", "vx", "vy"], rows(), meta)


def read_snapshots_csv(path):
    meta, header, rows = read_csv(path)
    if header != ["t", "particle_id", "vx", "vy"]:
        raise ValueError(f"unexpected snapshot header {header}")
    arr = np.array([[float(x) for x in row] for row in rows])
    times = np.unique(arr[:, 0])
    snaps = np.stack([arr[arr[:, 0] == t][:, 2:4] for t in times])
    return meta, times, snaps


def write_snapshots_binary(path, times, snaps, meta=None) -> Path:
    """Rows (t, particle_id, vx, vy) as little-endian float64, row-major.

    The resolved config goes to a sidecar ``<path>.json``.
    """
    snaps = np.asarray(snaps, dtype=float)
    n_t, n = snaps.shape[:2]
    out = np.empty((n_t, n, 4), dtype="<f8")
    out[:, :, 0] = np.asarray(times, dtype=float)[:, None]
    out[:, :, 1] = np.arange(n)[None, :]
    out[:, :, 2:] = snaps
    path = Path(path)
    write_json(str(path) + ".json", {"layout": "rows of (t, particle_id, vx, vy), <f8, row-major",
                                     "n_times": n_t, "n_particles": n, "meta": meta})
    return atomic_write_bytes(path, out.tobytes())


def read_snapshots_binary(path):
    raw = np.fromfile(path, dtype="<f8").reshape(-1, 4)
    times = np.unique(raw[:, 0])
    snaps = np.stack([raw[raw[:, 0] == t][:, 2:4] for t in times])
    return times, snaps


EVENT_LOG_HEADER = ["t_k", "i", "j", "z", "u", "accepted"]


def write_event_log_csv(path, log: dict, meta=None) -> Path:
    def rows():
        for t, i, j, z, u, a in zip(log["t"], log["i"], log["j"], log["z"], log["u"], log["accepted"]):
            yield (float(t), int(i), int(j), float(z), float(u), int(a))
    return write_csv(path, EVENT_LOG_HEADER, rows(), meta)


def read_event_log_csv(path):
    """Return (meta, log dict with numpy arrays)."""
    meta, header, rows = read_csv(path)
    if header != EVENT_LOG_HEADER:
        raise ValueError(f"unexpected event-log header {header}")
    cols = list(zip(*rows)) if rows else [()] * 6
    log = {"t": np.array(cols[0], dtype=float), "i": np.array(cols[1], dtype=np.int64),
           "j": np.array(cols[2], dtype=np.int64), "z": np.array(cols[3], dtype=float),
           "u": np.array(cols[4], dtype=float), "accepted": np.array(cols[5], dtype=np.int8)}
    return meta, log
