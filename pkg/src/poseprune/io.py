"""Text and binary file formats.

Pose files hold one sequence per line: ``F J dim`` followed by F*J*dim
numbers in row-major order, written with 9 significant digits so float32
values survive the round trip bit-for-bit. Lines starting with ``#`` and
blank lines are ignored.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError


def atomic_write(path, payload):
    """Write bytes or text to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = payload.encode() if isinstance(payload, str) else payload
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x):
    return format(float(x), ".9g")


def format_poses(sequences):
    lines = []
    for seq in sequences:
        seq = np.asarray(seq, dtype=np.float32)
        if seq.ndim != 3 or seq.shape[-1] not in (2, 3):
            raise DataError(f"pose sequence must be (F, J, 2|3), got {seq.shape}")
        head = " ".join(str(d) for d in seq.shape)
        lines.append(head + " " + " ".join(_fmt(v) for v in seq.reshape(-1)))
    return "\n".join(lines) + "\n"


def parse_poses(text, source="<input>"):
    sequences = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        where = f"{source}:{lineno}"
        if len(fields) < 3:
            raise DataError(f"{where}: expected 'F J dim' header")
        try:
            frames, joints, dim = (int(v) for v in fields[:3])
        except ValueError:
            raise DataError(f"{where}: header fields must be integers") from None
        if frames < 1 or joints < 1 or dim not in (2, 3):
            raise DataError(f"{where}: bad header F={frames} J={joints} dim={dim}")
        expected = frames * joints * dim
        if len(fields) - 3 != expected:
            raise DataError(f"{where}: header declares {expected} values, found {len(fields) - 3}")
        try:
            values = np.array([float(v) for v in fields[3:]], dtype=np.float32)
        except ValueError as exc:
            raise DataError(f"{where}: {exc}") from None
        if not np.all(np.isfinite(values)):
            raise DataError(f"{where}: non-finite value")
        sequences.append(values.reshape(frames, joints, dim))
    if not sequences:
        raise DataError(f"{source}: no pose records")
    return sequences


def write_poses(path, sequences):
    atomic_write(path, format_poses(sequences))


def read_poses(path):
    return parse_poses(_read_text(path, "poses"), str(path))


def write_selections(path, runs):
    atomic_write(path, "".join(" ".join(str(int(i)) for i in run) + "\n" for run in runs))


def _read_text(path, what="file"):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {what} {path}: {exc.strerror}") from None


def read_selections(path):
    runs = []
    for lineno, line in enumerate(_read_text(path, "selection").splitlines(), 1):
        if line.startswith("#"):
            continue
        try:
            runs.append(np.array([int(v) for v in line.split()], dtype=np.int64))
        except ValueError:
            raise DataError(f"{path}:{lineno}: selection indexes must be integers") from None
    return runs


def write_jsonl(path, records):
    atomic_write(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def read_jsonl(path):
    return [json.loads(line) for line in _read_text(path).splitlines() if line.strip()]


def write_json(path, record):
    atomic_write(path, json.dumps(record, indent=2, sort_keys=True) + "\n")


def read_config(path):
    """Parse a flat ``key = value`` file into a dict of strings."""
    out = {}
    for lineno, line in enumerate(_read_text(path, "config").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out
