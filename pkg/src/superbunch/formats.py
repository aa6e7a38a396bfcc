"""On-disk formats: photon stream files, grid/slice CSVs, JSON documents.

Binary stream layout (little-endian): b"PSTR", u16 version, u8 channel,
then u64 timestamps in picoseconds, ascending.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .model import PhotonStream

MAGIC = b"PSTR"
VERSION = 1
_HEADER = struct.Struct("<4sHB")


class FormatError(ValueError):
    pass


def write_stream(path, stream: PhotonStream) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, stream.channel))
        f.write(stream.timestamps.astype("<u8").tobytes())


def read_stream(path, duration_ps: int | None = None) -> PhotonStream:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, channel = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = data[_HEADER.size:]
    if len(body) % 8:
        raise FormatError(f"{path}: body is not a whole number of u64 timestamps")
    ts = np.frombuffer(body, dtype="<u8").astype(np.int64)
    try:
        return PhotonStream(channel, ts, duration_ps)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def write_stream_csv(path, stream: PhotonStream) -> None:
    np.savetxt(path, stream.timestamps, fmt="%d")


def read_stream_csv(path, channel: int, duration_ps: int | None = None) -> PhotonStream:
    ts = np.loadtxt(path, dtype=np.int64, comments="#", ndmin=1)
    try:
        return PhotonStream(channel, ts, duration_ps)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def load_stream(path, channel: int | None = None, duration_ps: int | None = None) -> PhotonStream:
    path = Path(path)
    if path.suffix == ".csv":
        if channel is None:
            raise FormatError("channel must be given for CSV stream files")
        return read_stream_csv(path, channel, duration_ps)
    return read_stream(path, duration_ps)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows, manifest_hash: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        if manifest_hash:
            f.write(f"# manifest {manifest_hash}\n")
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty file") from None
    rows = [[float(x) for x in row] for row in reader if row]
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def grid_rows(taus, values, sigma=None):
    n = len(taus)
    for i in range(n):
        for j in range(n):
            yield (taus[i], taus[j], values[i, j],
                   0.0 if sigma is None else sigma[i, j])


def read_slice_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slice profile as (tau in ps, value, sigma)."""
    header, data = read_csv(path)
    cols = {name: k for k, name in enumerate(header)}
    if "tau_ps" not in cols or "value" not in cols:
        raise FormatError(f"{path}: expected columns tau_ps, value[, sigma]")
    sigma = data[:, cols["sigma"]] if "sigma" in cols else np.ones(len(data))
    return data[:, cols["tau_ps"]], data[:, cols["value"]], sigma
