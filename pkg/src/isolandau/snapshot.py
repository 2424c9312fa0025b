"""Binary field snapshots with checksums and JSON sidecars.

Layout (all little-endian):

    offset  size  field
    0       4     magic b"ISLD"
    4       4     uint32 format version (1)
    8       4     uint32 n (nodes per axis)
    12      8     float64 h (spacing)
    20      4     uint32 k (step index)
    24      8     float64 t (time)
    32      4     uint32 CRC-32 of the payload
    36      8n^3  float64 payload, C order (index [ix, iy, iz], iz fastest)

The sidecar `<name>.json` carries the config hash and any accumulator state
a resumed run needs.  Writes are atomic (temp file + rename).
"""

import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .errors import CorruptSnapshot
from .grid import Grid3, ScalarField

MAGIC = b"ISLD"
VERSION = 1
_HEADER = struct.Struct("<4sIIdIdI")


def atomic_write_bytes(path, data):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode())


def write_snapshot(path, field, k, t, sidecar=None):
    """Write a ScalarField snapshot; `sidecar` dict goes to <path>.json."""
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    header = _HEADER.pack(MAGIC, VERSION, field.grid.n, field.grid.h, k, t, crc)
    atomic_write_bytes(path, header + payload)
    if sidecar is not None:
        atomic_write_text(path + ".json", json.dumps(sidecar, sort_keys=True, indent=1))


def read_snapshot(path):
    """Read a snapshot; returns (ScalarField, k, t, sidecar-dict-or-None)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise CorruptSnapshot(f"{path}: truncated header")
    magic, version, n, h, k, t, crc = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptSnapshot(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CorruptSnapshot(f"{path}: unsupported version {version}")
    payload = blob[_HEADER.size :]
    if len(payload) != 8 * n**3:
        raise CorruptSnapshot(f"{path}: payload size mismatch")
    if (zlib.crc32(payload) & 0xFFFFFFFF) != crc:
        raise CorruptSnapshot(f"{path}: checksum mismatch")
    vals = np.frombuffer(payload, dtype="<f8").reshape(n, n, n).copy()
    sidecar = None
    if os.path.exists(path + ".json"):
        with open(path + ".json") as fh:
            sidecar = json.load(fh)
    return ScalarField(Grid3(n, h), vals), k, t, sidecar
