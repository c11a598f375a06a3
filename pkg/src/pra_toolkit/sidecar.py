"""Dense binary sidecar for per-lag matrices.

Layout (little-endian)::

    8 bytes   magic b"PRAMAT01"
    int64     N
    int64     number of lags
    repeated: int64 lag, then N*N float64 in row-major order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .exceptions import PRAError
from .pra import SymmetricMatrixSeries

MAGIC = b"PRAMAT01"
_HEAD = struct.Struct("<8sqq")
_LAG = struct.Struct("<q")


class SidecarFormatError(PRAError, ValueError):
    """File is not a well-formed matrix sidecar."""


def write_sidecar(path, series):
    mats = np.asarray(series.matrices, dtype="<f8")
    n_lags, N, _ = mats.shape
    with Path(path).open("wb") as fh:
        fh.write(_HEAD.pack(MAGIC, N, n_lags))
        for lag, M in zip(series.lags, mats):
            fh.write(_LAG.pack(int(lag)))
            fh.write(np.ascontiguousarray(M).tobytes(order="C"))


def read_sidecar(path, kind="D"):
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise SidecarFormatError("file shorter than the header")
    magic, N, n_lags = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise SidecarFormatError(f"bad magic {magic!r}")
    if N < 1 or n_lags < 0:
        raise SidecarFormatError(f"bad header N={N}, lags={n_lags}")
    block = _LAG.size + 8 * N * N
    if len(data) != _HEAD.size + n_lags * block:
        raise SidecarFormatError("payload size does not match the header")
    lags = np.empty(n_lags, dtype=np.int64)
    mats = np.empty((n_lags, N, N))
    off = _HEAD.size
    for i in range(n_lags):
        (lags[i],) = _LAG.unpack_from(data, off)
        mats[i] = np.frombuffer(data, dtype="<f8", count=N * N, offset=off + _LAG.size).reshape(N, N)
        off += block
    return SymmetricMatrixSeries(lags, mats, kind)
