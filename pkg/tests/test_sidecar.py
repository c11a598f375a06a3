import struct

import numpy as np
import pytest

from pra_toolkit import SymmetricMatrixSeries, read_sidecar, write_sidecar
from pra_toolkit.sidecar import MAGIC, SidecarFormatError


def series(n_lags=3, N=4, seed=0):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n_lags, N, N))
    return SymmetricMatrixSeries(np.arange(2, 2 + n_lags), 0.5 * (B + B.transpose(0, 2, 1)), "D")


def test_roundtrip(tmp_path):
    s = series()
    write_sidecar(tmp_path / "m.bin", s)
    back = read_sidecar(tmp_path / "m.bin")
    np.testing.assert_array_equal(back.lags, s.lags)
    np.testing.assert_array_equal(back.matrices, s.matrices)


def test_layout(tmp_path):
    s = series(n_lags=2, N=3)
    write_sidecar(tmp_path / "m.bin", s)
    data = (tmp_path / "m.bin").read_bytes()
    assert data[:8] == MAGIC
    assert struct.unpack_from("<qq", data, 8) == (3, 2)
    assert struct.unpack_from("<q", data, 24) == (2,)
    assert struct.unpack_from("<9d", data, 32) == tuple(s.matrices[0].ravel())
    assert len(data) == 24 + 2 * (8 + 72)


def test_bad_magic(tmp_path):
    write_sidecar(tmp_path / "m.bin", series())
    data = bytearray((tmp_path / "m.bin").read_bytes())
    data[0:8] = b"NOTAMAT!"
    (tmp_path / "m.bin").write_bytes(bytes(data))
    with pytest.raises(SidecarFormatError):
        read_sidecar(tmp_path / "m.bin")


def test_truncated(tmp_path):
    write_sidecar(tmp_path / "m.bin", series())
    data = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "m.bin").write_bytes(data[:-8])
    with pytest.raises(SidecarFormatError):
        read_sidecar(tmp_path / "m.bin")
    (tmp_path / "m.bin").write_bytes(data[:10])
    with pytest.raises(SidecarFormatError):
        read_sidecar(tmp_path / "m.bin")
