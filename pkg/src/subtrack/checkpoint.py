"""Binary checkpoint format for optimizer state.

Layout (all integers and floats little-endian)::

    header   magic  8 bytes  b"STPPCKPT"
             version  u16    currently 1
             count    u32    number of parameter blocks

    block    name_len u16, name (UTF-8, name_len bytes)
             kind     u8     1 = low-rank, 0 = dense Adam
             transposed u8   1 if the gradient is handled as its transpose
             has_prev u8     1 if prev_lambda_norm is present
             rows     u32    low-rank: m (tracker layout, m <= n); dense: parameter rows
             cols     u32    low-rank: n; dense: parameter cols
             rank     u32    low-rank: r; dense: 0
             step     u64    optimizer step counter
             moment_t u64    number of moment updates
             last_upd u64    step of the last subspace update (0 for dense)
             prev     f64    prev_lambda_norm, 0.0 when absent
             data     f64[]  low-rank: B (m*r), M (r*n), V (r*n)
                             dense:    M (rows*cols), V (rows*cols)
                             every matrix row-major

A low-rank block therefore stores exactly ``m*r + 2*n*r`` matrix elements
plus a fixed number of scalars.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .engine import ParamState
from .moments import LowRankMoments
from .recovery import RecoveryState
from .subspace import SubspaceBasis

__all__ = [
    "FORMAT_VERSION",
    "MAGIC",
    "count_matrix_elements",
    "dumps",
    "load_checkpoint",
    "loads",
    "save_checkpoint",
]

MAGIC = b"STPPCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHI")
_BLOCK = struct.Struct("<BBBIIIQQQd")
_F8 = np.dtype("<f8")


def _write_matrix(fh: BinaryIO, X: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(X, dtype=_F8).tobytes())


def _read_matrix(fh: BinaryIO, rows: int, cols: int) -> np.ndarray:
    nbytes = rows * cols * 8
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise ValueError("truncated checkpoint data")
    return np.frombuffer(buf, dtype=_F8).astype(np.float64).reshape(rows, cols)


def _write(fh: BinaryIO, states: Mapping[str, ParamState]) -> None:
    fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(states)))
    for name, st in states.items():
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        prev = st.recovery.prev_lambda_norm
        if st.lowrank:
            S = st.subspace
            rows, rank = S.B.shape
            cols = st.moments.shape[1]
            fh.write(
                _BLOCK.pack(1, int(S.transposed), prev is not None, rows, cols, rank,
                            st.step, st.moments.t, S.last_update_step, prev or 0.0)
            )
            _write_matrix(fh, S.B)
        else:
            rows, cols = st.moments.shape
            fh.write(_BLOCK.pack(0, 0, prev is not None, rows, cols, 0, st.step, st.moments.t, 0, prev or 0.0))
        _write_matrix(fh, st.moments.M)
        _write_matrix(fh, st.moments.V)


def _read(fh: BinaryIO) -> dict[str, ParamState]:
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise ValueError("not a checkpoint: file too short")
    magic, version, count = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ValueError("not a checkpoint: bad magic")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    states = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode("utf-8")
        kind, transposed, has_prev, rows, cols, rank, step, mt, last, prev = _BLOCK.unpack(fh.read(_BLOCK.size))
        recovery = RecoveryState(prev if has_prev else None)
        if kind == 1:
            B = _read_matrix(fh, rows, rank)
            M = _read_matrix(fh, rank, cols)
            V = _read_matrix(fh, rank, cols)
            subspace = SubspaceBasis(B=B, transposed=bool(transposed), last_update_step=last)
        elif kind == 0:
            M = _read_matrix(fh, rows, cols)
            V = _read_matrix(fh, rows, cols)
            subspace = None
        else:
            raise ValueError(f"unknown block kind {kind} for {name!r}")
        states[name] = ParamState(subspace=subspace, moments=LowRankMoments(M, V, mt), recovery=recovery, step=step)
    return states


def dumps(states: Mapping[str, ParamState]) -> bytes:
    buf = io.BytesIO()
    _write(buf, states)
    return buf.getvalue()


def loads(data: bytes) -> dict[str, ParamState]:
    return _read(io.BytesIO(data))


def save_checkpoint(path, states: Mapping[str, ParamState]) -> None:
    with open(Path(path), "wb") as fh:
        _write(fh, states)


def load_checkpoint(path) -> dict[str, ParamState]:
    with open(Path(path), "rb") as fh:
        return _read(fh)


def count_matrix_elements(data: bytes) -> dict[str, int]:
    """Number of float64 matrix elements stored per parameter block.

    Walks the serialized bytes directly so the count reflects what is on
    disk, not what the in-memory state claims.
    """
    fh = io.BytesIO(data)
    _, _, count = _HEADER.unpack(fh.read(_HEADER.size))
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode("utf-8")
        kind, _, _, rows, cols, rank, *_ = _BLOCK.unpack(fh.read(_BLOCK.size))
        n = rows * rank + 2 * rank * cols if kind == 1 else 2 * rows * cols
        fh.seek(8 * n, io.SEEK_CUR)
        out[name] = n
    if fh.tell() != len(data):
        raise ValueError("checkpoint size does not match its block headers")
    return out
