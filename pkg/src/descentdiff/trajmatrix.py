"""Trajectory matrix layout and binary dataset storage.

A trajectory is stored as a 17 x K matrix: one column per discretization
node, rows stacked as

    rows  0:3   r   inertial position (z-up axis first, then x, y)
    rows  3:6   v   inertial velocity
    rows  6:10  q   body-from-inertial unit quaternion, scalar first
    rows 10:13  w   body angular velocity
    row  13     m   mass
    rows 14:17  T   body-frame thrust

All quantities are nondimensional.  Batches of these matrices are the unit
of work for dataset generation, model training and sampling.

Dataset files use a small self-describing binary container ("TDIF1"):

    bytes 0:5    magic b"TDIF1"
    bytes 5:17   little-endian uint32 {n_samples, n_rows, n_cols}
    remainder    n_samples row-major float64 matrices

A JSON manifest (sample provenance, scaler parameters, convergence stats)
travels as a sidecar file next to the binary blob.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

N_ROWS = 17

ROW_R = slice(0, 3)
ROW_V = slice(3, 6)
ROW_Q = slice(6, 10)
ROW_W = slice(10, 13)
ROW_M = 13
ROW_T = slice(14, 17)

#: Human-readable row labels, in storage order (z component first in each
#: 3-vector block, matching the up-axis-first inertial frame).
ROW_LABELS = (
    "rz", "rx", "ry",
    "vz", "vx", "vy",
    "q0", "q1", "q2", "q3",
    "wz", "wx", "wy",
    "m",
    "Tz", "Tx", "Ty",
)

_MAGIC = b"TDIF1"
_HEADER = struct.Struct("<III")


def state_control_to_column(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Rearrange a 14-dim state [m, r, v, q, w] plus control into one column."""
    col = np.empty(N_ROWS)
    col[ROW_R] = x[1:4]
    col[ROW_V] = x[4:7]
    col[ROW_Q] = x[7:11]
    col[ROW_W] = x[11:14]
    col[ROW_M] = x[0]
    col[ROW_T] = u
    return col


def column_to_state_control(col: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`state_control_to_column`."""
    x = np.empty(14)
    x[0] = col[ROW_M]
    x[1:4] = col[ROW_R]
    x[4:7] = col[ROW_V]
    x[7:11] = col[ROW_Q]
    x[11:14] = col[ROW_W]
    return x, np.asarray(col[ROW_T], dtype=float).copy()


def validate_batch(batch: np.ndarray) -> np.ndarray:
    """Coerce to a (n, 17, K) float64 array and reject nonfinite entries."""
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != N_ROWS:
        raise ValueError(f"expected (n, {N_ROWS}, K) trajectory batch, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("trajectory batch contains nonfinite values")
    return arr


def save_batch(path: str | Path, batch: np.ndarray) -> None:
    """Write a batch of trajectory matrices in TDIF1 format."""
    arr = validate_batch(batch)
    n, rows, k = arr.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(n, rows, k))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_batch(path: str | Path) -> np.ndarray:
    """Read a TDIF1 file back into a (n, 17, K) array."""
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a TDIF1 trajectory file")
    n, rows, k = _HEADER.unpack_from(raw, len(_MAGIC))
    body = np.frombuffer(raw, dtype="<f8", offset=len(_MAGIC) + _HEADER.size)
    expected = n * rows * k
    if body.size != expected:
        raise ValueError(f"{path}: payload has {body.size} values, expected {expected}")
    return body.reshape(n, rows, k).astype(np.float64)
