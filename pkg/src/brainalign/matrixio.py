"""FMAT: a flat little-endian binary container for dense 2-d matrices.

Layout::

    b"FMAT" | version u8 (=1) | dtype u8 (1=f32, 2=f64) | rows u64 | cols u64 | payload

The payload is row-major and little-endian.
"""

import struct

import numpy as np

from .errors import FormatError, LengthError, ShapeError, ValidationError

MAGIC = b"FMAT"
VERSION = 1
HEADER = struct.Struct("<4sBBQQ")
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def write_matrix(m, path):
    """Write a 2-d float32/float64 array to ``path`` in FMAT format.

    Arrays of any other float dtype are stored as float64; 1-d arrays are
    stored as a single column.
    """
    a = np.asarray(m)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {a.shape}")
    code = _CODES.get(a.dtype, 2)
    a = np.ascontiguousarray(a, dtype=_DTYPES[code])
    rows, cols = a.shape
    try:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, VERSION, code, rows, cols))
            fh.write(a.tobytes(order="C"))
    except OSError as exc:
        raise OSError(f"cannot write matrix to {path}: {exc}") from exc


def read_matrix(path, dtype=None):
    """Read an FMAT file.

    Returns the matrix in its stored dtype, or cast to ``dtype`` if given
    (``np.float64`` widens f32 payloads losslessly).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: file shorter than the {HEADER.size}-byte header")
    magic, version, code, rows, cols = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dt = _DTYPES[code]
    expected = rows * cols * dt.itemsize
    payload = len(raw) - HEADER.size
    if payload != expected:
        raise LengthError(
            f"{path}: header declares {rows}x{cols} ({expected} bytes), payload has {payload}"
        )
    a = np.frombuffer(raw, dtype=dt, offset=HEADER.size).reshape(rows, cols)
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise ValidationError(f"{path}: non-finite entry at {tuple(int(i) for i in bad)}")
    a = a.astype(dt.newbyteorder("="))
    if dtype is not None:
        a = a.astype(dtype)
    return a


def read_vector(path):
    """Read a single-row or single-column FMAT file as a float64 vector."""
    a = read_matrix(path, np.float64)
    if 1 not in a.shape:
        raise ShapeError(f"{path}: expected a vector, got shape {a.shape}")
    return a.ravel()


