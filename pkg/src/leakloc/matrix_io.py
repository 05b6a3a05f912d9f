"""Little-endian binary matrix container and CSV export.

Layout::

    offset 0   8 bytes  magic b"WDNMAT01"
    offset 8   4 bytes  dtype code: b"f8\\0\\0" float64, b"i8\\0\\0" int64
    offset 12  8 bytes  rows (uint64)
    offset 20  8 bytes  cols (uint64)
    offset 28  payload  rows*cols items, column-major, little-endian

A file whose length disagrees with its header raises :class:`IntegrityError`.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import IntegrityError

MAGIC = b"WDNMAT01"
HEADER = struct.Struct("<8s4sQQ")
DTYPES = {b"f8\0\0": np.dtype("<f8"), b"i8\0\0": np.dtype("<i8")}
CODES = {v: k for k, v in DTYPES.items()}


def encode_matrix(a) -> bytes:
    a = np.asarray(a)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError("matrix container holds 1-D or 2-D arrays only")
    dt = np.dtype("<i8") if np.issubdtype(a.dtype, np.integer) or a.dtype == bool else np.dtype("<f8")
    rows, cols = a.shape
    return HEADER.pack(MAGIC, CODES[dt], rows, cols) + np.asfortranarray(a, dtype=dt).tobytes(order="F")


def decode_matrix(buf: bytes, origin: str = "<buffer>") -> np.ndarray:
    if len(buf) < HEADER.size:
        raise IntegrityError(f"{origin}: truncated header")
    magic, code, rows, cols = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise IntegrityError(f"{origin}: bad magic {magic!r}")
    if code not in DTYPES:
        raise IntegrityError(f"{origin}: unknown dtype code {code!r}")
    dt = DTYPES[code]
    expected = HEADER.size + rows * cols * dt.itemsize
    if len(buf) != expected:
        raise IntegrityError(f"{origin}: expected {expected} bytes, found {len(buf)}")
    flat = np.frombuffer(buf, dtype=dt, offset=HEADER.size)
    return flat.reshape((rows, cols), order="F").astype(dt.newbyteorder("="))


def write_matrix(path, a) -> str:
    """Write ``a`` and return the sha256 of the file contents."""
    data = encode_matrix(a)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_matrix(path, sha256: str | None = None) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IntegrityError(f"cannot read {path}: {exc}") from exc
    if sha256 is not None and hashlib.sha256(data).hexdigest() != sha256:
        raise IntegrityError(f"{path}: content hash mismatch")
    return decode_matrix(data, str(path))


def write_csv(path, a, header: list[str] | None = None) -> None:
    a = np.asarray(a)
    if a.ndim == 1:
        a = a[:, None]
    fmt = "%d" if np.issubdtype(a.dtype, np.integer) else "%.17g"
    np.savetxt(path, a, delimiter=",", fmt=fmt,
               header=",".join(header) if header else "", comments="")
