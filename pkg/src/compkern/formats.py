"""Binary file formats: tile cache (CKTL), Gram export (CKGM), model (CKRM).

All multi-byte integers are little-endian; payloads are row-major.

CKTL (one cached tile)
    magic ``b"CKTL"`` | version u32 | content hash 32 bytes |
    tile coords 4 x u32 (a_start, a_stop, b_start, b_stop) |
    dtype tag u8 (0 = float32, 1 = float64) | payload | CRC32 u32
    The CRC covers every byte before it.

CKGM (one Gram matrix)
    magic ``b"CKGM"`` | version u32 | content hash 32 bytes |
    n_rows u32 | n_cols u32 | symmetric u8 | dtype tag u8 |
    row ids (n_rows x u32) | col ids (n_cols x u32) | payload | CRC32 u32

CKRM (one fitted ridge model)
    magic ``b"CKRM"`` | lambda f64 | tilt f64 | N u32 | C u32 |
    alpha payload (N x C float64)

Writes are atomic: data goes to a temporary file in the target directory,
then ``os.replace`` moves it into place, so a crash never leaves a partial
file under the final name.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR_KIND = {"f4": 0, "f8": 1}


class FormatError(ValueError):
    """A binary file failed structural validation."""


class ChecksumError(FormatError):
    """Stored CRC32 does not match the file contents."""


def _dtype_tag(array: np.ndarray) -> int:
    key = array.dtype.str.lstrip("<>=")
    if key not in _TAG_FOR_KIND:
        raise FormatError(f"unsupported dtype {array.dtype}; use float32 or float64")
    return _TAG_FOR_KIND[key]


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _check_magic(data: bytes, magic: bytes, path) -> None:
    if len(data) < 4 or data[:4] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}")


def _check_crc(data: bytes, path) -> bytes:
    """Verify the trailing CRC32 and return the covered bytes."""
    if len(data) < 4:
        raise FormatError(f"{path}: truncated file")
    body, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        raise ChecksumError(f"{path}: checksum mismatch")
    return body


# ---------------------------------------------------------------------------
# CKTL: one tile of a Gram computation
# ---------------------------------------------------------------------------

def write_tile(path, content_hash: bytes, coords: tuple[int, int, int, int],
               values: np.ndarray) -> None:
    """Persist one computed tile.

    Parameters
    ----------
    path : path-like
        Destination file.
    content_hash : bytes
        32-byte hash identifying (architecture, data, precision).
    coords : tuple of int
        ``(a_start, a_stop, b_start, b_stop)`` batch ranges.
    values : ndarray of shape (a_stop - a_start, b_stop - b_start)
        Tile result, float32 or float64.
    """
    if len(content_hash) != 32:
        raise FormatError(f"content hash must be 32 bytes, got {len(content_hash)}")
    a0, a1, b0, b1 = coords
    if values.shape != (a1 - a0, b1 - b0):
        raise FormatError(
            f"tile shape {values.shape} inconsistent with coords {coords}"
        )
    tag = _dtype_tag(values)
    body = b"".join(
        [
            b"CKTL",
            struct.pack("<I", FORMAT_VERSION),
            content_hash,
            struct.pack("<4I", a0, a1, b0, b1),
            struct.pack("<B", tag),
            np.ascontiguousarray(values, dtype=_DTYPE_TAGS[tag]).tobytes(),
        ]
    )
    _atomic_write(path, body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def read_tile(path, expect_hash: bytes | None = None):
    """Read a cached tile.

    Parameters
    ----------
    path : path-like
    expect_hash : bytes, optional
        When given, the stored content hash must match.

    Returns
    -------
    coords : tuple of int
        ``(a_start, a_stop, b_start, b_stop)``.
    values : ndarray
        The tile payload.

    Raises
    ------
    FormatError
        Bad magic, version, size, or hash mismatch.
    ChecksumError
        Stored CRC does not match.
    """
    data = Path(path).read_bytes()
    _check_magic(data, b"CKTL", path)
    body = _check_crc(data, path)
    header = struct.Struct("<I")
    (version,) = header.unpack_from(body, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    stored_hash = body[8:40]
    if expect_hash is not None and stored_hash != expect_hash:
        raise FormatError(f"{path}: content hash mismatch")
    a0, a1, b0, b1 = struct.unpack_from("<4I", body, 40)
    (tag,) = struct.unpack_from("<B", body, 56)
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"{path}: unknown dtype tag {tag}")
    dtype = _DTYPE_TAGS[tag]
    payload = body[57:]
    count = (a1 - a0) * (b1 - b0)
    if len(payload) != count * dtype.itemsize:
        raise FormatError(f"{path}: payload size mismatch")
    values = np.frombuffer(payload, dtype=dtype).reshape(a1 - a0, b1 - b0).copy()
    return (a0, a1, b0, b1), values


# ---------------------------------------------------------------------------
# CKGM: a full Gram matrix with example ids
# ---------------------------------------------------------------------------

def write_gram(path, values: np.ndarray, row_ids, col_ids,
               symmetric: bool, content_hash: bytes = b"\x00" * 32) -> None:
    """Persist a Gram matrix with its example id lists.

    Parameters
    ----------
    path : path-like
    values : ndarray of shape (n_rows, n_cols)
    row_ids, col_ids : sequence of int
        Example indices labeling rows and columns.
    symmetric : bool
        Whether rows and columns reference the same examples.
    content_hash : bytes, default zeros
        32-byte provenance hash.
    """
    values = np.asarray(values)
    row_ids = np.asarray(row_ids, dtype="<u4")
    col_ids = np.asarray(col_ids, dtype="<u4")
    if values.shape != (row_ids.size, col_ids.size):
        raise FormatError(
            f"gram shape {values.shape} inconsistent with id counts "
            f"({row_ids.size}, {col_ids.size})"
        )
    if len(content_hash) != 32:
        raise FormatError("content hash must be 32 bytes")
    tag = _dtype_tag(values)
    body = b"".join(
        [
            b"CKGM",
            struct.pack("<I", FORMAT_VERSION),
            content_hash,
            struct.pack("<II", row_ids.size, col_ids.size),
            struct.pack("<BB", int(bool(symmetric)), tag),
            row_ids.tobytes(),
            col_ids.tobytes(),
            np.ascontiguousarray(values, dtype=_DTYPE_TAGS[tag]).tobytes(),
        ]
    )
    _atomic_write(path, body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def read_gram(path):
    """Read a CKGM file.

    Returns
    -------
    values : ndarray of shape (n_rows, n_cols)
    row_ids : ndarray of int
    col_ids : ndarray of int
    symmetric : bool
    content_hash : bytes
    """
    data = Path(path).read_bytes()
    _check_magic(data, b"CKGM", path)
    body = _check_crc(data, path)
    (version,) = struct.unpack_from("<I", body, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    content_hash = body[8:40]
    n_rows, n_cols = struct.unpack_from("<II", body, 40)
    sym_flag, tag = struct.unpack_from("<BB", body, 48)
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"{path}: unknown dtype tag {tag}")
    offset = 50
    row_ids = np.frombuffer(body, dtype="<u4", count=n_rows, offset=offset)
    offset += 4 * n_rows
    col_ids = np.frombuffer(body, dtype="<u4", count=n_cols, offset=offset)
    offset += 4 * n_cols
    dtype = _DTYPE_TAGS[tag]
    expected = n_rows * n_cols * dtype.itemsize
    payload = body[offset:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload size mismatch")
    values = np.frombuffer(payload, dtype=dtype).reshape(n_rows, n_cols).copy()
    return values, row_ids.astype(np.int64), col_ids.astype(np.int64), bool(sym_flag), content_hash


# ---------------------------------------------------------------------------
# CKRM: fitted ridge model coefficients
# ---------------------------------------------------------------------------

def write_model(path, alpha: np.ndarray, lam: float, tilt: float) -> None:
    """Persist ridge coefficients with their hyperparameters.

    Parameters
    ----------
    path : path-like
    alpha : ndarray of shape (N, C)
        Dual coefficients.
    lam : float
        Regularization strength.
    tilt : float
        Leave-one-out tilt parameter (0 when untilted).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2:
        raise FormatError(f"alpha must be rank 2, got rank {alpha.ndim}")
    n, c = alpha.shape
    body = b"".join(
        [
            b"CKRM",
            struct.pack("<dd", float(lam), float(tilt)),
            struct.pack("<II", n, c),
            np.ascontiguousarray(alpha, dtype="<f8").tobytes(),
        ]
    )
    _atomic_write(path, body)


def read_model(path):
    """Read a CKRM file.

    Returns
    -------
    alpha : ndarray of shape (N, C), float64
    lam : float
    tilt : float
    """
    data = Path(path).read_bytes()
    _check_magic(data, b"CKRM", path)
    lam, tilt = struct.unpack_from("<dd", data, 4)
    n, c = struct.unpack_from("<II", data, 20)
    payload = data[28:]
    if len(payload) != n * c * 8:
        raise FormatError(f"{path}: payload size mismatch")
    alpha = np.frombuffer(payload, dtype="<f8").reshape(n, c).copy()
    return alpha, lam, tilt
