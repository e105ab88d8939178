"""Binary tensor checkpoints.

Layout: b"DDL1", u32 version, u32 count, then per tensor u16 name length,
UTF-8 name, u8 dtype (0 f32, 1 f64), u8 rank, rank x u32 dims and the
row-major little-endian payload; a trailing u32 CRC32 covers every byte
before it.
"""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from ..diffusion import SampleSet

MAGIC = b"DDL1"
VERSION = 1
SEED_RANGE_KEY = "__seed_range__"
SAMPLES_KEY = "__samples__"
NFE_KEY = "__nfe__"
LABELS_KEY = "__labels__"
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(Exception):
    code = 1


class BadMagicError(CheckpointError):
    code = 10


class VersionError(CheckpointError):
    code = 11


class CRCError(CheckpointError):
    code = 12


class FormatError(CheckpointError):
    code = 13


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise FormatError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 255:
            raise FormatError(f"{name}: rank {arr.ndim} too large")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", _DTYPE_CODES[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError("not a DDL1 checkpoint (bad magic)")
    if len(blob) < 16:
        raise CRCError("checkpoint truncated")
    body, tail = blob[:-4], blob[-4:]
    if zlib.crc32(body) != struct.unpack("<I", tail)[0]:
        raise CRCError("checkpoint CRC mismatch (corrupted or truncated)")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off : off + n].decode("utf-8")
            off += n
            code, rank = struct.unpack_from("<BB", body, off)
            off += 2
            dims = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            dt = _CODE_DTYPES[code]
            size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if off + size > len(body):
                raise FormatError(f"{name}: payload runs past end of file")
            out[name] = np.frombuffer(body, dtype=dt, count=size // dt.itemsize, offset=off).reshape(dims).copy()
            off += size
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"malformed checkpoint: {exc}") from exc
    if off != len(body):
        raise FormatError("trailing bytes after last tensor")
    return out


def _tensors_of(obj) -> dict[str, np.ndarray]:
    if isinstance(obj, SampleSet):
        t = {
            SAMPLES_KEY: obj.samples,
            SEED_RANGE_KEY: np.array([obj.seed_lo, obj.seed_hi], dtype=np.float64),
            NFE_KEY: np.array(float(obj.nfe)),
        }
        if obj.labels is not None:
            t[LABELS_KEY] = np.asarray(obj.labels, dtype=np.float64)
        return t
    if hasattr(obj, "state_dict"):
        return obj.state_dict()
    if isinstance(obj, dict):
        return obj
    raise TypeError(f"cannot checkpoint {type(obj).__name__}")


def save_checkpoint(obj, path) -> None:
    """Write a model (its state dict), a SampleSet, or a name -> array dict."""
    blob = encode(_tensors_of(obj))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())


def load_checkpoint(path, into=None):
    """Load tensors; a SampleSet is rebuilt when present, and ``into`` receives a state dict."""
    tensors = load_tensors(path)
    if SEED_RANGE_KEY in tensors:
        lo, hi = (int(v) for v in tensors[SEED_RANGE_KEY])
        labels = tensors.get(LABELS_KEY)
        return SampleSet(
            tensors[SAMPLES_KEY], lo, hi, int(tensors[NFE_KEY]), None if labels is None else labels.astype(np.int64)
        )
    if into is not None:
        into.load_state_dict(tensors)
        return into
    return tensors
