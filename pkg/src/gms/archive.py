"""The GMST tensor archive: named little-endian float tensors plus a JSON metadata map.

Layout::

    b"GMST" | version: u32 LE | header_len: u64 LE | header (UTF-8 JSON) | payload

The header is canonical JSON (sorted keys, no whitespace) of the form
``{"metadata": {...}, "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}``.
Tensors are stored sorted by name, offsets are relative to the payload start
and aligned to 8 bytes, and the gaps are zero-filled.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Union

import numpy as np

from .errors import ArchiveCorruptionError, ArchiveFormatError, ArchiveVersionError, UsageError
from .tensor import Tensor

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping

    from typing_extensions import TypeAlias

    TensorLike: TypeAlias = Union[Tensor, np.ndarray]

log = logging.getLogger(__name__)

MAGIC = b"GMST"
VERSION = 1
ALIGNMENT = 8
_PREAMBLE = struct.Struct("<4sIQ")
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass
class TensorEntry:
    """One row of the archive's tensor table."""

    name: str
    dtype: str
    shape: tuple[int, ...]
    offset: int
    nbytes: int

    def to_dict(self) -> dict[str, Any]:
        """Return the header representation."""
        return {
            "name": self.name,
            "dtype": self.dtype,
            "shape": list(self.shape),
            "offset": self.offset,
            "nbytes": self.nbytes,
        }


@dataclass
class ArchiveHeader:
    """The decoded header of an archive."""

    version: int
    tensors: list[TensorEntry] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-compatible representation (used by ``gms inspect-archive``)."""
        return {"version": self.version, "tensors": [t.to_dict() for t in self.tensors], "metadata": self.metadata}


@dataclass
class Archive:
    """Tensors and metadata read from an archive."""

    tensors: dict[str, np.ndarray]
    metadata: dict[str, Any]


def _dtype_tag(array: np.ndarray, name: str) -> str:
    if array.dtype == np.float32:
        return "f32"
    if array.dtype == np.float64:
        return "f64"
    msg = f"Tensor {name!r} has unsupported element type {array.dtype}; only float32 and float64 can be archived."
    raise UsageError(msg)


def _align(n: int) -> int:
    return -(-n // ALIGNMENT) * ALIGNMENT


def encode_archive(
    tensors: Mapping[str, TensorLike] | Iterable[tuple[str, TensorLike]], metadata: Mapping[str, Any] | None = None
) -> bytes:
    """Serialize tensors and metadata into archive bytes.

    Args:
        tensors: Named tensors, as a mapping or as ``(name, tensor)`` pairs.
        metadata: JSON-serializable metadata.

    Returns:
        The archive contents.
    """
    items = list(tensors.items()) if hasattr(tensors, "items") else list(tensors)
    arrays: dict[str, np.ndarray] = {}
    for name, value in items:
        if not isinstance(name, str) or not name:
            msg = "Archive tensor names must be non-empty strings."
            raise UsageError(msg)
        if name in arrays:
            msg = f"Duplicate tensor name {name!r} in archive."
            raise UsageError(msg)
        arrays[name] = value.data if isinstance(value, Tensor) else np.asarray(value)

    entries: list[TensorEntry] = []
    chunks: list[bytes] = []
    cursor = 0
    for name in sorted(arrays):
        array = arrays[name]
        tag = _dtype_tag(array, name)
        raw = np.ascontiguousarray(array, dtype=_DTYPES[tag]).tobytes()
        offset = _align(cursor)
        chunks.append(b"\0" * (offset - cursor))
        chunks.append(raw)
        entries.append(TensorEntry(name, tag, tuple(int(s) for s in array.shape), offset, len(raw)))
        cursor = offset + len(raw)

    header = {"metadata": dict(metadata or {}), "tensors": [e.to_dict() for e in entries]}
    body = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, VERSION, len(body)) + body + b"".join(chunks)


def write_archive(
    path: str | Path,
    tensors: Mapping[str, TensorLike] | Iterable[tuple[str, TensorLike]],
    metadata: Mapping[str, Any] | None = None,
) -> None:
    """Write an archive file.

    Raises:
        UsageError: If names are empty or duplicated.
        OSError: If the file cannot be written.
    """
    data = encode_archive(tensors, metadata)
    path = Path(path)
    path.write_bytes(data)
    log.debug("Wrote archive %s (%d bytes)", path, len(data))


def _parse_header(data: bytes) -> tuple[ArchiveHeader, int]:
    if len(data) < _PREAMBLE.size or data[:4] != MAGIC:
        msg = "Not a GMST archive (bad magic bytes)."
        raise ArchiveFormatError(msg)
    _, version, header_len = _PREAMBLE.unpack_from(data)
    if version > VERSION:
        msg = f"Archive format version {version} is newer than the supported version {VERSION}."
        raise ArchiveVersionError(msg)
    if version < 1:
        msg = f"Invalid archive format version {version}."
        raise ArchiveFormatError(msg)
    start = _PREAMBLE.size + header_len
    if start > len(data):
        msg = f"Archive header is truncated: expected at least {start} bytes, the file has {len(data)}."
        raise ArchiveCorruptionError(msg)
    try:
        raw = json.loads(data[_PREAMBLE.size : start].decode("utf-8"))
        entries = [
            TensorEntry(
                str(t["name"]), str(t["dtype"]), tuple(int(s) for s in t["shape"]), int(t["offset"]), int(t["nbytes"])
            )
            for t in raw["tensors"]
        ]
        metadata = dict(raw["metadata"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        msg = f"Archive header is not valid: {exc}"
        raise ArchiveCorruptionError(msg) from exc
    return ArchiveHeader(version, entries, metadata), start


def _validate(header: ArchiveHeader, payload_len: int) -> None:
    end = 0
    seen: set[str] = set()
    for entry in header.tensors:
        if entry.dtype not in _DTYPES:
            msg = f"Tensor {entry.name!r} has unknown dtype {entry.dtype!r}."
            raise ArchiveCorruptionError(msg)
        if entry.name in seen:
            msg = f"Tensor {entry.name!r} appears twice in the archive header."
            raise ArchiveCorruptionError(msg)
        seen.add(entry.name)
        expected = _DTYPES[entry.dtype].itemsize * math.prod(entry.shape)
        if entry.nbytes != expected or any(s < 0 for s in entry.shape):
            msg = f"Tensor {entry.name!r}: nbytes {entry.nbytes} does not match shape {entry.shape} ({expected} bytes)."
            raise ArchiveCorruptionError(msg)
        if entry.offset % ALIGNMENT != 0:
            msg = f"Tensor {entry.name!r}: offset {entry.offset} is not {ALIGNMENT}-byte aligned."
            raise ArchiveCorruptionError(msg)
        if entry.offset < end:
            msg = f"Tensor {entry.name!r}: offset {entry.offset} overlaps the previous tensor ending at {end}."
            raise ArchiveCorruptionError(msg)
        end = entry.offset + entry.nbytes
        if end > payload_len:
            msg = (
                f"Archive payload is truncated: tensor {entry.name!r} needs {end} payload bytes, "
                f"only {payload_len} present."
            )
            raise ArchiveCorruptionError(msg)


def decode_archive(data: bytes) -> Archive:
    """Parse archive bytes, validating magic, version, alignment and bounds first."""
    header, start = _parse_header(data)
    payload = memoryview(data)[start:]
    _validate(header, len(payload))
    tensors = {
        entry.name: np.frombuffer(payload[entry.offset : entry.offset + entry.nbytes], dtype=_DTYPES[entry.dtype])
        .reshape(entry.shape)
        .astype(_DTYPES[entry.dtype].newbyteorder("="))
        for entry in header.tensors
    }
    return Archive(tensors, header.metadata)


def read_archive(path: str | Path) -> Archive:
    """Read and validate an archive file.

    Raises:
        ArchiveFormatError: If the magic bytes are wrong.
        ArchiveVersionError: If the format version is newer than supported.
        ArchiveCorruptionError: If the header or payload is inconsistent.
    """
    return decode_archive(Path(path).read_bytes())


def read_archive_header(path: str | Path) -> ArchiveHeader:
    """Read and validate only the header of an archive file."""
    data = Path(path).read_bytes()
    header, start = _parse_header(data)
    _validate(header, len(data) - start)
    return header
