"""Binary PPM (P6) and PGM (P5) reading and writing with 8-bit samples."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

MAXVAL = 255
_WHITESPACE = b" \t\r\n\v\f"
_CHANNELS = {b"P5": 1, b"P6": 3}


@dataclass(frozen=True)
class NetpbmHeader:
    """Decoded header fields and where the raster starts."""

    magic: str
    width: int
    height: int
    maxval: int
    payload_offset: int

    @property
    def channels(self) -> int:
        """Samples per pixel."""
        return _CHANNELS[self.magic.encode()]


def _skip(data: bytes, pos: int) -> int:
    """Skip whitespace and ``#`` comments."""
    while pos < len(data):
        byte = data[pos : pos + 1]
        if byte == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif byte in _WHITESPACE:
            pos += 1
        else:
            break
    return pos


def _integer(data: bytes, pos: int, field: str) -> tuple[int, int]:
    pos = _skip(data, pos)
    start = pos
    while pos < len(data) and data[pos : pos + 1].isdigit():
        pos += 1
    if pos == start:
        msg = f"Expected the {field} as a decimal integer"
        raise ParseError(msg, start)
    return int(data[start:pos]), pos


def parse_header(data: bytes) -> NetpbmHeader:
    """Parse the header of a binary PPM or PGM file.

    Raises:
        ParseError: If the header is malformed or uses a maxval other than 255.
    """
    magic = data[:2]
    if magic not in _CHANNELS:
        msg = f"Unknown magic number {magic!r}; expected b'P5' or b'P6'"
        raise ParseError(msg, 0)
    width, pos = _integer(data, 2, "width")
    height, pos = _integer(data, pos, "height")
    maxval_offset = _skip(data, pos)
    maxval, pos = _integer(data, pos, "maxval")
    if width < 1 or height < 1:
        msg = f"Image dimensions must be positive, got {width}x{height}"
        raise ParseError(msg, maxval_offset)
    if maxval != MAXVAL:
        msg = f"Only maxval {MAXVAL} is supported, got {maxval}"
        raise ParseError(msg, maxval_offset)
    if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
        msg = "Expected a single whitespace byte after the maxval"
        raise ParseError(msg, pos)
    return NetpbmHeader(magic.decode(), width, height, maxval, pos + 1)


def decode_netpbm(data: bytes, expected: str | None = None) -> np.ndarray:
    """Decode P5/P6 bytes into ``[H, W]`` or ``[H, W, 3]`` uint8 samples.

    Args:
        data: The file contents.
        expected: Optionally require the magic ``"P5"`` or ``"P6"``.

    Returns:
        The raster.
    """
    header = parse_header(data)
    if expected is not None and header.magic != expected:
        msg = f"Expected a {expected} file, found {header.magic}"
        raise ParseError(msg, 0)
    needed = header.width * header.height * header.channels
    available = len(data) - header.payload_offset
    if available < needed:
        msg = f"Truncated {header.magic} payload: expected {needed} bytes, found {available}"
        raise ParseError(msg, len(data))
    raster = np.frombuffer(data, dtype=np.uint8, count=needed, offset=header.payload_offset)
    shape = (header.height, header.width) if header.channels == 1 else (header.height, header.width, 3)
    return raster.reshape(shape).copy()


def encode_netpbm(raster: np.ndarray, comment: str | None = None) -> bytes:
    """Encode an ``[H, W]`` (P5) or ``[H, W, 3]`` (P6) uint8 raster."""
    if raster.dtype != np.uint8:
        msg = f"Netpbm rasters must be uint8, got {raster.dtype}."
        raise ValidationError(msg)
    if raster.ndim == 2:
        magic = "P5"
    elif raster.ndim == 3 and raster.shape[2] == 3:
        magic = "P6"
    else:
        msg = f"Expected a [H, W] or [H, W, 3] raster, got shape {raster.shape}."
        raise ValidationError(msg)
    lines = [magic]
    if comment:
        lines.extend(f"# {line}" for line in comment.splitlines())
    lines.append(f"{raster.shape[1]} {raster.shape[0]}")
    lines.append(str(MAXVAL))
    header = ("\n".join(lines) + "\n").encode("ascii")
    return header + np.ascontiguousarray(raster).tobytes()


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a P6 file as ``[H, W, 3]`` uint8."""
    return decode_netpbm(Path(path).read_bytes(), "P6")


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a P5 file as ``[H, W]`` uint8."""
    return decode_netpbm(Path(path).read_bytes(), "P5")


def write_ppm(path: str | Path, raster: np.ndarray, comment: str | None = None) -> None:
    """Write a ``[H, W, 3]`` uint8 raster as P6."""
    Path(path).write_bytes(encode_netpbm(raster, comment))
    log.debug("Wrote %s", path)


def write_pgm(path: str | Path, raster: np.ndarray, comment: str | None = None) -> None:
    """Write a ``[H, W]`` uint8 raster as P5."""
    Path(path).write_bytes(encode_netpbm(raster, comment))
    log.debug("Wrote %s", path)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to 8-bit samples (round half to even)."""
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * MAXVAL), 0, MAXVAL).astype(np.uint8)
