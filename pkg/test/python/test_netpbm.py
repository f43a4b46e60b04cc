"""Test the PPM/PGM codec."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from gms.errors import ParseError, ValidationError
from gms.netpbm import decode_netpbm, encode_netpbm, parse_header, read_pgm, read_ppm, to_uint8, write_ppm

if TYPE_CHECKING:
    from pathlib import Path


def test_header_with_comments() -> None:
    """Test that comments and arbitrary whitespace are skipped."""
    data = b"P6\n# made by hand\n3   2\n# another\n255\n" + bytes(range(18))
    header = parse_header(data)
    assert (header.magic, header.width, header.height, header.maxval) == ("P6", 3, 2, 255)
    raster = decode_netpbm(data)
    assert raster.shape == (2, 3, 3)
    assert raster[1, 2, 2] == 17


def test_ppm_file_round_trip(tmp_path: Path) -> None:
    """Test writing and reading a colour image with a comment."""
    raster = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    path = tmp_path / "x.ppm"
    write_ppm(path, raster, comment="two\nlines")
    assert path.read_bytes().startswith(b"P6\n# two\n# lines\n7 5\n255\n")
    np.testing.assert_array_equal(read_ppm(path), raster)


@pytest.mark.parametrize(
    ("data", "fragment", "offset"),
    [
        (b"P3\n1 1\n255\n", "magic number", 0),
        (b"P5\nx 1\n255\n\0", "width", 3),
        (b"P5\n1 1\n65535\n\0\0", "maxval 255", 7),
        (b"P5\n0 1\n255\n", "positive", 7),
        (b"P5\n2 2\n255\n\0\0", "Truncated", 13),
        (b"P5\n1 1\n255", "whitespace", 10),
    ],
)
def test_malformed_headers(data: bytes, fragment: str, offset: int) -> None:
    """Test the error messages and offsets of malformed files."""
    with pytest.raises(ParseError, match=fragment) as info:
        decode_netpbm(data)
    assert info.value.offset == offset
    assert f"offset {offset}" in str(info.value)


def test_expected_kind(tmp_path: Path) -> None:
    """Test that reading a PGM where a PPM is expected fails."""
    path = tmp_path / "g.pgm"
    path.write_bytes(encode_netpbm(np.zeros((2, 2), dtype=np.uint8)))
    assert read_pgm(path).shape == (2, 2)
    with pytest.raises(ParseError, match="Expected a P6"):
        read_ppm(path)


def test_encode_validation() -> None:
    """Test the raster checks of the encoder."""
    with pytest.raises(ValidationError, match="uint8"):
        encode_netpbm(np.zeros((2, 2)))
    with pytest.raises(ValidationError, match="shape"):
        encode_netpbm(np.zeros((2, 2, 4), dtype=np.uint8))


def test_to_uint8() -> None:
    """Test quantization and clipping."""
    np.testing.assert_array_equal(to_uint8(np.array([-0.5, 0.0, 0.5, 1.0, 2.0])), [0, 0, 128, 255, 255])
