"""Binary PGM (P5) / PPM (P6) codec, maxval 255."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import PNMParseError

_WS = b" \t\n\r\v\f"


@dataclass
class ImageBuffer:
    """8-bit image, row-major, samples shaped (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxWx1 or HxWx3, got {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"image samples must be uint8, got {px.dtype}")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def __eq__(self, other) -> bool:
        return isinstance(other, ImageBuffer) and np.array_equal(self.pixels, other.pixels)


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        ch = data[pos : pos + 1]
        if ch in (b"",) or ch not in _WS and ch != b"#":
            break
        if ch == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            pos += 1
    start = pos
    while pos < n and data[pos : pos + 1] not in _WS and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PNMParseError("unexpected end of header", pos)
    return data[start:pos], pos


def decode_pnm(data: bytes) -> ImageBuffer:
    if data[:2] not in (b"P5", b"P6"):
        raise PNMParseError(f"unsupported magic {data[:2]!r}; expected P5 or P6", 0)
    channels = 1 if data[:2] == b"P5" else 3
    pos = 2
    if pos >= len(data) or data[pos : pos + 1] not in _WS and data[pos : pos + 1] != b"#":
        raise PNMParseError("missing whitespace after magic number", pos)
    values = []
    for field_name in ("width", "height", "maxval"):
        tok_start = pos
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise PNMParseError(f"invalid {field_name} {tok!r}", tok_start)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise PNMParseError(f"image extents must be positive, got {width}x{height}", pos)
    if maxval != 255:
        raise PNMParseError(f"maxval must be 255, got {maxval}", pos)
    if pos >= len(data) or data[pos : pos + 1] not in _WS:
        raise PNMParseError("missing single whitespace before raster", pos)
    pos += 1
    need = width * height * channels
    have = len(data) - pos
    if have < need:
        raise PNMParseError(f"truncated raster: need {need} bytes, found {have}", len(data))
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(height, width, channels).copy()
    return ImageBuffer(px)


def encode_pnm(img: ImageBuffer) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode()
    return header + np.ascontiguousarray(img.pixels).tobytes()


def load_pnm(path) -> ImageBuffer:
    return decode_pnm(Path(path).read_bytes())


def save_pnm(path, img: ImageBuffer) -> None:
    Path(path).write_bytes(encode_pnm(img))
