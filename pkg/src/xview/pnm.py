"""Binary portable pixmap IO (P6 color, P5 grayscale), maxval 255.

Float images use [0, 1]; files store 8-bit samples, so a write/read
round trip quantizes to 1/255 steps.
"""

import re
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_header(buf: bytes):
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = _TOKEN.match(buf, pos)
        if not m:
            raise FormatError("truncated pixmap header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = tokens
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported pixmap magic {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError("non-numeric pixmap header fields") from exc
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    return magic.decode(), w, h, pos + 1  # header ends with one whitespace byte


def read_pnm(path) -> np.ndarray:
    """Read P5 or P6. Returns (H, W) for P5 or (3, H, W) for P6,
    float64 in [0, 1]."""
    buf = Path(path).read_bytes()
    magic, w, h, offset = _read_header(buf)
    channels = 3 if magic == "P6" else 1
    need = w * h * channels
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise FormatError(
            f"pixmap payload truncated: expected {need} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    if magic == "P5":
        return arr.reshape(h, w)
    return arr.reshape(h, w, 3).transpose(2, 0, 1)


def write_pnm(path, image: np.ndarray) -> None:
    """Write (H, W) as P5 or (3, H, W) as P6 from float values in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        magic, h, w = "P5", *image.shape
        flat = image
    elif image.ndim == 3 and image.shape[0] == 3:
        magic = "P6"
        _, h, w = image.shape
        flat = image.transpose(1, 2, 0)
    else:
        raise DataError(f"expected (H, W) or (3, H, W) image, got shape {image.shape}")
    if flat.min() < 0.0 or flat.max() > 1.0:
        raise DataError("pixel values must lie in [0, 1]")
    data = np.round(flat * 255.0).astype(np.uint8)
    header = f"{magic}\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + data.tobytes())


def quantize01(image: np.ndarray) -> np.ndarray:
    """Apply the 8-bit round trip in memory: the values a written file
    would read back."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
