"""
Image files: binary PPM (P6, 8-bit) natively, PNG through Pillow.

Images in memory are float64 arrays of shape (H, W, 3) with values in [0, 1].
"""

import io
import os
import re

import numpy as np

from splat_autolabel.errors import IoFailure, MalformedHeader, ShapeMismatch
from splat_autolabel.util import atomic_write

_HEADER = re.compile(rb"\AP6(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def _check_image(image: np.ndarray) -> np.ndarray:
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:  # noqa: PLR2004
        a = np.repeat(a[:, :, None], 3, axis=2)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:  # noqa: PLR2004
        msg = f"expected an H x W x 3 image, got shape {a.shape}"
        raise ShapeMismatch(msg)
    return a


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(_check_image(image), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(image: np.ndarray) -> bytes:
    data = to_bytes(image)
    h, w, _ = data.shape
    return b"P6\n%d %d\n255\n" % (w, h) + data.tobytes()


def decode_ppm(data: bytes, name: str = "<ppm>") -> np.ndarray:
    match = _HEADER.match(data)
    if match is None:
        msg = f"{name}: not a binary PPM (P6) file"
        raise MalformedHeader(msg)
    w, h, maxval = (int(g) for g in match.groups())
    if w < 1 or h < 1 or not 0 < maxval < 256:  # noqa: PLR2004
        msg = f"{name}: unsupported PPM header (size {w}x{h}, maxval {maxval})"
        raise MalformedHeader(msg)
    body = data[match.end() :]
    expected = w * h * 3
    if len(body) < expected:
        msg = f"{name}: truncated, expected {expected} bytes of pixels, found {len(body)}"
        raise MalformedHeader(msg)
    pixels = np.frombuffer(body[:expected], dtype=np.uint8).reshape(h, w, 3)
    return pixels.astype(np.float64) / maxval


def _pillow():  # type: ignore[no-untyped-def]
    try:
        from PIL import Image
    except ImportError as e:
        msg = "PNG support needs Pillow; install splat-autolabel[png]"
        raise IoFailure(msg) from e
    return Image


def write_image(path: str, image: np.ndarray) -> None:
    """
    Write an image; the format follows the extension (.png, anything else is PPM).
    """
    if path.lower().endswith(".png"):
        buffer = io.BytesIO()
        _pillow().fromarray(to_bytes(image), "RGB").save(buffer, format="PNG")
        contents = buffer.getvalue()
    else:
        contents = encode_ppm(image)
    try:
        atomic_write(contents, path)
    except OSError as e:
        msg = f'cannot write image "{path}": {e.strerror or e}'
        raise IoFailure(msg) from e


def read_image(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        msg = f'cannot read image "{path}": {e.strerror or e}'
        raise IoFailure(msg) from e
    if data.startswith(b"\x89PNG"):
        with _pillow().open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return decode_ppm(data, os.path.basename(path))
