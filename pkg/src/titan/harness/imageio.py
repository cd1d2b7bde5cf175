"""Image file I/O and built-in test images.

Supported on disk: 8-bit grayscale PGM (P5) and 8-bit RGB PNG. Loading
scales to [0, 1] by /255; saving rounds to nearest byte, so a save/load
round trip is exact up to quantization.

`builtin:` pseudo-paths resolve without touching the filesystem:
``builtin:phantom`` is the procedural head phantom, ``builtin:camera``
and ``builtin:astronaut`` are the classic public test images bundled
with scikit-image (optional dependency).
"""

from __future__ import annotations

import os

import numpy as np

from ..operators import box_downsample
from .phantom import phantom


class UnsupportedImageError(ValueError):
    pass


def load_image(path: str) -> np.ndarray:
    """Read a PGM (P5) or RGB PNG file as float64 in [0, 1]."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"image not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return _read_pgm(path)
    from PIL import Image

    with Image.open(path) as img:
        if img.format != "PNG":
            raise UnsupportedImageError(f"unsupported image format {img.format!r}")
        if img.mode in ("L", "RGB"):
            arr = np.asarray(img, dtype=np.float64)
        else:
            raise UnsupportedImageError(
                f"unsupported bit depth / mode {img.mode!r} (need 8-bit L or RGB)"
            )
    return arr / 255.0


def _read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    magic, width, height, maxval = fields
    if magic != b"P5":
        raise UnsupportedImageError(f"unsupported PNM magic {magic!r}")
    if int(maxval) != 255:
        raise UnsupportedImageError(f"unsupported PGM bit depth (maxval {int(maxval)})")
    w, h = int(width), int(height)
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raw.reshape(h, w).astype(np.float64) / 255.0


def save_image(arr: np.ndarray, path: str):
    """Write grayscale as PGM (P5) or RGB as PNG, rounding to nearest byte."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    quantized = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.ndim == 2:
        if not path.endswith(".pgm"):
            raise UnsupportedImageError("grayscale images are saved as .pgm")
        h, w = quantized.shape
        with open(path, "wb") as fh:
            fh.write(b"P5\n" + f"{w} {h}\n255\n".encode())
            fh.write(quantized.tobytes())
    elif arr.ndim == 3 and arr.shape[2] == 3:
        if not path.endswith(".png"):
            raise UnsupportedImageError("RGB images are saved as .png")
        from PIL import Image

        Image.fromarray(quantized, mode="RGB").save(path, format="PNG")
    else:
        raise UnsupportedImageError(f"cannot save image of shape {arr.shape}")


BUILTIN_IMAGES = ("phantom", "camera", "astronaut")


def resolve_image(spec: str, size: int | None) -> np.ndarray:
    """Materialize a config `image` entry: a path or a builtin: name.

    When `size` is given the source is box-downsampled to size x size,
    which requires the source side to be a multiple of the target side.
    """
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name == "phantom":
            return phantom(size or 128)
        if name in ("camera", "astronaut"):
            try:
                import skimage.data
            except ImportError as exc:  # pragma: no cover
                raise UnsupportedImageError(
                    f"builtin:{name} needs scikit-image; install it or use a file path"
                ) from exc
            raw = getattr(skimage.data, name)()
            img = np.asarray(raw, dtype=np.float64) / 255.0
        else:
            raise UnsupportedImageError(
                f"unknown builtin image {name!r}; choose from {BUILTIN_IMAGES}"
            )
    else:
        img = load_image(spec)
    if size is not None and (img.shape[0], img.shape[1]) != (size, size):
        if img.shape[0] != img.shape[1]:
            raise UnsupportedImageError(
                f"need a square source to resize, got {img.shape[0]}x{img.shape[1]}"
            )
        if img.shape[0] % size:
            raise UnsupportedImageError(
                f"source side {img.shape[0]} is not a multiple of target {size}"
            )
        img = box_downsample(img, img.shape[0] // size)
    return img
