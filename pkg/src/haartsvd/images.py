"""Image files: PNG through Pillow, binary PPM/PGM handled here.

Pixels are loaded as float arrays on the ``[0, 255]`` scale whatever the
stored bit depth; exports are clamped, rounded half-to-even and written as
8-bit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pnm_tokens(raw: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        tokens.append(int(raw[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pnm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    (w, h, maxval), start = _pnm_tokens(raw, 3)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    c = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * c
    if len(raw) - start < n * dtype.itemsize:
        raise ValueError(f"{path}: truncated raster")
    data = np.frombuffer(raw, dtype=dtype, count=n, offset=start).astype(float)
    img = data.reshape(h, w, c) * (255.0 / maxval)
    return img[:, :, 0] if c == 1 else img


def write_pnm(path, image: np.ndarray) -> None:
    img = to_uint8(image)
    if img.ndim == 2 or img.shape[2] == 1:
        magic, img = b"P5", img.reshape(img.shape[0], img.shape[1])
    elif img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"PNM cannot store {img.shape[2]} channels")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(np.asarray(image, dtype=float), 0.0, 255.0)).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Load PNG/PPM/PGM as float ``[0, 255]``; RGBA drops alpha."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head in (b"P5", b"P6"):
        return read_pnm(path)
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            return np.asarray(im, dtype=float) * (255.0 / 65535.0)
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=float)


def write_image(path, image: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        write_pnm(path, image)
        return
    from PIL import Image

    img = to_uint8(image)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 3 and img.shape[2] != 3:
        raise ValueError(f"cannot write {img.shape[2]}-channel image as {path.suffix}")
    Image.fromarray(img).save(path)
