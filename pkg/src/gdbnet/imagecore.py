"""Image containers and basic raster operations.

Pixel data is stored planar (channel, row, col) as float32 in [0, 1];
quantization to 8-bit happens only when files are read or written.
Binary maps use the convention 1 = text, 0 = background in memory, and
the DIBCO file convention (text black, background white) on disk.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError

__all__ = [
    "RasterImage",
    "BinaryMap",
    "load_image",
    "load_binary_map",
    "save_image",
    "to_grayscale",
    "resize_bilinear",
    "crop",
    "pad_reflect",
]


@dataclass
class RasterImage:
    """Real-valued image, planar (channels, height, width), values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[0] not in (1, 3):
            raise ValueError(f"expected (1|3, H, W) array, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("empty image")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        self.data = arr

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class BinaryMap:
    """Binary mask (height, width); 1 = text, 0 = background."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"expected non-empty (H, W) array, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("binary map values must be exactly 0 or 1")
        self.data = arr.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def _read_pnm_header(buf: io.BufferedReader):
    # P5/P6 headers: tokens separated by whitespace, '#' comments to EOL.
    def token():
        tok = b""
        while True:
            c = buf.read(1)
            if not c:
                raise FormatError("truncated PNM header")
            if c == b"#":
                while c not in (b"\n", b""):
                    c = buf.read(1)
                continue
            if c.isspace():
                if tok:
                    return tok
                continue
            tok += c

    magic = token()
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}")
    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except ValueError as e:
        raise FormatError("malformed PNM header") from e
    if width < 1 or height < 1 or not (0 < maxval <= 255):
        raise FormatError("invalid PNM dimensions or maxval")
    return magic, width, height, maxval


def _load_pnm(path: Path) -> RasterImage:
    with open(path, "rb") as f:
        magic, width, height, maxval = _read_pnm_header(f)
        channels = 1 if magic == b"P5" else 3
        raw = f.read(width * height * channels)
    if len(raw) < width * height * channels:
        raise FormatError("truncated PNM pixel data")
    arr = np.frombuffer(raw, dtype=np.uint8).astype(np.float32) / maxval
    arr = arr.reshape(height, width, channels)
    return RasterImage(np.moveaxis(arr, -1, 0))


def load_image(path) -> RasterImage:
    """Load a PNG or binary PGM/PPM file, normalized to [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    with open(path, "rb") as f:
        head = f.read(2)
    if head in (b"P5", b"P6"):
        return _load_pnm(path)
    if head != b"\x89P":
        raise FormatError(f"unsupported image format in {path}")
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if im.mode in ("P", "RGBA") else "L")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except UnidentifiedImageError as e:
        raise FormatError(f"corrupt PNG file {path}") from e
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = np.moveaxis(arr, -1, 0)
    return RasterImage(arr)


def load_binary_map(path) -> BinaryMap:
    """Load a DIBCO-convention binary file: dark pixels (byte < 128) are text."""
    img = to_grayscale(load_image(path))
    return BinaryMap((img.data[0] < 128 / 255.0).astype(np.uint8))


def _to_bytes(img) -> np.ndarray:
    """8-bit interleaved (H, W, C) view of an image for writing."""
    if isinstance(img, BinaryMap):
        # DIBCO convention: text black, background white.
        return ((1 - img.data) * 255).astype(np.uint8)[..., None]
    arr = np.rint(img.data * 255.0).astype(np.uint8)
    return np.moveaxis(arr, 0, -1)


def save_image(img, path) -> None:
    """Write a PNG or PGM/PPM file; the extension selects the format."""
    path = Path(path)
    data = _to_bytes(img)
    channels = data.shape[-1]
    suffix = path.suffix.lower()
    if suffix == ".png":
        pil = Image.fromarray(data[..., 0] if channels == 1 else data)
        pil.save(path)
    elif suffix in (".pgm", ".ppm"):
        if suffix == ".pgm" and channels != 1:
            raise FormatError("cannot write 3-channel image as PGM")
        if suffix == ".ppm" and channels != 3:
            raise FormatError("cannot write 1-channel image as PPM")
        magic = b"P5" if channels == 1 else b"P6"
        h, w = data.shape[:2]
        with open(path, "wb") as f:
            f.write(magic + b"\n%d %d\n255\n" % (w, h))
            f.write(data.tobytes())
    else:
        raise FormatError(f"unsupported output extension {suffix!r}")


# Rec.601 luma; fixed here since DIBCO distributions do not pin a conversion.
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def to_grayscale(img: RasterImage) -> RasterImage:
    if img.channels == 1:
        return RasterImage(img.data.copy())
    gray = np.tensordot(_LUMA, img.data, axes=(0, 0))
    return RasterImage(np.clip(gray, 0.0, 1.0)[None])


def resize_bilinear(img: RasterImage, out_w: int, out_h: int) -> RasterImage:
    """Bilinear resample with half-pixel-center alignment."""
    if out_w < 1 or out_h < 1:
        raise ValueError("target dimensions must be >= 1")
    if (out_w, out_h) == (img.width, img.height):
        return RasterImage(img.data.copy())

    def src_coords(out_n, in_n):
        scale = in_n / out_n
        x = (np.arange(out_n, dtype=np.float64) + 0.5) * scale - 0.5
        x = np.clip(x, 0.0, in_n - 1)
        lo = np.floor(x).astype(np.int64)
        hi = np.minimum(lo + 1, in_n - 1)
        return lo, hi, (x - lo).astype(np.float32)

    x0, x1, fx = src_coords(out_w, img.width)
    y0, y1, fy = src_coords(out_h, img.height)
    d = img.data
    top = d[:, y0][:, :, x0] * (1 - fx) + d[:, y0][:, :, x1] * fx
    bot = d[:, y1][:, :, x0] * (1 - fx) + d[:, y1][:, :, x1] * fx
    out = top * (1 - fy)[None, :, None] + bot * fy[None, :, None]
    return RasterImage(np.clip(out, 0.0, 1.0))


def crop(img, x: int, y: int, w: int, h: int):
    """Exact sub-rectangle copy; same container type as the input."""
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > img.width or y + h > img.height:
        raise ValueError(f"crop rectangle ({x},{y},{w},{h}) out of bounds "
                         f"for {img.width}x{img.height}")
    if isinstance(img, BinaryMap):
        return BinaryMap(img.data[y:y + h, x:x + w].copy())
    return RasterImage(img.data[:, y:y + h, x:x + w].copy())


def pad_reflect(img, left: int, right: int, top: int, bottom: int):
    """Mirror padding that does not repeat the edge pixel."""
    if min(left, right, top, bottom) < 0:
        raise ValueError("pad amounts must be non-negative")
    if max(left, right) >= img.width or max(top, bottom) >= img.height:
        raise ValueError("pad amount must be smaller than the image dimension")
    if isinstance(img, BinaryMap):
        return BinaryMap(np.pad(img.data, ((top, bottom), (left, right)), mode="reflect"))
    padded = np.pad(img.data, ((0, 0), (top, bottom), (left, right)), mode="reflect")
    return RasterImage(padded)
