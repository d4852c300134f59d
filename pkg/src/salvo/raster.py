"""Image decoding/encoding, float rasters, and color-space conversions.

Images are held as ``float64`` arrays of shape ``(height, width, channels)``
with RGB values in ``[0, 1]``. All conversions start from RGB; the inverse
helpers (``lab_to_rgb`` etc.) exist so round trips can be verified.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from PIL import Image as _PILImage
from PIL import UnidentifiedImageError

from .errors import (
    DecodeError,
    InvalidInputError,
    MapFormatError,
    MapRangeError,
    UnsupportedFormatError,
)

if TYPE_CHECKING:
    from .params import ResolvedParams

F32RAW_MAGIC = b"SALF"
_F32RAW_HEADER = struct.Struct("<4sIII")  # magic, height, width, reserved

_SUPPORTED_SUFFIXES = {".png", ".jpg", ".jpeg"}
_SUPPORTED_PIL_FORMATS = {"PNG", "JPEG"}


class ColorSpace(Enum):
    """Color spaces an image can be converted to before a model runs.

    ``DEFAULT`` is a configuration alias resolved against a model's preferred
    space; no decoded image ever carries it.
    """

    RGB = "RGB"
    GRAY = "gray"
    YCBCR = "YCbCr"
    LAB = "LAB"
    HSV = "HSV"
    DEFAULT = "default"


@dataclass(frozen=True)
class Image:
    """A decoded raster: ``(H, W, C)`` float data in a declared color space."""

    data: np.ndarray
    space: ColorSpace

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidInputError(f"image data must be 3-D (H, W, C), got shape {self.data.shape}")
        h, w, c = self.data.shape
        if h < 1 or w < 1:
            raise InvalidInputError(f"image dimensions must be positive, got {h}x{w}")
        if c not in (1, 3):
            raise InvalidInputError(f"image must have 1 or 3 channels, got {c}")
        if self.space is ColorSpace.DEFAULT:
            raise InvalidInputError("no image may carry the 'default' color-space alias")
        if self.space is ColorSpace.GRAY and c != 1:
            raise InvalidInputError("gray images must have exactly 1 channel")
        if self.space is ColorSpace.RGB:
            if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
                raise InvalidInputError("RGB image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class SaliencyMap:
    """Single-channel float raster plus provenance of how it was produced."""

    data: np.ndarray
    model_name: str = ""
    resolved_params: "ResolvedParams | None" = None

    def __post_init__(self):
        if self.data.ndim != 2:
            raise InvalidInputError(f"saliency map must be 2-D, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise InvalidInputError("saliency map contains NaN or Inf values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def load_image(path: str | Path) -> Image:
    """Decode a PNG or JPEG file into an RGB image with values in [0, 1].

    Grayscale sources are expanded to three identical channels; alpha
    channels are dropped without compositing.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image file: {path}")
    if path.suffix.lower() not in _SUPPORTED_SUFFIXES:
        raise UnsupportedFormatError(
            f"unsupported image extension {path.suffix!r} for {path} (expected .png, .jpg, or .jpeg)"
        )
    try:
        with _PILImage.open(path) as im:
            if im.format not in _SUPPORTED_PIL_FORMATS:
                raise UnsupportedFormatError(
                    f"{path} contains {im.format or 'unrecognized'} data, not PNG or JPEG"
                )
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except UnidentifiedImageError as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    except OSError as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return Image(arr, ColorSpace.RGB)


def write_image(img: Image, path: str | Path) -> None:
    """Write an RGB or gray image as an 8-bit PNG (values must be in [0, 1])."""
    data = img.data
    if data.min() < 0.0 or data.max() > 1.0:
        raise MapRangeError(f"image values outside [0, 1] cannot be written as PNG: {path}")
    samples = np.round(data * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if img.channels == 1:
        _PILImage.fromarray(samples[:, :, 0], mode="L").save(path, format="PNG")
    else:
        _PILImage.fromarray(samples, mode="RGB").save(path, format="PNG")


# --- color conversions ------------------------------------------------------

# Rec. 601 luma; also the Y of the supported YCbCr space, so gray and
# YCbCr channel 0 stay consistent.
_REC601 = np.array([0.299, 0.587, 0.114])

# sRGB (D65) linear RGB -> XYZ
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_SRGB = np.linalg.inv(_SRGB_TO_XYZ)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])
_LAB_DELTA = 6.0 / 29.0


def convert_color(img: Image, target: ColorSpace) -> Image:
    """Convert an RGB image to ``target`` space; dimensions never change."""
    if img.space is not ColorSpace.RGB:
        raise InvalidInputError(f"convert_color expects an RGB image, got {img.space.value}")
    if target is ColorSpace.DEFAULT:
        raise InvalidInputError("the 'default' alias must be resolved before conversion")
    if target is ColorSpace.RGB:
        return Image(img.data.copy(), ColorSpace.RGB)
    if target is ColorSpace.GRAY:
        return Image((img.data @ _REC601)[:, :, None], ColorSpace.GRAY)
    if target is ColorSpace.YCBCR:
        return Image(rgb_to_ycbcr(img.data), ColorSpace.YCBCR)
    if target is ColorSpace.LAB:
        return Image(rgb_to_lab(img.data), ColorSpace.LAB)
    if target is ColorSpace.HSV:
        return Image(rgb_to_hsv(img.data), ColorSpace.HSV)
    raise InvalidInputError(f"unsupported target color space: {target}")


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """Full-range Rec. 601 YCbCr with chroma centered at 0.5."""
    y = rgb @ _REC601
    cb = 0.5 + (rgb[:, :, 2] - y) / 1.772
    cr = 0.5 + (rgb[:, :, 0] - y) / 1.402
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycbcr: np.ndarray) -> np.ndarray:
    y, cb, cr = ycbcr[:, :, 0], ycbcr[:, :, 1], ycbcr[:, :, 2]
    r = y + 1.402 * (cr - 0.5)
    b = y + 1.772 * (cb - 0.5)
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return np.stack([r, g, b], axis=-1)


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_DELTA**3, np.cbrt(t), t / (3.0 * _LAB_DELTA**2) + 4.0 / 29.0)


def _lab_f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_DELTA, t**3, 3.0 * _LAB_DELTA**2 * (t - 4.0 / 29.0))


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """CIELAB via sRGB linearization and the D65 white point."""
    xyz = _srgb_to_linear(rgb) @ _SRGB_TO_XYZ.T / _D65_WHITE
    fx, fy, fz = _lab_f(xyz[:, :, 0]), _lab_f(xyz[:, :, 1]), _lab_f(xyz[:, :, 2])
    lightness = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    return np.stack([lightness, a, b], axis=-1)


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    fy = (lab[:, :, 0] + 16.0) / 116.0
    fx = fy + lab[:, :, 1] / 500.0
    fz = fy - lab[:, :, 2] / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1) * _D65_WHITE
    return _linear_to_srgb(xyz @ _XYZ_TO_SRGB.T)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """HSV with hue in degrees [0, 360) and S, V in [0, 1]."""
    r, g, b = rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    safe = np.where(delta == 0.0, 1.0, delta)

    hue = np.where(
        maxc == r,
        ((g - b) / safe) % 6.0,
        np.where(maxc == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    hue = np.where(delta == 0.0, 0.0, hue * 60.0) % 360.0
    sat = np.where(maxc == 0.0, 0.0, delta / np.where(maxc == 0.0, 1.0, maxc))
    return np.stack([hue, sat, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[:, :, 0], hsv[:, :, 1], hsv[:, :, 2]
    c = v * s
    hp = (h % 360.0) / 60.0
    x = c * (1.0 - np.abs(hp % 2.0 - 1.0))
    zero = np.zeros_like(c)

    sector = np.floor(hp).astype(int) % 6
    r = np.choose(sector, [c, x, zero, zero, x, c])
    g = np.choose(sector, [x, c, c, x, zero, zero])
    b = np.choose(sector, [zero, zero, x, c, c, x])
    m = v - c
    return np.stack([r + m, g + m, b + m], axis=-1)


# --- saliency map output ----------------------------------------------------

def write_map(map_: SaliencyMap, path: str | Path, format: str = "png8") -> None:
    """Write a saliency map as an 8-bit gray PNG or as an f32raw raster.

    ``png8`` requires values in [0, 1] (rescale first); ``f32raw`` is the
    lossless little-endian interchange format.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "png8":
        if map_.data.min() < 0.0 or map_.data.max() > 1.0:
            raise MapRangeError(
                f"map values in [{map_.data.min():g}, {map_.data.max():g}] exceed [0, 1]; "
                "rescale before writing png8"
            )
        samples = np.round(map_.data * 255.0).astype(np.uint8)
        _PILImage.fromarray(samples, mode="L").save(path, format="PNG")
    elif format == "f32raw":
        header = _F32RAW_HEADER.pack(F32RAW_MAGIC, map_.height, map_.width, 0)
        payload = map_.data.astype("<f4").tobytes(order="C")
        path.write_bytes(header + payload)
    else:
        raise InvalidInputError(f"unknown map format {format!r} (expected 'png8' or 'f32raw')")


def read_f32raw(path: str | Path) -> np.ndarray:
    """Read an f32raw raster back into a float64 ``(H, W)`` array."""
    raw = Path(path).read_bytes()
    if len(raw) < _F32RAW_HEADER.size:
        raise MapFormatError(f"{path}: file shorter than the 16-byte f32raw header")
    magic, height, width, reserved = _F32RAW_HEADER.unpack_from(raw)
    if magic != F32RAW_MAGIC:
        raise MapFormatError(f"{path}: bad magic {magic!r}, expected {F32RAW_MAGIC!r}")
    if reserved != 0:
        raise MapFormatError(f"{path}: reserved header field must be 0, got {reserved}")
    if height < 1 or width < 1:
        raise MapFormatError(f"{path}: invalid dimensions {height}x{width}")
    expected = _F32RAW_HEADER.size + height * width * 4
    if len(raw) != expected:
        raise MapFormatError(f"{path}: expected {expected} bytes for {height}x{width}, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=_F32RAW_HEADER.size)
    return values.astype(np.float64).reshape(height, width)
