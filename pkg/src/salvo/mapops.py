"""Post-processing operations applied to raw saliency maps.

Every model output passes through the same fixed pipeline: fit the map to
the input image's dimensions, optionally blur it, then rescale its values.
The operations here are deliberately small and purely functional so each is
independently checkable against closed-form cases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .errors import DimensionMismatchError, InvalidInputError
from .params import BorderTrim, GaussianSmoothing

RESCALE_MODES = ("min-max", "normalized", "none")


# --- kernels ---------------------------------------------------------------

@dataclass(frozen=True)
class Kernel2D:
    """A separable 2-D convolution kernel stored as its 1-D factor.

    ``weights_1d`` has odd length and sums to one; the full kernel is the
    outer product of the factor with itself.
    """

    weights_1d: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights_1d, dtype=np.float64)
        if w.ndim != 1 or w.size % 2 == 0:
            raise InvalidInputError("kernel factor must be 1-D with odd length")
        if not np.isclose(w.sum(), 1.0):
            raise InvalidInputError("kernel factor must sum to 1")
        object.__setattr__(self, "weights_1d", w)

    @property
    def size(self) -> int:
        return int(self.weights_1d.size)

    def full(self) -> np.ndarray:
        """The dense 2-D kernel (outer product of the 1-D factor)."""
        return np.outer(self.weights_1d, self.weights_1d)


def _gaussian_1d(size: int, std: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise InvalidInputError(f"kernel size must be a positive odd integer, got {size}")
    if not std > 0:
        raise InvalidInputError(f"kernel std must be > 0, got {std}")
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    weights = np.exp(-(offsets**2) / (2.0 * std * std))
    return weights / weights.sum()


def gaussian_kernel(size: int, std: float) -> Kernel2D:
    """A normalized, separable Gaussian kernel of odd side length ``size``."""
    return Kernel2D(_gaussian_1d(size, std))


def smooth(data: np.ndarray, smoothing: GaussianSmoothing | None) -> np.ndarray:
    """Blur a 2-D map with a Gaussian, replicating edge values at borders.

    The separable kernel is applied as two 1-D passes, which is exactly
    equivalent to convolving with the dense outer-product kernel under
    replicated borders. ``None`` means no smoothing.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise InvalidInputError(f"expected a 2-D map, got shape {data.shape}")
    if smoothing is None:
        return data.copy()
    kernel = gaussian_kernel(smoothing.size, smoothing.std)
    out = convolve1d(data, kernel.weights_1d, axis=0, mode="nearest")
    return convolve1d(out, kernel.weights_1d, axis=1, mode="nearest")


# --- value rescaling ---------------------------------------------------------

def rescale_values(
    data: np.ndarray,
    mode: str,
    scale_min: float = 0.0,
    scale_max: float = 1.0,
) -> np.ndarray:
    """Map the values of a saliency map onto a common range.

    ``min-max`` linearly stretches onto [scale_min, scale_max]; a constant
    map has no spread to stretch, so every pixel lands on scale_min.
    ``normalized`` divides by the sum after shifting the minimum to zero, so
    the result is a distribution summing to one; a constant map becomes the
    uniform distribution. ``none`` returns the values untouched.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise InvalidInputError(f"expected a 2-D map, got shape {data.shape}")
    if mode == "none":
        return data.copy()
    lo = float(data.min())
    hi = float(data.max())
    if mode == "min-max":
        if not scale_min < scale_max:
            raise InvalidInputError(
                f"scale_min ({scale_min}) must be strictly less than scale_max ({scale_max})"
            )
        if hi == lo:
            return np.full_like(data, scale_min)
        return (data - lo) / (hi - lo) * (scale_max - scale_min) + scale_min
    if mode == "normalized":
        shifted = data - lo
        total = float(shifted.sum())
        if total == 0.0:
            return np.full_like(data, 1.0 / data.size)
        return shifted / total
    raise InvalidInputError(f"unknown rescale mode {mode!r} (expected one of {RESCALE_MODES})")


# --- spatial resampling --------------------------------------------------------

def resample_bilinear(data: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Resize a 2-D map with corner-aligned bilinear interpolation.

    Output pixel ``(i, j)`` samples the input at ``(i * (H_in-1) / (H_out-1),
    j * (W_in-1) / (W_out-1))``, so the four corners map exactly onto the
    input corners. A single-pixel output axis samples the input's center
    along that axis.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise InvalidInputError(f"expected a 2-D map, got shape {data.shape}")
    if out_height < 1 or out_width < 1:
        raise InvalidInputError(f"output dims must be positive, got {out_height}x{out_width}")
    in_height, in_width = data.shape
    if (in_height, in_width) == (out_height, out_width):
        return data.copy()

    def _coords(n_out: int, n_in: int) -> np.ndarray:
        if n_out == 1:
            return np.array([(n_in - 1) / 2.0])
        return np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)

    ys = _coords(out_height, in_height)
    xs = _coords(out_width, in_width)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(in_height - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(in_width - 2, 0))
    y1 = np.minimum(y0 + 1, in_height - 1)
    x1 = np.minimum(x0 + 1, in_width - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    top = data[np.ix_(y0, x0)] * (1 - wx) + data[np.ix_(y0, x1)] * wx
    bottom = data[np.ix_(y1, x0)] * (1 - wx) + data[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bottom * wy


# --- fitting model output to the input image ------------------------------------

@dataclass(frozen=True)
class RescaleBilinear:
    """Fit policy: bilinearly resample the map to the target dimensions."""


@dataclass(frozen=True)
class PadReplicate:
    """Fit policy: pad back a declared border trim by replicating edges.

    Used for models that return only the valid interior of their output;
    the trim declares how many rows/columns each side lost.
    """

    trim: BorderTrim


FitPolicy = RescaleBilinear | PadReplicate


def fit_to_dims(
    data: np.ndarray,
    target_dims: tuple[int, int],
    policy: FitPolicy,
) -> np.ndarray:
    """Bring a raw model output map to the input image's dimensions."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise InvalidInputError(f"expected a 2-D map, got shape {data.shape}")
    target_height, target_width = target_dims
    if target_height < 1 or target_width < 1:
        raise InvalidInputError(f"target dims must be positive, got {target_height}x{target_width}")
    if data.shape == (target_height, target_width):
        return data.copy()

    if isinstance(policy, PadReplicate):
        trim = policy.trim
        expected = (
            target_height - trim.top - trim.bottom,
            target_width - trim.left - trim.right,
        )
        if data.shape != expected:
            raise DimensionMismatchError(
                f"map shape {data.shape} does not match target {target_height}x{target_width} "
                f"minus declared trim (expected {expected[0]}x{expected[1]})"
            )
        return np.pad(data, ((trim.top, trim.bottom), (trim.left, trim.right)), mode="edge")

    if isinstance(policy, RescaleBilinear):
        return resample_bilinear(data, target_height, target_width)

    raise InvalidInputError(f"unknown fit policy {policy!r}")
