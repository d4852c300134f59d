"""Flat diagnostic model: every pixel equally salient.

Useful for exercising the full pipeline (dimension fitting, smoothing,
rescaling, output writing) with an output whose correct value is obvious.
"""

from __future__ import annotations

import numpy as np

from ..params import ResolvedParams
from ..raster import Image
from . import NativeModel


class UniformModel(NativeModel):
    def compute(self, image: Image, params: ResolvedParams) -> np.ndarray:
        return np.full((image.height, image.width), 0.5, dtype=np.float64)
