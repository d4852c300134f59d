"""Centered Gaussian prior: salience from position alone.

Human fixations cluster near the image center regardless of content, so a
content-independent Gaussian bump centered on the image is a surprisingly
strong baseline and a useful bias term.
"""

from __future__ import annotations

import numpy as np

from ..raster import Image
from ..params import ResolvedParams
from . import NativeModel


class CenteredGaussianModel(NativeModel):
    def compute(self, image: Image, params: ResolvedParams) -> np.ndarray:
        rho = float(params["cg_sigma_ratio"])
        height, width = image.height, image.width
        sigma_y = rho * height
        sigma_x = rho * width
        dy = np.arange(height, dtype=np.float64) - (height - 1) / 2.0
        dx = np.arange(width, dtype=np.float64) - (width - 1) / 2.0
        exponent = dy[:, None] ** 2 / (2.0 * sigma_y**2) + dx[None, :] ** 2 / (2.0 * sigma_x**2)
        return np.exp(-exponent)
