"""Full-reference image quality metrics: PSNR, SSIM, MS-SSIM.

The SSIM family is implemented once on torch tensors (so the same code path
serves both metric evaluation and differentiable losses); the public
functions here accept (H, W, 3) numpy images and return floats.

Reference configuration: 11x11 Gaussian window with sigma 1.5,
C1 = 0.01^2, C2 = 0.03^2, standard 5-level pyramid weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .image import check_same_shape, validate_image

SSIM_WIN_SIZE = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass
class QualityReport:
    psnr: float
    ssim: float
    ms_ssim: float
    file: str | None = None

    def to_json_dict(self) -> dict:
        """JSON-safe dict; an infinite PSNR is serialized as the string "inf"."""
        return {
            "file": self.file,
            "psnr": "inf" if math.isinf(self.psnr) else self.psnr,
            "ssim": self.ssim,
            "ms_ssim": self.ms_ssim,
        }


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB with MAX = 1.0; inf for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WIN_SIZE, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian weighting window."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _window_kernel(channels: int, size: int, sigma: float, dtype, device) -> torch.Tensor:
    win = torch.from_numpy(gaussian_window(size, sigma)).to(dtype=dtype, device=device)
    return win.expand(channels, 1, size, size).contiguous()


def _ssim_maps(x: torch.Tensor, y: torch.Tensor, win_size: int, sigma: float):
    """Per-window luminance*cs map and cs map for NCHW tensors (valid windows)."""
    c = x.shape[1]
    kernel = _window_kernel(c, win_size, sigma, x.dtype, x.device)

    def filt(t):
        return F.conv2d(t, kernel, groups=c)

    mu_x = filt(x)
    mu_y = filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y

    lum = (2.0 * mu_x * mu_y + SSIM_C1) / (mu_x * mu_x + mu_y * mu_y + SSIM_C1)
    cs = (2.0 * cov + SSIM_C2) / (var_x + var_y + SSIM_C2)
    return lum * cs, cs


def _check_window_fits(x: torch.Tensor, win_size: int) -> None:
    if min(x.shape[-2], x.shape[-1]) < win_size:
        raise ValueError(
            f"image {x.shape[-2]}x{x.shape[-1]} smaller than {win_size}x{win_size} window"
        )


def ssim_torch(
    x: torch.Tensor,
    y: torch.Tensor,
    win_size: int = SSIM_WIN_SIZE,
    sigma: float = SSIM_SIGMA,
) -> torch.Tensor:
    """Mean local SSIM over sliding Gaussian windows; differentiable."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    _check_window_fits(x, win_size)
    ssim_map, _ = _ssim_maps(x, y, win_size, sigma)
    return ssim_map.mean()


def ms_ssim_torch(
    x: torch.Tensor,
    y: torch.Tensor,
    levels: int = 5,
    win_size: int = SSIM_WIN_SIZE,
    sigma: float = SSIM_SIGMA,
) -> torch.Tensor:
    """Multi-scale SSIM: per-scale contrast/structure terms, coarsest-scale
    luminance, 2x2 average-pool downsampling between scales; differentiable."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if min(x.shape[-2], x.shape[-1]) // 2 ** (levels - 1) < win_size:
        raise ValueError(
            f"image {x.shape[-2]}x{x.shape[-1]} too small for {levels} pyramid levels "
            f"with {win_size}x{win_size} window"
        )
    weights = np.asarray(MS_SSIM_WEIGHTS[:levels], dtype=np.float64)
    weights = weights / weights.sum()

    result = None
    for i in range(levels):
        if i == levels - 1:
            ssim_map, _ = _ssim_maps(x, y, win_size, sigma)
            term = ssim_map.mean().clamp(min=0.0)
        else:
            _, cs_map = _ssim_maps(x, y, win_size, sigma)
            term = cs_map.mean().clamp(min=0.0)
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
        factor = term ** float(weights[i])
        result = factor if result is None else result * factor
    return result


def _to_batch(img: np.ndarray) -> torch.Tensor:
    arr = validate_image(img)
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """SSIM averaged over windows and channels, in [-1, 1]."""
    x, y = _to_batch(a), _to_batch(b)
    with torch.no_grad():
        return float(ssim_torch(x, y))


def ms_ssim(a: np.ndarray, b: np.ndarray, levels: int = 5) -> float:
    """Multi-scale SSIM in [0, 1] for non-negative inputs."""
    x, y = _to_batch(a), _to_batch(b)
    with torch.no_grad():
        return float(ms_ssim_torch(x, y, levels=levels))


def max_ms_ssim_levels(height: int, width: int, cap: int = 5) -> int:
    """Largest usable pyramid depth for the given image size."""
    levels = 1
    while levels < cap and min(height, width) // 2**levels >= SSIM_WIN_SIZE:
        levels += 1
    return levels
