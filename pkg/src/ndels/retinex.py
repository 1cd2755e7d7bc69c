"""Extended multiscale retinex post-processing and final pipeline assembly.

Each color channel is filtered in the frequency domain by Gaussian surrounds
at several scales; the averaged log-ratio response is then clipped using a
histogram rule keyed to the lowest bin's population and affinely rescaled to
[0, 1]. The full pipeline chains the two networks, contrast enhancement, and
an alpha blend of the retinex output with the enhanced image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dehaze import DhmParams, dhm_forward
from .image import check_same_shape, clip01, validate_image
from .lowlight import llm_forward
from .synth import DEFAULT_CLIP_FRACTION, enhance_bright

DEFAULT_SCALES = (5.0, 130.0, 255.0)
HIST_BINS = 256


@dataclass(frozen=True)
class RetinexConfig:
    scales: tuple[float, ...] = DEFAULT_SCALES
    zero_bin_ratio: float = 0.10
    epsilon: float = 1e-6

    def __post_init__(self):
        if len(self.scales) == 0:
            raise ValueError("scales must be non-empty")
        if any(s <= 0 for s in self.scales):
            raise ValueError(f"scales must be positive, got {self.scales}")
        if any(b >= a for a, b in zip(self.scales[1:], self.scales)):
            raise ValueError(f"scales must be strictly increasing, got {self.scales}")
        if not 0.0 < self.zero_bin_ratio < 1.0:
            raise ValueError(f"zero_bin_ratio must be in (0, 1), got {self.zero_bin_ratio}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def gaussian_blur_fft(channel: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian surround via the frequency domain.

    The channel is extended to 2H x 2W by mirroring, so the circular
    convolution matches a spatially convolved reflect boundary for any sigma.
    The filter is the continuous Gaussian transfer function sampled on the
    extended grid.
    """
    ext = np.block([
        [channel, channel[:, ::-1]],
        [channel[::-1, :], channel[::-1, ::-1]],
    ])
    h2, w2 = ext.shape
    fy = np.fft.fftfreq(h2)[:, None]
    fx = np.fft.fftfreq(w2)[None, :]
    transfer = np.exp(-2.0 * np.pi**2 * sigma**2 * (fx**2 + fy**2))
    blurred = np.fft.ifft2(np.fft.fft2(ext) * transfer).real
    h, w = channel.shape
    return blurred[:h, :w]


def retinex_response(img: np.ndarray, cfg: RetinexConfig = RetinexConfig()) -> np.ndarray:
    """Pre-rescale log-ratio response, averaged over surround scales."""
    arr = validate_image(img)
    response = np.zeros_like(arr)
    for c in range(3):
        channel = arr[:, :, c]
        acc = np.zeros_like(channel)
        for sigma in cfg.scales:
            surround = gaussian_blur_fft(channel, sigma)
            acc += np.log(channel + cfg.epsilon) - np.log(surround + cfg.epsilon)
        response[:, :, c] = acc / len(cfg.scales)
    return response


def _clip_points(response: np.ndarray, zero_bin_ratio: float) -> tuple[float, float]:
    """Histogram clip rule: from each end, the outermost of 256 bins whose
    count exceeds `zero_bin_ratio` times the lowest bin's count."""
    counts, edges = np.histogram(response, bins=HIST_BINS)
    threshold = zero_bin_ratio * max(counts[0], 1)
    above = np.nonzero(counts > threshold)[0]
    if above.size == 0:
        return float(edges[0]), float(edges[-1])
    lo_bin, hi_bin = above[0], above[-1]
    if lo_bin >= hi_bin:
        return float(edges[0]), float(edges[-1])
    return float(edges[lo_bin]), float(edges[hi_bin + 1])


def emsr_apply(img: np.ndarray, cfg: RetinexConfig = RetinexConfig()) -> np.ndarray:
    """Retinex response clipped and rescaled per channel; constant channels
    (identically zero response) are returned unchanged."""
    arr = validate_image(img)
    response = retinex_response(arr, cfg)
    out = arr.copy()
    for c in range(3):
        r = response[:, :, c]
        if r.max() - r.min() < 1e-12:
            continue
        lo, hi = _clip_points(r, cfg.zero_bin_ratio)
        if hi - lo < 1e-12:
            continue
        out[:, :, c] = np.clip((r - lo) / (hi - lo), 0.0, 1.0)
    return out


def contrast_enhance(img: np.ndarray) -> np.ndarray:
    """Percentile clip-and-stretch (same rule as the bright-target enhancer)."""
    return enhance_bright(img, clip_fraction=DEFAULT_CLIP_FRACTION)


def blend(dehazed: np.ndarray, retinexed: np.ndarray, alpha: float) -> np.ndarray:
    """Convex combination: alpha * retinexed + (1 - alpha) * dehazed."""
    a = validate_image(dehazed, "dehazed")
    b = validate_image(retinexed, "retinexed")
    check_same_shape(a, b)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * b + (1.0 - alpha) * a


def ndels_stages(
    img: np.ndarray,
    llm_params=None,
    dhm_params: DhmParams | None = None,
    cfg: RetinexConfig = RetinexConfig(),
    use_emsr: bool = False,
    alpha: float = 0.5,
    use_enhance: bool = True,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Run the pipeline and keep every intermediate stage output.

    Returns (final, stages) where stages maps stage name -> image in pipeline
    order: lowlight, dehazed, then optionally enhanced and retinex.
    `None` network parameters make that stage the identity.
    """
    x = validate_image(img)
    stages: dict[str, np.ndarray] = {}
    x = llm_forward(x, llm_params) if llm_params is not None else x.copy()
    stages["lowlight"] = x
    x = dhm_forward(x, dhm_params) if dhm_params is not None else x.copy()
    stages["dehazed"] = x
    if use_enhance:
        x = contrast_enhance(x)
        stages["enhanced"] = x
    if use_emsr:
        retinexed = emsr_apply(x, cfg)
        stages["retinex"] = retinexed
        x = blend(x, retinexed, alpha)
    return clip01(x), stages


def ndels_infer(
    img: np.ndarray,
    llm_params=None,
    dhm_params: DhmParams | None = None,
    cfg: RetinexConfig = RetinexConfig(),
    use_emsr: bool = False,
    alpha: float = 0.5,
    use_enhance: bool = True,
) -> np.ndarray:
    """Full pipeline: low-light -> dehaze -> contrast enhance -> optional
    retinex blend. `None` network parameters skip that stage (identity)."""
    final, _ = ndels_stages(img, llm_params, dhm_params, cfg=cfg,
                            use_emsr=use_emsr, alpha=alpha, use_enhance=use_enhance)
    return final
