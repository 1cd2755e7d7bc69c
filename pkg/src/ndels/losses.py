"""Training objectives for both networks.

The low-light total is gamma1 * content(L1) + gamma2 * multiscale-frequency;
the dehazing total is gamma1 * smooth-L1 + gamma2 * (1 - MS-SSIM) +
gamma3 * perceptual + gamma4 * adversarial. All losses accept (H, W, 3)
numpy images or torch tensors shaped (C, H, W) / (N, C, H, W) and are
differentiable with respect to the prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .metrics import ms_ssim_torch


@dataclass(frozen=True)
class LossWeights:
    gamma1: float = 1.0
    gamma2: float = 0.0
    gamma3: float = 0.0
    gamma4: float = 0.0

    def __post_init__(self):
        gs = (self.gamma1, self.gamma2, self.gamma3, self.gamma4)
        if any(g < 0 for g in gs):
            raise ValueError(f"loss weights must be non-negative, got {gs}")
        if all(g == 0 for g in gs):
            raise ValueError("at least one loss weight must be positive")

    @classmethod
    def llm_defaults(cls) -> "LossWeights":
        return cls(gamma1=1.0, gamma2=0.1)

    @classmethod
    def dhm_defaults(cls) -> "LossWeights":
        return cls(gamma1=1.0, gamma2=0.5, gamma3=0.05, gamma4=0.005)

    def to_json_dict(self) -> dict:
        return {"gamma1": self.gamma1, "gamma2": self.gamma2,
                "gamma3": self.gamma3, "gamma4": self.gamma4}


def _as_batch(x) -> torch.Tensor:
    if isinstance(x, np.ndarray):
        if x.ndim != 3 or x.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {x.shape}")
        t = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64)).permute(2, 0, 1)
    else:
        t = x
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.ndim != 4:
        raise ValueError(f"expected a 3-D or 4-D tensor, got shape {tuple(t.shape)}")
    return t


def _pair(pred, target) -> tuple[torch.Tensor, torch.Tensor]:
    p, t = _as_batch(pred), _as_batch(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(t.shape)}")
    return p, t


def l_content(pred, target) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    p, t = _pair(pred, target)
    return (p - t).abs().mean()


def l_msfd(pred, target, scales: int = 3) -> torch.Tensor:
    """Multiscale frequency-domain loss: at each scale, the mean absolute
    difference of the real and imaginary DFT parts (orthonormal transform),
    summed over scales. Downsampling is 2x2 average pooling."""
    if scales < 1:
        raise ValueError(f"scales must be >= 1, got {scales}")
    p, t = _pair(pred, target)
    total = None
    for s in range(scales):
        if s > 0:
            p = F.avg_pool2d(p, 2)
            t = F.avg_pool2d(t, 2)
        fp = torch.fft.fft2(p, norm="ortho")
        ft = torch.fft.fft2(t, norm="ortho")
        diff = fp - ft
        term = diff.real.abs().mean() + diff.imag.abs().mean()
        total = term if total is None else total + term
    return total


def llm_total(pred, target, w: LossWeights, msfd_scales: int = 3) -> torch.Tensor:
    """Weighted low-light objective: gamma1 * content + gamma2 * msfd."""
    return w.gamma1 * l_content(pred, target) + w.gamma2 * l_msfd(pred, target, msfd_scales)


def l_smooth_l1(pred, target, beta: float = 1.0) -> torch.Tensor:
    """Huber form: 0.5 d^2 / beta below beta, |d| - 0.5 beta above, averaged."""
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    p, t = _pair(pred, target)
    d = (p - t).abs()
    return torch.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta).mean()


def l_ms_ssim(pred, target, levels: int = 5, win_size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """1 - MS-SSIM, in [0, 1]."""
    p, t = _pair(pred, target)
    return 1.0 - ms_ssim_torch(p, t, levels=levels, win_size=win_size, sigma=sigma)


class RandomFeatureExtractor(nn.Module):
    """Fixed random-weight conv stack used as a perceptual feature provider
    when no pretrained backbone is available; taps after each stage."""

    def __init__(self, seed: int = 0, widths: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            convs = []
            in_ch = 3
            for w in widths:
                convs.append(nn.Conv2d(in_ch, w, 3, stride=2, padding=1))
                in_ch = w
            self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x) -> list[torch.Tensor]:
        taps = []
        for conv in self.convs:
            weight = conv.weight.to(x.dtype)
            bias = conv.bias.to(x.dtype)
            x = F.leaky_relu(F.conv2d(x, weight, bias, stride=2, padding=1), 0.1)
            taps.append(x)
        return taps


class IdentityExtractor(nn.Module):
    """Single identity tap; reduces the perceptual loss to plain MSE."""

    def forward(self, x) -> list[torch.Tensor]:
        return [x]


def l_perceptual(pred, target, extractor) -> torch.Tensor:
    """Mean squared difference of extractor tap features, summed over taps."""
    p, t = _pair(pred, target)
    try:
        feats_p = extractor(p)
        feats_t = extractor(t)
    except Exception as exc:
        raise ValueError(f"perceptual extractor failed: {exc}") from exc
    if not feats_p:
        raise ValueError("perceptual extractor produced no tap layers")
    total = None
    for fp, ft in zip(feats_p, feats_t):
        term = F.mse_loss(fp, ft)
        total = term if total is None else total + term
    return total


def _check_scores(scores: torch.Tensor, name: str, allow_one: bool) -> torch.Tensor:
    if scores.numel() == 0:
        raise ValueError(f"{name}: empty score set")
    upper_ok = (scores <= 1.0) if allow_one else (scores < 1.0)
    if not bool(((scores > 0.0) & upper_ok).all()):
        raise ValueError(f"{name}: scores must lie in (0, 1{']' if allow_one else ')'}")
    return scores


def l_adversarial(fake_scores) -> torch.Tensor:
    """Generator objective -mean(log(score)) on the discriminator's fake scores."""
    s = torch.as_tensor(fake_scores) if not isinstance(fake_scores, torch.Tensor) else fake_scores
    s = _check_scores(s, "fake_scores", allow_one=True)
    return -torch.log(s).mean()


def l_discriminator(real_scores, fake_scores) -> torch.Tensor:
    """Companion discriminator objective -mean(log r) - mean(log(1 - f))."""
    r = torch.as_tensor(real_scores) if not isinstance(real_scores, torch.Tensor) else real_scores
    f = torch.as_tensor(fake_scores) if not isinstance(fake_scores, torch.Tensor) else fake_scores
    r = _check_scores(r, "real_scores", allow_one=True)
    f = _check_scores(f, "fake_scores", allow_one=False)
    return -torch.log(r).mean() - torch.log(1.0 - f).mean()


def dhm_total(
    pred,
    target,
    disc_scores,
    w: LossWeights,
    extractor,
    smooth_beta: float = 1.0,
    ms_levels: int = 5,
) -> torch.Tensor:
    """Weighted dehazing objective over the four component losses.

    `disc_scores` may be None when gamma4 is 0 (purely supervised training).
    """
    total = w.gamma1 * l_smooth_l1(pred, target, beta=smooth_beta)
    if w.gamma2 != 0:
        total = total + w.gamma2 * l_ms_ssim(pred, target, levels=ms_levels)
    if w.gamma3 != 0:
        total = total + w.gamma3 * l_perceptual(pred, target, extractor)
    if w.gamma4 != 0:
        if disc_scores is None:
            raise ValueError("gamma4 > 0 requires discriminator scores")
        total = total + w.gamma4 * l_adversarial(disc_scores)
    return total
