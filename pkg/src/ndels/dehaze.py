"""Dehazing generator (two branches) and the adversarial discriminator.

The upper branch is a downsampling encoder-decoder with grouped-hierarchical
residual blocks, feature attention, sub-pixel upscaling, and a pooled-context
enhancement tail. The lower branch keeps full resolution and runs residual
channel-attention modules, each wrapped by a long skip. Branch outputs are
concatenated, fused by one convolution, tanh-activated, and mapped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import (
    EnhanceTail,
    FeatureAttention,
    MultiScaleResBlock,
    RCAM,
    SubPixelUp,
    conv3x3,
    reflect_pad_to_multiple,
)
from .checkpoint import (
    NetworkParams,
    load_into_module,
    load_params,
    snapshot_module,
)
from .errors import ConfigError
from .image import validate_image

DISC_MAX_CHANNELS = 512
DISC_STAGES = 5
SCORE_EPS = 1e-6


class UpperBranch(nn.Module):
    """Encoder-decoder over 5 stride-2 stages with skip connections."""

    def __init__(self, ch: int):
        super().__init__()
        self.stem = conv3x3(3, ch, stride=2)
        self.down1 = conv3x3(ch, 2 * ch, stride=2)
        self.block1 = MultiScaleResBlock(2 * ch)
        self.down2 = conv3x3(2 * ch, 4 * ch, stride=2)
        self.block2 = MultiScaleResBlock(4 * ch)
        self.down3 = conv3x3(4 * ch, 4 * ch, stride=2)
        self.block3 = MultiScaleResBlock(4 * ch)
        self.down4 = conv3x3(4 * ch, 4 * ch, stride=2)
        self.block4 = MultiScaleResBlock(4 * ch)
        self.att_bottom = FeatureAttention(4 * ch)
        self.up1 = SubPixelUp(4 * ch, 4 * ch)
        self.att1 = FeatureAttention(4 * ch)
        self.up2 = SubPixelUp(4 * ch, 4 * ch)
        self.att2 = FeatureAttention(4 * ch)
        self.up3 = SubPixelUp(4 * ch, 2 * ch)
        self.att3 = FeatureAttention(2 * ch)
        self.up4 = SubPixelUp(2 * ch, ch)
        self.att4 = FeatureAttention(ch)
        self.up5 = SubPixelUp(ch, ch)
        self.tail = EnhanceTail(ch)

    def forward(self, x):
        s = F.relu(self.stem(x))
        e1 = self.block1(F.relu(self.down1(s)))
        e2 = self.block2(F.relu(self.down2(e1)))
        e3 = self.block3(F.relu(self.down3(e2)))
        e4 = self.block4(F.relu(self.down4(e3)))
        d = self.att_bottom(e4)
        d = self.att1(self.up1(d) + e3)
        d = self.att2(self.up2(d) + e2)
        d = self.att3(self.up3(d) + e1)
        d = self.att4(self.up4(d) + s)
        d = self.up5(d)
        return self.tail(d)


class LowerBranch(nn.Module):
    """Full-resolution chain of residual channel-attention modules."""

    def __init__(self, width: int, rcam_count: int, rcab_per_module: int):
        super().__init__()
        self.conv_in = conv3x3(3, width)
        self.body = nn.Sequential(*[RCAM(width, rcab_per_module) for _ in range(rcam_count)])

    def forward(self, x):
        return self.body(F.relu(self.conv_in(x)))


class FusionHead(nn.Module):
    """Concatenated branches -> conv -> tanh -> affine map onto [0, 1]."""

    def __init__(self, in_ch: int):
        super().__init__()
        self.conv = conv3x3(in_ch, 3)

    def forward(self, upper_feats, lower_feats):
        y = torch.tanh(self.conv(torch.cat([upper_feats, lower_feats], dim=1)))
        return 0.5 * (y + 1.0)


class DehazeNet(nn.Module):
    PAD_MULTIPLE = 32

    def __init__(self, base_channels: int = 16, lower_width: int = 64,
                 rcam_count: int = 2, rcab_per_module: int = 4):
        super().__init__()
        if base_channels < 8 or base_channels % 4 != 0:
            raise ConfigError(f"base_channels must be >= 8 and divisible by 4, got {base_channels}")
        if lower_width < 8:
            raise ConfigError(f"lower_width must be >= 8, got {lower_width}")
        self.upper = UpperBranch(base_channels)
        self.lower = LowerBranch(lower_width, rcam_count, rcab_per_module)
        self.head = FusionHead(base_channels + lower_width)

    def forward(self, x):
        if not torch.isfinite(x).all():
            raise ValueError("non-finite values in network input")
        x, h, w = reflect_pad_to_multiple(x, self.PAD_MULTIPLE)
        y = self.head(self.upper(x), self.lower(x))
        return y[..., :h, :w]


@dataclass
class DhmParams:
    """Generator parameters: the three sub-networks under distinct namespaces."""

    upper: NetworkParams
    lower: NetworkParams
    head: NetworkParams

    @property
    def arch(self) -> dict:
        return self.upper.arch["parent"]


def dhm_arch(base_channels: int = 16, lower_width: int = 64,
             rcam_count: int = 2, rcab_per_module: int = 4) -> dict:
    return {
        "kind": "dhm",
        "base_channels": base_channels,
        "lower_width": lower_width,
        "rcam_count": rcam_count,
        "rcab_per_module": rcab_per_module,
    }


def build_dhm(arch: dict) -> DehazeNet:
    if arch.get("kind") != "dhm":
        raise ConfigError(f"not a dehazing architecture descriptor: {arch}")
    return DehazeNet(
        base_channels=int(arch["base_channels"]),
        lower_width=int(arch["lower_width"]),
        rcam_count=int(arch["rcam_count"]),
        rcab_per_module=int(arch["rcab_per_module"]),
    )


def snapshot_dhm(module: DehazeNet, arch: dict) -> DhmParams:
    parts = {}
    for name in ("upper", "lower", "head"):
        sub = getattr(module, name)
        parts[name] = snapshot_module(sub, {"kind": f"dhm.{name}", "parent": dict(arch)})
    return DhmParams(**parts)


def dhm_module_from_params(params: DhmParams) -> DehazeNet:
    module = build_dhm(params.arch)
    for name in ("upper", "lower", "head"):
        load_into_module(getattr(module, name), getattr(params, name))
    module.eval()
    return module


def dhm_init(
    base_channels: int = 16,
    lower_width: int = 64,
    rcam_count: int = 2,
    rcab_per_module: int = 4,
    seed: int = 0,
    pretrained_upper: str | None = None,
) -> DhmParams:
    """Fresh generator parameters; optionally load a pretrained upper branch."""
    arch = dhm_arch(base_channels, lower_width, rcam_count, rcab_per_module)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        module = build_dhm(arch)
    if pretrained_upper is not None:
        load_into_module(module.upper, load_params(pretrained_upper, namespace="upper"))
    return snapshot_dhm(module, arch)


def dhm_forward(img: np.ndarray, params: DhmParams) -> np.ndarray:
    """Run the generator on one image; output has the input's shape, in [0, 1]."""
    arr = validate_image(img)
    module = dhm_module_from_params(params)
    x = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).float()
    with torch.no_grad():
        y = module(x)
    return y.squeeze(0).permute(1, 2, 0).double().clamp(0.0, 1.0).numpy()


class Discriminator(nn.Module):
    """3x3 conv stack up to 512 channels with batch norm and leaky ReLU,
    adaptive average pooling, then 1x1 convs to 1024 and 1, sigmoid output."""

    MIN_SIZE = 16

    def __init__(self, base_channels: int = 64):
        super().__init__()
        if base_channels < 8:
            raise ConfigError(f"base_channels must be >= 8, got {base_channels}")
        layers = []
        in_ch = 3
        for i in range(DISC_STAGES):
            out_ch = min(base_channels * 2**i, DISC_MAX_CHANNELS)
            layers += [
                nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1, padding_mode="reflect"),
                nn.BatchNorm2d(out_ch),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        self.classifier = nn.Sequential(
            nn.Conv2d(in_ch, 1024, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(1024, 1, 1),
        )

    def forward(self, x):
        if not torch.isfinite(x).all():
            raise ValueError("non-finite values in discriminator input")
        if min(x.shape[-2], x.shape[-1]) < self.MIN_SIZE:
            raise ValueError(
                f"discriminator input {x.shape[-2]}x{x.shape[-1]} smaller than "
                f"{self.MIN_SIZE}x{self.MIN_SIZE}"
            )
        f = F.adaptive_avg_pool2d(self.features(x), 1)
        logits = self.classifier(f).flatten(1).squeeze(1)
        # sigmoid saturation guard keeps scores inside the open interval
        return torch.sigmoid(logits).clamp(SCORE_EPS, 1.0 - SCORE_EPS)


def disc_arch(base_channels: int = 64) -> dict:
    return {"kind": "disc", "base_channels": base_channels}


def build_disc(arch: dict) -> Discriminator:
    if arch.get("kind") != "disc":
        raise ConfigError(f"not a discriminator architecture descriptor: {arch}")
    return Discriminator(base_channels=int(arch["base_channels"]))


def disc_init(base_channels: int = 64, seed: int = 0) -> NetworkParams:
    arch = disc_arch(base_channels)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        module = build_disc(arch)
    return snapshot_module(module, arch)


def disc_module_from_params(params: NetworkParams) -> Discriminator:
    module = build_disc(params.arch)
    load_into_module(module, params)
    module.eval()
    return module


def disc_forward(img: np.ndarray, params: NetworkParams) -> float:
    """Probability that the image is real, in (0, 1); batch norm in inference mode."""
    arr = validate_image(img)
    module = disc_module_from_params(params)
    x = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).float()
    with torch.no_grad():
        score = module(x)
    return float(score.item())
