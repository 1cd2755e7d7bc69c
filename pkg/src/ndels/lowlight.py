"""Low-light enhancement network.

An attention-guided multiscale fusion design: a full-resolution branch
(resblocks + CBAM) plus downscaled encoder-decoder branches whose shallow
and decoded features are fused, calibrated back up the scale ladder, and
merged through a pooled channel-attention fusion before the sigmoid head.

Maps dark-hazy images to bright-hazy images; output shape equals input
shape (inputs are reflect-padded to the required multiple and cropped back).
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import CBAM, ResBlock, conv3x3, reflect_pad_to_multiple
from .checkpoint import NetworkParams, load_into_module, snapshot_module
from .errors import ConfigError
from .image import validate_image


class ScaleBranch(nn.Module):
    """Encoder-decoder branch run on a downscaled copy of the input.

    Shallow features from two stacked 3x3 convs are re-fused with the decoder
    output through a 1x1 conv, compensating detail lost to downscaling.
    """

    def __init__(self, ch: int):
        super().__init__()
        self.shallow1 = conv3x3(3, ch)
        self.shallow2 = conv3x3(ch, ch)
        self.enc1 = conv3x3(ch, 2 * ch, stride=2)
        self.enc1_res = ResBlock(2 * ch)
        self.enc2 = conv3x3(2 * ch, 2 * ch, stride=2)
        self.enc2_res = ResBlock(2 * ch)
        self.dec2 = conv3x3(2 * ch, 2 * ch)
        self.dec1 = conv3x3(2 * ch, ch)
        self.fuse = nn.Conv2d(2 * ch, ch, 1)

    def forward(self, x):
        s = self.shallow2(F.relu(self.shallow1(x)))
        e1 = self.enc1_res(F.relu(self.enc1(s)))
        e2 = self.enc2_res(F.relu(self.enc2(e1)))
        d2 = F.relu(self.dec2(F.interpolate(e2, scale_factor=2, mode="nearest")))
        d1 = F.relu(self.dec1(F.interpolate(d2, scale_factor=2, mode="nearest")))
        fused = F.relu(self.fuse(torch.cat([s, d1], dim=1)))
        return fused, e2


class LowLightNet(nn.Module):
    def __init__(self, scales: int = 3, base_channels: int = 32, resblocks: int = 2):
        super().__init__()
        if scales < 1:
            raise ConfigError(f"scales must be >= 1, got {scales}")
        if base_channels < 8:
            raise ConfigError(f"base_channels must be >= 8, got {base_channels}")
        if resblocks < 1:
            raise ConfigError(f"resblocks must be >= 1, got {resblocks}")
        c = base_channels
        self.scales = scales
        self.pad_multiple = 4 * 2 ** (scales - 1)

        self.conv_in = conv3x3(3, c)
        self.res = nn.Sequential(*[ResBlock(c) for _ in range(resblocks)])
        self.cbam = CBAM(c, reduction=8)

        self.branches = nn.ModuleList(ScaleBranch(c) for _ in range(scales - 1))
        self.calibrate = nn.ModuleList(conv3x3(c, c) for _ in range(scales - 1))

        cascade_in = c + 2 * c * (scales - 1)
        self.cascade = nn.Conv2d(cascade_in, c, 1)

        hidden = max(1, (2 * c) // 8)
        self.fusion_gate = nn.Sequential(
            nn.Conv2d(2 * c, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 2 * c, 1),
        )
        self.fusion_out = nn.Conv2d(2 * c, c, 1)
        # the head also sees the raw input so fine detail bypasses the funnel
        self.head = conv3x3(c + 3, 3)

    def forward(self, x):
        if not torch.isfinite(x).all():
            raise ValueError("non-finite values in network input")
        x, h, w = reflect_pad_to_multiple(x, self.pad_multiple)
        full_size = x.shape[-2:]

        f0 = F.relu(self.conv_in(x))
        f0 = self.res(f0)
        encoded = [f0]
        f0 = self.cbam(f0)

        branch_feats = []
        for k, branch in enumerate(self.branches, start=1):
            xk = F.interpolate(x, scale_factor=0.5**k, mode="bilinear", align_corners=False)
            fused, enc = branch(xk)
            branch_feats.append(fused)
            encoded.append(enc)

        # feed decoded lower-scale features back into the next branch up
        feedback = None
        for k in range(len(branch_feats) - 1, -1, -1):
            feat = branch_feats[k]
            if feedback is not None:
                feat = feat + self.calibrate[k + 1](
                    F.interpolate(feedback, size=feat.shape[-2:], mode="nearest")
                )
            feedback = feat
        if feedback is not None:
            f0 = f0 + self.calibrate[0](F.interpolate(feedback, size=full_size, mode="nearest"))

        resized = [
            e if e.shape[-2:] == tuple(full_size)
            else F.interpolate(e, size=full_size, mode="bilinear", align_corners=False)
            for e in encoded
        ]
        cascade = F.relu(self.cascade(torch.cat(resized, dim=1)))

        merged = torch.cat([f0, cascade], dim=1)
        gate = torch.sigmoid(self.fusion_gate(F.adaptive_avg_pool2d(merged, 1)))
        fused = F.relu(self.fusion_out(merged * gate))
        out = torch.sigmoid(self.head(torch.cat([fused, x], dim=1)))
        return out[..., :h, :w]


def build_llm(arch: dict) -> LowLightNet:
    if arch.get("kind") != "llm":
        raise ConfigError(f"not a low-light architecture descriptor: {arch}")
    return LowLightNet(
        scales=int(arch["scales"]),
        base_channels=int(arch["base_channels"]),
        resblocks=int(arch.get("resblocks", 2)),
    )


def llm_arch(scales: int = 3, base_channels: int = 32, resblocks: int = 2) -> dict:
    return {"kind": "llm", "scales": scales, "base_channels": base_channels, "resblocks": resblocks}


def llm_init(scales: int = 3, base_channels: int = 32, seed: int = 0, resblocks: int = 2) -> NetworkParams:
    """Build a fresh parameter set; identical seeds give identical weights."""
    arch = llm_arch(scales, base_channels, resblocks)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        module = build_llm(arch)
    return snapshot_module(module, arch)


def module_from_params(params: NetworkParams) -> LowLightNet:
    module = build_llm(params.arch)
    load_into_module(module, params)
    module.eval()
    return module


def llm_forward(img: np.ndarray, params: NetworkParams) -> np.ndarray:
    """Run the network on one image; output has the input's shape, in [0, 1]."""
    arr = validate_image(img)
    module = module_from_params(params)
    x = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).float()
    with torch.no_grad():
        y = module(x)
    return y.squeeze(0).permute(1, 2, 0).double().clamp(0.0, 1.0).numpy()
