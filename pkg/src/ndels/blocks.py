"""Reusable convolutional building blocks for the enhancement networks."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def conv3x3(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)


class ResBlock(nn.Module):
    """conv-relu-conv with identity skip."""

    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = conv3x3(ch, ch)
        self.conv2 = conv3x3(ch, ch)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class ChannelGate(nn.Module):
    """Squeeze-and-gate over channels from pooled statistics (sigmoid output)."""

    def __init__(self, ch: int, reduction: int = 8, use_max: bool = False):
        super().__init__()
        hidden = max(1, ch // reduction)
        self.mlp = nn.Sequential(
            nn.Conv2d(ch, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, ch, 1),
        )
        self.use_max = use_max

    def forward(self, x):
        gate = self.mlp(F.adaptive_avg_pool2d(x, 1))
        if self.use_max:
            gate = gate + self.mlp(F.adaptive_max_pool2d(x, 1))
        return torch.sigmoid(gate)


class SpatialGate(nn.Module):
    """Per-pixel gate from channel-pooled maps (sigmoid output)."""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.max(dim=1, keepdim=True).values], dim=1)
        return torch.sigmoid(self.conv(pooled))


class CBAM(nn.Module):
    """Sequential channel-then-spatial attention gating."""

    def __init__(self, ch: int, reduction: int = 8):
        super().__init__()
        self.channel_gate = ChannelGate(ch, reduction, use_max=True)
        self.spatial_gate = SpatialGate()

    def forward(self, x):
        x = x * self.channel_gate(x)
        return x * self.spatial_gate(x)


class FeatureAttention(nn.Module):
    """Channel gate followed by pixel gate."""

    def __init__(self, ch: int, reduction: int = 8):
        super().__init__()
        self.channel_gate = ChannelGate(ch, reduction)
        hidden = max(1, ch // reduction)
        self.pixel_gate = nn.Sequential(
            nn.Conv2d(ch, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 1, 1),
            nn.Sigmoid(),
        )

    def forward(self, x):
        x = x * self.channel_gate(x)
        return x * self.pixel_gate(x)


class RCAB(nn.Module):
    """Residual channel-attention block: conv-relu-conv, channel gate, skip."""

    def __init__(self, ch: int, reduction: int = 16):
        super().__init__()
        self.conv1 = conv3x3(ch, ch)
        self.conv2 = conv3x3(ch, ch)
        self.gate = ChannelGate(ch, reduction)

    def forward(self, x):
        res = self.conv2(F.relu(self.conv1(x)))
        return x + res * self.gate(res)


class RCAM(nn.Module):
    """Several RCABs plus a trailing conv, wrapped by one long skip."""

    def __init__(self, ch: int, n_blocks: int = 4, reduction: int = 16):
        super().__init__()
        body = [RCAB(ch, reduction) for _ in range(n_blocks)]
        body.append(conv3x3(ch, ch))
        self.body = nn.Sequential(*body)

    def forward(self, x):
        return x + self.body(x)


class MultiScaleResBlock(nn.Module):
    """Residual block whose 3x3 convs run hierarchically over channel groups,
    widening the receptive field mix within one block."""

    def __init__(self, ch: int, groups: int = 4):
        super().__init__()
        if ch % groups != 0:
            raise ValueError(f"channels {ch} not divisible by {groups} groups")
        self.groups = groups
        width = ch // groups
        self.convs = nn.ModuleList(conv3x3(width, width) for _ in range(groups - 1))
        self.fuse = nn.Conv2d(ch, ch, 1)

    def forward(self, x):
        chunks = torch.chunk(x, self.groups, dim=1)
        outs = [chunks[0]]
        prev = None
        for i, conv in enumerate(self.convs):
            inp = chunks[i + 1] if prev is None else chunks[i + 1] + prev
            prev = F.relu(conv(inp))
            outs.append(prev)
        return x + self.fuse(torch.cat(outs, dim=1))


class SubPixelUp(nn.Module):
    """Depth-to-space x2 upscaling."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = conv3x3(in_ch, out_ch * 4)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, x):
        return self.shuffle(self.conv(x))


class EnhanceTail(nn.Module):
    """Fuses multi-scale pooled context back into full-resolution features."""

    POOL_SIZES = (1, 2, 4, 8)

    def __init__(self, ch: int):
        super().__init__()
        branch_ch = max(1, ch // 4)
        self.branches = nn.ModuleList(nn.Conv2d(ch, branch_ch, 1) for _ in self.POOL_SIZES)
        fused = ch + branch_ch * len(self.POOL_SIZES)
        self.conv1 = conv3x3(fused, ch)
        self.conv2 = conv3x3(ch, ch)

    def forward(self, x):
        h, w = x.shape[-2:]
        ctx = [x]
        for size, conv in zip(self.POOL_SIZES, self.branches):
            pooled = F.adaptive_avg_pool2d(x, size)
            ctx.append(F.interpolate(conv(pooled), size=(h, w), mode="bilinear", align_corners=False))
        out = F.relu(self.conv1(torch.cat(ctx, dim=1)))
        return self.conv2(out)


def reflect_pad_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, int, int]:
    """Reflect-pad H and W up to the next multiple; returns (padded, H, W).

    Pads in chunks so targets larger than twice the input size still work.
    """
    h, w = x.shape[-2:]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    while pad_h or pad_w:
        step_h = min(pad_h, x.shape[-2] - 1)
        step_w = min(pad_w, x.shape[-1] - 1)
        x = F.pad(x, (0, step_w, 0, step_h), mode="reflect")
        pad_h -= step_h
        pad_w -= step_w
    return x, h, w
