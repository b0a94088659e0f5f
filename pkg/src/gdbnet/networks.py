"""Network graph: gated convolutional layers, the coarse sub-network with
mask and edge decoder branches, the dilated refinement sub-network, and
the spectrally-normalized patch discriminators.

A gated layer computes sigmoid(conv_g(x)) * phi(conv_f(x)) with two
independent filters of identical geometry. Hidden layers use
LeakyReLU(0.2) for phi; mask/edge heads end in a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .tensorops import SpectralNormState, apply_activation, spectral_normalize

__all__ = [
    "GatedLayerSpec",
    "CoarseNetConfig",
    "RefineNetConfig",
    "DiscriminatorConfig",
    "GatedConv2d",
    "GatedResidualBlock",
    "CoarseNet",
    "RefineNet",
    "Discriminator",
    "Generator",
    "GdbModel",
]


@dataclass(frozen=True)
class GatedLayerSpec:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    feature_activation: str = "leaky_relu"
    is_transpose: bool = False


@dataclass(frozen=True)
class CoarseNetConfig:
    in_channels: int = 5  # RGB patch + priori mask + priori edge
    base_width: int = 32
    n_res: int = 4

    def encoder_specs(self):
        w = self.base_width
        chans = [self.in_channels, w, 2 * w, 4 * w, 8 * w]
        return [GatedLayerSpec(chans[i], chans[i + 1], kernel=4, stride=2, padding=1)
                for i in range(4)]

    def decoder_specs(self):
        # Four up-sampling layers, each fed the matching encoder skip,
        # plus one stride-1 refinement layer at full resolution.
        w = self.base_width
        return [
            GatedLayerSpec(16 * w, 4 * w, kernel=4, stride=2, padding=1, is_transpose=True),
            GatedLayerSpec(8 * w, 2 * w, kernel=4, stride=2, padding=1, is_transpose=True),
            GatedLayerSpec(4 * w, w, kernel=4, stride=2, padding=1, is_transpose=True),
            GatedLayerSpec(2 * w, w, kernel=4, stride=2, padding=1, is_transpose=True),
            GatedLayerSpec(w, w, kernel=3, stride=1, padding=1),
        ]


@dataclass(frozen=True)
class RefineNetConfig:
    in_channels: int = 4  # grayscale + coarse mask + coarse edge + global mask
    base_width: int = 32
    dilations: tuple = (2, 4, 8, 16)

    def __post_init__(self):
        if not any(d > 1 for d in self.dilations):
            raise ValueError("at least one bottleneck dilation must exceed 1")


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 4  # RGB document + binary mask
    widths: tuple = (64, 128, 256, 256, 256, 1)
    kernel: int = 5

    def __post_init__(self):
        if len(self.widths) != 6:
            raise ValueError("discriminator stacks exactly six convolutions")


def _init_conv(conv: nn.Module) -> nn.Module:
    nn.init.kaiming_normal_(conv.weight, a=0.2, mode="fan_in")
    if conv.bias is not None:
        nn.init.zeros_(conv.bias)
    return conv


class GatedConv2d(nn.Module):
    """Gating and feature convolutions of identical geometry."""

    def __init__(self, spec: GatedLayerSpec):
        super().__init__()
        self.spec = spec
        cls = nn.ConvTranspose2d if spec.is_transpose else nn.Conv2d
        kwargs = dict(kernel_size=spec.kernel, stride=spec.stride,
                      padding=spec.padding, dilation=spec.dilation)
        self.gate = _init_conv(cls(spec.in_ch, spec.out_ch, **kwargs))
        self.feature = _init_conv(cls(spec.in_ch, spec.out_ch, **kwargs))

    def forward(self, x):
        return torch.sigmoid(self.gate(x)) * apply_activation(
            self.feature(x), self.spec.feature_activation)


class GatedResidualBlock(nn.Module):
    """x + gated_conv(leaky_relu(gated_conv(x))); spatial dims preserved."""

    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        pad = kernel // 2
        spec = GatedLayerSpec(channels, channels, kernel=kernel, padding=pad)
        self.conv1 = GatedConv2d(spec)
        self.conv2 = GatedConv2d(spec)

    def forward(self, x):
        return x + self.conv2(F.leaky_relu(self.conv1(x), 0.2))


def _check_div16(*tensors):
    for t in tensors:
        if t.shape[-2] % 16 or t.shape[-1] % 16:
            raise ValueError(f"spatial dims {tuple(t.shape[-2:])} must be divisible by 16")


class _Decoder(nn.Module):
    """One decoder branch; consumes the shared encoder skips."""

    def __init__(self, cfg: CoarseNetConfig):
        super().__init__()
        self.layers = nn.ModuleList(GatedConv2d(s) for s in cfg.decoder_specs())
        self.head = _init_conv(nn.Conv2d(cfg.base_width, 1, kernel_size=1))

    def forward(self, bottleneck, skips):
        # skips = (e1, e2, e3, e4); deepest first into the decoder.
        x = bottleneck
        for layer, skip in zip(self.layers[:4], reversed(skips)):
            x = layer(torch.cat([x, skip], dim=1))
        x = self.layers[4](x)
        return torch.sigmoid(self.head(x))


class CoarseNet(nn.Module):
    """Multi-branch coarse sub-network: shared gated encoder, gated
    residual bottleneck, and twin mask/edge decoders with four skips."""

    def __init__(self, cfg: CoarseNetConfig = CoarseNetConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = nn.ModuleList(GatedConv2d(s) for s in cfg.encoder_specs())
        self.bottleneck = nn.ModuleList(
            GatedResidualBlock(8 * cfg.base_width) for _ in range(cfg.n_res))
        self.decoder_mask = _Decoder(cfg)
        self.decoder_edge = _Decoder(cfg)

    def forward(self, patch, mask, edge):
        _check_div16(patch, mask, edge)
        x = torch.cat([patch, mask, edge], dim=1)
        skips = []
        for layer in self.encoder:
            x = layer(x)
            skips.append(x)
        for block in self.bottleneck:
            x = block(x)
        return self.decoder_mask(x, skips), self.decoder_edge(x, skips)


class RefineNet(nn.Module):
    """Refinement sub-network with dilated gated bottleneck layers."""

    def __init__(self, cfg: RefineNetConfig = RefineNetConfig()):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        self.encoder = nn.ModuleList([
            GatedConv2d(GatedLayerSpec(cfg.in_channels, w, kernel=3, padding=1)),
            GatedConv2d(GatedLayerSpec(w, 2 * w, kernel=4, stride=2, padding=1)),
            GatedConv2d(GatedLayerSpec(2 * w, 4 * w, kernel=4, stride=2, padding=1)),
        ])
        self.bottleneck = nn.ModuleList(
            GatedConv2d(GatedLayerSpec(4 * w, 4 * w, kernel=3, dilation=d, padding=d))
            for d in cfg.dilations)
        self.decoder = nn.ModuleList([
            GatedConv2d(GatedLayerSpec(4 * w, 2 * w, kernel=4, stride=2, padding=1,
                                       is_transpose=True)),
            GatedConv2d(GatedLayerSpec(2 * w, w, kernel=4, stride=2, padding=1,
                                       is_transpose=True)),
            GatedConv2d(GatedLayerSpec(w, w, kernel=3, padding=1)),
        ])
        self.head = _init_conv(nn.Conv2d(w, 1, kernel_size=1))

    def forward(self, grey, coarse_mask, coarse_edge, global_mask):
        _check_div16(grey, coarse_mask, coarse_edge, global_mask)
        x = torch.cat([grey, coarse_mask, coarse_edge, global_mask], dim=1)
        for layer in self.encoder:
            x = layer(x)
        for layer in self.bottleneck:
            x = layer(x)
        for layer in self.decoder:
            x = layer(x)
        return torch.sigmoid(self.head(x))


class SNConv2d(nn.Module):
    """Convolution whose weight is spectrally normalized each forward;
    the power-iteration vector persists across steps and is only
    updated in training mode."""

    def __init__(self, in_ch, out_ch, kernel, stride, padding):
        super().__init__()
        conv = _init_conv(nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=padding))
        self.weight = conv.weight
        self.bias = conv.bias
        self.stride, self.padding = stride, padding
        u = torch.randn(out_ch)
        self.register_buffer("u", u / u.norm())

    def forward(self, x):
        state = SpectralNormState(u=self.u.clone())
        w = spectral_normalize(self.weight, state, update=self.training)
        if self.training:
            with torch.no_grad():
                self.u.copy_(state.u)
        return F.conv2d(x, w, self.bias, stride=self.stride, padding=self.padding)


class Discriminator(nn.Module):
    """SN-PatchGAN-style critic: six spectrally-normalized stride-2
    convolutions over the 4-channel (document, mask) concatenation,
    emitting a raw spatial score map."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        chans = (cfg.in_channels,) + cfg.widths
        pad = cfg.kernel // 2
        self.layers = nn.ModuleList(
            SNConv2d(chans[i], chans[i + 1], cfg.kernel, stride=2, padding=pad)
            for i in range(6))

    def forward(self, document, mask):
        if document.shape[-2:] != mask.shape[-2:]:
            raise ValueError("document and mask spatial dims must match")
        x = torch.cat([document, mask], dim=1)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < 5:
                x = F.leaky_relu(x, 0.2)
        return x


class Generator(nn.Module):
    """Coarse + refinement stages under one parameter namespace. The
    global branch reuses the coarse weights on the resized document."""

    def __init__(self, coarse_cfg: CoarseNetConfig = CoarseNetConfig(),
                 refine_cfg: RefineNetConfig = RefineNetConfig()):
        super().__init__()
        self.coarse = CoarseNet(coarse_cfg)
        self.refine = RefineNet(refine_cfg)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


class GdbModel(nn.Module):
    """Generator plus the two stage discriminators, so a single
    checkpoint carries every trainable tensor."""

    def __init__(self, coarse_cfg: CoarseNetConfig = CoarseNetConfig(),
                 refine_cfg: RefineNetConfig = RefineNetConfig(),
                 disc_cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.generator = Generator(coarse_cfg, refine_cfg)
        self.d_coarse = Discriminator(disc_cfg)
        self.d_refine = Discriminator(disc_cfg)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
