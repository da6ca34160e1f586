"""CBDNet network: encoder, channel-split decomposition, source classifier,
multiply-and-sum recombination and decoder.

Tensors are NCHW torch tensors; images live in [0, 1]. The transformer block
is the transposed channel-attention block (multi-dconv head attention plus a
gated-dconv feed-forward) used by Restormer-style restoration networks.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .compositor import ALL_COMPONENTS


@dataclass
class ModelConfig:
    components: List[str] = field(default_factory=lambda: list(ALL_COMPONENTS))
    encoder_depths: List[int] = field(default_factory=lambda: [4, 6, 6, 8])
    encoder_heads: List[int] = field(default_factory=lambda: [1, 2, 4, 10])
    encoder_channels: List[int] = field(default_factory=lambda: [24, 48, 48, 40])
    deep_channels: int = 40
    downsample_factor: int = 8
    refinement_depth: int = 4
    ffn_expansion: float = 2.66
    classifier_hidden: int = 80
    classifier_out: int = 20
    classifier_grid: int = 8
    head_width: int = 32
    norm: str = "batch"

    def __post_init__(self):
        self.components = list(self.components)
        n_scales = len(self.encoder_depths)
        if not (len(self.encoder_heads) == len(self.encoder_channels) == n_scales):
            raise ValueError("encoder_depths, encoder_heads and encoder_channels "
                             "must have equal length")
        if self.encoder_channels[-1] != self.deep_channels:
            raise ValueError("last encoder width must equal deep_channels")
        if self.deep_channels % self.n_components:
            raise ValueError(f"deep_channels={self.deep_channels} is not divisible by "
                             f"N={self.n_components}")
        if self.downsample_factor != 2 ** (n_scales - 1):
            raise ValueError(f"downsample_factor must be 2**(scales-1) = {2 ** (n_scales - 1)}")
        for c, h in zip(self.encoder_channels, self.encoder_heads):
            if c % h:
                raise ValueError(f"width {c} not divisible by {h} heads")
        if self.norm not in ("sample", "batch", "none"):
            raise ValueError(f"norm must be 'sample', 'batch' or 'none', got {self.norm!r}")
        if self.n_components < 2 or self.components[0] != "scene":
            raise ValueError("components must start with 'scene' and have N >= 2")

    @property
    def n_components(self):
        return len(self.components)

    @property
    def component_width(self):
        return self.deep_channels // self.n_components

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def paper_full_config():
    return ModelConfig()


def desk_config(components=("scene", "rain_streak", "snow", "haze", "raindrop")):
    """Small two-scale profile sized for CPU overfitting runs on 64x64 images."""
    return ModelConfig(
        components=list(components),
        encoder_depths=[1, 1],
        encoder_heads=[1, 2],
        encoder_channels=[8, 40],
        deep_channels=40,
        downsample_factor=2,
        refinement_depth=0,
        ffn_expansion=2.0,
        classifier_hidden=40,
        classifier_out=20,
        classifier_grid=2,
        head_width=16,
        norm="none",
    )


def tiny_config():
    """Four-scale profile small enough for finite-difference gradient checks."""
    return ModelConfig(
        components=["scene", "rain_streak", "snow", "haze", "raindrop"],
        encoder_depths=[1, 1, 1, 1],
        encoder_heads=[1, 1, 1, 1],
        encoder_channels=[8, 8, 8, 20],
        deep_channels=20,
        refinement_depth=1,
        classifier_hidden=8,
        classifier_out=4,
        classifier_grid=1,
        head_width=8,
        norm="none",
    )


# --------------------------------------------------------------------------
# building blocks


class LayerNorm2d(nn.Module):
    """Channel LayerNorm with bias, applied at every pixel."""

    def __init__(self, dim):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        x = F.layer_norm(x.permute(0, 2, 3, 1), x.shape[1:2], self.weight, self.bias, 1e-5)
        return x.permute(0, 3, 1, 2)


class FeedForward(nn.Module):
    def __init__(self, dim, expansion):
        super().__init__()
        hidden = int(dim * expansion)
        self.project_in = nn.Conv2d(dim, hidden * 2, 1, bias=False)
        self.dwconv = nn.Conv2d(hidden * 2, hidden * 2, 3, padding=1, groups=hidden * 2, bias=False)
        self.project_out = nn.Conv2d(hidden, dim, 1, bias=False)

    def forward(self, x):
        x1, x2 = self.dwconv(self.project_in(x)).chunk(2, dim=1)
        return self.project_out(F.gelu(x1) * x2)


class ChannelAttention(nn.Module):
    """Multi-head attention across channels (C x C maps, linear in pixels)."""

    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.qkv = nn.Conv2d(dim, dim * 3, 1, bias=False)
        self.qkv_dwconv = nn.Conv2d(dim * 3, dim * 3, 3, padding=1, groups=dim * 3, bias=False)
        self.project_out = nn.Conv2d(dim, dim, 1, bias=False)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv_dwconv(self.qkv(x)).chunk(3, dim=1)
        q, k, v = (t.reshape(b, self.heads, c // self.heads, h * w) for t in (q, k, v))
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        attn = (q @ k.transpose(-2, -1)) * self.temperature
        out = attn.softmax(dim=-1) @ v
        return self.project_out(out.reshape(b, c, h, w))


class TransformerBlock(nn.Module):
    def __init__(self, dim, heads, expansion):
        super().__init__()
        self.norm1 = LayerNorm2d(dim)
        self.attn = ChannelAttention(dim, heads)
        self.norm2 = LayerNorm2d(dim)
        self.ffn = FeedForward(dim, expansion)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


def _stage(dim, depth, heads, expansion):
    return nn.Sequential(*[TransformerBlock(dim, heads, expansion) for _ in range(depth)])


class Downsample(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        if c_out % 4:
            raise ValueError(f"downsampled width {c_out} must be divisible by 4")
        self.body = nn.Sequential(nn.Conv2d(c_in, c_out // 4, 3, padding=1, bias=False),
                                  nn.PixelUnshuffle(2))

    def forward(self, x):
        return self.body(x)


class Upsample(nn.Module):
    """3x3 conv to twice the width, then pixel shuffle: c_in -> c_in // 2."""

    def __init__(self, c_in):
        super().__init__()
        if c_in % 2:
            raise ValueError(f"upsampled width {c_in} must be even")
        self.out_channels = c_in // 2
        self.body = nn.Sequential(nn.Conv2d(c_in, c_in * 2, 3, padding=1, bias=False),
                                  nn.PixelShuffle(2))

    def forward(self, x):
        return self.body(x)


def _norm(kind, dim):
    # "sample" normalizes each image on its own (GroupNorm with one group), so
    # outputs never depend on what else shares the batch
    if kind == "batch":
        return nn.BatchNorm2d(dim)
    if kind == "none":
        return nn.Identity()
    return nn.GroupNorm(1, dim)


# --------------------------------------------------------------------------
# parameter-free blocks


def decompose(deep, n):
    """Split a deep feature map into ``n`` equal channel groups.

    Works on torch tensors (N, C, h, w) and on numpy arrays (h, w, C); the
    channel axis is 1 or -1 respectively.
    """
    if isinstance(deep, torch.Tensor):
        c = deep.shape[1]
        if c % n:
            raise ValueError(f"cannot split {c} channels into {n} components")
        return list(torch.split(deep, c // n, dim=1))
    arr = np.asarray(deep)
    c = arr.shape[-1]
    if c % n:
        raise ValueError(f"cannot split {c} channels into {n} components")
    return [arr[..., i * (c // n):(i + 1) * (c // n)] for i in range(n)]


def recombine(features, v):
    """Weighted sum ``sum_i v[i] * features[i]``.

    ``v`` is a length-N vector, or for torch inputs a (B, N) batch of vectors.
    """
    n = len(features)
    if isinstance(features[0], torch.Tensor):
        v = torch.as_tensor(v, dtype=features[0].dtype, device=features[0].device)
        if v.shape[-1] != n:
            raise ValueError(f"selection length {v.shape[-1]} does not match {n} components")
        stacked = torch.stack(features, dim=1)  # B, N, c, h, w
        if v.dim() == 1:
            v = v.expand(stacked.shape[0], n)
        return torch.einsum("bn,bnchw->bchw", v, stacked)
    v = np.asarray(v)
    if v.shape[-1] != n:
        raise ValueError(f"selection length {v.shape[-1]} does not match {n} components")
    out = v[0] * features[0]
    for i in range(1, n):
        out = out + v[i] * features[i]
    return out


class Decomposition(nn.Module):
    def __init__(self, n):
        super().__init__()
        self.n = n

    def forward(self, deep):
        return decompose(deep, self.n)


class Recombination(nn.Module):
    def forward(self, features, v):
        return recombine(features, v)


# --------------------------------------------------------------------------
# network


class Encoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        ch, depths, heads = cfg.encoder_channels, cfg.encoder_depths, cfg.encoder_heads
        self.embed = nn.Conv2d(3, ch[0], 3, padding=1, bias=False)
        self.stages = nn.ModuleList(_stage(ch[i], depths[i], heads[i], cfg.ffn_expansion)
                                    for i in range(len(ch)))
        self.downs = nn.ModuleList(Downsample(ch[i], ch[i + 1]) for i in range(len(ch) - 1))
        self.factor = cfg.downsample_factor

    def forward(self, img):
        h, w = img.shape[-2:]
        if h % self.factor or w % self.factor:
            raise ValueError(f"image size {h}x{w} not divisible by {self.factor}")
        x = self.embed(img)
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i < len(self.downs):
                x = self.downs[i](x)
        return x


class Decoder(nn.Module):
    """Mirror of the encoder from the C_d/N-wide recombined map to an image.

    Each upsampling step concatenates the upsampled features with the stem
    features (nearest-upsampled) and reduces them with a 1x1 convolution.
    """

    def __init__(self, cfg):
        super().__init__()
        ch, depths, heads = cfg.encoder_channels, cfg.encoder_depths, cfg.encoder_heads
        n_scales = len(ch)
        widths = [ch[i] for i in range(n_scales - 2, 0, -1)] + [2 * ch[0]]
        level_ids = list(range(n_scales - 2, -1, -1))
        stem_w = ch[-1]
        self.stem = nn.Conv2d(cfg.component_width, stem_w, 3, padding=1, bias=False)
        self.ups = nn.ModuleList()
        self.reduce = nn.ModuleList()
        self.stages = nn.ModuleList()
        prev = stem_w
        for width, lvl in zip(widths, level_ids):
            up = Upsample(prev)
            self.ups.append(up)
            self.reduce.append(nn.Conv2d(up.out_channels + stem_w, width, 1, bias=False))
            self.stages.append(_stage(width, depths[lvl], heads[lvl], cfg.ffn_expansion))
            prev = width
        self.refinement = _stage(prev, cfg.refinement_depth, heads[0], cfg.ffn_expansion)
        self.head = nn.Sequential(
            nn.Conv2d(prev, 2 * prev, 3, padding=1), _norm(cfg.norm, 2 * prev), nn.ReLU(),
            nn.Conv2d(2 * prev, cfg.head_width, 3, padding=1), _norm(cfg.norm, cfg.head_width),
            nn.ReLU(),
            nn.Conv2d(cfg.head_width, 3, 3, padding=1),
        )
        self.component_width = cfg.component_width

    def forward(self, fr):
        if fr.shape[1] != self.component_width:
            raise ValueError(f"decoder expects {self.component_width} channels, got {fr.shape[1]}")
        stem = self.stem(fr)
        x = stem
        for up, red, stage in zip(self.ups, self.reduce, self.stages):
            x = up(x)
            s = F.interpolate(stem, size=x.shape[-2:], mode="nearest")
            x = stage(red(torch.cat([x, s], dim=1)))
        x = self.refinement(x)
        # a hard [0, 1] clamp: unlike a sigmoid it does not saturate on the
        # mostly-black degradation targets
        return torch.clamp(self.head(x), 0.0, 1.0)


class SourceClassifier(nn.Module):
    """conv -> pool -> conv -> pool -> fc over all component maps."""

    def __init__(self, cfg):
        super().__init__()
        g = cfg.classifier_grid
        self.body = nn.Sequential(
            nn.Conv2d(cfg.deep_channels, cfg.classifier_hidden, 3, padding=1),
            _norm(cfg.norm, cfg.classifier_hidden), nn.ReLU(),
            nn.AvgPool2d(2, 2, ceil_mode=True),
            nn.Conv2d(cfg.classifier_hidden, cfg.classifier_out, 3, padding=1),
            _norm(cfg.norm, cfg.classifier_out), nn.ReLU(),
            nn.AdaptiveAvgPool2d(g),
        )
        self.fc = nn.Linear(g * g * cfg.classifier_out, cfg.n_components)

    def forward(self, features):
        x = torch.cat(list(features), dim=1)
        return self.fc(self.body(x).flatten(1))


def xavier_init(module):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def count_parameters(module):
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


class CBDNet(nn.Module):
    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.encoder = Encoder(self.cfg)
        self.decomposition = Decomposition(self.cfg.n_components)
        self.classifier = SourceClassifier(self.cfg)
        self.recombination = Recombination()
        self.decoder = Decoder(self.cfg)
        xavier_init(self)

    @property
    def n_components(self):
        return self.cfg.n_components

    def encode(self, img):
        return self.encoder(img)

    def components(self, img):
        return self.decomposition(self.encoder(img))

    def forward(self, img, v_c):
        """Decode the recombination selected by ``v_c``; also return V_s logits."""
        feats = self.components(img)
        out = self.decoder(self.recombination(feats, v_c))
        return out, self.classifier(feats)

    def decode_many(self, feats, vectors):
        """Decode one recombination per row of ``vectors`` (K, N) for each image.

        Returns a (B, K, 3, H, W) tensor; all K decodes share one encoder pass.
        """
        vectors = torch.as_tensor(vectors, dtype=feats[0].dtype)
        b, k = feats[0].shape[0], vectors.shape[0]
        stacked = torch.stack(feats, dim=1)  # B, N, c, h, w
        fr = torch.einsum("kn,bnchw->bkchw", vectors, stacked)
        out = self.decoder(fr.reshape(b * k, *fr.shape[2:]))
        return out.reshape(b, k, *out.shape[1:])

    def forward_all(self, img, mixed_vector):
        """All N one-hot decodes plus the mixed decode, and V_s logits.

        ``mixed_vector`` is the sampled subset ``u`` as a length-N 0/1 vector.
        Returns ``(outputs, logits)`` with outputs of shape (B, N+1, 3, H, W):
        index i < N is component i, index N is the mixed image.
        """
        feats = self.components(img)
        n = self.n_components
        u = torch.as_tensor(mixed_vector, dtype=feats[0].dtype).reshape(1, n)
        vectors = torch.cat([torch.eye(n, dtype=feats[0].dtype), u], dim=0)
        return self.decode_many(feats, vectors), self.classifier(feats)


def sample_subset(presence, rng):
    """Uniform draw over the non-empty subsets of the present components."""
    present = np.flatnonzero(np.asarray(presence) > 0.5)
    m = len(present)
    code = int(rng.integers(1, 2 ** m))
    u = np.zeros(len(presence))
    for bit, idx in enumerate(present):
        if code >> bit & 1:
            u[idx] = 1.0
    return u
