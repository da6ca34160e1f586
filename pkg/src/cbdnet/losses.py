"""Texture, perceptual and source-classification losses.

All losses take NCHW torch tensors. ``texture_loss`` and ``perceptual_loss``
operate on the stacked decoder outputs of ``CBDNet.forward_all`` with shape
(B, N+1, 3, H, W): slot 0 is the clean scene, slot N the mixed image.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class LossConfig:
    lambda_smoothl1: float = 1.0
    lambda_vgg: float = 0.1
    lambda_lpips: float = 0.1
    lambda_bce: float = 0.1
    smooth_l1_beta: float = 1.0
    extractor_seed: int = 0

    def __post_init__(self):
        for name in ("lambda_smoothl1", "lambda_vgg", "lambda_lpips", "lambda_bce"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.smooth_l1_beta <= 0:
            raise ValueError("smooth_l1_beta must be positive")


class PerceptualExtractor(nn.Module):
    """Interface: map an image batch to a list of feature maps (>= 3 scales).

    Subclasses must keep their weights frozen.
    """

    def features(self, img):
        raise NotImplementedError

    def forward(self, img):
        return self.features(img)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self


class RandomFilterPyramid(PerceptualExtractor):
    """Frozen random convolutions at three scales, drawn from ``seed``."""

    def __init__(self, seed=0, widths=(8, 16, 32)):
        super().__init__()
        gen = torch.Generator().manual_seed(int(seed))
        self.convs = nn.ModuleList()
        c_in = 3
        for c_out in widths:
            conv = nn.Conv2d(c_in, c_out, 3, padding=1)
            bound = (6.0 / (9 * (c_in + c_out))) ** 0.5
            with torch.no_grad():
                conv.weight.copy_(torch.rand(conv.weight.shape, generator=gen) * 2 * bound - bound)
                conv.bias.copy_(torch.rand(conv.bias.shape, generator=gen) * 0.2 - 0.1)
            self.convs.append(conv)
            c_in = c_out
        self.freeze()

    def features(self, img):
        feats = []
        x = img
        for i, conv in enumerate(self.convs):
            if i:
                x = F.avg_pool2d(x, 2, ceil_mode=True)
            x = F.relu(conv(x))
            feats.append(x)
        return feats


class ModuleExtractor(PerceptualExtractor):
    """Adapter for a pretrained network: taps the outputs of named layers.

    ``layers`` is an ordered iterable of modules applied in sequence; the
    output after each module whose index is in ``taps`` is collected.
    """

    def __init__(self, layers, taps, mean=None, std=None):
        super().__init__()
        self.layers = nn.ModuleList(layers)
        self.taps = set(taps)
        self.register_buffer("mean", torch.tensor(mean or [0.0, 0.0, 0.0]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std or [1.0, 1.0, 1.0]).view(1, 3, 1, 1))
        self.freeze()

    def features(self, img):
        x = (img - self.mean) / self.std
        feats = []
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i in self.taps:
                feats.append(x)
        return feats


def smooth_l1(pred, target, beta=1.0):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return F.smooth_l1_loss(pred, target, beta=beta)


def texture_loss(outputs, targets, cfg):
    """lambda_smoothl1 * sum over the N+1 slots of the per-slot smooth-L1."""
    if outputs.shape != targets.shape:
        raise ValueError(f"outputs {tuple(outputs.shape)} and targets "
                         f"{tuple(targets.shape)} are not aligned")
    total = outputs.new_zeros(())
    for i in range(outputs.shape[1]):
        total = total + smooth_l1(outputs[:, i], targets[:, i], cfg.smooth_l1_beta)
    return cfg.lambda_smoothl1 * total


def _unit(f, eps=1e-10):
    return f / torch.sqrt((f * f).sum(dim=1, keepdim=True) + eps)


def feature_l1(extractor, a, b):
    return sum(torch.mean(torch.abs(fa - fb))
               for fa, fb in zip(extractor(a), extractor(b)))


def feature_lpips(extractor, a, b):
    """Channel-normalized squared feature distance, averaged per layer."""
    fa, fb = extractor(a), extractor(b)
    return sum(((_unit(x) - _unit(y)) ** 2).sum(dim=1).mean() for x, y in zip(fa, fb)) / len(fa)


def perceptual_loss(y1_pred, y1_true, ymix_pred, ymix_true, extractor, cfg):
    for p, t in ((y1_pred, y1_true), (ymix_pred, ymix_true)):
        if p.shape != t.shape:
            raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(t.shape)}")
    total = y1_pred.new_zeros(())
    if cfg.lambda_vgg:
        total = total + cfg.lambda_vgg * (feature_l1(extractor, y1_pred, y1_true)
                                          + feature_l1(extractor, ymix_pred, ymix_true))
    if cfg.lambda_lpips:
        total = total + cfg.lambda_lpips * (feature_lpips(extractor, y1_pred, y1_true)
                                            + feature_lpips(extractor, ymix_pred, ymix_true))
    return total


def bce_loss(logits, presence):
    logits = torch.as_tensor(logits)
    presence = torch.as_tensor(presence, dtype=logits.dtype)
    if logits.shape != presence.shape:
        raise ValueError(f"logits {tuple(logits.shape)} and presence "
                         f"{tuple(presence.shape)} differ in length")
    return F.binary_cross_entropy_with_logits(logits, presence)


def loss_terms(outputs, targets, logits, presence, extractor, cfg):
    """Return the three terms of the total loss as a dict of scalars."""
    return {
        "texture": texture_loss(outputs, targets, cfg),
        "perceptual": perceptual_loss(outputs[:, 0], targets[:, 0],
                                      outputs[:, -1], targets[:, -1], extractor, cfg),
        "bce": cfg.lambda_bce * bce_loss(logits, presence),
    }


def total_loss(outputs, targets, logits, presence, extractor, cfg):
    terms = loss_terms(outputs, targets, logits, presence, extractor, cfg)
    return terms["texture"] + terms["perceptual"] + terms["bce"]
