"""Reference computations written independently of the package code."""

import numpy as np


def brute_force_ssim(x, y, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM from windowed statistics computed pixel by pixel."""
    half = window // 2
    ax = np.arange(-half, half + 1)
    w = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma ** 2))
    w /= w.sum()
    c1, c2 = k1 ** 2, k2 ** 2
    per_channel = []
    for ch in range(x.shape[2]):
        a, b = x[..., ch], y[..., ch]
        vals = []
        for i in range(half, a.shape[0] - half):
            for j in range(half, a.shape[1] - half):
                pa = a[i - half:i + half + 1, j - half:j + half + 1]
                pb = b[i - half:i + half + 1, j - half:j + half + 1]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va = (w * (pa - ma) ** 2).sum()
                vb = (w * (pb - mb) ** 2).sum()
                cov = (w * (pa - ma) * (pb - mb)).sum()
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2))
                            / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
        per_channel.append(np.mean(vals))
    return float(np.mean(per_channel))


def invert_haze(hazy, transmission, airlight):
    """Scene radiance from I = J t + A (1 - t)."""
    t = transmission[..., None]
    return (hazy - airlight * (1.0 - t)) / t


def invert_alpha(composite, coverage, payload):
    """Background from I = J (1 - a) + P a."""
    return (composite - payload * coverage) / (1.0 - coverage)
