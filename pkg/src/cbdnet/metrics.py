"""Full-reference image quality metrics and per-case evaluation."""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np
from scipy.signal import convolve2d

from ._validation import check_same_shape

PSNR_CAP = 100.0


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def kernel(self):
        ax = np.arange(self.window) - (self.window - 1) / 2.0
        g = np.exp(-(ax ** 2) / (2 * self.sigma ** 2))
        k = np.outer(g, g)
        return k / k.sum()


def mse(pred, target):
    check_same_shape(pred, target)
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(d * d))


def psnr(pred, target, cap=PSNR_CAP):
    """10*log10(1/MSE) in dB for [0, 1] images; identical images give ``cap``."""
    err = mse(pred, target)
    if err == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / err))


def _filter(x, kernel):
    return convolve2d(x, kernel[::-1, ::-1], mode="valid")


def ssim_map(x, y, params=SsimParams()):
    """Local SSIM over the valid region for one 2-D channel."""
    k = params.kernel()
    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2
    mx, my = _filter(x, k), _filter(y, k)
    sxx = _filter(x * x, k) - mx * mx
    syy = _filter(y * y, k) - my * my
    sxy = _filter(x * y, k) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(pred, target, params=SsimParams()):
    """Mean local SSIM, computed per channel and averaged over channels."""
    check_same_shape(pred, target)
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if min(x.shape[:2]) < params.window:
        raise ValueError(f"image {x.shape[:2]} smaller than the {params.window}x{params.window} window")
    return float(np.mean([ssim_map(x[..., c], y[..., c], params).mean() for c in range(x.shape[2])]))


# --------------------------------------------------------------------------
# case evaluation


@dataclass
class CaseReport:
    case: str
    metrics: Dict[str, float]
    n_samples: int
    records: List[dict] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError(f"case {self.case!r} has no samples")

    def as_record(self):
        return {"case": self.case, "n_samples": self.n_samples, **self.metrics}


def evaluate_cases(predict, cases, selection_for=None):
    """Score a restorer on grouped samples.

    ``predict(sample, selection)`` returns ``(output_image, presence_probs)``
    (``presence_probs`` may be None). ``cases`` maps case id to a list of
    ``CompositeSample``. ``selection_for(case_id, sample)`` picks ``V_c``;
    it defaults to keeping only the scene. Ground truth is
    ``render_target(sample, V_c)``.
    """
    from .compositor import render_target

    reports = []
    for case_id, samples in cases.items():
        records = []
        for sample in samples:
            if selection_for is None:
                v = np.zeros(len(sample.presence))
                v[0] = 1.0
            else:
                v = np.asarray(selection_for(case_id, sample), dtype=float)
            target = render_target(sample, v)
            out, probs = predict(sample, v)
            rec = {"case": case_id, "seed": sample.spec.seed,
                   "psnr": psnr(out, target), "ssim": ssim(out, target)}
            if probs is not None:
                rec["presence_acc"] = float(np.mean((np.asarray(probs) > 0.5) == (sample.presence > 0.5)))
            records.append(rec)
        if not records:
            raise ValueError(f"case {case_id!r} has no samples")
        keys = [k for k in ("psnr", "ssim", "presence_acc") if k in records[0]]
        means = {k: math.fsum(r[k] for r in records) / len(records) for k in keys}
        reports.append(CaseReport(case_id, means, len(records), records))
    return reports


def format_reports(reports):
    """Aligned plain-text table, one row per case."""
    keys = []
    for r in reports:
        keys += [k for k in r.metrics if k not in keys]
    head = f"{'case':<28}{'n':>5}" + "".join(f"{k:>14}" for k in keys)
    lines = [head, "-" * len(head)]
    for r in reports:
        vals = "".join(f"{r.metrics.get(k, float('nan')):>14.4f}" for k in keys)
        lines.append(f"{r.case:<28}{r.n_samples:>5}{vals}")
    return "\n".join(lines)
