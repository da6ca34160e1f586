"""Acceptance criteria, one test per criterion.

Each test prints a ``criterion N: PASS/FAIL`` line; the lines are repeated in
the pytest terminal summary. Run alone with::

    pytest tests/test_acceptance.py -v
"""

import json
import math
import time
from importlib import resources

import numpy as np
import pytest
import torch

from cbdnet import checkpoint as ckpt_io
from cbdnet.cli import main
from cbdnet.compositor import (ALL_COMPONENTS, HAZE_SEVERITY, CompositeSpec, compose,
                               random_scene, render_target, synth_mask)
from cbdnet.config import dump_config, load_config
from cbdnet.data import SampleSource
from cbdnet.inference import Restorer
from cbdnet.losses import RandomFilterPyramid, total_loss
from cbdnet.metrics import psnr, ssim
from cbdnet.model import (CBDNet, count_parameters, decompose, paper_full_config, recombine,
                          sample_subset, tiny_config)
from cbdnet.presets import STYLE_PROMPTS, PROMPT_CASES, WEATHER_CASES
from cbdnet.prompt import load_vocabulary, parse_prompt
from cbdnet.training import train, training_targets, to_tensor
from conftest import record_acceptance
from oracles import brute_force_ssim, invert_alpha, invert_haze

WEATHER = ("rain_streak", "snow", "haze", "raindrop")


# ------------------------------------------------------------------ 1


def test_criterion_01_partition_exactness():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    failures = 0
    for k in range(1000):
        c_d = (20, 40)[k % 2]
        n = c_d // 4
        f = torch.as_tensor(rng.standard_normal((1, c_d, 8, 8)), dtype=torch.float32)
        if not torch.equal(torch.cat(decompose(f, n), dim=1), f):
            failures += 1
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 10
    record_acceptance(1, ok, f"{1000 - failures}/1000 bit-exact, {elapsed:.2f}s")
    assert ok


# ------------------------------------------------------------------ 2


def test_criterion_02_recombination_algebra():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    basis_bad, worst, worst_abs = 0, 0.0, 0.0
    for k in range(1000):
        n = (5, 10)[k % 2]
        feats = [torch.as_tensor(rng.standard_normal((1, 4, 8, 8)), dtype=torch.float32)
                 for _ in range(n)]
        i = int(rng.integers(n))
        if not torch.equal(recombine(feats, torch.eye(n)[i]), feats[i]):
            basis_bad += 1
        u = torch.as_tensor(rng.random(n), dtype=torch.float32)
        w = torch.as_tensor(rng.random(n), dtype=torch.float32)
        lhs = recombine(feats, u + w)
        rhs = recombine(feats, u) + recombine(feats, w)
        # float32 spacing near 10 is about 1e-6, so each element's error is
        # scaled by the magnitude of its terms, sum |v_i f_i| (at least 1)
        scale = recombine([f.abs() for f in feats], (u + w).abs()).clamp(min=1.0)
        err = (lhs - rhs).abs() / scale
        worst = max(worst, err.max().item())
        worst_abs = max(worst_abs, (lhs - rhs).abs().max().item())
    elapsed = time.perf_counter() - start
    ok = basis_bad == 0 and worst <= 1e-6 and elapsed < 10
    record_acceptance(2, ok, f"basis mismatches {basis_bad}, max linearity error {worst:.2e} "
                             f"scaled by the term magnitude ({worst_abs:.2e} absolute), "
                             f"{elapsed:.2f}s")
    assert ok


# ------------------------------------------------------------------ 3


def test_criterion_03_gradient_check():
    start = time.perf_counter()
    torch.manual_seed(3)
    cfg = tiny_config()
    model = CBDNet(cfg).double()
    extractor = RandomFilterPyramid(0).double().freeze()
    loss_cfg = load_config("tiny").loss
    case6 = [p for p in WEATHER_CASES if p.name == "case6"][0]
    from cbdnet.compositor import make_sample
    sample = make_sample(33, case6.kinds, (16, 16), cfg.components, case6.generator_cfgs())
    u = sample_subset(sample.presence, np.random.default_rng(3))
    x = to_tensor(sample.input).double()
    targets = training_targets(sample, u).double()
    presence = torch.as_tensor(sample.presence[None])
    v = torch.as_tensor(u)

    def loss_fn():
        outputs, logits = model.forward_all(x, v)
        return total_loss(outputs, targets, logits, presence, extractor, loss_cfg)

    model.zero_grad()
    loss_fn().backward()
    params = [p for p in model.parameters()]
    sizes = np.array([p.numel() for p in params])
    rng = np.random.default_rng(3)
    flat = rng.choice(sizes.sum(), size=200, replace=False)
    bounds = np.cumsum(sizes)
    h = 1e-5
    rel = []
    with torch.no_grad():
        for idx in flat:
            t = int(np.searchsorted(bounds, idx, side="right"))
            off = int(idx - (bounds[t - 1] if t else 0))
            p = params[t].view(-1)
            analytic = params[t].grad.view(-1)[off].item()
            old = p[off].item()
            p[off] = old + h
            up = loss_fn().item()
            p[off] = old - h
            down = loss_fn().item()
            p[off] = old
            numeric = (up - down) / (2 * h)
            scale = max(abs(analytic), abs(numeric))
            rel.append(0.0 if scale == 0 else abs(analytic - numeric) / scale)
    rel = np.array(rel)
    frac = float(np.mean(rel <= 1e-3))
    elapsed = time.perf_counter() - start
    ok = frac >= 0.95 and elapsed < 300
    record_acceptance(3, ok, f"{frac:.1%} of 200 coordinates within 1e-3 "
                             f"(median rel err {np.median(rel):.1e}), {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 4


def test_criterion_04_compositor_inversion():
    rng = np.random.default_rng(4)
    haze_err, wm_err = 0.0, 0.0
    for k in range(100):
        scene = random_scene(int(rng.integers(2 ** 32)), (64, 64))
        severity = sorted(HAZE_SEVERITY)[k % 3]
        layer = synth_mask("haze", int(rng.integers(2 ** 32)), (64, 64), {"severity": severity})
        hazy = compose(scene, CompositeSpec(k, [layer])).input
        t = layer.params["transmission"]
        ok_px = t >= 0.05
        rec = invert_haze(hazy, t, layer.payload)
        haze_err = max(haze_err, np.abs(rec - scene)[ok_px].max())

        layer = synth_mask("watermark", int(rng.integers(2 ** 32)), (64, 64))
        marked = compose(scene, CompositeSpec(k, [layer])).input
        cover = layer.params["alpha"] * layer.mask
        ok_px = cover[..., 0] <= 0.99
        rec = invert_alpha(marked, cover, layer.payload)
        wm_err = max(wm_err, np.abs(rec - scene)[ok_px].max())
    ok = haze_err <= 1e-6 and wm_err <= 1e-6
    record_acceptance(4, ok, f"max haze error {haze_err:.1e}, max watermark error {wm_err:.1e}")
    assert ok


# ------------------------------------------------------------------ 5


def test_criterion_05_metric_oracles():
    rng = np.random.default_rng(5)
    psnr_err = 0.0
    for k in range(50):
        a = rng.random((32, 32, 3))
        b = np.clip(a + rng.uniform(0.001, 0.3) * rng.standard_normal(a.shape), 0, 1)
        mse = math.fsum(((a - b) ** 2).ravel()) / a.size
        psnr_err = max(psnr_err, abs(psnr(a, b) - 10 * math.log10(1 / mse)))
    identical = all(ssim(x, x) == 1.0 for x in rng.random((10, 32, 32, 3)))
    ssim_err = 0.0
    for _ in range(50):
        a = rng.random((32, 32, 3))
        b = np.clip(a + rng.uniform(0.01, 0.5) * rng.standard_normal(a.shape), 0, 1)
        ssim_err = max(ssim_err, abs(ssim(a, b) - brute_force_ssim(a, b)))
    ok = psnr_err <= 1e-9 and identical and ssim_err <= 1e-6
    record_acceptance(5, ok, f"psnr error {psnr_err:.1e}, ssim(x,x)==1: {identical}, "
                             f"ssim oracle error {ssim_err:.1e}")
    assert ok


# ------------------------------------------------------------------ 6


def test_criterion_06_prompt_suite():
    suite = [json.loads(line) for line in resources.files("cbdnet").joinpath(
        "data/prompt_suite.jsonl").read_text("utf-8").splitlines()]
    vocab = load_vocabulary()
    exact = 0
    for row in suite:
        pres = np.array([1.0 if c in row["present"] else 0.0 for c in ALL_COMPONENTS])
        v = parse_prompt(row["prompt"], pres, vocab)
        exact += [c for c, x in zip(ALL_COMPONENTS, v) if x] == row["expected"]
    texts = {row["prompt"] for row in suite}
    covered = all(p.prompt in texts for p in PROMPT_CASES + STYLE_PROMPTS) and "" in texts
    ok = len(suite) >= 60 and exact == len(suite) and covered
    record_acceptance(6, ok, f"{exact}/{len(suite)} exact, preset prompts and the "
                             f"empty prompt covered: {covered}")
    assert ok


# ------------------------------------------------------------------ 7 and 8


@pytest.fixture(scope="module")
def overfit_run():
    cfg = load_config("desk")
    source = SampleSource(cfg, on_the_fly=True)
    start = time.perf_counter()
    result = train(cfg, source)
    minutes = (time.perf_counter() - start) / 60
    return cfg, source, Restorer(result.model), minutes


def test_criterion_07_overfit(overfit_run):
    cfg, source, restorer, minutes = overfit_run
    clean, comp, acc = [], [], []
    for i in range(len(source)):
        s = source[i]
        decodes = restorer.reconstruct_components(s.input)
        clean.append(psnr(decodes[0], s.scene))
        for k, kind in enumerate(cfg.components[1:], start=1):
            if s.presence[k]:
                comp.append(psnr(decodes[k], s.truth(kind)))
        probs, _ = restorer.classify(s.input)
        acc.append(np.mean((probs > 0.5) == (s.presence > 0.5)))
    clean_m, comp_m, acc_m = np.mean(clean), np.mean(comp), np.mean(acc)
    ok = minutes <= 30 and clean_m >= 28 and comp_m >= 20 and acc_m >= 0.95
    record_acceptance(7, ok, f"{len(source)} samples, {minutes:.1f} min: clean {clean_m:.2f} dB, "
                             f"components {comp_m:.2f} dB, presence accuracy {acc_m:.1%}")
    assert ok


def test_criterion_08_controllability(overfit_run):
    cfg, source, restorer, _ = overfit_run
    vocab = load_vocabulary()
    lines, ok = [], True
    for kind in WEATHER:
        prompt = f"remove {vocab.display_name(kind)}"
        gains_out, gains_in = [], []
        for i in range(len(source)):
            s = source[i]
            if not s.presence[cfg.components.index(kind)]:
                continue
            v = parse_prompt(prompt, s.presence, vocab, cfg.components)
            target = render_target(s, v)
            out, _ = restorer.predict_selection(s.input, v)
            gains_out.append(psnr(out, target))
            gains_in.append(psnr(s.input, target))
        margin = np.mean(gains_out) - np.mean(gains_in)
        ok &= margin >= 3.0
        lines.append(f"'{prompt}' {np.mean(gains_out):.2f} vs input {np.mean(gains_in):.2f} "
                     f"({len(gains_out)} samples)")
    record_acceptance(8, ok, "; ".join(lines))
    assert ok


# ------------------------------------------------------------------ 9


def test_criterion_09_parameter_count():
    model = CBDNet(paper_full_config())
    total = count_parameters(model)
    free = count_parameters(model.decomposition) + count_parameters(model.recombination)
    ok = 1_100_000 <= total <= 1_500_000 and free == 0
    record_acceptance(9, ok, f"paper_full {total:,} parameters, decompose+recombine {free}")
    assert ok


# ------------------------------------------------------------------ 10


def _seeded_pipeline(root):
    cfg = load_config("desk")
    cfg.dataset.count = 3
    cfg.optimizer.epochs = 1
    path = root / "run.yaml"
    path.write_text(dump_config(cfg))
    data, run = root / "data", root / "run"
    assert main(["generate", "--config", str(path), "--out", str(data)]) == 0
    valid = main(["validate", "--config", str(path), "--out", str(data)]) == 0
    source = SampleSource(cfg, data)
    result = train(cfg, source, run)
    image = data / source.records[0].input
    out = root / "restored.png"
    assert main(["restore", "--checkpoint", result.checkpoints[-1], str(image), "--prompt",
                 "remove the rain", "--all-components", "--out", str(out)]) == 0
    restored = {p.name: p.read_bytes() for p in sorted(root.glob("restored*.png"))}
    files = {p.name: p.read_bytes() for p in sorted(data.iterdir())}
    return valid, files, result.first_loss, restored


def test_criterion_10_determinism(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    va, fa, la, ra = _seeded_pipeline(tmp_path / "a")
    vb, fb, lb, rb = _seeded_pipeline(tmp_path / "b")
    same_files = fa == fb
    same_restore = ra == rb and len(ra) == 1 + 5
    ok = va and vb and same_files and abs(la - lb) <= 1e-6 and same_restore
    record_acceptance(10, ok, f"validate {va and vb}, identical dataset files {same_files}, "
                              f"first-step losses {la:.8f}/{lb:.8f}, identical restores "
                              f"{same_restore}")
    assert ok
