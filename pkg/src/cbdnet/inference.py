"""Restoration, source classification and evaluation with a trained model."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from .compositor import make_sample, mix_seed
from ._validation import check_image
from .metrics import evaluate_cases, format_reports
from .prompt import describe_sources, load_vocabulary, parse_prompt


@dataclass
class Restoration:
    output: np.ndarray
    selection: np.ndarray
    probabilities: np.ndarray
    description: str
    components: Dict[str, np.ndarray] = field(default_factory=dict)


def pad_to_multiple(img, s):
    """Reflect-pad the bottom and right edges up to a multiple of ``s``."""
    h, w = img.shape[:2]
    ph, pw = (-h) % s, (-w) % s
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")


class Restorer:
    """Runs a trained CBDNet on single images."""

    def __init__(self, model, vocabulary=None):
        self.model = model.eval()
        self.vocab = vocabulary or load_vocabulary()
        self.components = tuple(model.cfg.components)

    def _features(self, img):
        img = check_image(img, "input image")
        padded = pad_to_multiple(img, self.model.cfg.downsample_factor)
        x = torch.as_tensor(np.ascontiguousarray(padded.transpose(2, 0, 1)),
                            dtype=torch.float32)[None]
        with torch.no_grad():
            feats = self.model.components(x)
            probs = torch.sigmoid(self.model.classifier(feats))[0].double().numpy()
        return feats, probs, img.shape[:2]

    def _decode(self, feats, vectors, hw):
        with torch.no_grad():
            out = self.model.decode_many(feats, torch.as_tensor(np.asarray(vectors)))[0]
        h, w = hw
        return out[:, :, :h, :w].double().numpy().transpose(0, 2, 3, 1)

    def classify(self, img):
        """Predicted presence probabilities V_s and their text description."""
        _, probs, _ = self._features(img)
        return probs, describe_sources(probs, self.vocab, self.components)

    def restore(self, img, prompt="", all_components=False):
        feats, probs, hw = self._features(img)
        presence = (probs > 0.5).astype(float)
        presence[0] = 1.0  # the scene is part of every input
        v = parse_prompt(prompt, presence, self.vocab, self.components)
        vectors = [v]
        if all_components:
            vectors += list(np.eye(len(self.components)))
        decoded = self._decode(feats, np.stack(vectors), hw)
        comps = {c: decoded[1 + k] for k, c in enumerate(self.components)} if all_components else {}
        return Restoration(decoded[0], v, probs,
                           describe_sources(probs, self.vocab, self.components), comps)

    def reconstruct_components(self, img):
        """(N, H, W, 3) array with one decode per component."""
        feats, _, hw = self._features(img)
        return self._decode(feats, np.eye(len(self.components)), hw)

    def predict_selection(self, img, selection):
        """Decode a given selection vector; also return V_s."""
        feats, probs, hw = self._features(img)
        return self._decode(feats, np.asarray(selection, dtype=float)[None], hw)[0], probs


def preset_cases(presets, n_per_case, seed, size, components):
    """Fresh evaluation samples for each preset, keyed by preset name."""
    cases = {}
    for ci, preset in enumerate(presets):
        missing = [k for k in preset.kinds if k not in components]
        if missing:
            raise ValueError(f"preset {preset.name} uses kinds {missing} that the model's "
                             f"N={len(components)} components do not include")
        cases[preset.name] = [make_sample(mix_seed(seed, ci, j), preset.kinds, size, components,
                                          preset.generator_cfgs())
                              for j in range(n_per_case)]
    return cases


def manifest_cases(source):
    """Group a ``SampleSource`` by the case label of each record."""
    from .data import build_sample

    cases = {}
    for i in range(len(source)):
        label = (source.records[i].case if not source.on_the_fly else
                 build_sample(source.cfg.dataset, source.cfg.components, i)[1])
        cases.setdefault(label, []).append(source[i])
    return cases


def prompt_selector(presets, vocab=None):
    """``selection_for`` that parses each preset's prompt against true presence."""
    by_name = {p.name: p for p in presets}
    vocab = vocab or load_vocabulary()

    def select(case_id, sample):
        preset = by_name.get(case_id)
        text = preset.prompt if preset is not None else ""
        return parse_prompt(text, sample.presence, vocab, sample.components)

    return select


def evaluate(restorer, cases, presets=(), out_dir=None):
    """Score ``restorer`` on grouped samples and optionally write report files."""
    reports = evaluate_cases(lambda s, v: restorer.predict_selection(s.input, v), cases,
                             prompt_selector(presets, restorer.vocab))
    if out_dir is not None:
        write_reports(reports, out_dir)
    return reports


def write_reports(reports, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(format_reports(reports) + "\n", encoding="utf-8")
    with open(out / "report.jsonl", "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.as_record(), sort_keys=True) + "\n")
    with open(out / "samples.jsonl", "w", encoding="utf-8") as fh:
        for r in reports:
            for rec in r.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
