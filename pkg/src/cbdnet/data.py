"""Dataset generation, manifests and validation.

A dataset directory holds PNG files plus ``manifest.jsonl``. The first line
of the manifest is a schema header; each further line describes one sample.
Every record can be regenerated from the dataset seed and its index, which
is what ``validate_dataset`` checks.
"""

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .compositor import (CompositeSample, merge_cfg, make_sample, mix_seed, read_png,
                         write_png)
from ._validation import check_size
from .presets import get_presets

SCHEMA = "cbdnet-manifest"
SCHEMA_VERSION = 1
MANIFEST = "manifest.jsonl"


@dataclass
class ManifestRecord:
    id: int
    seed: int
    case: str
    kinds: List[str]
    presence: List[float]
    input: str
    scene: str
    truths: Dict[str, str]

    def to_json(self):
        return json.dumps(self.__dict__, sort_keys=True, separators=(",", ":"))


def _case_pool(dataset_cfg, components):
    presets = get_presets(dataset_cfg.cases)
    if not presets:
        raise ValueError("dataset.cases selects no presets")
    for p in presets:
        extra = [k for k in p.kinds if k not in components]
        if extra:
            raise ValueError(f"case {p.name} uses kinds {extra} the model does not have "
                             f"(components: {list(components)})")
    weights = dataset_cfg.case_weights
    if weights is None:
        weights = np.full(len(presets), 1.0 / len(presets))
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(presets),) or np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError(f"case_weights must be {len(presets)} non-negative numbers")
        weights = weights / weights.sum()
    return presets, weights


def sample_plan(dataset_cfg, components, index):
    """(seed, preset, generator cfgs) for sample ``index`` of a dataset."""
    presets, weights = _case_pool(dataset_cfg, components)
    seed = mix_seed(dataset_cfg.seed, index)
    pick = int(np.random.default_rng([seed, 1]).choice(len(presets), p=weights))
    preset = presets[pick]
    cfgs = {}
    for kind in preset.kinds:
        opts = dict(dataset_cfg.generator.get(kind, {}))
        opts.update(preset.generator_cfgs().get(kind, {}))
        if opts:
            cfgs[kind] = merge_cfg(kind, opts)
    return seed, preset, cfgs


def build_sample(dataset_cfg, components, index):
    """Regenerate sample ``index`` in memory at full precision."""
    seed, preset, cfgs = sample_plan(dataset_cfg, components, index)
    size = check_size(tuple(dataset_cfg.size))
    return make_sample(seed, preset.kinds, size, components, cfgs), preset.name


def _header(cfg):
    return json.dumps({"schema": SCHEMA, "version": SCHEMA_VERSION,
                       "components": list(cfg.components),
                       "dataset": cfg.to_dict()["dataset"]},
                      sort_keys=True, separators=(",", ":"))


def generate_dataset(cfg, out_dir):
    """Write PNGs and the manifest for ``cfg.dataset``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory is not writable: {out}")
    components = cfg.components
    lines = [_header(cfg)]
    for i in range(cfg.dataset.count):
        sample, case = build_sample(cfg.dataset, components, i)
        stem = f"{i:06d}"
        rec = ManifestRecord(
            id=i, seed=int(sample.spec.seed), case=case,
            kinds=[layer.kind for layer in sample.spec.layers],
            presence=[float(p) for p in sample.presence],
            input=f"{stem}_input.png", scene=f"{stem}_scene.png",
            truths={k: f"{stem}_{k}.png" for k in sample.component_truths})
        write_png(out / rec.input, sample.input)
        write_png(out / rec.scene, sample.scene)
        for kind, name in rec.truths.items():
            write_png(out / name, sample.component_truths[kind])
        lines.append(rec.to_json())
    path = out / MANIFEST
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path):
    """Return (header dict, list of ManifestRecord)."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path} is empty (missing schema header)")
    header = json.loads(lines[0])
    if header.get("schema") != SCHEMA or header.get("version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported manifest header {header}")
    records = [ManifestRecord(**json.loads(line)) for line in lines[1:] if line.strip()]
    return header, records


def _quantize(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def validate_dataset(cfg, data_dir):
    """Regenerate every record and diff it against the stored PNGs.

    Returns a list of problem strings; an empty list means the dataset is valid.
    """
    data_dir = Path(data_dir)
    header, records = read_manifest(data_dir)
    problems = []
    if header["components"] != list(cfg.components):
        problems.append(f"manifest components {header['components']} != config "
                        f"{list(cfg.components)}")
        return problems
    if len(records) != cfg.dataset.count:
        problems.append(f"manifest has {len(records)} records, config expects {cfg.dataset.count}")
    for rec in records:
        sample, case = build_sample(cfg.dataset, cfg.components, rec.id)
        if rec.seed != sample.spec.seed or rec.case != case:
            problems.append(f"sample {rec.id}: seed/case do not match regeneration")
            continue
        if rec.presence != [float(p) for p in sample.presence]:
            problems.append(f"sample {rec.id}: presence differs from regeneration")
        pairs = [(rec.input, sample.input), (rec.scene, sample.scene)]
        pairs += [(name, sample.component_truths.get(kind)) for kind, name in rec.truths.items()]
        for name, expected in pairs:
            path = data_dir / name
            if expected is None:
                problems.append(f"sample {rec.id}: {name} has no regenerated counterpart")
            elif not path.exists():
                problems.append(f"sample {rec.id}: missing file {name}")
            elif not np.array_equal(_quantize(read_png(path)), _quantize(expected)):
                problems.append(f"sample {rec.id}: pixels of {name} differ from regeneration")
    return problems


class SampleSource:
    """Training samples for a manifest, from disk or regenerated on the fly.

    Disk samples take their images from the PNGs; the layer stack used for
    mixed targets is always regenerated from the record's seed.
    """

    def __init__(self, cfg, data_dir=None, on_the_fly=False):
        self.cfg = cfg
        self.on_the_fly = on_the_fly
        if on_the_fly:
            self.records = list(range(cfg.dataset.count))
            self.data_dir = None
        else:
            if data_dir is None:
                raise ValueError("a data directory is required unless on_the_fly is set")
            self.data_dir = Path(data_dir)
            header, recs = read_manifest(self.data_dir)
            if header["components"] != list(cfg.components):
                raise ValueError(f"manifest components {header['components']} do not match "
                                 f"the model's {list(cfg.components)}")
            self.records = recs
        self._cache = {}

    def __len__(self):
        return len(self.records)

    def sample_id(self, i):
        rec = self.records[i]
        return rec if isinstance(rec, int) else rec.id

    def __getitem__(self, i):
        if i not in self._cache:
            self._cache[i] = self._load(i)
        return self._cache[i]

    def _load(self, i):
        sample, _ = build_sample(self.cfg.dataset, self.cfg.components, self.sample_id(i))
        if self.on_the_fly:
            return sample
        rec = self.records[i]
        d = self.data_dir
        return CompositeSample(
            input=read_png(d / rec.input), scene=read_png(d / rec.scene),
            component_truths={k: read_png(d / name) for k, name in rec.truths.items()},
            presence=np.asarray(rec.presence, dtype=float), spec=sample.spec)
