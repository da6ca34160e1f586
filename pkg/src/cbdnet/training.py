"""Training loop with per-epoch checkpoints.

One optimizer step per sample (batch 1) unless ``grad_accumulation`` is
raised. The learning rate follows a cosine from ``lr`` down to zero over
all optimizer steps of the run.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .compositor import render_target
from .losses import RandomFilterPyramid, loss_terms
from .model import CBDNet, sample_subset


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: CBDNet
    history: List[dict] = field(default_factory=list)
    first_loss: Optional[float] = None
    checkpoints: List[str] = field(default_factory=list)


def cosine_lr(base, step, total):
    """Learning rate after ``step`` of ``total`` optimizer steps."""
    if total <= 0:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * min(step, total) / total))


def scheduled_lr(opt_cfg, step, total):
    if opt_cfg.schedule == "constant":
        return opt_cfg.lr
    return cosine_lr(opt_cfg.lr, step, total)


def to_tensor(img):
    """HxWx3 float array to a 1x3xHxW float32 tensor."""
    return torch.as_tensor(np.ascontiguousarray(np.asarray(img).transpose(2, 0, 1)),
                           dtype=torch.float32)[None]


def training_targets(sample, u):
    """(1, N+1, 3, H, W) targets: component truths, then the mixed image for ``u``."""
    imgs = sample.targets() + [render_target(sample, u)]
    return torch.as_tensor(np.stack(imgs).transpose(0, 3, 1, 2), dtype=torch.float32)[None]


def _rng_meta(rng):
    return {"numpy_bit_generator": rng.bit_generator.state}


def _set_lr(optimizer, lr):
    for group in optimizer.param_groups:
        group["lr"] = lr


def train(cfg, source, run_dir=None, log=None, resume=None):
    """Train ``CBDNet(cfg.model)`` on ``source`` (a ``SampleSource``).

    Writes ``epoch_XXXX.ckpt`` files and ``train_log.jsonl`` into ``run_dir``
    when it is given. ``resume`` is a checkpoint path saved by an earlier run
    of the same config.
    """
    opt_cfg = cfg.optimizer
    if len(source) == 0:
        raise ValueError("training set is empty")
    torch.manual_seed(opt_cfg.seed)
    rng = np.random.default_rng(opt_cfg.seed)
    model = CBDNet(cfg.model)
    extractor = RandomFilterPyramid(cfg.loss.extractor_seed).freeze()
    optimizer = torch.optim.Adam(model.parameters(), lr=opt_cfg.lr,
                                 betas=(opt_cfg.beta1, opt_cfg.beta2))
    accum = opt_cfg.grad_accumulation
    steps_per_epoch = math.ceil(len(source) / accum)
    total_steps = steps_per_epoch * opt_cfg.epochs
    start_epoch, step = 0, 0
    if resume is not None:
        state = ckpt_io.load(resume, cfg.model)
        state.load_into(model)
        ckpt_io.restore_optimizer(state, model, optimizer)
        start_epoch = state.epoch
        step = state.meta["step"]
        rng.bit_generator.state = state.meta["rng"]["numpy_bit_generator"]
        torch.set_rng_state(torch.as_tensor(state.blocks["rng/torch"]).to(torch.uint8))

    run_path = Path(run_dir) if run_dir is not None else None
    if run_path is not None:
        run_path.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model)
    model.train()
    for epoch in range(start_epoch, opt_cfg.epochs):
        sums = {"total": 0.0, "texture": 0.0, "perceptual": 0.0, "bce": 0.0}
        order = rng.permutation(len(source))
        optimizer.zero_grad()
        for pos, i in enumerate(order):
            sample = source[int(i)]
            if rng.random() < opt_cfg.flip_prob:
                sample = sample.flipped()
            u = sample_subset(sample.presence, rng)
            outputs, logits = model.forward_all(to_tensor(sample.input), torch.as_tensor(u))
            terms = loss_terms(outputs, training_targets(sample, u), logits,
                               torch.as_tensor(sample.presence[None], dtype=torch.float32),
                               extractor, cfg.loss)
            loss = terms["texture"] + terms["perceptual"] + terms["bce"]
            if not torch.isfinite(loss):
                _dump_nan(run_path, source.sample_id(int(i)), epoch, terms)
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch} on sample "
                                    f"id {source.sample_id(int(i))}")
            if result.first_loss is None:
                result.first_loss = float(loss.item())
            (loss / accum).backward()
            for k, v in terms.items():
                sums[k] += float(v.item())
            sums["total"] += float(loss.item())
            if (pos + 1) % accum == 0 or pos + 1 == len(order):
                _set_lr(optimizer, scheduled_lr(opt_cfg, step, total_steps))
                optimizer.step()
                optimizer.zero_grad()
                step += 1
        record = {"epoch": epoch + 1, "lr": scheduled_lr(opt_cfg, step, total_steps),
                  **{k: v / len(order) for k, v in sums.items()}}
        result.history.append(record)
        if log is not None:
            log(record)
        if run_path is not None:
            with open(run_path / "train_log.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            _save_epoch(run_path, model, optimizer, epoch + 1, step, rng,
                        opt_cfg.keep_checkpoints)
            result.checkpoints = [str(p) for p in sorted(run_path.glob("epoch_*.ckpt"))]
    model.eval()
    return result


def _save_epoch(run_path, model, optimizer, epoch, step, rng, keep):
    state = ckpt_io.from_model(model, optimizer, epoch,
                               {"step": step, "rng": _rng_meta(rng)})
    state.blocks["rng/torch"] = torch.get_rng_state().numpy().astype(np.float64)
    path = run_path / f"epoch_{epoch:04d}.ckpt"
    ckpt_io.save(path, state)
    old = sorted(run_path.glob("epoch_*.ckpt"))
    for stale in old[:-keep] if keep > 0 else []:
        stale.unlink()


def _dump_nan(run_path, sample_id, epoch, terms):
    if run_path is None:
        return
    info = {"sample_id": sample_id, "epoch": epoch,
            "terms": {k: float(v.item()) for k, v in terms.items()}}
    (run_path / "nan_dump.json").write_text(json.dumps(info, indent=2), encoding="utf-8")


def latest_checkpoint(run_dir):
    found = sorted(Path(run_dir).glob("epoch_*.ckpt"))
    if not found:
        raise FileNotFoundError(f"no checkpoints in {run_dir}")
    return found[-1]
