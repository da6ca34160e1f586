"""Single-file checkpoint container.

Layout (little-endian)::

    magic      8 bytes   b"CBDNETCK"
    version    u32
    cfg hash   32 bytes  sha256 of the canonical model-config JSON
    meta       u32 length + UTF-8 JSON (model config, epoch, extra state)
    n_blocks   u32
    block      u16 name length, name, u8 ndim, ndim x u64 dims,
               prod(dims) x float64 values

Blocks are written in sorted name order so identical state always produces
identical bytes.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import torch

from .model import CBDNet, ModelConfig

MAGIC = b"CBDNETCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    blocks: Dict[str, np.ndarray]
    epoch: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        return self.model_config.config_hash()

    def param_blocks(self, prefix):
        n = len(prefix)
        return {k[n:]: v for k, v in self.blocks.items() if k.startswith(prefix)}

    def load_into(self, model):
        if model.cfg.config_hash() != self.config_hash:
            raise CheckpointError("checkpoint config hash mismatch: checkpoint "
                                  f"{self.config_hash[:12]} vs model {model.cfg.config_hash()[:12]}")
        state = model.state_dict()
        params = self.param_blocks("param/")
        if set(params) != set(state):
            missing = sorted(set(state) ^ set(params))
            raise CheckpointError(f"parameter blocks do not match the model: {missing[:5]}")
        model.load_state_dict({k: torch.as_tensor(params[k]).to(state[k].dtype).reshape(state[k].shape)
                               for k in state})
        return model

    def build_model(self):
        return self.load_into(CBDNet(self.model_config))


def model_blocks(model):
    return {f"param/{k}": v.detach().cpu().double().numpy() for k, v in model.state_dict().items()}


def optimizer_blocks(model, optimizer):
    names = {id(p): n for n, p in model.named_parameters()}
    out = {}
    for p, st in optimizer.state.items():
        for key, val in st.items():
            out[f"optim/{names[id(p)]}/{key}"] = torch.as_tensor(val).detach().double().numpy()
    return out


def restore_optimizer(ckpt, model, optimizer):
    blocks = ckpt.param_blocks("optim/")
    for name, p in model.named_parameters():
        st = {}
        for key in ("step", "exp_avg", "exp_avg_sq"):
            arr = blocks.get(f"{name}/{key}")
            if arr is not None:
                dtype = torch.float32 if key == "step" else p.dtype
                st[key] = torch.as_tensor(arr).to(dtype).reshape(() if key == "step" else p.shape)
        if st:
            optimizer.state[p] = st


def _pack_str(s, fmt):
    b = s.encode("utf-8")
    return struct.pack(fmt, len(b)) + b


def dumps(ckpt):
    cfg = ckpt.model_config.to_dict()
    meta = json.dumps({"model_config": cfg, "epoch": int(ckpt.epoch), "extra": ckpt.meta},
                      sort_keys=True, separators=(",", ":"))
    parts = [MAGIC, struct.pack("<I", VERSION), bytes.fromhex(ckpt.config_hash),
             _pack_str(meta, "<I"), struct.pack("<I", len(ckpt.blocks))]
    for name in sorted(ckpt.blocks):
        arr = np.ascontiguousarray(ckpt.blocks[name], dtype="<f8")
        parts.append(_pack_str(name, "<H"))
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(data):
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    stored_hash = bytes(view[12:44]).hex()
    pos = 44
    (n,) = struct.unpack_from("<I", view, pos)
    pos += 4
    meta = json.loads(bytes(view[pos:pos + n]).decode("utf-8"))
    pos += n
    cfg = ModelConfig(**meta["model_config"])
    if cfg.config_hash() != stored_hash:
        raise CheckpointError("checkpoint config hash does not match its stored config")
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    blocks = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + ln]).decode("utf-8")
        pos += ln
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        blocks[name] = np.frombuffer(view[pos:pos + 8 * size], dtype="<f8").reshape(shape).copy()
        pos += 8 * size
    if pos != len(view):
        raise CheckpointError("trailing bytes after the last block")
    return Checkpoint(cfg, blocks, meta["epoch"], meta["extra"])


def save(path, ckpt):
    data = dumps(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load(path, expected_config=None):
    with open(path, "rb") as fh:
        ckpt = loads(fh.read())
    if expected_config is not None and expected_config.config_hash() != ckpt.config_hash:
        raise CheckpointError("checkpoint config hash mismatch")
    return ckpt


def from_model(model, optimizer=None, epoch=0, meta=None):
    blocks = model_blocks(model)
    if optimizer is not None:
        blocks.update(optimizer_blocks(model, optimizer))
    return Checkpoint(model.cfg, blocks, epoch, dict(meta or {}))
