"""Checkpoints: manifest.json (config + tensor table) and params.bin (little-endian float64).

params.bin holds every parameter in manifest order followed by the buffers
(feature normalization, batch-norm running statistics).  When optimizer state
is saved, optim.bin holds Adam's first then second moments in parameter order.
Files are written to temporaries and renamed, so an interrupted save never
clobbers the previous checkpoint.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..numcore.optim import AdamState
from .network import ModelConfig, VioPoseModel

FORMAT = "viopose-checkpoint-1"


class CheckpointError(ValueError):
    pass


def _buffer_table(model: VioPoseModel) -> dict[str, np.ndarray]:
    out = {f"buffer.{k}": v for k, v in model.buffers.items()}
    for name, st in model.store.bn.items():
        out[f"bn.{name}.mean"] = st.mean
        out[f"bn.{name}.var"] = st.var
    return out


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(directory, model: VioPoseModel, adam: AdamState | None = None, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    params = model.params
    buffers = _buffer_table(model)
    manifest = {
        "format": FORMAT,
        "config": model.config.to_dict(),
        "params": [[n, list(p.shape)] for n, p in params.items()],
        "buffers": [[n, list(np.shape(b))] for n, b in buffers.items()],
        "bn_initialized": {n: st.initialized for n, st in model.store.bn.items()},
        "extra": extra or {},
    }
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                    for a in [p.data for p in params.values()] + list(buffers.values()))
    if adam is not None:
        manifest["optimizer"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
                                 "step": adam.step, "has_moments": bool(adam.m)}
        if adam.m:
            opt = b"".join(np.ascontiguousarray(src[n], dtype="<f8").tobytes()
                           for src in (adam.m, adam.v) for n in params)
            _atomic_write(d / "optim.bin", opt)
    _atomic_write(d / "params.bin", blob)
    _atomic_write(d / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True).encode())


def _read_f8(path: Path, count: int) -> np.ndarray:
    if not path.exists():
        raise CheckpointError(f"{path.name}: missing")
    raw = path.read_bytes()
    if len(raw) != 8 * count:
        raise CheckpointError(f"{path.name}: expected {8 * count} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def read_manifest(directory) -> dict:
    p = Path(directory) / "manifest.json"
    if not p.exists():
        raise CheckpointError(f"{p}: missing")
    m = json.loads(p.read_text())
    if m.get("format") != FORMAT:
        raise CheckpointError(f"{p}: unknown checkpoint format {m.get('format')!r}")
    return m


def load_checkpoint(directory) -> tuple[VioPoseModel, AdamState | None, dict]:
    d = Path(directory)
    m = read_manifest(d)
    model = VioPoseModel(ModelConfig.from_dict(m["config"]))
    params = model.params
    names = [n for n, _ in m["params"]]
    if names != list(params):
        raise CheckpointError("parameter table does not match the architecture in the stored config")
    for n, shape in m["params"]:
        if list(params[n].shape) != shape:
            raise CheckpointError(f"parameter {n}: stored shape {shape}, model has {list(params[n].shape)}")
    sizes = [int(np.prod(s)) for _, s in m["params"]] + [int(np.prod(s)) for _, s in m["buffers"]]
    flat = _read_f8(d / "params.bin", sum(sizes))
    off = 0
    for (n, shape), size in zip(m["params"], sizes):
        params[n].data = flat[off:off + size].reshape(shape).copy()
        off += size
    for (n, shape), size in zip(m["buffers"], sizes[len(m["params"]):]):
        arr = flat[off:off + size].reshape(shape).copy()
        off += size
        if n.startswith("buffer."):
            model.buffers[n[len("buffer."):]] = arr
        else:
            bn_name, stat = n[len("bn."):].rsplit(".", 1)
            setattr(model.store.bn[bn_name], stat, arr)
    for n, flag in m["bn_initialized"].items():
        model.store.bn[n].initialized = flag

    adam = None
    if "optimizer" in m:
        o = m["optimizer"]
        adam = AdamState(o["lr"], o["beta1"], o["beta2"], o["eps"], o["step"])
        if o["has_moments"]:
            total = sum(sizes[:len(m["params"])])
            mom = _read_f8(d / "optim.bin", 2 * total)
            off = 0
            for src in (adam.m, adam.v):
                for (n, shape), size in zip(m["params"], sizes):
                    src[n] = mom[off:off + size].reshape(shape).copy()
                    off += size
    return model, adam, m["extra"]
