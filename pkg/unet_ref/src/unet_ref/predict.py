"""Prediction-series export in the benchmark's interop layout: one JSON
header line, then per-step row-major little-endian float32 field tensors
in model space. Static checkpoints predict every requested step
independently; auto-regressive checkpoints run a closed-loop rollout
seeded with the true t=0 field."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .data import (
    Bundle,
    assemble_input,
    distance_channel,
    load_bundle,
    normalize,
    target_field,
)
from .model import UNet
from .training import load_checkpoint


def _json_line(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"


def prediction_filename(target: str, mode: str, sim_id: int) -> str:
    return f"pred_{target}_{mode}_{sim_id:04d}.pred"


def write_prediction(path, sim_id: int, mode: str, target: str,
                     steps: list[int], fields: np.ndarray) -> None:
    header = {
        "format": "uhs-pred",
        "version": 1,
        "sim_id": int(sim_id),
        "mode": mode,
        "target": target,
        "steps": [int(s) for s in steps],
        "resolution": [int(fields.shape[1]), int(fields.shape[2])],
        "space": "model",
    }
    with open(path, "wb") as f:
        f.write(_json_line(header))
        f.write(np.ascontiguousarray(fields, "<f4").tobytes())


@torch.no_grad()
def predict_series(model: UNet, bundle: Bundle, sim_id: int, mode: str,
                   target: str, steps: list[int]) -> np.ndarray:
    rec = bundle.records[sim_id]
    ny, nx = bundle.resolution
    if mode == "static":
        x = np.stack([assemble_input(bundle, rec, s, "static", target)
                      for s in steps])
        return model(torch.from_numpy(x)).numpy()
    if list(steps) != list(range(1, len(steps) + 1)):
        raise ValueError("auto-regressive rollout needs contiguous steps from 1")
    base = np.empty((3, ny, nx), dtype=np.float32)
    base[0] = normalize(bundle, "porosity", rec.porosity)
    base[1] = normalize(bundle, "permeability", rec.permeability)
    base[2] = distance_channel(ny, nx)
    prev = target_field(bundle, rec, 0, target)
    out = np.empty((len(steps), ny, nx), dtype=np.float32)
    x = np.empty((1, 5, ny, nx), dtype=np.float32)
    for i, s in enumerate(steps):
        x[0, :3] = base
        x[0, 3] = float(bundle.cycle_indicator(s))
        x[0, 4] = prev
        pred = model(torch.from_numpy(x)).numpy()[0]
        if not np.all(np.isfinite(pred)):
            raise RuntimeError(f"non-finite prediction at rollout step {s}")
        out[i] = pred
        prev = pred
    return out


def ref_predict(checkpoint_path, dataset_path, sim_ids: list[int] | None,
                steps: list[int] | None, out_dir) -> list[Path]:
    """Write one prediction file per simulation; returns the paths."""
    model, meta = load_checkpoint(checkpoint_path)
    bundle = load_bundle(dataset_path)
    if sim_ids is None:
        sim_ids = bundle.splits["val"]
    if steps is None:
        steps = list(range(1, bundle.n_steps + 1))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mode, target = meta["mode"], meta["target"]
    paths = []
    for sim_id in sim_ids:
        fields = predict_series(model, bundle, sim_id, mode, target, steps)
        path = out_dir / prediction_filename(target, mode, sim_id)
        write_prediction(path, sim_id, mode, target, steps, fields)
        paths.append(path)
    return paths
