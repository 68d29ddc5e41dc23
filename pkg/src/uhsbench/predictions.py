"""Prediction-series files: the interop surface for external surrogates.

Layout mirrors the `.sim` framing: one JSON header line, then per-step
row-major little-endian binary32 field tensors in model space (pressure
normalized with the dataset statistics, saturation raw). The evaluator
scores these exactly like its own model outputs, so any trainer that
writes this layout can be compared by `uhs eval --predictions`.
"""
from __future__ import annotations

import numpy as np

from .utils import json_line, read_json_line, require

PRED_SUFFIX = ".pred"


def prediction_filename(target: str, mode: str, sim_id: int) -> str:
    return f"pred_{target}_{mode}_{sim_id:04d}{PRED_SUFFIX}"


def write_prediction(path, sim_id: int, mode: str, target: str,
                     steps: list[int], fields: np.ndarray) -> None:
    fields = np.asarray(fields)
    require(fields.ndim == 3 and fields.shape[0] == len(steps),
            "fields must be (n_steps, R, R) matching steps")
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
        f.write(json_line(header))
        f.write(np.ascontiguousarray(fields, "<f4").tobytes())


def read_prediction(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as f:
        header = read_json_line(f)
        require(header.get("format") == "uhs-pred" and header.get("version") == 1,
                f"{path}: not a version-1 uhs-pred file")
        ny, nx = header["resolution"]
        n = len(header["steps"])
        raw = f.read(4 * n * ny * nx)
        require(len(raw) == 4 * n * ny * nx, f"{path}: truncated prediction tensors")
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes")
        fields = np.frombuffer(raw, "<f4").reshape(n, ny, nx)
    return header, fields
