"""Standalone reader for `.uhsd` dataset containers.

Implements the documented container layout (magic "UHSD", u16 version,
u32 header length, JSON header, per-simulation float32 chunks each guarded
by a CRC-32) without depending on the producing package. The header
carries everything needed to assemble samples: the split manifest with the
temporal training boundary, training-split channel statistics, per-step
cycle indicators with their repeating block, and the static time divisor.

Channel orders (from the header, fixed):
    static : porosity, permeability, distance, cycle, time
    auto   : porosity, permeability, distance, cycle, previous target
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"UHSD"
VERSION = 1

MODES = ("static", "auto")
TARGETS = ("saturation", "pressure")
VIEWS = ("train", "val1", "val2", "val3", "test")


class UhsdError(Exception):
    pass


@dataclass
class Record:
    sim_id: int
    porosity: np.ndarray      # (R, R)
    permeability: np.ndarray  # (R, R)
    pressure: np.ndarray      # (T+1, R, R)
    saturation: np.ndarray    # (T+1, R, R)
    y_h2: np.ndarray          # (T+1, R, R)


@dataclass
class Bundle:
    resolution: tuple[int, int]
    n_steps: int
    t_train: int
    splits: dict[str, list[int]]        # train / val / test sim ids
    stats: dict[str, tuple[float, float]]
    cycle_indicators: list[int]
    cycle_block: list[int]
    time_divisor: int
    channels: dict[str, list[str]]
    records: dict[int, Record]

    def cycle_indicator(self, step: int) -> int:
        if step <= len(self.cycle_indicators):
            return self.cycle_indicators[step - 1]
        k = (step - len(self.cycle_indicators) - 1) % len(self.cycle_block)
        return self.cycle_block[k]

    def view(self, name: str) -> tuple[list[int], range]:
        early = range(1, self.t_train + 1)
        late = range(self.t_train + 1, self.n_steps + 1)
        table = {
            "train": (self.splits["train"], early),
            "val1": (self.splits["train"], late),
            "val2": (self.splits["val"], early),
            "val3": (self.splits["val"], late),
            "test": (self.splits["test"], range(1, self.n_steps + 1)),
        }
        if name not in table:
            raise ValueError(f"unknown view {name!r}")
        return table[name]


def _read_exact(f, n: int, what: str) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise UhsdError(f"truncated while reading {what}")
    return raw


def load_bundle(path) -> Bundle:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise UhsdError(f"{path}: not a UHSD file")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != VERSION:
            raise UhsdError(f"{path}: unsupported version {version}")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        header = json.loads(_read_exact(f, hlen, "header").decode("utf-8"))
        ny, nx = header["resolution"]
        n_snap = header["n_steps"] + 1
        cells = ny * nx
        chunk_len = 4 * (2 * cells + 3 * n_snap * cells)
        records: dict[int, Record] = {}
        for sim_id in header["sim_ids"]:
            chunk = _read_exact(f, chunk_len, f"simulation {sim_id}")
            (crc,) = struct.unpack("<I", _read_exact(f, 4, "checksum"))
            if zlib.crc32(chunk) != crc:
                raise UhsdError(f"{path}: checksum mismatch in simulation {sim_id}")
            arr = np.frombuffer(chunk, dtype="<f4")
            o = 0
            poro = arr[o:o + cells].reshape(ny, nx); o += cells
            perm = arr[o:o + cells].reshape(ny, nx); o += cells
            pres = arr[o:o + n_snap * cells].reshape(n_snap, ny, nx); o += n_snap * cells
            sat = arr[o:o + n_snap * cells].reshape(n_snap, ny, nx); o += n_snap * cells
            y = arr[o:].reshape(n_snap, ny, nx)
            records[int(sim_id)] = Record(int(sim_id), poro, perm, pres, sat, y)
    manifest = header["manifest"]
    return Bundle(
        resolution=(ny, nx),
        n_steps=int(header["n_steps"]),
        t_train=int(manifest["t_train"]),
        splits={"train": list(manifest["train"]), "val": list(manifest["val"]),
                "test": list(manifest["test"])},
        stats={k: tuple(v) for k, v in header["stats"].items()},
        cycle_indicators=list(header["cycle_indicators"]),
        cycle_block=list(header["cycle_block"]),
        time_divisor=int(header["time_divisor"]),
        channels=header["channels"],
        records=records,
    )


def distance_channel(ny: int, nx: int) -> np.ndarray:
    """1 at the central well cell, 0 at the farthest grid point."""
    wy, wx = ny // 2, nx // 2
    iy, ix = np.mgrid[0:ny, 0:nx]
    dist = np.hypot(ix - wx, iy - wy)
    return (1.0 - dist / dist.max()).astype(np.float32)


def normalize(bundle: Bundle, name: str, arr: np.ndarray) -> np.ndarray:
    mean, std = bundle.stats[name]
    return (arr.astype(np.float32) - np.float32(mean)) / np.float32(std)


def target_field(bundle: Bundle, record: Record, step: int, target: str) -> np.ndarray:
    """Target in model space: raw saturation or standardized pressure."""
    if target == "saturation":
        return record.saturation[step].astype(np.float32)
    return normalize(bundle, "pressure", record.pressure[step])


def assemble_input(bundle: Bundle, record: Record, step: int, mode: str,
                   target: str) -> np.ndarray:
    ny, nx = bundle.resolution
    x = np.empty((5, ny, nx), dtype=np.float32)
    x[0] = normalize(bundle, "porosity", record.porosity)
    x[1] = normalize(bundle, "permeability", record.permeability)
    x[2] = distance_channel(ny, nx)
    x[3] = float(bundle.cycle_indicator(step))
    if mode == "static":
        x[4] = step / bundle.time_divisor
    else:
        x[4] = target_field(bundle, record, step - 1, target)
    return x


def design_matrices(bundle: Bundle, view: str, mode: str, target: str
                    ) -> tuple[np.ndarray, np.ndarray]:
    sims, steps = bundle.view(view)
    xs, ys = [], []
    for sim_id in sims:
        rec = bundle.records[sim_id]
        for s in steps:
            xs.append(assemble_input(bundle, rec, s, mode, target))
            ys.append(target_field(bundle, rec, s, target))
    if not xs:
        raise UhsdError(f"view {view!r} is empty")
    return np.stack(xs), np.stack(ys)
