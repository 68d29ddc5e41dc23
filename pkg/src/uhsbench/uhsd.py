"""The `.uhsd` dataset container.

Binary layout (all little-endian):

    magic  b"UHSD"
    u16    format version (currently 1)
    u32    JSON header length in bytes
    bytes  JSON header (UTF-8)
    then, per simulation in header order:
        float32 tensors, row-major, concatenated:
            porosity      (R*R)
            permeability  (R*R)
            pressure      ((T+1)*R*R)   bar
            saturation    ((T+1)*R*R)
            h2 fraction   ((T+1)*R*R)
        u32 CRC-32 of the chunk bytes

The header records the split manifest, training-split channel statistics,
the per-step cycle indicators with their repeating block, the static time
divisor and the source grid/schedule fingerprint. Readers verify the CRC
of every chunk; `read_header` returns the metadata without touching the
tensors.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    AUTO_CHANNELS,
    STATIC_CHANNELS,
    ChannelStats,
    SampleSpec,
    SimulationRecord,
    SplitManifest,
    assemble_sample,
    build_split_manifest,
    fit_stats,
    make_record,
)
from .geomodel import GeoModel
from .schedule import Schedule
from .simulator import SnapshotSeries
from .utils import require

MAGIC = b"UHSD"
VERSION = 1
UHSD_SUFFIX = ".uhsd"


class DatasetFormatError(Exception):
    """Malformed `.uhsd` file."""


class DatasetVersionError(DatasetFormatError):
    pass


class DatasetTruncatedError(DatasetFormatError):
    pass


class DatasetChecksumError(DatasetFormatError):
    pass


@dataclass
class DatasetBundle:
    """In-memory dataset: records plus everything needed to assemble samples."""

    manifest: SplitManifest
    stats: ChannelStats
    resolution: tuple[int, int]
    cycle_indicators: tuple[int, ...]   # steps 1..n_steps
    cycle_block: tuple[int, ...]        # repeating trailing cycle
    time_divisor: int
    source: dict = field(default_factory=dict)
    records: dict[int, SimulationRecord] | None = None

    @property
    def n_steps(self) -> int:
        return self.manifest.n_steps

    def cycle_indicator(self, step: int) -> int:
        """Cycle channel for any step >= 1, extending periodically."""
        require(step >= 1, "step must be >= 1")
        if step <= len(self.cycle_indicators):
            return self.cycle_indicators[step - 1]
        k = (step - len(self.cycle_indicators) - 1) % len(self.cycle_block)
        return self.cycle_block[k]

    def record(self, sim_id: int) -> SimulationRecord:
        require(self.records is not None, "bundle was loaded header-only")
        return self.records[sim_id]

    def sample(self, sim_id: int, step: int, spec: SampleSpec):
        return assemble_sample(self.record(sim_id), step, spec, self.stats,
                               self.cycle_indicator(step), self.time_divisor)

    def design_matrices(self, view: str, spec: SampleSpec
                        ) -> tuple[np.ndarray, np.ndarray, list[tuple[int, int]]]:
        """Stacked (X, Y, keys) for a split view; keys are (sim_id, step)."""
        sims, steps = self.manifest.view(view)
        xs, ys, keys = [], [], []
        for sim_id in sims:
            for s in steps:
                x, y = self.sample(sim_id, s, spec)
                xs.append(x)
                ys.append(y)
                keys.append((sim_id, s))
        require(len(xs) > 0, f"view {view!r} is empty")
        return np.stack(xs), np.stack(ys), keys


def build_dataset(geos: dict[int, GeoModel], series: dict[int, SnapshotSeries],
                  schedule: Schedule, output_interval: float, factor: int,
                  ratios: tuple[int, int, int] | None = None, seed: int = 0,
                  time_divisor: int | None = None) -> DatasetBundle:
    """Assemble a bundle from matched geo/series maps keyed by sim id."""
    require(set(geos) == set(series) and len(geos) > 0,
            "geo and series ids must match and be non-empty")
    sim_ids = sorted(geos)
    n_steps_set = {series[i].n_steps for i in sim_ids}
    require(len(n_steps_set) == 1, "all simulations must share the step count")
    n_steps = n_steps_set.pop()
    records = {i: make_record(i, geos[i], series[i], factor) for i in sim_ids}
    manifest = build_split_manifest(len(sim_ids), n_steps, ratios=ratios, seed=seed)
    # manifest indexes positions in sorted id order; remap to actual ids
    manifest = SplitManifest(
        train=tuple(sim_ids[i] for i in manifest.train),
        val=tuple(sim_ids[i] for i in manifest.val),
        test=tuple(sim_ids[i] for i in manifest.test),
        t_train=manifest.t_train, n_steps=manifest.n_steps)
    stats = fit_stats(records, manifest)
    from .dataset import cycle_indicator
    indicators = tuple(cycle_indicator(s, schedule, output_interval)
                       for s in range(1, n_steps + 1))
    # repeating block: indicators of one trailing cycle (inject+withdraw pair)
    per_stage = [s for s in schedule.stages if s.kind in ("inject_h2", "withdraw")]
    block_steps = round((per_stage[-2].duration + per_stage[-1].duration)
                        / output_interval) if len(per_stage) >= 2 else n_steps
    block = indicators[-block_steps:]
    res = records[sim_ids[0]].resolution
    source = {
        "grid": geos[sim_ids[0]].grid.to_dict(),
        "schedule_digest": schedule.digest(),
        "downsample_factor": factor,
        "output_interval": output_interval,
    }
    return DatasetBundle(manifest=manifest, stats=stats, resolution=res,
                         cycle_indicators=indicators, cycle_block=block,
                         time_divisor=time_divisor or n_steps, source=source,
                         records=records)


def _chunk_bytes(rec: SimulationRecord) -> bytes:
    parts = [np.ascontiguousarray(rec.porosity, "<f4").tobytes(),
             np.ascontiguousarray(rec.permeability, "<f4").tobytes(),
             np.ascontiguousarray(rec.pressure, "<f4").tobytes(),
             np.ascontiguousarray(rec.saturation, "<f4").tobytes(),
             np.ascontiguousarray(rec.y_h2, "<f4").tobytes()]
    return b"".join(parts)


def write_dataset(bundle: DatasetBundle, path) -> None:
    require(bundle.records is not None, "cannot write a header-only bundle")
    sim_ids = sorted(bundle.records)
    header = {
        "format": "uhsd",
        "version": VERSION,
        "resolution": list(bundle.resolution),
        "n_steps": bundle.n_steps,
        "sim_ids": sim_ids,
        "channels": {"static": list(STATIC_CHANNELS), "auto": list(AUTO_CHANNELS)},
        "cycle_indicators": list(bundle.cycle_indicators),
        "cycle_block": list(bundle.cycle_block),
        "time_divisor": bundle.time_divisor,
        "manifest": bundle.manifest.to_dict(),
        "stats": bundle.stats.to_dict(),
        "source": bundle.source,
        "dtype": "<f4",
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(hdr)))
        f.write(hdr)
        for sim_id in sim_ids:
            chunk = _chunk_bytes(bundle.records[sim_id])
            f.write(chunk)
            f.write(struct.pack("<I", zlib.crc32(chunk)))


def _read_exact(f, n: int, what: str) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise DatasetTruncatedError(f"truncated file while reading {what}")
    return raw


def read_header(path) -> tuple[dict, int]:
    """Parse the header without loading tensors; returns (header, data offset)."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise DatasetFormatError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != VERSION:
            raise DatasetVersionError(
                f"{path}: format version {version}, reader supports {VERSION}")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        header = json.loads(_read_exact(f, hlen, "header").decode("utf-8"))
    return header, 4 + 2 + 4 + hlen


def _bundle_from_header(header: dict) -> DatasetBundle:
    return DatasetBundle(
        manifest=SplitManifest.from_dict(header["manifest"]),
        stats=ChannelStats.from_dict(header["stats"]),
        resolution=tuple(header["resolution"]),
        cycle_indicators=tuple(header["cycle_indicators"]),
        cycle_block=tuple(header["cycle_block"]),
        time_divisor=int(header["time_divisor"]),
        source=header.get("source", {}),
        records=None,
    )


def read_dataset(path, header_only: bool = False) -> DatasetBundle:
    """Load a bundle, verifying the CRC-32 of every chunk."""
    header, offset = read_header(path)
    bundle = _bundle_from_header(header)
    if header_only:
        return bundle
    ny, nx = bundle.resolution
    n_snap = bundle.n_steps + 1
    cells = ny * nx
    chunk_len = 4 * (2 * cells + 3 * n_snap * cells)
    records: dict[int, SimulationRecord] = {}
    with open(path, "rb") as f:
        f.seek(offset)
        for sim_id in header["sim_ids"]:
            chunk = _read_exact(f, chunk_len, f"simulation {sim_id}")
            (crc,) = struct.unpack("<I", _read_exact(f, 4, "checksum"))
            if zlib.crc32(chunk) != crc:
                raise DatasetChecksumError(f"{path}: CRC mismatch in simulation {sim_id}")
            arr = np.frombuffer(chunk, dtype="<f4")
            o = 0
            poro = arr[o:o + cells].reshape(ny, nx); o += cells
            perm = arr[o:o + cells].reshape(ny, nx); o += cells
            pres = arr[o:o + n_snap * cells].reshape(n_snap, ny, nx); o += n_snap * cells
            sat = arr[o:o + n_snap * cells].reshape(n_snap, ny, nx); o += n_snap * cells
            y = arr[o:o + n_snap * cells].reshape(n_snap, ny, nx)
            records[int(sim_id)] = SimulationRecord(
                sim_id=int(sim_id), porosity=poro, permeability=perm,
                pressure=pres, saturation=sat, y_h2=y)
        if f.read(1):
            raise DatasetFormatError(f"{path}: trailing bytes after last chunk")
    bundle.records = records
    return bundle
