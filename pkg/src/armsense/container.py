"""Canonical on-disk dataset container.

A dataset is a directory of per-sample subdirectories plus a manifest.json
listing their relative paths. Each sample directory holds meta.json and two
binary amplitude files (s1.bin, s2.bin): magic "RFSA", u32 rows, u32 cols,
then row-major little-endian float32 cells.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, TruncatedPacket
from .types import (
    ActivityLabel,
    AmplitudeWindow,
    Location,
    Sample,
    SampleMeta,
    Source,
    Velocity,
)

SAMPLE_MAGIC = b"RFSA"
SCHEMA_VERSION = 1


def write_window(path: Path, w: AmplitudeWindow) -> None:
    rows, cols = w.shape
    payload = np.ascontiguousarray(w.data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(SAMPLE_MAGIC)
        f.write(struct.pack("<II", rows, cols))
        f.write(payload)


def read_window(path: Path, rate_hz: int) -> AmplitudeWindow:
    raw = Path(path).read_bytes()
    if raw[:4] != SAMPLE_MAGIC:
        raise BadMagic(f"{path}: expected {SAMPLE_MAGIC!r}")
    if len(raw) < 12:
        raise TruncatedPacket(f"{path}: header cut short")
    rows, cols = struct.unpack_from("<II", raw, 4)
    need = 12 + 4 * rows * cols
    if len(raw) < need:
        raise TruncatedPacket(f"{path}: expected {need} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=12)
    return AmplitudeWindow(data.reshape(rows, cols), rate_hz)


def write_sample(sample_dir: Path, s: Sample) -> None:
    sample_dir = Path(sample_dir)
    sample_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "label": s.meta.label.name,
        "velocity": s.meta.velocity.name,
        "location": s.meta.location.name,
        "source": s.meta.source.value,
        "rate_hz": s.sniffer1.rate_hz,
    }
    (sample_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    write_window(sample_dir / "s1.bin", s.sniffer1)
    write_window(sample_dir / "s2.bin", s.sniffer2)


def read_sample(sample_dir: Path) -> Sample:
    sample_dir = Path(sample_dir)
    meta = json.loads((sample_dir / "meta.json").read_text())
    rate = int(meta["rate_hz"])
    return Sample(
        sniffer1=read_window(sample_dir / "s1.bin", rate),
        sniffer2=read_window(sample_dir / "s2.bin", rate),
        meta=SampleMeta(
            label=ActivityLabel[meta["label"]],
            velocity=Velocity[meta["velocity"]],
            location=Location[meta["location"]],
            source=Source(meta["source"]),
        ),
        sample_id=sample_dir.name,
    )


def _sample_dirname(index: int, s: Sample) -> str:
    if s.sample_id:
        return s.sample_id
    tags = (s.meta.label.name.lower(), s.meta.velocity.name.lower(), s.meta.location.name.lower())
    return f"s{index:05d}_{'_'.join(tags)}"


def write_dataset(root: Path, samples: list[Sample]) -> list[str]:
    """Write samples under root and return the manifest's relative paths."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rels = []
    for i, s in enumerate(samples):
        rel = _sample_dirname(i, s)
        write_sample(root / rel, s)
        rels.append(rel)
    manifest = {"schema_version": SCHEMA_VERSION, "samples": rels}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return rels


def read_dataset(root: Path) -> list[Sample]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    return [read_sample(root / rel) for rel in manifest["samples"]]
