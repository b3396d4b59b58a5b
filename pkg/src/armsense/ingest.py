"""Raw capture ingestion: the "RFSC" capture container, the monitor's
synchronized-grid merge of two sniffer streams, and pluggable dataset importers.

Capture wire format: 4-byte magic "RFSC", u8 version, then fixed-size records
of (u8 sniffer_id, f64 local timestamp, 256 x interleaved f32 re/im), all
little-endian and packed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .container import read_sample
from .errors import (
    BadMagic,
    BadSubcarrierCount,
    GapTooLarge,
    InsufficientDuration,
    TruncatedPacket,
    UnknownAdapter,
)
from .types import RAW_SUBCARRIERS, CsiMatrix, Sample, SnifferId, validate_sample

CAPTURE_MAGIC = b"RFSC"
CAPTURE_VERSION = 1
_RECORD_HEADER = struct.Struct("<Bd")  # sniffer id, local timestamp
RECORD_BYTES = _RECORD_HEADER.size + 8 * RAW_SUBCARRIERS


@dataclass(frozen=True)
class RawPacket:
    sniffer_id: SnifferId
    local_timestamp: float
    subcarriers: np.ndarray  # complex64, shape (256,)

    def __post_init__(self) -> None:
        values = np.asarray(self.subcarriers, dtype=np.complex64)
        if values.shape != (RAW_SUBCARRIERS,):
            raise BadSubcarrierCount(
                f"expected {RAW_SUBCARRIERS} subcarriers, got {values.shape}"
            )
        object.__setattr__(self, "subcarriers", values)


@dataclass(frozen=True)
class AlignedPair:
    """Two capture streams resampled onto one shared tick grid."""

    grid_timestamps: np.ndarray
    m1: CsiMatrix
    m2: CsiMatrix

    def __post_init__(self) -> None:
        if self.m1.packets != self.m2.packets:
            raise ValueError("aligned matrices must have identical row counts")


def parse_capture(data: bytes) -> list[RawPacket]:
    """Decode a capture byte stream into packets, in stream order."""
    if len(data) < 5 or data[:4] != CAPTURE_MAGIC:
        raise BadMagic(f"capture must start with {CAPTURE_MAGIC!r}")
    pos = 5
    packets: list[RawPacket] = []
    while pos < len(data):
        if pos + RECORD_BYTES > len(data):
            raise TruncatedPacket(
                f"record at byte {pos} cut short ({len(data) - pos} of {RECORD_BYTES} bytes)"
            )
        sniffer, timestamp = _RECORD_HEADER.unpack_from(data, pos)
        iq = np.frombuffer(
            data, dtype="<f4", count=2 * RAW_SUBCARRIERS, offset=pos + _RECORD_HEADER.size
        )
        packets.append(
            RawPacket(
                sniffer_id=SnifferId(sniffer),
                local_timestamp=timestamp,
                subcarriers=(iq[0::2] + 1j * iq[1::2]).astype(np.complex64),
            )
        )
        pos += RECORD_BYTES
    return packets


def write_capture(packets: Iterable[RawPacket]) -> bytes:
    out = bytearray()
    out += CAPTURE_MAGIC
    out.append(CAPTURE_VERSION)
    for p in packets:
        out += _RECORD_HEADER.pack(int(p.sniffer_id), p.local_timestamp)
        iq = np.empty(2 * RAW_SUBCARRIERS, dtype="<f4")
        iq[0::2] = p.subcarriers.real
        iq[1::2] = p.subcarriers.imag
        out += iq.tobytes()
    return bytes(out)


def split_by_sniffer(packets: Iterable[RawPacket]) -> dict[SnifferId, list[RawPacket]]:
    out: dict[SnifferId, list[RawPacket]] = {SnifferId.S1: [], SnifferId.S2: []}
    for p in packets:
        out[p.sniffer_id].append(p)
    return out


def _dedup_sorted(packets: list[RawPacket]) -> tuple[np.ndarray, list[RawPacket]]:
    """Timestamps must be sorted; duplicates keep the first occurrence."""
    kept: list[RawPacket] = []
    last = -math.inf
    for p in packets:
        if p.local_timestamp < last:
            raise ValueError("packet timestamps must be sorted")
        if p.local_timestamp == last:
            continue
        kept.append(p)
        last = p.local_timestamp
    return np.array([p.local_timestamp for p in kept]), kept


def _nearest_index(times: np.ndarray, tick: float) -> int:
    """Index of the packet closest to the tick; ties go to the earlier packet."""
    right = int(np.searchsorted(times, tick))
    if right == 0:
        return 0
    if right == len(times):
        return len(times) - 1
    before, after = times[right - 1], times[right]
    return right - 1 if tick - before <= after - tick else right


def default_max_skew(rate_hz: int) -> float:
    """Half the sampling period: at most one tick can claim each ideal packet."""
    return 0.5 / rate_hz


def align_streams(
    a: list[RawPacket],
    b: list[RawPacket],
    rate_hz: int = 30,
    window_s: float = 12.0,
    max_skew_s: float | None = None,
) -> AlignedPair:
    """Resample both streams onto a shared grid by nearest-packet selection.

    The grid starts at the later stream's first packet, rounded up to the
    next multiple of the tick period, and covers rate_hz * window_s ticks.
    """
    if not a or not b:
        raise ValueError("both packet streams must be nonempty")
    ticks = rate_hz * window_s
    if abs(ticks - round(ticks)) > 1e-9:
        raise ValueError("rate_hz * window_s must be an integer tick count")
    ticks = int(round(ticks))
    if max_skew_s is None:
        max_skew_s = default_max_skew(rate_hz)

    streams = [_dedup_sorted(a), _dedup_sorted(b)]
    t_first = max(times[0] for times, _ in streams)
    k0 = math.ceil(t_first * rate_hz - 1e-9)
    grid = (k0 + np.arange(ticks)) / rate_hz

    for name, (times, _) in zip(("S1", "S2"), streams):
        if times[-1] < grid[-1] - max_skew_s:
            raise InsufficientDuration(
                f"stream {name} ends at {times[-1]:.4f}s, before the last tick {grid[-1]:.4f}s"
            )

    matrices = []
    for name, (times, kept) in zip(("S1", "S2"), streams):
        rows = np.empty((ticks, RAW_SUBCARRIERS), dtype=np.complex64)
        for k, tick in enumerate(grid):
            idx = _nearest_index(times, tick)
            if abs(times[idx] - tick) > max_skew_s:
                raise GapTooLarge(k, name)
            rows[k] = kept[idx].subcarriers
        matrices.append(CsiMatrix(rows, grid, kept[0].sniffer_id))

    return AlignedPair(grid_timestamps=grid, m1=matrices[0], m2=matrices[1])


# ---------------------------------------------------------------------------
# dataset importers
# ---------------------------------------------------------------------------

# An adapter maps a foreign dataset root to (key, loader) units so that one
# corrupt sample never aborts the rest of the import.
Adapter = Callable[[Path], list[tuple[str, Callable[[], Sample]]]]

_ADAPTERS: dict[str, Adapter] = {}


def register_adapter(name: str, adapter: Adapter) -> None:
    _ADAPTERS[name] = adapter


def adapter_names() -> list[str]:
    return sorted(_ADAPTERS)


@dataclass(frozen=True)
class ImportFailure:
    key: str
    error: str


@dataclass
class ImportResult:
    samples: list[Sample]
    failures: list[ImportFailure]


def import_external(path: Path, adapter: str) -> ImportResult:
    """Convert a foreign dataset layout into validated in-memory samples."""
    if adapter not in _ADAPTERS:
        raise UnknownAdapter(f"no adapter named {adapter!r}; have {adapter_names()}")
    samples: list[Sample] = []
    failures: list[ImportFailure] = []
    for key, loader in _ADAPTERS[adapter](Path(path)):
        try:
            sample = loader()
            violations = validate_sample(sample)
            if violations:
                raise ValueError(f"invariant violations: {violations}")
            samples.append(sample)
        except Exception as exc:  # per-unit isolation is the contract
            failures.append(ImportFailure(key=key, error=f"{type(exc).__name__}: {exc}"))
    return ImportResult(samples=samples, failures=failures)


def _identity_adapter(root: Path) -> list[tuple[str, Callable[[], Sample]]]:
    """Reads the canonical container layout in manifest order."""
    import json

    manifest = root / "manifest.json"
    if manifest.exists():
        rels = json.loads(manifest.read_text())["samples"]
    else:
        rels = sorted(p.parent.name for p in root.glob("*/meta.json"))

    def make_loader(rel: str) -> Callable[[], Sample]:
        return lambda: read_sample(root / rel)

    return [(rel, make_loader(rel)) for rel in rels]


register_adapter("identity", _identity_adapter)
