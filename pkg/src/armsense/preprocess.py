"""Preprocessing: subcarrier pruning, amplitude extraction, downsampling,
per-subcarrier normalization, and patch tokenization."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    InconsistentMetadata,
    MaskOutOfRange,
    StatsShapeMismatch,
    UnsupportedRate,
)
from .types import (
    RAW_SUBCARRIERS,
    SUPPORTED_RATES,
    AmplitudeWindow,
    CsiMatrix,
)

# 802.11ac 80 MHz tone plan over centered indices -128..+127: 8 pilots and
# 12 null/guard tones are unusable, leaving 236 measured subcarriers.
_PILOT_TONES = (-103, -75, -39, -11, 11, 39, 75, 103)
_NULL_TONES = (-128, -127, -126, -125, -124, -1, 0, 1, 124, 125, 126, 127)


@dataclass(frozen=True)
class SubcarrierMask:
    """Sorted column indices (0..255) to keep when pruning raw CSI."""

    keep: tuple[int, ...]

    def __post_init__(self) -> None:
        keep = tuple(int(i) for i in self.keep)
        if len(set(keep)) != len(keep):
            raise ValueError("mask indices must be unique")
        if any(i < 0 for i in keep):
            raise ValueError("mask indices must be nonnegative")
        if tuple(sorted(keep)) != keep:
            raise ValueError("mask indices must be sorted")
        object.__setattr__(self, "keep", keep)

    def __len__(self) -> int:
        return len(self.keep)

    def to_json(self) -> str:
        return json.dumps(list(self.keep))

    @classmethod
    def from_json(cls, text: str) -> "SubcarrierMask":
        return cls(tuple(json.loads(text)))

    @classmethod
    def load(cls, path: Path) -> "SubcarrierMask":
        return cls.from_json(Path(path).read_text())


def default_mask() -> SubcarrierMask:
    removed = {t + 128 for t in _PILOT_TONES} | {t + 128 for t in _NULL_TONES}
    keep = tuple(i for i in range(RAW_SUBCARRIERS) if i not in removed)
    return SubcarrierMask(keep)


def prune_subcarriers(m: CsiMatrix, mask: SubcarrierMask) -> CsiMatrix:
    """Keep only the masked columns; packet axis is untouched."""
    if any(i >= m.subcarriers for i in mask.keep):
        raise MaskOutOfRange(f"mask exceeds {m.subcarriers} columns")
    return CsiMatrix(m.data[:, list(mask.keep)], m.timestamps, m.sniffer_id)


def amplitude(m: CsiMatrix, rate_hz: int = 30) -> AmplitudeWindow:
    """Element-wise magnitude of the complex channel matrix; phase is discarded."""
    return AmplitudeWindow(np.abs(m.data).astype(np.float32), rate_hz)


def downsample_indices(rows: int, rate_hz: int, target_hz: int) -> np.ndarray:
    out_rows = int(round(rows * target_hz / rate_hz))
    k = np.arange(out_rows)
    return (k * rate_hz) // target_hz


def downsample(w: AmplitudeWindow, target_hz: int) -> AmplitudeWindow:
    """Decimate rows to a lower packet rate by index resampling.

    Output row k maps to input row floor(k * rate / target); no filtering is
    applied, mirroring what a slower capture would have recorded.
    """
    if target_hz not in SUPPORTED_RATES or target_hz > w.rate_hz:
        raise UnsupportedRate(f"cannot downsample {w.rate_hz} Hz to {target_hz} Hz")
    if target_hz == w.rate_hz:
        return AmplitudeWindow(w.data, target_hz)
    idx = downsample_indices(w.data.shape[0], w.rate_hz, target_hz)
    return AmplitudeWindow(w.data[idx], target_hz)


def center_columns(w: AmplitudeWindow) -> AmplitudeWindow:
    """Subtract each column's own mean, stripping the window's static baseline.

    The static multipath level is sample-specific nuisance; what carries
    activity information is the time variation around it.
    """
    data = np.asarray(w.data, dtype=np.float64)
    out = data - data.mean(axis=0, keepdims=True)
    return AmplitudeWindow(out.astype(np.float32), w.rate_hz)


@dataclass(frozen=True)
class NormStats:
    """Per-subcarrier mean/std frozen from a training fold."""

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool per column: std below resolution

    @classmethod
    def from_windows(cls, windows: list[AmplitudeWindow]) -> "NormStats":
        stacked = np.concatenate([np.asarray(w.data, dtype=np.float64) for w in windows], axis=0)
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        constant = std < 1e-12
        return cls(mean, np.where(constant, 1.0, std), constant)


def normalize(w: AmplitudeWindow, stats: NormStats) -> AmplitudeWindow:
    """Standardize each column with frozen stats; constant columns map to 0."""
    if stats.mean.shape != (w.data.shape[1],):
        raise StatsShapeMismatch(
            f"stats cover {stats.mean.shape[0]} columns, window has {w.data.shape[1]}"
        )
    out = (np.asarray(w.data, dtype=np.float64) - stats.mean) / stats.std
    out[:, stats.constant] = 0.0
    return AmplitudeWindow(out.astype(np.float32), w.rate_hz)


@dataclass(frozen=True)
class PatchSet:
    """Non-overlapping P x P tiles of a zero-padded window, row-major tile order."""

    patches: np.ndarray  # (N, P, P)
    patch_side: int
    pad_rows: int
    pad_cols: int
    origin_shape: tuple[int, int]
    rate_hz: int = 30

    @property
    def count(self) -> int:
        return self.patches.shape[0]


def patch_grid(rows: int, cols: int, patch_side: int) -> tuple[int, int]:
    return (-(-rows // patch_side), -(-cols // patch_side))


def patchify(w: AmplitudeWindow, patch_side: int) -> PatchSet:
    """Zero-pad to a multiple of the patch side, then tile."""
    if patch_side < 1:
        raise ValueError("patch side must be >= 1")
    rows, cols = w.data.shape
    gr, gc = patch_grid(rows, cols, patch_side)
    pad_rows = gr * patch_side - rows
    pad_cols = gc * patch_side - cols
    padded = np.pad(np.asarray(w.data), ((0, pad_rows), (0, pad_cols)))
    tiles = padded.reshape(gr, patch_side, gc, patch_side).swapaxes(1, 2)
    return PatchSet(
        patches=tiles.reshape(gr * gc, patch_side, patch_side),
        patch_side=patch_side,
        pad_rows=pad_rows,
        pad_cols=pad_cols,
        origin_shape=(rows, cols),
        rate_hz=w.rate_hz,
    )


def unpatchify(p: PatchSet) -> AmplitudeWindow:
    """Invert patchify using the recorded padding."""
    rows, cols = p.origin_shape
    side = p.patch_side
    gr, gc = patch_grid(rows, cols, side)
    if gr * side != rows + p.pad_rows or gc * side != cols + p.pad_cols:
        raise InconsistentMetadata("padding disagrees with origin shape")
    if p.patches.shape != (gr * gc, side, side):
        raise InconsistentMetadata(
            f"expected {gr * gc} patches of {side}x{side}, got {p.patches.shape}"
        )
    padded = p.patches.reshape(gr, gc, side, side).swapaxes(1, 2).reshape(gr * side, gc * side)
    return AmplitudeWindow(padded[:rows, :cols], p.rate_hz)


def flatten_patches(p: PatchSet) -> np.ndarray:
    """(N, P, P) -> (N, P*P) token matrix."""
    return p.patches.reshape(p.count, -1)
