"""Shared builders for small test fixtures."""

from __future__ import annotations

import numpy as np

from armsense.types import (
    ActivityLabel,
    AmplitudeWindow,
    Location,
    Sample,
    SampleMeta,
    Source,
    Velocity,
)


def make_window(rows=360, cols=236, rate=30, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    data = (rng.random((rows, cols)) * scale).astype(np.float32)
    return AmplitudeWindow(data, rate)


def make_meta(label=ActivityLabel.ARC, velocity=Velocity.V2, location=Location.L1):
    return SampleMeta(label, velocity, location, Source.SYNTHETIC)


def make_sample(rows=360, cols=236, rate=30, seed=0, label=ActivityLabel.ARC, **meta_kw):
    return Sample(
        sniffer1=make_window(rows, cols, rate, seed),
        sniffer2=make_window(rows, cols, rate, seed + 1),
        meta=make_meta(label=label, **meta_kw),
    )


def toy_class_dataset(n_per_class, rows=8, cols=8, rate=30, noise=0.05, seed=0):
    """Linearly separable toy: class c puts a bump on time row c."""
    rng = np.random.default_rng(seed)
    samples = []
    for label in ActivityLabel:
        for _ in range(n_per_class):
            windows = []
            for _ in range(2):
                data = noise * rng.random((rows, cols))
                data[int(label) % rows, :] += 1.0
                windows.append(AmplitudeWindow(data.astype(np.float32), rate))
            samples.append(Sample(windows[0], windows[1], make_meta(label=label)))
    return samples
