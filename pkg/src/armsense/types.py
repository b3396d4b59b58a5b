"""Domain types: complex channel windows, amplitude windows, labels, samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .errors import UnknownLabel

SUPPORTED_RATES = (30, 25, 20, 15, 10)
RAW_SUBCARRIERS = 256
KEPT_SUBCARRIERS = 236
WINDOW_SECONDS = 12.0
BASE_RATE_HZ = 30
BASE_PACKETS = 360  # 30 Hz over 12 s


class ActivityLabel(IntEnum):
    """The eight arm activities, in canonical listing order."""

    ARC = 0
    ELBOW = 1
    RECTANGLE = 2
    SILENCE = 3
    SLFW = 4
    SLRL = 5
    SLUD = 6
    TRIANGLE = 7


NUM_CLASSES = len(ActivityLabel)

_LABEL_ALIASES = {
    "arc": ActivityLabel.ARC,
    "elbow": ActivityLabel.ELBOW,
    "rectangle": ActivityLabel.RECTANGLE,
    "rect": ActivityLabel.RECTANGLE,
    "silence": ActivityLabel.SILENCE,
    "slfw": ActivityLabel.SLFW,
    "sl-forward": ActivityLabel.SLFW,
    "slforward": ActivityLabel.SLFW,
    "straight line - forward": ActivityLabel.SLFW,
    "slrl": ActivityLabel.SLRL,
    "sl-right left": ActivityLabel.SLRL,
    "sl-rightleft": ActivityLabel.SLRL,
    "straight line - right left": ActivityLabel.SLRL,
    "slud": ActivityLabel.SLUD,
    "sl-up down": ActivityLabel.SLUD,
    "sl-updown": ActivityLabel.SLUD,
    "straight line - up down": ActivityLabel.SLUD,
    "triangle": ActivityLabel.TRIANGLE,
}


def label_from_name(name: str) -> ActivityLabel:
    """Map a class name (case-insensitive, aliases included) to its label."""
    key = name.strip().lower()
    try:
        return _LABEL_ALIASES[key]
    except KeyError:
        raise UnknownLabel(f"not an activity class: {name!r}") from None


class Velocity(IntEnum):
    """Arm speed tiers; ordering V1 < V2 < V3 is part of the contract."""

    V1 = 1
    V2 = 2
    V3 = 3


class Location(IntEnum):
    """Sniffer placement configurations on the floor grid."""

    L1 = 1
    L2 = 2
    L3 = 3
    L4 = 4


class Source(Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"


class SnifferId(IntEnum):
    S1 = 1
    S2 = 2


@dataclass(frozen=True)
class CsiMatrix:
    """Complex channel matrix for one sniffer: rows are packets, columns subcarriers."""

    data: np.ndarray  # complex, shape (T, S)
    timestamps: np.ndarray  # float64 seconds, shape (T,)
    sniffer_id: SnifferId

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("CSI data must be 2-D (packets x subcarriers)")
        if ts.shape != (data.shape[0],):
            raise ValueError("timestamp count must equal packet count")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "timestamps", ts)

    @property
    def packets(self) -> int:
        return self.data.shape[0]

    @property
    def subcarriers(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class AmplitudeWindow:
    """Real amplitude matrix (T x S'); the model's only input representation."""

    data: np.ndarray
    rate_hz: int

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError("amplitude data must be 2-D")
        if self.rate_hz not in SUPPORTED_RATES:
            raise ValueError(f"rate_hz must be one of {SUPPORTED_RATES}")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class SampleMeta:
    label: ActivityLabel
    velocity: Velocity
    location: Location
    source: Source


@dataclass(frozen=True)
class Sample:
    """One labeled observation: a pair of amplitude windows, one per sniffer."""

    sniffer1: AmplitudeWindow
    sniffer2: AmplitudeWindow
    meta: SampleMeta
    sample_id: str = field(default="", compare=False)


# validate_sample reports violations as data rather than raising; the names
# below are stable identifiers used by callers and tests.
V_SHAPE_MISMATCH = "ShapeMismatch"
V_RATE_MISMATCH = "RateMismatch"
V_NON_FINITE = "NonFiniteValue"
V_NEGATIVE = "NegativeAmplitude"
V_BAD_DIMENSIONS = "BadDimensions"


def _window_violations(w: AmplitudeWindow, tag: str) -> list[str]:
    out = []
    if not np.all(np.isfinite(w.data)):
        out.append(f"{V_NON_FINITE}:{tag}")
    elif np.any(w.data < 0):
        out.append(f"{V_NEGATIVE}:{tag}")
    if w.rate_hz == BASE_RATE_HZ and w.shape != (BASE_PACKETS, KEPT_SUBCARRIERS):
        out.append(f"{V_BAD_DIMENSIONS}:{tag}")
    return out


def validate_sample(s: Sample) -> list[str]:
    """Check every container invariant; an empty list means the sample is well formed."""
    violations: list[str] = []
    if s.sniffer1.shape != s.sniffer2.shape:
        violations.append(V_SHAPE_MISMATCH)
    if s.sniffer1.rate_hz != s.sniffer2.rate_hz:
        violations.append(V_RATE_MISMATCH)
    violations.extend(_window_violations(s.sniffer1, "sniffer1"))
    violations.extend(_window_violations(s.sniffer2, "sniffer2"))
    return violations
