"""Synthetic CSI generator: parametric end-effector trajectories drive a
two-ray-plus-clutter multipath channel, yielding labeled samples whose
amplitude structure carries the activity classes.

Channel model per sniffer: a frozen set of static scatter paths plus one
dynamic reflection off the moving end effector. The dynamic path delay is
(|tx - p(t)| + |p(t) - sniffer|) / c, so arm motion sweeps interference
fringes across time; static clutter is smooth across subcarriers because it
is synthesized from a handful of discrete path delays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import RngState
from .errors import InvalidGeometry
from .preprocess import amplitude, default_mask, prune_subcarriers
from .types import (
    BASE_RATE_HZ,
    RAW_SUBCARRIERS,
    WINDOW_SECONDS,
    ActivityLabel,
    CsiMatrix,
    Location,
    Sample,
    SampleMeta,
    SnifferId,
    Source,
    Velocity,
)

SPEED_OF_LIGHT = 299_792_458.0
CENTER_FREQ_HZ = 5.21e9  # 802.11ac 80 MHz channel
SUBCARRIER_SPACING_HZ = 312.5e3
DEFAULT_NOISE_STD = 0.05  # relative to unit static-clutter power
DEFAULT_DYNAMIC_GAIN = 0.7
STATIC_PATHS = 8

VELOCITY_SCALE = {Velocity.V1: 1.0, Velocity.V2: 1.1, Velocity.V3: 1.2}

_HOME = np.array([0.45, 0.0, 0.35])
_GRID_STEP_M = 1.5
_DEVICE_HEIGHT_M = 1.0


def subcarrier_freqs() -> np.ndarray:
    return CENTER_FREQ_HZ + (np.arange(RAW_SUBCARRIERS) - 128.0) * SUBCARRIER_SPACING_HZ


# ---------------------------------------------------------------------------
# scene geometry
# ---------------------------------------------------------------------------


def _cell_center(cell: tuple[int, int]) -> np.ndarray:
    row, col = cell
    return np.array([(col - 1) * _GRID_STEP_M, (row - 1) * _GRID_STEP_M, _DEVICE_HEIGHT_M])


@dataclass(frozen=True)
class SceneGeometry:
    """Device positions in meters; grid cells index the 3x3 placement grid."""

    tx_position: np.ndarray
    sniffer1_position: np.ndarray
    sniffer2_position: np.ndarray
    robot_base: np.ndarray
    sniffer1_cell: tuple[int, int] = (0, 1)
    sniffer2_cell: tuple[int, int] = (1, 2)

    def __post_init__(self) -> None:
        if self.sniffer1_cell == self.sniffer2_cell:
            raise InvalidGeometry("sniffers cannot share a grid cell")

    def sniffer_position(self, sniffer: SnifferId) -> np.ndarray:
        return self.sniffer1_position if sniffer == SnifferId.S1 else self.sniffer2_position


_LOCATION_CELLS = {
    Location.L1: ((0, 1), (1, 2)),
    Location.L2: ((2, 0), (2, 2)),
    Location.L3: ((1, 0), (0, 2)),
    Location.L4: ((0, 1), (2, 1)),
}


def location_geometry(location: Location) -> SceneGeometry:
    """Sniffer placement preset for one of the four grid configurations."""
    c1, c2 = _LOCATION_CELLS[location]
    return SceneGeometry(
        tx_position=_cell_center((0, 0)),
        sniffer1_position=_cell_center(c1),
        sniffer2_position=_cell_center(c2),
        robot_base=np.zeros(3),
        sniffer1_cell=c1,
        sniffer2_cell=c2,
    )


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySpec:
    label: ActivityLabel
    duration_s: float  # at V1 pace; actual motion time is duration_s / velocity_scale
    velocity_scale: float
    start_offset_s: float
    size_scale: float = 1.0
    lateral_axis: tuple[float, float, float] = (0.0, 1.0, 0.0)
    mirror_normal: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        if self.duration_s <= 0 or self.velocity_scale <= 0 or self.size_scale <= 0:
            raise InvalidGeometry("duration, velocity scale and size must be positive")
        if self.start_offset_s < 0:
            raise InvalidGeometry("start offset cannot be negative")
        if self.start_offset_s + self.duration_s / self.velocity_scale > WINDOW_SECONDS:
            raise InvalidGeometry("motion must finish inside the capture window")


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise InvalidGeometry("zero-length axis")
    return v / n


def _shape_vertices(label: ActivityLabel, scale: float, lateral: np.ndarray) -> np.ndarray:
    """Waypoint polyline for one activity, rooted at the home pose.

    `lateral` is the horizontal direction the shape extends into; mirrored
    class pairs differ only in that direction's sign.
    """
    x = np.array([1.0, 0.0, 0.0])
    z = np.array([0.0, 0.0, 1.0])
    u = lateral
    home = _HOME
    # per-shape sizes are spread so path lengths (and with them motion
    # durations at fixed arm speed) separate the classes
    if label == ActivityLabel.SILENCE:
        return home[None, :]
    if label == ActivityLabel.ARC:
        r = 0.24 * scale
        theta = np.linspace(0.0, math.pi, 65)
        return home + r * (np.outer(np.sin(theta), u) + np.outer(1.0 - np.cos(theta), x))
    if label == ActivityLabel.ELBOW:
        up, fwd = 0.26 * scale, 0.32 * scale
        return np.stack([home, home + up * z, home + up * z + fwd * u])
    if label == ActivityLabel.RECTANGLE:
        a, b = 0.36 * scale, 0.22 * scale
        return np.stack([home, home + a * u, home + a * u + b * z, home + b * z, home])
    if label == ActivityLabel.SLFW:
        d = 0.20 * scale
        return np.stack([home, home + d * x, home])
    if label == ActivityLabel.SLRL:
        d = 0.33 * scale
        return np.stack([home, home + d * u, home])
    if label == ActivityLabel.SLUD:
        d = 0.44 * scale
        return np.stack([home, home + d * z, home])
    if label == ActivityLabel.TRIANGLE:
        a, h = 0.34 * scale, 0.28 * scale
        return np.stack([home, home + a * u, home + 0.5 * a * u + h * z, home])
    raise InvalidGeometry(f"no trajectory for {label}")


def _reflect(points: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Mirror across the plane through the origin with the given normal."""
    n = _unit(normal)
    return points - 2.0 * np.outer(points @ n, n)


def gen_trajectory(spec: TrajectorySpec, rate_hz: int = BASE_RATE_HZ) -> np.ndarray:
    """End-effector position per capture tick, constant speed along the path."""
    ticks = int(round(rate_hz * WINDOW_SECONDS))
    t = np.arange(ticks) / rate_hz
    vertices = _shape_vertices(spec.label, spec.size_scale, _unit(spec.lateral_axis))
    if spec.mirror_normal is not None:
        vertices = _reflect(vertices, np.asarray(spec.mirror_normal))

    if len(vertices) == 1:
        return np.repeat(vertices, ticks, axis=0)

    seg = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]

    motion_time = spec.duration_s / spec.velocity_scale
    frac = np.clip((t - spec.start_offset_s) / motion_time, 0.0, 1.0)
    arclen = frac * total

    pos = np.empty((ticks, 3))
    for axis in range(3):
        pos[:, axis] = np.interp(arclen, cum, vertices[:, axis])
    return pos


# ---------------------------------------------------------------------------
# channel simulation
# ---------------------------------------------------------------------------


def draw_static_field(rng: RngState) -> np.ndarray:
    """Frozen clutter: a handful of static paths evaluated per subcarrier.

    Discrete path delays keep the field smooth across subcarriers, matching
    how real rooms look in the frequency domain.
    """
    freqs = subcarrier_freqs()
    gains = (
        rng.standard_normal(STATIC_PATHS) + 1j * rng.standard_normal(STATIC_PATHS)
    ) / math.sqrt(2.0 * STATIC_PATHS)
    delays = rng.uniform(5e-9, 60e-9, STATIC_PATHS)
    return (gains[None, :] * np.exp(-2j * np.pi * np.outer(freqs, delays))).sum(axis=1)


def simulate_csi(
    positions: np.ndarray,
    geom: SceneGeometry,
    sniffer: SnifferId,
    noise_std: float,
    rng: RngState,
    dynamic_gain: float = DEFAULT_DYNAMIC_GAIN,
    rate_hz: int = BASE_RATE_HZ,
    static_field: np.ndarray | None = None,
) -> CsiMatrix:
    """Raw 256-subcarrier complex capture for one sniffer over one window.

    The static field describes the room and is fixed per (scene, sniffer);
    pass the same array for every sample captured in one scene. When omitted
    it is drawn from rng, giving a one-off scene.
    """
    positions = np.asarray(positions, dtype=np.float64)
    freqs = subcarrier_freqs()
    sn = geom.sniffer_position(sniffer)
    static = draw_static_field(rng) if static_field is None else static_field

    path_len = np.linalg.norm(geom.tx_position - positions, axis=1)
    path_len += np.linalg.norm(positions - sn, axis=1)
    tau = path_len / SPEED_OF_LIGHT
    dynamic = dynamic_gain * np.exp(-2j * np.pi * np.outer(tau, freqs))

    h = static[None, :] + dynamic
    if noise_std > 0:
        shape = h.shape
        h = h + (noise_std / math.sqrt(2.0)) * (
            rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        )
    timestamps = np.arange(positions.shape[0]) / rate_hz
    return CsiMatrix(h, timestamps, sniffer)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------


BASE_ARM_SPEED_MPS = 0.28  # V1 pace; path length / speed puts durations in 2-4 s


@dataclass(frozen=True)
class GenSpec:
    """Generation request: balanced counts over the given class/velocity/location axes."""

    count_per_class: int
    velocities: tuple[Velocity, ...] = (Velocity.V2,)
    locations: tuple[Location, ...] = (Location.L1,)
    noise_std: float = DEFAULT_NOISE_STD
    seed: int = 0
    labels: tuple[ActivityLabel, ...] = tuple(ActivityLabel)
    arm_speed_mps: float = BASE_ARM_SPEED_MPS
    speed_jitter: float = 0.06
    offset_max_s: float = 8.0
    size_jitter: float = 0.08
    dynamic_gain: float = DEFAULT_DYNAMIC_GAIN


def _sample_rng(seed: int, key: tuple[int, ...]) -> RngState:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _path_length(label: ActivityLabel, scale: float, lateral: np.ndarray) -> float:
    vertices = _shape_vertices(label, scale, lateral)
    if len(vertices) == 1:
        return 0.0
    return float(np.linalg.norm(np.diff(vertices, axis=0), axis=1).sum())


def _draw_spec(
    rng: RngState,
    spec: GenSpec,
    label: ActivityLabel,
    velocity: Velocity,
    lateral: tuple = (0.0, 1.0, 0.0),
    mirror: tuple | None = None,
    shape: ActivityLabel | None = None,
) -> TrajectorySpec:
    """Draw one sample's trajectory: jittered size and arm speed, duration set
    by the path length, start offset anywhere the motion still fits."""
    shape = shape if shape is not None else label
    scale = 1.0 + rng.uniform(-spec.size_jitter, spec.size_jitter)
    speed = spec.arm_speed_mps * (1.0 + rng.uniform(-spec.speed_jitter, spec.speed_jitter))
    length = _path_length(shape, scale, _unit(lateral))
    duration = length / speed if length > 0 else rng.uniform(2.0, 4.0)
    duration = float(np.clip(duration, 0.8, 4.4))
    vscale = VELOCITY_SCALE[velocity]
    offset = rng.uniform(0.0, min(spec.offset_max_s, WINDOW_SECONDS - duration / vscale))
    return TrajectorySpec(
        label=shape,
        duration_s=duration,
        velocity_scale=vscale,
        start_offset_s=offset,
        size_scale=scale,
        lateral_axis=lateral,
        mirror_normal=mirror,
    )


def _render_sample(
    traj: TrajectorySpec,
    geom: SceneGeometry,
    meta: SampleMeta,
    rng: RngState,
    noise_std: float,
    dynamic_gain: float,
    sample_id: str,
    static_fields: dict[SnifferId, np.ndarray] | None = None,
) -> Sample:
    positions = gen_trajectory(traj)
    mask = default_mask()
    windows = []
    for sniffer in (SnifferId.S1, SnifferId.S2):
        field = static_fields[sniffer] if static_fields else None
        raw = simulate_csi(positions, geom, sniffer, noise_std, rng, dynamic_gain, static_field=field)
        windows.append(amplitude(prune_subcarriers(raw, mask)))
    return Sample(sniffer1=windows[0], sniffer2=windows[1], meta=meta, sample_id=sample_id)


def scene_static_fields(seed: int, scene_key: int) -> dict[SnifferId, np.ndarray]:
    """One frozen clutter field per sniffer, shared by every sample in a scene."""
    return {
        sniffer: draw_static_field(_sample_rng(seed, (7, scene_key, int(sniffer))))
        for sniffer in (SnifferId.S1, SnifferId.S2)
    }


def gen_dataset(spec: GenSpec) -> list[Sample]:
    """Balanced labeled dataset; deterministic under the spec's seed."""
    if spec.count_per_class < 1:
        raise ValueError("count_per_class must be positive")
    samples: list[Sample] = []
    for location in spec.locations:
        geom = location_geometry(location)
        fields = scene_static_fields(spec.seed, int(location))
        for velocity in spec.velocities:
            for label in spec.labels:
                for i in range(spec.count_per_class):
                    rng = _sample_rng(spec.seed, (int(location), int(velocity), int(label), i))
                    traj = _draw_spec(rng, spec, label, velocity)
                    meta = SampleMeta(label, velocity, location, Source.SYNTHETIC)
                    sid = (
                        f"{label.name.lower()}_{velocity.name.lower()}"
                        f"_{location.name.lower()}_{i:04d}"
                    )
                    samples.append(
                        _render_sample(
                            traj, geom, meta, rng, spec.noise_std, spec.dynamic_gain, sid,
                            static_fields=fields,
                        )
                    )
    return samples


# ---------------------------------------------------------------------------
# complementary-view dataset: classes resolvable only by fusing both sniffers
# ---------------------------------------------------------------------------

# Plane A contains tx and sniffer 1; plane B contains tx and sniffer 2. A
# trajectory mirrored across a plane through both endpoints of a propagation
# path preserves that path's length for every arm position, so the mirrored
# class pair is information-theoretically invisible to that sniffer.
_PLANE_A_NORMAL = (0.0, 1.0, 0.0)
_PLANE_B_NORMAL = (2.0, -1.0, 0.0)


def complementary_geometry() -> SceneGeometry:
    return SceneGeometry(
        tx_position=np.array([0.0, 0.0, 1.2]),
        sniffer1_position=np.array([2.2, 0.0, 1.0]),
        sniffer2_position=np.array([1.0, 2.0, 1.0]),
        robot_base=np.zeros(3),
        sniffer1_cell=(1, 2),
        sniffer2_cell=(2, 1),
    )


_COMPLEMENTARY_PLAN: dict[ActivityLabel, tuple[ActivityLabel, tuple, tuple | None]] = {
    # label -> (base shape, lateral axis, mirror normal or None)
    ActivityLabel.ARC: (ActivityLabel.ARC, _PLANE_A_NORMAL, None),
    ActivityLabel.ELBOW: (ActivityLabel.ARC, _PLANE_A_NORMAL, _PLANE_A_NORMAL),
    ActivityLabel.RECTANGLE: (ActivityLabel.TRIANGLE, _PLANE_A_NORMAL, None),
    ActivityLabel.SILENCE: (ActivityLabel.TRIANGLE, _PLANE_A_NORMAL, _PLANE_A_NORMAL),
    ActivityLabel.SLFW: (ActivityLabel.ELBOW, _PLANE_B_NORMAL, None),
    ActivityLabel.SLRL: (ActivityLabel.ELBOW, _PLANE_B_NORMAL, _PLANE_B_NORMAL),
    ActivityLabel.SLUD: (ActivityLabel.RECTANGLE, _PLANE_B_NORMAL, None),
    ActivityLabel.TRIANGLE: (ActivityLabel.RECTANGLE, _PLANE_B_NORMAL, _PLANE_B_NORMAL),
}


def gen_complementary_dataset(
    count_per_class: int,
    noise_std: float = DEFAULT_NOISE_STD,
    seed: int = 0,
) -> list[Sample]:
    """Eight classes built from four base shapes and their mirror images.

    Classes mirrored across plane A produce identically distributed windows
    at sniffer 1 (and likewise plane B for sniffer 2), so roughly half the
    label information is invisible to each sniffer alone while the pair of
    streams resolves all eight classes.
    """
    geom = complementary_geometry()
    velocity = Velocity.V2
    gen = GenSpec(count_per_class, noise_std=noise_std, seed=seed)
    fields = scene_static_fields(seed, 99)
    samples: list[Sample] = []
    for label in ActivityLabel:
        base, lateral, mirror = _COMPLEMENTARY_PLAN[label]
        for i in range(count_per_class):
            rng = _sample_rng(seed, (99, int(label), i))
            traj = _draw_spec(rng, gen, label, velocity, lateral=lateral, mirror=mirror, shape=base)
            meta = SampleMeta(label, velocity, Location.L1, Source.SYNTHETIC)
            samples.append(
                _render_sample(
                    traj,
                    geom,
                    meta,
                    rng,
                    noise_std,
                    DEFAULT_DYNAMIC_GAIN,
                    f"comp_{label.name.lower()}_{i:04d}",
                    static_fields=fields,
                )
            )
    return samples
