"""WiFi CSI sensing toolkit: capture alignment, amplitude preprocessing,
attention-based activity classification, and evaluation protocols."""

from .autodiff import (
    RngState,
    Tensor,
    attention,
    backward,
    grad_check,
    make_rng,
    multi_head_attention,
)
from .container import read_dataset, write_dataset
from .ingest import AlignedPair, RawPacket, align_streams, import_external, parse_capture
from .metrics import Metrics, compute_metrics
from .models import (
    BivtcModel,
    ModelConfig,
    VitEncoder,
    VitModel,
    bivtc_forward,
    build_bivtc,
    build_vit,
    paper_preset,
    predict,
    tiny_preset,
    vit_forward,
)
from .preprocess import (
    NormStats,
    PatchSet,
    SubcarrierMask,
    amplitude,
    default_mask,
    downsample,
    normalize,
    patchify,
    prune_subcarriers,
    unpatchify,
)
from .protocols import (
    LocationResult,
    LovoResult,
    ProtocolReport,
    SplitSpec,
    SweepResult,
    cv_protocol,
    freq_sweep,
    location_protocol,
    lovo_protocol,
    mc_splits,
    velocity_cell,
)
from .synth import (
    GenSpec,
    SceneGeometry,
    TrajectorySpec,
    gen_complementary_dataset,
    gen_dataset,
    gen_trajectory,
    location_geometry,
    simulate_csi,
)
from .training import TrainConfig, TrainedClassifier, evaluate, fit
from .types import (
    ActivityLabel,
    AmplitudeWindow,
    CsiMatrix,
    Location,
    Sample,
    SampleMeta,
    SnifferId,
    Source,
    Velocity,
    label_from_name,
    validate_sample,
)

__version__ = "0.1.0"
