"""Transformer encoder over CSI patches and the dual-stream classifier.

One encoder per sniffer; feature vectors are concatenated and classified by
a small ReLU MLP head. A single-stream variant (one designated sniffer) is
provided for ablation runs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import RngState, Tensor
from .checkpoint import load_weights, save_weights
from .errors import NonFiniteLogits, ShapeMismatch, TooManyPatches
from .preprocess import PatchSet, flatten_patches, patch_grid, patchify
from .types import (
    BASE_PACKETS,
    KEPT_SUBCARRIERS,
    NUM_CLASSES,
    ActivityLabel,
    Sample,
    SnifferId,
)


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 128
    heads: int = 4
    depth: int = 6
    patch_side: int = 45
    mlp_hidden: int = 512
    dropout_p: float = 0.4
    head_hidden: int = 64
    num_classes: int = NUM_CLASSES

    def __post_init__(self) -> None:
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


def paper_preset() -> ModelConfig:
    return ModelConfig()


def tiny_preset() -> ModelConfig:
    """Small enough for exhaustive finite-difference checks."""
    return ModelConfig(
        embed_dim=8,
        heads=2,
        depth=1,
        patch_side=2,
        mlp_hidden=16,
        dropout_p=0.0,
        head_hidden=8,
    )


def default_patch_capacity(cfg: ModelConfig) -> int:
    """Patch count of a full-rate window; sweeps only ever shrink it."""
    gr, gc = patch_grid(BASE_PACKETS, KEPT_SUBCARRIERS, cfg.patch_side)
    return gr * gc


@dataclass
class EncoderBlock:
    ln1_gain: Tensor
    ln1_bias: Tensor
    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def parameters(self) -> list[Tensor]:
        return [
            self.ln1_gain,
            self.ln1_bias,
            *self.wq,
            *self.wk,
            *self.wv,
            self.wo,
            self.ln2_gain,
            self.ln2_bias,
            self.w1,
            self.b1,
            self.w2,
            self.b2,
        ]


@dataclass
class VitEncoder:
    config: ModelConfig
    patch_projection: Tensor  # (P*P, L)
    positional_embedding: Tensor  # (N_max, L)
    blocks: list[EncoderBlock]

    @property
    def patch_capacity(self) -> int:
        return self.positional_embedding.data.shape[0]

    def parameters(self) -> list[Tensor]:
        out = [self.patch_projection, self.positional_embedding]
        for b in self.blocks:
            out.extend(b.parameters())
        return out


@dataclass
class MlpHead:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class BivtcModel:
    """Two independent encoders plus a ReLU MLP head over concatenated features."""

    config: ModelConfig
    encoder1: VitEncoder
    encoder2: VitEncoder
    head: MlpHead

    def parameters(self) -> list[Tensor]:
        return self.encoder1.parameters() + self.encoder2.parameters() + self.head.parameters()


@dataclass
class VitModel:
    """Single-stream ablation: one encoder fed by a designated sniffer."""

    config: ModelConfig
    encoder: VitEncoder
    head: MlpHead
    sniffer: SnifferId = SnifferId.S1

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.head.parameters()


def _param(rng: RngState, shape: tuple[int, ...], std: float, dtype) -> Tensor:
    # draw in float32 so checkpoints (float32 payload) are always lossless
    values = (rng.standard_normal(shape) * std).astype(np.float32)
    return Tensor(values.astype(dtype), requires_grad=True)


def _const(value: np.ndarray, dtype) -> Tensor:
    return Tensor(value.astype(np.float32).astype(dtype), requires_grad=True)


def build_encoder(
    cfg: ModelConfig, rng: RngState, patch_capacity: int | None = None, dtype=np.float32
) -> VitEncoder:
    L = cfg.embed_dim
    pp = cfg.patch_side * cfg.patch_side
    n_max = patch_capacity if patch_capacity is not None else default_patch_capacity(cfg)
    head_dim = L // cfg.heads
    blocks = []
    for _ in range(cfg.depth):
        blocks.append(
            EncoderBlock(
                ln1_gain=_const(np.ones(L), dtype),
                ln1_bias=_const(np.zeros(L), dtype),
                wq=[_param(rng, (L, head_dim), L**-0.5, dtype) for _ in range(cfg.heads)],
                wk=[_param(rng, (L, head_dim), L**-0.5, dtype) for _ in range(cfg.heads)],
                wv=[_param(rng, (L, head_dim), L**-0.5, dtype) for _ in range(cfg.heads)],
                wo=_param(rng, (L, L), L**-0.5, dtype),
                ln2_gain=_const(np.ones(L), dtype),
                ln2_bias=_const(np.zeros(L), dtype),
                w1=_param(rng, (L, cfg.mlp_hidden), L**-0.5, dtype),
                b1=_const(np.zeros(cfg.mlp_hidden), dtype),
                w2=_param(rng, (cfg.mlp_hidden, L), cfg.mlp_hidden**-0.5, dtype),
                b2=_const(np.zeros(L), dtype),
            )
        )
    return VitEncoder(
        config=cfg,
        patch_projection=_param(rng, (pp, L), pp**-0.5, dtype),
        positional_embedding=_param(rng, (n_max, L), 0.02, dtype),
        blocks=blocks,
    )


def _build_head(cfg: ModelConfig, in_dim: int, rng: RngState, dtype) -> MlpHead:
    return MlpHead(
        w1=_param(rng, (in_dim, cfg.head_hidden), in_dim**-0.5, dtype),
        b1=_const(np.zeros(cfg.head_hidden), dtype),
        w2=_param(rng, (cfg.head_hidden, cfg.num_classes), cfg.head_hidden**-0.5, dtype),
        b2=_const(np.zeros(cfg.num_classes), dtype),
    )


def build_bivtc(
    cfg: ModelConfig, rng: RngState, patch_capacity: int | None = None, dtype=np.float32
) -> BivtcModel:
    return BivtcModel(
        config=cfg,
        encoder1=build_encoder(cfg, rng, patch_capacity, dtype),
        encoder2=build_encoder(cfg, rng, patch_capacity, dtype),
        head=_build_head(cfg, 2 * cfg.embed_dim, rng, dtype),
    )


def build_vit(
    cfg: ModelConfig,
    rng: RngState,
    patch_capacity: int | None = None,
    dtype=np.float32,
    sniffer: SnifferId = SnifferId.S1,
) -> VitModel:
    return VitModel(
        config=cfg,
        encoder=build_encoder(cfg, rng, patch_capacity, dtype),
        head=_build_head(cfg, cfg.embed_dim, rng, dtype),
        sniffer=sniffer,
    )


# ---------------------------------------------------------------------------
# forward passes: every function accepts (..., N, F) token stacks, so the
# same graph code serves per-sample calls and fit()'s batched path
# ---------------------------------------------------------------------------


def _embed_tokens(tokens: Tensor, enc: VitEncoder, rng: RngState, train: bool) -> Tensor:
    n = tokens.data.shape[-2]
    if n > enc.patch_capacity:
        raise TooManyPatches(f"{n} patches exceed the positional table ({enc.patch_capacity})")
    pos = enc.positional_embedding
    if n < enc.patch_capacity:
        pos = ad.take_rows(pos, n)
    x = ad.add(ad.matmul(tokens, enc.patch_projection), pos)
    return ad.dropout(x, enc.config.dropout_p, rng, train)


def _encoder_stack(x: Tensor, enc: VitEncoder, rng: RngState, train: bool) -> Tensor:
    p = enc.config.dropout_p
    for blk in enc.blocks:
        attn_in = ad.layer_norm(x, blk.ln1_gain, blk.ln1_bias)
        attn = ad.multi_head_attention(
            attn_in, {"wq": blk.wq, "wk": blk.wk, "wv": blk.wv, "wo": blk.wo}
        )
        x = ad.add(x, ad.dropout(attn, p, rng, train))
        mlp_in = ad.layer_norm(x, blk.ln2_gain, blk.ln2_bias)
        hidden = ad.gelu(ad.add(ad.matmul(mlp_in, blk.w1), blk.b1))
        mlp = ad.add(ad.matmul(hidden, blk.w2), blk.b2)
        x = ad.add(x, ad.dropout(mlp, p, rng, train))
    return x


def _encode_features(tokens: Tensor, enc: VitEncoder, rng: RngState, train: bool) -> Tensor:
    x = _embed_tokens(tokens, enc, rng, train)
    x = _encoder_stack(x, enc, rng, train)
    return ad.mean_over_axis(x, x.data.ndim - 2)


def _head_logits(features: Tensor, head: MlpHead) -> Tensor:
    hidden = ad.relu(ad.add(ad.matmul(features, head.w1), head.b1))
    return ad.add(ad.matmul(hidden, head.w2), head.b2)


def embed_patches(p: PatchSet, enc: VitEncoder, rng: RngState, train: bool = False) -> Tensor:
    """Project flattened patches and add positional rows; dropout in train mode."""
    tokens = Tensor(flatten_patches(p).astype(enc.patch_projection.data.dtype))
    return _embed_tokens(tokens, enc, rng, train)


def vit_forward(p: PatchSet, enc: VitEncoder, rng: RngState, train: bool = False) -> Tensor:
    """Encode one patch set into a feature vector (mean pool over tokens)."""
    tokens = Tensor(flatten_patches(p).astype(enc.patch_projection.data.dtype))
    return _encode_features(tokens, enc, rng, train)


def bivtc_forward(s: Sample, model: BivtcModel, rng: RngState, train: bool = False) -> Tensor:
    """Class logits for one sample through both encoders and the fusion head."""
    if s.sniffer1.shape != s.sniffer2.shape:
        raise ShapeMismatch("sniffer windows differ in shape")
    p1 = patchify(s.sniffer1, model.config.patch_side)
    p2 = patchify(s.sniffer2, model.config.patch_side)
    f1 = vit_forward(p1, model.encoder1, rng, train)
    f2 = vit_forward(p2, model.encoder2, rng, train)
    return _head_logits(ad.concat_last_dim(f1, f2), model.head)


def vit_classify_forward(s: Sample, model: VitModel, rng: RngState, train: bool = False) -> Tensor:
    """Single-stream logits from the model's designated sniffer."""
    window = s.sniffer1 if model.sniffer == SnifferId.S1 else s.sniffer2
    p = patchify(window, model.config.patch_side)
    f = vit_forward(p, model.encoder, rng, train)
    return _head_logits(f, model.head)


def batched_bivtc_logits(
    model: BivtcModel, tokens1: Tensor, tokens2: Tensor, rng: RngState, train: bool
) -> Tensor:
    """Logits for (B, N, P*P) token stacks from both sniffers."""
    f1 = _encode_features(tokens1, model.encoder1, rng, train)
    f2 = _encode_features(tokens2, model.encoder2, rng, train)
    return _head_logits(ad.concat_last_dim(f1, f2), model.head)


def batched_vit_logits(model: VitModel, tokens: Tensor, rng: RngState, train: bool) -> Tensor:
    f = _encode_features(tokens, model.encoder, rng, train)
    return _head_logits(f, model.head)


def predict(logits) -> ActivityLabel:
    """Label of the maximal logit; ties break toward the lowest class index."""
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if values.ndim != 1 or values.shape[0] != NUM_CLASSES:
        raise ShapeMismatch(f"expected {NUM_CLASSES} logits, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NonFiniteLogits("logits contain NaN or Inf")
    return ActivityLabel(int(np.argmax(values)))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _encoder_named(prefix: str, enc: VitEncoder) -> dict[str, Tensor]:
    named = {
        f"{prefix}.patch_projection": enc.patch_projection,
        f"{prefix}.positional_embedding": enc.positional_embedding,
    }
    for i, blk in enumerate(enc.blocks):
        base = f"{prefix}.block{i}"
        named[f"{base}.ln1_gain"] = blk.ln1_gain
        named[f"{base}.ln1_bias"] = blk.ln1_bias
        for h in range(len(blk.wq)):
            named[f"{base}.wq{h}"] = blk.wq[h]
            named[f"{base}.wk{h}"] = blk.wk[h]
            named[f"{base}.wv{h}"] = blk.wv[h]
        named[f"{base}.wo"] = blk.wo
        named[f"{base}.ln2_gain"] = blk.ln2_gain
        named[f"{base}.ln2_bias"] = blk.ln2_bias
        named[f"{base}.w1"] = blk.w1
        named[f"{base}.b1"] = blk.b1
        named[f"{base}.w2"] = blk.w2
        named[f"{base}.b2"] = blk.b2
    return named


def state_dict(model: BivtcModel | VitModel) -> dict[str, Tensor]:
    if isinstance(model, BivtcModel):
        named = _encoder_named("encoder1", model.encoder1)
        named.update(_encoder_named("encoder2", model.encoder2))
    else:
        named = _encoder_named("encoder", model.encoder)
    named.update(
        {
            "head.w1": model.head.w1,
            "head.b1": model.head.b1,
            "head.w2": model.head.w2,
            "head.b2": model.head.b2,
        }
    )
    return named


def save_model(path: Path, model: BivtcModel | VitModel) -> None:
    """Write weights next to a JSON echo of the architecture config."""
    path = Path(path)
    save_weights(path, {k: v.data for k, v in state_dict(model).items()})
    path.with_suffix(path.suffix + ".config.json").write_text(model.config.to_json())


def load_model_weights(path: Path, model: BivtcModel | VitModel) -> None:
    stored = load_weights(path)
    own = state_dict(model)
    if set(stored) != set(own):
        missing = set(own) ^ set(stored)
        raise ShapeMismatch(f"checkpoint/model parameter names differ: {sorted(missing)}")
    for name, tensor in own.items():
        if stored[name].shape != tensor.data.shape:
            raise ShapeMismatch(f"{name}: checkpoint {stored[name].shape} vs {tensor.data.shape}")
        tensor.data = stored[name].astype(tensor.data.dtype)
