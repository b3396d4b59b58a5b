"""Mini-batch training with decoupled weight decay and early stopping."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_rng
from .errors import DivergedLoss, EmptySplit
from .metrics import Metrics, compute_metrics
from .models import (
    BivtcModel,
    ModelConfig,
    VitModel,
    batched_bivtc_logits,
    batched_vit_logits,
    build_bivtc,
    build_vit,
    load_model_weights,
    save_model,
    state_dict,
)
from .preprocess import NormStats, center_columns, flatten_patches, normalize, patchify
from .types import ActivityLabel, Sample, SnifferId

MIN_IMPROVEMENT = 1e-6  # strict decrease required to reset early-stopping patience
_EVAL_CHUNK = 64


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 2e-5
    batch_size: int = 16
    max_epochs: int = 150
    patience: int = 15
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be nonnegative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")


class AdamW:
    """Adaptive moments with weight decay applied directly to the weights."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in params]
        self._v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data = p.data - self.lr * update - self.lr * self.weight_decay * p.data


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainedClassifier:
    """A fitted model plus the frozen per-sniffer normalization statistics."""

    model: BivtcModel | VitModel
    stats1: NormStats
    stats2: NormStats

    def tokens_for(self, samples: list[Sample]) -> tuple[np.ndarray, np.ndarray | None]:
        return _tokenize(samples, self)


@dataclass
class FitResult:
    classifier: TrainedClassifier
    history: list[EpochStats]
    best_epoch: int
    stopped_epoch: int
    best_val_loss: float = field(default=float("nan"))


def _tokenize(samples: list[Sample], clf: TrainedClassifier) -> tuple[np.ndarray, np.ndarray | None]:
    """Center, normalize, patchify and flatten windows into (n, N, P*P) stacks."""
    patch = clf.model.config.patch_side
    dtype = clf.model.parameters()[0].data.dtype

    def stack(windows, stats):
        flats = [
            flatten_patches(patchify(normalize(center_columns(w), stats), patch)).astype(dtype)
            for w in windows
        ]
        return np.stack(flats)

    if isinstance(clf.model, VitModel):
        use_first = clf.model.sniffer == SnifferId.S1
        stats = clf.stats1 if use_first else clf.stats2
        windows = [s.sniffer1 if use_first else s.sniffer2 for s in samples]
        return stack(windows, stats), None
    return (
        stack([s.sniffer1 for s in samples], clf.stats1),
        stack([s.sniffer2 for s in samples], clf.stats2),
    )


def _forward(clf: TrainedClassifier, tok1, tok2, rng, train: bool) -> Tensor:
    if isinstance(clf.model, VitModel):
        return batched_vit_logits(clf.model, Tensor(tok1), rng, train)
    return batched_bivtc_logits(clf.model, Tensor(tok1), Tensor(tok2), rng, train)


def _eval_arrays(clf, tok1, tok2, labels) -> tuple[float, float]:
    """Loss and accuracy over full arrays, evaluation mode, chunked."""
    losses = []
    hits = 0
    rng = make_rng(0)  # eval mode draws nothing
    with ad.no_grad():
        for lo in range(0, len(labels), _EVAL_CHUNK):
            hi = min(lo + _EVAL_CHUNK, len(labels))
            t2 = tok2[lo:hi] if tok2 is not None else None
            logits = _forward(clf, tok1[lo:hi], t2, rng, train=False)
            loss = ad.cross_entropy(logits, labels[lo:hi])
            losses.append(float(loss.data) * (hi - lo))
            hits += int((logits.data.argmax(axis=-1) == labels[lo:hi]).sum())
    return sum(losses) / len(labels), hits / len(labels)


def snapshot_weights(model) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in state_dict(model).items()}


def restore_weights(model, snapshot: dict[str, np.ndarray]) -> None:
    for name, t in state_dict(model).items():
        t.data = snapshot[name].copy()


def weights_hash(model) -> str:
    digest = hashlib.sha256()
    for name, t in sorted(state_dict(model).items()):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return digest.hexdigest()


def fit(
    model: BivtcModel | VitModel,
    train_set: list[Sample],
    val_set: list[Sample],
    cfg: TrainConfig,
    val_loss_fn: Callable[[int, object], float] | None = None,
) -> FitResult:
    """Train with shuffled mini-batches until validation loss stops improving.

    Stops after `patience` consecutive epochs without a strict improvement
    (> MIN_IMPROVEMENT) and restores the best-epoch weights. `val_loss_fn`
    replaces the computed validation loss when given (testing seam).
    """
    if not train_set or not val_set:
        raise EmptySplit("train and validation sets must both be nonempty")

    # stats come from the training fold only, over baseline-centered windows
    stats1 = NormStats.from_windows([center_columns(s.sniffer1) for s in train_set])
    stats2 = NormStats.from_windows([center_columns(s.sniffer2) for s in train_set])
    clf = TrainedClassifier(model, stats1, stats2)

    tok1, tok2 = _tokenize(train_set, clf)
    y = np.array([int(s.meta.label) for s in train_set], dtype=np.int64)
    vtok1, vtok2 = _tokenize(val_set, clf)
    vy = np.array([int(s.meta.label) for s in val_set], dtype=np.int64)

    rng = make_rng(cfg.seed)
    params = model.parameters()
    opt = AdamW(params, cfg.lr, cfg.weight_decay)

    history: list[EpochStats] = []
    best_loss = float("inf")
    best_snapshot = snapshot_weights(model)
    best_epoch = 0
    stale = 0
    epoch = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(y))
        loss_sum = 0.0
        hit_sum = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            t2 = tok2[batch] if tok2 is not None else None
            logits = _forward(clf, tok1[batch], t2, rng, train=True)
            loss = ad.cross_entropy(logits, y[batch])
            if not np.isfinite(loss.data):
                raise DivergedLoss(
                    f"non-finite loss at epoch {epoch}, batch {lo // cfg.batch_size}: "
                    f"loss={float(loss.data)}, lr={cfg.lr}, history={len(history)} epochs"
                )
            ad.zero_grads(params)
            ad.backward(loss)
            opt.step()
            loss_sum += float(loss.data) * len(batch)
            hit_sum += int((logits.data.argmax(axis=-1) == y[batch]).sum())

        val_loss, val_acc = _eval_arrays(clf, vtok1, vtok2, vy)
        if val_loss_fn is not None:
            val_loss = float(val_loss_fn(epoch, model))
        history.append(
            EpochStats(epoch, loss_sum / len(y), hit_sum / len(y), val_loss, val_acc)
        )

        if val_loss < best_loss - MIN_IMPROVEMENT:
            best_loss = val_loss
            best_snapshot = snapshot_weights(model)
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    restore_weights(model, best_snapshot)
    return FitResult(clf, history, best_epoch, epoch, best_loss)


def _stats_to_dict(stats: NormStats) -> dict:
    return {
        "mean": stats.mean.tolist(),
        "std": stats.std.tolist(),
        "constant": stats.constant.tolist(),
    }


def _stats_from_dict(d: dict) -> NormStats:
    return NormStats(
        mean=np.array(d["mean"], dtype=np.float64),
        std=np.array(d["std"], dtype=np.float64),
        constant=np.array(d["constant"], dtype=bool),
    )


def save_classifier(out_dir: Path, clf: TrainedClassifier) -> None:
    """Persist weights, architecture config, and normalization stats."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(out_dir / "weights.rfsw", clf.model)
    kind = "vit" if isinstance(clf.model, VitModel) else "bivtc"
    meta = {"kind": kind}
    if isinstance(clf.model, VitModel):
        meta["sniffer"] = int(clf.model.sniffer)
    (out_dir / "classifier.json").write_text(json.dumps(meta, indent=2))
    (out_dir / "norm_stats.json").write_text(
        json.dumps({"s1": _stats_to_dict(clf.stats1), "s2": _stats_to_dict(clf.stats2)})
    )


def load_classifier(out_dir: Path) -> TrainedClassifier:
    out_dir = Path(out_dir)
    meta = json.loads((out_dir / "classifier.json").read_text())
    cfg = ModelConfig.from_json((out_dir / "weights.rfsw.config.json").read_text())
    stats = json.loads((out_dir / "norm_stats.json").read_text())
    from .checkpoint import load_weights

    stored = load_weights(out_dir / "weights.rfsw")
    pos_key = "encoder1.positional_embedding" if meta["kind"] == "bivtc" else "encoder.positional_embedding"
    capacity = stored[pos_key].shape[0]
    rng = make_rng(0)
    if meta["kind"] == "bivtc":
        model: BivtcModel | VitModel = build_bivtc(cfg, rng, patch_capacity=capacity)
    else:
        model = build_vit(cfg, rng, patch_capacity=capacity, sniffer=SnifferId(meta["sniffer"]))
    load_model_weights(out_dir / "weights.rfsw", model)
    return TrainedClassifier(model, _stats_from_dict(stats["s1"]), _stats_from_dict(stats["s2"]))


def classify(clf: TrainedClassifier, samples: list[Sample]) -> list[ActivityLabel]:
    tok1, tok2 = _tokenize(samples, clf)
    rng = make_rng(0)
    out: list[ActivityLabel] = []
    with ad.no_grad():
        for lo in range(0, len(samples), _EVAL_CHUNK):
            hi = min(lo + _EVAL_CHUNK, len(samples))
            t2 = tok2[lo:hi] if tok2 is not None else None
            logits = _forward(clf, tok1[lo:hi], t2, rng, train=False)
            out.extend(ActivityLabel(int(i)) for i in logits.data.argmax(axis=-1))
    return out


def evaluate(clf: TrainedClassifier, samples: list[Sample]) -> Metrics:
    preds = classify(clf, samples)
    return compute_metrics(preds, [s.meta.label for s in samples])
