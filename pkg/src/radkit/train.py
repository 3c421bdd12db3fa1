"""Self-supervised pretraining loop and downstream linear probing.

The loop is deliberately desk-scale and bitwise deterministic: batches,
view draws and parameter init all derive from one seed stream, gradients
reduce in fixed order, and the optimizer state lives in a single thread.
Per step: sample a batch, draw two views per frame, embed both views and
the frozen teacher, take the composite contrastive loss, backpropagate
through the radar branch only, and apply momentum SGD with the selected
learning-rate schedule.

Downstream evaluation freezes the backbone and fits a closed-form ridge
regressor from backbone features to the strongest reflector's BEV
position, reporting held-out RMSE in meters.  The label-efficiency sweep
repeats the probe over a grid of training-label fractions for both the
pretrained and a random-initialized backbone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import io as radio
from .augment import AugmentationSpec, make_views
from .contrastive import (
    ContrastiveConfig,
    EmbeddingBatch,
    cross_loss,
    intra_loss,
    loss_gradients,
)
from .encoder import (
    DenseLayer,
    EncoderParams,
    GradientSet,
    backward,
    forward_batch,
    init_params,
    save_params,
    vision_oracle,
)
from .rng import RngStream
from .simulate import integrate_heatmap
from .types import Scene, VirtualArrayTensor, polar_to_cartesian

__all__ = [
    "NumericalAbort",
    "TrainConfig",
    "ProbeConfig",
    "Frame",
    "FrameDataset",
    "learning_rate",
    "sgd_step",
    "pretrain",
    "PretrainResult",
    "extract_features",
    "strongest_xy",
    "linear_probe",
    "ProbeReport",
    "label_efficiency_sweep",
]

_SCHEDULES = ("cosine", "constant")


class NumericalAbort(FloatingPointError):
    """A non-finite loss or update was produced; training cannot continue."""


@dataclass(frozen=True)
class Frame:
    """One dataset item: the raw tensor and the scene that produced it."""

    scene: Scene
    tensor: VirtualArrayTensor


class FrameDataset:
    """Immutable sequence of frames, loadable from a manifest file.

    The manifest is JSON: ``{"frames": [{"id", "scene", "tensor"}, ...]}``
    with paths relative to the manifest's directory.
    """

    def __init__(self, frames: Sequence[Frame]):
        self._frames = tuple(frames)
        if not self._frames:
            raise ValueError("dataset must contain at least one frame")

    def __len__(self) -> int:
        return len(self._frames)

    def __getitem__(self, i: int) -> Frame:
        return self._frames[i]

    def __iter__(self):
        return iter(self._frames)

    @classmethod
    def from_manifest(cls, path: str | Path) -> "FrameDataset":
        path = Path(path)
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise radio.FileFormatError(path, e.pos, f"invalid JSON: {e.msg}") from e
        base = path.parent
        frames = []
        for entry in manifest.get("frames", []):
            scene = radio.read_scene(base / entry["scene"])
            tensor = radio.read_tensor(base / entry["tensor"])
            frames.append(Frame(scene=scene, tensor=tensor))
        return cls(frames)


@dataclass(frozen=True)
class TrainConfig:
    """Pretraining configuration.

    The architecture fields (``hidden_widths``, ``feat_dim``,
    ``embed_dim``) size the encoder; the input width is derived from the
    dataset's heatmap dimensions.  ``oracle_seed`` keys the frozen teacher
    and is independent of the training ``seed``.
    """

    batch_size: int = 32
    steps: int = 500
    lr_base: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"
    seed: int = 0
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec.default)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    dataset_path: str | None = None
    checkpoint_every: int = 0
    hidden_widths: tuple[int, ...] = (256,)
    feat_dim: int = 128
    embed_dim: int = 128
    oracle_seed: int = 101

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not self.lr_base > 0:
            raise ValueError("lr_base must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.schedule not in _SCHEDULES:
            raise ValueError(f"schedule must be one of {_SCHEDULES}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        object.__setattr__(self, "hidden_widths",
                           tuple(int(w) for w in self.hidden_widths))

    def backbone_widths(self, input_dim: int) -> tuple[int, ...]:
        return (int(input_dim), *self.hidden_widths, int(self.feat_dim))

    def head_widths(self) -> tuple[int, ...]:
        return (int(self.feat_dim), int(self.embed_dim), int(self.embed_dim))

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "steps": self.steps,
            "lr_base": self.lr_base,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "schedule": self.schedule,
            "seed": self.seed,
            "augmentation": self.augmentation.to_dict(),
            "contrastive": {
                "temperature": self.contrastive.temperature,
                "lambda_cross": self.contrastive.lambda_cross,
                "symmetric_cross": self.contrastive.symmetric_cross,
                "negatives_variant": self.contrastive.negatives_variant,
            },
            "dataset_path": self.dataset_path,
            "checkpoint_every": self.checkpoint_every,
            "hidden_widths": list(self.hidden_widths),
            "feat_dim": self.feat_dim,
            "embed_dim": self.embed_dim,
            "oracle_seed": self.oracle_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "augmentation" in d:
            d["augmentation"] = AugmentationSpec.from_dict(d["augmentation"])
        if "contrastive" in d:
            d["contrastive"] = ContrastiveConfig(**d["contrastive"])
        if "hidden_widths" in d:
            d["hidden_widths"] = tuple(d["hidden_widths"])
        return cls(**d)


@dataclass(frozen=True)
class ProbeConfig:
    """Frozen-backbone ridge probe configuration.

    ``train_fraction`` subsamples the training split (the held-out split
    is fixed by ``holdout_fraction`` and ``split_seed`` so label-efficiency
    points share one test set).
    """

    ridge_lambda: float = 1e-3
    label: str = "strongest_xy"
    train_fraction: float = 1.0
    holdout_fraction: float = 0.25
    split_seed: int = 0

    def __post_init__(self) -> None:
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be >= 0")
        if self.label != "strongest_xy":
            raise ValueError("unsupported probe label")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in (0, 1)")


# ---------------------------------------------------------------------------
# optimizer

def learning_rate(step: int, config: TrainConfig) -> float:
    """Schedule value at ``step``; cosine decays from lr_base to 0 at
    ``steps``."""
    if config.schedule == "constant" or config.steps == 0:
        return config.lr_base
    frac = min(max(step / config.steps, 0.0), 1.0)
    return config.lr_base * 0.5 * (1.0 + math.cos(math.pi * frac))


def _zero_like(params: EncoderParams) -> GradientSet:
    zl = lambda l: DenseLayer(np.zeros_like(l.weights), np.zeros_like(l.bias))
    return GradientSet(tuple(zl(l) for l in params.backbone),
                       tuple(zl(l) for l in params.head))


def sgd_step(params: EncoderParams, grads: GradientSet, step_index: int,
             config: TrainConfig,
             velocity: GradientSet | None = None
             ) -> tuple[EncoderParams, GradientSet]:
    """One momentum-SGD update with coupled weight decay.

    ``v <- momentum*v + grad + weight_decay*param``;
    ``param <- param - lr(step)*v``.  Returns the new parameters and
    velocity; raises :class:`NumericalAbort` on a non-finite update.
    """
    grads.check_shapes(params)
    if velocity is None:
        velocity = _zero_like(params)
    lr = learning_rate(step_index, config)

    def update(stage: tuple[DenseLayer, ...], gstage: tuple[DenseLayer, ...],
               vstage: tuple[DenseLayer, ...]):
        new_p, new_v = [], []
        for p, g, v in zip(stage, gstage, vstage):
            vw = config.momentum * v.weights + g.weights + config.weight_decay * p.weights
            vb = config.momentum * v.bias + g.bias + config.weight_decay * p.bias
            pw = p.weights - lr * vw
            pb = p.bias - lr * vb
            if not (np.isfinite(pw).all() and np.isfinite(pb).all()):
                raise NumericalAbort(
                    f"non-finite parameter update at step {step_index} "
                    f"(lr={lr:.3g})")
            new_p.append(DenseLayer(pw, pb))
            new_v.append(DenseLayer(vw, vb))
        return tuple(new_p), tuple(new_v)

    pb, vb = update(params.backbone, grads.backbone, velocity.backbone)
    ph, vh = update(params.head, grads.head, velocity.head)
    return EncoderParams(pb, ph), GradientSet(vb, vh)


# ---------------------------------------------------------------------------
# pretraining

@dataclass
class PretrainResult:
    params: EncoderParams
    init_params: EncoderParams
    metrics: list[dict]
    fallback_count: int
    config: TrainConfig


def _oracle_table(dataset: FrameDataset, config: TrainConfig) -> np.ndarray:
    return np.stack([
        vision_oracle(f.scene, config.oracle_seed, config.embed_dim)
        for f in dataset
    ])


def pretrain(config: TrainConfig,
             dataset: FrameDataset | None = None,
             log_path: str | Path | None = None,
             checkpoint_dir: str | Path | None = None) -> PretrainResult:
    """Run the pretraining loop; see the module docstring for the recipe.

    ``dataset`` defaults to loading ``config.dataset_path``.  When
    ``log_path`` is given, one JSON object per step is appended:
    ``{"step", "l_intra", "l_cross", "l_total", "lr"}``.  Checkpoints are
    written every ``checkpoint_every`` steps (plus the final state) when
    ``checkpoint_dir`` is given.
    """
    if dataset is None:
        if config.dataset_path is None:
            raise ValueError("no dataset given and config.dataset_path unset")
        dataset = FrameDataset.from_manifest(config.dataset_path)
    if len(dataset) == 0:
        raise ValueError("dataset is empty")

    grid = dataset[0].tensor.grid
    input_dim = grid.num_range * grid.num_azimuth
    root = RngStream(config.seed)
    params = init_params(config.backbone_widths(input_dim), root.child("init"),
                         config.head_widths())
    initial = params
    velocity: GradientSet | None = None
    use_cross = config.contrastive.lambda_cross != 0.0
    oracle = _oracle_table(dataset, config) if use_cross else None

    metrics: list[dict] = []
    fallbacks = 0
    b = config.batch_size
    log_f = open(log_path, "w", encoding="utf-8") if log_path else None
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    try:
        for step in range(config.steps):
            idx = root.child("batch", step).generator().integers(0, len(dataset), b)
            views = [
                make_views(dataset[int(i)].tensor, config.augmentation,
                           root.child("views", step, slot),
                           source_id=dataset[int(i)].scene.id)
                for slot, i in enumerate(idx)
            ]
            x = np.stack(
                [v.view_a.data.reshape(-1) for v in views]
                + [v.view_b.data.reshape(-1) for v in views]
            ).astype(np.float64)
            _, embeddings, fb = forward_batch(params, x)
            fallbacks += int(fb.sum())
            batch = EmbeddingBatch(
                z=embeddings[:b],
                z_prime=embeddings[b:],
                z_vision=oracle[idx] if use_cross else None,
            )
            l_intra = intra_loss(batch, config.contrastive.temperature,
                                 config.contrastive.negatives_variant)
            l_cross = (cross_loss(batch, config.contrastive.temperature,
                                  config.contrastive.symmetric_cross)
                       if use_cross else 0.0)
            l_total = l_intra + config.contrastive.lambda_cross * l_cross
            if not math.isfinite(l_total):
                raise NumericalAbort(f"non-finite loss at step {step}")

            g = loss_gradients(batch, config.contrastive)
            upstream = np.vstack([g.z, g.z_prime])
            grads = backward(params, x, upstream)
            params, velocity = sgd_step(params, grads, step, config, velocity)

            lr = learning_rate(step, config)
            record = {"step": step, "l_intra": l_intra, "l_cross": l_cross,
                      "l_total": l_total, "lr": lr}
            metrics.append(record)
            if log_f:
                log_f.write(json.dumps(record) + "\n")
            if ckpt_dir and config.checkpoint_every > 0 \
                    and (step + 1) % config.checkpoint_every == 0:
                save_params(params, step + 1, ckpt_dir / f"step_{step + 1:06d}.ckpt")
    finally:
        if log_f:
            log_f.close()

    if ckpt_dir:
        save_params(params, config.steps, ckpt_dir / "final.ckpt")
    return PretrainResult(params=params, init_params=initial, metrics=metrics,
                          fallback_count=fallbacks, config=config)


# ---------------------------------------------------------------------------
# linear probe

def strongest_xy(scene: Scene) -> tuple[float, float]:
    """BEV position of the highest-amplitude reflector (first on ties)."""
    if not scene.scatterers:
        raise ValueError(f"scene {scene.id!r} has no scatterers to label")
    best = max(scene.scatterers, key=lambda s: s.amplitude)
    return polar_to_cartesian(best.range, best.azimuth)


def extract_features(params: EncoderParams,
                     dataset: Iterable[Frame]) -> np.ndarray:
    """Frozen backbone features of each frame's plain (unaugmented) heatmap."""
    rows = [integrate_heatmap(f.tensor).data.reshape(-1) for f in dataset]
    x = np.asarray(rows, dtype=np.float64)
    feats, _, _ = forward_batch(params, x)
    return feats


def _ridge_fit(x: np.ndarray, y: np.ndarray, lam: float
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centered closed-form ridge; intercept is not penalized."""
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ xc + lam * np.eye(x.shape[1])
    try:
        coef = np.linalg.solve(gram, xc.T @ yc)
    except np.linalg.LinAlgError as e:
        raise ValueError(
            "feature covariance is singular; set ridge_lambda > 0") from e
    if not np.isfinite(coef).all():
        raise ValueError(
            "ridge solution is non-finite; set ridge_lambda > 0")
    return coef, x_mean, y_mean


@dataclass(frozen=True)
class ProbeReport:
    rmse: float
    baseline_rmse: float
    n_train: int
    n_test: int
    train_fraction: float

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "baseline_rmse": self.baseline_rmse,
                "n_train": self.n_train, "n_test": self.n_test,
                "train_fraction": self.train_fraction}


def _probe_split(n: int, probe: ProbeConfig) -> tuple[np.ndarray, np.ndarray]:
    order = RngStream(probe.split_seed).child("probe-split").generator().permutation(n)
    n_test = max(1, int(round(probe.holdout_fraction * n)))
    return order[n_test:], order[:n_test]


def linear_probe(params: EncoderParams, dataset: FrameDataset,
                 probe: ProbeConfig) -> ProbeReport:
    """Frozen-backbone ridge regression to the strongest reflector (x, y).

    RMSE is the root mean squared Euclidean distance on the held-out
    split, in meters.  ``baseline_rmse`` is the train-mean predictor on
    the same split.  Deterministic in (params, dataset, probe).
    """
    targets = np.asarray([strongest_xy(f.scene) for f in dataset])
    feats = extract_features(params, dataset)
    train_idx, test_idx = _probe_split(len(dataset), probe)
    n_used = int(round(probe.train_fraction * len(train_idx)))
    if n_used < 2:
        raise ValueError(
            f"train_fraction {probe.train_fraction} yields {n_used} training "
            f"samples; need at least 2")
    train_idx = train_idx[:n_used]

    coef, x_mean, y_mean = _ridge_fit(feats[train_idx], targets[train_idx],
                                      probe.ridge_lambda)
    pred = (feats[test_idx] - x_mean) @ coef + y_mean
    err = pred - targets[test_idx]
    rmse = float(np.sqrt(np.mean(np.sum(err ** 2, axis=1))))
    base = y_mean - targets[test_idx]
    baseline = float(np.sqrt(np.mean(np.sum(base ** 2, axis=1))))
    return ProbeReport(rmse=rmse, baseline_rmse=baseline,
                       n_train=int(n_used), n_test=int(len(test_idx)),
                       train_fraction=probe.train_fraction)


def label_efficiency_sweep(params: EncoderParams,
                           dataset: FrameDataset,
                           fractions: Sequence[float],
                           probe: ProbeConfig,
                           random_params: EncoderParams | None = None,
                           random_seed: int = 0) -> list[dict]:
    """Probe RMSE at each label fraction for pretrained vs random arms.

    ``random_params`` defaults to a fresh random initialization of the
    same architecture.  Returns one row per fraction:
    ``{"fraction", "rmse_pretrained", "rmse_random"}``.
    """
    if random_params is None:
        widths = [l.weights.shape[0] for l in params.backbone] \
            + [params.backbone[-1].weights.shape[1]]
        head = [l.weights.shape[0] for l in params.head] + [params.embed_dim]
        random_params = init_params(
            widths, RngStream(random_seed).child("random-arm"), head)

    rows = []
    for frac in fractions:
        cfg = replace(probe, train_fraction=float(frac))
        rows.append({
            "fraction": float(frac),
            "rmse_pretrained": linear_probe(params, dataset, cfg).rmse,
            "rmse_random": linear_probe(random_params, dataset, cfg).rmse,
        })
    return rows
