"""Trainable radar encoder and the frozen scene-feature teacher.

The encoder is a dense network on flattened heatmaps: a backbone stack
producing the feature vector used by downstream probes, then a projection
head whose output is L2-normalized for the contrastive losses.  ReLU sits
between layers; the last layer of each stage is linear.  Forward and
reverse passes are written out explicitly (float64) so gradients can be
verified coordinate-by-coordinate against finite differences.

The teacher (:func:`vision_oracle`) stands in for a frozen pretrained
image encoder: it embeds ground-truth scene structure through a fixed
random linear map, so its output correlates with scene content but never
with radar noise, and no training step can alter it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import io as radio
from .rng import RngStream
from .types import Heatmap, Scene, polar_to_cartesian

__all__ = [
    "DenseLayer",
    "EncoderParams",
    "GradientSet",
    "init_params",
    "forward",
    "forward_batch",
    "backward",
    "vision_oracle",
    "save_params",
    "load_params",
]


@dataclass(frozen=True)
class DenseLayer:
    """One affine layer: ``x @ weights + bias``; weights (fan_in, fan_out)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ValueError(f"layer shapes inconsistent: {w.shape} vs {b.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("layer parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class EncoderParams:
    backbone: tuple[DenseLayer, ...]
    head: tuple[DenseLayer, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "backbone", tuple(self.backbone))
        object.__setattr__(self, "head", tuple(self.head))
        if not self.backbone or not self.head:
            raise ValueError("backbone and head must each have >= 1 layer")
        chain = list(self.backbone) + list(self.head)
        for prev, nxt in zip(chain, chain[1:]):
            if prev.weights.shape[1] != nxt.weights.shape[0]:
                raise ValueError(
                    f"layer widths do not chain: {prev.weights.shape} -> "
                    f"{nxt.weights.shape}")

    @property
    def input_dim(self) -> int:
        return self.backbone[0].weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.backbone[-1].weights.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.head[-1].weights.shape[1]

    def layers(self) -> tuple[DenseLayer, ...]:
        return self.backbone + self.head


@dataclass(frozen=True)
class GradientSet:
    """One gradient per parameter tensor, shape-matched to EncoderParams."""

    backbone: tuple[DenseLayer, ...]
    head: tuple[DenseLayer, ...]

    def check_shapes(self, params: EncoderParams) -> None:
        for g, p in zip(self.backbone + self.head, params.layers()):
            if g.weights.shape != p.weights.shape or g.bias.shape != p.bias.shape:
                raise ValueError("gradient shapes do not match parameters")


def _glorot_layer(fan_in: int, fan_out: int, gen: np.random.Generator) -> DenseLayer:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = gen.uniform(-limit, limit, size=(fan_in, fan_out))
    return DenseLayer(w, np.zeros(fan_out))


def init_params(layer_widths: Sequence[int],
                rng: RngStream,
                head_widths: Sequence[int] | None = None) -> EncoderParams:
    """Glorot-uniform weights, zero biases, deterministic per stream.

    ``layer_widths`` is the backbone chain including the input width
    (flattened heatmap size).  ``head_widths`` continues from the backbone
    output; the default is two square layers (feature dim preserved).
    """
    widths = [int(w) for w in layer_widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError("layer_widths needs >= 2 entries, all >= 1")
    if head_widths is None:
        head_widths = [widths[-1], widths[-1], widths[-1]]
    hw = [int(w) for w in head_widths]
    if len(hw) < 2 or any(w < 1 for w in hw):
        raise ValueError("head_widths needs >= 2 entries, all >= 1")
    if hw[0] != widths[-1]:
        raise ValueError(
            f"head input width {hw[0]} must equal backbone output {widths[-1]}")
    gen = rng.generator()
    backbone = tuple(_glorot_layer(a, b, gen) for a, b in zip(widths, widths[1:]))
    head = tuple(_glorot_layer(a, b, gen) for a, b in zip(hw, hw[1:]))
    return EncoderParams(backbone, head)


def _as_batch(x: Heatmap | np.ndarray, input_dim: int) -> np.ndarray:
    if isinstance(x, Heatmap):
        x = x.data
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    elif arr.ndim == 2 and arr.size == input_dim and arr.shape[1] != input_dim:
        arr = arr.reshape(1, -1)
    elif arr.ndim == 3:
        arr = arr.reshape(arr.shape[0], -1)
    if arr.ndim != 2 or arr.shape[1] != input_dim:
        raise ValueError(f"input width {arr.shape} does not match encoder "
                         f"input dim {input_dim}")
    return arr


def _run_stage(layers: tuple[DenseLayer, ...], x: np.ndarray,
               cache: list | None) -> np.ndarray:
    # ReLU between layers, none after the stage's final layer
    h = x
    for i, layer in enumerate(layers):
        z = h @ layer.weights + layer.bias
        last = i == len(layers) - 1
        if cache is not None:
            cache.append((h, z, last))
        h = z if last else np.maximum(z, 0.0)
    return h


def _normalize_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1)
    fallback = norms == 0.0
    safe = np.where(fallback, 1.0, norms)
    out = z / safe[:, None]
    if fallback.any():
        out = out.copy()
        out[fallback, :] = 0.0
        out[fallback, 0] = 1.0
    return out, norms, fallback


def forward_batch(params: EncoderParams, x: Heatmap | np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backbone features, unit-norm projections, and the fallback mask.

    Rows whose pre-normalization projection is exactly zero map to the
    fixed unit vector e1; the returned boolean mask marks them so callers
    can count occurrences.
    """
    xb = _as_batch(x, params.input_dim)
    feat = _run_stage(params.backbone, xb, None)
    raw = _run_stage(params.head, feat, None)
    z, _, fallback = _normalize_rows(raw)
    return feat, z, fallback


def forward(params: EncoderParams, heatmap: Heatmap | np.ndarray
            ) -> tuple[np.ndarray, np.ndarray]:
    """Single-input forward pass: (backbone feature, unit embedding)."""
    feat, z, _ = forward_batch(params, heatmap)
    return feat[0], z[0]


def backward(params: EncoderParams, x: Heatmap | np.ndarray,
             upstream: np.ndarray) -> GradientSet:
    """Exact reverse-mode gradients of the loss w.r.t. all parameters.

    ``upstream`` is dLoss/dZ for the batch of unit embeddings Z produced
    by :func:`forward_batch` on ``x``.  The normalization Jacobian
    ``(I - zz^T)/|z|`` is applied first; fallback rows (zero pre-norm
    projection) propagate zero gradient.  Raises if any resulting
    gradient is non-finite.
    """
    xb = _as_batch(x, params.input_dim)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (xb.shape[0], params.embed_dim):
        raise ValueError(f"upstream gradient shape {g.shape} does not match "
                         f"(batch, embed_dim)=({xb.shape[0]}, {params.embed_dim})")

    cache: list = []
    feat = _run_stage(params.backbone, xb, cache)
    raw = _run_stage(params.head, feat, cache)
    zhat, norms, fallback = _normalize_rows(raw)

    # through z = raw/|raw|:  dL/draw = (g - (g.zhat) zhat)/|raw|
    inner = np.einsum("ij,ij->i", g, zhat)
    safe = np.where(fallback, 1.0, norms)
    delta = (g - inner[:, None] * zhat) / safe[:, None]
    delta[fallback, :] = 0.0

    layers = params.layers()
    grads: list[DenseLayer] = []
    for h, z, last in reversed(cache):
        if not last:
            delta = delta * (z > 0.0)
        grads.append(DenseLayer(h.T @ delta, delta.sum(axis=0)))
        delta = delta @ layers[len(cache) - len(grads)].weights.T
    grads.reverse()

    n_backbone = len(params.backbone)
    out = GradientSet(tuple(grads[:n_backbone]), tuple(grads[n_backbone:]))
    for gl in out.backbone + out.head:
        if not (np.isfinite(gl.weights).all() and np.isfinite(gl.bias).all()):
            raise FloatingPointError("non-finite gradient detected")
    return out


# ---------------------------------------------------------------------------
# frozen teacher

_ORACLE_SLOTS = 16          # scatterers encoded per scene
_FEATURES_PER_SLOT = 3      # (x, y, amplitude)


def vision_oracle(scene: Scene, oracle_seed: int,
                  embed_dim: int = 128) -> np.ndarray:
    """Deterministic scene embedding from a frozen random linear map.

    Scatterers are sorted by (range, azimuth); each contributes its BEV
    (x, y) and amplitude; the flattened feature vector is zero-padded or
    truncated to 16 slots, passed through a fixed Gaussian matrix drawn
    once from ``oracle_seed``, and L2-normalized.  An empty scene maps to
    the fixed unit vector e1.
    """
    feat = np.zeros(_ORACLE_SLOTS * _FEATURES_PER_SLOT)
    ordered = sorted(scene.scatterers, key=lambda s: (s.range, s.azimuth))
    for slot, s in enumerate(ordered[:_ORACLE_SLOTS]):
        x, y = polar_to_cartesian(s.range, s.azimuth)
        feat[slot * 3:slot * 3 + 3] = (x, y, s.amplitude)

    gen = RngStream(int(oracle_seed)).child("vision-oracle").generator()
    matrix = gen.standard_normal((feat.size, embed_dim))
    z = feat @ matrix
    norm = np.linalg.norm(z)
    if norm == 0.0:
        out = np.zeros(embed_dim)
        out[0] = 1.0
        return out
    return z / norm


# ---------------------------------------------------------------------------
# persistence

def save_params(params: EncoderParams, step: int, path) -> None:
    radio.write_checkpoint(
        [(l.weights, l.bias) for l in params.backbone],
        [(l.weights, l.bias) for l in params.head],
        step, path)


def load_params(path) -> tuple[EncoderParams, int]:
    backbone, head, step = radio.read_checkpoint(path)
    return EncoderParams(
        tuple(DenseLayer(w, b) for w, b in backbone),
        tuple(DenseLayer(w, b) for w, b in head),
    ), step
