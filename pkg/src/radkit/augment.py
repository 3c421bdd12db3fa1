"""Stochastic view generation.

Two augmentation domains compose into a seeded pipeline:

* Raw domain (before antenna integration): Bernoulli antenna dropout with
  keep probability ``p`` and per-antenna uniform phase noise in
  ``[-alpha*pi, alpha*pi)``.  Both are diagonal scalings of the antenna
  axis, so they commute; the draw-order contract is mask first, phases
  second.
* Heatmap domain (after integration): azimuth-shift rotation, center crop
  with bilinear resampling, axis flips, percentile thresholding, cutout.
  Rotation and cropping act on the polar axes directly; content shifted
  past the field of view is zero-filled, not wrapped.

:class:`AugmentationSpec` is a declarative, JSON-serializable list of
steps, each applied with its own probability.  :func:`make_views` draws
two independent realizations of the spec from one seed stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .rng import RngStream
from .simulate import integrate_heatmap
from .types import Heatmap, VirtualArrayTensor

__all__ = [
    "AugmentStep",
    "AugmentationSpec",
    "ViewPair",
    "antenna_dropout",
    "phase_noise",
    "rmm",
    "polar_rotate",
    "center_crop",
    "hflip",
    "vflip",
    "threshold",
    "cutout",
    "apply_spec",
    "make_views",
]

# required parameter names per step kind; "prob" is the apply probability
# carried by every step
_STEP_PARAMS: dict[str, frozenset[str]] = {
    "antenna_dropout": frozenset({"p"}),
    "phase_noise": frozenset({"alpha"}),
    "polar_rotate": frozenset({"max_bins"}),
    "center_crop": frozenset({"min_fraction"}),
    "hflip": frozenset(),
    "vflip": frozenset(),
    "cutout": frozenset({"max_frac"}),
    "threshold": frozenset({"percentile"}),
}

RAW_KINDS = frozenset({"antenna_dropout", "phase_noise"})


@dataclass(frozen=True)
class AugmentStep:
    kind: str
    prob: float = 1.0
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in _STEP_PARAMS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("step prob must be in [0, 1]")
        expected = _STEP_PARAMS[self.kind]
        got = frozenset(self.params)
        if got != expected:
            raise ValueError(
                f"{self.kind} expects params {sorted(expected)}, got {sorted(got)}")
        object.__setattr__(self, "params", dict(self.params))
        p = self.params
        if self.kind == "antenna_dropout" and not 0.0 <= p["p"] <= 1.0:
            raise ValueError("keep probability p must be in [0, 1]")
        if self.kind == "phase_noise" and not 0.0 <= p["alpha"] < 1.0:
            raise ValueError("alpha must be in [0, 1)")
        if self.kind == "center_crop" and not 0.0 < p["min_fraction"] <= 1.0:
            raise ValueError("min_fraction must be in (0, 1]")
        if self.kind == "cutout" and not 0.0 < p["max_frac"] < 1.0:
            raise ValueError("max_frac must be in (0, 1)")
        if self.kind == "threshold" and not 0.0 <= p["percentile"] <= 100.0:
            raise ValueError("percentile must be in [0, 100]")
        if self.kind == "polar_rotate" and int(p["max_bins"]) < 0:
            raise ValueError("max_bins must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "prob": self.prob, **self.params}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AugmentStep":
        d = dict(d)
        kind = d.pop("kind")
        prob = float(d.pop("prob", 1.0))
        return cls(kind=kind, prob=prob, params=d)


@dataclass(frozen=True)
class AugmentationSpec:
    """Ordered augmentation pipeline; raw-domain steps run before
    integration, heatmap-domain steps after, each preserving listed order."""

    steps: tuple[AugmentStep, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))

    def raw_steps(self) -> tuple[AugmentStep, ...]:
        return tuple(s for s in self.steps if s.kind in RAW_KINDS)

    def heatmap_steps(self) -> tuple[AugmentStep, ...]:
        return tuple(s for s in self.steps if s.kind not in RAW_KINDS)

    def to_dict(self) -> dict[str, Any]:
        return {"steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AugmentationSpec":
        return cls(steps=tuple(AugmentStep.from_dict(s) for s in d.get("steps", ())))

    @classmethod
    def default(cls) -> "AugmentationSpec":
        """Raw-domain masking + center crop + azimuth flip.

        The best-performing combination found in our sweeps; rotation,
        range flip, thresholding and cutout stay available as explicit
        steps for ablation but are off by default.
        """
        return cls(steps=(
            AugmentStep("antenna_dropout", 1.0, {"p": 0.9}),
            AugmentStep("phase_noise", 1.0, {"alpha": 0.1}),
            AugmentStep("center_crop", 1.0, {"min_fraction": 0.7}),
            AugmentStep("hflip", 0.5),
        ))

    @classmethod
    def identity(cls) -> "AugmentationSpec":
        return cls(steps=())


@dataclass(frozen=True)
class ViewPair:
    view_a: Heatmap
    view_b: Heatmap
    source_id: str = ""

    def __post_init__(self) -> None:
        if self.view_a.data.shape != self.view_b.data.shape:
            raise ValueError("views must share grid dimensions")


# ---------------------------------------------------------------------------
# raw-domain ops

def _draw_keep_mask(k: int, p: float, gen: np.random.Generator) -> np.ndarray:
    # k uniforms are always consumed so the draw layout is independent of p
    return (gen.random(k) < p).astype(np.float32)


def _draw_phases(k: int, alpha: float, gen: np.random.Generator) -> np.ndarray:
    return gen.uniform(-alpha * math.pi, alpha * math.pi, size=k)


def _scale_antennas(tensor: VirtualArrayTensor, factors: np.ndarray) -> VirtualArrayTensor:
    data = tensor.data * factors.astype(np.complex64)[:, None, None]
    return VirtualArrayTensor(tensor.geometry, tensor.grid, data)


def antenna_dropout(tensor: VirtualArrayTensor, p: float,
                    rng: RngStream) -> VirtualArrayTensor:
    """Zero each antenna slab independently with keep probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("keep probability p must be in [0, 1]")
    keep = _draw_keep_mask(tensor.num_virtual, p, rng.generator())
    return _scale_antennas(tensor, keep)


def phase_noise(tensor: VirtualArrayTensor, alpha: float,
                rng: RngStream) -> VirtualArrayTensor:
    """Rotate each antenna slab by one uniform phase in [-alpha*pi, alpha*pi).

    Per-sample modulus is preserved; only the coherent antenna sum changes.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must be in [0, 1)")
    theta = _draw_phases(tensor.num_virtual, alpha, rng.generator())
    return _scale_antennas(tensor, np.exp(1j * theta))


def rmm(tensor: VirtualArrayTensor, p: float = 0.9, alpha: float = 0.1,
        rng: RngStream | None = None) -> Heatmap:
    """Antenna dropout + phase noise on the raw tensor, then integration.

    The two raw-domain ops are diagonal antenna scalings and commute; the
    mask is drawn first and the phases second from ``rng``, so replaying
    the stream with the op order swapped produces the identical heatmap.
    Defaults ``p=0.9, alpha=0.1``.
    """
    if rng is None:
        raise ValueError("rmm requires an RngStream")
    if not 0.0 <= p <= 1.0:
        raise ValueError("keep probability p must be in [0, 1]")
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must be in [0, 1)")
    gen = rng.generator()
    keep = _draw_keep_mask(tensor.num_virtual, p, gen)
    theta = _draw_phases(tensor.num_virtual, alpha, gen)
    out = _scale_antennas(_scale_antennas(tensor, keep), np.exp(1j * theta))
    return integrate_heatmap(out)


# ---------------------------------------------------------------------------
# heatmap-domain ops

def polar_rotate(heatmap: Heatmap, shift_bins: int) -> Heatmap:
    """Shift columns along azimuth by ``shift_bins``; vacated columns are
    zero-filled (content leaving the field of view does not wrap)."""
    l, a = heatmap.data.shape
    if abs(shift_bins) >= a:
        raise ValueError(f"|shift_bins|={abs(shift_bins)} must be < A={a}")
    out = np.zeros_like(heatmap.data)
    if shift_bins >= 0:
        out[:, shift_bins:] = heatmap.data[:, :a - shift_bins]
    else:
        out[:, :a + shift_bins] = heatmap.data[:, -shift_bins:]
    return Heatmap(heatmap.grid, out)


def center_crop(heatmap: Heatmap, fraction: float) -> Heatmap:
    """Resample the central fraction of the map back to full size.

    The window is ``ceil(fraction*L) x ceil(fraction*A)`` centered on the
    grid; bilinear interpolation maps it back to L x A (corner-aligned, so
    ``fraction=1`` is the identity).
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    l, a = heatmap.data.shape
    lw = math.ceil(fraction * l)
    aw = math.ceil(fraction * a)
    if lw < 2 or aw < 2:
        raise ValueError(f"crop window {lw}x{aw} smaller than 2x2")
    r0 = (l - lw) // 2
    c0 = (a - aw) // 2
    window = heatmap.data[r0:r0 + lw, c0:c0 + aw].astype(np.float64)

    rows = np.linspace(0.0, lw - 1.0, l)
    cols = np.linspace(0.0, aw - 1.0, a)
    ri = np.minimum(np.floor(rows).astype(int), lw - 2)
    ci = np.minimum(np.floor(cols).astype(int), aw - 2)
    rt = (rows - ri)[:, None]
    ct = (cols - ci)[None, :]
    top = window[ri][:, ci] * (1 - ct) + window[ri][:, ci + 1] * ct
    bot = window[ri + 1][:, ci] * (1 - ct) + window[ri + 1][:, ci + 1] * ct
    out = top * (1 - rt) + bot * rt
    # bilinear of nonnegative input is nonnegative up to rounding
    return Heatmap(heatmap.grid, np.maximum(out, 0.0).astype(np.float32))


def hflip(heatmap: Heatmap) -> Heatmap:
    """Reverse the azimuth axis (mirror left-right); involution."""
    return Heatmap(heatmap.grid, heatmap.data[:, ::-1])


def vflip(heatmap: Heatmap) -> Heatmap:
    """Reverse the range axis (near-far mirror); involution."""
    return Heatmap(heatmap.grid, heatmap.data[::-1, :])


def threshold(heatmap: Heatmap, percentile: float, binarize: bool = False) -> Heatmap:
    """Zero all values below the given percentile of this map's values.

    Values >= the percentile are kept as-is, or mapped to 1.0 when
    ``binarize`` is set.
    """
    if not 0.0 <= percentile <= 100.0:
        raise ValueError("percentile must be in [0, 100]")
    cut = np.percentile(heatmap.data, percentile)
    keep = heatmap.data >= cut
    if binarize:
        out = keep.astype(np.float32)
    else:
        out = np.where(keep, heatmap.data, np.float32(0.0))
    return Heatmap(heatmap.grid, out)


def cutout(heatmap: Heatmap, max_frac: float, rng: RngStream) -> Heatmap:
    """Zero one random axis-aligned rectangle with side fractions <= max_frac."""
    if not 0.0 < max_frac < 1.0:
        raise ValueError("max_frac must be in (0, 1)")
    return _cutout_gen(heatmap, max_frac, rng.generator())


def _cutout_gen(heatmap: Heatmap, max_frac: float,
                gen: np.random.Generator) -> Heatmap:
    l, a = heatmap.data.shape
    h = max(1, math.ceil(float(gen.uniform(0.0, max_frac)) * l))
    w = max(1, math.ceil(float(gen.uniform(0.0, max_frac)) * a))
    top = int(gen.integers(0, l - h + 1))
    left = int(gen.integers(0, a - w + 1))
    out = heatmap.data.copy()
    out[top:top + h, left:left + w] = 0.0
    return Heatmap(heatmap.grid, out)


# ---------------------------------------------------------------------------
# pipeline

def _apply_raw_step(tensor: VirtualArrayTensor, step: AugmentStep,
                    gen: np.random.Generator) -> VirtualArrayTensor:
    k = tensor.num_virtual
    if step.kind == "antenna_dropout":
        return _scale_antennas(tensor, _draw_keep_mask(k, step.params["p"], gen))
    if step.kind == "phase_noise":
        theta = _draw_phases(k, step.params["alpha"], gen)
        return _scale_antennas(tensor, np.exp(1j * theta))
    raise AssertionError(step.kind)


def _apply_heatmap_step(heatmap: Heatmap, step: AugmentStep,
                        gen: np.random.Generator) -> Heatmap:
    p = step.params
    if step.kind == "polar_rotate":
        m = int(p["max_bins"])
        return polar_rotate(heatmap, int(gen.integers(-m, m + 1)))
    if step.kind == "center_crop":
        return center_crop(heatmap, float(gen.uniform(p["min_fraction"], 1.0)))
    if step.kind == "hflip":
        return hflip(heatmap)
    if step.kind == "vflip":
        return vflip(heatmap)
    if step.kind == "threshold":
        return threshold(heatmap, p["percentile"])
    if step.kind == "cutout":
        return _cutout_gen(heatmap, p["max_frac"], gen)
    raise AssertionError(step.kind)


def apply_spec(tensor: VirtualArrayTensor, spec: AugmentationSpec,
               rng: RngStream) -> Heatmap:
    """Draw one stochastic view: raw-domain steps, integration, then
    heatmap-domain steps.  One gate draw per step (consumed even when the
    step has prob 1), then the step's own draws, in listed order."""
    gen = rng.generator()
    out_t = tensor
    for step in spec.raw_steps():
        gate = float(gen.random())
        if gate < step.prob:
            out_t = _apply_raw_step(out_t, step, gen)
    out_h = integrate_heatmap(out_t)
    for step in spec.heatmap_steps():
        gate = float(gen.random())
        if gate < step.prob:
            out_h = _apply_heatmap_step(out_h, step, gen)
    return out_h


def make_views(tensor: VirtualArrayTensor, spec: AugmentationSpec,
               rng: RngStream, source_id: str = "") -> ViewPair:
    """Two independent draws of the spec applied to the same tensor."""
    return ViewPair(
        view_a=apply_spec(tensor, spec, rng.child("view", 0)),
        view_b=apply_spec(tensor, spec, rng.child("view", 1)),
        source_id=source_id,
    )
