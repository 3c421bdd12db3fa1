"""Shared domain types for the radar toolkit.

Conventions used everywhere in this package:

* Polar coordinates: range ``rho`` in meters, azimuth ``phi`` in radians,
  with ``phi = 0`` at boresight and positive azimuth to the left when
  looking along the boresight.
* Bird's-eye-view Cartesian: ``x = rho * sin(phi)`` (lateral),
  ``y = rho * cos(phi)`` (forward).  Box yaw is measured from the +y axis.
* Virtual-array tensors are complex, shape ``(K, L, A)`` with the antenna
  index ``k`` major so that per-antenna slabs are contiguous in memory.
* Heatmaps are real and nonnegative, shape ``(L, A)`` (range rows,
  azimuth columns).

All types are immutable values after construction and safe to share
between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ArrayGeometry",
    "PolarGrid",
    "Scatterer",
    "Scene",
    "VirtualArrayTensor",
    "Heatmap",
    "RotatedBox",
    "polar_to_cartesian",
    "cartesian_to_polar",
]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class ArrayGeometry:
    """Virtual antenna array layout of a time-multiplexed MIMO radar.

    ``num_tx`` transmitters and ``num_rx`` receivers emulate
    ``K = num_tx * num_rx`` virtual elements.  ``element_pos`` holds one
    aperture coordinate per virtual element, in half-wavelength units.
    Virtual index ``k`` maps to transmitter slot ``k // num_rx``.
    """

    num_tx: int
    num_rx: int
    element_pos: tuple[float, ...]

    def __post_init__(self) -> None:
        _require(self.num_tx >= 1 and self.num_rx >= 1, "antenna counts must be >= 1")
        k = self.num_tx * self.num_rx
        object.__setattr__(self, "element_pos", tuple(float(u) for u in self.element_pos))
        _require(len(self.element_pos) == k,
                 f"element_pos has {len(self.element_pos)} entries, expected K={k}")
        _require(all(math.isfinite(u) for u in self.element_pos),
                 "element positions must be finite")

    @property
    def num_virtual(self) -> int:
        return self.num_tx * self.num_rx

    def tx_index(self, k: int) -> int:
        """Transmitter slot that produced virtual element ``k``."""
        if not 0 <= k < self.num_virtual:
            raise IndexError(f"virtual antenna index {k} out of range [0, {self.num_virtual})")
        return k // self.num_rx

    @classmethod
    def uniform(cls, num_tx: int, num_rx: int) -> "ArrayGeometry":
        """Uniform linear array with half-wavelength element spacing."""
        k = num_tx * num_rx
        return cls(num_tx, num_rx, tuple(float(i) for i in range(k)))


@dataclass(frozen=True)
class PolarGrid:
    """Cell-centered range-azimuth grid of ``L x A`` bins.

    Bin ``(l, a)`` is centered at ``range_min + (l + 0.5) * range_step``
    and ``az_min + (a + 0.5) * az_step``.
    """

    num_range: int
    num_azimuth: int
    range_min: float
    range_max: float
    az_min: float
    az_max: float

    def __post_init__(self) -> None:
        _require(self.num_range >= 1 and self.num_azimuth >= 1, "grid dims must be >= 1")
        _require(0.0 <= self.range_min < self.range_max, "need 0 <= range_min < range_max")
        half_pi = math.pi / 2
        _require(-half_pi <= self.az_min < self.az_max <= half_pi,
                 "need -pi/2 <= az_min < az_max <= pi/2")

    @property
    def range_step(self) -> float:
        return (self.range_max - self.range_min) / self.num_range

    @property
    def az_step(self) -> float:
        return (self.az_max - self.az_min) / self.num_azimuth

    def range_centers(self) -> np.ndarray:
        return self.range_min + (np.arange(self.num_range) + 0.5) * self.range_step

    def azimuth_centers(self) -> np.ndarray:
        return self.az_min + (np.arange(self.num_azimuth) + 0.5) * self.az_step

    def contains(self, range_m: float, azimuth: float) -> bool:
        return (self.range_min <= range_m <= self.range_max
                and self.az_min <= azimuth <= self.az_max)

    def nearest_bin(self, range_m: float, azimuth: float) -> tuple[int, int]:
        """Indices of the bin whose center is closest to the given point."""
        l = int(np.clip(np.floor((range_m - self.range_min) / self.range_step),
                        0, self.num_range - 1))
        a = int(np.clip(np.floor((azimuth - self.az_min) / self.az_step),
                        0, self.num_azimuth - 1))
        return l, a


@dataclass(frozen=True)
class Scatterer:
    """Point reflector in polar coordinates.

    ``visibility`` is the per-frame probability that the reflector shows up
    at all (specular surfaces vanish wholesale, not per-cell).
    ``radial_velocity`` is positive away from the sensor and feeds the
    transmit-slot phase progression of time-multiplexed MIMO.
    """

    range: float
    azimuth: float
    amplitude: float
    visibility: float = 1.0
    radial_velocity: float = 0.0

    def __post_init__(self) -> None:
        _require(self.amplitude >= 0.0, "amplitude must be >= 0")
        _require(0.0 <= self.visibility <= 1.0, "visibility must be in [0, 1]")
        for name in ("range", "azimuth", "amplitude", "radial_velocity"):
            _require(math.isfinite(getattr(self, name)), f"{name} must be finite")


@dataclass(frozen=True)
class RotatedBox:
    """Oriented BEV box: center (cx, cy) meters, extent (length, width) meters,
    yaw radians in (-pi, pi] measured from the +y (forward) axis.  ``score``
    is present on detections and absent on ground truth."""

    cx: float
    cy: float
    length: float
    width: float
    yaw: float
    score: float | None = None

    def __post_init__(self) -> None:
        _require(self.length > 0.0 and self.width > 0.0, "box extent must be positive")
        if self.score is not None:
            _require(0.0 <= self.score <= 1.0, "score must be in [0, 1]")

    @property
    def area(self) -> float:
        return self.length * self.width

    def corners(self) -> np.ndarray:
        """Corner coordinates, shape (4, 2), counter-clockwise."""
        s, c = math.sin(self.yaw), math.cos(self.yaw)
        # heading unit vector (along length), and its perpendicular (along width)
        hx, hy = s, c
        px, py = c, -s
        dl, dw = 0.5 * self.length, 0.5 * self.width
        return np.array([
            [self.cx + dl * hx + dw * px, self.cy + dl * hy + dw * py],
            [self.cx + dl * hx - dw * px, self.cy + dl * hy - dw * py],
            [self.cx - dl * hx - dw * px, self.cy - dl * hy - dw * py],
            [self.cx - dl * hx + dw * px, self.cy - dl * hy + dw * py],
        ])


@dataclass(frozen=True)
class Scene:
    """A captured frame's ground truth: reflectors plus annotation boxes."""

    id: str
    scatterers: tuple[Scatterer, ...] = ()
    boxes: tuple[RotatedBox, ...] = ()

    def __post_init__(self) -> None:
        _require(bool(self.id), "scene id must be nonempty")
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        object.__setattr__(self, "boxes", tuple(self.boxes))


def _frozen_array(arr: np.ndarray, dtype: np.dtype, ndim: int, what: str) -> np.ndarray:
    out = np.asarray(arr, dtype=dtype)
    _require(out.ndim == ndim, f"{what} must be {ndim}-D, got shape {out.shape}")
    if out.flags.writeable:
        out = out.copy()
        out.flags.writeable = False
    return out


@dataclass(frozen=True)
class VirtualArrayTensor:
    """Complex per-virtual-antenna response over the polar grid.

    ``data`` has shape ``(K, L, A)``, dtype complex64, antenna-major so a
    single antenna's slab ``data[k]`` is contiguous.
    """

    geometry: ArrayGeometry
    grid: PolarGrid
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        data = _frozen_array(self.data, np.complex64, 3, "tensor data")
        expected = (self.geometry.num_virtual, self.grid.num_range, self.grid.num_azimuth)
        _require(data.shape == expected,
                 f"tensor shape {data.shape} does not match (K, L, A)={expected}")
        _require(bool(np.isfinite(data.view(np.float32)).all()), "tensor values must be finite")
        object.__setattr__(self, "data", data)

    @property
    def num_virtual(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class Heatmap:
    """Real range-azimuth magnitude map, shape ``(L, A)``, dtype float32."""

    grid: PolarGrid
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        data = _frozen_array(self.data, np.float32, 2, "heatmap data")
        expected = (self.grid.num_range, self.grid.num_azimuth)
        _require(data.shape == expected,
                 f"heatmap shape {data.shape} does not match (L, A)={expected}")
        _require(bool(np.isfinite(data).all()), "heatmap values must be finite")
        _require(bool((data >= 0.0).all()), "heatmap values must be >= 0")
        object.__setattr__(self, "data", data)


def polar_to_cartesian(range_m: float, azimuth: float) -> tuple[float, float]:
    """Map (range, azimuth) to BEV (x lateral, y forward).

    ``x = range * sin(azimuth)``, ``y = range * cos(azimuth)``.
    """
    if range_m < 0:
        raise ValueError("range must be >= 0")
    return range_m * math.sin(azimuth), range_m * math.cos(azimuth)


def cartesian_to_polar(x: float, y: float) -> tuple[float, float]:
    """Inverse of :func:`polar_to_cartesian`; azimuth measured from +y."""
    return math.hypot(x, y), math.atan2(x, y)
