"""Synthetic virtual-array tensor and heatmap generation.

A scene of point reflectors is rendered into the complex per-antenna
tensor ``S`` of shape (K, L, A).  The phenomenology reproduced here:

* Range spread: each reflector contributes a sinc profile along range,
  width controlled by ``range_spread_bins`` (a bandwidth proxy).
* Azimuth spread: *not* an explicit kernel.  Each virtual element k sees
  the reflector with steering phase ``pi * u_k * sin(phi)``; summing the
  array response produces the physical beam pattern, so antenna-domain
  edits (masking elements, perturbing phases) change the heatmap the way
  they would on hardware.
* Specularity: each reflector is kept or hidden wholesale per frame with
  probability ``visibility`` (mirror-like surfaces drop out entirely).
* Transmit-slot motion phase: time-multiplexed transmitters fire in
  sequence, so a moving reflector accrues ``(4*pi/lambda) * v * dwell``
  of two-way phase per transmitter slot, smearing the beam pattern.

Integrating the tensor over antennas, ``r(l, a) = |sum_k S(k, l, a)|``,
yields the nonnegative heatmap fed to the encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import RngStream
from .types import (
    ArrayGeometry,
    Heatmap,
    PolarGrid,
    RotatedBox,
    Scatterer,
    Scene,
    VirtualArrayTensor,
    polar_to_cartesian,
)

__all__ = [
    "SimConfig",
    "default_geometry",
    "default_grid",
    "steering_phase",
    "doppler_phase",
    "synthesize_tensor",
    "integrate_heatmap",
    "random_scene",
]


def default_geometry() -> ArrayGeometry:
    """3 TX x 4 RX uniform virtual array (12 half-wavelength elements)."""
    return ArrayGeometry.uniform(3, 4)


def default_grid() -> PolarGrid:
    """32 x 32 grid spanning 0-48 m and +-60 degrees."""
    return PolarGrid(32, 32, 0.0, 48.0, -math.pi / 3, math.pi / 3)


@dataclass(frozen=True)
class SimConfig:
    """Simulator knobs.

    range_spread_bins: sinc main-lobe half-width in range bins (> 0).
    noise_floor: std of additive circular complex Gaussian noise per
        antenna-cell (0 disables noise).
    tx_dwell: seconds per transmitter slot in the MIMO sequence.
    carrier_wavelength: meters (77 GHz automotive band by default).
    """

    range_spread_bins: float = 1.5
    noise_floor: float = 0.0
    tx_dwell: float = 12.5e-6
    carrier_wavelength: float = 3.9e-3

    def __post_init__(self) -> None:
        if not self.range_spread_bins > 0:
            raise ValueError("range_spread_bins must be > 0")
        if self.noise_floor < 0:
            raise ValueError("noise_floor must be >= 0")
        if self.tx_dwell < 0:
            raise ValueError("tx_dwell must be >= 0")
        if not self.carrier_wavelength > 0:
            raise ValueError("carrier_wavelength must be > 0")


def steering_phase(geometry: ArrayGeometry, k: int, azimuth: float) -> float:
    """Phase at virtual element k for a plane wave from ``azimuth``.

    Element positions are in half-wavelength units, so the phase is
    ``pi * u_k * sin(azimuth)``.
    """
    if not 0 <= k < geometry.num_virtual:
        raise IndexError(f"antenna index {k} out of range [0, {geometry.num_virtual})")
    return math.pi * geometry.element_pos[k] * math.sin(azimuth)


def doppler_phase(scatterer: Scatterer, k: int,
                  geometry: ArrayGeometry, config: SimConfig) -> float:
    """Two-way motion phase accrued by element k's transmitter slot.

    ``(4*pi / lambda) * radial_velocity * tx_dwell * tx_index(k)`` - zero
    for stationary reflectors or simultaneous transmission.
    """
    tx = geometry.tx_index(k)
    return (4.0 * math.pi / config.carrier_wavelength) \
        * scatterer.radial_velocity * config.tx_dwell * tx


def _steering_phases(geometry: ArrayGeometry, azimuth: float) -> np.ndarray:
    u = np.asarray(geometry.element_pos)
    return np.pi * u * math.sin(azimuth)


def synthesize_tensor(scene: Scene,
                      geometry: ArrayGeometry,
                      grid: PolarGrid,
                      config: SimConfig,
                      rng: RngStream) -> VirtualArrayTensor:
    """Render a scene into the complex (K, L, A) virtual-array tensor.

    Each visible reflector contributes, at cell (l, a) and element k,

        amp * sinc((rho_l - rho_s) / spread)
            * exp(i * [phase_k(phi_s) - phase_k(phi_a) + motion_k])

    where ``sinc(x) = sin(pi x)/(pi x)`` and spread is
    ``range_spread_bins * range_step``.  Visibility masks are drawn once
    per reflector per frame; complex Gaussian noise is added i.i.d. per
    antenna-cell when ``noise_floor > 0``.  Deterministic in ``rng``.
    """
    for s in scene.scatterers:
        if not grid.contains(s.range, s.azimuth):
            raise ValueError(
                f"scatterer at (range={s.range}, azimuth={s.azimuth}) "
                f"outside grid bounds")

    k_n = geometry.num_virtual
    l_n, a_n = grid.num_range, grid.num_azimuth
    gen = rng.generator()

    # one visibility draw per scatterer, before any noise draws
    if scene.scatterers:
        mask = gen.random(len(scene.scatterers)) < np.array(
            [s.visibility for s in scene.scatterers])
    else:
        mask = np.zeros(0, dtype=bool)

    rho = grid.range_centers()                     # (L,)
    sin_az = np.sin(grid.azimuth_centers())        # (A,)
    u = np.asarray(geometry.element_pos)           # (K,)
    tx = np.arange(k_n) // geometry.num_rx         # (K,)
    spread_m = config.range_spread_bins * grid.range_step

    acc = np.zeros((k_n, l_n, a_n), dtype=np.complex128)
    for visible, s in zip(mask, scene.scatterers):
        if not visible:
            continue
        range_profile = s.amplitude * np.sinc((rho - s.range) / spread_m)    # (L,)
        # per-element phase: steering mismatch across azimuth bins + motion
        phase = (np.pi * u[:, None] * (math.sin(s.azimuth) - sin_az[None, :])
                 + ((4.0 * math.pi / config.carrier_wavelength)
                    * s.radial_velocity * config.tx_dwell * tx)[:, None])    # (K, A)
        acc += range_profile[None, :, None] * np.exp(1j * phase)[:, None, :]

    if config.noise_floor > 0.0:
        scale = config.noise_floor / math.sqrt(2.0)
        noise = gen.standard_normal((k_n, l_n, a_n)) \
            + 1j * gen.standard_normal((k_n, l_n, a_n))
        acc += scale * noise

    return VirtualArrayTensor(geometry, grid, acc.astype(np.complex64))


def integrate_heatmap(tensor: VirtualArrayTensor) -> Heatmap:
    """Collapse the antenna axis: ``r(l, a) = |sum_k S(k, l, a)|``."""
    summed = tensor.data.sum(axis=0)
    return Heatmap(tensor.grid, np.abs(summed).astype(np.float32))


_CAR_LENGTH = (3.8, 5.2)
_CAR_WIDTH = (1.6, 2.1)


def random_scene(scene_id: str,
                 grid: PolarGrid,
                 rng: RngStream,
                 min_scatterers: int = 1,
                 max_scatterers: int = 3,
                 amplitude_range: tuple[float, float] = (0.5, 2.0),
                 visibility_range: tuple[float, float] = (1.0, 1.0),
                 speed_max: float = 15.0,
                 edge_margin_bins: int = 2) -> Scene:
    """Draw a scene of uniformly placed reflectors with car-like GT boxes.

    Reflectors land on the grid interior (at least ``edge_margin_bins``
    bins away from every border).  Each reflector gets one box centered at
    its BEV position with a random yaw in (-pi, pi].
    """
    if not 0 <= min_scatterers <= max_scatterers:
        raise ValueError("need 0 <= min_scatterers <= max_scatterers")
    gen = rng.generator()
    n = int(gen.integers(min_scatterers, max_scatterers + 1))

    r_lo = grid.range_min + edge_margin_bins * grid.range_step
    r_hi = grid.range_max - edge_margin_bins * grid.range_step
    a_lo = grid.az_min + edge_margin_bins * grid.az_step
    a_hi = grid.az_max - edge_margin_bins * grid.az_step
    if not (r_lo < r_hi and a_lo < a_hi):
        raise ValueError("grid too small for the requested edge margin")

    scatterers = []
    boxes = []
    for _ in range(n):
        s = Scatterer(
            range=float(gen.uniform(r_lo, r_hi)),
            azimuth=float(gen.uniform(a_lo, a_hi)),
            amplitude=float(gen.uniform(*amplitude_range)),
            visibility=float(gen.uniform(*visibility_range)),
            radial_velocity=float(gen.uniform(-speed_max, speed_max)),
        )
        scatterers.append(s)
        x, y = polar_to_cartesian(s.range, s.azimuth)
        yaw = float(gen.uniform(-math.pi, math.pi))
        if yaw <= -math.pi:
            yaw = math.pi
        boxes.append(RotatedBox(
            cx=x, cy=y,
            length=float(gen.uniform(*_CAR_LENGTH)),
            width=float(gen.uniform(*_CAR_WIDTH)),
            yaw=yaw,
        ))
    return Scene(id=scene_id, scatterers=tuple(scatterers), boxes=tuple(boxes))
