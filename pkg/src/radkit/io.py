"""Binary and JSON file formats.

Four on-disk formats, all little-endian:

* Tensor (``RST1``): magic, u32 K, u32 L, u32 A, then K*L*A complex
  samples as (real, imag) float32 pairs, antenna-major.
* Heatmap (``HMP1``): magic, u32 L, u32 A, then L*A float32 values.
* Checkpoint (``CKP1``): magic, u32 backbone layer count, per layer
  (u32 rows, u32 cols, row-major float32 weights, float32 biases); the
  projection head appended with the same scheme; trailing u64 step count.
* Scene: UTF-8 JSON, field names matching the domain types, angles in
  radians and lengths in meters.

The binary formats carry no physical metadata (element positions, grid
bounds); those travel in separate JSON files (see ``read_geometry`` /
``read_grid``).  Readers report malformed files with the byte offset at
which the problem was detected.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .types import (
    ArrayGeometry,
    Heatmap,
    PolarGrid,
    RotatedBox,
    Scatterer,
    Scene,
    VirtualArrayTensor,
)

__all__ = [
    "FileFormatError",
    "BadMagicError",
    "DimensionError",
    "TruncatedFileError",
    "write_tensor",
    "read_tensor",
    "write_heatmap",
    "read_heatmap",
    "write_scene",
    "read_scene",
    "scene_to_dict",
    "scene_from_dict",
    "write_geometry",
    "read_geometry",
    "write_grid",
    "read_grid",
]

TENSOR_MAGIC = b"RST1"
HEATMAP_MAGIC = b"HMP1"
CHECKPOINT_MAGIC = b"CKP1"

# refuse to allocate for absurd declared dimensions
_MAX_ELEMENTS = 1 << 31


class FileFormatError(Exception):
    """Malformed file; ``offset`` is the byte position of the defect."""

    def __init__(self, path: str | Path, offset: int, message: str):
        super().__init__(f"{path}: at byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


class BadMagicError(FileFormatError):
    pass


class DimensionError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass


class _Reader:
    """Cursor over a fully-read buffer, raising offset-tagged errors."""

    def __init__(self, path: str | Path):
        self.path = path
        self.buf = Path(path).read_bytes()
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                self.path, len(self.buf),
                f"expected {n} more bytes for {what}, file ends")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def magic(self, expected: bytes) -> None:
        got = self.take(len(expected), "magic")
        if got != expected:
            raise BadMagicError(self.path, 0,
                                f"bad magic {got!r}, expected {expected!r}")

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f32_array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4", count=count)

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise FileFormatError(self.path, self.pos,
                                  f"{len(self.buf) - self.pos} trailing bytes")


def _check_elements(reader: _Reader, dims: tuple[int, ...]) -> int:
    total = 1
    for d in dims:
        total *= d
    if total > _MAX_ELEMENTS:
        raise DimensionError(reader.path, reader.pos,
                             f"declared dimensions {dims} overflow "
                             f"({total} > {_MAX_ELEMENTS} elements)")
    return total


# ---------------------------------------------------------------------------
# tensor

def write_tensor(tensor: VirtualArrayTensor, path: str | Path) -> None:
    k, l, a = tensor.data.shape
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<III", k, l, a))
        f.write(np.ascontiguousarray(tensor.data, dtype="<c8").tobytes())


def read_tensor(path: str | Path,
                geometry: ArrayGeometry | None = None,
                grid: PolarGrid | None = None) -> VirtualArrayTensor:
    """Read an ``RST1`` file.

    The file stores only dimensions and samples; pass ``geometry`` and
    ``grid`` to attach physical metadata (they must agree with the stored
    dimensions).  Without them, placeholder metadata is synthesized: a
    uniform K-element array and a unit grid of 1 m range bins spanning
    the full +-pi/2 azimuth field of view.
    """
    r = _Reader(path)
    r.magic(TENSOR_MAGIC)
    k = r.u32("K")
    l = r.u32("L")
    a = r.u32("A")
    total = _check_elements(r, (k, l, a))
    raw = r.take(8 * total, "complex payload")
    r.done()
    data = np.frombuffer(raw, dtype="<c8", count=total).reshape(k, l, a)
    if geometry is None:
        geometry = ArrayGeometry(1, k, tuple(float(i) for i in range(k)))
    if grid is None:
        grid = PolarGrid(l, a, 0.0, float(l), -np.pi / 2, np.pi / 2)
    return VirtualArrayTensor(geometry, grid, data)


# ---------------------------------------------------------------------------
# heatmap

def write_heatmap(heatmap: Heatmap, path: str | Path) -> None:
    l, a = heatmap.data.shape
    with open(path, "wb") as f:
        f.write(HEATMAP_MAGIC)
        f.write(struct.pack("<II", l, a))
        f.write(np.ascontiguousarray(heatmap.data, dtype="<f4").tobytes())


def read_heatmap(path: str | Path, grid: PolarGrid | None = None) -> Heatmap:
    r = _Reader(path)
    r.magic(HEATMAP_MAGIC)
    l = r.u32("L")
    a = r.u32("A")
    total = _check_elements(r, (l, a))
    data = r.f32_array(total, "heatmap payload").reshape(l, a)
    r.done()
    if grid is None:
        grid = PolarGrid(l, a, 0.0, float(l), -np.pi / 2, np.pi / 2)
    return Heatmap(grid, data)


# ---------------------------------------------------------------------------
# checkpoint (layer stacks are stored by the encoder module's types; to keep
# this module dependency-light the payload is plain (weights, biases) pairs)

def write_checkpoint(backbone: list[tuple[np.ndarray, np.ndarray]],
                     head: list[tuple[np.ndarray, np.ndarray]],
                     step: int,
                     path: str | Path) -> None:
    def emit(f, layers):
        f.write(struct.pack("<I", len(layers)))
        for w, b in layers:
            rows, cols = w.shape
            if b.shape != (cols,):
                raise ValueError(f"bias shape {b.shape} does not match cols={cols}")
            f.write(struct.pack("<II", rows, cols))
            f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())

    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        emit(f, backbone)
        emit(f, head)
        f.write(struct.pack("<Q", step))


def read_checkpoint(path: str | Path) -> tuple[
        list[tuple[np.ndarray, np.ndarray]],
        list[tuple[np.ndarray, np.ndarray]],
        int]:
    r = _Reader(path)
    r.magic(CHECKPOINT_MAGIC)

    def parse(stage: str) -> list[tuple[np.ndarray, np.ndarray]]:
        n = r.u32(f"{stage} layer count")
        layers = []
        for i in range(n):
            rows = r.u32(f"{stage} layer {i} rows")
            cols = r.u32(f"{stage} layer {i} cols")
            _check_elements(r, (rows, cols))
            w = r.f32_array(rows * cols, f"{stage} layer {i} weights").reshape(rows, cols)
            b = r.f32_array(cols, f"{stage} layer {i} biases")
            layers.append((w, b))
        return layers

    backbone = parse("backbone")
    head = parse("head")
    step = r.u64("step counter")
    r.done()
    return backbone, head, step


# ---------------------------------------------------------------------------
# scene / geometry / grid JSON

def scene_to_dict(scene: Scene) -> dict[str, Any]:
    return {
        "id": scene.id,
        "scatterers": [
            {
                "range": s.range,
                "azimuth": s.azimuth,
                "amplitude": s.amplitude,
                "visibility": s.visibility,
                "radial_velocity": s.radial_velocity,
            }
            for s in scene.scatterers
        ],
        "boxes": [
            {
                "cx": b.cx, "cy": b.cy,
                "length": b.length, "width": b.width,
                "yaw": b.yaw,
                **({"score": b.score} if b.score is not None else {}),
            }
            for b in scene.boxes
        ],
    }


def scene_from_dict(d: dict[str, Any]) -> Scene:
    return Scene(
        id=d["id"],
        scatterers=tuple(Scatterer(**s) for s in d.get("scatterers", [])),
        boxes=tuple(RotatedBox(**b) for b in d.get("boxes", [])),
    )


def write_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(scene_to_dict(scene), indent=2, sort_keys=False) + "\n",
        encoding="utf-8")


def read_scene(path: str | Path) -> Scene:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FileFormatError(path, e.pos, f"invalid JSON: {e.msg}") from e
    try:
        return scene_from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        raise FileFormatError(path, 0, f"invalid scene fields: {e}") from e


def write_geometry(geometry: ArrayGeometry, path: str | Path) -> None:
    d = {"num_tx": geometry.num_tx, "num_rx": geometry.num_rx,
         "element_pos": list(geometry.element_pos)}
    Path(path).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")


def read_geometry(path: str | Path) -> ArrayGeometry:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return ArrayGeometry(d["num_tx"], d["num_rx"], tuple(d["element_pos"]))
    except json.JSONDecodeError as e:
        raise FileFormatError(path, e.pos, f"invalid JSON: {e.msg}") from e
    except (KeyError, TypeError, ValueError) as e:
        raise FileFormatError(path, 0, f"invalid geometry fields: {e}") from e


def write_grid(grid: PolarGrid, path: str | Path) -> None:
    d = {"num_range": grid.num_range, "num_azimuth": grid.num_azimuth,
         "range_min": grid.range_min, "range_max": grid.range_max,
         "az_min": grid.az_min, "az_max": grid.az_max}
    Path(path).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")


def read_grid(path: str | Path) -> PolarGrid:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return PolarGrid(d["num_range"], d["num_azimuth"],
                         d["range_min"], d["range_max"],
                         d["az_min"], d["az_max"])
    except json.JSONDecodeError as e:
        raise FileFormatError(path, e.pos, f"invalid JSON: {e.msg}") from e
    except (KeyError, TypeError, ValueError) as e:
        raise FileFormatError(path, 0, f"invalid grid fields: {e}") from e
