"""Command-line entry point.

Subcommands cover the whole pipeline: corpus generation (``gen-scenes``,
``simulate``), view inspection (``augment``, ``render``), training and
evaluation (``pretrain``, ``probe``, ``sweep-labels``, ``eval-det``,
``retrieval``).  Every subcommand is deterministic given its flags,
config, and seed; reruns produce byte-identical outputs.

Exit codes: 0 success, 2 configuration error (bad flags or config file),
3 data error (missing or malformed data files), 4 numerical abort.

``RADKIT_THREADS`` caps the worker count used for per-scene fan-out
(default: hardware parallelism); outputs do not depend on it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as radio
from .augment import AugmentationSpec, make_views
from .encoder import forward_batch, load_params, vision_oracle
from .metrics import Detection, evaluate_detections, retrieval_topk
from .rng import RngStream
from .simulate import (
    SimConfig,
    default_geometry,
    default_grid,
    integrate_heatmap,
    random_scene,
    synthesize_tensor,
)
from .train import (
    FrameDataset,
    ProbeConfig,
    TrainConfig,
    label_efficiency_sweep,
    linear_probe,
    pretrain,
)
from .types import RotatedBox

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# fractions used by the label-efficiency sweep unless the config overrides
DEFAULT_SWEEP_FRACTIONS = (0.01, 0.03, 0.10, 0.30, 1.00)


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _worker_count() -> int:
    raw = os.environ.get("RADKIT_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError as e:
            raise ConfigError(f"RADKIT_THREADS={raw!r} is not an integer") from e
        if n < 1:
            raise ConfigError("RADKIT_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _load_json(path: Path, what: str) -> dict:
    if not path.exists():
        raise DataError(f"{what} file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}: invalid JSON: {e.msg}") from e


def _write_json(payload: dict | list, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


# ---------------------------------------------------------------------------
# gen-scenes

def _cmd_gen_scenes(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = radio.read_grid(args.grid) if args.grid else default_grid()
    if args.scatterers_min > args.scatterers_max:
        raise ConfigError("--scatterers-min must be <= --scatterers-max")
    root = RngStream(args.seed)
    for i in range(args.count):
        scene = random_scene(
            scene_id=f"scene_{i:06d}",
            grid=grid,
            rng=root.child("scene", i),
            min_scatterers=args.scatterers_min,
            max_scatterers=args.scatterers_max,
        )
        radio.write_scene(scene, out / f"scene_{i:06d}.json")
    print(f"wrote {args.count} scenes to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

def _cmd_simulate(args) -> int:
    scenes_dir = Path(args.scenes)
    if not scenes_dir.is_dir():
        raise DataError(f"scenes directory not found: {scenes_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    geometry = radio.read_geometry(args.geometry) if args.geometry else default_geometry()
    grid = radio.read_grid(args.grid) if args.grid else default_grid()
    config = SimConfig(
        range_spread_bins=args.range_spread_bins,
        noise_floor=args.noise_floor,
        tx_dwell=args.tx_dwell,
        carrier_wavelength=args.wavelength,
    )
    scene_paths = sorted(scenes_dir.glob("*.json"))
    root = RngStream(args.seed)

    def render_one(scene_path: Path) -> dict:
        scene = radio.read_scene(scene_path)
        tensor = synthesize_tensor(scene, geometry, grid, config,
                                   root.child("frame", scene_path.name))
        tensor_name = scene_path.stem + ".rst"
        radio.write_tensor(tensor, out / tensor_name)
        return {"id": scene.id, "scene": os.path.relpath(scene_path, out),
                "tensor": tensor_name}

    workers = _worker_count()
    if workers > 1 and len(scene_paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(render_one, scene_paths))
    else:
        entries = [render_one(p) for p in scene_paths]

    _write_json({"frames": entries}, out / "manifest.json")
    print(f"wrote {len(entries)} tensors to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# augment

def _cmd_augment(args) -> int:
    in_path = Path(args.infile)
    if not in_path.exists():
        raise DataError(f"input tensor not found: {in_path}")
    tensor = radio.read_tensor(in_path)
    if args.spec:
        spec = AugmentationSpec.from_dict(_load_json(Path(args.spec), "spec"))
    else:
        spec = AugmentationSpec.default()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pair = make_views(tensor, spec, RngStream(args.seed), source_id=in_path.stem)
    radio.write_heatmap(pair.view_a, out / f"{in_path.stem}_view_a.hmp")
    radio.write_heatmap(pair.view_b, out / f"{in_path.stem}_view_b.hmp")
    print(f"wrote 2 views to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# render

def _cmd_render(args) -> int:
    in_path = Path(args.infile)
    if not in_path.exists():
        raise DataError(f"input file not found: {in_path}")
    with in_path.open("rb") as f:
        magic = f.read(4)
    if magic == radio.TENSOR_MAGIC:
        heat = integrate_heatmap(radio.read_tensor(in_path))
    elif magic == radio.HEATMAP_MAGIC:
        heat = radio.read_heatmap(in_path)
    else:
        raise DataError(f"{in_path}: unrecognized magic {magic!r}")

    data = heat.data.astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        print(f"warning: {in_path} is constant; rendering mid-gray",
              file=sys.stderr)
        pixels = np.full(data.shape, 128, dtype=np.uint8)
    else:
        pixels = np.floor((data - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)

    l, a = pixels.shape
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "wb") as f:
        # row 0 = nearest range, width = azimuth bins
        f.write(f"P5\n{a} {l}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    print(f"wrote {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pretrain / probe / sweep-labels / eval-det / retrieval

def _train_config(raw: dict, config_dir: Path) -> TrainConfig:
    try:
        cfg = TrainConfig.from_dict(raw)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"invalid training config: {e}") from e
    if cfg.dataset_path is None:
        raise ConfigError("training config must set dataset_path")
    dataset_path = Path(cfg.dataset_path)
    if not dataset_path.is_absolute():
        dataset_path = config_dir / dataset_path
    if not dataset_path.exists():
        raise DataError(f"dataset manifest not found: {dataset_path}")
    return TrainConfig.from_dict({**raw, "dataset_path": str(dataset_path)})


def _cmd_pretrain(args) -> int:
    config_path = Path(args.config)
    cfg = _train_config(_load_json(config_path, "config"), config_path.parent)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = pretrain(cfg, log_path=out / "metrics.jsonl", checkpoint_dir=out)
    summary = {
        "steps": cfg.steps,
        "final_l_total": result.metrics[-1]["l_total"] if result.metrics else None,
        "projection_fallbacks": result.fallback_count,
        "checkpoint": "final.ckpt",
    }
    _write_json(summary, out / "summary.json")
    print(f"pretrained {cfg.steps} steps; checkpoint at {out / 'final.ckpt'}")
    return EXIT_OK


def _resolve(path_str: str, base: Path, what: str) -> Path:
    p = Path(path_str)
    if not p.is_absolute():
        p = base / p
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def _probe_config(raw: dict) -> ProbeConfig:
    fields = {k: raw[k] for k in
              ("ridge_lambda", "label", "train_fraction",
               "holdout_fraction", "split_seed") if k in raw}
    try:
        return ProbeConfig(**fields)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid probe config: {e}") from e


def _cmd_probe(args) -> int:
    config_path = Path(args.config)
    raw = _load_json(config_path, "config")
    for key in ("checkpoint", "dataset_path"):
        if key not in raw:
            raise ConfigError(f"probe config must set {key!r}")
    ckpt = _resolve(raw["checkpoint"], config_path.parent, "checkpoint")
    manifest = _resolve(raw["dataset_path"], config_path.parent, "dataset manifest")
    params, _ = load_params(ckpt)
    dataset = FrameDataset.from_manifest(manifest)
    report = linear_probe(params, dataset, _probe_config(raw))
    out = Path(args.out)
    _write_json(report.to_dict(), out / "probe_report.json")
    print(f"probe rmse {report.rmse:.4f} m over {report.n_test} held-out frames")
    return EXIT_OK


def _cmd_sweep_labels(args) -> int:
    config_path = Path(args.config)
    raw = _load_json(config_path, "config")
    for key in ("checkpoint", "dataset_path"):
        if key not in raw:
            raise ConfigError(f"sweep config must set {key!r}")
    ckpt = _resolve(raw["checkpoint"], config_path.parent, "checkpoint")
    manifest = _resolve(raw["dataset_path"], config_path.parent, "dataset manifest")
    fractions = raw.get("fractions", list(DEFAULT_SWEEP_FRACTIONS))
    params, _ = load_params(ckpt)
    dataset = FrameDataset.from_manifest(manifest)
    rows = label_efficiency_sweep(params, dataset, fractions,
                                  _probe_config(raw),
                                  random_seed=int(raw.get("random_seed", 0)))
    out = Path(args.out)
    _write_json({"fractions": rows}, out / "sweep_report.json")
    for row in rows:
        print(f"fraction {row['fraction']:>5.2f}: pretrained "
              f"{row['rmse_pretrained']:.4f} m vs random {row['rmse_random']:.4f} m")
    return EXIT_OK


def _parse_box(d: dict, path: Path) -> RotatedBox:
    try:
        return RotatedBox(cx=d["cx"], cy=d["cy"], length=d["length"],
                          width=d["width"], yaw=d["yaw"],
                          score=d.get("score"))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: invalid box record: {e}") from e


def _load_box_records(path: Path, require_score: bool
                      ) -> list[tuple[str, RotatedBox]]:
    raw = _load_json(path, "box records")
    if not isinstance(raw, list):
        raise DataError(f"{path}: expected a JSON list of records")
    out = []
    for rec in raw:
        if "frame_id" not in rec or "box" not in rec:
            raise DataError(f"{path}: record missing frame_id/box: {rec}")
        box = _parse_box(rec["box"], path)
        if require_score and box.score is None:
            raise DataError(f"{path}: detection record missing score")
        out.append((rec["frame_id"], box))
    return out


def _cmd_eval_det(args) -> int:
    config_path = Path(args.config)
    raw = _load_json(config_path, "config")
    for key in ("detections", "ground_truth"):
        if key not in raw:
            raise ConfigError(f"eval config must set {key!r}")
    det_path = _resolve(raw["detections"], config_path.parent, "detections")
    gt_path = _resolve(raw["ground_truth"], config_path.parent, "ground truth")
    dets = [Detection(fid, box)
            for fid, box in _load_box_records(det_path, require_score=True)]
    gts: dict[str, list[RotatedBox]] = {}
    for fid, box in _load_box_records(gt_path, require_score=False):
        gts.setdefault(fid, []).append(box)
    if not gts:
        raise DataError(f"{gt_path}: no ground-truth boxes")
    report = evaluate_detections(dets, gts)
    out = Path(args.out)
    _write_json(report, out / "detection_report.json")
    print(f"ap50 {report['ap50']:.4f}  ap75 {report['ap75']:.4f}  "
          f"map {report['map']:.4f}")
    return EXIT_OK


def _cmd_retrieval(args) -> int:
    config_path = Path(args.config)
    raw = _load_json(config_path, "config")
    for key in ("checkpoint", "dataset_path"):
        if key not in raw:
            raise ConfigError(f"retrieval config must set {key!r}")
    ckpt = _resolve(raw["checkpoint"], config_path.parent, "checkpoint")
    manifest = _resolve(raw["dataset_path"], config_path.parent, "dataset manifest")
    params, _ = load_params(ckpt)
    dataset = FrameDataset.from_manifest(manifest)
    count = int(raw.get("count", min(256, len(dataset))))
    if count > len(dataset):
        raise ConfigError(f"count {count} exceeds dataset size {len(dataset)}")
    k = int(raw.get("k", 1))
    seed = int(raw.get("seed", 0))
    oracle_seed = int(raw.get("oracle_seed", 101))
    spec = (AugmentationSpec.from_dict(raw["augmentation"])
            if "augmentation" in raw else AugmentationSpec.default())

    frames = [dataset[i] for i in range(count)]
    root = RngStream(seed)
    views = [make_views(f.tensor, spec, root.child("views", i), f.scene.id)
             for i, f in enumerate(frames)]
    xa = np.stack([v.view_a.data.reshape(-1) for v in views]).astype(np.float64)
    xb = np.stack([v.view_b.data.reshape(-1) for v in views]).astype(np.float64)
    _, za, _ = forward_batch(params, xa)
    _, zb, _ = forward_batch(params, xb)
    oracle = np.stack([vision_oracle(f.scene, oracle_seed, params.embed_dim)
                       for f in frames])
    report = {
        "n": count,
        "k": k,
        "chance": k / count,
        "top_k_view_view": retrieval_topk(za, zb, k),
        "top_k_radar_vision": retrieval_topk((za + zb) / 2.0, oracle, k),
    }
    _write_json(report, Path(args.out) / "retrieval_report.json")
    print(f"view-view top-{k}: {report['top_k_view_view']:.4f}  "
          f"radar-vision top-{k}: {report['top_k_radar_vision']:.4f}  "
          f"(chance {report['chance']:.4f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radkit",
        description="Desk-scale MIMO radar self-supervised pretraining toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate a synthetic scene corpus")
    p.add_argument("--count", type=int, required=True, help="number of scenes")
    p.add_argument("--seed", type=int, default=0, help="corpus seed")
    p.add_argument("--scatterers-min", type=int, default=1,
                   help="min reflectors per scene")
    p.add_argument("--scatterers-max", type=int, default=3,
                   help="max reflectors per scene")
    p.add_argument("--grid", default=None, help="polar grid JSON (default: built-in)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_scenes)

    p = sub.add_parser("simulate", help="render scenes into raw tensors")
    p.add_argument("--scenes", required=True, help="directory of scene JSON files")
    p.add_argument("--geometry", default=None, help="array geometry JSON")
    p.add_argument("--grid", default=None, help="polar grid JSON")
    p.add_argument("--seed", type=int, default=0, help="simulation seed")
    p.add_argument("--range-spread-bins", type=float, default=1.5,
                   help="sinc main-lobe width in range bins")
    p.add_argument("--noise-floor", type=float, default=0.0,
                   help="complex noise std per antenna-cell")
    p.add_argument("--tx-dwell", type=float, default=12.5e-6,
                   help="seconds per transmitter slot")
    p.add_argument("--wavelength", type=float, default=3.9e-3,
                   help="carrier wavelength in meters")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("augment", help="draw a view pair from a tensor")
    p.add_argument("--in", dest="infile", required=True, help="input RST1 tensor")
    p.add_argument("--spec", default=None, help="augmentation spec JSON")
    p.add_argument("--seed", type=int, default=0, help="draw seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("render", help="render a heatmap or tensor to PGM")
    p.add_argument("--in", dest="infile", required=True,
                   help="input HMP1 heatmap or RST1 tensor")
    p.add_argument("--out", required=True, help="output PGM path")
    p.set_defaults(func=_cmd_render)

    for name, func, desc in (
        ("pretrain", _cmd_pretrain, "run self-supervised pretraining"),
        ("probe", _cmd_probe, "linear-probe a frozen checkpoint"),
        ("sweep-labels", _cmd_sweep_labels,
         "probe across label fractions, pretrained vs random"),
        ("eval-det", _cmd_eval_det, "score detections against ground truth"),
        ("retrieval", _cmd_retrieval, "embedding retrieval accuracy"),
    ):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=func)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, radio.FileFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as e:  # NumericalAbort and gradient blowups
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
