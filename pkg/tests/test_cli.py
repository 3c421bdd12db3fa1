import json
import math

import numpy as np
import pytest

from radkit import io as radio
from radkit.cli import main
from radkit.encoder import load_params
from radkit.simulate import integrate_heatmap

SUBCOMMANDS = ["gen-scenes", "simulate", "augment", "render", "pretrain",
               "probe", "sweep-labels", "eval-det", "retrieval"]


def run(*argv) -> int:
    return main(list(argv))


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        run(cmd, "--help")
    assert e.value.code == 0
    out = capsys.readouterr().out
    assert "--out" in out or "usage" in out


def test_gen_scenes_zero_count(tmp_path):
    out = tmp_path / "scenes"
    assert run("gen-scenes", "--count", "0", "--out", str(out)) == 0
    assert list(out.glob("*.json")) == []


def test_gen_scenes_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("gen-scenes", "--count", "5", "--seed", "9",
                   "--out", str(out)) == 0
    for pa in sorted(a.glob("*.json")):
        assert pa.read_bytes() == (b / pa.name).read_bytes()


def test_gen_scenes_scatterer_counts(tmp_path):
    out = tmp_path / "scenes"
    assert run("gen-scenes", "--count", "30", "--seed", "4",
               "--scatterers-min", "1", "--scatterers-max", "3",
               "--out", str(out)) == 0
    files = sorted(out.glob("*.json"))
    assert len(files) == 30
    for f in files:
        scene = radio.read_scene(f)
        assert 1 <= len(scene.scatterers) <= 3


def test_gen_scenes_bad_range_is_config_error(tmp_path):
    assert run("gen-scenes", "--count", "2", "--scatterers-min", "5",
               "--scatterers-max", "2", "--out", str(tmp_path / "x")) == 2


def test_simulate_empty_dir(tmp_path):
    scenes = tmp_path / "scenes"
    scenes.mkdir()
    out = tmp_path / "tensors"
    assert run("simulate", "--scenes", str(scenes), "--out", str(out)) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest == {"frames": []}


def test_simulate_pipeline_and_determinism(tmp_path):
    scenes = tmp_path / "scenes"
    assert run("gen-scenes", "--count", "3", "--seed", "2", "--out",
               str(scenes)) == 0
    t1, t2 = tmp_path / "t1", tmp_path / "t2"
    for out in (t1, t2):
        assert run("simulate", "--scenes", str(scenes), "--seed", "7",
                   "--out", str(out)) == 0
    for p in sorted(t1.glob("*.rst")):
        assert p.read_bytes() == (t2 / p.name).read_bytes()
    assert (t1 / "manifest.json").read_bytes() == \
        (t2 / "manifest.json").read_bytes()

    # integrated heatmap peaks at the strongest scatterer's bin
    manifest = json.loads((t1 / "manifest.json").read_text())
    assert len(manifest["frames"]) == 3
    entry = manifest["frames"][0]
    scene = radio.read_scene(t1 / entry["scene"])
    tensor = radio.read_tensor(t1 / entry["tensor"])
    heat = integrate_heatmap(tensor)
    strongest = max(scene.scatterers, key=lambda s: s.amplitude)
    from radkit.simulate import default_grid
    l, a = default_grid().nearest_bin(strongest.range, strongest.azimuth)
    peak_l, peak_a = np.unravel_index(heat.data.argmax(), heat.data.shape)
    assert abs(int(peak_l) - l) <= 1 and abs(int(peak_a) - a) <= 1


def test_simulate_missing_dir_is_data_error(tmp_path):
    assert run("simulate", "--scenes", str(tmp_path / "none"),
               "--out", str(tmp_path / "o")) == 3


def test_augment_writes_two_views(tmp_path):
    scenes = tmp_path / "scenes"
    run("gen-scenes", "--count", "1", "--seed", "3", "--out", str(scenes))
    tensors = tmp_path / "tensors"
    run("simulate", "--scenes", str(scenes), "--out", str(tensors))
    tensor_file = next(tensors.glob("*.rst"))
    out = tmp_path / "views"
    assert run("augment", "--in", str(tensor_file), "--seed", "5",
               "--out", str(out)) == 0
    views = sorted(out.glob("*.hmp"))
    assert len(views) == 2
    for v in views:
        radio.read_heatmap(v)  # parses


def test_render_tensor_and_heatmap(tmp_path, capsys):
    from radkit.types import Heatmap, PolarGrid
    grid = PolarGrid(8, 6, 0.0, 8.0, -1.0, 1.0)
    data = np.zeros((8, 6), dtype=np.float32)
    data[3, 2] = 7.0
    radio.write_heatmap(Heatmap(grid, data), tmp_path / "peak.hmp")
    out = tmp_path / "peak.pgm"
    assert run("render", "--in", str(tmp_path / "peak.hmp"),
               "--out", str(out)) == 0
    raw = out.read_bytes()
    header, pixels = raw.split(b"255\n", 1)
    assert header == b"P5\n6 8\n"
    img = np.frombuffer(pixels, dtype=np.uint8).reshape(8, 6)
    assert img[3, 2] == 255
    assert (img == 255).sum() == 1
    assert (img == 0).sum() == 47


def test_render_constant_heatmap_warns_midgray(tmp_path, capsys):
    from radkit.types import Heatmap, PolarGrid
    grid = PolarGrid(4, 4, 0.0, 4.0, -1.0, 1.0)
    radio.write_heatmap(Heatmap(grid, np.zeros((4, 4), dtype=np.float32)),
                        tmp_path / "flat.hmp")
    out = tmp_path / "flat.pgm"
    assert run("render", "--in", str(tmp_path / "flat.hmp"),
               "--out", str(out)) == 0
    err = capsys.readouterr().err
    assert "constant" in err
    img = np.frombuffer(out.read_bytes().split(b"255\n", 1)[1], dtype=np.uint8)
    assert (img == 128).all()


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    base = tmp_path_factory.mktemp("corpus")
    scenes = base / "scenes"
    tensors = base / "tensors"
    assert run("gen-scenes", "--count", "12", "--seed", "1",
               "--out", str(scenes)) == 0
    assert run("simulate", "--scenes", str(scenes), "--seed", "2",
               "--noise-floor", "0.05", "--out", str(tensors)) == 0
    return tensors / "manifest.json"


def train_config(manifest, **kw):
    cfg = {
        "batch_size": 4, "steps": 2, "lr_base": 0.05, "momentum": 0.9,
        "weight_decay": 0.0001, "schedule": "cosine", "seed": 0,
        "dataset_path": str(manifest),
        "hidden_widths": [32], "feat_dim": 16, "embed_dim": 16,
    }
    cfg.update(kw)
    return cfg


def test_pretrain_zero_steps_checkpoint_equals_init(tiny_dataset, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(train_config(tiny_dataset, steps=0)))
    out = tmp_path / "run"
    assert run("pretrain", "--config", str(cfg_path), "--out", str(out)) == 0
    params, step = load_params(out / "final.ckpt")
    assert step == 0
    from radkit.encoder import init_params
    from radkit.rng import RngStream
    expected = init_params([1024, 32, 16], RngStream(0).child("init"),
                           [16, 16, 16])
    got = params.backbone[0].weights
    want = expected.backbone[0].weights.astype(np.float32).astype(np.float64)
    assert np.array_equal(got, want)


def test_pretrain_writes_metrics_and_summary(tiny_dataset, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(train_config(tiny_dataset, steps=3)))
    out = tmp_path / "run"
    assert run("pretrain", "--config", str(cfg_path), "--out", str(out)) == 0
    lines = (out / "metrics.jsonl").read_text().strip().splitlines()
    assert len(lines) == 3
    rec = json.loads(lines[0])
    assert set(rec) == {"step", "l_intra", "l_cross", "l_total", "lr"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 3


def test_pretrain_missing_config_file(tmp_path):
    assert run("pretrain", "--config", str(tmp_path / "nope.json"),
               "--out", str(tmp_path / "o")) == 3


def test_pretrain_invalid_json_is_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    assert run("pretrain", "--config", str(bad),
               "--out", str(tmp_path / "o")) == 2


def test_pretrain_missing_dataset_is_data_error(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(train_config(tmp_path / "missing.json")))
    assert run("pretrain", "--config", str(cfg_path),
               "--out", str(tmp_path / "o")) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_pretrain_numerical_abort_exit_code(tiny_dataset, tmp_path):
    # an absurd weight decay overflows the update within a few steps
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(train_config(
        tiny_dataset, steps=8, weight_decay=1e300)))
    assert run("pretrain", "--config", str(cfg_path),
               "--out", str(tmp_path / "o")) == 4


def test_probe_and_sweep_and_retrieval(tiny_dataset, tmp_path):
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(json.dumps(train_config(tiny_dataset, steps=3)))
    run_dir = tmp_path / "run"
    assert run("pretrain", "--config", str(cfg_path), "--out", str(run_dir)) == 0

    probe_cfg = tmp_path / "probe.json"
    probe_cfg.write_text(json.dumps({
        "checkpoint": str(run_dir / "final.ckpt"),
        "dataset_path": str(tiny_dataset),
        "ridge_lambda": 0.01,
        "train_fraction": 1.0,
    }))
    out = tmp_path / "probe_out"
    assert run("probe", "--config", str(probe_cfg), "--out", str(out)) == 0
    report = json.loads((out / "probe_report.json").read_text())
    assert math.isfinite(report["rmse"])

    sweep_cfg = tmp_path / "sweep.json"
    sweep_cfg.write_text(json.dumps({
        "checkpoint": str(run_dir / "final.ckpt"),
        "dataset_path": str(tiny_dataset),
        "ridge_lambda": 0.01,
        "fractions": [0.5, 1.0],
    }))
    out2 = tmp_path / "sweep_out"
    assert run("sweep-labels", "--config", str(sweep_cfg),
               "--out", str(out2)) == 0
    table = json.loads((out2 / "sweep_report.json").read_text())
    assert [r["fraction"] for r in table["fractions"]] == [0.5, 1.0]

    ret_cfg = tmp_path / "ret.json"
    ret_cfg.write_text(json.dumps({
        "checkpoint": str(run_dir / "final.ckpt"),
        "dataset_path": str(tiny_dataset),
        "count": 8, "k": 1, "seed": 0,
    }))
    out3 = tmp_path / "ret_out"
    assert run("retrieval", "--config", str(ret_cfg), "--out", str(out3)) == 0
    rep = json.loads((out3 / "retrieval_report.json").read_text())
    assert 0.0 <= rep["top_k_view_view"] <= 1.0
    assert rep["chance"] == 1 / 8

    # determinism: reports byte-identical on rerun
    out4 = tmp_path / "probe_again"
    assert run("probe", "--config", str(probe_cfg), "--out", str(out4)) == 0
    assert (out / "probe_report.json").read_bytes() == \
        (out4 / "probe_report.json").read_bytes()


def test_probe_missing_checkpoint_is_data_error(tiny_dataset, tmp_path):
    probe_cfg = tmp_path / "probe.json"
    probe_cfg.write_text(json.dumps({
        "checkpoint": str(tmp_path / "missing.ckpt"),
        "dataset_path": str(tiny_dataset),
    }))
    assert run("probe", "--config", str(probe_cfg),
               "--out", str(tmp_path / "o")) == 3


def box_dict(cx, cy, yaw=0.0, score=None):
    d = {"cx": cx, "cy": cy, "length": 4.0, "width": 2.0, "yaw": yaw}
    if score is not None:
        d["score"] = score
    return d


def test_eval_det_hand_example(tmp_path):
    dets = [
        {"frame_id": "f", "box": box_dict(0.0, 10.0, score=0.9)},
        {"frame_id": "f", "box": box_dict(-20.0, 5.0, score=0.8)},
        {"frame_id": "f", "box": box_dict(10.0, 20.0, score=0.7)},
    ]
    gts = [
        {"frame_id": "f", "box": box_dict(0.0, 10.0)},
        {"frame_id": "f", "box": box_dict(10.0, 20.0)},
    ]
    (tmp_path / "dets.json").write_text(json.dumps(dets))
    (tmp_path / "gts.json").write_text(json.dumps(gts))
    cfg = tmp_path / "eval.json"
    cfg.write_text(json.dumps({"detections": str(tmp_path / "dets.json"),
                               "ground_truth": str(tmp_path / "gts.json")}))
    out = tmp_path / "out"
    assert run("eval-det", "--config", str(cfg), "--out", str(out)) == 0
    report = json.loads((out / "detection_report.json").read_text())
    assert abs(report["ap50"] - 0.8350) < 1e-4


def test_eval_det_detection_without_score_is_data_error(tmp_path):
    (tmp_path / "dets.json").write_text(json.dumps(
        [{"frame_id": "f", "box": box_dict(0, 10)}]))
    (tmp_path / "gts.json").write_text(json.dumps(
        [{"frame_id": "f", "box": box_dict(0, 10)}]))
    cfg = tmp_path / "eval.json"
    cfg.write_text(json.dumps({"detections": str(tmp_path / "dets.json"),
                               "ground_truth": str(tmp_path / "gts.json")}))
    assert run("eval-det", "--config", str(cfg),
               "--out", str(tmp_path / "o")) == 3


def test_radkit_threads_env(tmp_path, monkeypatch):
    scenes = tmp_path / "scenes"
    run("gen-scenes", "--count", "4", "--seed", "5", "--out", str(scenes))
    monkeypatch.setenv("RADKIT_THREADS", "2")
    t1 = tmp_path / "t1"
    assert run("simulate", "--scenes", str(scenes), "--seed", "1",
               "--out", str(t1)) == 0
    monkeypatch.setenv("RADKIT_THREADS", "1")
    t2 = tmp_path / "t2"
    assert run("simulate", "--scenes", str(scenes), "--seed", "1",
               "--out", str(t2)) == 0
    # worker count must not change outputs
    for p in sorted(t1.glob("*.rst")):
        assert p.read_bytes() == (t2 / p.name).read_bytes()
    monkeypatch.setenv("RADKIT_THREADS", "zero")
    assert run("simulate", "--scenes", str(scenes), "--seed", "1",
               "--out", str(tmp_path / "t3")) == 2
