"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 7, 8 and 10 share one set of five pretraining runs (2000-frame
corpus, batch 32, 500 steps per seed) built by a session fixture; its
wall-clock time counts against criterion 7's ten-minute budget.
"""

import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np
import pytest

from radkit.augment import (
    AugmentStep,
    AugmentationSpec,
    hflip,
    phase_noise,
    rmm,
    vflip,
)
from radkit.augment import _draw_keep_mask
from radkit.contrastive import (
    ContrastiveConfig,
    EmbeddingBatch,
    composite_loss,
    intra_loss,
    intra_pair_loss,
    loss_gradients,
)
from radkit.encoder import (
    backward,
    forward_batch,
    init_params,
    save_params,
    vision_oracle,
)
from radkit.metrics import average_precision, retrieval_topk, rotated_iou
from radkit.rng import RngStream
from radkit.simulate import (
    SimConfig,
    default_geometry,
    default_grid,
    integrate_heatmap,
    synthesize_tensor,
)
from radkit.train import (
    FrameDataset,
    ProbeConfig,
    TrainConfig,
    label_efficiency_sweep,
    linear_probe,
    pretrain,
)
from radkit.types import Heatmap, RotatedBox, Scatterer, Scene

from conftest import build_corpus
from test_encoder import (
    fd_gradient,
    fd_safe_point,
    flatten_grads,
    flatten_params,
    unflatten_params,
)
from test_metrics import brute_force_ap, det, mc_iou


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"[acceptance] {'PASS' if ok else 'FAIL'} {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


QUIET = SimConfig(noise_floor=0.0)

# pretraining recipe for the benefit/retrieval/label-efficiency criteria.
# hflip is excluded from the view pipeline here: mirror invariance would
# erase the lateral-coordinate sign that the position probe regresses.
BENEFIT_AUGMENTATION = AugmentationSpec((
    AugmentStep("antenna_dropout", 1.0, {"p": 0.9}),
    AugmentStep("phase_noise", 1.0, {"alpha": 0.1}),
    AugmentStep("center_crop", 1.0, {"min_fraction": 0.7}),
))
BENEFIT_PROBE = ProbeConfig(ridge_lambda=100.0)
N_FRAMES = 2000
N_HELD_OUT = 256
SWEEP_FRACTIONS = (0.01, 0.03, 0.10, 0.30, 1.00)


@dataclass
class BenefitRun:
    seed: int
    corpus: FrameDataset
    held_out: list
    params: object
    init_params: object
    rmse_pretrained: float
    rmse_random: float
    oracle_seed: int
    embed_dim: int


@pytest.fixture(scope="session")
def benefit_runs():
    grid, geometry = default_grid(), default_geometry()
    t0 = time.perf_counter()
    runs = []
    for seed in range(5):
        corpus = build_corpus(N_FRAMES, seed=1000 + seed, grid=grid,
                              geometry=geometry,
                              sim=SimConfig(noise_floor=0.05),
                              min_scatterers=1, max_scatterers=1)
        train = FrameDataset([corpus[i] for i in range(N_FRAMES - N_HELD_OUT)])
        cfg = TrainConfig(batch_size=32, steps=500, seed=seed,
                          hidden_widths=(256, 256),
                          augmentation=BENEFIT_AUGMENTATION)
        result = pretrain(cfg, dataset=train)
        runs.append(BenefitRun(
            seed=seed,
            corpus=corpus,
            held_out=[corpus[i] for i in range(N_FRAMES - N_HELD_OUT, N_FRAMES)],
            params=result.params,
            init_params=result.init_params,
            rmse_pretrained=linear_probe(result.params, corpus, BENEFIT_PROBE).rmse,
            rmse_random=linear_probe(result.init_params, corpus, BENEFIT_PROBE).rmse,
            oracle_seed=cfg.oracle_seed,
            embed_dim=cfg.embed_dim,
        ))
    return runs, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# criterion 1: gradient suite

def test_criterion_01_gradient_suite():
    t0 = time.perf_counter()
    batch_sizes = (2, 4, 8)
    temperatures = (0.07, 0.1, 0.2, 0.5)
    lambdas = (0.0, 0.5, 1.0, 2.0)
    worst = 0.0
    checked = 0
    seed = 0
    while checked < 20:
        seed += 1
        b = batch_sizes[checked % 3]
        cfg = ContrastiveConfig(
            temperature=temperatures[checked % 4],
            lambda_cross=lambdas[checked % 4],
            symmetric_cross=bool(checked % 2),
            negatives_variant="same_view" if checked % 5 == 0 else "cross_view",
        )
        params = init_params([15, 8, 6], RngStream(seed), [6, 5, 5])
        gen = RngStream(9000 + seed).generator()
        x = gen.random((2 * b, 15))
        if not fd_safe_point(params, x):
            continue
        oracle = gen.standard_normal((b, 5))
        oracle /= np.linalg.norm(oracle, axis=1, keepdims=True)

        def scalar(theta):
            p = unflatten_params(params, theta)
            _, z, _ = forward_batch(p, x)
            batch = EmbeddingBatch(z=z[:b], z_prime=z[b:], z_vision=oracle)
            return composite_loss(batch, cfg)

        _, z0, _ = forward_batch(params, x)
        batch0 = EmbeddingBatch(z=z0[:b], z_prime=z0[b:], z_vision=oracle)
        g = loss_gradients(batch0, cfg)
        analytic = flatten_grads(backward(params, x, np.vstack([g.z, g.z_prime])))
        # h = 1e-6 keeps the oracle's truncation error well under the bar at
        # sharp temperatures (third derivatives scale like 1/tau^3)
        fd = fd_gradient(scalar, flatten_params(params), h=1e-6)
        denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(analytic)))
        worst = max(worst, float(np.max(np.abs(fd - analytic) / denom)))
        checked += 1
    elapsed = time.perf_counter() - t0
    report("criterion 1 (gradient suite)",
           worst < 1e-6 and elapsed < 30.0,
           f"20 configs, worst relative error {worst:.2e}, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# criterion 2: loss closed forms

def test_criterion_02_loss_closed_forms():
    e1 = np.array([1.0, 0.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0, 0.0])
    e3 = np.array([0.0, 0.0, 1.0, 0.0])
    batch2 = EmbeddingBatch(z=np.stack([e1, e3]), z_prime=np.stack([e1, e2]))
    pair = intra_pair_loss(batch2, 0, "forward", 1.0)
    err_pair = abs(pair - math.log(1.0 + math.exp(-1.0)))

    err_logb = 0.0
    for b in (2, 4, 8):
        z = np.tile(e1, (b, 1))
        batch = EmbeddingBatch(z=z, z_prime=z.copy())
        err_logb = max(err_logb, abs(intra_loss(batch, 0.3) - math.log(b)))

    zr = RngStream(77).generator().standard_normal((4, 6))
    zr /= np.linalg.norm(zr, axis=1, keepdims=True)
    zp = RngStream(78).generator().standard_normal((4, 6))
    zp /= np.linalg.norm(zp, axis=1, keepdims=True)
    rbatch = EmbeddingBatch(z=zr, z_prime=zp)
    bit_equal = composite_loss(
        rbatch, ContrastiveConfig(temperature=0.13, lambda_cross=0.0)) \
        == intra_loss(rbatch, 0.13)

    ok = err_pair < 1e-9 and err_logb < 1e-9 and bit_equal
    report("criterion 2 (loss closed forms)", ok,
           f"pair error {err_pair:.2e}, logB error {err_logb:.2e}, "
           f"lambda=0 bit-equal {bit_equal}")


# ---------------------------------------------------------------------------
# criterion 3: augmentation identities

def test_criterion_03_augmentation_identities():
    grid, geometry = default_grid(), default_geometry()
    scene = Scene("a", (
        Scatterer(range=20.25, azimuth=0.3, amplitude=1.2),
        Scatterer(range=33.0, azimuth=-0.5, amplitude=0.8),
    ))
    tensor = synthesize_tensor(scene, geometry, grid,
                               SimConfig(noise_floor=0.02), RngStream(5))

    base = integrate_heatmap(tensor)
    ident = rmm(tensor, 1.0, 0.0, RngStream(3))
    rmm_identity = np.array_equal(ident.data.view(np.uint8),
                                  base.data.view(np.uint8))

    noisy = phase_noise(tensor, 0.6, RngStream(4))
    before = np.abs(tensor.data.astype(np.complex128))
    after = np.abs(noisy.data.astype(np.complex128))
    mod_err = float(np.max(np.abs(after - before) / np.maximum(before, 1e-12)))

    root = RngStream(314)
    kept = sum(int(_draw_keep_mask(12, 0.9, root.child(t).generator()).sum())
               for t in range(10_000))
    keep_rate = kept / (10_000 * 12)

    h = Heatmap(grid, RngStream(6).generator().random(
        (grid.num_range, grid.num_azimuth)).astype(np.float32))
    flips_exact = (np.array_equal(hflip(hflip(h)).data, h.data)
                   and np.array_equal(vflip(vflip(h)).data, h.data))

    ok = (rmm_identity and mod_err <= 1e-6
          and 0.895 <= keep_rate <= 0.905 and flips_exact)
    report("criterion 3 (augmentation identities)", ok,
           f"rmm identity {rmm_identity}, modulus error {mod_err:.2e}, "
           f"keep rate {keep_rate:.4f}, flip involutions {flips_exact}")


# ---------------------------------------------------------------------------
# criterion 4: simulator correctness

def test_criterion_04_simulator_correctness():
    grid, geometry = default_grid(), default_geometry()
    k = geometry.num_virtual
    gen = RngStream(4242).generator()

    argmax_hits = 0
    for trial in range(100):
        r = float(gen.uniform(grid.range_min + 2 * grid.range_step,
                              grid.range_max - 2 * grid.range_step))
        az = float(gen.uniform(grid.az_min + 2 * grid.az_step,
                               grid.az_max - 2 * grid.az_step))
        scene = Scene("s", (Scatterer(range=r, azimuth=az, amplitude=1.0),))
        h = integrate_heatmap(synthesize_tensor(scene, geometry, grid, QUIET,
                                                RngStream(trial)))
        got = np.unravel_index(h.data.argmax(), h.data.shape)
        if got == grid.nearest_bin(r, az):
            argmax_hits += 1

    peak_err = 0.0
    rc, ac = grid.range_centers(), grid.azimuth_centers()
    for trial in range(100):
        l = int(gen.integers(2, grid.num_range - 2))
        a = int(gen.integers(2, grid.num_azimuth - 2))
        amp = float(gen.uniform(0.5, 2.0))
        scene = Scene("s", (Scatterer(range=float(rc[l]), azimuth=float(ac[a]),
                                      amplitude=amp),))
        h = integrate_heatmap(synthesize_tensor(scene, geometry, grid, QUIET,
                                                RngStream(500 + trial)))
        peak_err = max(peak_err, abs(h.data[l, a] - amp * k) / (amp * k))

    ok = argmax_hits == 100 and peak_err < 1e-4
    report("criterion 4 (simulator correctness)", ok,
           f"argmax {argmax_hits}/100 at true bin, "
           f"peak relative error {peak_err:.2e}")


# ---------------------------------------------------------------------------
# criterion 5: rotated IoU vs Monte-Carlo oracle

def test_criterion_05_iou_oracle_equivalence():
    t0 = time.perf_counter()
    a = RotatedBox(0.0, 0.0, 2.0, 2.0, 0.0)
    b = RotatedBox(1.0, 0.0, 2.0, 2.0, 0.0)
    err_offset = abs(rotated_iou(a, b) - 1.0 / 3.0)
    c = RotatedBox(0.0, 0.0, 2.0, 2.0, math.pi / 4.0)
    err_rot = abs(rotated_iou(a, c) - 1.0 / math.sqrt(2.0))

    gen = RngStream(8).generator()
    worst_mc = 0.0
    for trial in range(200):
        p = RotatedBox(*gen.uniform(-4, 4, 2), *gen.uniform(0.8, 6.0, 2),
                       gen.uniform(-math.pi, math.pi))
        q = RotatedBox(*gen.uniform(-4, 4, 2), *gen.uniform(0.8, 6.0, 2),
                       gen.uniform(-math.pi, math.pi))
        worst_mc = max(worst_mc, abs(rotated_iou(p, q) - mc_iou(p, q, seed=trial)))
    elapsed = time.perf_counter() - t0

    ok = (err_offset < 1e-3 and err_rot < 1e-3 and worst_mc < 2e-3
          and elapsed < 120.0)
    report("criterion 5 (IoU oracle equivalence)", ok,
           f"analytic errors {err_offset:.2e}/{err_rot:.2e}, "
           f"worst MC deviation {worst_mc:.2e} over 200 pairs, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# criterion 6: AP vs brute-force oracle

def test_criterion_06_ap_oracle_equivalence():
    gt1 = RotatedBox(0.0, 10.0, 4.0, 2.0, 0.0)
    gt2 = RotatedBox(10.0, 20.0, 4.0, 2.0, 0.0)
    dets = [
        det("f", 0.0, 10.0, 4.0, 2.0, 0.0, 0.9),
        det("f", -20.0, 5.0, 4.0, 2.0, 0.0, 0.8),
        det("f", 10.0, 20.0, 4.0, 2.0, 0.0, 0.7),
    ]
    gts = {"f": [gt1, gt2]}
    hand = average_precision(dets, gts, 0.5)
    err_hand = abs(hand - 0.8350)

    gen = RngStream(99).generator()
    exact_matches = 0
    instances = 0
    for trial in range(60):
        frame_gts = {}
        frame_dets = []
        for fid in ("a", "b"):
            n_gt = int(gen.integers(1, 4))
            frame_gts[fid] = [
                RotatedBox(float(gen.uniform(-10, 10)), float(gen.uniform(5, 25)),
                           4.0, 2.0, float(gen.uniform(-1.2, 1.2)))
                for _ in range(n_gt)]
            for _ in range(int(gen.integers(0, 4))):
                base = frame_gts[fid][int(gen.integers(0, n_gt))]
                frame_dets.append(det(
                    fid, base.cx + float(gen.uniform(-2.5, 2.5)),
                    base.cy + float(gen.uniform(-2.5, 2.5)),
                    4.0, 2.0, base.yaw + float(gen.uniform(-0.4, 0.4)),
                    round(float(gen.uniform(0.05, 0.99)), 3)))
        if not frame_dets:
            continue
        for thr in (0.3, 0.5, 0.75):
            instances += 1
            if average_precision(frame_dets, frame_gts, thr) == pytest.approx(
                    brute_force_ap(frame_dets, frame_gts, thr), abs=1e-12):
                exact_matches += 1

    ok = err_hand < 1e-4 and exact_matches == instances and instances > 100
    report("criterion 6 (AP oracle equivalence)", ok,
           f"hand case error {err_hand:.2e}, brute-force equality "
           f"{exact_matches}/{instances} instances")


# ---------------------------------------------------------------------------
# criterion 7: pretraining benefit

def test_criterion_07_pretraining_benefit(benefit_runs):
    runs, elapsed = benefit_runs
    wins = sum(r.rmse_pretrained < r.rmse_random for r in runs)
    improvements = [(r.rmse_random - r.rmse_pretrained) / r.rmse_random * 100.0
                    for r in runs]
    median_impr = float(np.median(improvements))
    ok = wins >= 4 and median_impr >= 20.0 and elapsed < 600.0
    detail = (f"wins {wins}/5, improvements "
              f"{[f'{v:.1f}%' for v in improvements]}, median "
              f"{median_impr:.1f}%, 5-seed pipeline {elapsed:.0f} s")
    report("criterion 7 (pretraining benefit)", ok, detail)


# ---------------------------------------------------------------------------
# criterion 8: retrieval above chance

def test_criterion_08_retrieval_above_chance(benefit_runs):
    runs, _ = benefit_runs
    n = N_HELD_OUT
    chance_hits = n * (1.0 / n)
    sigma = math.sqrt(n * (1.0 / n) * (1.0 - 1.0 / n))
    vv_min = 1.0
    rv_min = 1.0
    from radkit.augment import make_views
    for run in runs:
        root = RngStream(777)
        views = [make_views(f.tensor, BENEFIT_AUGMENTATION,
                            root.child("ret", i), f.scene.id)
                 for i, f in enumerate(run.held_out)]
        xa = np.stack([v.view_a.data.reshape(-1) for v in views]).astype(np.float64)
        xb = np.stack([v.view_b.data.reshape(-1) for v in views]).astype(np.float64)
        _, za, _ = forward_batch(run.params, xa)
        _, zb, _ = forward_batch(run.params, xb)
        oracle = np.stack([vision_oracle(f.scene, run.oracle_seed, run.embed_dim)
                           for f in run.held_out])
        vv_min = min(vv_min, retrieval_topk(za, zb, 1))
        rv_min = min(rv_min, retrieval_topk((za + zb) / 2.0, oracle, 1))

    ok = (vv_min > 5.0 / n) and (rv_min * n > chance_hits + 3.0 * sigma)
    report("criterion 8 (retrieval above chance)", ok,
           f"worst view-view top-1 {vv_min * n:.0f}/{n} (need > 5), worst "
           f"radar-vision top-1 {rv_min * n:.0f}/{n} "
           f"(need > {chance_hits + 3 * sigma:.1f})")


# ---------------------------------------------------------------------------
# criterion 9: determinism

def test_criterion_09_determinism(tmp_path):
    grid, geometry = default_grid(), default_geometry()

    scene = Scene("d", (Scatterer(range=18.0, azimuth=0.2, amplitude=1.0,
                                  radial_velocity=4.0),))
    cfg = SimConfig(noise_floor=0.1)
    t1 = synthesize_tensor(scene, geometry, grid, cfg, RngStream(12))
    t2 = synthesize_tensor(scene, geometry, grid, cfg, RngStream(12))
    tensors_equal = np.array_equal(t1.data.view(np.uint8), t2.data.view(np.uint8))

    corpus = build_corpus(150, seed=55, grid=grid, geometry=geometry)
    tcfg = TrainConfig(batch_size=8, steps=30, hidden_widths=(64,),
                       feat_dim=32, embed_dim=32, seed=9)
    digests = []
    reports = []
    for run in range(2):
        result = pretrain(tcfg, dataset=corpus)
        path = tmp_path / f"run{run}.ckpt"
        save_params(result.params, tcfg.steps, path)
        digests.append(hashlib.sha256(path.read_bytes()).hexdigest())
        probe = linear_probe(result.params, corpus, ProbeConfig(ridge_lambda=1.0))
        reports.append(probe.to_dict())

    ok = tensors_equal and digests[0] == digests[1] and reports[0] == reports[1]
    report("criterion 9 (determinism)", ok,
           f"tensors bit-identical {tensors_equal}, checkpoint digests equal "
           f"{digests[0] == digests[1]}, probe reports equal "
           f"{reports[0] == reports[1]}")


# ---------------------------------------------------------------------------
# criterion 10: label-efficiency sweep

def test_criterion_10_label_efficiency(benefit_runs):
    runs, _ = benefit_runs
    tables = [
        label_efficiency_sweep(r.params, r.corpus, SWEEP_FRACTIONS,
                               BENEFIT_PROBE, random_params=r.init_params)
        for r in runs
    ]
    lines = []
    medians_pre = []
    all_ok = True
    for fi, frac in enumerate(SWEEP_FRACTIONS):
        med_pre = float(np.median([t[fi]["rmse_pretrained"] for t in tables]))
        med_rand = float(np.median([t[fi]["rmse_random"] for t in tables]))
        medians_pre.append(med_pre)
        all_ok = all_ok and med_pre <= med_rand
        lines.append(f"{frac:.0%}: {med_pre:.2f} vs {med_rand:.2f}")
    monotone = all(b <= a + 1e-9 for a, b in zip(medians_pre, medians_pre[1:]))
    report("criterion 10 (label efficiency)", all_ok and monotone,
           "median pretrained vs random RMSE at " + ", ".join(lines)
           + f"; pretrained medians non-increasing {monotone}")
