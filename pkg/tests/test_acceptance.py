"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed at the end of the session (and inline with ``-s``).
"""
import csv
import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest
import torch
from scipy.stats import binomtest

from vidpace.backbones import BackboneConfig, build_backbone
from vidpace.config import load_config
from vidpace.data import FrameVolume, SyntheticConfig, generate_synthetic
from vidpace.heads import task_loss
from vidpace.retrieval import FeatureIndex, build_gallery, query_topk, retrieval_eval, topk_accuracy
from vidpace.sampler import ClipSpec, clip_indices, label_to_permutation, permutation_to_label, sample_tuple
from vidpace.tgn import TGNParams, plan_groups, tgn_forward, tgn_reference_oracle
from vidpace.train import (
    evaluate_classification,
    evaluate_pretext,
    finetune,
    load_checkpoint,
    pretext_batch,
    pretrain,
    save_checkpoint,
)

# desk-scale synthetic setup shared by the training criteria
DESK_DATA = SyntheticConfig(num_videos=250, frames_per_video=40, height=40, width=40, velocity_range=(1, 2),
                            tail_length=8, seed=1, test_fraction=0.2)
DESK_PRETRAIN = ["arch=r3d", "width_scale=0.25", "m=8", "n=3", "epochs=30", "resize=[36,36]", "crop_size=32",
                 "lr=0.02", "lr_schedule=cosine", "dropout=0.0"]
DESK_FINETUNE = ["arch=r3d", "width_scale=0.25", "m=8", "resize=[36,36]", "crop_size=32", "epochs=5", "lr=0.01",
                 "lr_schedule=cosine"]
PAIRED_RUNS = 10


@pytest.fixture
def report(request):
    def emit(number, passed, detail):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        print(line)
        request.config.acceptance_lines.append(line)
        return passed
    return emit


@pytest.fixture(scope="module")
def desk():
    manifest, videos = generate_synthetic(DESK_DATA)
    vols = {k: v.volume for k, v in videos.items()}
    cfg = load_config(None, DESK_PRETRAIN)
    t0 = time.perf_counter()
    ckpt = pretrain(cfg, manifest, vols)
    return {"manifest": manifest, "vols": vols, "cfg": cfg, "ckpt": ckpt,
            "pretrain_seconds": time.perf_counter() - t0}


def _valid_groups(T):
    return [g for g in (1, 2, 4, 8) if T <= g or T % g == 0]


def test_criterion_1_tgn_oracle(report):
    rng = np.random.default_rng(0)
    gen = torch.Generator().manual_seed(0)
    t0 = time.perf_counter()
    worst = {torch.float32: 0.0, torch.float64: 0.0}
    used_g = set()
    count = 0
    for k in range(200):
        T = int(rng.integers(1, 9))
        groups = _valid_groups(T)
        g = groups[k % len(groups)]
        used_g.add(g)
        B, C, H, W = (int(v) for v in rng.integers(1, [5, 5, 7, 7]))
        x = torch.randn(B, T, C, H, W, dtype=torch.float64, generator=gen) * float(rng.uniform(0.1, 5)) \
            + float(rng.normal())
        gamma = torch.randn(C, dtype=torch.float64, generator=gen)
        beta = torch.randn(C, dtype=torch.float64, generator=gen)
        plan = plan_groups(T, g)
        ref = tgn_reference_oracle(x.numpy(), plan, TGNParams(gamma, beta))
        for dtype in worst:
            y = tgn_forward(x.to(dtype), plan, TGNParams(gamma.to(dtype), beta.to(dtype)))
            worst[dtype] = max(worst[dtype], float(np.abs(y.double().numpy() - ref).max()))
        count += 1
    elapsed = time.perf_counter() - t0
    ok = worst[torch.float32] <= 1e-5 and worst[torch.float64] <= 1e-10 and elapsed < 60 and used_g == {1, 2, 4, 8}
    report(1, ok, f"{count} tensors, max err fp32 {worst[torch.float32]:.2e} fp64 {worst[torch.float64]:.2e}, "
                  f"g used {sorted(used_g)}, {elapsed:.1f}s")
    assert ok


def _central_diff(f, x, h=1e-6):
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    for k in range(flat.numel()):
        orig = flat[k].item()
        flat[k] = orig + h
        up = f().item()
        flat[k] = orig - h
        down = f().item()
        flat[k] = orig
        grad.view(-1)[k] = (up - down) / (2 * h)
    return grad


def test_criterion_2_tgn_gradients(report):
    gen = torch.Generator().manual_seed(1)
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        T = int(rng.choice([2, 4, 6, 8]))
        g = int(rng.choice([g for g in (1, 2, 4) if T <= g or T % g == 0]))
        B, C, H, W = (int(v) for v in rng.integers([2, 1, 1, 1], [4, 4, 3, 3]))
        x = torch.randn(B, T, C, H, W, dtype=torch.float64, generator=gen, requires_grad=True)
        gamma = (torch.rand(C, dtype=torch.float64, generator=gen) + 0.5).requires_grad_(True)
        beta = torch.randn(C, dtype=torch.float64, generator=gen).requires_grad_(True)
        weights = torch.randn(x.shape, dtype=torch.float64, generator=gen)
        plan = plan_groups(T, g)
        params = TGNParams(gamma, beta)
        analytic = torch.autograd.grad((tgn_forward(x, plan, params) * weights).sum(), (x, gamma, beta))
        with torch.no_grad():
            def loss():
                return (tgn_forward(x, plan, params) * weights).sum()
            for a, wrt in zip(analytic, (x, gamma, beta)):
                n = _central_diff(loss, wrt)
                worst = max(worst, float((a - n).norm() / max(a.norm(), n.norm(), 1e-12)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 120
    report(2, ok, f"20 tensors, worst relative error {worst:.2e} (x, gamma, beta), {elapsed:.1f}s")
    assert ok


def test_criterion_3_table1(report):
    model = build_backbone(BackboneConfig(arch="c3d", width_scale=1.0, clip_len=16, g=2), seed=0)
    plans = model.stage_plans()
    expected = [(16, 8), (8, 4), (4, 2), (2, 1), (2, 1)]
    ok = plans == expected
    report(3, ok, f"C3D m=16 g=2 per-stage (t, p) = {plans}")
    assert ok


def _index_oracle(i, s, m, L):
    out, pos = [], i
    for _ in range(m):
        out.append(pos % L)
        pos += s
    return out


def test_criterion_4_sampler_exactness(report):
    rng = np.random.default_rng(4)
    formula_fail = duality_fail = 0
    for _ in range(10_000):
        L = int(rng.integers(1, 500))
        s = int(rng.choice([v for v in range(-8, 9) if v]))
        m = int(rng.integers(2, 33))
        i = int(rng.integers(0, L))
        idx = list(clip_indices(ClipSpec(s, i, m), L))
        formula_fail += idx != _index_oracle(i, s, m, L)
        sigma = abs(s)
        fwd = clip_indices(ClipSpec(sigma, i, m), L)
        rew = clip_indices(ClipSpec(-sigma, (i + (m - 1) * sigma) % L, m), L)
        duality_fail += list(fwd[::-1]) != list(rew)
    ok = formula_fail == 0 and duality_fail == 0
    report(4, ok, f"10000 random (i, s, m, L): formula failures {formula_fail}, duality failures {duality_fail}")
    assert ok


def test_criterion_5_label_bijection(report):
    failures = cases = 0
    for n in range(2, 7):
        for rank, perm in enumerate(itertools.permutations(range(n))):
            cases += 1
            failures += permutation_to_label(perm) != rank or label_to_permutation(rank, n) != perm
    L = 30
    frames = np.zeros((L, 2, 2, 3), np.uint8)
    vol = FrameVolume(frames, "blank")
    rng = np.random.default_rng(5)
    draws = 10_000
    counts = np.bincount([sample_tuple(vol, 3, 2, rng).label for _ in range(draws)], minlength=6)
    sigma = math.sqrt(draws * (1 / 6) * (5 / 6))
    worst_dev = float(np.max(np.abs(counts - draws / 6)) / sigma)
    ok = failures == 0 and worst_dev <= 3
    report(5, ok, f"{cases} permutations round-tripped, {failures} failures; label counts {counts.tolist()}, "
                  f"max deviation {worst_dev:.2f} sigma")
    assert ok


def test_criterion_6_head_numerics(report):
    worst_loss = 0.0
    for n in range(2, 7):
        k = math.factorial(n)
        loss = task_loss(torch.zeros(5, k, dtype=torch.float64), torch.arange(5) % k).item()
        worst_loss = max(worst_loss, abs(loss - math.log(k)))
    gen = torch.Generator().manual_seed(6)
    worst_grad = 0.0
    for _ in range(10):
        logits = torch.randn(3, 6, dtype=torch.float64, generator=gen, requires_grad=True)
        labels = torch.randint(0, 6, (3,), generator=gen)
        (grad,) = torch.autograd.grad(task_loss(logits, labels), logits)
        with torch.no_grad():
            x = logits.detach().clone()
            fd = _central_diff(lambda: task_loss(x, labels), x)
        worst_grad = max(worst_grad, float((grad - fd).abs().max()))
    ok = worst_loss <= 1e-9 and worst_grad <= 1e-6
    report(6, ok, f"uniform-logit loss error {worst_loss:.1e} vs ln(n!), softmax gradient FD error {worst_grad:.1e}")
    assert ok


def test_criterion_7_synthetic_overfit(report, desk):
    manifest, vols, cfg, ckpt = desk["manifest"], desk["vols"], desk["cfg"], desk["ckpt"]
    train = [vols[e.source_id] for e in manifest.split("train").entries]
    held = [vols[e.source_id] for e in manifest.split("test").entries]
    train_acc = evaluate_pretext(ckpt.model, cfg, train, rounds=2)
    held_acc = evaluate_pretext(ckpt.model, cfg, held, rounds=4)
    logged = max(r["pretext_acc"] for r in ckpt.metrics)
    minutes = desk["pretrain_seconds"] / 60
    ok = (len(train) == 200 and cfg.resolved_speeds() == (-3, 1, 3) and train_acc >= 0.95
          and held_acc >= 0.5 and minutes <= 20)
    report(7, ok, f"{len(train)} train videos, {ckpt.epoch} epochs: train pretext acc {train_acc:.3f} "
                  f"(eval mode; best logged {logged:.3f}), held-out {held_acc:.3f}, {minutes:.1f} min")
    assert ok


def test_criterion_8_transfer(report, desk):
    manifest, vols, ssl = desk["manifest"], desk["vols"], desk["ckpt"]
    t0 = time.perf_counter()
    pairs = []
    for seed in range(PAIRED_RUNS):
        cfg = load_config(None, DESK_FINETUNE + [f"seed={seed}"])
        psp = evaluate_classification(finetune(ssl, manifest, cfg, vols), manifest, "test", vols)["accuracy"]
        scratch = evaluate_classification(finetune(None, manifest, cfg, vols), manifest, "test", vols)["accuracy"]
        pairs.append((psp, scratch))
    wins = sum(a > b for a, b in pairs)
    losses = sum(a < b for a, b in pairs)
    p = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
    minutes = (time.perf_counter() - t0 + desk["pretrain_seconds"]) / 60
    ok = p < 0.05 and minutes <= 60
    mean_psp = np.mean([a for a, _ in pairs])
    mean_scratch = np.mean([b for _, b in pairs])
    report(8, ok, f"{PAIRED_RUNS} paired runs: PSP wins {wins}, losses {losses}, sign-test p={p:.4f}; "
                  f"mean test acc PSP {mean_psp:.3f} vs scratch {mean_scratch:.3f}, {minutes:.1f} min")
    assert ok


def _exact_order(rows, query):
    def key(idx):
        dot = sum(int(a) * int(b) for a, b in zip(rows[idx], query))
        norm2 = sum(int(a) * int(a) for a in rows[idx])
        sign = (dot > 0) - (dot < 0)
        return (-sign * Fraction(dot * dot, norm2), idx)
    return sorted(range(len(rows)), key=key)


def test_criterion_9_retrieval(report, desk):
    rng = np.random.default_rng(9)
    mismatches = non_monotone = 0
    for _ in range(100):
        n, d = int(rng.integers(2, 30)), int(rng.integers(1, 6))
        rows = rng.integers(-3, 4, (n, d))
        rows[np.all(rows == 0, axis=1), 0] = 1
        for _ in range(n // 4):
            a, b = rng.integers(0, n, 2)
            rows[b] = rows[a] * int(rng.integers(1, 4))
        labels = rng.integers(0, 3, n).tolist()
        index = FeatureIndex.from_raw(rows.astype(float), [str(i) for i in range(n)], labels)
        query = rng.integers(-3, 4, d)
        if not query.any():
            query[0] = 1
        got = [int(sid) for sid, _, _ in query_topk(index, query.astype(float), n)]
        mismatches += got != _exact_order(rows, query)
        q = rng.integers(-3, 4, (5, d)).astype(float)
        q[np.all(q == 0, axis=1), 0] = 1
        acc = topk_accuracy(index, FeatureIndex.from_raw(q, list("abcde"), rng.integers(0, 3, 5).tolist()),
                            (1, 2, 5, 10, 20))
        vals = [acc[k] for k in sorted(acc)]
        non_monotone += vals != sorted(vals)

    manifest, vols, ckpt = desk["manifest"], desk["vols"], desk["ckpt"]
    curve = retrieval_eval(ckpt, manifest, vols)
    vals = [curve[k] for k in sorted(curve)]
    non_monotone += vals != sorted(vals)
    ok = mismatches == 0 and non_monotone == 0 and curve[1] > 0.25
    report(9, ok, f"100 galleries: {mismatches} oracle mismatches, {non_monotone} non-monotone curves; "
                  f"PSP-pretrained top-k {{{', '.join(f'{k}: {v:.2f}' for k, v in curve.items())}}} (chance 0.25)")
    assert ok


def test_criterion_10_determinism(report, tmp_path):
    manifest, videos = generate_synthetic(SyntheticConfig(num_videos=16, frames_per_video=40, tail_length=8,
                                                          seed=10, test_fraction=0.25))
    vols = {k: v.volume for k, v in videos.items()}
    cfg = load_config(None, ["arch=r3d", "width_scale=0.25", "m=8", "n=3", "epochs=3", "resize=[36,36]",
                             "crop_size=32", "lr=0.01", "checkpoint_every=1"])
    logs = []
    for run in ("a", "b"):
        pretrain(cfg, manifest, vols, out_dir=tmp_path / run)
        with open(tmp_path / run / "metrics.csv") as fh:
            logs.append([(float(r["loss"]), float(r["pretext_acc"])) for r in csv.DictReader(fh)])
    metric_diff = max(abs(x - y) for ra, rb in zip(*logs) for x, y in zip(ra, rb))
    same_length = len(logs[0]) == len(logs[1]) == 3

    ckpt = load_checkpoint(tmp_path / "a" / "checkpoint_last.npz")
    save_checkpoint(ckpt, tmp_path / "again.npz")
    back = load_checkpoint(tmp_path / "again.npz")
    held = [vols[e.source_id] for e in manifest.split("test").entries]
    x, _ = pretext_batch(held, cfg, np.random.default_rng(0), mode="eval")
    ckpt.model.eval()
    back.model.eval()
    with torch.no_grad():
        logits_equal = torch.equal(ckpt.model(x), back.model(x))
    ga = build_gallery(ckpt, manifest, vols)
    gb = build_gallery(back, manifest, vols)
    gallery_equal = np.array_equal(ga.features, gb.features)
    ok = same_length and metric_diff <= 1e-6 and logits_equal and gallery_equal
    report(10, ok, f"epoch metrics max diff {metric_diff:.1e} over 3 epochs; reloaded checkpoint logits bitwise "
                   f"equal {logits_equal}, gallery features bitwise equal {gallery_equal}")
    assert ok

