"""
Pretraining on synthetic moving squares
=======================================

A small R3D learns to sort clips by playback speed on rendered videos of a
square sliding across a 40x40 frame. A dim tail behind the square makes the
direction of time visible, so rewinds can be told apart from forward play.

This runs the reduced setting used by the test-suite; raise ``EPOCHS`` and
``VIDEOS`` to approach the full desk-scale experiment.
"""

import time

from vidpace import SyntheticConfig, generate_synthetic, load_config, pretrain
from vidpace.train import evaluate_pretext

EPOCHS = 8
VIDEOS = 60

manifest, videos = generate_synthetic(SyntheticConfig(
    num_videos=VIDEOS, frames_per_video=40, velocity_range=(1, 2), tail_length=8,
    seed=1, test_fraction=0.2))
volumes = {sid: v.volume for sid, v in videos.items()}
print(len(manifest.split("train")), "train videos,", len(manifest.split("test")), "held out")

cfg = load_config(None, [
    "arch=r3d", "width_scale=0.25", "m=8", "n=3", f"epochs={EPOCHS}",
    "resize=[36,36]", "crop_size=32", "lr=0.02", "lr_schedule=cosine", "dropout=0.0",
])
print("speeds", cfg.resolved_speeds(), "| clips per step", cfg.batch_clips)

t0 = time.time()
ckpt = pretrain(cfg, manifest, volumes)
for row in ckpt.metrics:
    print("epoch %2d  loss %.3f  acc %.3f" % (row["epoch"], row["loss"], row["pretext_acc"]))

held = [volumes[e.source_id] for e in manifest.split("test").entries]
print("held-out pretext accuracy %.3f (chance %.3f), %.0fs" % (
    evaluate_pretext(ckpt.model, cfg, held, rounds=4), 1 / 6, time.time() - t0))
