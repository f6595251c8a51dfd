"""
Ablation grids
==============

Any config key can become a grid axis. Here the playback-direction axis
compares forward-only, rewind-only and mixed speed sets, the same comparison
as the direction ablation, at toy scale. Expect noisy numbers; the point is
the table layout.
"""

from vidpace import SyntheticConfig, generate_synthetic, load_config
from vidpace.ablation import run_ablation
from vidpace.report import read_table

manifest, videos = generate_synthetic(SyntheticConfig(
    num_videos=48, frames_per_video=40, tail_length=8, seed=3, test_fraction=0.25))
volumes = {sid: v.volume for sid, v in videos.items()}

base = load_config(None, ["arch=r3d", "width_scale=0.25", "m=8", "n=3", "epochs=6",
                          "resize=[36,36]", "crop_size=32", "lr=0.02"])
grid = {"direction_mode": ["FF", "RW", "FF+RW"]}
rows = run_ablation(grid, base, manifest, volumes, out_dir="runs/demo_ablation", finetune_epochs=3)

for row in rows:
    print(f"{row['direction_mode']:6s} speeds {row['speeds']:10s} "
          f"pretext {row['pretext_acc']:.3f}  held-out {row['heldout_pretext_acc']:.3f}  "
          f"fine-tune {row['finetune_acc']:.3f}")

# the wide table has one column per cell, one row per metric
for r in read_table("runs/demo_ablation/results_wide.csv"):
    print(r)
