"""
Fine-tuning and clip retrieval
==============================

The pretrained backbone initializes a 4-way motion-direction classifier.
The same features also drive nearest-neighbour retrieval: test clips query a
gallery of training clips by cosine distance. At this size a single run is
noisy; the acceptance suite repeats the comparison over ten seeds.
"""

from vidpace import (
    SyntheticConfig, emit_report, finetune, generate_synthetic, load_config, pretrain, retrieval_eval,
)
from vidpace.train import evaluate_classification

manifest, videos = generate_synthetic(SyntheticConfig(
    num_videos=60, frames_per_video=40, tail_length=8, seed=1, test_fraction=0.2))
volumes = {sid: v.volume for sid, v in videos.items()}
common = ["arch=r3d", "width_scale=0.25", "m=8", "resize=[36,36]", "crop_size=32"]

ssl = pretrain(load_config(None, common + ["epochs=12", "lr=0.02", "lr_schedule=cosine", "dropout=0.0"]), manifest, volumes)

ft_cfg = load_config(None, common + ["epochs=5", "lr=0.01"])
results = {}
for name, init in (("psp", ssl), ("scratch", None)):
    model = finetune(init, manifest, ft_cfg, volumes)
    acc = evaluate_classification(model, manifest, "test", volumes)["accuracy"]
    print(f"{name:8s} fine-tuned test accuracy {acc:.3f}")
    results[name] = retrieval_eval(model, manifest, volumes, ks=[1, 5, 10, 20])

for name, curve in results.items():
    print(name, {k: round(v, 3) for k, v in curve.items()})

# one CSV plus one plot with a curve per model
print(emit_report(results, "runs/demo_retrieval"))
