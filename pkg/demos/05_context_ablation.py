"""What the dilated context blocks buy, and a cautionary tale.

Three short runs on the same data, same seed:

  1. context blocks on,  lr 1e-3   (the toy default)
  2. context blocks off, lr 1e-3
  3. context blocks off, lr 3e-4

Run 2 usually dies: with a mean-squared loss behind a sigmoid, the
gradient carries a factor p*(1-p), so once the hot start pushes scores
toward zero everywhere the model stops getting a learning signal and
settles for predicting background (the loss plateaus near the
foreground fraction). The batch norm inside the context blocks keeps
run 1 out of that trap at the same rate, and run 3 shows the plain
model is fine too once the rate is gentler. Takeaway: at this scale the
blocks buy robustness to the schedule more than raw accuracy.

About three minutes of CPU time.
"""

import numpy as np

from crowdloc.data import SyntheticConfig, generate_scene, split_ids
from crowdloc.model import CrowdLocalizer, ModelConfig
from crowdloc.train import TrainConfig, evaluate, threshold_sweep, train

data_cfg = SyntheticConfig(height=48, width=48, count_range=(4, 12), seed=21)
scenes = [generate_scene(data_cfg, i) for i in range(120)]
train_idx, val_idx = split_ids(list(range(120)), seed=21)
train_set = [scenes[i] for i in train_idx]
val_set = [scenes[i] for i in val_idx]

ITERS = 500


def run(use_dcb, lr):
    model = CrowdLocalizer(
        ModelConfig.toy(img=48, use_dcb=use_dcb), np.random.default_rng(0)
    )
    cfg = TrainConfig.toy(total_iters=ITERS, seed=0)
    cfg = TrainConfig.from_flat({**cfg.to_flat(), "train.base_lr": lr,
                                 "train.dcb_lr": lr / 10.0})
    result = train(model, train_set, cfg)
    sweep = threshold_sweep(model, val_set)
    loc, cnt = evaluate(model, val_set, sweep.best_f1_threshold)
    tail_loss = float(result.losses[-50:].mean())
    return loc.f1, cnt.mae, tail_loss


print(f"{len(train_set)} train scenes, {len(val_set)} val scenes, "
      f"{ITERS} iterations per run\n")
print("   context  lr      val F1   val MAE  mean loss (last 50)")
rows = [
    ("on ", True, 1e-3),
    ("off", False, 1e-3),
    ("off", False, 3e-4),
]
for label, use_dcb, lr in rows:
    f1, mae, tail = run(use_dcb, lr)
    note = "  <- saturation collapse" if f1 < 0.05 else ""
    print(f"   {label}      {lr:g}   {f1:.4f}   {mae:.2f}     {tail:.4f}{note}")

print()
print("a collapsed run's loss sits near the average foreground fraction")
print("of the masks; it is predicting 'no heads anywhere' with")
print("confidence. if you hit this on real data, lower the rate or put")
print("normalization between the encoder and the head.")
