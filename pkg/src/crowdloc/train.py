"""Training loop, AdamW with linear warmup, evaluation, threshold sweep.

The model trains against binary instance masks with plain MSE. Two
parameter groups exist: the dilated context blocks run at one tenth of
the main learning rate. Every random draw in an iteration comes from a
generator seeded by (run seed, iteration number), so a run is
bit-reproducible and a resumed run continues the same trajectory.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import augment, crop_sample, render_instance_mask
from .instances import binarize, connected_components, extract_instances
from .metrics import (
    LocalizationMetrics,
    counting_metrics,
    f1_from_pr,
    match_points,
)
from .model import load_checkpoint, save_checkpoint
from .tensor import Tensor, mean, no_grad

__all__ = [
    "DEFAULT_GRID",
    "TrainConfig",
    "TrainResult",
    "SweepResult",
    "mse_loss",
    "lr_at",
    "init_adamw_state",
    "adamw_step",
    "AdamW",
    "param_groups",
    "train",
    "save_training_checkpoint",
    "load_training_checkpoint",
    "predict_scores",
    "evaluate_scores",
    "evaluate",
    "threshold_sweep",
]

DEFAULT_GRID = tuple(round(0.30 + 0.02 * i, 2) for i in range(11))

DCB_PREFIX = "encoder.context."


@dataclass(frozen=True)
class TrainConfig:
    """Optimization knobs; architecture lives in ModelConfig."""

    base_lr: float = 0.6e-5
    dcb_lr: float = 0.6e-6
    warmup_iters: int = 1500
    batch_size: int = 2
    grad_accum: int = 1
    total_iters: int = 300
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    checkpoint_every: int = 0  # 0 means final checkpoint only
    threshold_grid: tuple[float, ...] = DEFAULT_GRID

    @staticmethod
    def toy(total_iters=1500, seed=0):
        """Settings that converge from scratch on small synthetic scenes.

        The full-scale rates assume a pretrained backbone and hundreds
        of thousands of iterations; training a fresh network in minutes
        needs a much hotter schedule. The one-to-ten ratio between the
        context-block rate and the main rate is kept.
        """
        return TrainConfig(
            base_lr=1e-3,
            dcb_lr=1e-4,
            warmup_iters=100,
            batch_size=2,
            total_iters=total_iters,
            seed=seed,
        )

    @staticmethod
    def full_preset():
        """The full-scale schedule: batch 8, the long haul."""
        return TrainConfig(batch_size=8, total_iters=100_000)

    def to_flat(self):
        return {
            "train.base_lr": self.base_lr,
            "train.dcb_lr": self.dcb_lr,
            "train.warmup_iters": self.warmup_iters,
            "train.batch_size": self.batch_size,
            "train.grad_accum": self.grad_accum,
            "train.total_iters": self.total_iters,
            "train.weight_decay": self.weight_decay,
            "train.betas": list(self.betas),
            "train.eps": self.eps,
            "train.seed": self.seed,
            "train.augment": self.augment,
            "train.checkpoint_every": self.checkpoint_every,
            "train.threshold_grid": list(self.threshold_grid),
        }

    @staticmethod
    def from_flat(cfg, defaults=None):
        if defaults is not None:
            base = defaults
        else:
            preset = cfg.get("train.preset", "full")
            if preset == "toy":
                base = TrainConfig.toy()
            elif preset == "full":
                base = TrainConfig()
            else:
                raise ValueError(f"unknown train.preset {preset!r}")
        get = lambda key, fallback: cfg.get(key, fallback)
        return TrainConfig(
            base_lr=float(get("train.base_lr", base.base_lr)),
            dcb_lr=float(get("train.dcb_lr", base.dcb_lr)),
            warmup_iters=get("train.warmup_iters", base.warmup_iters),
            batch_size=get("train.batch_size", base.batch_size),
            grad_accum=get("train.grad_accum", base.grad_accum),
            total_iters=get("train.total_iters", base.total_iters),
            weight_decay=float(get("train.weight_decay", base.weight_decay)),
            betas=tuple(get("train.betas", base.betas)),
            eps=float(get("train.eps", base.eps)),
            seed=get("train.seed", base.seed),
            augment=get("train.augment", base.augment),
            checkpoint_every=get("train.checkpoint_every", base.checkpoint_every),
            threshold_grid=tuple(get("train.threshold_grid", base.threshold_grid)),
        )


@dataclass
class TrainResult:
    losses: np.ndarray  # one entry per iteration of this call
    start_iter: int
    end_iter: int
    seconds: float


def mse_loss(score, label):
    """Mean over all elements of the squared difference."""
    if score.shape != label.shape:
        raise ValueError(f"shape mismatch: score {score.shape} vs label {label.shape}")
    diff = score - label
    return mean(diff * diff)


def lr_at(iteration, base_lr, warmup_iters):
    """Linear warmup to base_lr, then flat; no decay."""
    if warmup_iters <= 0 or iteration >= warmup_iters:
        return base_lr
    return base_lr * (iteration / warmup_iters)


def init_adamw_state(params):
    """Zeroed first/second moment accumulators and a step counter."""
    return {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adamw_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8,
               weight_decay=0.0):
    """One update, in place: decoupled decay first, then Adam.

    ``params`` and ``grads`` map names to float32 arrays; ``state`` is
    from init_adamw_state and is advanced by one step.
    """
    state["t"] += 1
    t = state["t"]
    b1, b2 = betas
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if weight_decay:
            p -= np.float32(lr * weight_decay) * p
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p -= np.float32(lr) * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    """AdamW over named parameter groups with per-group learning rates.

    Each group keeps its own step counter; both advance once per step so
    bias correction is identical across groups.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.groups = groups  # name -> {"params": {name: Tensor}, "base_lr": f}
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = {
            gname: init_adamw_state(
                {k: p.data for k, p in group["params"].items()}
            )
            for gname, group in groups.items()
        }

    def zero_grad(self):
        for group in self.groups.values():
            for p in group["params"].values():
                p.zero_grad()

    def step(self, lrs):
        """Apply one update; ``lrs`` maps group name to learning rate."""
        for gname, group in self.groups.items():
            params = {}
            grads = {}
            for pname, p in group["params"].items():
                params[pname] = p.data
                grads[pname] = (
                    p.grad if p.grad is not None else np.zeros_like(p.data)
                )
            adamw_step(
                params,
                grads,
                self.state[gname],
                lrs[gname],
                betas=self.betas,
                eps=self.eps,
                weight_decay=self.weight_decay,
            )

    def state_extras(self):
        """Flatten moments and counters for the checkpoint table."""
        extras = {}
        for gname, state in self.state.items():
            extras[f"opt.{gname}.t"] = np.float32(state["t"])
            for pname, arr in state["m"].items():
                extras[f"opt.{gname}.m.{pname}"] = arr
            for pname, arr in state["v"].items():
                extras[f"opt.{gname}.v.{pname}"] = arr
        return extras

    def load_extras(self, extras):
        for gname, state in self.state.items():
            state["t"] = int(extras[f"opt.{gname}.t"])
            for pname in state["m"]:
                state["m"][pname] = extras[f"opt.{gname}.m.{pname}"].copy()
                state["v"][pname] = extras[f"opt.{gname}.v.{pname}"].copy()


def param_groups(model):
    """Split parameters into the context-block group and everything else.

    Returns {"main": ..., "dcb": ...}; the two groups partition
    named_parameters exactly (audited by tests).
    """
    main, dcb = {}, {}
    for name, p in model.named_parameters():
        (dcb if name.startswith(DCB_PREFIX) else main)[name] = p
    return {
        "main": {"params": main},
        "dcb": {"params": dcb},
    }


def _fit_to(sample, h, w):
    if sample.image.shape[1:] == (h, w):
        return sample
    return crop_sample(sample, 0, 0, h, w)


def _build_batch(samples, rng, batch_size, h, w, do_augment):
    idx = rng.integers(0, len(samples), size=batch_size)
    images = np.empty((batch_size, 3, h, w), dtype=np.float32)
    masks = np.empty((batch_size, 1, h, w), dtype=np.float32)
    for row, i in enumerate(idx):
        sample = samples[int(i)]
        if do_augment:
            sample = augment(sample, rng, h, w)
        else:
            sample = _fit_to(sample, h, w)
        images[row] = sample.image
        masks[row] = render_instance_mask(sample)
    return images, masks


def train(model, samples, cfg, start_iter=0, optimizer=None,
          checkpoint_path=None, on_iteration=None):
    """Run iterations [start_iter, cfg.total_iters) and return the curve.

    Passing the optimizer and start_iter from a loaded checkpoint
    continues the original trajectory exactly: iteration i always draws
    its batch from a generator seeded by (cfg.seed, i).
    """
    if not samples:
        raise ValueError("training set is empty")
    opt = optimizer if optimizer is not None else AdamW(
        param_groups(model),
        betas=cfg.betas,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    h, w = model.cfg.img_h, model.cfg.img_w
    losses = []
    began = time.monotonic()
    model.train()
    for it in range(start_iter, cfg.total_iters):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, it]))
        opt.zero_grad()
        loss_value = 0.0
        for _ in range(cfg.grad_accum):
            images, labels = _build_batch(
                samples, rng, cfg.batch_size, h, w, cfg.augment
            )
            loss = mse_loss(model(Tensor(images)), Tensor(labels))
            if cfg.grad_accum > 1:
                loss = loss * (1.0 / cfg.grad_accum)
            loss.backward()
            loss_value += loss.item()
        if not np.isfinite(loss_value):
            raise FloatingPointError(
                f"loss became {loss_value!r} at iteration {it}; "
                "lower the learning rate or check the data"
            )
        opt.step({
            "main": lr_at(it, cfg.base_lr, cfg.warmup_iters),
            "dcb": lr_at(it, cfg.dcb_lr, cfg.warmup_iters),
        })
        losses.append(loss_value)
        if on_iteration is not None:
            on_iteration(it, loss_value)
        if (
            checkpoint_path is not None
            and cfg.checkpoint_every
            and (it + 1) % cfg.checkpoint_every == 0
        ):
            save_training_checkpoint(checkpoint_path, model, opt, it + 1)
    model.eval()
    if checkpoint_path is not None:
        save_training_checkpoint(checkpoint_path, model, opt, cfg.total_iters)
    return TrainResult(
        losses=np.asarray(losses, dtype=np.float64),
        start_iter=start_iter,
        end_iter=cfg.total_iters,
        seconds=time.monotonic() - began,
    )


def save_training_checkpoint(path, model, opt, iteration):
    extras = opt.state_extras()
    extras["train.iter"] = np.float32(iteration)
    save_checkpoint(path, model, extras)


def load_training_checkpoint(path, cfg, rng=None):
    """Rebuild (model, optimizer, start_iter) from a training checkpoint."""
    model, extras = load_checkpoint(path, rng=rng)
    opt = AdamW(
        param_groups(model),
        betas=cfg.betas,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    if "train.iter" not in extras:
        raise ValueError(f"{path} has no optimizer state; cannot resume")
    opt.load_extras(extras)
    return model, opt, int(extras["train.iter"])


def predict_scores(model, samples):
    """Score map per sample, sized like the sample's image."""
    model.eval()
    scores = []
    with no_grad():
        for sample in samples:
            out = model(Tensor(sample.image[None]))
            scores.append(out.data[0, 0].copy())
    return scores


def evaluate_scores(scores, samples, threshold):
    """Metrics for precomputed score maps at one threshold."""
    tp = fp = fn = 0
    gt_counts, pred_counts = [], []
    for score, sample in zip(scores, samples):
        labels = connected_components(binarize(score, threshold))
        centroids = [inst.centroid for inst in extract_instances(labels)]
        result = match_points(centroids, sample.heads)
        tp += result.tp
        fp += len(result.fp)
        fn += len(result.fn)
        gt_counts.append(len(sample.heads))
        pred_counts.append(len(centroids))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    loc = LocalizationMetrics(precision, recall, f1_from_pr(precision, recall))
    return loc, counting_metrics(gt_counts, pred_counts)


def evaluate(model, samples, threshold):
    """Full pipeline on every sample, aggregated over the set."""
    return evaluate_scores(predict_scores(model, samples), samples, threshold)


@dataclass(frozen=True)
class SweepResult:
    rows: tuple  # ((threshold, f1, mae), ...) in grid order
    best_f1_threshold: float
    best_mae_threshold: float

    def to_csv(self):
        lines = ["threshold,f1,mae"]
        for t, f1, mae in self.rows:
            lines.append(f"{t:.2f},{f1:.6f},{mae:.6f}")
        return "\n".join(lines) + "\n"


def threshold_sweep(model, samples, grid=DEFAULT_GRID):
    """Evaluate one score pass at every threshold in the grid.

    Score maps are computed once and rethresholded, which matches
    per-threshold evaluate() exactly because the forward is
    deterministic.
    """
    grid = tuple(grid)
    if not grid:
        raise ValueError("threshold grid is empty")
    for t in grid:
        if not 0.0 < t < 1.0:
            raise ValueError(f"threshold {t} outside (0, 1)")
    scores = predict_scores(model, samples)
    rows = []
    for t in grid:
        loc, cnt = evaluate_scores(scores, samples, t)
        rows.append((t, loc.f1, cnt.mae))
    best_f1 = max(rows, key=lambda r: r[1])[0]
    best_mae = min(rows, key=lambda r: r[2])[0]
    return SweepResult(tuple(rows), best_f1, best_mae)
