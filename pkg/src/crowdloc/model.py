"""The assembled localizer: encoder, context blocks, FPN, scoring head.

Images of any size work; the forward pads to a multiple of the patch
size, scores the padded canvas, and crops back. Checkpoints are named
tensor tables with a flat key=value sidecar describing the architecture,
so a file can be loaded without knowing the config in advance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .config import load_config, save_config
from .dcb import DilatedConvBlock
from .decoder import Fpn, SegHead
from .encoder import PATCH, StageConfig, SwinEncoder
from .nn import Module
from .tensor import load_tensor_table, save_tensor_table

__all__ = ["ModelConfig", "CrowdLocalizer", "save_checkpoint", "load_checkpoint"]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters (shapes only, no training knobs)."""

    in_channels: int = 3
    base_channels: int = 128
    depths: tuple[int, ...] = (2, 2, 18, 2)
    heads: tuple[int, ...] = (4, 8, 16, 32)
    window: int = 7
    img_h: int = 512
    img_w: int = 1024
    lateral_dim: int = 256
    dcb_rates: tuple[int, int] = (2, 3)
    dcb_stages: tuple[int, ...] = (3, 4)
    use_dcb: bool = True

    @staticmethod
    def toy(img=64, use_dcb=True):
        """Desk-scale config: trains in minutes on a CPU."""
        return ModelConfig(
            base_channels=32,
            depths=(1, 1, 2, 1),
            heads=(2, 4, 8, 16),
            window=4,
            img_h=img,
            img_w=img,
            lateral_dim=64,
            use_dcb=use_dcb,
        )

    def to_flat(self):
        return {
            "model.in_channels": self.in_channels,
            "model.base_channels": self.base_channels,
            "model.depths": list(self.depths),
            "model.heads": list(self.heads),
            "model.window": self.window,
            "model.img_h": self.img_h,
            "model.img_w": self.img_w,
            "model.lateral_dim": self.lateral_dim,
            "dcb.rates": list(self.dcb_rates),
            "dcb.stages": list(self.dcb_stages),
            "dcb.enabled": self.use_dcb,
        }

    @staticmethod
    def from_flat(cfg):
        preset = cfg.get("model.preset", "full")
        if preset == "toy":
            base = ModelConfig.toy()
        elif preset == "full":
            base = ModelConfig()
        else:
            raise ValueError(f"unknown model.preset {preset!r}")
        get = lambda key, fallback: cfg.get(key, fallback)
        return ModelConfig(
            in_channels=get("model.in_channels", base.in_channels),
            base_channels=get("model.base_channels", base.base_channels),
            depths=tuple(get("model.depths", base.depths)),
            heads=tuple(get("model.heads", base.heads)),
            window=get("model.window", base.window),
            img_h=get("model.img_h", base.img_h),
            img_w=get("model.img_w", base.img_w),
            lateral_dim=get("model.lateral_dim", base.lateral_dim),
            dcb_rates=tuple(get("dcb.rates", base.dcb_rates)),
            dcb_stages=tuple(get("dcb.stages", base.dcb_stages)),
            use_dcb=get("dcb.enabled", base.use_dcb),
        )


class CrowdLocalizer(Module):
    """End-to-end image -> per-pixel head-likelihood score map."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        stages = [
            StageConfig(
                depth=cfg.depths[i],
                heads=cfg.heads[i],
                window=cfg.window,
                channels=cfg.base_channels * 2**i,
            )
            for i in range(4)
        ]
        context = {}
        if cfg.use_dcb:
            for s in cfg.dcb_stages:
                context[s] = DilatedConvBlock(
                    cfg.base_channels * 2 ** (s - 1), rng, rates=cfg.dcb_rates
                )
        self.encoder = SwinEncoder(
            stages, cfg.in_channels, cfg.img_h, cfg.img_w, rng, context_blocks=context
        )
        self.fpn = Fpn(
            [s.channels for s in stages], rng, lateral_dim=cfg.lateral_dim
        )
        self.head = SegHead(cfg.lateral_dim, rng)

    def forward(self, image):
        n, c, h, w = image.shape
        pad_h = (PATCH - h % PATCH) % PATCH
        pad_w = (PATCH - w % PATCH) % PATCH
        if pad_h or pad_w:
            image = T.pad(image, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)))
        grids = self.encoder(image)
        fused = self.fpn(grids)
        score = self.head(fused)
        if pad_h or pad_w:
            score = score[:, :, :h, :w]
        return score


def save_checkpoint(path, model, extras=None):
    """Write model weights (+ optional extra tensors) and a .cfg sidecar.

    Extra entries (optimizer state, iteration counters) go in the same
    table under their own prefixes; the sidecar records the architecture
    so load_checkpoint can rebuild the model unaided.
    """
    table = {f"model.{k}": v for k, v in model.state_dict().items()}
    for key, value in (extras or {}).items():
        table[key] = np.asarray(value, dtype=np.float32)
    save_tensor_table(path, table)
    save_config(f"{path}.cfg", model.cfg.to_flat())


def load_checkpoint(path, rng=None):
    """Rebuild the model from a checkpoint; returns (model, extras)."""
    table = load_tensor_table(path)
    cfg = ModelConfig.from_flat(load_config(f"{path}.cfg"))
    rng = rng if rng is not None else np.random.default_rng(0)
    model = CrowdLocalizer(cfg, rng)
    state = {}
    extras = {}
    for key, value in table.items():
        if key.startswith("model."):
            state[key[len("model."):]] = value
        else:
            extras[key] = value
    model.load_state_dict(state)
    return model, extras
