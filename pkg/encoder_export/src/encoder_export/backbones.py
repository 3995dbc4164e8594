"""Frozen image backbones: pixels in, (grid, features) arrays out.

Every backbone fixes its own spatial grid side and feature depth; the
exporter trusts those declarations and checks each batch against them.
Backbones must be deterministic in eval mode: same pixels, same bytes.
"""

from __future__ import annotations

import warnings

import numpy as np


class BackboneError(RuntimeError):
    pass


class BlockStatsBackbone:
    """Tiny dependency-free backbone for desk-scale fixtures.

    Splits the image into a 4x4 grid and computes 8 statistics per block:
    per-channel mean and standard deviation, plus mean absolute horizontal
    and vertical gray-level differences. No resize; blocks follow the image's
    own integer partition, so inputs just need >= 4 pixels per axis.
    """

    name = "block-stats"
    grid_side = 4
    feature_dim = 8

    def preprocessing(self) -> dict:
        return {
            "resize": None,
            "scale": "1/255 when integer input",
            "grid": self.grid_side,
            "stats": ["mean_r", "mean_g", "mean_b", "std_r", "std_g",
                      "std_b", "grad_x", "grad_y"],
            "grid_order": "row-major",
        }

    def encode(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch)
        if batch.ndim != 4 or batch.shape[3] != 3:
            raise BackboneError(f"expected (B, H, W, 3), got {batch.shape}")
        if min(batch.shape[1], batch.shape[2]) < self.grid_side:
            raise BackboneError(
                f"image smaller than the {self.grid_side}x{self.grid_side} grid"
            )
        pix = batch.astype(np.float32)
        if np.issubdtype(batch.dtype, np.integer):
            pix /= 255.0
        gray = pix.mean(axis=3)

        n = self.grid_side
        out = np.empty((len(pix), n * n, self.feature_dim), dtype=np.float32)
        rows = np.array_split(np.arange(pix.shape[1]), n)
        cols = np.array_split(np.arange(pix.shape[2]), n)
        for bi, r in enumerate(rows):
            for bj, c in enumerate(cols):
                block = pix[:, r[0]:r[-1] + 1, c[0]:c[-1] + 1, :]
                gblock = gray[:, r[0]:r[-1] + 1, c[0]:c[-1] + 1]
                cell = out[:, bi * n + bj, :]
                # stats accumulate in f64 so a uniform block is exact
                cell[:, 0:3] = block.mean(axis=(1, 2), dtype=np.float64)
                cell[:, 3:6] = block.std(axis=(1, 2), dtype=np.float64)
                cell[:, 6] = (np.abs(np.diff(gblock, axis=2))
                              .mean(axis=(1, 2), dtype=np.float64)
                              if gblock.shape[2] > 1 else 0.0)
                cell[:, 7] = (np.abs(np.diff(gblock, axis=1))
                              .mean(axis=(1, 2), dtype=np.float64)
                              if gblock.shape[1] > 1 else 0.0)
        return out


class InceptionV3Backbone:
    """Inception-V3 with the classifier removed: 8x8 grid of 2048 features.

    Needs torch + torchvision. ``weights="pretrained"`` loads the published
    ImageNet weights (requires download access); ``weights="none"`` seeds a
    reproducible random initialization instead, which keeps the full pipeline
    runnable offline. ``weights="auto"`` tries pretrained, then falls back.
    The sidecar records which one was used.
    """

    name = "inception_v3"
    grid_side = 8
    feature_dim = 2048
    RESIZE = 299
    MEAN = [0.485, 0.456, 0.406]
    STD = [0.229, 0.224, 0.225]

    def __init__(self, weights: str = "auto", seed: int = 0):
        try:
            import torch
            from torchvision import models
            from torchvision.models.feature_extraction import \
                create_feature_extractor
        except ImportError as exc:
            raise BackboneError(
                "inception_v3 needs torch and torchvision installed"
            ) from exc
        self._torch = torch
        if weights not in ("auto", "pretrained", "none"):
            raise BackboneError(f"unknown weights mode {weights!r}")

        self.weights_used = "imagenet"
        net = None
        if weights in ("auto", "pretrained"):
            try:
                net = models.inception_v3(
                    weights=models.Inception_V3_Weights.IMAGENET1K_V1)
            except Exception as exc:
                if weights == "pretrained":
                    raise BackboneError(
                        f"could not load pretrained weights: {exc}") from exc
        if net is None:
            torch.manual_seed(seed)
            net = models.inception_v3(weights=None, init_weights=True)
            self.weights_used = f"random-seeded-{seed}"
        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        # torchvision warns that eval-mode tracing sees fewer nodes; the
        # eval graph is exactly what we want here
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            self._extract = create_feature_extractor(
                net, return_nodes={"Mixed_7c": "features"})

    def preprocessing(self) -> dict:
        return {
            "resize": [self.RESIZE, self.RESIZE],
            "interpolation": "bilinear",
            "scale": "1/255",
            "normalize_mean": self.MEAN,
            "normalize_std": self.STD,
            "weights": self.weights_used,
            "grid_order": "row-major",
        }

    def encode(self, batch: np.ndarray) -> np.ndarray:
        torch = self._torch
        batch = np.asarray(batch)
        if batch.ndim != 4 or batch.shape[3] != 3:
            raise BackboneError(f"expected (B, H, W, 3), got {batch.shape}")
        pix = batch.astype(np.float32)
        if np.issubdtype(batch.dtype, np.integer):
            pix /= 255.0
        with torch.no_grad():
            x = torch.from_numpy(pix).permute(0, 3, 1, 2)
            x = torch.nn.functional.interpolate(
                x, size=(self.RESIZE, self.RESIZE), mode="bilinear",
                align_corners=False)
            mean = torch.tensor(self.MEAN).view(1, 3, 1, 1)
            std = torch.tensor(self.STD).view(1, 3, 1, 1)
            fmap = self._extract((x - mean) / std)["features"]
            b, c, h, w = fmap.shape
        if (h, w) != (self.grid_side, self.grid_side) or c != self.feature_dim:
            raise BackboneError(
                f"backbone produced {h}x{w}x{c}, declared "
                f"{self.grid_side}x{self.grid_side}x{self.feature_dim}"
            )
        return (fmap.reshape(b, c, h * w).permute(0, 2, 1)
                .numpy().astype(np.float32))


BACKBONES = {
    BlockStatsBackbone.name: BlockStatsBackbone,
    InceptionV3Backbone.name: InceptionV3Backbone,
}


def get_backbone(name: str, **kwargs):
    if name not in BACKBONES:
        known = ", ".join(sorted(BACKBONES))
        raise ValueError(f"unknown backbone {name!r} (available: {known})")
    return BACKBONES[name](**kwargs)
