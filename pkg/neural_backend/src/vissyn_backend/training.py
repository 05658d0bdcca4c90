"""Toy-scale training for the reconstruction and detection models.

The reconstructor trains on syntactically correct scenes only, with random
patch masking at the configured ratio and mean-squared-error loss on the
masked patches. Held-out reconstruction error is measured with fixed masks
at regular checkpoints; a run whose error explodes past ten times its
starting value is aborted as diverged.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import Scene, corpus_vocabulary, load_scenes
from .models import MaskedAutoencoder, PatchDetector, patchify


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    mask_ratio: float = 0.5
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.95)
    cosine_schedule: bool = True
    flip_augment: bool = True
    holdout_fraction: float = 0.1
    eval_every: int = 0  # 0: five evaluation points across the run
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass(frozen=True)
class DetectorConfig:
    epochs: int = 12
    batch_size: int = 32
    learning_rate: float = 2e-3
    blur_augment: bool = True
    background_weight: float = 0.25
    seed: int = 0
    # reconstructor checkpoint; when set, training also sees each scene's
    # reconstructed counterpart (all part patches repainted by the
    # autoencoder), which the detector must read during pipeline runs
    reconstructor_path: str | None = None


def _correct_scene_pixels(scenes: list[Scene], require_all_correct: bool) -> np.ndarray:
    if require_all_correct:
        wrong = [s.scene_id for s in scenes if s.correctness != "correct"]
        if wrong:
            raise ValueError(
                f"refusing to train: corpus contains non-correct scenes {wrong[:3]}"
                f"{'...' if len(wrong) > 3 else ''}; reconstruction training uses "
                f"correct scenes only"
            )
        keep = scenes
    else:
        keep = [s for s in scenes if s.correctness == "correct"]
    if not keep:
        raise ValueError("no correct scenes to train on")
    pixels = np.stack([s.load_pixels() for s in keep])
    sizes = {p.shape for p in pixels}
    if len(sizes) > 1:
        raise ValueError(f"corpus mixes image sizes: {sorted(sizes)}")
    return pixels


def _random_masks(rng: torch.Generator, batch: int, n: int, count: int) -> torch.Tensor:
    scores = torch.rand(batch, n, generator=rng)
    order = scores.argsort(dim=1)
    masked = torch.zeros(batch, n, dtype=torch.bool)
    masked.scatter_(1, order[:, :count], True)
    return masked


def _masked_mse(model: MaskedAutoencoder, patches, masked, grid_hw) -> torch.Tensor:
    pred = model(patches, masked, grid_hw)
    diff = (pred - patches) ** 2
    per_patch = diff.mean(dim=-1)
    return per_patch[masked].mean()


def train_reconstructor(
    corpus_dir: str | Path, cfg: TrainingConfig, out_path: str | Path
) -> tuple[Path, list[tuple[int, float]]]:
    """Train the masked autoencoder; returns (checkpoint path, eval history).

    History holds (epoch, held-out masked MSE) pairs, evaluated before
    training starts, every few epochs, and after the final epoch.
    """
    torch.manual_seed(cfg.seed)
    scenes = load_scenes(corpus_dir)
    pixels = _correct_scene_pixels(scenes, require_all_correct=True)
    images = torch.from_numpy(pixels).float() / 255.0
    h, w = images.shape[1:3]
    if h != w or h % 16:
        raise ValueError(f"expected square images with 16px-aligned size, got {w}x{h}")

    n_holdout = max(1, math.ceil(cfg.holdout_fraction * len(images)))
    if len(images) <= n_holdout:
        raise ValueError("corpus too small for a held-out split")
    train_images = images[:-n_holdout]
    held_images = images[-n_holdout:]

    model = MaskedAutoencoder(image_size=h, patch_size=16)
    grid = h // 16
    n_patches = grid * grid
    mask_count = max(1, round(cfg.mask_ratio * n_patches))

    eval_rng = torch.Generator().manual_seed(cfg.seed + 1)
    held_patches = patchify(held_images, 16)
    held_masks = _random_masks(eval_rng, len(held_images), n_patches, mask_count)

    def held_out_mse() -> float:
        model.eval()
        with torch.no_grad():
            value = float(_masked_mse(model, held_patches, held_masks, (grid, grid)))
        model.train()
        return value

    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        betas=tuple(cfg.betas),
    )
    scheduler = (
        torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs)
        if cfg.cosine_schedule
        else None
    )
    eval_every = cfg.eval_every or max(1, cfg.epochs // 5)
    rng = torch.Generator().manual_seed(cfg.seed + 2)

    history: list[tuple[int, float]] = [(0, held_out_mse())]
    for epoch in range(1, cfg.epochs + 1):
        order = torch.randperm(len(train_images), generator=rng)
        for start in range(0, len(order), cfg.batch_size):
            batch = train_images[order[start : start + cfg.batch_size]]
            if cfg.flip_augment and torch.rand((), generator=rng) < 0.5:
                batch = torch.flip(batch, dims=[2])
            patches = patchify(batch, 16)
            masked = _random_masks(rng, len(batch), n_patches, mask_count)
            loss = _masked_mse(model, patches, masked, (grid, grid))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        if scheduler is not None:
            scheduler.step()
        if epoch % eval_every == 0 or epoch == cfg.epochs:
            history.append((epoch, held_out_mse()))
            value = history[-1][1]
            if not math.isfinite(value) or value > 10.0 * history[0][1]:
                raise TrainingDiverged(
                    f"held-out MSE {value:.6f} at epoch {epoch} is non-finite or exceeds "
                    f"10x the initial {history[0][1]:.6f}; history: {history}"
                )

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "kind": "mae",
            "state": model.state_dict(),
            "image_size": h,
            "patch_size": 16,
            "arch": model.arch,
            "history": history,
            "config": dataclasses.asdict(cfg),
        },
        out_path,
    )
    return out_path, history


def load_reconstructor(path: str | Path) -> tuple[MaskedAutoencoder, dict]:
    doc = torch.load(path, map_location="cpu", weights_only=True)
    if doc.get("kind") != "mae":
        raise ValueError(f"{path} is not a reconstructor checkpoint")
    model = MaskedAutoencoder(
        image_size=doc["image_size"], patch_size=doc["patch_size"], **doc.get("arch", {})
    )
    model.load_state_dict(doc["state"])
    model.eval()
    return model, doc


def _detector_targets(
    scenes: list[Scene], vocabulary: list[str], grid_hw: tuple[int, int]
) -> torch.Tensor:
    stride = PatchDetector.STRIDE
    index_of = {label: i + 1 for i, label in enumerate(vocabulary)}
    targets = torch.zeros(len(scenes), *grid_hw, dtype=torch.long)
    for s_idx, scene in enumerate(scenes):
        for label, (x0, y0, x1, y1) in scene.parts:
            for row in range(grid_hw[0]):
                cy = (row + 0.5) * stride
                if not y0 <= cy < y1:
                    continue
                for col in range(grid_hw[1]):
                    cx = (col + 0.5) * stride
                    if x0 <= cx < x1:
                        targets[s_idx, row, col] = index_of[label]
    return targets


def _blur(images: torch.Tensor) -> torch.Tensor:
    # cheap stand-in for reconstruction blur: two passes of 3x3 averaging
    x = images.permute(0, 3, 1, 2)
    for _ in range(2):
        x = F.avg_pool2d(x, kernel_size=3, stride=1, padding=1)
    return x.permute(0, 2, 3, 1)


def _cell_tight_box(box: tuple, stride: int) -> tuple | None:
    """The box a per-cell classifier would report: bounds of the stride-
    aligned cells whose centers fall inside the part box."""
    x0, y0, x1, y1 = box
    cols = [c for c in range(int(x0 // stride), int(x1 // stride) + 1) if x0 <= (c + 0.5) * stride < x1]
    rows = [r for r in range(int(y0 // stride), int(y1 // stride) + 1) if y0 <= (r + 0.5) * stride < y1]
    if not cols or not rows:
        return None
    return (cols[0] * stride, rows[0] * stride, (cols[-1] + 1) * stride, (rows[-1] + 1) * stride)


def _patches_for(box: tuple, image_hw: tuple[int, int], patch_size: int) -> list[int]:
    h, w = image_hw
    grid_cols = w // patch_size
    x0, y0, x1, y1 = box
    out = []
    for row in range(int(y0 // patch_size), -(-int(y1) // patch_size)):
        for col in range(int(x0 // patch_size), -(-int(x1) // patch_size)):
            if 0 <= row < h // patch_size and 0 <= col < grid_cols:
                out.append(row * grid_cols + col)
    return out


def _reconstructed_counterparts(
    scenes: list[Scene], images: torch.Tensor, reconstructor_path: str
) -> torch.Tensor:
    """Emulate what the detector sees during pipeline runs: each part's
    cell-tight box is masked and repainted in sequence, chaining outputs,
    exactly like part-based masking with this detector's box granularity."""
    mae, meta = load_reconstructor(reconstructor_path)
    p = int(meta["patch_size"])
    h, w = images.shape[1:3]
    stride = PatchDetector.STRIDE
    out = images.clone()
    for i, scene in enumerate(scenes):
        working = images[i]
        parts = sorted(scene.parts, key=lambda lb: ((lb[1][1] + lb[1][3]) / 2, (lb[1][0] + lb[1][2]) / 2))
        for _label, box in parts:
            tight = _cell_tight_box(box, stride)
            if tight is None:
                continue
            indices = _patches_for(tight, (h, w), p)
            if indices:
                working = mae.fill_patches(working, indices)
        out[i] = working
    return out


def train_detector(
    corpus_dir: str | Path, cfg: DetectorConfig, out_path: str | Path
) -> Path:
    """Train the per-cell part classifier on correct scenes."""
    torch.manual_seed(cfg.seed)
    scenes = [s for s in load_scenes(corpus_dir) if s.correctness == "correct"]
    if not scenes:
        raise ValueError("no correct scenes to train the detector on")
    vocabulary = corpus_vocabulary(corpus_dir)
    pixels = _correct_scene_pixels(scenes, require_all_correct=False)
    images = torch.from_numpy(pixels).float() / 255.0
    h, w = images.shape[1:3]
    grid_hw = (h // PatchDetector.STRIDE, w // PatchDetector.STRIDE)
    targets = _detector_targets(scenes, vocabulary, grid_hw)
    if cfg.reconstructor_path:
        reconstructed = _reconstructed_counterparts(scenes, images, cfg.reconstructor_path)
        images = torch.cat([images, reconstructed])
        targets = torch.cat([targets, targets])

    model = PatchDetector(num_labels=len(vocabulary))
    weights = torch.ones(len(vocabulary) + 1)
    weights[0] = cfg.background_weight
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    rng = torch.Generator().manual_seed(cfg.seed + 3)

    for _epoch in range(cfg.epochs):
        order = torch.randperm(len(images), generator=rng)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = images[idx]
            if cfg.blur_augment and torch.rand((), generator=rng) < 0.5:
                batch = _blur(batch)
            logits = model(batch.permute(0, 3, 1, 2))
            loss = F.cross_entropy(logits, targets[idx], weight=weights)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "kind": "detector",
            "state": model.state_dict(),
            "vocabulary": vocabulary,
            "stride": PatchDetector.STRIDE,
            "score_threshold": 0.5,
            "config": dataclasses.asdict(cfg),
        },
        out_path,
    )
    return out_path


def load_detector(path: str | Path) -> tuple[PatchDetector, dict]:
    doc = torch.load(path, map_location="cpu", weights_only=True)
    if doc.get("kind") != "detector":
        raise ValueError(f"{path} is not a detector checkpoint")
    model = PatchDetector(num_labels=len(doc["vocabulary"]))
    model.load_state_dict(doc["state"])
    model.eval()
    return model, doc
