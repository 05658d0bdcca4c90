"""Toy-scale models: a masked autoencoder and a patch-grid part detector.

The autoencoder follows the usual recipe: images are split into
non-overlapping 16x16 patches, a transformer encoder sees only the visible
patches, mask tokens are padded in, and a lighter transformer decoder
predicts pixels for every patch. The decoder runs at inference too, where
the mask comes from the caller rather than from random sampling.

Learned position embeddings are stored for the training grid and
bilinearly interpolated for other image sizes, so the server can answer
requests at any grid the protocol sends.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def patchify(images: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(B, H, W, 3) float -> (B, N, patch_size**2 * 3), row-major patches."""
    b, h, w, c = images.shape
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, gh, patch_size, gw, patch_size, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, gh * gw, patch_size * patch_size * c)


def unpatchify(patches: torch.Tensor, grid_hw: tuple[int, int], patch_size: int) -> torch.Tensor:
    b, n, d = patches.shape
    gh, gw = grid_hw
    c = d // (patch_size * patch_size)
    x = patches.reshape(b, gh, gw, patch_size, patch_size, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, gh * patch_size, gw * patch_size, c)


def _block(dim: int, heads: int) -> nn.TransformerEncoderLayer:
    return nn.TransformerEncoderLayer(
        d_model=dim,
        nhead=heads,
        dim_feedforward=4 * dim,
        dropout=0.0,
        activation="gelu",
        batch_first=True,
        norm_first=True,
    )


class MaskedAutoencoder(nn.Module):
    def __init__(
        self,
        image_size: int = 96,
        patch_size: int = 16,
        enc_dim: int = 160,
        enc_depth: int = 4,
        enc_heads: int = 4,
        dec_dim: int = 96,
        dec_depth: int = 3,
        dec_heads: int = 4,
    ):
        super().__init__()
        if image_size % patch_size:
            raise ValueError("image_size must be a multiple of patch_size")
        self.arch = {
            "enc_dim": enc_dim,
            "enc_depth": enc_depth,
            "enc_heads": enc_heads,
            "dec_dim": dec_dim,
            "dec_depth": dec_depth,
            "dec_heads": dec_heads,
        }
        self.patch_size = patch_size
        self.grid = image_size // patch_size
        patch_dim = patch_size * patch_size * 3
        n = self.grid * self.grid

        self.patch_embed = nn.Linear(patch_dim, enc_dim)
        self.enc_pos = nn.Parameter(torch.zeros(1, n, enc_dim))
        self.encoder = nn.ModuleList(_block(enc_dim, enc_heads) for _ in range(enc_depth))
        self.enc_norm = nn.LayerNorm(enc_dim)

        self.dec_embed = nn.Linear(enc_dim, dec_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, dec_dim))
        self.dec_pos = nn.Parameter(torch.zeros(1, n, dec_dim))
        self.decoder = nn.ModuleList(_block(dec_dim, dec_heads) for _ in range(dec_depth))
        self.dec_norm = nn.LayerNorm(dec_dim)
        self.head = nn.Linear(dec_dim, patch_dim)

        nn.init.trunc_normal_(self.enc_pos, std=0.02)
        nn.init.trunc_normal_(self.dec_pos, std=0.02)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def _pos(self, pos: torch.Tensor, grid_hw: tuple[int, int]) -> torch.Tensor:
        if grid_hw == (self.grid, self.grid):
            return pos
        d = pos.shape[-1]
        p = pos.reshape(1, self.grid, self.grid, d).permute(0, 3, 1, 2)
        p = F.interpolate(p, size=grid_hw, mode="bilinear", align_corners=False)
        return p.permute(0, 2, 3, 1).reshape(1, grid_hw[0] * grid_hw[1], d)

    def forward(
        self, patches: torch.Tensor, masked: torch.Tensor, grid_hw: tuple[int, int]
    ) -> torch.Tensor:
        """Predict pixel values for every patch.

        patches: (B, N, patch_dim) in [0, 1]; masked: (B, N) bool with the
        same count per row (True = hidden from the encoder).
        """
        b, n, _ = patches.shape
        enc_pos = self._pos(self.enc_pos, grid_hw)
        dec_pos = self._pos(self.dec_pos, grid_hw)

        n_visible = int((~masked[0]).sum())
        dec_dim = self.mask_token.shape[-1]
        tokens = (self.mask_token + dec_pos).expand(b, n, dec_dim).clone()
        if n_visible > 0:
            visible_idx = (~masked).nonzero(as_tuple=False)[:, 1].reshape(b, n_visible)
            x = self.patch_embed(patches) + enc_pos
            x = torch.gather(x, 1, visible_idx.unsqueeze(-1).expand(-1, -1, x.shape[-1]))
            for block in self.encoder:
                x = block(x)
            x = self.dec_embed(self.enc_norm(x))
            x = x + torch.gather(dec_pos.expand(b, n, dec_dim), 1,
                                 visible_idx.unsqueeze(-1).expand(-1, -1, dec_dim))
            tokens = tokens.scatter(
                1, visible_idx.unsqueeze(-1).expand(-1, -1, dec_dim), x
            )
        for block in self.decoder:
            tokens = block(tokens)
        return self.head(self.dec_norm(tokens))

    @torch.no_grad()
    def fill_patches(self, pixels_float: torch.Tensor, masked_indices: list[int]) -> torch.Tensor:
        """Reconstruct one image's masked patches; returns (H, W, 3) in [0, 1]
        with only the masked patches replaced."""
        h, w, _ = pixels_float.shape
        gh, gw = h // self.patch_size, w // self.patch_size
        patches = patchify(pixels_float.unsqueeze(0), self.patch_size)
        masked = torch.zeros(1, gh * gw, dtype=torch.bool)
        masked[0, list(masked_indices)] = True
        pred = self.forward(patches, masked, (gh, gw))
        merged = torch.where(masked.unsqueeze(-1), pred, patches)
        return unpatchify(merged, (gh, gw), self.patch_size)[0].clamp(0.0, 1.0)


class PatchDetector(nn.Module):
    """Per-cell part classifier at stride 8; class 0 is background."""

    STRIDE = 8

    def __init__(self, num_labels: int):
        super().__init__()
        self.num_labels = num_labels
        self.net = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(64, 96, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(96, num_labels + 1, 1),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) float -> (B, num_labels + 1, H/8, W/8) logits."""
        return self.net(images)


def _cell_components(mask: list[list[bool]]) -> list[list[tuple[int, int]]]:
    """4-connected components over a boolean cell grid (plain BFS)."""
    rows, cols = len(mask), len(mask[0])
    seen = [[False] * cols for _ in range(rows)]
    components = []
    for r in range(rows):
        for c in range(cols):
            if not mask[r][c] or seen[r][c]:
                continue
            queue = [(r, c)]
            seen[r][c] = True
            cells = []
            while queue:
                cr, cc = queue.pop()
                cells.append((cr, cc))
                for nr, nc in ((cr - 1, cc), (cr + 1, cc), (cr, cc - 1), (cr, cc + 1)):
                    if 0 <= nr < rows and 0 <= nc < cols and mask[nr][nc] and not seen[nr][nc]:
                        seen[nr][nc] = True
                        queue.append((nr, nc))
            components.append(cells)
    return components


@torch.no_grad()
def detect_boxes(
    model: PatchDetector,
    pixels_float: torch.Tensor,
    vocabulary: list[str],
    threshold: float = 0.5,
) -> list[dict]:
    """Run the detector on one (H, W, 3) image in [0, 1].

    Returns protocol-shaped detections: grouped cells of each winning class
    become one box, scored by the mean class probability over the group.
    """
    logits = model(pixels_float.permute(2, 0, 1).unsqueeze(0))
    probs = torch.softmax(logits, dim=1)[0]  # (C, gh, gw)
    winners = probs.argmax(dim=0)
    stride = PatchDetector.STRIDE
    detections = []
    for class_index, label in enumerate(vocabulary, start=1):
        mask = (winners == class_index) & (probs[class_index] > threshold)
        if not mask.any():
            continue
        for cells in _cell_components(mask.tolist()):
            rows = [r for r, _ in cells]
            cols = [c for _, c in cells]
            score = float(torch.stack([probs[class_index, r, c] for r, c in cells]).mean())
            detections.append(
                {
                    "label": label,
                    "box": [
                        float(min(cols) * stride),
                        float(min(rows) * stride),
                        float((max(cols) + 1) * stride),
                        float((max(rows) + 1) * stride),
                    ],
                    "score": min(max(score, 0.0), 1.0),
                }
            )
    detections.sort(key=lambda d: (d["label"], d["box"][1], d["box"][0]))
    return detections
