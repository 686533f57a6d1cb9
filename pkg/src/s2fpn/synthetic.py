"""Tiny synthetic segmentation corpora for smoke runs and overfit tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import write_pgm, write_ppm

# visually distinct base colors, one per class
_BASE_COLORS = np.array(
    [
        [200, 60, 60],
        [60, 200, 60],
        [60, 60, 200],
        [200, 200, 60],
        [60, 200, 200],
        [200, 60, 200],
        [230, 230, 230],
        [40, 40, 40],
    ],
    dtype=np.float64,
)


def make_sample(
    index: int, height: int, width: int, num_classes: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Banded label map (shifted per index) plus a rectangle, with image
    colors tied to the class id so a small net can overfit quickly."""
    rows = np.arange(height)[:, None]
    band = ((rows * num_classes) // height + index) % num_classes
    label = np.broadcast_to(band, (height, width)).copy()
    r0, c0 = (index * 7) % (height // 2), (index * 13) % (width // 2)
    rect_class = (index + 2) % num_classes
    label[r0 : r0 + height // 3, c0 : c0 + width // 3] = rect_class
    colors = _BASE_COLORS[label % len(_BASE_COLORS)]
    noise = rng.normal(0.0, 8.0, size=colors.shape)
    image = np.clip(colors + noise, 0, 255).astype(np.uint8)
    return image, label.astype(np.uint8)


def make_toy_corpus(
    root,
    n_train: int = 4,
    n_val: int = 2,
    height: int = 64,
    width: int = 128,
    num_classes: int = 5,
    seed: int = 0,
) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    names = {"train": [], "val": []}
    for i in range(n_train + n_val):
        split = "train" if i < n_train else "val"
        name = f"{split}_{i:03d}"
        image, label = make_sample(i, height, width, num_classes, rng)
        write_ppm(root / "images" / f"{name}.ppm", image)
        write_pgm(root / "labels" / f"{name}.pgm", label)
        names[split].append(name)
    for split, listed in names.items():
        if listed:
            (root / f"{split}.txt").write_text("\n".join(listed) + "\n")
    return root
