"""Synthetic thermal-like frames: bright elliptical figures on textured, noisy background."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .evaluation import write_annotations
from .tensor import BoundingBox, save_pgm


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    n_train: int = 200
    n_test: int = 100
    frames_per_sequence: int = 50
    height: int = 180
    width: int = 240
    min_object_height: int = 20
    max_object_height: int = 60
    aspect: float = 0.5  # object width / height
    max_objects: int = 3
    noise: float = 6.0  # std of per-pixel noise, grey levels
    texture: float = 14.0  # std of the smooth background texture
    contrast: tuple[float, float] = (45.0, 85.0)
    n_poles: int = 3
    n_lines: int = 2


def _background(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    tex = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=5.0, mode="wrap")
    tex *= cfg.texture / max(tex.std(), 1e-12)
    img = 90.0 + tex
    # vertical and horizontal clutter: poles, kerbs, window edges
    for _ in range(rng.integers(0, cfg.n_poles + 1)):
        c = int(rng.integers(0, w - 4))
        width = int(rng.integers(2, 5))
        r0 = int(rng.integers(0, h // 2))
        r1 = int(rng.integers(r0 + h // 4, h + 1))
        img[r0:r1, c : c + width] += rng.uniform(-30.0, 40.0)
    for _ in range(rng.integers(0, cfg.n_lines + 1)):
        r = int(rng.integers(0, h - 3))
        img[r : r + int(rng.integers(1, 4)), :] += rng.uniform(-20.0, 20.0)
    return img


def ellipse_mask(box: BoundingBox, shape: tuple[int, int]) -> np.ndarray:
    """Pixels whose centres fall inside the ellipse inscribed in ``box``."""
    rows, cols = np.mgrid[0 : shape[0], 0 : shape[1]]
    cx, cy = box.center
    dy = (rows + 0.5 - cy) / (box.h / 2.0)
    dx = (cols + 0.5 - cx) / (box.w / 2.0)
    return dx * dx + dy * dy <= 1.0


def _place(rng, cfg: SynthConfig, boxes: list[BoundingBox]) -> BoundingBox | None:
    for _ in range(100):
        h = int(rng.integers(cfg.min_object_height, cfg.max_object_height + 1))
        w = max(2, int(round(h * cfg.aspect)))
        x = int(rng.integers(0, cfg.width - w + 1))
        y = int(rng.integers(0, cfg.height - h + 1))
        box = BoundingBox(x, y, w, h)
        # keep a gap so objects never touch
        if all(_separated(box, b, gap=4) for b in boxes):
            return box
    return None


def _separated(a: BoundingBox, b: BoundingBox, gap: float) -> bool:
    return (
        a.x + a.w + gap <= b.x
        or b.x + b.w + gap <= a.x
        or a.y + a.h + gap <= b.y
        or b.y + b.h + gap <= a.y
    )


def render_frame(rng: np.random.Generator, cfg: SynthConfig, n_objects: int | None = None):
    """One frame and its ground-truth boxes."""
    img = _background(rng, cfg)
    if n_objects is None:
        n_objects = int(rng.integers(0, cfg.max_objects + 1))
    boxes: list[BoundingBox] = []
    for _ in range(n_objects):
        box = _place(rng, cfg, boxes)
        if box is None:
            break
        mask = ellipse_mask(box, img.shape)
        # warmer head and torso, cooler legs
        rows = np.arange(img.shape[0])[:, None]
        shade = 1.0 - 0.35 * np.clip((rows + 0.5 - box.y) / box.h, 0.0, 1.0)
        img += mask * shade * rng.uniform(*cfg.contrast)
        boxes.append(box)
    if cfg.noise > 0:
        img += rng.normal(0.0, cfg.noise, img.shape)
    return np.clip(img, 0.0, 255.0), boxes


def generate(cfg: SynthConfig = SynthConfig()):
    """Yield ``(split, image_id, image, boxes)`` for every frame, deterministically."""
    rng = np.random.default_rng(cfg.seed)
    for split, count in (("train", cfg.n_train), ("test", cfg.n_test)):
        for i in range(count):
            seq, frame = divmod(i, cfg.frames_per_sequence)
            img, boxes = render_frame(rng, cfg)
            # quantize as the file would be
            img = np.rint(img)
            yield split, f"{split}/seq{seq:02d}/frame{frame:04d}.pgm", img, boxes


def write_dataset(out_dir, cfg: SynthConfig = SynthConfig()) -> dict[str, Path]:
    """Write frames as 8-bit PGM plus ``train.ann`` and ``test.ann``."""
    out_dir = Path(out_dir)
    ann: dict[str, dict[str, list[BoundingBox]]] = {"train": {}, "test": {}}
    for split, image_id, img, boxes in generate(cfg):
        path = out_dir / image_id
        path.parent.mkdir(parents=True, exist_ok=True)
        save_pgm(path, img, maxval=255)
        ann[split][image_id] = boxes
    paths = {}
    for split, entries in ann.items():
        paths[split] = out_dir / f"{split}.ann"
        write_annotations(paths[split], entries)
    return paths
