"""Multiscale detection: feature pyramid, score fusion, peak picking and NMS."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .detector import ScoreMap, prepare, score_map
from .model import Model
from .tensor import BoundingBox, iou

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float
    scale: float


@dataclass(frozen=True)
class FusedScores:
    """Per-pixel maximum over rescaled score maps.

    ``scores`` and ``valid`` live in the frame of the reference map (the
    largest one, scale ``ref_scale``); ``scale`` holds the winning scale and
    ``level`` the index of the winning map.
    """

    scores: np.ndarray
    valid: np.ndarray
    scale: np.ndarray
    level: np.ndarray
    ref_scale: float


def level_shape(shape: tuple[int, int], scale: float) -> tuple[int, int]:
    return max(1, int(round(shape[0] * scale))), max(1, int(round(shape[1] * scale)))


def resize(img: np.ndarray, scale: float) -> np.ndarray:
    """Bilinear resampling by ``scale`` with pixel-centre alignment."""
    img = np.asarray(img, dtype=np.float64)
    if scale == 1.0:
        return img.copy()
    rows, cols = level_shape(img.shape, scale)
    rr = (np.arange(rows) + 0.5) / scale - 0.5
    cc = (np.arange(cols) + 0.5) / scale - 0.5
    coords = np.meshgrid(rr, cc, indexing="ij")
    return ndimage.map_coordinates(img, coords, order=1, mode="nearest")


def build_pyramid(img: np.ndarray, model: Model) -> list[tuple[float, np.ndarray]]:
    """Features of the image resized to each model scale.

    Levels smaller than the detector are dropped.
    """
    m, n = model.detector_shape
    levels = []
    for s in model.scales:
        rows, cols = level_shape(img.shape, s)
        if rows < m or cols < n:
            log.warning("scale %.3f gives %dx%d, smaller than detector %dx%d; skipped", s, rows, cols, m, n)
            continue
        levels.append((s, model.features(resize(img, s))))
    return levels


def score_pyramid(img: np.ndarray, model: Model) -> list[tuple[ScoreMap, np.ndarray]]:
    """Score map and feature tensor for every pyramid level."""
    out = []
    for s, f in build_pyramid(img, model):
        out.append((score_map(f, prepare(model, f.shape[:2]), scale=s), f))
    return out


def _sample_axis(coords: np.ndarray, size: int):
    i0 = np.floor(coords).astype(int)
    frac = coords - i0
    inside = (coords >= 0) & (coords <= size - 1)
    i0 = np.clip(i0, 0, size - 1)
    i1 = np.clip(i0 + 1, 0, size - 1)
    return i0, i1, frac, inside


def _bilinear_grid(plane: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    r0, r1, fr, _ = _sample_axis(rows, plane.shape[0])
    c0, c1, fc, _ = _sample_axis(cols, plane.shape[1])
    fr = fr[:, None]
    top = plane[r0][:, c0] * (1 - fc) + plane[r0][:, c1] * fc
    bottom = plane[r1][:, c0] * (1 - fc) + plane[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def fuse_scores(maps: list[ScoreMap], center: bool = False) -> FusedScores:
    """Rescale every map to the largest one and take the per-pixel maximum.

    With ``center=True`` each map is sampled so that a fused pixel refers to
    the window centred on it rather than the window whose top-left corner it
    is; windows of different scales covering one object then compete at the
    same pixel.
    """
    if not maps:
        raise ValueError("fuse_scores needs at least one score map")
    ref = max(maps, key=lambda sm: sm.scores.size)
    shape = ref.scores.shape
    fused = np.full(shape, -np.inf)
    valid = np.zeros(shape, dtype=bool)
    level = np.zeros(shape, dtype=int)
    for k, sm in enumerate(maps):
        ratio = sm.scale / ref.scale
        oy, ox = (sm.window[0] // 2, sm.window[1] // 2) if center else (0, 0)
        rows = (np.arange(shape[0]) + 0.5) * ratio - 0.5 - oy
        cols = (np.arange(shape[1]) + 0.5) * ratio - 0.5 - ox
        finite = np.where(sm.valid, sm.scores, 0.0)
        values = _bilinear_grid(finite, rows, cols)
        # a sample is valid only if every neighbour with nonzero weight is valid
        ok = _bilinear_grid(sm.valid.astype(np.float64), rows, cols) >= 1.0 - 1e-9
        ok &= _sample_axis(rows, sm.scores.shape[0])[3][:, None]
        ok &= _sample_axis(cols, sm.scores.shape[1])[3][None, :]
        better = ok & (values > fused)
        fused[better] = values[better]
        valid |= ok
        level[better] = k
    scale = np.array([sm.scale for sm in maps])[level]
    return FusedScores(fused, valid, scale, level, ref.scale)


def local_maxima(scores: np.ndarray, valid: np.ndarray, threshold: float) -> np.ndarray:
    """(k, 2) row/col indices of strict 8-neighbourhood maxima above ``threshold``.

    Among equal neighbours the one earliest in raster order (top-left) wins.
    """
    s = np.where(valid, scores, -np.inf)
    padded = np.pad(s, 1, constant_values=-np.inf)
    rows, cols = s.shape
    keep = valid & (s > threshold)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            nb = padded[1 + dr : 1 + dr + rows, 1 + dc : 1 + dc + cols]
            before = dr < 0 or (dr == 0 and dc < 0)
            keep &= (s > nb) if before else (s >= nb)
    return np.argwhere(keep)


def nms(dets: list[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy non-maximum suppression; output sorted by descending score."""
    order = sorted(dets, key=lambda d: (-d.score, d.box.y, d.box.x, d.box.h, d.box.w))
    kept: list[Detection] = []
    for d in order:
        if all(iou(d.box, k.box) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def clamp_box(box: BoundingBox, height: int, width: int) -> BoundingBox:
    x0, y0 = max(box.x, 0.0), max(box.y, 0.0)
    x1, y1 = min(box.x + box.w, float(width)), min(box.y + box.h, float(height))
    return BoundingBox(x0, y0, x1 - x0, y1 - y0)


def detect(
    img: np.ndarray,
    model: Model,
    threshold: float | None = None,
    iou_threshold: float = 0.5,
    return_maps: bool = False,
):
    """Detect objects at every model scale.

    Returns detections sorted by descending score, and with
    ``return_maps=True`` also the per-level score maps and the fused scores.
    """
    img = np.asarray(img, dtype=np.float64)
    threshold = model.threshold if threshold is None else threshold
    maps = [sm for sm, _ in score_pyramid(img, model)]
    if not maps:
        return ([], maps, None) if return_maps else []
    fused = fuse_scores(maps, center=True)
    height, width = img.shape
    dets = []
    for r, c in local_maxima(fused.scores, fused.valid, threshold):
        sm = maps[fused.level[r, c]]
        s = sm.scale
        ratio = s / fused.ref_scale
        m, n = sm.window
        top = (r + 0.5) * ratio - 0.5 - m // 2
        left = (c + 0.5) * ratio - 0.5 - n // 2
        box = clamp_box(BoundingBox(left / s, top / s, n / s, m / s), height, width)
        dets.append(Detection(box, float(fused.scores[r, c]), s))
    dets = nms(dets, iou_threshold)
    return (dets, maps, fused) if return_maps else dets


def format_detection(image_id: str, det: Detection) -> str:
    b = det.box
    return f"{image_id} {b.x:.3f} {b.y:.3f} {b.w:.3f} {b.h:.3f} {det.score:.6f} {det.scale:.4f}"


def write_detections(stream, image_id: str, dets: list[Detection]) -> None:
    for d in dets:
        stream.write(format_detection(image_id, d) + "\n")


def read_detections(path) -> dict[str, list[Detection]]:
    """Parse ``image_id x y w h score scale`` lines grouped by image id."""
    out: dict[str, list[Detection]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            x, y, w, h, score, scale = (float(v) for v in parts[1:])
            out.setdefault(parts[0], []).append(Detection(BoundingBox(x, y, w, h), score, scale))
    return out
