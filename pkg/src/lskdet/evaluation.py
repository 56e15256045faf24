"""Miss rate versus false positives per image, with PASCAL-style matching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pyramid import Detection
from .tensor import BoundingBox, iou

ANNOTATION_HEADER = "#lskt-ann v1"

TP, FP, IGNORED = 1, 0, -1


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    labels: list[int]  # per detection in ranked order: TP, FP or IGNORED
    order: list[int]  # indices into the input detections, ranked


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    fppi: float
    miss_rate: float
    tp: int
    fp: int
    fn: int


@dataclass
class EvalResult:
    curve: list[CurvePoint]
    tp: int
    fp: int
    fn: int
    n_images: int
    n_ground_truth: int
    report_threshold: float
    miss_at_ref: float = field(default=math.nan)
    ref_fppi: float = 0.1


def rank(dets: list[Detection]) -> list[int]:
    """Descending score; ties broken by box geometry so input order never matters."""
    return sorted(
        range(len(dets)),
        key=lambda i: (-dets[i].score, dets[i].box.y, dets[i].box.x, dets[i].box.h, dets[i].box.w, dets[i].scale),
    )


def match(
    dets: list[Detection],
    gts: list[BoundingBox],
    iou_min: float = 0.5,
    ignore: list[BoundingBox] = (),
) -> MatchResult:
    """Greedy one-to-one matching in score order.

    Each detection claims the unmatched ground truth with the highest IoU
    (at least ``iou_min``). A detection left unmatched that overlaps an
    ``ignore`` box by ``iou_min`` is neither a true nor a false positive.
    """
    order = rank(dets)
    taken = [False] * len(gts)
    labels = []
    for i in order:
        box = dets[i].box
        best, best_iou = -1, iou_min
        for g, gt in enumerate(gts):
            if taken[g]:
                continue
            v = iou(box, gt)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = g, v
        if best >= 0:
            taken[best] = True
            labels.append(TP)
        elif any(iou(box, ig) >= iou_min for ig in ignore):
            labels.append(IGNORED)
        else:
            labels.append(FP)
    tp = labels.count(TP)
    return MatchResult(tp, labels.count(FP), len(gts) - tp, labels, order)


def split_ignored(gts: list[BoundingBox], min_height: float) -> tuple[list[BoundingBox], list[BoundingBox]]:
    keep = [b for b in gts if b.h >= min_height]
    drop = [b for b in gts if b.h < min_height]
    return keep, drop


def miss_rate_at(curve: list[CurvePoint], fppi: float = 0.1) -> float:
    """Miss rate at ``fppi`` by linear interpolation in log(FPPI).

    Points are taken at decreasing thresholds. Below the first point with
    nonzero FPPI the curve is a step (log of zero is undefined); past the
    last point it stays flat. With no operating point at or below ``fppi``
    nothing can be kept and the miss rate is 1.
    """
    pts = sorted(curve, key=lambda p: (p.fppi, p.miss_rate))
    lo = [p for p in pts if p.fppi <= fppi]
    hi = [p for p in pts if p.fppi > fppi]
    if not lo:
        return 1.0
    # lowest miss at or below fppi; among equal misses the latest point along the sweep
    best_lo = min(lo, key=lambda p: (p.miss_rate, -p.fppi))
    if best_lo.fppi == fppi or not hi or best_lo.fppi == 0:
        return best_lo.miss_rate
    # first point past fppi along the sweep: lowest FPPI, and before any further hits
    p_hi = min(hi, key=lambda p: (p.fppi, -p.miss_rate))
    t = (math.log(fppi) - math.log(best_lo.fppi)) / (math.log(p_hi.fppi) - math.log(best_lo.fppi))
    return best_lo.miss_rate + t * (p_hi.miss_rate - best_lo.miss_rate)


def evaluate(
    detections: dict[str, list[Detection]],
    ground_truth: dict[str, list[BoundingBox]],
    iou_min: float = 0.5,
    min_height: float = 0.0,
    report_threshold: float = 0.0,
    ref_fppi: float = 0.1,
) -> EvalResult:
    """Sweep the score threshold over all distinct detection scores.

    ``ground_truth`` lists every image of the test set (images without
    objects map to an empty list) and fixes ``n_images``. Ground truths
    shorter than ``min_height`` are ignored: they are not counted as misses
    and detections on them are not false positives.
    """
    unknown = set(detections) - set(ground_truth)
    if unknown:
        raise ValueError(f"detections for images without annotations: {sorted(unknown)[:5]}")
    n_images = len(ground_truth)
    scored = []  # (score, label)
    n_gt = 0
    for image_id, gts in ground_truth.items():
        keep, drop = split_ignored(gts, min_height)
        n_gt += len(keep)
        dets = detections.get(image_id, [])
        res = match(dets, keep, iou_min, drop)
        scored.extend((dets[i].score, lab) for i, lab in zip(res.order, res.labels))
    if n_gt == 0:
        raise ValueError("no ground truth objects: miss rate undefined")
    scores = np.array([s for s, _ in scored], dtype=np.float64)
    labels = np.array([lab for _, lab in scored], dtype=int)
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    ctp = np.cumsum(labels == TP)
    cfp = np.cumsum(labels == FP)
    curve = []
    for k in range(len(scores)):
        # one point per distinct score: the last index of each tie group
        if k + 1 < len(scores) and scores[k + 1] == scores[k]:
            continue
        tp, fp = int(ctp[k]), int(cfp[k])
        curve.append(CurvePoint(float(scores[k]), fp / n_images, 1.0 - tp / n_gt, tp, fp, n_gt - tp))
    kept = scores >= report_threshold
    tp = int(np.sum(labels[kept] == TP))
    fp = int(np.sum(labels[kept] == FP))
    result = EvalResult(curve, tp, fp, n_gt - tp, n_images, n_gt, report_threshold, ref_fppi=ref_fppi)
    result.miss_at_ref = miss_rate_at(curve, ref_fppi)
    return result


def kfold(groups: list, k: int) -> list[tuple[list, list]]:
    """Split whole groups (e.g. sequences) into ``k`` held-out folds."""
    groups = list(groups)
    if k < 2:
        raise ValueError("k-fold needs k >= 2")
    if k > len(groups):
        raise ValueError(f"k={k} exceeds the number of groups ({len(groups)})")
    folds = np.array_split(np.arange(len(groups)), k)
    out = []
    for held in folds:
        held_set = set(held.tolist())
        train = [g for i, g in enumerate(groups) if i not in held_set]
        test = [groups[i] for i in held]
        out.append((train, test))
    return out


# --- files -------------------------------------------------------------------


def read_annotations(path) -> dict[str, list[BoundingBox]]:
    """Parse an annotation file; a line with only a path declares an empty image."""
    out: dict[str, list[BoundingBox]] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != ANNOTATION_HEADER:
        raise ValueError(f"{path}: missing '{ANNOTATION_HEADER}' header")
    for lineno, line in enumerate(lines[1:], 2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) == 1:
            out.setdefault(parts[0], [])
        elif len(parts) == 5:
            x, y, w, h = (float(v) for v in parts[1:])
            out.setdefault(parts[0], []).append(BoundingBox(x, y, w, h))
        else:
            raise ValueError(f"{path}:{lineno}: expected 'path' or 'path x y w h'")
    return out


def write_annotations(path, annotations: dict[str, list[BoundingBox]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ANNOTATION_HEADER + "\n")
        for image_id, boxes in annotations.items():
            if not boxes:
                fh.write(f"{image_id}\n")
            for b in boxes:
                fh.write(f"{image_id} {b.x:g} {b.y:g} {b.w:g} {b.h:g}\n")


def group_of(image_id: str) -> str:
    """Sequence key of an image: its parent directory."""
    return str(Path(image_id).parent)


def write_curve_csv(path, result: EvalResult) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold,fppi,miss_rate\n")
        for p in result.curve:
            fh.write(f"{p.threshold:.6f},{p.fppi:.6f},{p.miss_rate:.6f}\n")
        fh.write(f"# {summary(result)}\n")


def summary(result: EvalResult) -> str:
    return (
        f"miss_rate@fppi={result.ref_fppi:g}: {result.miss_at_ref:.4f} (log-linear interpolation); "
        f"at threshold {result.report_threshold:g}: tp={result.tp} fp={result.fp} fn={result.fn}; "
        f"images={result.n_images} objects={result.n_ground_truth}"
    )
