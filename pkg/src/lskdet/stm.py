"""Linear support tensor machine.

Training solves the hinge-loss dual over unit-norm feature tensors,

    max  sum(beta) - 1/2 sum_ij beta_i beta_j y_i y_j <F_i, F_j>
    s.t. 0 <= beta <= C,  sum(y * beta) = 0,

with an SMO solver (maximal-violating pair, second-order working set
selection), then folds the support tensors into one template
``W = sum_j y_j beta_j F_j``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .kernel import gram, normalize
from .lsk import LskParams
from .model import Model
from .pca import PcaBasis
from .pyramid import build_pyramid, local_maxima, score_pyramid
from .tensor import BoundingBox, iou

log = logging.getLogger(__name__)

_TAU = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    C: float = 1.0
    tolerance: float = 1e-6
    max_iter: int = 1_000_000

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be > 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")


@dataclass
class DualSolution:
    beta: np.ndarray
    bias: float
    objective: float
    n_iter: int
    converged: bool
    gap: float
    history: list[float] = field(default_factory=list, repr=False)


@dataclass
class TrainingSet:
    """Unit-norm tensors of shape (N, m, n, d) with labels in {+1, -1}."""

    tensors: np.ndarray
    labels: np.ndarray
    skipped: int = 0

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.tensors.ndim != 4 or self.tensors.shape[0] != self.labels.shape[0]:
            raise ValueError("tensors must be (N, m, n, d) with one label each")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.tensors.shape[1:]

    def __len__(self) -> int:
        return self.labels.shape[0]

    def concat(self, other: "TrainingSet") -> "TrainingSet":
        return TrainingSet(
            np.concatenate([self.tensors, other.tensors]),
            np.concatenate([self.labels, other.labels]),
            self.skipped + other.skipped,
        )

    def subset(self, idx) -> "TrainingSet":
        return TrainingSet(self.tensors[idx], self.labels[idx])


def solve_dual(kernel: np.ndarray, y: np.ndarray, cfg: SolverConfig = SolverConfig()) -> DualSolution:
    """SMO on a precomputed kernel matrix.

    Stops when the maximal KKT violation ``m(beta) - M(beta)`` drops below
    ``cfg.tolerance``. The bias is the mean of ``-y_i G_i`` over free support
    vectors, or the midpoint of the violation interval if there are none.
    """
    y = np.asarray(y, dtype=np.float64)
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("training data must contain both classes")
    if not np.all(np.abs(y) == 1):
        raise ValueError("labels must be +1 or -1")
    K = np.asarray(kernel, dtype=np.float64)
    if not np.all(np.isfinite(K)):
        raise ValueError("kernel matrix has non-finite entries")
    n = y.shape[0]
    C = cfg.C
    Q = K * np.outer(y, y)
    diag = np.diag(Q).copy()
    beta = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 b'Qb - e'b
    history = [0.0]
    converged = False
    gap = np.inf
    it = 0
    while it < cfg.max_iter:
        v = -y * grad
        up = ((y > 0) & (beta < C)) | ((y < 0) & (beta > 0))
        low = ((y < 0) & (beta < C)) | ((y > 0) & (beta > 0))
        v_up = np.where(up, v, -np.inf)
        i = int(np.argmax(v_up))
        gmax = v_up[i]
        gmin = np.min(np.where(low, v, np.inf))
        gap = gmax - gmin
        if gap < cfg.tolerance:
            converged = True
            break
        # second-order choice of j among violating partners of i
        b_it = gmax - v
        cand = low & (b_it > 0)
        a_it = diag[i] + diag - 2.0 * y[i] * y * Q[i]
        a_it = np.where(a_it > 0, a_it, _TAU)
        score = np.where(cand, -(b_it * b_it) / a_it, np.inf)
        j = int(np.argmin(score))

        old_i, old_j = beta[i], beta[j]
        Qi, Qj = Q[i], Q[j]
        quad = max(diag[i] + diag[j] - 2.0 * y[i] * y[j] * Qi[j], _TAU)
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j
            bi, bj = old_i + delta, old_j + delta
            if diff > 0:
                if bj < 0:
                    bj, bi = 0.0, diff
            elif bi < 0:
                bi, bj = 0.0, -diff
            if diff > 0:
                if bi > C:
                    bi, bj = C, C - diff
            elif bj > C:
                bj, bi = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j
            bi, bj = old_i - delta, old_j + delta
            if total > C:
                if bi > C:
                    bi, bj = C, total - C
            elif bj < 0:
                bj, bi = 0.0, total
            if total > C:
                if bj > C:
                    bj, bi = C, total - C
            elif bi < 0:
                bi, bj = 0.0, total
        beta[i], beta[j] = bi, bj
        grad += Qi * (bi - old_i) + Qj * (bj - old_j)
        history.append(float(-0.5 * beta @ (grad - 1.0)))
        it += 1

    v = -y * grad
    free = (beta > 0) & (beta < C)
    if np.any(free):
        bias = float(np.mean(v[free]))
    else:
        up = ((y > 0) & (beta < C)) | ((y < 0) & (beta > 0))
        low = ((y < 0) & (beta < C)) | ((y > 0) & (beta > 0))
        hi = np.max(v[up]) if np.any(up) else np.inf
        lo = np.min(v[low]) if np.any(low) else -np.inf
        bias = float(0.5 * (hi + lo)) if np.isfinite(hi) and np.isfinite(lo) else float(hi if np.isfinite(hi) else lo)
    objective = float(-0.5 * beta @ (grad - 1.0))
    if not converged:
        log.warning("SMO stopped after %d iterations with KKT gap %.3g", it, gap)
    return DualSolution(beta, bias, objective, it, converged, float(gap), history)


def dual_objective(kernel: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    q = np.asarray(kernel) * np.outer(y, y)
    return float(np.sum(beta) - 0.5 * beta @ q @ beta)


def train(
    data: TrainingSet,
    cfg: SolverConfig = SolverConfig(),
    pca: PcaBasis | None = None,
    lsk_params: LskParams = LskParams(),
    scales=(1.0,),
    threshold: float = 0.0,
) -> Model:
    """Fit the max-margin template on a training set of unit tensors."""
    if len(data) == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(data.tensors)):
        raise ValueError("training tensors contain non-finite values")
    unit = np.stack([normalize(t) for t in data.tensors])
    sol = solve_dual(gram(unit), data.labels, cfg)
    support = sol.beta > 0
    coef = data.labels[support] * sol.beta[support]
    template = np.tensordot(coef, unit[support], axes=1)
    if pca is None:
        pca = PcaBasis.identity(data.shape[2])
    model = Model(
        template=template,
        bias=sol.bias,
        pca=pca,
        lsk_params=lsk_params,
        scales=tuple(scales),
        threshold=threshold,
        dual_coef=coef,
        support=unit[support],
        solution=sol,
    )
    log.info(
        "trained on %d examples: %d support tensors (%.1f%%), %d SMO iterations, gap %.2g",
        len(data), int(support.sum()), 100.0 * support.mean(), sol.n_iter, sol.gap,
    )
    return model


def decision(model: Model, f: np.ndarray) -> float:
    """Template form: ``<W, f/||f||> + b``."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != model.template.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs template {model.template.shape}")
    return float(np.vdot(model.template, normalize(f)) + model.bias)


def decision_dual(model: Model, f: np.ndarray) -> float:
    """Kernel form: ``sum_j y_j beta_j mcs(F_j, f) + b`` over the support tensors."""
    if model.support is None:
        raise ValueError("model carries no support tensors")
    f = np.asarray(f, dtype=np.float64)
    if f.shape != model.template.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs template {model.template.shape}")
    unit = normalize(f).ravel()
    k = model.support.reshape(model.support.shape[0], -1) @ unit
    return float(model.dual_coef @ k + model.bias)


def hinge_loss(model: Model, data: TrainingSet) -> float:
    margins = np.array([y * decision(model, t) for t, y in zip(data.tensors, data.labels)])
    return float(np.sum(np.maximum(0.0, 1.0 - margins)))


# --- training data from annotated images -------------------------------------


def _nearest_level(levels, scale_wanted: float) -> int:
    return int(np.argmin([abs(np.log(s / scale_wanted)) for s, _ in levels]))


def window_box(r: int, c: int, scale: float, window: tuple[int, int]) -> BoundingBox:
    """Original-image box of the level window with top-left (r, c)."""
    m, n = window
    return BoundingBox(c / scale, r / scale, n / scale, m / scale)


def build_training_set(
    frames,
    template_model: Model,
    negatives_per_image: int = 10,
    negative_max_iou: float = 0.2,
    rng=None,
) -> TrainingSet:
    """Positive and random negative windows from annotated frames.

    ``frames`` yields ``(image, boxes)``. ``template_model`` supplies the
    detector shape, scales and feature parameters (its template is unused).
    A positive is the detector-sized window centred on the ground-truth
    centre, taken at the pyramid level whose scale best maps the box height
    onto the detector height. Negatives are random windows at random levels
    whose boxes overlap every ground truth by less than ``negative_max_iou``.
    """
    rng = np.random.default_rng(rng)
    m, n = template_model.detector_shape
    tensors, labels = [], []
    skipped = 0

    def add(t, label):
        nonlocal skipped
        norm = np.sqrt(np.sum(t * t))
        if not norm > 0:
            skipped += 1
            return
        tensors.append(t / norm)
        labels.append(label)

    for img, boxes in frames:
        height, width = img.shape
        for b in boxes:
            if not b.inside(height, width):
                raise ValueError(f"annotation {b} outside image {width}x{height}")
        levels = build_pyramid(img, template_model)
        if not levels:
            continue
        for b in boxes:
            k = _nearest_level(levels, m / b.h)
            s, f = levels[k]
            cx, cy = b.center
            r = int(round(cy * s - m / 2.0))
            c = int(round(cx * s - n / 2.0))
            r = min(max(r, 0), f.shape[0] - m)
            c = min(max(c, 0), f.shape[1] - n)
            add(f[r : r + m, c : c + n], 1.0)
        taken = 0
        for _ in range(50 * negatives_per_image):
            if taken >= negatives_per_image:
                break
            s, f = levels[rng.integers(len(levels))]
            r = int(rng.integers(f.shape[0] - m + 1))
            c = int(rng.integers(f.shape[1] - n + 1))
            box = window_box(r, c, s, (m, n))
            if any(iou(box, b) >= negative_max_iou for b in boxes):
                continue
            add(f[r : r + m, c : c + n], -1.0)
            taken += 1
    if skipped:
        log.warning("skipped %d zero-norm windows", skipped)
    if not tensors:
        return TrainingSet(np.zeros((0, m, n, template_model.n_channels)), np.zeros(0), skipped)
    return TrainingSet(np.stack(tensors), np.array(labels), skipped)


def hard_negative_mine(
    model: Model,
    frames,
    budget: int,
    score_threshold: float = -1.0,
    ignore_iou: float = 0.3,
) -> TrainingSet:
    """Collect the highest-scoring false alarms of ``model``.

    ``frames`` yields ``(image, boxes)``; windows overlapping a ground truth
    by ``ignore_iou`` or more are never mined. Candidates are per-level
    local maxima of the score maps above ``score_threshold``; the ``budget``
    best are returned, highest score first.
    """
    m, n = model.detector_shape
    found = []  # (score, order, tensor)
    for img, boxes in frames:
        for sm, f in score_pyramid(img, model):
            for r, c in local_maxima(sm.scores, sm.valid, score_threshold):
                box = window_box(r, c, sm.scale, (m, n))
                if any(iou(box, b) >= ignore_iou for b in boxes):
                    continue
                found.append((float(sm.scores[r, c]), len(found), f[r : r + m, c : c + n]))
    found.sort(key=lambda item: (-item[0], item[1]))
    found = found[:budget]
    if not found:
        return TrainingSet(np.zeros((0, m, n, model.n_channels)), np.zeros(0))
    tensors = np.stack([normalize(t) for _, _, t in found])
    return TrainingSet(tensors, -np.ones(len(found)))


def cross_validate_C(data: TrainingSet, grid=(0.1, 1.0, 10.0), folds: int = 3, rng=None) -> float:
    """Pick C by k-fold classification accuracy; ties go to the smaller C."""
    rng = np.random.default_rng(rng)
    idx = rng.permutation(len(data))
    parts = np.array_split(idx, folds)
    unit = data.tensors.reshape(len(data), -1)
    K = unit @ unit.T
    best, best_acc = grid[0], -1.0
    for C in grid:
        correct = 0
        for k in range(folds):
            test = parts[k]
            tr = np.concatenate([parts[j] for j in range(folds) if j != k])
            sol = solve_dual(K[np.ix_(tr, tr)], data.labels[tr], SolverConfig(C=C))
            scores = K[np.ix_(test, tr)] @ (sol.beta * data.labels[tr]) + sol.bias
            correct += int(np.sum(np.sign(scores) == data.labels[test]))
        acc = correct / len(data)
        log.info("C=%g: cross-validated accuracy %.4f", C, acc)
        if acc > best_acc:
            best, best_acc = C, acc
    return best


# --- two-round protocol ------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    detector_shape: tuple[int, int] = (32, 16)
    scales: tuple[float, ...] = (1.0,)
    lsk_params: LskParams = LskParams()
    energy_target: float = 0.8
    n_components: int | None = None  # overrides the energy rule when set
    C: float | None = 1.0  # None selects C by 3-fold cross-validation
    C_grid: tuple[float, ...] = (0.1, 1.0, 10.0)
    negatives_per_image: int = 10
    mining_budget: int | None = None  # default: twice the positive count
    mining_threshold: float = -1.0
    threshold: float = 0.0
    pca_samples: int = 100_000
    seed: int = 0


@dataclass
class TrainReport:
    initial: Model
    final: Model
    n_positive: int
    n_negative: int
    n_hard: int
    C: float


def train_detector(frames, cfg: TrainConfig = TrainConfig()) -> TrainReport:
    """PCA fit, initial model on random negatives, hard mining, retrain.

    ``frames`` is a list of ``(image, boxes)``.
    """
    from .pca import fit_pca, sample_descriptors

    frames = list(frames)
    rng = np.random.default_rng(cfg.seed)
    samples = sample_descriptors((img for img, _ in frames), cfg.lsk_params, cfg.pca_samples, rng)
    pca = fit_pca(samples, cfg.energy_target)
    if cfg.n_components is not None and cfg.n_components != pca.n_components:
        pca = _truncate_pca(samples, cfg.n_components)
    log.info("PCA keeps %d of %d channels (%.1f%% energy)", pca.n_components, pca.n_input, 100 * pca.energy_fraction)

    m, n = cfg.detector_shape
    shell = Model(
        template=np.zeros((m, n, pca.n_components)),
        bias=0.0,
        pca=pca,
        lsk_params=cfg.lsk_params,
        scales=cfg.scales,
        threshold=cfg.threshold,
    )
    data = build_training_set(frames, shell, cfg.negatives_per_image, rng=rng)
    n_pos = int(np.sum(data.labels > 0))
    C = cfg.C if cfg.C is not None else cross_validate_C(data, cfg.C_grid, rng=rng)
    solver = SolverConfig(C=C)
    initial = train(data, solver, pca, cfg.lsk_params, cfg.scales, cfg.threshold)

    budget = cfg.mining_budget if cfg.mining_budget is not None else 2 * n_pos
    hard = hard_negative_mine(initial, frames, budget, cfg.mining_threshold)
    log.info("mined %d hard negatives", len(hard))
    final = train(data.concat(hard), solver, pca, cfg.lsk_params, cfg.scales, cfg.threshold)
    return TrainReport(initial, final, n_pos, len(data) - n_pos, len(hard), C)


def _truncate_pca(samples: np.ndarray, d: int) -> PcaBasis:
    from .pca import fit_pca

    full = fit_pca(samples, energy_target=1.0)
    if d > full.n_input:
        raise ValueError(f"cannot keep {d} components of {full.n_input}")
    # recompute with all components to get the total variance
    x = samples - samples.mean(axis=0)
    total = float(np.trace(np.cov(x, rowvar=False, bias=True)))
    lam = full.eigenvalues[:d]
    return PcaBasis(full.components[:, :d], lam, full.mean, float(lam.sum() / total))
