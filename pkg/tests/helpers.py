"""Builders shared by several test modules."""

import numpy as np

from lskdet.lsk import LskParams
from lskdet.model import Model
from lskdet.pca import fit_pca, sample_descriptors
from lskdet.stm import TrainingSet, dual_objective


def textured_image(rng, shape=(60, 80)):
    from scipy import ndimage

    img = ndimage.gaussian_filter(rng.standard_normal(shape), 2.0, mode="wrap")
    return 100.0 + 40.0 * img / img.std()


def planted_model(img, box_rc, window, params=LskParams(), bias=-0.5):
    """Model whose template is the unit-norm feature crop at ``box_rc`` of ``img``."""
    pca = fit_pca(sample_descriptors([img], params, 5000, 0), 0.8)
    model = Model(template=np.zeros((*window, pca.n_components)), bias=bias, pca=pca, lsk_params=params)
    f = model.features(img)
    r, c = box_rc
    crop = f[r : r + window[0], c : c + window[1]]
    return model.with_(template=crop / np.linalg.norm(crop)), f


def reference_dual(K, y, C):
    """Box-constrained SVM dual solved by cvxopt's interior-point QP."""
    from cvxopt import matrix, solvers

    n = len(y)
    P = matrix(np.outer(y, y) * K)
    q = matrix(-np.ones(n))
    G = matrix(np.vstack([-np.eye(n), np.eye(n)]))
    h = matrix(np.hstack([np.zeros(n), np.full(n, C)]))
    A = matrix(y.reshape(1, -1).astype(float))
    b = matrix(0.0)
    solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12, maxiters=200)
    sol = solvers.qp(P, q, G, h, A, b)
    beta = np.clip(np.array(sol["x"]).ravel(), 0, C)
    return beta, dual_objective(K, y, beta)


def random_set(seed, n=40, shape=(4, 3, 2), separation=0.0):
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) < n // 2, 1.0, -1.0)
    direction = rng.standard_normal(shape)
    x = rng.standard_normal((n, *shape)) + separation * y[:, None, None, None] * direction
    unit = x / np.sqrt(np.sum(x * x, axis=(1, 2, 3)))[:, None, None, None]
    return TrainingSet(unit, y)


def kkt_violation(K, y, beta, bias, C):
    """Largest violation of the box-constrained KKT conditions."""
    margin = y * (K @ (beta * y) + bias)
    at_zero = beta <= 0
    at_c = beta >= C
    free = ~at_zero & ~at_c
    worst = 0.0
    if at_zero.any():
        worst = max(worst, np.max(1 - margin[at_zero]))
    if at_c.any():
        worst = max(worst, np.max(margin[at_c] - 1))
    if free.any():
        worst = max(worst, np.max(np.abs(margin[free] - 1)))
    return worst
