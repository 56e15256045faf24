"""Walk through the feature side: steering matrices, LSK descriptors, PCA.

Run: python demos/01_lsk_features.py
"""

import numpy as np

from lskdet.lsk import LskParams, SteeringMatrix, dense_descriptors, eig_sym2, regularize
from lskdet.pca import extract_features, fit_pca, sample_descriptors
from lskdet.synth import SynthConfig, render_frame

rng = np.random.default_rng(0)
cfg = SynthConfig()
img, boxes = render_frame(rng, cfg, n_objects=2)
print(f"frame {img.shape}, objects at {[(b.x, b.y, b.w, b.h) for b in boxes]}")

# Regularization keeps the eigenvectors and reshapes the eigenvalues.
params = LskParams(alpha=0.75)
for c in [(0.0, 0.0, 0.0), (4.0, 0.0, 0.0), (2.0, 2.0, 2.0), (1.0, 0.0, 1.0)]:
    out = regularize(SteeringMatrix(*c), params)
    lam1, lam2, theta = eig_sym2(out)
    print(f"C = {c}  ->  eigenvalues ({lam1:.4f}, {lam2:.4f}), leading angle {np.degrees(theta):6.1f} deg")

# One 25-bin descriptor per pixel; each sums to one.
h = dense_descriptors(img, params)
print(f"descriptors {h.shape}, sums in [{h.sum(2).min():.15f}, {h.sum(2).max():.15f}]")

# On a strong edge the kernel is squeezed across the edge; on flat background it is nearly round.
gy, gx = np.gradient(img)
mag = np.hypot(gx, gy)[2:-2, 2:-2]
edge = tuple(int(v) + 2 for v in np.unravel_index(np.argmax(mag), mag.shape))
flat = tuple(int(v) + 2 for v in np.unravel_index(np.argmin(mag), mag.shape))
for name, (r, c) in (("strongest edge", edge), ("flattest pixel", flat)):
    print(f"{name} at {(r, c)}:")
    print(np.array2string(h[r, c].reshape(5, 5), precision=3, suppress_small=True))

# Most descriptor variance sits in a few directions.
frames = [render_frame(rng, cfg)[0] for _ in range(20)]
full = fit_pca(sample_descriptors(frames, params, 50_000, rng), 1.0)
share = np.cumsum(full.eigenvalues) / full.eigenvalues.sum()
print("cumulative energy of the first 6 components:", np.round(share[:6], 4))
basis = fit_pca(sample_descriptors(frames, params, 50_000, rng), 0.8)
f = extract_features(img, params, basis)
print(f"energy target 0.8 keeps d = {basis.n_components}; feature tensor {f.shape}")
