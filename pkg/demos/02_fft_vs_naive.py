"""Dense scoring two ways: frequency-domain correlation against window-by-window.

Run: python demos/02_fft_vs_naive.py
"""

import time

import numpy as np

from lskdet.detector import naive_slide, prepare, score_map
from lskdet.model import Model
from lskdet.pca import PcaBasis

rng = np.random.default_rng(1)
d = 3
window = (36, 28)
model = Model(template=rng.standard_normal((*window, d)), bias=-0.1, pca=PcaBasis.identity(d))


def best_of(fn, repeat=3):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, min(times)


print(f"detector {window[0]}x{window[1]}x{d}")
print(f"{'target':>10} {'fft_s':>9} {'naive_s':>9} {'ratio':>7} {'max_diff':>9}")
for shape in [(60, 90), (120, 180), (240, 360), (480, 720)]:
    f = rng.standard_normal((*shape, d))
    det = prepare(model, shape)
    fast, t_fft = best_of(lambda: score_map(f, det))
    slow, t_naive = best_of(lambda: naive_slide(f, model), repeat=1)
    diff = np.max(np.abs(fast.scores[fast.valid] - slow.scores[fast.valid]))
    print(f"{shape[0]:>4}x{shape[1]:<5} {t_fft:9.4f} {t_naive:9.4f} {t_naive / t_fft:7.1f} {diff:9.1e}")

# The FFT cost barely depends on the detector size; the direct cost grows with its area.
f = rng.standard_normal((240, 360, d))
for m, n in [(18, 14), (36, 28), (72, 56)]:
    mod = Model(template=rng.standard_normal((m, n, d)), bias=0.0, pca=PcaBasis.identity(d))
    det = prepare(mod, f.shape[:2])
    _, t_fft = best_of(lambda: score_map(f, det))
    _, t_naive = best_of(lambda: naive_slide(f, mod), repeat=1)
    print(f"detector {m:>2}x{n:<2}: fft {t_fft:.4f} s, naive {t_naive:.4f} s")
