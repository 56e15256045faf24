"""Train on synthetic thermal-like frames, mine hard negatives, detect, evaluate.

Run: python demos/03_synthetic_end_to_end.py [n_train] [n_test]
The defaults keep the run to about half a minute.
"""

import sys
import time

import numpy as np

from lskdet.evaluation import evaluate, summary
from lskdet.lsk import LskParams
from lskdet.pyramid import detect
from lskdet.stm import TrainConfig, train_detector
from lskdet.synth import SynthConfig, generate

n_train = int(sys.argv[1]) if len(sys.argv) > 1 else 60
n_test = int(sys.argv[2]) if len(sys.argv) > 2 else 30
cfg = SynthConfig(n_train=n_train, n_test=n_test)

train, test = [], {}
for split, image_id, img, boxes in generate(cfg):
    if split == "train":
        train.append((img, boxes))
    else:
        test[image_id] = (img, boxes)
print(f"{len(train)} training frames, {len(test)} test frames, "
      f"{sum(len(b) for _, b in train)} training objects")

t0 = time.perf_counter()
tcfg = TrainConfig(
    detector_shape=(30, 20),
    scales=(1.30, 1.00, 0.81, 0.68, 0.59, 0.52),
    lsk_params=LskParams(alpha=0.75),
)
rep = train_detector(train, tcfg)
print(f"trained in {time.perf_counter() - t0:.1f} s: d = {rep.final.n_channels}, "
      f"{rep.n_positive} positives, {rep.n_negative} random negatives, {rep.n_hard} mined")
for name, model in (("initial", rep.initial), ("final", rep.final)):
    beta = model.solution.beta
    print(f"  {name}: {np.sum(beta > 0)} support tensors of {beta.size}, bias {model.bias:.3f}")

truth = {k: b for k, (_, b) in test.items()}
for name, model in (("initial", rep.initial), ("final", rep.final)):
    t0 = time.perf_counter()
    dets = {k: detect(img, model, threshold=-1.0) for k, (img, _) in test.items()}
    res = evaluate(dets, truth, min_height=20.0)
    print(f"{name} model ({time.perf_counter() - t0:.1f} s): {summary(res)}")
