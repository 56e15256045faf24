"""Command-line entry point: ``lskdet {train,detect,eval,bench,synth}``.

Options may also come from a TOML file given with ``--config``. Top-level
keys apply to every command and a table named after the command overrides
them; flags given on the command line win over both. Keys use the long
option names with dashes or underscores.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .detector import naive_slide, prepare, save_score_map, score_map
from .evaluation import evaluate, group_of, kfold, read_annotations, summary, write_curve_csv
from .lsk import LskParams
from .model import Model, load_model, save_model
from .pca import PcaBasis, fit_pca, sample_descriptors
from .pyramid import Detection, detect, read_detections, write_detections
from .stm import TrainConfig, train_detector
from .synth import SynthConfig, write_dataset
from .tensor import load_image

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("lskdet")

EXIT_IO, EXIT_VALIDATION, EXIT_NUMERICAL = 2, 3, 4

# detector settings of the three thermal benchmarks
PRESETS = {
    "osu-t": {"alpha": 0.4, "detector": "36x28", "scales": "1.0"},
    "osu-ct": {"alpha": 0.75, "detector": "30x20", "scales": "1.30,1.00,0.81,0.68,0.59,0.52", "min_height": 20.0},
    "lsi": {
        "alpha": 0.4,
        "detector": "40x20",
        "scales": "2.50,1.58,1.16,0.90,0.75,0.64,0.55,0.49,0.44,0.40",
        "rescale": "31000,35000",
    },
}

DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "verbose": 0,
    # features and training
    "alpha": 0.4,
    "window": 5,
    "epsilon": 0.1,
    "tau": 1.0,
    "intensity_scale": 1.0 / 255.0,
    "rescale": None,
    "detector": "32x16",
    "scales": "1.0",
    "energy": 0.8,
    "components": None,
    "C": "1.0",
    "negatives": 10,
    "mining_budget": None,
    "threshold": 0.0,
    "folds": None,
    "fold": None,
    # evaluation
    "min_height": 0.0,
    "iou": 0.5,
    "fppi": 0.1,
    # bench
    "sizes": "240x360,120x180,64x64,36x28",
    "channels": 3,
    "repeat": 3,
    # synth
    "n_train": SynthConfig.n_train,
    "n_test": SynthConfig.n_test,
    "noise": SynthConfig.noise,
    "height": SynthConfig.height,
    "width": SynthConfig.width,
    "max_objects": SynthConfig.max_objects,
}


class NumericalError(RuntimeError):
    """Solver failure or non-finite values."""


# --- configuration -----------------------------------------------------------


def _parse_shape(text: str) -> tuple[int, int]:
    try:
        rows, cols = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise ValueError(f"expected ROWSxCOLS, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise ValueError(f"shape must be positive, got {text!r}")
    return rows, cols


def _parse_floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _load_config(path: str | None, command: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"{path}: {exc}") from None
    commands = {"train", "detect", "eval", "bench", "synth"}
    merged = {k: v for k, v in raw.items() if not (k in commands and isinstance(v, dict))}
    merged.update(raw.get(command, {}))
    return {k.replace("-", "_"): v for k, v in merged.items()}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, preset, config file and flags, in increasing priority."""
    file_cfg = _load_config(args.config, args.command)
    opts = dict(DEFAULTS)
    preset = getattr(args, "preset", None) or file_cfg.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        opts.update(PRESETS[preset])
    unknown = set(file_cfg) - set(opts) - set(vars(args)) - {"preset"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    opts.update(file_cfg)
    opts.update({k: v for k, v in vars(args).items() if v is not None})
    return opts


def _rescale(o: dict) -> tuple[float, float] | None:
    if o.get("rescale") is None:
        return None
    values = _parse_floats(o["rescale"])
    if len(values) != 2 or not values[1] > values[0]:
        raise ValueError(f"--rescale needs LO,HI with LO < HI, got {o['rescale']!r}")
    return values[0], values[1]


def _lsk_params(o: dict) -> LskParams:
    return LskParams(
        window_size=int(o["window"]),
        epsilon=float(o["epsilon"]),
        tau=float(o["tau"]),
        alpha=float(o["alpha"]),
        intensity_scale=float(o["intensity_scale"]),
    )


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _images_root(o: dict, annotations: Path) -> Path:
    return Path(o["images_root"]) if o.get("images_root") else annotations.parent


def _map(fn, items, jobs: int):
    """``map`` over a thread pool; results come back in input order."""
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --- commands ----------------------------------------------------------------


def cmd_train(o: dict) -> int:
    ann_path = _require_file(o["annotations"], "annotation file")
    annotations = read_annotations(ann_path)
    root = _images_root(o, ann_path)
    ids = list(annotations)
    if not ids:
        raise ValueError(f"{ann_path}: no images listed")
    for image_id in ids:
        _require_file(root / image_id, "image")

    if o["folds"] is not None:
        groups = sorted({group_of(i) for i in ids})
        folds = kfold(groups, int(o["folds"]))
        for k, (_, held) in enumerate(folds):
            print(f"fold {k}: held out {', '.join(held)}")
        if o["fold"] is None:
            raise ValueError("--folds needs --fold to pick the held-out fold to train against")
        k = int(o["fold"])
        if not 0 <= k < len(folds):
            raise ValueError(f"--fold must be in [0, {len(folds)})")
        keep = set(folds[k][0])
        ids = [i for i in ids if group_of(i) in keep]
        print(f"training fold {k}: {len(ids)} images from {len(keep)} groups")

    rescale = _rescale(o)
    images = _map(lambda i: load_image(root / i, rescale), ids, int(o["jobs"]))
    frames = [(img, annotations[i]) for img, i in zip(images, ids)]

    C = None if str(o["C"]).lower() == "cv" else float(o["C"])
    cfg = TrainConfig(
        detector_shape=_parse_shape(o["detector"]),
        scales=_parse_floats(o["scales"]),
        lsk_params=_lsk_params(o),
        energy_target=float(o["energy"]),
        n_components=None if o["components"] is None else int(o["components"]),
        C=C,
        negatives_per_image=int(o["negatives"]),
        mining_budget=None if o["mining_budget"] is None else int(o["mining_budget"]),
        threshold=float(o["threshold"]),
        seed=int(o["seed"]),
    )
    report = train_detector(frames, cfg)
    pca = report.final.pca
    print(f"pca: {pca.n_components} of {pca.n_input} channels, {100 * pca.energy_fraction:.1f}% energy")
    print(f"examples: {report.n_positive} positive, {report.n_negative} random negative, {report.n_hard} mined")
    print(f"C: {report.C:g}")
    failed = False
    for name, model in (("initial", report.initial), ("final", report.final)):
        sol = model.solution
        n_sv = int(np.sum(sol.beta > 0))
        print(
            f"{name}: {n_sv} support tensors of {sol.beta.size} ({100 * n_sv / sol.beta.size:.1f}%), "
            f"iterations={sol.n_iter} kkt_gap={sol.gap:.3g} objective={sol.objective:.6g} "
            f"bias={sol.bias:.6g} converged={sol.converged}"
        )
        failed |= not sol.converged
    if failed:
        raise NumericalError("solver did not converge; model not written")
    out = Path(o.get("out") or "model.lskm")
    save_model(out, report.final)
    print(f"model written to {out}")
    return 0


def _detect_inputs(o: dict) -> tuple[list[str], Path]:
    if o.get("annotations"):
        ann_path = _require_file(o["annotations"], "annotation file")
        return list(read_annotations(ann_path)), _images_root(o, ann_path)
    if not o.get("images"):
        raise ValueError("detect needs --images or --annotations")
    root = Path(o["images_root"]) if o.get("images_root") else Path(".")
    return [str(p) for p in o["images"]], root


def cmd_detect(o: dict) -> int:
    model = load_model(_require_file(o["model"], "model file"))
    ids, root = _detect_inputs(o)
    for image_id in ids:
        _require_file(root / image_id, "image")
    threshold = float(o["threshold"]) if o.get("threshold_set") else model.threshold
    maps_dir = Path(o["score_maps"]) if o.get("score_maps") else None
    rescale = _rescale(o)

    def run(image_id: str):
        img = load_image(root / image_id, rescale)
        dets, maps, _ = detect(img, model, threshold=threshold, return_maps=True)
        if maps_dir is not None:
            stem = image_id.replace("/", "_").rsplit(".", 1)[0]
            maps_dir.mkdir(parents=True, exist_ok=True)
            for sm in maps:
                save_score_map(maps_dir / f"{stem}_s{sm.scale:.2f}.pgm", sm)
        return dets

    results = _map(run, ids, int(o["jobs"]))
    out = o.get("out")
    stream = open(out, "w", encoding="utf-8") if out else sys.stdout
    try:
        for image_id, dets in zip(ids, results):
            write_detections(stream, image_id, dets)
    finally:
        if out:
            stream.close()
    log.info("%d detections in %d images", sum(len(d) for d in results), len(ids))
    return 0


def cmd_eval(o: dict) -> int:
    ground_truth = read_annotations(_require_file(o["annotations"], "annotation file"))
    detections: dict[str, list[Detection]] = {}
    for path in o["detections"]:
        part = read_detections(_require_file(path, "detections file"))
        dup = set(part) & set(detections)
        if dup:
            raise ValueError(f"{path}: images already covered by another detections file: {sorted(dup)[:5]}")
        detections.update(part)
    unknown = set(detections) - set(ground_truth)
    if unknown:
        raise ValueError(f"detections and annotations cover different image sets, e.g. {sorted(unknown)[:5]}")
    result = evaluate(
        detections,
        ground_truth,
        iou_min=float(o["iou"]),
        min_height=float(o["min_height"]),
        report_threshold=float(o["threshold"]),
        ref_fppi=float(o["fppi"]),
    )
    if o.get("out"):
        write_curve_csv(o["out"], result)
    print(summary(result))
    return 0


def _bench_model(rng, window, channels, pca=None) -> Model:
    if pca is None:
        pca = PcaBasis.identity(channels)
    return Model(template=rng.standard_normal((*window, channels)), bias=-0.1, pca=pca)


def _best_time(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(o: dict) -> int:
    rng = np.random.default_rng(int(o["seed"]))
    window = _parse_shape(o["detector"])
    d = int(o["channels"])
    repeat = max(1, int(o["repeat"]))
    model = _bench_model(rng, window, d)
    print(f"detector {window[0]}x{window[1]}x{d}, best of {repeat}")
    print(f"{'target':>10} {'fft_s':>10} {'naive_s':>10} {'ratio':>8} {'max_diff':>10}")
    for text in str(o["sizes"]).split(","):
        shape = _parse_shape(text)
        if shape[0] < window[0] or shape[1] < window[1]:
            print(f"{text:>10} skipped: smaller than the detector")
            continue
        f = rng.random((*shape, d))
        t_fft = _best_time(lambda: score_map(f, prepare(model, shape)), repeat)
        t_naive = _best_time(lambda: naive_slide(f, model), repeat)
        a = score_map(f, prepare(model, shape))
        b = naive_slide(f, model)
        diff = float(np.max(np.abs(a.scores[a.valid] - b.scores[a.valid]))) if a.valid.any() else 0.0
        print(f"{text:>10} {t_fft:10.4f} {t_naive:10.4f} {t_naive / t_fft:8.2f} {diff:10.2e}")

    # the full single-scale pipeline: descriptors, projection, scoring, peaks, NMS
    img = rng.random((240, 360)) * 255.0
    params = _lsk_params(o)
    pca = fit_pca(sample_descriptors([img], params, 20_000, rng), 1.0)
    pca = PcaBasis(pca.components[:, :d], pca.eigenvalues[:d], pca.mean, pca.energy_fraction)
    full = replace(_bench_model(rng, window, d, pca), lsk_params=params)
    t_full = _best_time(lambda: detect(img, full), repeat)
    print(f"full pipeline 240x360, one scale: {t_full:.4f} s")
    return 0


def cmd_synth(o: dict) -> int:
    cfg = SynthConfig(
        seed=int(o["seed"]) if o.get("seed_set") else SynthConfig.seed,
        n_train=int(o["n_train"]),
        n_test=int(o["n_test"]),
        noise=float(o["noise"]),
        height=int(o["height"]),
        width=int(o["width"]),
        max_objects=int(o["max_objects"]),
    )
    out = Path(o.get("out") or "synth")
    paths = write_dataset(out, cfg)
    print(f"wrote {cfg.n_train} train and {cfg.n_test} test frames to {out}")
    for split, p in paths.items():
        print(f"{split}: {p}")
    return 0


COMMANDS = {"train": cmd_train, "detect": cmd_detect, "eval": cmd_eval, "bench": cmd_bench, "synth": cmd_synth}


# --- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with option defaults")
    common.add_argument("--seed", type=int, help="random seed (default 0; synth default 7)")
    common.add_argument("--jobs", type=int, help="worker threads for per-image work (default 1)")
    common.add_argument("--verbose", "-v", action="count", help="more logging; repeat for debug")

    features = argparse.ArgumentParser(add_help=False)
    features.add_argument("--preset", choices=sorted(PRESETS), help="detector settings of a thermal benchmark")
    features.add_argument("--alpha", type=float, help="structure sensitivity exponent (default 0.4)")
    features.add_argument("--window", type=int, help="descriptor window size, odd (default 5)")
    features.add_argument("--epsilon", type=float, help="regularization floor (default 0.1)")
    features.add_argument("--tau", type=float, help="elongation regularizer (default 1.0)")
    features.add_argument("--intensity-scale", type=float, help="factor applied to pixel values (default 1/255)")

    parser = argparse.ArgumentParser(prog="lskdet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, features], help="train a detector from annotated images")
    p.add_argument("--annotations", help="annotation file listing training images")
    p.add_argument("--images-root", help="directory image paths are relative to (default: annotation dir)")
    p.add_argument("--rescale", help="map intensities LO,HI linearly onto 0-255, e.g. for 16-bit data")
    p.add_argument("--out", help="model file to write (default model.lskm)")
    p.add_argument("--detector", help="detector size ROWSxCOLS (default 32x16)")
    p.add_argument("--scales", help="comma-separated pyramid scales (default 1.0)")
    p.add_argument("--energy", type=float, help="PCA energy target (default 0.8)")
    p.add_argument("--components", type=int, help="keep this many PCA channels instead")
    p.add_argument("--C", help="box constraint, or 'cv' for 3-fold selection (default 1.0)")
    p.add_argument("--negatives", type=int, help="random negatives per image (default 10)")
    p.add_argument("--mining-budget", type=int, help="hard negatives to add (default 2x positives)")
    p.add_argument("--threshold", type=float, help="detection threshold stored in the model (default 0)")
    p.add_argument("--folds", type=int, help="split image groups into this many folds")
    p.add_argument("--fold", type=int, help="fold to hold out when --folds is set")

    p = sub.add_parser("detect", parents=[common], help="run a model over images")
    p.add_argument("--model", help="model file")
    p.add_argument("--images", nargs="+", help="image files")
    p.add_argument("--annotations", help="take the image list from an annotation file")
    p.add_argument("--images-root", help="directory image paths are relative to")
    p.add_argument("--rescale", help="map intensities LO,HI onto 0-255; use the value given at training")
    p.add_argument("--preset", choices=sorted(PRESETS), help="take --rescale from a benchmark")
    p.add_argument("--out", help="detections file (default stdout)")
    p.add_argument("--threshold", type=float, help="score threshold (default: the model's)")
    p.add_argument("--score-maps", help="directory for per-scale score-map PGMs")

    p = sub.add_parser("eval", parents=[common], help="miss rate versus FPPI")
    p.add_argument("--detections", nargs="+", help="detections files, concatenated")
    p.add_argument("--annotations", help="ground-truth annotation file")
    p.add_argument("--out", help="CSV file for the curve")
    p.add_argument("--min-height", type=float, help="ignore ground truths shorter than this (default 0)")
    p.add_argument("--iou", type=float, help="matching overlap (default 0.5)")
    p.add_argument("--threshold", type=float, help="operating threshold for the counts (default 0)")
    p.add_argument("--fppi", type=float, help="reference FPPI for the miss rate (default 0.1)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="take --min-height from a benchmark")

    p = sub.add_parser("bench", parents=[common, features], help="time FFT against sliding-window scoring")
    p.add_argument("--detector", help="detector size ROWSxCOLS (default 36x28)")
    p.add_argument("--channels", type=int, help="feature channels d (default 3)")
    p.add_argument("--sizes", help="comma-separated target sizes (default 240x360,120x180,64x64,36x28)")
    p.add_argument("--repeat", type=int, help="timing repetitions, best kept (default 3)")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic thermal-like dataset")
    p.add_argument("--out", help="output directory (default ./synth)")
    p.add_argument("--n-train", type=int, help=f"training frames (default {SynthConfig.n_train})")
    p.add_argument("--n-test", type=int, help=f"test frames (default {SynthConfig.n_test})")
    p.add_argument("--noise", type=float, help=f"pixel noise std (default {SynthConfig.noise:g})")
    p.add_argument("--height", type=int, help=f"frame height (default {SynthConfig.height})")
    p.add_argument("--width", type=int, help=f"frame width (default {SynthConfig.width})")
    p.add_argument("--max-objects", type=int, help=f"objects per frame (default {SynthConfig.max_objects})")
    return parser


_REQUIRED = {
    "train": ("annotations",),
    "detect": ("model",),
    "eval": ("detections", "annotations"),
    "bench": (),
    "synth": (),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        # flags that change meaning when absent
        threshold_set = getattr(args, "threshold", None) is not None
        seed_set = args.seed is not None
        if args.command == "bench" and args.detector is None:
            args.detector = "36x28"
        o = resolve(args)
        o["threshold_set"] = threshold_set or "threshold" in _load_config(args.config, args.command)
        o["seed_set"] = seed_set or "seed" in _load_config(args.config, args.command)
        logging.basicConfig(
            level=[logging.WARNING, logging.INFO, logging.DEBUG][min(int(o["verbose"]), 2)],
            format="%(levelname)s %(name)s: %(message)s",
        )
        missing = [k for k in _REQUIRED[args.command] if not o.get(k)]
        if missing:
            raise ValueError(f"missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")
        if int(o["jobs"]) < 1:
            raise ValueError("--jobs must be >= 1")
        return COMMANDS[args.command](o)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"lskdet {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"lskdet {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"lskdet {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
