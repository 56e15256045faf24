import functools
import subprocess
import sys

import numpy as np
import pytest

import lskdet.stm
from lskdet import cli
from lskdet.evaluation import read_annotations, write_annotations
from lskdet.model import load_model
from lskdet.pyramid import resize
from lskdet.stm import decision
from lskdet.tensor import load_image, save_pgm


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", root / "ds", "--n-train", 20, "--n-test", 10,
               "--height", 90, "--width", 120, "--max-objects", 2) == 0
    model = root / "m.lskm"
    assert run("train", "--annotations", root / "ds/train.ann", "--out", model,
               "--detector", "24x12", "--scales", "1.0,0.5") == 0
    return root, model


def test_synth_writes_annotations(dataset):
    root, _ = dataset
    train = read_annotations(root / "ds/train.ann")
    test = read_annotations(root / "ds/test.ann")
    assert len(train) == 20 and len(test) == 10
    assert load_image(root / "ds" / next(iter(test))).shape == (90, 120)


def test_train_output_and_model(dataset, capsys):
    root, model_path = dataset
    model = load_model(model_path)
    assert model.detector_shape == (24, 12)
    assert model.scales == (1.0, 0.5)
    assert model.lsk_params.alpha == 0.4
    assert model.threshold == 0.0


def test_trained_model_ranks_positives_first(dataset):
    root, model_path = dataset
    model = load_model(model_path)
    ann = read_annotations(root / "ds/test.ann")
    rng = np.random.default_rng(0)
    pos, neg = [], []
    for image_id, boxes in ann.items():
        f = model.features(load_image(root / "ds" / image_id))
        for b in boxes:
            # crop the object's window at the nearest pyramid scale
            s = min(model.scales, key=lambda s: abs(s - 24 / b.h))
            fs = model.features(resize(load_image(root / "ds" / image_id), s))
            r = min(int(round(b.y * s)), fs.shape[0] - 24)
            c = min(int(round(b.x * s)), fs.shape[1] - 12)
            pos.append(decision(model, fs[r : r + 24, c : c + 12]))
        for _ in range(5):
            r, c = rng.integers(0, f.shape[0] - 24), rng.integers(0, f.shape[1] - 12)
            neg.append(decision(model, f[r : r + 24, c : c + 12]))
    pos, neg = np.array(pos), np.array(neg)
    # AUC of positives against random windows
    auc = np.mean(pos[:, None] > neg[None, :])
    assert auc > 0.9


def test_detect_eval_roundtrip(dataset, tmp_path, capsys):
    root, model = dataset
    dets = tmp_path / "d.txt"
    assert run("detect", "--model", model, "--annotations", root / "ds/test.ann",
               "--threshold", -1, "--out", dets) == 0
    capsys.readouterr()
    csv = tmp_path / "c.csv"
    assert run("eval", "--detections", dets, "--annotations", root / "ds/test.ann", "--out", csv) == 0
    out = capsys.readouterr().out
    assert out.startswith("miss_rate@fppi=0.1:")
    assert "images=10" in out
    assert csv.read_text().startswith("threshold,fppi,miss_rate\n")


def test_detect_deterministic_and_parallel(dataset, tmp_path):
    root, model = dataset
    outs = []
    for i, jobs in enumerate((1, 1, 3)):
        p = tmp_path / f"d{i}.txt"
        assert run("detect", "--model", model, "--annotations", root / "ds/test.ann",
                   "--threshold", -1, "--jobs", jobs, "--out", p) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert len(outs[0]) > 0


def test_detect_blank_frames_and_score_maps(dataset, tmp_path):
    _, model = dataset
    for k in range(2):
        save_pgm(tmp_path / f"blank{k}.pgm", np.full((60, 80), 100.0), maxval=255)
    out = tmp_path / "d.txt"
    maps = tmp_path / "maps"
    assert run("detect", "--model", model, "--images", "blank0.pgm", "blank1.pgm",
               "--images-root", tmp_path, "--out", out, "--score-maps", maps) == 0
    assert out.read_text() == ""
    assert sorted(p.name for p in maps.iterdir()) == [
        "blank0_s0.50.pgm", "blank0_s1.00.pgm", "blank1_s0.50.pgm", "blank1_s1.00.pgm",
    ]


def test_eval_concatenates_fold_outputs(dataset, tmp_path, capsys):
    root, model = dataset
    ann = read_annotations(root / "ds/test.ann")
    ids = list(ann)
    halves = [ids[:5], ids[5:]]
    files = []
    for k, part in enumerate(halves):
        a = tmp_path / f"a{k}.ann"
        write_annotations(a, {i: ann[i] for i in part})
        d = tmp_path / f"d{k}.txt"
        assert run("detect", "--model", model, "--annotations", a, "--images-root", root / "ds",
                   "--threshold", -1, "--out", d) == 0
        files.append(d)
    whole = tmp_path / "all.txt"
    assert run("detect", "--model", model, "--annotations", root / "ds/test.ann",
               "--threshold", -1, "--out", whole) == 0
    capsys.readouterr()
    assert run("eval", "--detections", *files, "--annotations", root / "ds/test.ann") == 0
    split = capsys.readouterr().out
    assert run("eval", "--detections", whole, "--annotations", root / "ds/test.ann") == 0
    assert split == capsys.readouterr().out
    # the same file twice covers images twice
    assert run("eval", "--detections", files[0], files[0], "--annotations", root / "ds/test.ann") == 3


def test_eval_rejects_unknown_images(dataset, tmp_path):
    root, _ = dataset
    d = tmp_path / "d.txt"
    d.write_text("elsewhere.pgm 0 0 10 20 1.0 1.0\n")
    assert run("eval", "--detections", d, "--annotations", root / "ds/test.ann") == 3


def test_exit_codes(dataset, tmp_path, monkeypatch):
    root, model = dataset
    # I/O
    assert run("detect", "--model", tmp_path / "missing.lskm", "--images", "x.pgm") == 2
    assert run("train", "--annotations", tmp_path / "missing.ann") == 2
    # validation
    assert run("train") == 3
    assert run("train", "--annotations", root / "ds/train.ann", "--detector", "24by12") == 3
    bad = tmp_path / "bad.lskm"
    bad.write_bytes(b"LSKM\x01\x00")
    assert run("detect", "--model", bad, "--images", "x.pgm") == 3
    assert run("detect", "--model", model, "--images", "x.pgm", "--jobs", 0) == 3
    # numerical: a solver that stops after one iteration never converges
    monkeypatch.setattr(lskdet.stm, "SolverConfig", functools.partial(lskdet.stm.SolverConfig, max_iter=1))
    out = tmp_path / "never.lskm"
    assert run("train", "--annotations", root / "ds/train.ann", "--detector", "24x12", "--out", out) == 4
    assert not out.exists()


def test_config_file_and_flag_priority(dataset, tmp_path, capsys):
    root, _ = dataset
    cfg = tmp_path / "c.toml"
    cfg.write_text('detector = "20x10"\nalpha = 0.75\n[train]\nscales = [1.0, 0.6]\n')
    out = tmp_path / "m.lskm"
    assert run("train", "--config", cfg, "--annotations", root / "ds/train.ann",
               "--out", out, "--detector", "24x12") == 0
    m = load_model(out)
    assert m.detector_shape == (24, 12)  # flag wins
    assert m.lsk_params.alpha == 0.75  # file value
    assert m.scales == (1.0, 0.6)  # command table
    cfg.write_text("colour = 3\n")
    assert run("train", "--config", cfg, "--annotations", root / "ds/train.ann") == 3
    cfg.write_text("detector = [\n")
    assert run("train", "--config", cfg, "--annotations", root / "ds/train.ann") == 3


def test_presets_resolve():
    args = cli.build_parser().parse_args(["train", "--preset", "osu-ct", "--alpha", "0.5"])
    o = cli.resolve(args)
    assert o["detector"] == "30x20" and o["alpha"] == 0.5 and o["min_height"] == 20.0
    args = cli.build_parser().parse_args(["eval", "--preset", "lsi"])
    assert cli.resolve(args)["detector"] == "40x20"


def test_bench_output(capsys):
    assert run("bench", "--sizes", "64x64,36x28,20x20", "--repeat", 1) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "detector 36x28x3, best of 1"
    rows = {ln.split()[0]: ln.split() for ln in lines[2:5]}
    for size in ("64x64", "36x28"):
        fft_s, naive_s, ratio, diff = (float(v) for v in rows[size][1:])
        # times are printed to four decimals; the ratio must lie within that rounding
        h = 5e-5
        assert (naive_s - h) / (fft_s + h) - 0.01 <= ratio <= (naive_s + h) / max(fft_s - h, 1e-12) + 0.01
        assert diff <= 1e-6
    assert rows["20x20"][1] == "skipped:"
    assert lines[-1].startswith("full pipeline 240x360, one scale:")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lskdet.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("train", "detect", "eval", "bench", "synth"):
        assert cmd in res.stdout


def test_rescale_16_bit_inputs(dataset, tmp_path):
    _, model = dataset
    # a 16-bit frame in the LSI range maps onto its 8-bit twin up to 16-bit quantization
    rng = np.random.default_rng(3)
    img8 = np.rint(rng.uniform(0, 255, (60, 80)))
    save_pgm(tmp_path / "f8.pgm", img8, maxval=255)
    save_pgm(tmp_path / "f16.pgm", 31000 + img8 * (4000 / 255), maxval=65535)
    outs = []
    for name, extra in (("f8.pgm", []), ("f16.pgm", ["--preset", "lsi"]), ("f16.pgm", ["--rescale", "31000,35000"])):
        out = tmp_path / f"d{len(outs)}.txt"
        assert run("detect", "--model", model, "--images", name, "--images-root", tmp_path,
                   "--threshold", -1, "--out", out, *extra) == 0
        outs.append([ln.split()[1:] for ln in out.read_text().splitlines()])
    assert outs[0] and outs[1] == outs[2]
    assert [d[:4] for d in outs[0]] == [d[:4] for d in outs[1]]
    np.testing.assert_allclose([float(d[4]) for d in outs[0]], [float(d[4]) for d in outs[1]], atol=1e-3)
    assert run("detect", "--model", model, "--images", "f16.pgm", "--images-root", tmp_path,
               "--rescale", "35000,31000") == 3
