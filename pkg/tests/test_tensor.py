import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from lskdet.tensor import (
    BoundingBox,
    as_tensor,
    box_sum_clipped,
    crop,
    frobenius_norm,
    integral_image,
    iou,
    load_image,
    load_tensor,
    save_pgm,
    save_tensor,
    tensor_from_bytes,
    tensor_to_bytes,
    window_sum,
    window_sums,
)


def write_pgm16(path, img):
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode()
    path.write_bytes(header + img.astype(">u2").tobytes())


# --- boxes -------------------------------------------------------------------


def test_box_rejects_empty():
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 5)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 5, -1)


def test_iou_examples():
    a = BoundingBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(20, 20, 5, 5)) == 0.0
    assert iou(a, BoundingBox(5, 0, 10, 10)) == pytest.approx(1 / 3, abs=1e-15)
    # touching edges share no area
    assert iou(a, BoundingBox(10, 0, 10, 10)) == 0.0


@given(
    st.tuples(*[st.floats(-50, 50)] * 2, *[st.floats(0.5, 40)] * 2),
    st.tuples(*[st.floats(-50, 50)] * 2, *[st.floats(0.5, 40)] * 2),
)
def test_iou_symmetric_and_bounded(a, b):
    a, b = BoundingBox(*a), BoundingBox(*b)
    v = iou(a, b)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert v == pytest.approx(iou(b, a), abs=1e-12)


# --- image files -------------------------------------------------------------


def test_load_8bit_unchanged(tmp_path):
    img = np.arange(48, dtype=np.uint8).reshape(6, 8) * 5
    save_pgm(tmp_path / "a.pgm", img)
    out = load_image(tmp_path / "a.pgm")
    assert out.dtype == np.float64
    np.testing.assert_array_equal(out, img)


def test_load_ascii_pgm_with_comment(tmp_path):
    (tmp_path / "a.pgm").write_text("P2\n# comment\n3 2\n255\n0 1 2\n3 4 255\n")
    np.testing.assert_array_equal(load_image(tmp_path / "a.pgm"), [[0, 1, 2], [3, 4, 255]])


def test_rescale_16bit_constant(tmp_path):
    write_pgm16(tmp_path / "c.pgm", np.full((4, 5), 33000))
    out = load_image(tmp_path / "c.pgm", rescale=(31000, 35000))
    np.testing.assert_allclose(out, 127.5, rtol=0, atol=1e-12)


def test_rescale_endpoints_and_clamp(tmp_path):
    write_pgm16(tmp_path / "e.pgm", np.array([[31000, 35000, 30000, 40000]]))
    out = load_image(tmp_path / "e.pgm", rescale=(31000, 35000))
    np.testing.assert_array_equal(out, [[0.0, 255.0, 0.0, 255.0]])


def test_png_grayscale_and_color(tmp_path):
    img = (np.arange(30).reshape(5, 6) * 7).astype(np.uint8)
    Image.fromarray(img, mode="L").save(tmp_path / "g.png")
    np.testing.assert_array_equal(load_image(tmp_path / "g.png"), img)
    Image.fromarray(np.zeros((4, 4, 3), np.uint8), mode="RGB").save(tmp_path / "c.png")
    with pytest.raises(ValueError):
        load_image(tmp_path / "c.png")


def test_png_16bit(tmp_path):
    img = np.array([[31000, 33000], [35000, 0]], dtype=np.uint16)
    Image.fromarray(img).save(tmp_path / "w.png")
    np.testing.assert_array_equal(load_image(tmp_path / "w.png"), img)


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "missing.pgm")
    (tmp_path / "c.ppm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ValueError):
        load_image(tmp_path / "c.ppm")
    (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(ValueError):
        load_image(tmp_path / "t.pgm")


def test_save_pgm_16bit_roundtrip(tmp_path):
    img = np.array([[0, 300], [65535, 1000]], dtype=np.float64)
    save_pgm(tmp_path / "x.pgm", img)
    np.testing.assert_array_equal(load_image(tmp_path / "x.pgm"), img)


# --- crop and norms ----------------------------------------------------------


def test_crop_full_extent_identity():
    t = np.random.default_rng(0).standard_normal((6, 7, 3))
    out = crop(t, BoundingBox(0, 0, 7, 6))
    np.testing.assert_array_equal(out, t)
    np.testing.assert_array_equal(crop(out, BoundingBox(0, 0, 7, 6)), out)


def test_crop_point_and_copy():
    t = np.random.default_rng(1).standard_normal((6, 7, 3))
    out = crop(t, BoundingBox(4, 2, 1, 1))
    np.testing.assert_array_equal(out[0, 0], t[2, 4])
    out[0, 0] = 99
    assert t[2, 4, 0] != 99


def test_crop_bounds():
    t = np.zeros((6, 7, 2))
    with pytest.raises(ValueError):
        crop(t, BoundingBox(5, 0, 3, 3))
    with pytest.raises(ValueError):
        crop(t, BoundingBox(0.5, 0, 3, 3))


def test_crop_norm_matches_windowed_sum():
    rng = np.random.default_rng(2)
    t = rng.standard_normal((10, 12, 3))
    box = BoundingBox(3, 2, 5, 4)
    direct = np.sqrt(sum(t[r, c, k] ** 2 for r in range(2, 6) for c in range(3, 8) for k in range(3)))
    assert frobenius_norm(crop(t, box)) == pytest.approx(direct, rel=1e-14)


def test_frobenius_examples():
    assert frobenius_norm(np.zeros((3, 3, 2))) == 0.0
    t = np.zeros((2, 2, 1))
    t[1, 0, 0] = -3
    assert frobenius_norm(t) == 3.0
    assert frobenius_norm(np.ones((2, 2, 2))) == pytest.approx(np.sqrt(8), abs=1e-15)


def test_frobenius_channel_decomposition():
    t = np.random.default_rng(3).standard_normal((5, 4, 6))
    per_channel = sum(frobenius_norm(t[:, :, k : k + 1]) ** 2 for k in range(6))
    assert frobenius_norm(t) ** 2 == pytest.approx(per_channel, rel=1e-13)


def test_as_tensor():
    assert as_tensor(np.zeros((3, 4))).shape == (3, 4, 1)
    with pytest.raises(ValueError):
        as_tensor(np.array([[[np.nan]]]))
    with pytest.raises(ValueError):
        as_tensor(np.zeros(5))


# --- integral images ---------------------------------------------------------


def test_integral_examples():
    ii = integral_image(np.ones((4, 4)))
    assert ii.shape == (5, 5)
    assert np.all(ii[0] == 0) and np.all(ii[:, 0] == 0)
    assert window_sum(ii, BoundingBox(1, 1, 2, 2)) == 4.0
    p = np.random.default_rng(4).random((6, 9))
    assert window_sum(integral_image(p), BoundingBox(0, 0, 9, 6)) == pytest.approx(p.sum(), rel=1e-14)
    with pytest.raises(ValueError):
        window_sum(ii, BoundingBox(3, 3, 2, 2))


def test_integral_monotone_for_nonnegative():
    ii = integral_image(np.random.default_rng(5).random((8, 11)))
    assert np.all(np.diff(ii, axis=0) >= 0) and np.all(np.diff(ii, axis=1) >= 0)


def test_window_sum_random_boxes():
    rng = np.random.default_rng(6)
    p = rng.random((40, 50)) * 10
    ii = integral_image(p)
    for _ in range(100):
        h, w = rng.integers(1, 41), rng.integers(1, 51)
        y, x = rng.integers(0, 41 - h), rng.integers(0, 51 - w)
        direct = 0.0
        for r in range(y, y + h):
            for c in range(x, x + w):
                direct += p[r, c]
        assert abs(window_sum(ii, BoundingBox(x, y, w, h)) - direct) <= 1e-9 * h * w


def test_window_sums_dense():
    p = np.random.default_rng(7).random((9, 10))
    out = window_sums(integral_image(p), 3, 4)
    assert out.shape == (7, 7)
    assert out[2, 5] == pytest.approx(p[2:5, 5:9].sum(), rel=1e-13)


def test_box_sum_clipped_borders():
    p = np.ones((6, 6))
    out = box_sum_clipped(p, 5)
    assert out[0, 0] == 9 and out[2, 2] == 25 and out[0, 3] == 15


# --- serialization -----------------------------------------------------------


def test_tensor_roundtrip(tmp_path):
    t = np.random.default_rng(8).standard_normal((3, 5, 2))
    buf = tensor_to_bytes(t)
    assert buf[:4] == b"LSKT"
    assert len(buf) == 20 + 8 * t.size
    # channel-minor, row-major layout
    assert np.frombuffer(buf[20:28], "<f8")[0] == t[0, 0, 0]
    assert np.frombuffer(buf[28:36], "<f8")[0] == t[0, 0, 1]
    np.testing.assert_array_equal(tensor_from_bytes(buf), t)
    save_tensor(tmp_path / "t.lskt", t)
    np.testing.assert_array_equal(load_tensor(tmp_path / "t.lskt"), t)


def test_tensor_stream_errors():
    buf = tensor_to_bytes(np.ones((2, 2, 1)))
    with pytest.raises(ValueError):
        tensor_from_bytes(b"XXXX" + buf[4:])
    with pytest.raises(ValueError):
        tensor_from_bytes(buf[:-3])


@settings(max_examples=30)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_tensor_roundtrip_property(m, n, d, seed):
    t = np.random.default_rng(seed).standard_normal((m, n, d))
    np.testing.assert_array_equal(tensor_from_bytes(tensor_to_bytes(t)), t)
