"""Image and tensor containers, file I/O, cropping and integral images.

Images are 2-D ``float64`` arrays indexed ``(row, col)``. Feature tensors are
3-D ``float64`` arrays of shape ``(M, N, d)``: rows, columns, channels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"LSKT"
TENSOR_VERSION = 1


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; ``x, y`` is the top-left corner in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        """(cx, cy) in continuous pixel coordinates."""
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def inside(self, height: int, width: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


# --- image files ---------------------------------------------------------


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval separated by whitespace, '#' comments allowed
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    magic = tokens[0]
    if magic in (b"P3", b"P6"):
        raise ValueError(f"{path}: color PPM images are not supported")
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if width < 1 or height < 1 or not (0 < maxval < 65536):
        raise ValueError(f"{path}: bad PGM header {width}x{height} maxval={maxval}")
    if magic == b"P2":
        values = np.array(data[pos:].split(), dtype=np.float64)
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = ">u1" if maxval < 256 else ">u2"
        count = width * height
        values = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    if values.size != width * height:
        raise ValueError(f"{path}: expected {width * height} samples, got {values.size}")
    return values.reshape(height, width)


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode not in ("L", "I", "I;16", "I;16B", "I;16L", "F"):
            raise ValueError(f"{path}: expected single-channel grayscale, got mode {im.mode}")
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected single-channel grayscale image")
    return arr.astype(np.float64)


def load_image(path, rescale: tuple[float, float] | None = None) -> np.ndarray:
    """Read an 8- or 16-bit grayscale PGM or PNG as a float64 array.

    Parameters
    ----------
    path : str or Path
        Image file.
    rescale : (lo, hi), optional
        Map intensities linearly so that ``lo -> 0`` and ``hi -> 255``;
        values outside the range are clamped. Used for 16-bit thermal data.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    if path.suffix.lower() == ".png":
        img = _read_png(path)
    else:
        img = _read_pgm(path)
    if rescale is not None:
        img = rescale_intensity(img, *rescale)
    return img


def rescale_intensity(img: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if not hi > lo:
        raise ValueError(f"rescale range must satisfy hi > lo, got ({lo}, {hi})")
    out = (np.asarray(img, dtype=np.float64) - lo) * (255.0 / (hi - lo))
    return np.clip(out, 0.0, 255.0)


def save_pgm(path, img: np.ndarray, maxval: int | None = None) -> None:
    """Write a binary PGM. Values are rounded and clipped to ``[0, maxval]``.

    ``maxval`` defaults to 255, or 65535 when the data exceed 255.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("save_pgm expects a 2-D array")
    if maxval is None:
        maxval = 255 if np.nanmax(img) <= 255 else 65535
    dtype = ">u1" if maxval < 256 else ">u2"
    data = np.clip(np.rint(img), 0, maxval).astype(dtype)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


# --- tensor basics ---------------------------------------------------------


def as_tensor(t) -> np.ndarray:
    """Coerce to a finite float64 (M, N, d) array; 2-D input gets d = 1."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 2:
        t = t[:, :, None]
    if t.ndim != 3 or t.shape[2] < 1:
        raise ValueError(f"expected an (M, N, d) tensor, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains non-finite values")
    return t


def crop(t: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Copy the integer-aligned window ``box`` out of an (M, N, d) tensor."""
    x, y, w, h = (int(v) for v in (box.x, box.y, box.w, box.h))
    if (x, y, w, h) != (box.x, box.y, box.w, box.h):
        raise ValueError(f"crop box must be integer aligned, got {box}")
    if not box.inside(t.shape[0], t.shape[1]):
        raise ValueError(f"crop box {box} exceeds tensor extent {t.shape[:2]}")
    return np.array(t[y : y + h, x : x + w], dtype=np.float64)


def frobenius_norm(t: np.ndarray) -> float:
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))


def integral_image(plane: np.ndarray) -> np.ndarray:
    """(M+1, N+1) cumulative-sum table with a zero first row and column."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError("integral_image expects a 2-D plane")
    ii = np.zeros((plane.shape[0] + 1, plane.shape[1] + 1))
    np.cumsum(plane, axis=0, out=ii[1:, 1:])
    np.cumsum(ii[1:, 1:], axis=1, out=ii[1:, 1:])
    return ii


def window_sum(ii: np.ndarray, box: BoundingBox) -> float:
    """Sum of the source plane over ``box`` (integer aligned, inside extent)."""
    x, y, w, h = (int(v) for v in (box.x, box.y, box.w, box.h))
    if not box.inside(ii.shape[0] - 1, ii.shape[1] - 1):
        raise ValueError(f"box {box} exceeds plane extent {(ii.shape[0] - 1, ii.shape[1] - 1)}")
    return float(ii[y + h, x + w] - ii[y, x + w] - ii[y + h, x] + ii[y, x])


def window_sums(ii: np.ndarray, m: int, n: int) -> np.ndarray:
    """Sums over every m x n window; entry (r, c) is the window with top-left (r, c)."""
    return ii[m:, n:] - ii[:-m, n:] - ii[m:, :-n] + ii[:-m, :-n]


def box_sum_clipped(plane: np.ndarray, size: int) -> np.ndarray:
    """Sum over the size x size window centred on each pixel, clipped at borders."""
    r = size // 2
    padded = np.pad(np.asarray(plane, dtype=np.float64), r)
    return window_sums(integral_image(padded), size, size)


# --- serialization -------------------------------------------------------


def tensor_to_bytes(t: np.ndarray) -> bytes:
    t = as_tensor(t)
    m, n, d = t.shape
    header = TENSOR_MAGIC + struct.pack("<4I", TENSOR_VERSION, m, n, d)
    return header + t.astype("<f8").tobytes(order="C")


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != TENSOR_MAGIC:
        raise ValueError("not an LSKT tensor stream")
    version, m, n, d = struct.unpack_from("<4I", buf, 4)
    if version != TENSOR_VERSION:
        raise ValueError(f"unsupported tensor version {version}")
    count = m * n * d
    if len(buf) != 20 + 8 * count:
        raise ValueError("truncated tensor stream")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=20).astype(np.float64).reshape(m, n, d)


def save_tensor(path, t: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
