"""Detector model container and its binary file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lsk import LskParams
from .pca import PcaBasis, extract_features

MODEL_MAGIC = b"LSKM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class Model:
    """Rigid tensor detector: template, bias and everything needed to rebuild features.

    ``dual_coef``, ``support`` and ``solution`` hold the signed dual
    coefficients, the support tensors and the solver record after training;
    they are not written to disk.
    """

    template: np.ndarray
    bias: float
    pca: PcaBasis
    lsk_params: LskParams = LskParams()
    scales: tuple[float, ...] = (1.0,)
    threshold: float = 0.0
    dual_coef: np.ndarray | None = field(default=None, repr=False, compare=False)
    support: np.ndarray | None = field(default=None, repr=False, compare=False)
    solution: object | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.template, dtype=np.float64)
        if t.ndim != 3:
            raise ValueError(f"template must be (m, n, d), got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("template contains non-finite values")
        if t.shape[2] != self.pca.n_components:
            raise ValueError(f"template has {t.shape[2]} channels, PCA basis keeps {self.pca.n_components}")
        if len(set(self.scales)) != len(self.scales) or not all(s > 0 for s in self.scales):
            raise ValueError(f"scales must be unique and positive, got {self.scales}")
        object.__setattr__(self, "template", t)
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))

    @property
    def detector_shape(self) -> tuple[int, int]:
        return self.template.shape[:2]

    @property
    def n_channels(self) -> int:
        return self.template.shape[2]

    def features(self, img: np.ndarray) -> np.ndarray:
        return extract_features(img, self.lsk_params, self.pca)

    def with_(self, **changes) -> "Model":
        return replace(self, **changes)


def _f64(a) -> bytes:
    return np.asarray(a, dtype="<f8").tobytes(order="C")


def model_to_bytes(model: Model) -> bytes:
    p = model.lsk_params
    pca = model.pca
    m, n, d = model.template.shape
    parts = [
        MODEL_MAGIC,
        struct.pack("<I", MODEL_VERSION),
        struct.pack("<I4d", p.window_size, p.epsilon, p.tau, p.alpha, p.intensity_scale),
        struct.pack("<2Id", pca.n_input, pca.n_components, pca.energy_fraction),
        _f64(pca.mean),
        _f64(pca.eigenvalues),
        _f64(pca.components),
        struct.pack("<3I", m, n, d),
        _f64(model.template),
        struct.pack("<d", model.bias),
        struct.pack("<I", len(model.scales)),
        _f64(model.scales),
        struct.pack("<d", model.threshold),
    ]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def unpack(self, fmt: str):
        try:
            out = struct.unpack_from(fmt, self.buf, self.pos)
        except struct.error:
            raise ValueError("truncated model stream") from None
        self.pos += struct.calcsize(fmt)
        return out

    def floats(self, count: int, shape=None) -> np.ndarray:
        if self.pos + 8 * count > len(self.buf):
            raise ValueError("truncated model stream")
        a = np.frombuffer(self.buf, dtype="<f8", count=count, offset=self.pos).astype(np.float64)
        self.pos += 8 * count
        return a.reshape(shape) if shape is not None else a


def model_from_bytes(buf: bytes) -> Model:
    if buf[:4] != MODEL_MAGIC:
        raise ValueError("not an LSKM model stream")
    r = _Reader(buf)
    r.pos = 4
    (version,) = r.unpack("<I")
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    window, eps, tau, alpha, iscale = r.unpack("<I4d")
    l, d, energy = r.unpack("<2Id")
    mean = r.floats(l)
    eigenvalues = r.floats(d)
    components = r.floats(l * d, (l, d))
    m, n, dd = r.unpack("<3I")
    template = r.floats(m * n * dd, (m, n, dd))
    (bias,) = r.unpack("<d")
    (n_scales,) = r.unpack("<I")
    scales = tuple(r.floats(n_scales))
    (threshold,) = r.unpack("<d")
    if r.pos != len(buf):
        raise ValueError("trailing bytes in model stream")
    return Model(
        template=template,
        bias=bias,
        pca=PcaBasis(components, eigenvalues, mean, energy),
        lsk_params=LskParams(window, eps, tau, alpha, iscale),
        scales=scales,
        threshold=threshold,
    )


def save_model(path, model: Model) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
