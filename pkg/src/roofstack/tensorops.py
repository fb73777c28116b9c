"""Convolution weight surgery on the input-channel axis.

Pretrained first-layer weights accept 3 color channels; a mask channel makes
4. Two adaptations rewrite the input-channel axis of the weight tensor so the
layer accepts the wider input: the zero variant leaves new channels with zero
contribution, the proportional variant spreads each original channel's weight
across the new axis so channel sums are preserved. The bias never changes;
its length depends only on the output feature maps.

:func:`conv2d_reference` is a plain valid-padding, stride-1 cross-correlation
used as the verification oracle for the algebra above. It is not a training
engine.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from roofstack.errors import DimensionError, TensorFormatError

_MAGIC = b"RTNS"
_VERSION = 1
_MAX_ELEMENTS = 1 << 28  # 1 GiB of float32; anything larger is a corrupt header


@dataclass(frozen=True, eq=False)
class Tensor4:
    """Convolution weights in (k1, k2, in_channels, out_channels) order."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 4:
            raise DimensionError(f"weight tensor must be 4-D, got {self.data.ndim}-D")
        if self.data.dtype != np.float32:
            object.__setattr__(self, "data", self.data.astype(np.float32))
        if any(d < 1 for d in self.data.shape):
            raise DimensionError(f"weight tensor dims must be >= 1, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise DimensionError("weight tensor contains non-finite values")

    @property
    def k1(self) -> int:
        return self.data.shape[0]

    @property
    def k2(self) -> int:
        return self.data.shape[1]

    @property
    def m(self) -> int:
        return self.data.shape[2]

    @property
    def o(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True, eq=False)
class Bias:
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 1:
            raise DimensionError("bias must be 1-D")
        if self.values.dtype != np.float32:
            object.__setattr__(self, "values", self.values.astype(np.float32))


def adapt_weights_zero(w1: Tensor4, m2: int) -> Tensor4:
    """Grow the input-channel axis to ``m2``; new channels contribute zero.

    The first ``w1.m`` channel slices are copied verbatim, the rest are zeros,
    so convolving a widened input reproduces the original feature maps exactly.
    """
    if m2 < w1.m:
        raise DimensionError(f"zero-variant adaptation cannot shrink channels ({w1.m} -> {m2})")
    out = np.zeros((w1.k1, w1.k2, m2, w1.o), dtype=np.float32)
    out[:, :, : w1.m, :] = w1.data
    return Tensor4(out)


def adapt_weights_proportional(w1: Tensor4, m2: int) -> Tensor4:
    """Resize the input-channel axis to ``m2``, scaling so channel sums survive.

    Slice ``j`` of the result equals ``(m1 / m2) * w1[:, :, j % m1, :]``. When
    ``m2`` is a multiple of ``m1`` the summed contribution over replicated
    input channels matches the original layer.
    """
    if m2 < 1:
        raise DimensionError(f"target channel count must be >= 1, got {m2}")
    scale = np.float32(w1.m) / np.float32(m2)
    idx = np.arange(m2) % w1.m
    return Tensor4(scale * w1.data[:, :, idx, :])


def conv2d_reference(img: np.ndarray, w: Tensor4, bias: Bias | None = None) -> np.ndarray:
    """Valid-padding, stride-1 cross-correlation (no kernel flip).

    ``img`` is (H, W, channels); output is (H - k1 + 1, W - k2 + 1, w.o).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise DimensionError(f"image must be (H, W, C), got {img.shape}")
    if img.shape[2] != w.m:
        raise DimensionError(f"image has {img.shape[2]} channels, weights expect {w.m}")
    if img.shape[0] < w.k1 or img.shape[1] < w.k2:
        raise DimensionError(f"image {img.shape[:2]} smaller than kernel ({w.k1}, {w.k2})")
    if bias is not None and bias.values.shape[0] != w.o:
        raise DimensionError(f"bias length {bias.values.shape[0]} != output maps {w.o}")

    windows = np.lib.stride_tricks.sliding_window_view(img, (w.k1, w.k2), axis=(0, 1))
    # windows: (H', W', C, k1, k2). Channels accumulate sequentially so that
    # zero-weighted extra channels add exact zeros and leave outputs bitwise
    # unchanged; the kernel reduction order is fixed per channel.
    weights = w.data.astype(np.float64)
    out = np.zeros((windows.shape[0], windows.shape[1], w.o))
    for c in range(w.m):
        out += np.einsum("xyuv,uvo->xyo", windows[:, :, c], weights[:, :, c, :])
    if bias is not None:
        out = out + bias.values.astype(np.float64)[None, None, :]
    return out


def write_tensor(t: Tensor4, sink: str | Path | BinaryIO, bias: Bias | None = None) -> None:
    """Write the little-endian RTNS format; optional bias is appended."""
    payload = io.BytesIO()
    payload.write(_MAGIC)
    payload.write(struct.pack("<5I", _VERSION, t.k1, t.k2, t.m, t.o))
    payload.write(t.data.astype("<f4").tobytes(order="C"))
    if bias is not None:
        if bias.values.shape[0] != t.o:
            raise DimensionError(f"bias length {bias.values.shape[0]} != output maps {t.o}")
        payload.write(struct.pack("<I", bias.values.shape[0]))
        payload.write(bias.values.astype("<f4").tobytes(order="C"))
    data = payload.getvalue()
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)


def read_tensor(source: str | Path | BinaryIO | bytes) -> tuple[Tensor4, Bias | None]:
    """Read the RTNS format back; bit-exact round trip with :func:`write_tensor`."""
    if isinstance(source, (str, Path)):
        raw = Path(source).read_bytes()
    elif isinstance(source, bytes):
        raw = source
    else:
        raw = source.read()

    if len(raw) < 24:
        raise TensorFormatError(f"stream truncated: {len(raw)} bytes, header needs 24")
    if raw[:4] != _MAGIC:
        raise TensorFormatError(f"bad magic {raw[:4]!r}, expected {_MAGIC!r}")
    version, k1, k2, m, o = struct.unpack_from("<5I", raw, 4)
    if version != _VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if min(k1, k2, m, o) < 1 or k1 * k2 * m * o > _MAX_ELEMENTS:
        raise TensorFormatError(f"absurd dimensions {k1}x{k2}x{m}x{o}")
    count = k1 * k2 * m * o
    end = 24 + 4 * count
    if len(raw) < end:
        raise TensorFormatError(f"stream truncated: {len(raw)} bytes, need {end}")
    data = np.frombuffer(raw[24:end], dtype="<f4").reshape(k1, k2, m, o).copy()
    tensor = Tensor4(data)

    if len(raw) == end:
        return tensor, None
    if len(raw) < end + 4:
        raise TensorFormatError("stream truncated inside bias header")
    (bias_count,) = struct.unpack_from("<I", raw, end)
    bias_end = end + 4 + 4 * bias_count
    if bias_count != o or len(raw) < bias_end:
        raise TensorFormatError(f"bias block malformed (count {bias_count}, output maps {o})")
    bias = Bias(np.frombuffer(raw[end + 4 : bias_end], dtype="<f4").copy())
    return tensor, bias
