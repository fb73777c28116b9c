"""Deterministic, seedable chip augmentation.

Every transform is a pure function of (chip, parameters, seed). The pipeline
applies transforms in a fixed order: dihedral, color/blur/noise, geometric
distortions, mask jitter, then margin crop + resize. Color transforms never
touch the mask channel; mask jitter never touches the color channels; every
geometric transform re-thresholds the mask so it stays strictly {0, 255}.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from roofstack.errors import ParameterError
from roofstack.raster import Chip
from roofstack.seeds import derive_seed

_TRANSFORM_NAMES = ("dihedral", "rgb_shift", "blur", "noise", "elastic", "grid", "optical", "mask_jitter")

DEFAULT_PROBABILITIES = {
    "dihedral": 1.0,
    "rgb_shift": 0.5,
    "blur": 0.3,
    "noise": 0.3,
    "elastic": 0.2,
    "grid": 0.2,
    "optical": 0.2,
    "mask_jitter": 0.3,
}


@dataclass(frozen=True)
class SeedPolicy:
    """Derives per-item seeds so parallel workers stay order-independent."""

    global_seed: int

    def item_seed(self, building_id: str, epoch: int, variant_index: int) -> int:
        return derive_seed(self.global_seed, building_id, epoch, variant_index)


@dataclass
class AugmentConfig:
    """Knobs for the augmentation pipeline; serializes to/from JSON."""

    rgb_shift_limit: int = 20
    blur_kernel_range: tuple[int, int] = (3, 7)
    blur_sigma_range: tuple[float, float] = (0.5, 2.0)
    noise_sigma_range: tuple[float, float] = (5.0, 15.0)
    elastic_alpha: float = 30.0
    elastic_sigma: float = 6.0
    grid_num_steps: int = 5
    grid_distort_limit: float = 0.3
    optical_limit: float = 0.3
    crop_margin_range: tuple[int, int] = (0, 100)
    mask_jitter_max_shift_px: int = 5
    mask_jitter_max_angle_deg: float = 5.0
    output_size: int = 224
    probabilities: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_PROBABILITIES))

    def __post_init__(self):
        if self.output_size <= 0:
            raise ParameterError(f"output_size must be positive, got {self.output_size}")
        for name, rng in (
            ("blur_kernel_range", self.blur_kernel_range),
            ("blur_sigma_range", self.blur_sigma_range),
            ("noise_sigma_range", self.noise_sigma_range),
            ("crop_margin_range", self.crop_margin_range),
        ):
            if rng[1] < rng[0]:
                raise ParameterError(f"{name} is empty: {rng}")
        if self.crop_margin_range[0] < 0 or self.crop_margin_range[1] > 100:
            raise ParameterError(f"crop_margin_range must stay within [0, 100], got {self.crop_margin_range}")
        merged = dict(DEFAULT_PROBABILITIES)
        merged.update(self.probabilities)
        for key, p in merged.items():
            if key not in _TRANSFORM_NAMES:
                raise ParameterError(f"unknown transform probability {key!r}")
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"probability for {key!r} outside [0, 1]: {p}")
        self.probabilities = merged

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AugmentConfig":
        raw = json.loads(text)
        for key in ("blur_kernel_range", "blur_sigma_range", "noise_sigma_range", "crop_margin_range"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)


# ---------------------------------------------------------------------------
# resampling helpers

def _bilinear(channel: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample a 2-D float array at fractional coordinates with edge clamp."""
    h, w = channel.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    top = channel[y0, x0] * (1.0 - fx) + channel[y0, x1] * fx
    bot = channel[y1, x0] * (1.0 - fx) + channel[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def _threshold_mask(mask_float: np.ndarray) -> np.ndarray:
    return np.where(mask_float >= 128.0, np.uint8(255), np.uint8(0))


def _remap(c: Chip, ys: np.ndarray, xs: np.ndarray) -> Chip:
    """Resample rgb and mask through the same coordinate field."""
    rgb = np.empty(ys.shape + (3,), dtype=np.uint8)
    for ch in range(3):
        vals = _bilinear(c.rgb[:, :, ch].astype(np.float64), ys, xs)
        rgb[:, :, ch] = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
    mask = _threshold_mask(_bilinear(c.mask.astype(np.float64), ys, xs))
    return Chip(rgb=rgb, mask=mask, margin=c.margin, building_id=c.building_id)


def _identity_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return ys, xs


# ---------------------------------------------------------------------------
# transforms

def dihedral(c: Chip, k: int) -> Chip:
    """One of the 8 square symmetries: rotate 90 deg * (k % 4), flip if k >= 4."""
    if not 0 <= k < 8:
        raise ParameterError(f"dihedral index must be in [0, 8), got {k}")
    rgb = np.rot90(c.rgb, k % 4, axes=(0, 1))
    mask = np.rot90(c.mask, k % 4, axes=(0, 1))
    if k >= 4:
        rgb = rgb[:, ::-1]
        mask = mask[:, ::-1]
    return Chip(rgb=np.ascontiguousarray(rgb), mask=np.ascontiguousarray(mask), margin=c.margin, building_id=c.building_id)


def rgb_shift(c: Chip, d: tuple[int, int, int]) -> Chip:
    """Shift each color channel by a constant; clamps to [0, 255], mask untouched."""
    shifted = c.rgb.astype(np.int16) + np.asarray(d, dtype=np.int16)[None, None, :]
    return Chip(rgb=np.clip(shifted, 0, 255).astype(np.uint8), mask=c.mask, margin=c.margin, building_id=c.building_id)


def blur(c: Chip, mode: str, size_or_sigma) -> Chip:
    """Median, box, or gaussian blur of the color channels, edge-replicate borders."""
    if mode in ("median", "box"):
        k = int(size_or_sigma)
        if k < 3 or k % 2 == 0:
            raise ParameterError(f"{mode} blur kernel must be odd and >= 3, got {k}")
        pad = k // 2
        rgb = np.empty_like(c.rgb)
        for ch in range(3):
            padded = np.pad(c.rgb[:, :, ch], pad, mode="edge")
            windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
            if mode == "median":
                rgb[:, :, ch] = np.median(windows, axis=(2, 3)).astype(np.uint8)
            else:
                sums = windows.astype(np.int64).sum(axis=(2, 3))
                rgb[:, :, ch] = np.clip(np.rint(sums / (k * k)), 0, 255).astype(np.uint8)
    elif mode == "gaussian":
        sigma = float(size_or_sigma)
        if sigma <= 0:
            raise ParameterError(f"gaussian blur sigma must be > 0, got {sigma}")
        rgb = np.empty_like(c.rgb)
        for ch in range(3):
            smooth = ndimage.gaussian_filter(c.rgb[:, :, ch].astype(np.float64), sigma, mode="nearest")
            rgb[:, :, ch] = np.clip(np.rint(smooth), 0, 255).astype(np.uint8)
    else:
        raise ParameterError(f"unknown blur mode {mode!r}")
    return Chip(rgb=rgb, mask=c.mask, margin=c.margin, building_id=c.building_id)


def gauss_noise(c: Chip, sigma: float, seed: int) -> Chip:
    """Add zero-mean gaussian noise per color sample; mask untouched."""
    if sigma < 0:
        raise ParameterError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return c
    rng = np.random.default_rng(seed)
    noisy = c.rgb.astype(np.float64) + rng.normal(0.0, sigma, size=c.rgb.shape)
    return Chip(
        rgb=np.clip(np.rint(noisy), 0, 255).astype(np.uint8),
        mask=c.mask,
        margin=c.margin,
        building_id=c.building_id,
    )


def elastic_transform(c: Chip, alpha: float, sigma: float, seed: int) -> Chip:
    """Smoothed random displacement field, bilinear resample with edge clamp."""
    if alpha < 0:
        raise ParameterError(f"elastic alpha must be >= 0, got {alpha}")
    if sigma <= 0:
        raise ParameterError(f"elastic sigma must be > 0, got {sigma}")
    if alpha == 0:
        return c
    h, w = c.mask.shape
    rng = np.random.default_rng(seed)
    dx = ndimage.gaussian_filter(rng.uniform(-1.0, 1.0, size=(h, w)), sigma) * alpha
    dy = ndimage.gaussian_filter(rng.uniform(-1.0, 1.0, size=(h, w)), sigma) * alpha
    ys, xs = _identity_grid(h, w)
    return _remap(c, ys + dy, xs + dx)


def grid_distortion(c: Chip, num_steps: int, distort_limit: float, seed: int) -> Chip:
    """Stretch/squeeze a uniform grid cell-by-cell; boundary stays fixed."""
    if num_steps < 2:
        raise ParameterError(f"grid num_steps must be >= 2, got {num_steps}")
    if not 0.0 <= distort_limit < 1.0:
        raise ParameterError(f"grid distort_limit must be in [0, 1), got {distort_limit}")
    if distort_limit == 0.0:
        return c
    h, w = c.mask.shape
    rng = np.random.default_rng(seed)

    def axis_map(length: int) -> np.ndarray:
        span = float(length - 1)
        nodes_src = np.linspace(0.0, span, num_steps + 1)
        factors = rng.uniform(1.0 - distort_limit, 1.0 + distort_limit, size=num_steps)
        lengths = np.diff(nodes_src) * factors
        nodes_dst = np.concatenate([[0.0], np.cumsum(lengths)])
        nodes_dst *= span / nodes_dst[-1]
        return np.interp(np.arange(length, dtype=np.float64), nodes_dst, nodes_src)

    src_x = axis_map(w)
    src_y = axis_map(h)
    ys = np.broadcast_to(src_y[:, None], (h, w))
    xs = np.broadcast_to(src_x[None, :], (h, w))
    return _remap(c, ys, xs)


def optical_distortion(c: Chip, k: float) -> Chip:
    """Radial remap r -> r * (1 + k * (r/R)^2) about the chip center."""
    if not abs(k) < 1.0:
        raise ParameterError(f"optical distortion strength must satisfy |k| < 1, got {k}")
    if k == 0.0:
        return c
    h, w = c.mask.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    radius = np.hypot(cy, cx)
    ys, xs = _identity_grid(h, w)
    dy = ys - cy
    dx = xs - cx
    r = np.hypot(dy, dx)
    scale = 1.0 + k * (r / radius) ** 2
    return _remap(c, cy + dy * scale, cx + dx * scale)


def crop_margin(c: Chip, margins: tuple[int, int, int, int]) -> Chip:
    """Cut (left, right, top, bottom) pixels off the chip, no resize."""
    left, right, top, bottom = margins
    if min(margins) < 0:
        raise ParameterError(f"crop margins must be >= 0, got {margins}")
    w = c.width - left - right
    h = c.height - top - bottom
    if w < 1 or h < 1:
        raise ParameterError(f"crop {margins} empties the {c.width}x{c.height} chip")
    rgb = c.rgb[top : c.height - bottom, left : c.width - right]
    mask = c.mask[top : c.height - bottom, left : c.width - right]
    return Chip(rgb=np.ascontiguousarray(rgb), mask=np.ascontiguousarray(mask), margin=c.margin, building_id=c.building_id)


def resize_chip(c: Chip, size: int) -> Chip:
    """Bilinear resize of rgb and mask to size x size; mask re-thresholded."""
    if size < 1:
        raise ParameterError(f"resize target must be >= 1, got {size}")
    ys = (np.arange(size, dtype=np.float64) + 0.5) * (c.height / size) - 0.5
    xs = (np.arange(size, dtype=np.float64) + 0.5) * (c.width / size) - 0.5
    grid_y = np.broadcast_to(ys[:, None], (size, size))
    grid_x = np.broadcast_to(xs[None, :], (size, size))
    return _remap(c, grid_y, grid_x)


def random_crop_margin(c: Chip, margins: tuple[int, int, int, int], output_size: int) -> Chip:
    """Margin crop followed by resize to the network input size.

    Margin values are pixels removed per side relative to the margin stored at
    extraction; the chip must have been extracted with at least that margin so
    the roof mask survives. Raises :class:`ParameterError` when the crop would
    empty the window or erase the mask.
    """
    cropped = crop_margin(c, margins)
    if not (cropped.mask == 255).any():
        raise ParameterError(f"crop {margins} removed every mask pixel of chip {c.building_id!r}")
    return resize_chip(cropped, output_size)


def mask_jitter(c: Chip, shift: tuple[int, int], angle_deg: float) -> Chip:
    """Shift and rotate only the mask channel, simulating sloppy annotation.

    Rotation is about the mask centroid; resampling is bilinear with a 128
    threshold. The color channels pass through bit-identical.
    """
    dx, dy = shift
    if dx == 0 and dy == 0 and angle_deg == 0.0:
        return c
    on = np.argwhere(c.mask == 255)
    if len(on) == 0:
        return c
    cy, cx = on.mean(axis=0)
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    h, w = c.mask.shape
    ys, xs = _identity_grid(h, w)
    # inverse map: undo the shift, then rotate by -theta about the centroid
    ry = ys - dy - cy
    rx = xs - dx - cx
    src_y = cy + (sin_t * rx + cos_t * ry)
    src_x = cx + (cos_t * rx - sin_t * ry)
    mask = _threshold_mask(_bilinear(c.mask.astype(np.float64), src_y, src_x))
    return Chip(rgb=c.rgb, mask=mask, margin=c.margin, building_id=c.building_id)


def augment_pipeline(c: Chip, cfg: AugmentConfig, seed: int) -> Chip:
    """Apply the full augmentation stack with per-call determinism.

    Transform applications are sampled from ``cfg.probabilities`` using a
    generator seeded with ``seed``; identical (chip, config, seed) triples
    produce bit-identical outputs.
    """
    rng = np.random.default_rng(seed)
    prob = cfg.probabilities
    out = c

    if rng.random() < prob["dihedral"]:
        out = dihedral(out, int(rng.integers(8)))
    if rng.random() < prob["rgb_shift"]:
        lim = cfg.rgb_shift_limit
        d = tuple(int(v) for v in rng.integers(-lim, lim + 1, size=3))
        out = rgb_shift(out, d)
    if rng.random() < prob["blur"]:
        mode = ("median", "box", "gaussian")[int(rng.integers(3))]
        if mode == "gaussian":
            param = float(rng.uniform(*cfg.blur_sigma_range))
        else:
            lo, hi = cfg.blur_kernel_range
            odd = [k for k in range(lo, hi + 1) if k % 2 == 1 and k >= 3]
            if not odd:
                raise ParameterError(f"blur_kernel_range {cfg.blur_kernel_range} holds no odd kernel >= 3")
            param = odd[int(rng.integers(len(odd)))]
        out = blur(out, mode, param)
    if rng.random() < prob["noise"]:
        sigma = float(rng.uniform(*cfg.noise_sigma_range))
        out = gauss_noise(out, sigma, seed=int(rng.integers(2**63)))
    if rng.random() < prob["elastic"]:
        out = elastic_transform(out, cfg.elastic_alpha, cfg.elastic_sigma, seed=int(rng.integers(2**63)))
    if rng.random() < prob["grid"]:
        out = grid_distortion(out, cfg.grid_num_steps, cfg.grid_distort_limit, seed=int(rng.integers(2**63)))
    if rng.random() < prob["optical"]:
        out = optical_distortion(out, float(rng.uniform(-cfg.optical_limit, cfg.optical_limit)))
    if rng.random() < prob["mask_jitter"]:
        ms = cfg.mask_jitter_max_shift_px
        dx, dy = (int(v) for v in rng.integers(-ms, ms + 1, size=2))
        angle = float(rng.uniform(-cfg.mask_jitter_max_angle_deg, cfg.mask_jitter_max_angle_deg))
        out = mask_jitter(out, (dx, dy), angle)

    lo, hi = cfg.crop_margin_range
    margins = tuple(int(v) for v in rng.integers(lo, hi + 1, size=4))
    return random_crop_margin(out, margins, cfg.output_size)


def contact_sheet(chips: list[Chip], cols: int, pad: int = 2) -> np.ndarray:
    """Tile chip RGBs into one (H, W, 3) uint8 array for preview output."""
    if not chips:
        raise ParameterError("contact sheet needs at least one chip")
    if cols < 1:
        raise ParameterError(f"contact sheet needs cols >= 1, got {cols}")
    ch, cw = chips[0].height, chips[0].width
    rows = (len(chips) + cols - 1) // cols
    sheet = np.zeros((rows * (ch + pad) - pad, cols * (cw + pad) - pad, 3), dtype=np.uint8)
    for i, chip in enumerate(chips):
        if chip.rgb.shape != (ch, cw, 3):
            raise ParameterError("contact sheet chips must share one size")
        r, col = divmod(i, cols)
        y, x = r * (ch + pad), col * (cw + pad)
        sheet[y : y + ch, x : x + cw] = chip.rgb
    return sheet
