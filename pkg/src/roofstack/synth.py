"""Seeded synthetic maps and a noisy oracle base model.

The generator produces what real ingestion would: a map image, building
polygons with labels, and a held-out truth table. Labels are spatially
correlated (cluster-dominant classes with a noise flip), because that is the
property the neighbor features exploit; roofs are painted from a per-class
palette with per-building color jitter, so a mean-color readout is
informative but imperfect. The oracle base model reads masked pixels only,
which makes mask bugs show up as accuracy drops downstream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from roofstack.errors import CapacityError, ParameterError
from roofstack.geodata import N_CLASSES, Building, BuildingSet, Point, Polygon
from roofstack.raster import Chip, ImageRGB, rasterize_mask
from roofstack.seeds import derive_seed
from roofstack.stacking import BaseModel

# (mean RGB, per-building sigma); means overlap enough that nearest-mean
# readout of a jittered roof errs at a useful rate
DEFAULT_PALETTE: tuple[tuple[tuple[int, int, int], float], ...] = (
    ((178, 178, 170), 26.0),
    ((148, 158, 182), 26.0),
    ((120, 110, 92), 26.0),
    ((142, 122, 102), 26.0),
    ((172, 96, 84), 26.0),
)


@dataclass(frozen=True)
class SynthParams:
    map_size_px: int = 1600
    n_buildings: int = 300
    n_label_clusters: int = 6
    label_noise: float = 0.05
    class_prior: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    building_size_range: tuple[int, int] = (16, 48)
    texture_palette: tuple[tuple[tuple[int, int, int], float], ...] = DEFAULT_PALETTE
    pixel_noise_sigma: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.map_size_px < 32 or self.n_buildings < 1 or self.n_label_clusters < 1:
            raise ParameterError("map size, building count, and cluster count must be positive")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ParameterError(f"label_noise must be in [0, 1], got {self.label_noise}")
        if len(self.class_prior) != N_CLASSES or abs(sum(self.class_prior) - 1.0) > 1e-9:
            raise ParameterError(f"class_prior must be {N_CLASSES} values summing to 1")
        lo, hi = self.building_size_range
        if lo < 4 or hi < lo:
            raise ParameterError(f"building_size_range must satisfy 4 <= lo <= hi, got {self.building_size_range}")
        if len(self.texture_palette) != N_CLASSES:
            raise ParameterError(f"texture_palette needs {N_CLASSES} entries")


@dataclass(frozen=True)
class OracleParams:
    confusion_level: float = 0.3
    seed: int = 0
    palette: tuple[tuple[tuple[int, int, int], float], ...] = DEFAULT_PALETTE

    def __post_init__(self):
        if not 0.0 <= self.confusion_level <= 1.0:
            raise ParameterError(f"confusion_level must be in [0, 1], got {self.confusion_level}")


def generate_map(p: SynthParams, map_id: int = 0) -> tuple[ImageRGB, BuildingSet]:
    """Place non-overlapping quadrilateral roofs and paint them by class.

    Fully labeled output; callers hide labels afterwards. Bit-identical for a
    given (params, map_id).
    """
    rng = np.random.default_rng(derive_seed(p.seed, "map", map_id))
    size = p.map_size_px

    pixels = np.clip(
        rng.normal(0.0, 10.0, size=(size, size, 3)) + np.array([72.0, 92.0, 62.0]).reshape(1, 1, 3),
        0,
        255,
    ).astype(np.uint8)

    # rejection-sampled layout; gap keeps bboxes disjoint
    gap = 3
    boxes = np.zeros((p.n_buildings, 4), dtype=np.int64)  # x, y, w, h
    count = 0
    attempts_left = 60 * p.n_buildings
    lo, hi = p.building_size_range
    while count < p.n_buildings and attempts_left > 0:
        attempts_left -= 1
        w = int(rng.integers(lo, hi + 1))
        h = int(rng.integers(lo, hi + 1))
        x = int(rng.integers(gap, size - w - gap))
        y = int(rng.integers(gap, size - h - gap))
        bx, by, bw, bh = boxes[:count, 0], boxes[:count, 1], boxes[:count, 2], boxes[:count, 3]
        overlap = (x - gap < bx + bw) & (bx < x + w + gap) & (y - gap < by + bh) & (by < y + h + gap)
        if not overlap.any():
            boxes[count] = (x, y, w, h)
            count += 1
    placed = [tuple(int(v) for v in row) for row in boxes[:count]]
    if len(placed) < p.n_buildings:
        raise CapacityError(
            f"placed only {len(placed)} of {p.n_buildings} buildings on a {size}px map; "
            "shrink buildings or grow the map"
        )

    cluster_xy = rng.uniform(0, size, size=(p.n_label_clusters, 2))
    cluster_class = rng.choice(N_CLASSES, size=p.n_label_clusters, p=np.asarray(p.class_prior))

    buildings: list[Building] = []
    for i, (x, y, w, h) in enumerate(placed):
        jx = rng.uniform(0.0, 0.15 * w, size=4)
        jy = rng.uniform(0.0, 0.15 * h, size=4)
        poly = Polygon(
            (
                Point(x + jx[0], y + jy[0]),
                Point(x + w - jx[1], y + jy[1]),
                Point(x + w - jx[2], y + h - jy[2]),
                Point(x + jx[3], y + h - jy[3]),
            )
        )
        cx, cy = x + w / 2.0, y + h / 2.0
        d2 = (cluster_xy[:, 0] - cx) ** 2 + (cluster_xy[:, 1] - cy) ** 2
        label = int(cluster_class[int(np.argmin(d2))])
        if rng.random() < p.label_noise:
            label = int(rng.integers(N_CLASSES))

        mean_rgb, building_sigma = p.texture_palette[label]
        base = rng.normal(np.asarray(mean_rgb, dtype=np.float64), building_sigma)
        mask = rasterize_mask(poly, Point(float(x), float(y)), w, h)
        noise = rng.normal(0.0, p.pixel_noise_sigma, size=(h, w, 3))
        patch = np.clip(base.reshape(1, 1, 3) + noise, 0, 255).astype(np.uint8)
        region = pixels[y : y + h, x : x + w]
        on = mask == 255
        region[on] = patch[on]

        buildings.append(Building(id=f"b{i:05d}", map_id=map_id, polygon=poly, label=label, verified=True))

    return ImageRGB(pixels), BuildingSet(tuple(buildings))


def _chip_digest(chip: Chip) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(chip.rgb.tobytes())
    h.update(chip.mask.tobytes())
    return int.from_bytes(h.digest(), "little")


def oracle_model(p: OracleParams) -> BaseModel:
    """A stand-in first-level model with controllable noise.

    Reads the mean masked color, snaps it to the nearest palette class, and
    mixes the resulting one-hot with a random simplex point:
    (1 - c) * onehot + c * noise. Deterministic per (chip, seed).
    """
    means = np.asarray([m for m, _ in p.palette], dtype=np.float64)

    def predict(chip: Chip) -> np.ndarray:
        on = chip.mask == 255
        pix = chip.rgb[on] if on.any() else chip.rgb.reshape(-1, 3)
        mean = pix.astype(np.float64).mean(axis=0)
        cls = int(np.argmin(((means - mean) ** 2).sum(axis=1)))
        onehot = np.zeros(N_CLASSES, dtype=np.float64)
        onehot[cls] = 1.0
        rng = np.random.default_rng(derive_seed(p.seed, "oracle", _chip_digest(chip)))
        noise = rng.dirichlet(np.ones(N_CLASSES))
        probs = (1.0 - p.confusion_level) * onehot + p.confusion_level * noise
        return probs / probs.sum()

    name = f"oracle_c{p.confusion_level:g}_s{p.seed}"
    return BaseModel(name=name, predict_chip=predict)


def hide_labels(bs: BuildingSet, test_fraction: float, seed: int) -> tuple[BuildingSet, dict[tuple[int, str], int]]:
    """Strip labels from a per-map random subset; returns (visible set, truth).

    Mirrors how contest maps were partially annotated: hiding happens within
    each map independently, with no spatial criterion.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_map: dict[int, list[Building]] = {}
    for b in bs:
        if b.label is not None:
            by_map.setdefault(b.map_id, []).append(b)

    hidden: set[tuple[int, str]] = set()
    truth: dict[tuple[int, str], int] = {}
    for map_id in sorted(by_map):
        labeled = sorted(by_map[map_id], key=lambda b: b.id)
        rng = np.random.default_rng(derive_seed(seed, "hide", map_id))
        n_hide = int(round(test_fraction * len(labeled)))
        chosen = rng.choice(len(labeled), size=n_hide, replace=False)
        for idx in chosen:
            b = labeled[int(idx)]
            hidden.add(b.key)
            truth[b.key] = b.label  # type: ignore[assignment]

    visible = tuple(replace(b, label=None) if b.key in hidden else b for b in bs)
    return BuildingSet(visible), truth
