"""Neighbor statistics and second-level feature assembly.

Base-model probabilities only see one roof at a time; these features add what
the surroundings know: materials cluster spatially, map annotators have map-
specific habits, and roof size correlates with material. Everything here is
computed per map (features never mix coordinate frames), with a building's
own label always excluded from its neighborhood statistics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from roofstack.errors import DimensionError, ParameterError
from roofstack.geodata import N_CLASSES, Building, BuildingSet, polygon_area, polygon_centroid


@dataclass(frozen=True)
class FeatureConfig:
    k_neighbors: int = 8
    radii: tuple[float, ...] = (100.0, 300.0, 1000.0)
    normalize_coords: bool = True

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ParameterError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not self.radii or any(r <= 0 for r in self.radii):
            raise ParameterError(f"radii must be positive, got {self.radii}")
        if list(self.radii) != sorted(self.radii):
            raise ParameterError(f"radii must be ascending, got {self.radii}")


class KnnResult(NamedTuple):
    neighbors: list[tuple[Building, float]]
    shortfall: bool


class _MapGrid:
    """Uniform bucket grid over one map's building centroids."""

    def __init__(self, buildings: list[Building]):
        self.buildings = buildings
        self.points = np.array(
            [(polygon_centroid(b.polygon).x, polygon_centroid(b.polygon).y) for b in buildings],
            dtype=np.float64,
        )
        xs, ys = self.points[:, 0], self.points[:, 1]
        self.min_x, self.min_y = float(xs.min()), float(ys.min())
        span = max(float(xs.max()) - self.min_x, float(ys.max()) - self.min_y)
        self.diagonal = math.hypot(float(xs.max()) - self.min_x, float(ys.max()) - self.min_y)
        # aim for O(1) points per cell on uniformly spread data
        self.cell = span / max(math.sqrt(len(buildings)), 1.0)
        if self.cell <= 0.0:
            self.cell = 1.0
        self.cells: dict[tuple[int, int], list[int]] = {}
        for i, (x, y) in enumerate(self.points):
            self.cells.setdefault(self._cell_of(x, y), []).append(i)
        occupied = list(self.cells.keys())
        self.cell_lo = (min(c[0] for c in occupied), min(c[1] for c in occupied))
        self.cell_hi = (max(c[0] for c in occupied), max(c[1] for c in occupied))

    def _cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int((x - self.min_x) // self.cell), int((y - self.min_y) // self.cell))

    def _ring_cells(self, center: tuple[int, int], ring: int):
        cx, cy = center
        if ring == 0:
            yield (cx, cy)
            return
        for dx in range(-ring, ring + 1):
            yield (cx + dx, cy - ring)
            yield (cx + dx, cy + ring)
        for dy in range(-ring + 1, ring):
            yield (cx - ring, cy + dy)
            yield (cx + ring, cy + dy)

    def knn(self, x: float, y: float, k: int, exclude_id: str | None) -> list[tuple[int, float]]:
        center = self._cell_of(x, y)
        # farthest occupied cell bounds the search even for off-grid queries
        max_ring = max(
            abs(self.cell_lo[0] - center[0]),
            abs(self.cell_hi[0] - center[0]),
            abs(self.cell_lo[1] - center[1]),
            abs(self.cell_hi[1] - center[1]),
        )
        found: list[tuple[float, str, int]] = []
        for ring in range(max_ring + 1):
            for cell in self._ring_cells(center, ring):
                for i in self.cells.get(cell, ()):
                    b = self.buildings[i]
                    if exclude_id is not None and b.id == exclude_id:
                        continue
                    d = math.hypot(self.points[i, 0] - x, self.points[i, 1] - y)
                    found.append((d, b.id, i))
            # unvisited cells sit at chebyshev > ring, hence >= ring * cell away;
            # strict < keeps distance ties eligible for the id tie-break
            if len(found) >= k:
                found.sort()
                if found[k - 1][0] < ring * self.cell:
                    break
        found.sort()
        return [(i, d) for d, _, i in found[:k]]

    def within(self, x: float, y: float, r: float, exclude_id: str | None) -> list[tuple[int, float]]:
        c0 = self._cell_of(x - r, y - r)
        c1 = self._cell_of(x + r, y + r)
        out: list[tuple[float, str, int]] = []
        for cx in range(max(c0[0], self.cell_lo[0]), min(c1[0], self.cell_hi[0]) + 1):
            for cy in range(max(c0[1], self.cell_lo[1]), min(c1[1], self.cell_hi[1]) + 1):
                for i in self.cells.get((cx, cy), ()):
                    b = self.buildings[i]
                    if exclude_id is not None and b.id == exclude_id:
                        continue
                    d = math.hypot(self.points[i, 0] - x, self.points[i, 1] - y)
                    if d <= r:
                        out.append((d, b.id, i))
        out.sort()
        return [(i, d) for d, _, i in out]


class SpatialIndex:
    """Per-map centroid index; queries never cross map boundaries."""

    def __init__(self, bs: BuildingSet):
        if len(bs) == 0:
            raise ParameterError("spatial index needs a nonempty building set")
        by_map: dict[int, list[Building]] = {}
        for b in bs:
            by_map.setdefault(b.map_id, []).append(b)
        self.grids = {map_id: _MapGrid(blds) for map_id, blds in by_map.items()}

    def __len__(self) -> int:
        return sum(len(g.buildings) for g in self.grids.values())


def build_index(bs: BuildingSet) -> SpatialIndex:
    return SpatialIndex(bs)


def knn(idx: SpatialIndex, b: Building, k: int) -> KnnResult:
    """The k nearest same-map buildings by centroid distance, self excluded.

    Ties break by ascending building id. When fewer than k neighbors exist the
    result carries all of them and ``shortfall`` is True.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    grid = idx.grids.get(b.map_id)
    if grid is None:
        return KnnResult([], True)
    c = polygon_centroid(b.polygon)
    pairs = grid.knn(c.x, c.y, k, exclude_id=b.id)
    neighbors = [(grid.buildings[i], d) for i, d in pairs]
    return KnnResult(neighbors, shortfall=len(neighbors) < k)


def radius_query(idx: SpatialIndex, b: Building, r: float) -> list[Building]:
    """Same-map buildings within distance r inclusive, self excluded."""
    if r <= 0:
        raise ParameterError(f"radius must be > 0, got {r}")
    grid = idx.grids.get(b.map_id)
    if grid is None:
        return []
    c = polygon_centroid(b.polygon)
    return [grid.buildings[i] for i, _ in grid.within(c.x, c.y, r, exclude_id=b.id)]


def label_distribution(neighbors: list[Building]) -> tuple[np.ndarray, int]:
    """Class histogram of the labeled neighbors, normalized to sum 1.

    Unlabeled neighbors are skipped; with no labeled neighbor at all the
    distribution falls back to uniform and the labeled count is 0.
    """
    counts = np.zeros(N_CLASSES, dtype=np.float64)
    labeled = 0
    for b in neighbors:
        if b.label is not None:
            counts[b.label] += 1.0
            labeled += 1
    if labeled == 0:
        return np.full(N_CLASSES, 1.0 / N_CLASSES), 0
    return counts / labeled, labeled


def feature_columns(oof_names: list[str], cfg: FeatureConfig) -> list[str]:
    """Column names in the exact order produced by :func:`assemble_features`."""
    cols: list[str] = []
    for name in oof_names:
        cols.extend(f"oof_{name}_p{c}" for c in range(N_CLASSES))
    cols.extend(f"map_{m}" for m in range(7))
    cols.append("area")
    cols.append("log_area")
    cols.extend(["centroid_x", "centroid_y"])
    for rank in range(1, cfg.k_neighbors + 1):
        cols.extend(
            [f"knn{rank}_distance", f"knn{rank}_area", f"knn{rank}_dx", f"knn{rank}_dy"]
        )
    cols.extend(f"knn_label_dist_{c}" for c in range(N_CLASSES))
    for r in cfg.radii:
        cols.extend(f"radius{r:g}_label_dist_{c}" for c in range(N_CLASSES))
    for r in cfg.radii:
        cols.append(f"radius{r:g}_labeled_count")
    return cols


def assemble_features(
    bs: BuildingSet,
    idx: SpatialIndex,
    oof: dict[str, np.ndarray],
    cfg: FeatureConfig,
) -> tuple[np.ndarray, list[str]]:
    """One feature row per building, in the building set's order.

    ``oof`` maps base-model name to an (n_buildings, 5) probability matrix
    aligned with ``bs``. Missing neighbor slots are filled with a distance
    sentinel of twice the map diagonal and zeros elsewhere, so rows are never
    NaN. Output is deterministic for a given (set, oof, config).
    """
    n = len(bs)
    names = list(oof.keys())
    for name in names:
        mat = oof[name]
        if mat.shape != (n, N_CLASSES):
            raise DimensionError(f"oof matrix {name!r} has shape {mat.shape}, expected ({n}, {N_CLASSES})")

    cols = feature_columns(names, cfg)
    out = np.zeros((n, len(cols)), dtype=np.float64)

    # per-map centroid bbox for coordinate normalization
    span: dict[int, tuple[float, float, float, float]] = {}
    for map_id, grid in idx.grids.items():
        xs, ys = grid.points[:, 0], grid.points[:, 1]
        span[map_id] = (float(xs.min()), float(xs.max()), float(ys.min()), float(ys.max()))

    for row, b in enumerate(bs):
        c = polygon_centroid(b.polygon)
        area = polygon_area(b.polygon)
        grid = idx.grids[b.map_id]
        sentinel = 2.0 * grid.diagonal

        vals: list[float] = []
        for name in names:
            vals.extend(float(v) for v in oof[name][row])
        onehot = [0.0] * 7
        onehot[b.map_id] = 1.0
        vals.extend(onehot)
        vals.append(area)
        vals.append(math.log(max(area, 1e-12)))
        if cfg.normalize_coords:
            x0, x1, y0, y1 = span[b.map_id]
            vals.append((c.x - x0) / (x1 - x0) if x1 > x0 else 0.5)
            vals.append((c.y - y0) / (y1 - y0) if y1 > y0 else 0.5)
        else:
            vals.extend([c.x, c.y])

        result = knn(idx, b, cfg.k_neighbors)
        for rank in range(cfg.k_neighbors):
            if rank < len(result.neighbors):
                nb, dist = result.neighbors[rank]
                nc = polygon_centroid(nb.polygon)
                vals.extend([dist, polygon_area(nb.polygon), nc.x - c.x, nc.y - c.y])
            else:
                vals.extend([sentinel, 0.0, 0.0, 0.0])
        knn_dist, _ = label_distribution([nb for nb, _ in result.neighbors])
        vals.extend(float(v) for v in knn_dist)

        radius_counts: list[float] = []
        for r in cfg.radii:
            dist_vec, count = label_distribution(radius_query(idx, b, r))
            vals.extend(float(v) for v in dist_vec)
            radius_counts.append(float(count))
        vals.extend(radius_counts)

        out[row, :] = vals

    return out, cols


def write_features_csv(path, bs: BuildingSet, matrix: np.ndarray, cols: list[str]) -> None:
    """CSV with identity columns and a deterministic float encoding."""
    lines = ["map_id,building_id," + ",".join(cols)]
    for b, row in zip(bs, matrix):
        lines.append(f"{b.map_id},{b.id}," + ",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_features_sidecar(path, cfg: FeatureConfig, cols: list[str], oof_names: list[str]) -> None:
    meta = {
        "config": {
            "k_neighbors": cfg.k_neighbors,
            "radii": list(cfg.radii),
            "normalize_coords": cfg.normalize_coords,
        },
        "oof_models": oof_names,
        "columns": cols,
        "missing_neighbor_sentinel": "distance = 2 * map diagonal, area/dx/dy = 0",
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")
