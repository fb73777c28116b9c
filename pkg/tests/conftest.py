import numpy as np
import pytest

from roofstack.geodata import Building, BuildingSet, Point, Polygon
from roofstack.raster import Chip


def make_chip(height=40, width=40, margin=10, seed=0, building_id="b0"):
    rng = np.random.default_rng(seed)
    rgb = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    mask = np.zeros((height, width), dtype=np.uint8)
    mask[margin : height - margin, margin : width - margin] = 255
    return Chip(rgb=rgb, mask=mask, margin=margin, building_id=building_id)


def square_building(x, y, side, map_id=0, bid="b0", label=None, verified=True):
    poly = Polygon(
        (
            Point(x, y),
            Point(x + side, y),
            Point(x + side, y + side),
            Point(x, y + side),
        )
    )
    return Building(id=bid, map_id=map_id, polygon=poly, label=label, verified=verified)


def random_building_set(n, seed, map_ids=(0,), span=1000.0, label_fraction=1.0, verified=True):
    rng = np.random.default_rng(seed)
    buildings = []
    for i in range(n):
        map_id = int(map_ids[i % len(map_ids)])
        x = float(rng.uniform(0, span))
        y = float(rng.uniform(0, span))
        side = float(rng.uniform(4, 20))
        label = int(rng.integers(0, 5)) if rng.random() < label_fraction else None
        buildings.append(
            square_building(x, y, side, map_id=map_id, bid=f"b{i:04d}", label=label, verified=verified)
        )
    return BuildingSet(tuple(buildings))


@pytest.fixture
def chip():
    return make_chip()
