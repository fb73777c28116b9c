"""Building footprints: a GeoJSON subset parser and exact polygon geometry.

The unit of classification is a :class:`Building`: a roof polygon on one map,
optionally labeled with one of the five roof-material classes. Coordinates
are planar pixel coordinates of the source map image; maps never share a
frame, so no geodesic math appears anywhere.

Only the exterior ring of each polygon is read. Interior rings (holes) are
ignored with a warning; roof footprints do not have holes in practice.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

from roofstack.errors import FeatureError, ParseError

# Fixed class order; this drives the column order of every downstream matrix.
CLASS_NAMES: tuple[str, ...] = (
    "concrete_cement",
    "healthy_metal",
    "incomplete",
    "irregular_metal",
    "other",
)

N_CLASSES = len(CLASS_NAMES)
MAX_MAPS = 7

_CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}


@dataclass(frozen=True)
class Point:
    x: float
    y: float


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given by its exterior ring.

    The first vertex is not repeated at the end; :func:`parse_feature_collection`
    strips a closing duplicate. At least three vertices, all finite.
    """

    exterior: tuple[Point, ...]

    def __post_init__(self):
        if len(self.exterior) < 3:
            raise FeatureError(f"polygon needs >= 3 vertices, got {len(self.exterior)}")
        for p in self.exterior:
            if not (math.isfinite(p.x) and math.isfinite(p.y)):
                raise FeatureError(f"non-finite polygon vertex ({p.x}, {p.y})")


@dataclass(frozen=True)
class Building:
    """One roof: polygon plus optional class label.

    ``verified`` is False for buildings whose label came from an automatic,
    non-validated pass; those are used for training only, never validation.
    """

    id: str
    map_id: int
    polygon: Polygon
    label: int | None = None
    verified: bool = True

    def __post_init__(self):
        if not 0 <= self.map_id < MAX_MAPS:
            raise FeatureError(f"map_id {self.map_id} outside [0, {MAX_MAPS})")
        if self.label is not None and self.label not in range(N_CLASSES):
            raise FeatureError(f"label {self.label} outside [0, {N_CLASSES}) for building {self.id!r}")

    @property
    def key(self) -> tuple[int, str]:
        """(map_id, id); ids are unique only within a map."""
        return (self.map_id, self.id)


@dataclass(frozen=True)
class BuildingSet:
    buildings: tuple[Building, ...]
    class_names: tuple[str, ...] = CLASS_NAMES

    def __post_init__(self):
        seen: set[tuple[int, str]] = set()
        for b in self.buildings:
            if b.key in seen:
                raise FeatureError(f"duplicate building id {b.id!r} on map {b.map_id}")
            seen.add(b.key)

    def __len__(self) -> int:
        return len(self.buildings)

    def __iter__(self):
        return iter(self.buildings)

    def labeled(self) -> tuple[Building, ...]:
        return tuple(b for b in self.buildings if b.label is not None)

    def merged(self, other: "BuildingSet") -> "BuildingSet":
        return BuildingSet(self.buildings + other.buildings)


def parse_feature_collection(text: str, map_id: int) -> BuildingSet:
    """Parse the GeoJSON subset used for roof annotations.

    Each feature must be a single-ring Polygon with an ``id`` property and may
    carry ``roof_material`` (one of :data:`CLASS_NAMES`) and ``verified``.
    A closing duplicate vertex is removed. A missing or null ``roof_material``
    leaves the building unlabeled; an unrecognized material string is an error.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("document is not a GeoJSON FeatureCollection")

    buildings: list[Building] = []
    for feature in doc.get("features", []):
        buildings.append(_parse_feature(feature, map_id))
    return BuildingSet(tuple(buildings))


def _parse_feature(feature: dict, map_id: int) -> Building:
    props = feature.get("properties") or {}
    fid = props.get("id")
    if fid is None:
        raise FeatureError("feature without an 'id' property")
    fid = str(fid)

    geometry = feature.get("geometry") or {}
    gtype = geometry.get("type")
    if gtype != "Polygon":
        raise FeatureError(f"feature {fid!r}: geometry type {gtype!r}, expected 'Polygon'")
    rings = geometry.get("coordinates")
    if not rings:
        raise FeatureError(f"feature {fid!r}: polygon has no rings")
    if len(rings) > 1:
        warnings.warn(f"feature {fid!r}: {len(rings) - 1} interior ring(s) ignored", stacklevel=3)

    exterior = [Point(float(x), float(y)) for x, y in rings[0]]
    if len(exterior) >= 2 and exterior[0] == exterior[-1]:
        exterior = exterior[:-1]

    material = props.get("roof_material")
    if material is None or material == "":
        label = None
    else:
        if material not in _CLASS_INDEX:
            raise FeatureError(f"feature {fid!r}: unknown roof material {material!r}")
        label = _CLASS_INDEX[material]

    verified = bool(props.get("verified", True))
    return Building(id=fid, map_id=map_id, polygon=Polygon(tuple(exterior)), label=label, verified=verified)


def serialize_feature_collection(bs: BuildingSet) -> str:
    """Inverse of :func:`parse_feature_collection`; round trips exactly."""
    features = []
    for b in bs.buildings:
        ring = [[p.x, p.y] for p in b.polygon.exterior]
        ring.append(ring[0])
        props: dict = {"id": b.id, "verified": b.verified}
        if b.label is not None:
            props["roof_material"] = CLASS_NAMES[b.label]
        features.append(
            {
                "type": "Feature",
                "properties": props,
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            }
        )
    return json.dumps({"type": "FeatureCollection", "features": features}, sort_keys=True)


def polygon_area(p: Polygon) -> float:
    """Shoelace area, orientation-independent (absolute value).

    Accumulated with fsum so reversing the vertex order flips only the sign,
    never the magnitude.
    """
    pts = p.exterior
    n = len(pts)
    acc = math.fsum(pts[i].x * pts[(i + 1) % n].y - pts[(i + 1) % n].x * pts[i].y for i in range(n))
    return abs(acc) / 2.0


def polygon_centroid(p: Polygon) -> Point:
    """Area-weighted centroid; falls back to the vertex mean when the area degenerates."""
    pts = p.exterior
    n = len(pts)
    crosses = [pts[i].x * pts[(i + 1) % n].y - pts[(i + 1) % n].x * pts[i].y for i in range(n)]
    acc = math.fsum(crosses)
    if abs(acc) < 1e-12:
        return Point(
            math.fsum(q.x for q in pts) / n,
            math.fsum(q.y for q in pts) / n,
        )
    cx = math.fsum((pts[i].x + pts[(i + 1) % n].x) * crosses[i] for i in range(n))
    cy = math.fsum((pts[i].y + pts[(i + 1) % n].y) * crosses[i] for i in range(n))
    return Point(cx / (3.0 * acc), cy / (3.0 * acc))


def polygon_bbox(p: Polygon) -> tuple[Point, Point]:
    """Componentwise (min, max) over the vertices."""
    xs = [q.x for q in p.exterior]
    ys = [q.y for q in p.exterior]
    return Point(min(xs), min(ys)), Point(max(xs), max(ys))
