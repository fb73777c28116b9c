import numpy as np
import pytest

from roofstack.errors import DimensionError, ParameterError
from roofstack.geodata import BuildingSet, polygon_centroid
from roofstack.spatial_features import (
    FeatureConfig,
    assemble_features,
    build_index,
    feature_columns,
    knn,
    label_distribution,
    radius_query,
)
from tests.conftest import random_building_set, square_building


def centroid_of(b):
    c = polygon_centroid(b.polygon)
    return c.x, c.y


def brute_force_knn(bs, query, k):
    """Exhaustive sort by (distance, id), same-map, self excluded."""
    qx, qy = centroid_of(query)
    rows = []
    for b in bs:
        if b.map_id != query.map_id or b.id == query.id:
            continue
        x, y = centroid_of(b)
        rows.append((float(np.hypot(x - qx, y - qy)), b.id))
    rows.sort()
    return rows[:k]


def brute_force_radius(bs, query, r):
    qx, qy = centroid_of(query)
    out = []
    for b in bs:
        if b.map_id != query.map_id or b.id == query.id:
            continue
        x, y = centroid_of(b)
        if np.hypot(x - qx, y - qy) <= r:
            out.append(b.id)
    return sorted(out)


class TestKnn:
    def test_collinear_hand_case(self):
        buildings = tuple(
            square_building(x, 0.0, 2.0, bid=f"b{i}", label=0) for i, x in enumerate((0.0, 1.0, 5.0))
        )
        bs = BuildingSet(buildings)
        idx = build_index(bs)
        result = knn(idx, buildings[0], 2)
        assert [round(d, 9) for _, d in result.neighbors] == [1.0, 5.0]
        assert not result.shortfall

    def test_self_excluded(self):
        bs = random_building_set(20, seed=1)
        idx = build_index(bs)
        for b in bs:
            result = knn(idx, b, 5)
            assert all(nb.id != b.id for nb, _ in result.neighbors)

    def test_shortfall_flag(self):
        bs = random_building_set(3, seed=2)
        idx = build_index(bs)
        result = knn(idx, bs.buildings[0], 10)
        assert result.shortfall and len(result.neighbors) == 2

    def test_matches_brute_force(self):
        bs = random_building_set(500, seed=3, map_ids=(0, 1))
        idx = build_index(bs)
        rng = np.random.default_rng(4)
        queries = rng.choice(len(bs), size=100, replace=False)
        for qi in queries:
            q = bs.buildings[int(qi)]
            got = [(round(d, 9), nb.id) for nb, d in knn(idx, q, 8).neighbors]
            want = [(round(d, 9), bid) for d, bid in brute_force_knn(bs, q, 8)]
            assert got == want

    def test_distance_tie_breaks_by_id(self):
        center = square_building(100, 100, 2, bid="center", label=0)
        east = square_building(110, 100, 2, bid="east", label=0)
        west = square_building(90, 100, 2, bid="west", label=0)
        bs = BuildingSet((center, east, west))
        idx = build_index(bs)
        result = knn(idx, center, 1)
        assert result.neighbors[0][0].id == "east"


class TestRadiusQuery:
    def test_empty_below_nearest(self):
        bs = random_building_set(10, seed=5, span=1000)
        idx = build_index(bs)
        assert radius_query(idx, bs.buildings[0], 1e-6) == []

    def test_boundary_inclusive(self):
        a = square_building(0, 0, 2, bid="a", label=0)
        b = square_building(3, 4, 2, bid="b", label=0)  # distance exactly 5
        idx = build_index(BuildingSet((a, b)))
        hits = radius_query(idx, a, 5.0)
        assert [h.id for h in hits] == ["b"]

    def test_matches_brute_force(self):
        bs = random_building_set(300, seed=6, map_ids=(0, 1))
        idx = build_index(bs)
        rng = np.random.default_rng(7)
        for qi in rng.choice(len(bs), size=60, replace=False):
            q = bs.buildings[int(qi)]
            for r in (30.0, 120.0, 400.0):
                got = sorted(b.id for b in radius_query(idx, q, r))
                assert got == brute_force_radius(bs, q, r)

    def test_cross_map_isolation(self):
        near0 = square_building(0, 0, 2, map_id=0, bid="a", label=0)
        near1 = square_building(1, 1, 2, map_id=1, bid="b", label=0)
        idx = build_index(BuildingSet((near0, near1)))
        assert radius_query(idx, near0, 1000.0) == []
        assert knn(idx, near0, 1).shortfall


class TestLabelDistribution:
    def test_counting(self):
        buildings = [
            square_building(i * 10, 0, 2, bid=f"b{i}", label=lab) for i, lab in enumerate((1, 1, 3))
        ]
        vec, count = label_distribution(buildings)
        assert count == 3
        np.testing.assert_allclose(vec, [0, 2 / 3, 0, 1 / 3, 0])

    def test_unlabeled_fallback(self):
        buildings = [square_building(i * 10, 0, 2, bid=f"b{i}") for i in range(4)]
        vec, count = label_distribution(buildings)
        assert count == 0
        np.testing.assert_allclose(vec, [0.2] * 5)

    def test_random_histogram(self):
        rng = np.random.default_rng(8)
        labels = [int(v) for v in rng.integers(0, 5, size=20)]
        buildings = [square_building(i * 10, 0, 2, bid=f"b{i}", label=lab) for i, lab in enumerate(labels)]
        vec, count = label_distribution(buildings)
        expected = np.bincount(labels, minlength=5) / 20
        np.testing.assert_allclose(vec, expected)
        assert count == 20

    def test_sums_to_one(self):
        rng = np.random.default_rng(9)
        for n in (1, 3, 17):
            labels = [int(v) for v in rng.integers(0, 5, size=n)]
            buildings = [square_building(i * 5, 0, 1, bid=f"b{i}", label=lab) for i, lab in enumerate(labels)]
            vec, _ = label_distribution(buildings)
            assert abs(vec.sum() - 1.0) < 1e-12
            assert (vec >= 0).all()


class TestAssembleFeatures:
    def test_column_count_minimal_config(self):
        bs = BuildingSet((square_building(5, 5, 4, bid="only", label=2),))
        idx = build_index(bs)
        cfg = FeatureConfig(k_neighbors=1, radii=(100.0,))
        oof = {"m": np.full((1, 5), 0.2)}
        matrix, cols = assemble_features(bs, idx, oof, cfg)
        assert len(cols) == 5 + 7 + 1 + 1 + 2 + 4 + 5 + 5 + 1 == 31
        assert matrix.shape == (1, 31)
        assert cols == feature_columns(["m"], cfg)

    def test_deterministic(self):
        bs = random_building_set(40, seed=10, map_ids=(0, 1))
        idx = build_index(bs)
        oof = {"m": np.random.default_rng(11).dirichlet(np.ones(5), size=40)}
        cfg = FeatureConfig(k_neighbors=4, radii=(50.0, 200.0))
        m1, _ = assemble_features(bs, idx, oof, cfg)
        m2, _ = assemble_features(bs, idx, oof, cfg)
        assert np.array_equal(m1, m2)

    def test_shuffle_then_unshuffle_identity(self):
        bs = random_building_set(30, seed=12)
        oof_mat = np.random.default_rng(13).dirichlet(np.ones(5), size=30)
        cfg = FeatureConfig(k_neighbors=3, radii=(100.0,))
        base, _ = assemble_features(bs, build_index(bs), {"m": oof_mat}, cfg)

        rng = np.random.default_rng(14)
        perm = rng.permutation(30)
        shuffled = BuildingSet(tuple(bs.buildings[int(i)] for i in perm))
        shuffled_oof = oof_mat[perm]
        out, _ = assemble_features(shuffled, build_index(shuffled), {"m": shuffled_oof}, cfg)
        unshuffled = np.empty_like(out)
        unshuffled[perm] = out
        assert np.array_equal(unshuffled, base)

    def test_no_nan_with_missing_neighbors(self):
        bs = BuildingSet(
            (
                square_building(0, 0, 4, bid="a", label=1),
                square_building(50, 0, 4, bid="b"),
            )
        )
        idx = build_index(bs)
        cfg = FeatureConfig(k_neighbors=5, radii=(10.0,))
        matrix, cols = assemble_features(bs, idx, {"m": np.full((2, 5), 0.2)}, cfg)
        assert np.isfinite(matrix).all()
        # sentinel distance for empty ranks
        diag = idx.grids[0].diagonal
        k3_dist = cols.index("knn3_distance")
        assert matrix[0, k3_dist] == 2.0 * diag

    def test_map_onehot(self):
        bs = random_building_set(12, seed=15, map_ids=(0, 3))
        idx = build_index(bs)
        cfg = FeatureConfig(k_neighbors=2, radii=(100.0,))
        matrix, cols = assemble_features(bs, idx, {}, cfg)
        for row, b in zip(matrix, bs):
            onehot = row[cols.index("map_0") : cols.index("map_0") + 7]
            assert onehot[b.map_id] == 1.0 and onehot.sum() == 1.0

    def test_misaligned_oof_rejected(self):
        bs = random_building_set(5, seed=16)
        idx = build_index(bs)
        with pytest.raises(DimensionError):
            assemble_features(bs, idx, {"m": np.zeros((4, 5))}, FeatureConfig())

    def test_map_isolation_of_features(self):
        # map 0 features must not change when map 1 buildings move
        set_a = random_building_set(20, seed=17, map_ids=(0,))
        set_b1 = random_building_set(20, seed=18, map_ids=(1,))
        set_b2 = random_building_set(20, seed=19, map_ids=(1,))
        cfg = FeatureConfig(k_neighbors=3, radii=(100.0,))

        def map0_rows(other):
            renamed = tuple(
                b.__class__(id="x" + b.id, map_id=b.map_id, polygon=b.polygon, label=b.label, verified=b.verified)
                for b in other.buildings
            )
            merged = BuildingSet(set_a.buildings + renamed)
            oof = {"m": np.full((len(merged), 5), 0.2)}
            matrix, _ = assemble_features(merged, build_index(merged), oof, cfg)
            return matrix[: len(set_a)]

        assert np.array_equal(map0_rows(set_b1), map0_rows(set_b2))


class TestConfigValidation:
    def test_bad_radii(self):
        with pytest.raises(ParameterError):
            FeatureConfig(radii=(300.0, 100.0))
        with pytest.raises(ParameterError):
            FeatureConfig(radii=())

    def test_bad_k(self):
        with pytest.raises(ParameterError):
            FeatureConfig(k_neighbors=0)
