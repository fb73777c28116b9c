# Walkthrough: the whole flow in one script, library API only.
#
# synthetic maps -> hidden labels -> oracle base models out-of-fold ->
# meta features -> random-parameter GBDT ensemble -> held-out evaluation.
# A smaller sibling of the acceptance benchmark; runs in under a minute.

import numpy as np

from roofstack.gbdt import gbdt_predict
from roofstack.geodata import BuildingSet
from roofstack.raster import extract_chip
from roofstack.spatial_features import FeatureConfig, assemble_features, build_index
from roofstack.stacking import (
    GbdtParamRanges,
    accuracy,
    log_loss,
    make_folds,
    oof_predict,
    random_param_ensemble,
    tta_aggregate,
)
from roofstack.synth import OracleParams, SynthParams, generate_map, hide_labels, oracle_model

params = SynthParams(map_size_px=1600, n_buildings=250, label_noise=0.05, seed=42)
maps, buildings = {}, []
for map_id in (0, 1):
    img, bs = generate_map(params, map_id=map_id)
    maps[map_id] = img
    buildings.extend(bs.buildings)
visible, truth = hide_labels(BuildingSet(tuple(buildings)), 0.3, seed=42)
print(f"{len(visible)} buildings, {len(truth)} held out")

folds = make_folds(visible, 5, seed=42)
dataset = [(b, None) for b in visible]

oof = {}
for mseed in (1, 2):
    oracle = oracle_model(OracleParams(confusion_level=0.3, seed=mseed))

    def factory(train, oracle=oracle):
        return lambda sample: oracle.predict(extract_chip(maps[sample[0].map_id], sample[0], 100))

    oof[oracle.name] = oof_predict(factory, folds, dataset)

labeled = [i for i, b in enumerate(visible) if b.label is not None]
y_train = np.array([visible.buildings[i].label for i in labeled])
for name, mat in oof.items():
    print(f"base {name}: OOF log loss {log_loss(mat[labeled], y_train):.4f}")

X, _ = assemble_features(visible, build_index(visible), oof, FeatureConfig())
ensemble = random_param_ensemble(X[labeled], y_train, GbdtParamRanges(n_rounds=(60, 150)), n_members=4, seed=42)

hidden = [i for i, b in enumerate(visible) if b.key in truth]
y_test = np.array([truth[visible.buildings[i].key] for i in hidden])
probs = ensemble.predict(X[hidden])
print(f"stacked ensemble: held-out log loss {log_loss(probs, y_test):.4f}, accuracy {accuracy(probs, y_test):.3f}")
for i, member in enumerate(ensemble.members):
    ll = log_loss(gbdt_predict(member, X[hidden]), y_test)
    print(f"  member {i} ({member.params.n_rounds} rounds, depth {member.params.max_depth}): {ll:.4f}")

# test-time augmentation on one building: 8 dihedral x 4 crops = 32 passes
oracle = oracle_model(OracleParams(confusion_level=0.3, seed=1))
b = visible.buildings[hidden[0]]
chip = extract_chip(maps[b.map_id], b, 100)
single = oracle.predict(chip)
averaged = tta_aggregate(oracle.predict, chip)
print(f"tta single={np.round(single, 3).tolist()}")
print(f"tta 32-avg={np.round(averaged, 3).tolist()}  true class {truth[b.key]}")
