# Walkthrough: spatial meta-features. Roof materials cluster, so a
# building's neighbors carry real signal; the feature vectors below are
# what the second-level model trains on.

import numpy as np

from roofstack.spatial_features import (
    FeatureConfig,
    assemble_features,
    build_index,
    knn,
    label_distribution,
    radius_query,
)
from roofstack.synth import SynthParams, generate_map

_, buildings = generate_map(SynthParams(map_size_px=1400, n_buildings=250, label_noise=0.05, seed=11), map_id=0)
idx = build_index(buildings)

b = buildings.buildings[0]
print(f"query building {b.id}, label {b.label}")

result = knn(idx, b, 8)
print("8 nearest neighbors (distance, label):")
for nb, dist in result.neighbors:
    print(f"  {nb.id}  {dist:7.1f}px  label={nb.label}")

vec, labeled = label_distribution([nb for nb, _ in result.neighbors])
print(f"knn label distribution: {np.round(vec, 3).tolist()} ({labeled} labeled)")

for radius in (100.0, 300.0):
    hits = radius_query(idx, b, radius)
    vec, labeled = label_distribution(hits)
    print(f"radius {radius:5.0f}: {len(hits):3d} neighbors, distribution {np.round(vec, 3).tolist()}")

# the full second-level input: OOF probabilities + meta features
oof = {"base": np.full((len(buildings), 5), 0.2)}
matrix, columns = assemble_features(buildings, idx, oof, FeatureConfig())
print(f"feature matrix: {matrix.shape[0]} rows x {matrix.shape[1]} columns")
print("first columns:", columns[:10])

# how often does the neighborhood majority agree with the building's label?
agree = 0
for b in buildings:
    labels = [nb.label for nb, _ in knn(idx, b, 8).neighbors if nb.label is not None]
    if labels and np.bincount(labels, minlength=5).argmax() == b.label:
        agree += 1
print(f"neighbor-majority agreement: {agree / len(buildings):.0%}")
