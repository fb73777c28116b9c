"""Command-line pipeline: synth/ingest -> chip -> folds -> oof -> features -> train-stack -> predict -> evaluate.

Every command reads files, writes files, and records a manifest with config
hash, seeds, and artifact checksums; all randomness enters through explicit
--seed flags, so identical inputs and seeds reproduce identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from roofstack import augment, spatial_features, stacking, synth, tensorops
from roofstack.errors import ParameterError, RoofstackError
from roofstack.gbdt import GbdtModel, gbdt_predict
from roofstack.geodata import (
    N_CLASSES,
    BuildingSet,
    parse_feature_collection,
    serialize_feature_collection,
)
from roofstack.raster import ImageRGB, extract_chip, load_image_rgb, read_chip, save_image_rgb, write_chip
from roofstack.seeds import derive_seed


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_manifest(
    command: str,
    out_dir: Path,
    config: dict,
    seeds: dict,
    inputs: list[Path],
    outputs: list[Path],
    started: float,
) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()}
    manifest = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "seeds": seeds,
        "inputs": {str(p): _sha256(p) for p in sorted(inputs)},
        "outputs": {str(p): _sha256(p) for p in sorted(outputs)},
        "timings": {"wall_s": time.monotonic() - started},
    }
    _write_atomic(out_dir / f"manifest-{command}.json", _dump_json(manifest))


# ---------------------------------------------------------------------------
# data-directory conventions

_MAP_RE = re.compile(r"map(\d+)\.geojson$")


def _load_data(data_dir: Path) -> tuple[BuildingSet, dict[int, Path], dict[int, Path]]:
    geojsons: dict[int, Path] = {}
    for path in sorted(data_dir.glob("map*.geojson")):
        m = _MAP_RE.search(path.name)
        if m:
            geojsons[int(m.group(1))] = path
    if not geojsons:
        raise ParameterError(f"no map*.geojson files under {data_dir}")
    images = {map_id: data_dir / f"map{map_id}.png" for map_id in geojsons}
    merged: BuildingSet | None = None
    for map_id in sorted(geojsons):
        bs = parse_feature_collection(geojsons[map_id].read_text(encoding="utf-8"), map_id)
        merged = bs if merged is None else merged.merged(bs)
    return merged, geojsons, images


def _read_truth(path: Path) -> dict[tuple[int, str], int]:
    truth: dict[tuple[int, str], int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            truth[(int(row["map_id"]), row["building_id"])] = int(row["label"])
    return truth


def _write_prob_csv(path: Path, keys: list[tuple[int, str]], probs: np.ndarray, prefix: str) -> None:
    header = "map_id,building_id," + ",".join(f"{prefix}_p{c}" for c in range(N_CLASSES))
    lines = [header]
    for (map_id, bid), row in zip(keys, probs):
        lines.append(f"{map_id},{bid}," + ",".join(repr(float(v)) for v in row))
    _write_atomic(path, "\n".join(lines) + "\n")


def _read_prob_csv(path: Path) -> tuple[str, dict[tuple[int, str], np.ndarray]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        prob_cols = header[2:]
        if len(prob_cols) != N_CLASSES:
            raise ParameterError(f"{path}: expected {N_CLASSES} probability columns, got {len(prob_cols)}")
        name = prob_cols[0].rsplit("_p", 1)[0]
        rows = {}
        for row in reader:
            rows[(int(row[0]), row[1])] = np.asarray([float(v) for v in row[2:]], dtype=np.float64)
    return name, rows


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    started = time.monotonic()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []
    truth_rows: list[tuple[int, str, int]] = []
    for map_id in range(args.maps):
        params = synth.SynthParams(
            map_size_px=args.map_size,
            n_buildings=args.buildings,
            n_label_clusters=args.clusters,
            label_noise=args.label_noise,
            seed=args.seed,
        )
        img, bs = synth.generate_map(params, map_id=map_id)
        visible, truth = synth.hide_labels(bs, args.test_fraction, args.seed)
        png = out / f"map{map_id}.png"
        gj = out / f"map{map_id}.geojson"
        save_image_rgb(img, png)
        _write_atomic(gj, serialize_feature_collection(visible) + "\n")
        outputs.extend([png, gj])
        truth_rows.extend((map_id, bid, label) for (_, bid), label in sorted(truth.items()))
    truth_path = out / "truth.csv"
    lines = ["map_id,building_id,label"] + [f"{m},{b},{lab}" for m, b, lab in truth_rows]
    _write_atomic(truth_path, "\n".join(lines) + "\n")
    outputs.append(truth_path)
    _write_manifest("synth", out, vars(args) | {"func": None}, {"seed": args.seed}, [], outputs, started)
    print(f"synth: {args.maps} map(s), {args.buildings} buildings each -> {out}")
    return 0


def cmd_ingest(args) -> int:
    started = time.monotonic()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src = Path(args.geojson)
    bs = parse_feature_collection(src.read_text(encoding="utf-8"), args.map_id)
    inputs = [src]
    if args.image:
        img = load_image_rgb(args.image)
        inputs.append(Path(args.image))
        save_image_rgb(img, out / f"map{args.map_id}.png")
    norm = out / f"map{args.map_id}.geojson"
    _write_atomic(norm, serialize_feature_collection(bs) + "\n")
    labeled = len(bs.labeled())
    summary = out / f"ingest-map{args.map_id}.json"
    _write_atomic(summary, _dump_json({"buildings": len(bs), "labeled": labeled, "map_id": args.map_id}))
    outputs = [norm, summary] + ([out / f"map{args.map_id}.png"] if args.image else [])
    _write_manifest("ingest", out, vars(args) | {"func": None}, {}, inputs, outputs, started)
    print(f"ingest: map {args.map_id}, {len(bs)} buildings ({labeled} labeled) -> {out}")
    return 0


def cmd_chip(args) -> int:
    started = time.monotonic()
    data = Path(args.data)
    out = Path(args.out)
    bs, geojsons, images = _load_data(data)
    outputs: list[Path] = []
    index_rows = ["map_id,building_id,path,margin"]
    img_cache: dict[int, ImageRGB] = {}
    for b in bs:
        if b.map_id not in img_cache:
            img_cache[b.map_id] = load_image_rgb(images[b.map_id])
        chip = extract_chip(img_cache[b.map_id], b, args.margin)
        dest = out / str(b.map_id) / f"{b.id}.png"
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_chip(chip, dest)
        outputs.append(dest)
        index_rows.append(f"{b.map_id},{b.id},{dest.relative_to(out)},{args.margin}")
    index = out / "index.csv"
    _write_atomic(index, "\n".join(index_rows) + "\n")
    outputs.append(index)
    inputs = list(geojsons.values()) + [images[m] for m in sorted(images)]
    _write_manifest("chip", out, vars(args) | {"func": None}, {}, inputs, outputs, started)
    print(f"chip: wrote {len(bs)} chips (margin {args.margin}) -> {out}")
    return 0


def cmd_adapt_weights(args) -> int:
    started = time.monotonic()
    src, dst = Path(args.infile), Path(args.outfile)
    tensor, bias = tensorops.read_tensor(src)
    if args.mode == "zero":
        adapted = tensorops.adapt_weights_zero(tensor, args.channels)
    else:
        adapted = tensorops.adapt_weights_proportional(tensor, args.channels)
    dst.parent.mkdir(parents=True, exist_ok=True)
    tensorops.write_tensor(adapted, dst, bias=bias)
    _write_manifest("adapt-weights", dst.parent, vars(args) | {"func": None}, {}, [src], [dst], started)
    print(f"adapt-weights: {tensor.m} -> {args.channels} channels ({args.mode}) -> {dst}")
    return 0


def cmd_augment_preview(args) -> int:
    started = time.monotonic()
    chip = read_chip(args.chip)
    cfg = augment.AugmentConfig.from_json(Path(args.config).read_text(encoding="utf-8")) if args.config else augment.AugmentConfig()
    chips = []
    for i in range(args.rows * args.cols):
        item_seed = derive_seed(args.seed, chip.building_id, 0, i)
        chips.append(augment.augment_pipeline(chip, cfg, item_seed))
    sheet = augment.contact_sheet(chips, cols=args.cols)
    dest = Path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    save_image_rgb(ImageRGB(sheet), dest)
    inputs = [Path(args.chip)] + ([Path(args.config)] if args.config else [])
    _write_manifest("augment-preview", dest.parent, vars(args) | {"func": None}, {"seed": args.seed}, inputs, [dest], started)
    print(f"augment-preview: {args.rows}x{args.cols} sheet -> {dest}")
    return 0


def cmd_folds(args) -> int:
    started = time.monotonic()
    data = Path(args.data)
    bs, geojsons, _ = _load_data(data)
    assignment = stacking.make_folds(bs, args.k, args.seed)
    dest = Path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    lines = ["map_id,building_id,fold"]
    for b in bs:
        f = assignment.fold_of(b)
        if f is not None:
            lines.append(f"{b.map_id},{b.id},{f}")
    _write_atomic(dest, "\n".join(lines) + "\n")
    _write_manifest("folds", dest.parent, vars(args) | {"func": None}, {"seed": args.seed}, list(geojsons.values()), [dest], started)
    print(f"folds: k={args.k} over {len(assignment.fold)} labeled buildings -> {dest}")
    return 0


def _read_folds(path: Path) -> stacking.FoldAssignment:
    fold: dict[tuple[int, str], int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            fold[(int(row["map_id"]), row["building_id"])] = int(row["fold"])
    k = max((f for f in fold.values() if f >= 0), default=1) + 1
    return stacking.FoldAssignment(k=k, seed=0, fold=fold)


def cmd_oof(args) -> int:
    started = time.monotonic()
    data = Path(args.data)
    chips_dir = Path(args.chips)
    bs, geojsons, _ = _load_data(data)
    folds = _read_folds(Path(args.folds))
    oracle = synth.oracle_model(synth.OracleParams(confusion_level=args.confusion, seed=args.model_seed))

    def predict_building(sample) -> np.ndarray:
        b, chip_path = sample
        chip = read_chip(chip_path)
        if args.tta:
            return stacking.tta_aggregate(oracle.predict, chip)
        return oracle.predict(chip)

    dataset = [(b, chips_dir / str(b.map_id) / f"{b.id}.png") for b in bs]
    missing = [p for _, p in dataset if not p.exists()]
    if missing:
        raise ParameterError(f"{len(missing)} chips missing under {chips_dir}, first: {missing[0]}")
    matrix = stacking.oof_predict(lambda train: predict_building, folds, dataset, threads=args.threads)
    dest = Path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    _write_prob_csv(dest, [b.key for b in bs], matrix, prefix=args.name)
    inputs = list(geojsons.values()) + [Path(args.folds)]
    _write_manifest(
        "oof", dest.parent, vars(args) | {"func": None}, {"model_seed": args.model_seed}, inputs, [dest], started
    )
    print(f"oof: model {oracle.name} ({'tta' if args.tta else 'single'}) over {len(bs)} buildings -> {dest}")
    return 0


def cmd_features(args) -> int:
    started = time.monotonic()
    data = Path(args.data)
    bs, geojsons, _ = _load_data(data)
    cfg = spatial_features.FeatureConfig(
        k_neighbors=args.k_neighbors,
        radii=tuple(float(r) for r in args.radii.split(",")),
    )
    idx = spatial_features.build_index(bs)
    oof: dict[str, np.ndarray] = {}
    for path in args.oof:
        name, rows = _read_prob_csv(Path(path))
        try:
            oof[name] = np.stack([rows[b.key] for b in bs])
        except KeyError as exc:
            raise ParameterError(f"oof file {path} is missing building {exc}") from exc
    matrix, cols = spatial_features.assemble_features(bs, idx, oof, cfg)
    dest = Path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    spatial_features.write_features_csv(dest, bs, matrix, cols)
    sidecar = dest.with_suffix(".json")
    spatial_features.write_features_sidecar(sidecar, cfg, cols, list(oof.keys()))
    inputs = list(geojsons.values()) + [Path(p) for p in args.oof]
    _write_manifest("features", dest.parent, vars(args) | {"func": None}, {}, inputs, [dest, sidecar], started)
    print(f"features: {matrix.shape[0]} rows x {matrix.shape[1]} columns -> {dest}")
    return 0


def _read_features(path: Path) -> tuple[list[tuple[int, str]], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        keys: list[tuple[int, str]] = []
        rows: list[list[float]] = []
        for row in reader:
            keys.append((int(row[0]), row[1]))
            rows.append([float(v) for v in row[2:]])
    return keys, np.asarray(rows, dtype=np.float64)


def cmd_train_stack(args) -> int:
    started = time.monotonic()
    data = Path(args.data)
    bs, geojsons, _ = _load_data(data)
    keys, X = _read_features(Path(args.features))
    label_of = {b.key: b.label for b in bs}
    train_rows = [i for i, key in enumerate(keys) if label_of.get(key) is not None]
    if not train_rows:
        raise ParameterError("no labeled rows to train on")
    Xt = X[train_rows]
    yt = np.asarray([label_of[keys[i]] for i in train_rows], dtype=np.intp)
    model = stacking.random_param_ensemble(
        Xt, yt, stacking.GbdtParamRanges(), n_members=args.members, seed=args.seed, threads=args.threads
    )
    dest = Path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    _write_atomic(dest, model.to_json() + "\n")
    inputs = list(geojsons.values()) + [Path(args.features)]
    _write_manifest("train-stack", dest.parent, vars(args) | {"func": None}, {"seed": args.seed}, inputs, [dest], started)
    train_ll = stacking.log_loss(model.predict(Xt), yt)
    print(f"train-stack: {args.members} member(s) on {len(train_rows)} rows, train log_loss {train_ll:.4f} -> {dest}")
    return 0


def _load_model(path: Path):
    text = path.read_text(encoding="utf-8")
    kind = json.loads(text).get("kind")
    if kind == "ensemble":
        return stacking.EnsembleModel.from_json(text)
    if kind == "gbdt":
        model = GbdtModel.from_json(text)

        class _Single:
            def predict(self, X):
                return gbdt_predict(model, X)

        return _Single()
    raise ParameterError(f"unknown model kind {kind!r} in {path}")


def cmd_predict(args) -> int:
    started = time.monotonic()
    model = _load_model(Path(args.model))
    keys, X = _read_features(Path(args.features))
    probs = model.predict(X)
    dest = Path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    _write_prob_csv(dest, keys, probs, prefix="pred")
    _write_manifest(
        "predict", dest.parent, vars(args) | {"func": None}, {}, [Path(args.model), Path(args.features)], [dest], started
    )
    print(f"predict: {len(keys)} rows -> {dest}")
    return 0


def cmd_evaluate(args) -> int:
    started = time.monotonic()
    _, pred_rows = _read_prob_csv(Path(args.predictions))
    truth = _read_truth(Path(args.truth))
    missing = [key for key in truth if key not in pred_rows]
    if missing:
        raise ParameterError(f"{len(missing)} truth rows have no prediction, first: {missing[0]}")
    keys = sorted(truth)
    probs = np.stack([pred_rows[key] for key in keys])
    y = np.asarray([truth[key] for key in keys], dtype=np.intp)
    report = stacking.metrics_report(probs, y)
    dest = Path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    _write_atomic(dest, _dump_json(report))
    _write_manifest(
        "evaluate", dest.parent, vars(args) | {"func": None}, {}, [Path(args.predictions), Path(args.truth)], [dest], started
    )
    print(f"evaluate: log_loss {report['log_loss']:.6f} accuracy {report['accuracy']:.4f} (n={report['n']}) -> {dest}")
    return 0


def cmd_report(args) -> int:
    started = time.monotonic()
    runs = []
    inputs = []
    for spec_arg in args.run:
        name, _, path = spec_arg.partition("=")
        if not path:
            raise ParameterError(f"--run wants NAME=metrics.json, got {spec_arg!r}")
        metrics = json.loads(Path(path).read_text(encoding="utf-8"))
        inputs.append(Path(path))
        runs.append({"name": name, **{k: metrics[k] for k in ("log_loss", "accuracy", "n")}})
    runs.sort(key=lambda r: r["log_loss"])
    dest = Path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    _write_atomic(dest, _dump_json({"runs": runs}))
    _write_manifest("report", dest.parent, vars(args) | {"func": None}, {}, inputs, [dest], started)
    width = max(len(r["name"]) for r in runs)
    print(f"{'model'.ljust(width)}  log_loss  accuracy      n")
    for r in runs:
        print(f"{r['name'].ljust(width)}  {r['log_loss']:8.4f}  {r['accuracy']:8.4f}  {r['n']:5d}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roofstack", description="Roof-material classification pipeline")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for fold/member training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic maps + annotations")
    p.add_argument("--out", required=True)
    p.add_argument("--maps", type=int, default=2)
    p.add_argument("--buildings", type=int, default=300)
    p.add_argument("--clusters", type=int, default=6)
    p.add_argument("--label-noise", type=float, default=0.05)
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--map-size", type=int, default=1600)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse + normalize a GeoJSON annotation file")
    p.add_argument("--geojson", required=True)
    p.add_argument("--map-id", type=int, required=True)
    p.add_argument("--image")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("chip", help="extract per-building chips")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--margin", type=int, default=100)
    p.set_defaults(func=cmd_chip)

    p = sub.add_parser("adapt-weights", help="channel-adapt a convolution weight tensor")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--mode", choices=("zero", "proportional"), required=True)
    p.add_argument("--channels", type=int, required=True)
    p.set_defaults(func=cmd_adapt_weights)

    p = sub.add_parser("augment-preview", help="write an augmentation contact sheet")
    p.add_argument("--chip", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--cols", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("folds", help="assign labeled buildings to folds")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_folds)

    p = sub.add_parser("oof", help="run a base model out-of-fold over all buildings")
    p.add_argument("--data", required=True)
    p.add_argument("--chips", required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--name", required=True, help="column prefix for this model")
    p.add_argument("--confusion", type=float, default=0.3)
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--tta", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oof)

    p = sub.add_parser("features", help="assemble second-level feature vectors")
    p.add_argument("--data", required=True)
    p.add_argument("--oof", action="append", required=True)
    p.add_argument("--k-neighbors", type=int, default=8)
    p.add_argument("--radii", default="100,300,1000")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train-stack", help="train the random-parameter GBDT ensemble")
    p.add_argument("--data", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--members", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_stack)

    p = sub.add_parser("predict", help="predict probabilities for every feature row")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="log loss + accuracy against a truth CSV")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="compare metrics files side by side")
    p.add_argument("--run", action="append", required=True, help="NAME=metrics.json (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RoofstackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
