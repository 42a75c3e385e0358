"""Command-line entry point: ``python -m benthicbnn <command> [--config F] [--seed N] [--out D] [--threads N]``.

Settings come from built-in defaults, then the JSON ``--config`` file,
then the flags; later sources win. Every command writes the merged
settings to ``<out>/resolved_config_<command>.json`` for replay.

Exit status: 0 success, 1 runtime or training failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import active, bnn, evaluate, pipeline, render, scenarios, survey, terrain, uncertainty
from .autoencoder import AutoencoderConfig
from .errors import BalancingError, ConfigurationError, UsageError
from .numeric import RandomStream

log = logging.getLogger("benthicbnn")

COMMANDS = ("generate", "train-ae", "train-bnn", "predict", "map", "selective")


def default_config():
    ae = asdict(AutoencoderConfig())
    ae["conv_filters"] = list(ae["conv_filters"])
    ae["dense_widths"] = list(ae["dense_widths"])
    b = asdict(bnn.BNNConfig())
    b["hidden"] = list(b["hidden"])
    shape = asdict(terrain.WorldShape())
    for k in ("bump_amplitude", "bump_sigma", "bump_region"):
        shape[k] = list(shape[k])
    sel = asdict(active.SelectiveConfig())
    del sel["criterion"]
    return {
        "seed": 0,
        "out": "run",
        "threads": None,
        "paths": {"raster": None, "points": None, "autoencoder": None, "posterior": None},
        "world": {
            "extent": [800.0, 800.0],
            "cell_size": 2.0,
            "origin": [0.0, 0.0],
            "rules": asdict(terrain.HabitatRuleSet()),
            "shape": shape,
            "train_lines": 8,
            "validation_lines": 7,
            "margin": 24.0,
            "spacing": 2.0,
        },
        "autoencoder": {**ae, "n_patches": 1500, "holdout_patches": 500},
        "bnn": b,
        "split": {"train_dives": ["train"], "validation_dives": ["validation"], "extent": 42.0,
                  "balance": True},
        "predict": {"T": 50, "draws": 100},
        "map": {"stride": None, "T": 20, "max_centres": 10000, "images": True},
        "selective": {**sel, "criteria": list(active.CRITERIA), "scenario": "two-region",
                      "balance": False},
    }


def merge(base, override, where=""):
    """Recursive merge; keys absent from ``base`` are rejected."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigurationError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {where + key!r} must be an object")
            out[key] = merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def resolve(args):
    cfg = default_config()
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
        cfg = merge(cfg, user)
    for key in ("seed", "out", "threads"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    if not isinstance(cfg["seed"], int):
        raise ConfigurationError("seed must be an integer")
    if cfg["threads"] is not None and (not isinstance(cfg["threads"], int) or cfg["threads"] < 1):
        raise ConfigurationError("threads must be a positive integer")
    return cfg


# helpers ---------------------------------------------------------------------

def _out(cfg):
    d = Path(cfg["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _path(cfg, key, default):
    p = cfg["paths"][key]
    return Path(p) if p is not None else _out(cfg) / default


def _need(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    return path


def _points_paths(cfg):
    p = cfg["paths"]["points"]
    if p is None:
        dives = cfg["split"]["train_dives"] + cfg["split"]["validation_dives"]
        return [_out(cfg) / f"points_{d}.csv" for d in dives]
    return [Path(x) for x in ([p] if isinstance(p, str) else p)]


def _stream(cfg, label):
    return RandomStream(cfg["seed"], label)


def _ae_config(cfg):
    d = {k: v for k, v in cfg["autoencoder"].items() if k not in ("n_patches", "holdout_patches")}
    return AutoencoderConfig(**d)


def _bnn_config(cfg):
    try:
        return bnn.BNNConfig(**cfg["bnn"])
    except TypeError as exc:
        raise ConfigurationError(f"bnn config: {exc}") from None


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_trace(path, trace, header="loss"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", header])
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])


def _load_raster(cfg):
    return terrain.load_raster(_need(_path(cfg, "raster", "world.asc")))


def _load_features(cfg):
    return pipeline.FeatureExtractor.load(_need(_path(cfg, "autoencoder", "autoencoder.npz")), _ae_config(cfg))


def _load_model(cfg):
    features = _load_features(cfg)
    return pipeline.HabitatModel.load(features, _need(_path(cfg, "posterior", "posterior.npz")), _bnn_config(cfg))


def _split_samples(cfg, raster):
    points = []
    for p in _points_paths(cfg):
        points += survey.read_points(_need(p))
    width = cfg["autoencoder"]["patch_width"]
    samples, skipped = survey.build_patch_samples(points, raster, width)
    sc = cfg["split"]
    split = survey.SplitConfig(sc["train_dives"], sc["validation_dives"], sc["extent"])
    train, val, removed = survey.split_by_dive(samples, split)
    return train, val, {"points": len(points), "skipped": skipped, "train": len(train),
                        "validation": len(val), "validation_removed": removed}


# commands --------------------------------------------------------------------

def cmd_generate(cfg):
    w = cfg["world"]
    out = _out(cfg)
    rules = terrain.HabitatRuleSet(**w["rules"])
    shape = terrain.WorldShape(**w["shape"])
    extent = tuple(float(v) for v in w["extent"])
    if len(extent) != 2 or min(extent) <= 0:
        raise ConfigurationError(f"world extent must be two positive lengths, got {w['extent']}")
    stream = _stream(cfg, "generate")
    raster, world = terrain.generate_world(extent, rules, stream.child("world"), w["cell_size"], shape,
                                           tuple(w["origin"]))
    terrain.save_raster(raster, out / "world.asc")
    terrain.save_raster(raster.with_values(world.label_grid.astype(float)), out / "labels_noiseless.asc")
    tracks = pipeline.default_tracks(raster, w["train_lines"], w["validation_lines"], w["margin"], w["spacing"])
    survey.write_tracks(tracks, out / "tracks.csv")
    counts = {}
    for t in tracks:
        pts = survey.simulate_dive(t, world, stream.child("survey").child(t.dive_id))
        survey.write_points(pts, out / f"points_{t.dive_id}.csv")
        counts[t.dive_id] = np.bincount([p.class_id for p in pts], minlength=terrain.N_CLASSES).tolist()
    _write_json(out / "world_summary.json", {
        "rows": raster.n_rows, "cols": raster.n_cols, "depth_variance": float(raster.depths.var()),
        "label_grid_fractions": (np.bincount(world.label_grid.ravel(), minlength=terrain.N_CLASSES)
                                 / world.label_grid.size).tolist(),
        "point_class_counts": counts, "class_names": list(terrain.CLASS_NAMES)})
    log.info("wrote %dx%d world and %d dives to %s", raster.n_rows, raster.n_cols, len(tracks), out)


def cmd_train_ae(cfg):
    raster = _load_raster(cfg)
    out = _out(cfg)
    ae_cfg = _ae_config(cfg)
    stream = _stream(cfg, "train-ae")
    started = time.perf_counter()
    features, trace = pipeline.fit_features(
        raster, cfg["autoencoder"]["n_patches"], ae_cfg, stream,
        lambda e, v: log.info("autoencoder epoch %d loss %.5f", e, v))
    features.save(_path(cfg, "autoencoder", "autoencoder.npz"))
    _write_trace(out / "ae_loss.csv", trace)
    held = pipeline.random_windows(raster, cfg["autoencoder"]["holdout_patches"], ae_cfg.patch_width,
                                   stream.child("holdout"))
    mse = float(features.reconstruction_mse(held).mean())
    var = float(raster.depths[~raster.nodata_mask].var())
    _write_json(out / "ae_report.json", {
        "reconstruction_mse_m2": mse, "depth_variance_m2": var, "mse_fraction_of_variance": mse / var,
        "first_epoch_loss": trace[0], "last_epoch_loss": trace[-1]})
    log.info("autoencoder trained in %.0f s; held-out MSE %.4f m^2 (%.2f%% of depth variance)",
             time.perf_counter() - started, mse, 100 * mse / var)


def cmd_train_bnn(cfg):
    raster = _load_raster(cfg)
    features = _load_features(cfg)
    out = _out(cfg)
    stream = _stream(cfg, "train-bnn")
    train, _, summary = _split_samples(cfg, raster)
    if cfg["split"]["balance"]:
        train = survey.balance_classes(train, stream.child("balance"))
    summary["train_used"] = len(train)
    summary["train_class_counts"] = np.bincount([s.label for s in train], minlength=terrain.N_CLASSES).tolist()
    model, trace = pipeline.fit_classifier(features, train, _bnn_config(cfg), stream.child("bnn"),
                                           lambda e, v: log.info("bnn epoch %d loss %.2f", e, v))
    model.save_posterior(_path(cfg, "posterior", "posterior.npz"))
    _write_trace(out / "bnn_loss.csv", trace)
    _write_json(out / "split_summary.json", summary)


def cmd_predict(cfg):
    raster = _load_raster(cfg)
    model = _load_model(cfg)
    out = _out(cfg)
    stream = _stream(cfg, "predict")
    _, val, summary = _split_samples(cfg, raster)
    if not val:
        raise ConfigurationError("no validation samples remain after overlap removal")
    T, draws = cfg["predict"]["T"], cfg["predict"]["draws"]
    pred = model.predict(np.stack([s.patch.values for s in val]), T, stream.child("mc"))
    raw = evaluate.evaluate_predictions(val, pred, stream.child("draws"), draws)
    balanced_idx = _balanced_indices(val, stream.child("balance"))
    reports = {"raw": raw, "split": summary, "T": T, "draws": draws}
    if balanced_idx is not None:
        sub = [val[i] for i in balanced_idx]
        bal = evaluate.accuracies(sub, pred.mean[balanced_idx].argmax(axis=-1))
        bal.distribution_mae = [raw.distribution_mae[i] for i in balanced_idx]
        reports["balanced"] = bal
    else:
        reports["balanced"] = "unavailable: a class is missing from the validation set"
    evaluate.write_report(out / "evaluation.json", reports)
    aleatoric, epistemic = uncertainty.trace_scores(pred)
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["easting", "northing", "dive_id", "label", "modal_class", "predicted",
                    *[f"p{k}" for k in range(terrain.N_CLASSES)], "aleatoric", "epistemic"])
        for i, s in enumerate(val):
            w.writerow([repr(s.easting), repr(s.northing), s.dive_id, s.label,
                        evaluate.modal_class(s.distribution), int(pred.mean[i].argmax()),
                        *[repr(float(v)) for v in pred.mean[i]], repr(float(aleatoric[i])),
                        repr(float(epistemic[i]))])
    log.info("label %.3f  neighbour %.3f  benchmark %.3f on %d validation samples",
             raw.label_accuracy, raw.neighbour_accuracy, raw.benchmark_accuracy, raw.n_samples)


def _balanced_indices(samples, stream):
    """Indices of a class-balanced subset, or None when a class is absent."""
    try:
        subset = survey.balance_classes(samples, stream)
    except BalancingError:
        return None
    position = {id(s): i for i, s in enumerate(samples)}
    return [position[id(s)] for s in subset]


def cmd_map(cfg):
    raster = _load_raster(cfg)
    model = _load_model(cfg)
    out = _out(cfg)
    stream = _stream(cfg, "map")
    m = cfg["map"]
    width = model.features.autoencoder.config.patch_width
    stride = m["stride"] or pipeline.auto_stride(raster, width, m["max_centres"])
    rows, cols, pred = pipeline.map_predictions(model, raster, stride, m["T"], stream.child("mc"))
    classes = pred.mean.argmax(axis=-1).astype(float) if len(rows) else np.empty(0)
    cat = pipeline.scatter_to_raster(raster, rows, cols, classes, stride)
    a, e = uncertainty.trace_scores(pred) if len(rows) else (np.empty(0), np.empty(0))
    ale = pipeline.scatter_to_raster(raster, rows, cols, a, stride)
    epi = pipeline.scatter_to_raster(raster, rows, cols, e, stride)
    terrain.save_raster(cat, out / "category.asc")
    terrain.save_raster(ale, out / "aleatoric.asc")
    terrain.save_raster(epi, out / "epistemic.asc")
    if m["images"]:
        render.write_ppm(out / "category.ppm", evaluate.colorize(cat))
        render.write_scalar_pgm(out / "aleatoric.pgm", ale)
        render.write_scalar_pgm(out / "epistemic.pgm", epi)
    log.info("mapped %d window centres at stride %d", len(rows), stride)


def cmd_selective(cfg):
    out = _out(cfg)
    s = dict(cfg["selective"])
    criteria = s.pop("criteria")
    scenario = s.pop("scenario")
    balance = s.pop("balance")
    stream = _stream(cfg, "selective")
    bnn_cfg = _bnn_config(cfg)
    initial_ids = None
    if scenario == "two-region":
        sc = scenarios.two_region(stream.child("scenario"))
        if cfg["paths"]["autoencoder"] is not None:
            features = _load_features(cfg)
        else:
            features, _ = pipeline.fit_features(sc.raster, cfg["autoencoder"]["n_patches"], _ae_config(cfg),
                                                stream.child("ae"))
            features.save(out / "selective_autoencoder.npz")
        terrain.save_raster(sc.raster, out / "selective_world.asc")
        train, val = sc.train, sc.validation
        segments = survey.segment_dataset(list(range(len(train))), s["n_segments"])
        flat = sc.flat_segments(segments)
        initial_ids = sorted(int(i) for i in stream.child("initial").choice(
            flat, size=s["initial_segments"], replace=False))
    elif scenario == "survey":
        raster = _load_raster(cfg)
        features = _load_features(cfg)
        train, val, _ = _split_samples(cfg, raster)
        if balance:
            val = survey.balance_classes(val, stream.child("balance"))
    else:
        raise ConfigurationError(f"unknown selective scenario {scenario!r}")
    if not val:
        raise ConfigurationError("validation set is empty after overlap removal")
    z = features.latents(np.stack([q.patch.values for q in train]))
    mean, std = z.mean(axis=0), z.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    x = (z - mean) / std
    xv = (features.latents(np.stack([q.patch.values for q in val])) - mean) / std
    y = np.array([q.label for q in train])
    yv = np.array([q.label for q in val])
    full = active.ExperimentTrace()
    for crit in criteria:
        sel_cfg = active.SelectiveConfig(criterion=crit, **s)
        tr = active.run_selective(x, y, xv, yv, sel_cfg, stream.child("runs"), bnn_cfg, initial_ids,
                                  lambda r: log.info("%s run %d iteration %d: val accuracy %.3f",
                                                     r.criterion, r.run, r.iteration, r.val_label_accuracy))
        full.records += tr.records
    full.write_csv(out / "selective_trace.csv")
    full.write_summary_csv(out / "selective_summary.csv")


HANDLERS = {
    "generate": cmd_generate,
    "train-ae": cmd_train_ae,
    "train-bnn": cmd_train_bnn,
    "predict": cmd_predict,
    "map": cmd_map,
    "selective": cmd_selective,
}


def build_parser():
    p = argparse.ArgumentParser(prog="benthicbnn", description="Benthic habitat mapping with a Bayesian network.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON settings file")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args)
        _write_json(_out(cfg) / f"resolved_config_{args.command}.json", {**cfg, "command": args.command})
        if cfg["threads"] is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=cfg["threads"]):
                HANDLERS[args.command](cfg)
        else:
            HANDLERS[args.command](cfg)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime, training and data failures
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
