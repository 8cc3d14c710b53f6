"""Command-line front door: generate, train, select, sample, evaluate, export-maps.

Every command is a pure function of its resolved config snapshot and input
files; all randomness is routed through the global seed. Exit codes: 0 on
success, 2 for configuration errors, 3 for data/format errors, 4 for numeric
failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import load_config, write_snapshot
from .dataset import Dataset, build_dataset, read_dataset, write_dataset
from .errors import ConfigError, FormatError, NumericError, ValidationError
from .guidance import SubsetWeights, cfg_weights
from .metrics import PredictionSet, bicubic_baseline, mean_map, metric_report
from .model import TorchDenoiser, TrainConfig, load_checkpoint, model_for_dataset, save_checkpoint, train
from .samplers import SamplerConfig, sample
from .schedule import make_schedule
from .selection import SelectionConfig, run_selection
from .synthetic import SyntheticConfig, empirical_stats, generate_synthetic_pair

PREDICTIONS_FORMAT = "windsr-predictions-1"


def _sched_from(config: dict):
    s = config["schedule"]
    return make_schedule(T=s["T"], beta_start=s["beta_start"], beta_end=s["beta_end"])


def _require(config: dict, section: str, key: str) -> str:
    value = config[section][key]
    if value is None:
        raise ConfigError(f"config {section}.{key} is required for this command")
    return value


def _read_dataset(path: str) -> Dataset:
    if not os.path.exists(path):
        raise FormatError(f"dataset manifest not found: {path!r}")
    return read_dataset(path)


def _sampler_config(config: dict, seed: int, ensemble: int | None) -> SamplerConfig:
    s = config["sampler"]
    return SamplerConfig(
        method=s["method"], steps=s["steps"], order=s["order"],
        rng_seed=seed, ensemble_count=ensemble or s["ensemble_count"], eta=s["eta"],
    )


def _guidance_weights(config: dict, scheme: str, universe) -> SubsetWeights | None:
    if scheme == "direct" or scheme == "bicubic":
        return None
    if scheme == "cfg":
        return cfg_weights(universe, config["guidance"]["w"])
    if scheme == "ccfg":
        path = config["guidance"]["weights_path"]
        if path is None:
            raise ConfigError("guidance.weights_path is required for scheme 'ccfg'")
        if not os.path.exists(path):
            raise FormatError(f"weights file not found: {path!r}")
        with open(path, "r", encoding="utf-8") as fh:
            return SubsetWeights.from_text(fh.read())
    raise ConfigError(f"unknown scheme {scheme!r}")


def cmd_generate(config: dict) -> int:
    ds_cfg = config["dataset"]
    path = _require(config, "dataset", "path")
    syn = SyntheticConfig(
        bias_amplitude=ds_cfg["bias_amplitude"], noise_scale=ds_cfg["noise_scale"],
        terrain_relief=ds_cfg["terrain_relief"], terrain_coupling=ds_cfg["terrain_coupling"],
    )
    base = int(ds_cfg["start_seed"]) + int(config["seed"]) * 1_000_003
    pairs = [
        generate_synthetic_pair(seed=base + i, hr_size=ds_cfg["hr_size"],
                                scale_factor=ds_cfg["scale_factor"], config=syn)
        for i in range(ds_cfg["timestamps"])
    ]
    dataset = build_dataset(pairs, stats=empirical_stats(pairs))
    write_dataset(dataset, path)
    print(f"wrote {len(pairs)} timestamps to {path}")
    return 0


def cmd_train(config: dict) -> int:
    dataset = _read_dataset(_require(config, "dataset", "path"))
    t = config["train"]
    tc = TrainConfig(
        train_steps=t["train_steps"], batch_size=t["batch_size"],
        learning_rate=t["learning_rate"], warmup_steps=t["warmup_steps"],
        p_drop=t["p_drop"], lam_dwt=t["lam_dwt"], lam_div=t["lam_div"],
        lam_sobel=t["lam_sobel"], seed=config["seed"],
        crop_size=t["crop_size"], variables=tuple(t["variables"]),
    )
    sched = _sched_from(config)
    net = model_for_dataset(dataset, tc, widths=tuple(config["model"]["widths"]))
    curve = train(dataset, net, tc, sched)
    out_dir = config["out"]
    os.makedirs(out_dir, exist_ok=True)
    ckpt = config["model"]["checkpoint"] or os.path.join(out_dir, "model.ckpt")
    save_checkpoint(ckpt, net, dataset.stats, dataset.hr_shape, dataset.scale_factor)
    with open(os.path.join(out_dir, "loss_curve.tsv"), "w", encoding="utf-8") as fh:
        fh.write("step\tloss\n")
        for i, v in enumerate(curve):
            fh.write(f"{i + 1}\t{v:.9g}\n")
    print(f"trained {tc.train_steps} steps ({net.parameter_count()} parameters); "
          f"checkpoint at {ckpt}")
    return 0


def cmd_select(config: dict) -> int:
    dataset = _read_dataset(_require(config, "dataset", "path"))
    denoiser = load_checkpoint(_require(config, "model", "checkpoint"))
    s = config["selection"]
    sc = SelectionConfig(
        p=s["p"], m=s["m"], iterations=s["iterations"], total_weight=s["total_weight"],
        alpha=s["alpha"], beta=s["beta"], eta=s["eta"], batch=s["batch"],
        inner_sampler=SamplerConfig(method="ddpm", steps=s["inner_steps"], order=1),
        gradient_mode=s["gradient_mode"], fd_step=s["fd_step"], seed=config["seed"],
        variables=tuple(s["variables"] or denoiser.net.spec.variables),
    )
    sched = _sched_from(config)
    weights, trace = run_selection(dataset, denoiser, sc, sched)
    out_dir = config["out"]
    os.makedirs(out_dir, exist_ok=True)
    weights_path = os.path.join(out_dir, s["weights_out"])
    with open(weights_path, "w", encoding="utf-8") as fh:
        fh.write(weights.to_text())
    with open(os.path.join(out_dir, "selection_trace.tsv"), "w", encoding="utf-8") as fh:
        fh.write(trace.to_text())
    print(f"selected {weights.m} subsets; weights at {weights_path}")
    return 0


def _predict_speed(dataset: Dataset, denoiser: TorchDenoiser, config: dict,
                   scheme: str, ensemble: int | None):
    """Sample every timestamp under one scheme; returns arrays plus the NFE ledger."""
    sched = _sched_from(config)
    variables = denoiser.net.spec.variables
    universe = None
    preds, views = [], 0
    for idx, pair in enumerate(dataset.pairs):
        cond = pair.conditioning.subset_variables(list(variables))
        if universe is None:
            universe = cond.dropout_groups()
            weights = _guidance_weights(config, scheme, universe)
        seed = int(np.random.SeedSequence((config["seed"], idx)).generate_state(1)[0])
        res = sample(denoiser, cond, _sampler_config(config, seed, ensemble), sched,
                     weights=weights)
        views = res.views_per_step
        speed_std = res.samples[:, 0]
        speed = (speed_std * dataset.stats.std("speed") + dataset.stats.mean("speed"))
        preds.append(speed)
    predictions = np.stack(preds)  # (n_ts, ens, H, W)
    steps = config["sampler"]["steps"]
    nfe_total = views * steps * predictions.shape[0] * predictions.shape[1]
    return predictions, views, nfe_total


def _truth_speed(dataset: Dataset) -> np.ndarray:
    return np.stack([p.hr_targets[0].grids[0].values for p in dataset.pairs])


def save_predictions(path: str, predictions: np.ndarray, scheme: str,
                     views_per_step: int, nfe_total: int) -> None:
    header = {
        "format": PREDICTIONS_FORMAT,
        "scheme": scheme,
        "shape": list(predictions.shape),
        "views_per_step": views_per_step,
        "nfe_total": nfe_total,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(predictions, dtype="<f4").tobytes())


def load_predictions(path: str):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read predictions: {exc}") from exc
    header_len = int.from_bytes(raw[:8], "little")
    header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    if header.get("format") != PREDICTIONS_FORMAT:
        raise FormatError(f"unknown predictions format {header.get('format')!r}")
    count = int(np.prod(header["shape"]))
    if len(raw) != 8 + header_len + 4 * count:
        raise FormatError("predictions payload truncated")
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=8 + header_len)
    return values.reshape(header["shape"]).astype(np.float64), header


def cmd_sample(config: dict, scheme: str | None = None, ensemble: int | None = None) -> int:
    dataset = _read_dataset(_require(config, "eval_dataset", "path"))
    denoiser = load_checkpoint(_require(config, "model", "checkpoint"))
    scheme = scheme or config["guidance"]["scheme"]
    predictions, views, nfe_total = _predict_speed(dataset, denoiser, config, scheme, ensemble)
    out_dir = config["out"]
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"predictions_{scheme}.wsp")
    save_predictions(path, predictions, scheme, views, nfe_total)
    print(f"wrote {path} (ensemble {predictions.shape[1]}, nfe_total {nfe_total})")
    return 0


def cmd_evaluate(config: dict, schemes: list[str] | None = None,
                 ensemble: int | None = None) -> int:
    dataset = _read_dataset(_require(config, "eval_dataset", "path"))
    truths = _truth_speed(dataset)
    if schemes is None:
        schemes = ["bicubic", "direct", "cfg"]
        if config["guidance"]["weights_path"]:
            schemes.append("ccfg")
    rows = []
    denoiser = None
    for scheme in schemes:
        if scheme == "bicubic":
            preds = np.stack([bicubic_baseline(p)["speed"].values for p in dataset.pairs])
            predictions = preds[:, None]
            views, nfe_total = 0, 0
        else:
            if denoiser is None:
                denoiser = load_checkpoint(_require(config, "model", "checkpoint"))
            predictions, views, nfe_total = _predict_speed(dataset, denoiser, config,
                                                           scheme, ensemble)
        pset = PredictionSet(predictions=predictions, truths=truths, nfe_total=nfe_total)
        report = metric_report(pset)
        for metric, value in report.items():
            rows.append((scheme, metric, value, views, nfe_total, predictions.shape[1]))
    out_dir = config["out"]
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "metrics.tsv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("scheme\tmetric\tvalue\tnfe_per_step\tnfe_total\tensemble\n")
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")
    for scheme, metric, value, *_ in rows:
        print(f"{scheme:8s} {metric:8s} {value:.4f}")
    print(f"metric report at {path}")
    return 0


def write_pgm(path: str, values: np.ndarray) -> None:
    """8-bit binary portable graymap, linearly scaled to the value range."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.round((v - lo) * scale).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _write_grid_tsv(path: str, values: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(values):
            fh.write("\t".join(f"{v:.9g}" for v in row) + "\n")


def cmd_export_maps(config: dict, predictions_path: str | None = None) -> int:
    dataset = _read_dataset(_require(config, "eval_dataset", "path"))
    out_dir = config["out"]
    os.makedirs(out_dir, exist_ok=True)
    if predictions_path is None:
        predictions_path = os.path.join(out_dir, f"predictions_{config['guidance']['scheme']}.wsp")
    predictions, header = load_predictions(predictions_path)
    truths = _truth_speed(dataset)
    if predictions.shape[0] != truths.shape[0] or predictions.shape[2:] != truths.shape[1:]:
        raise FormatError(
            f"predictions {predictions.shape} do not match dataset truths {truths.shape}"
        )
    pred_map = mean_map(predictions)
    true_map = mean_map(truths)
    bias = pred_map - true_map
    for name, grid in (("pred_mean_map", pred_map), ("true_mean_map", true_map),
                       ("bias_map", bias)):
        write_pgm(os.path.join(out_dir, f"{name}.pgm"), grid)
        _write_grid_tsv(os.path.join(out_dir, f"{name}.tsv"), grid)
    print(f"wrote mean/bias maps for scheme {header['scheme']!r} to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="windsr",
        description="Composite classifier-free guidance for wind super-resolution",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("generate", "write a synthetic paired dataset"),
        ("train", "train the toy denoiser"),
        ("select", "run subset-weight selection"),
        ("sample", "sample predictions for an evaluation dataset"),
        ("evaluate", "compute metrics for one or more inference schemes"),
        ("export-maps", "export mean-map and bias-map images and grids"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
        if name in ("sample", "evaluate"):
            p.add_argument("--scheme", choices=["direct", "cfg", "ccfg", "bicubic"],
                           action="append", default=None)
            p.add_argument("--ensemble", type=int, default=None)
        if name == "export-maps":
            p.add_argument("--predictions", default=None,
                           help="predictions file (default: from scheme in config)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        config = load_config(args.config, overrides)
        write_snapshot(config, config["out"])
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "select":
            return cmd_select(config)
        if args.command == "sample":
            scheme = args.scheme[0] if args.scheme else None
            return cmd_sample(config, scheme=scheme, ensemble=args.ensemble)
        if args.command == "evaluate":
            return cmd_evaluate(config, schemes=args.scheme, ensemble=args.ensemble)
        if args.command == "export-maps":
            return cmd_export_maps(config, predictions_path=args.predictions)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ValidationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
