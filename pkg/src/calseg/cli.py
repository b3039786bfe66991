"""calseg command line: simulate -> features -> make-gt -> train -> predict
-> evaluate, plus repro and render.

Every command is deterministic given its flags and seeds. Exit codes:
0 success, 2 usage/config error, 3 I/O error, 4 numeric failure.
All array files use the CSF4 container; reports and manifests are JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import inference, metrics, render, storage, training
from .config import PipelineConfig, load_config
from .data import ImageMap, MaskMap
from .errors import (CalsegError, ConfigError, DataError, DegenerateInputError,
                     FormatError, IoError, PlacementError)
from .features import build_feature_stack
from .network import init_params, load_checkpoint, save_checkpoint
from .otsu import make_groundtruth
from .seeding import split_seed
from .simulate import generate_block
from .training import Hyperparams, split_dataset

log = logging.getLogger("calseg")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_INIT_SEED_TAG = 7001  # offsets the net-init stream from the training stream


def _block_path(out_dir: Path, block_id: int) -> Path:
    return out_dir / f"block_{block_id:05d}.csf4"


def _named(prefix: str, out_dir: Path, block_id: int) -> Path:
    return out_dir / f"{prefix}_{block_id:05d}.csf4"


def _require_dir(path: str, create: bool = False) -> Path:
    p = Path(path)
    if create:
        try:
            p.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create directory {p}: {exc}") from exc
    elif not p.is_dir():
        raise IoError(f"not a directory: {p}")
    return p


def _scan(dir_path: Path, prefix: str) -> dict[int, Path]:
    """Map block_id -> file for container files named <prefix>_*.csf4."""
    found = {}
    for path in sorted(dir_path.glob(f"{prefix}_*.csf4")):
        _, header = storage.read_array(path)
        found[int(header.get("block_id", 0))] = path
    return found


def _write_json(path, document: dict) -> None:
    try:
        Path(path).write_text(json.dumps(document, sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = _require_dir(args.out, create=True)
    entries = []
    for i in range(args.blocks):
        sim = generate_block(cfg.sim, split_seed(args.seed, i), block_id=i)
        block_file = _block_path(out, i)
        truth_file = _named("truth", out, i)
        storage.save_block(sim.block, block_file)
        storage.save_mask(sim.truth_mask, truth_file, block_id=i)
        entries.append({
            "block_id": i,
            "block_file": block_file.name,
            "truth_file": truth_file.name,
            "n_neurons": len(sim.neuron_centers),
            "neuron_centers": [[r, c] for r, c in sim.neuron_centers],
        })
    _write_json(out / "manifest.json", {
        "blocks": entries,
        "seed": args.seed,
        "sim_config": cfg.sim.to_json_dict(),
    })
    log.info("wrote %d blocks to %s", args.blocks, out)
    return EXIT_OK


def cmd_features(args) -> int:
    in_dir = _require_dir(args.in_dir)
    out = _require_dir(args.out, create=True)
    blocks = _scan(in_dir, "block")
    if not blocks:
        raise IoError(f"no block_*.csf4 files in {in_dir}")
    for block_id, path in sorted(blocks.items()):
        block = storage.load_block(path)
        stack = build_feature_stack(block)
        storage.save_feature_stack(stack, _named("features", out, block_id), block_id)
    log.info("wrote %d feature stacks to %s", len(blocks), out)
    return EXIT_OK


def cmd_make_gt(args) -> int:
    in_dir = _require_dir(args.in_dir)
    out = _require_dir(args.out, create=True)
    blocks = _scan(in_dir, "block")
    if not blocks:
        raise IoError(f"no block_*.csf4 files in {in_dir}")
    labeled, skipped = [], []
    for block_id, path in sorted(blocks.items()):
        block = storage.load_block(path)
        try:
            mask = make_groundtruth(block)
        except DegenerateInputError as exc:
            log.warning("block %d skipped: %s", block_id, exc)
            skipped.append(block_id)
            continue
        storage.save_mask(mask, _named("label", out, block_id), block_id)
        labeled.append(block_id)
    _write_json(out / "gt_manifest.json", {"labeled": labeled, "skipped": skipped})
    log.info("labeled %d blocks, skipped %d", len(labeled), len(skipped))
    return EXIT_OK


def _load_pairs(features_dir: Path, labels_dir: Path):
    stacks = _scan(features_dir, "features")
    labels = _scan(labels_dir, "label")
    common = sorted(set(stacks) & set(labels))
    if not common:
        raise ConfigError(
            f"no (features, label) pairs shared between {features_dir} and {labels_dir}"
        )
    pairs = []
    for block_id in common:
        stack, _ = storage.load_feature_stack(stacks[block_id])
        mask, _ = storage.load_mask(labels[block_id])
        pairs.append((block_id, stack, mask))
    return pairs


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.hyperparams.seed
    hp = replace(cfg.hyperparams, seed=seed)
    pairs = _load_pairs(_require_dir(args.features), _require_dir(args.labels))

    train_pairs, test_pairs = split_dataset(pairs, cfg.train_fraction, seed)
    if args.half is not None:
        order = np.random.default_rng(split_seed(seed, len(train_pairs))).permutation(
            len(train_pairs))
        cut = len(train_pairs) // 2
        picked = order[:cut] if args.half == "first" else order[cut:]
        train_pairs = [train_pairs[i] for i in sorted(picked)]
        if not train_pairs:
            raise ConfigError("half split left no training blocks")

    net = init_params(cfg.net, split_seed(seed, _INIT_SEED_TAG))
    dataset = [(stack, mask) for _, stack, mask in train_pairs]
    net, history = training.train(net, dataset, hp)

    out = Path(args.out)
    if out.parent and not out.parent.exists():
        raise IoError(f"output directory {out.parent} does not exist")
    save_checkpoint(net, out)
    try:
        Path(str(out) + ".history.jsonl").write_text(
            training.history_to_jsonl(history), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write history: {exc}") from exc
    _write_json(str(out) + ".split.json", {
        "train_ids": [bid for bid, _, _ in train_pairs],
        "test_ids": [bid for bid, _, _ in test_pairs],
        "half": args.half,
        "seed": seed,
        "train_fraction": cfg.train_fraction,
    })
    log.info("trained %d epochs on %d blocks -> %s",
             hp.epochs, len(train_pairs), out)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    net = load_checkpoint(args.ckpt)
    out = _require_dir(args.out, create=True)
    stacks = _scan(_require_dir(args.features), "features")
    if not stacks:
        raise IoError(f"no features_*.csf4 files in {args.features}")
    threshold = cfg.threshold
    for block_id, path in sorted(stacks.items()):
        stack, _ = storage.load_feature_stack(path)
        block_seed = split_seed(args.seed, block_id)
        result = inference.mc_ensemble(net, stack, n=args.samples, seed=block_seed)
        mask = inference.binarize(result.probability, threshold)
        storage.save_map(result.probability, _named("prob", out, block_id), block_id)
        storage.save_map(result.uncertainty, _named("uncert", out, block_id), block_id)
        storage.save_mask(mask, _named("mask", out, block_id), block_id)
        _write_json(out / f"infer_{block_id:05d}.json", {
            "block_id": block_id,
            "n_samples": result.n_samples,
            "seed": args.seed,
            "block_seed": block_seed,
            "threshold": threshold,
        })
    log.info("predicted %d blocks -> %s", len(stacks), out)
    return EXIT_OK


def _load_truth_masks(truth_dir: Path) -> dict[int, MaskMap]:
    for prefix in ("label", "truth", "mask"):
        files = _scan(truth_dir, prefix)
        if files:
            return {bid: storage.load_mask(p)[0] for bid, p in files.items()}
    raise IoError(f"no label_/truth_/mask_*.csf4 files in {truth_dir}")


def cmd_evaluate(args) -> int:
    pred_dir = _require_dir(args.pred)
    truths = _load_truth_masks(_require_dir(args.truth))
    pred_files = _scan(pred_dir, "mask")
    if set(pred_files) != set(truths):
        raise ConfigError(
            f"prediction ids {sorted(pred_files)} != reference ids {sorted(truths)}"
        )
    uncert_files = _scan(pred_dir, "uncert")

    per_block = []
    reports = []
    points = []
    for block_id in sorted(pred_files):
        pred, _ = storage.load_mask(pred_files[block_id])
        report = metrics.evaluate(pred, truths[block_id])
        reports.append(report)
        entry = {"block_id": block_id, **report.to_json_dict()}
        if block_id in uncert_files:
            uncert, _ = storage.load_map(uncert_files[block_id])
            entry["mean_uncertainty"] = float(uncert.values.mean(dtype=np.float64))
            points.append((report.dice, entry["mean_uncertainty"]))
        per_block.append(entry)

    preds = [storage.load_mask(pred_files[bid])[0] for bid in sorted(pred_files)]
    ordered_truths = [truths[bid] for bid in sorted(pred_files)]
    document = {
        "n_blocks": len(per_block),
        "per_block": per_block,
        "mean": metrics.mean_report(reports).to_json_dict(),
        "pooled": metrics.pooled_evaluate(preds, ordered_truths).to_json_dict(),
        "dice_uncertainty_pearson": (
            metrics.dice_uncertainty_correlation(points) if len(points) >= 2 else None
        ),
    }
    _write_json(args.report, document)
    log.info("evaluated %d blocks -> %s", len(per_block), args.report)
    return EXIT_OK


def cmd_repro(args) -> int:
    run1 = _scan(_require_dir(args.run1), "mask")
    run2 = _scan(_require_dir(args.run2), "mask")
    if not run1 or set(run1) != set(run2):
        raise ConfigError(
            f"run block ids differ: {sorted(run1)} vs {sorted(run2)}"
        )
    ids = sorted(run1)
    masks1 = [storage.load_mask(run1[bid])[0] for bid in ids]
    masks2 = [storage.load_mask(run2[bid])[0] for bid in ids]
    mean = metrics.reproducibility_report(masks1, masks2)
    per_block = [
        {"block_id": bid, **metrics.evaluate(pred=b, truth=a).to_json_dict()}
        for bid, a, b in zip(ids, masks1, masks2)
    ]
    _write_json(args.report, {
        "n_blocks": len(ids),
        "reference": "run1",
        "mean": mean.to_json_dict(),
        "per_block": per_block,
    })
    log.info("reproducibility over %d blocks -> %s", len(ids), args.report)
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = load_config(args.config)
    out = _require_dir(args.out, create=True)
    block = storage.load_block(args.block)
    prob, _ = storage.load_map(args.prob)
    uncert, _ = storage.load_map(args.uncert)
    truth, _ = storage.load_mask(args.truth)

    mean_map = render.mean_frame_map(block)
    lo = float(mean_map.values.min())
    hi = float(mean_map.values.max())
    storage.export_map_png(mean_map, out / "raw_mean.png", lo, hi if hi > lo else lo + 1.0)
    storage.export_map_png(prob, out / "probability.png", 0.0, 1.0)
    umax = float(uncert.values.max())
    storage.export_map_png(uncert, out / "uncertainty.png", 0.0, umax if umax > 0 else 1.0)

    pred = inference.binarize(prob, cfg.threshold)
    rgb = render.overlay_image(render.grayscale_background(block), truth, pred)
    render.save_rgb_png(rgb, out / "overlay.png")
    log.info("rendered 4 images -> %s", out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="calseg",
        description="Segment active neurons in synthetic 4D fluorescence "
                    "recordings and quantify prediction uncertainty.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", default=None,
                       help="pipeline config JSON (defaults built in)")

    p = sub.add_parser("simulate", help="generate synthetic blocks + truth masks")
    add_config(p)
    p.add_argument("--out", required=True)
    p.add_argument("--blocks", type=int, default=40)
    p.add_argument("--seed", type=int, default=1000)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("features", help="compute 13-channel feature stacks")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("make-gt", help="Otsu labels from temporal variance maps")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_gt)

    p = sub.add_parser("train", help="train the Bayesian U-Net")
    add_config(p)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--half", choices=("first", "second"), default=None,
                   help="train on one half of the training split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="Monte Carlo ensemble prediction")
    add_config(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=inference.DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=777)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against reference masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("repro", help="agreement between two prediction runs")
    p.add_argument("--run1", required=True)
    p.add_argument("--run2", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_repro)

    p = sub.add_parser("render", help="PNG renderings of one block's results")
    add_config(p)
    p.add_argument("--block", required=True)
    p.add_argument("--prob", required=True)
    p.add_argument("--uncert", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, PlacementError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (IoError, FormatError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except DataError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except CalsegError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
