"""Command-line front end: synth | validate | train | score | eval.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime or
numeric error. All outputs land under --out. Flag values override config-file
values, which override defaults. DQAD_THREADS caps scoring parallelism.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import features, metrics, trainer
from .environment import TrainingData
from .errors import ConfigError, DataError, DqadError, NumericError, StateError
from .qnet import load_checkpoint, save_checkpoint


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _write_json(path, obj):
    features._atomic_write(path, json.dumps(obj, indent=2).encode())


def _n_workers():
    n = os.cpu_count() or 1
    cap = os.environ.get("DQAD_THREADS")
    if cap is not None:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"DQAD_THREADS must be an integer, got {cap!r}") from exc
    return min(n, 8)


def _on_off(value):
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def cmd_synth(args):
    spec_obj = _load_json(args.config) if args.config else {}
    spec = features.SynthSpec.from_json(spec_obj)
    if args.seed is not None:
        spec.seed = args.seed
    dataset = features.synth_generate(spec)
    os.makedirs(args.out, exist_ok=True)
    features.write_dataset(dataset, args.out)
    print(
        f"synth: wrote {len(dataset.images)} maps "
        f"({dataset.count(kind='anomalous')} anomalous) to {args.out}"
    )
    return 0


def cmd_validate(args):
    dataset = features.read_dataset(args.data)
    counts = {
        split: {kind: dataset.count(split, kind) for kind in ("normal", "anomalous")}
        for split in features.SPLITS
        if dataset.count(split)
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "validate.json"), {"ok": True, "counts": counts})
    print(f"validate: {args.data} ok, {len(dataset.images)} files, counts={counts}")
    return 0


def _train_config(args):
    obj = _load_json(args.config) if args.config else {}
    cfg = trainer.TrainConfig.from_json(obj)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.per is not None:
        cfg.per_enabled = args.per
    if args.bs is not None:
        cfg.bs_enabled = args.bs
    return cfg


def _load_training_data(dataset, cfg):
    data = TrainingData.from_dataset(dataset, split="train")
    if cfg.standardize:
        mean, std = features.channel_stats(data.normal)
        data.normal = [features.standardize_image(img, mean, std) for img in data.normal]
        data.anomalous = [features.standardize_image(img, mean, std) for img in data.anomalous]
    return data


def cmd_train(args):
    cfg = _train_config(args)
    dataset = features.read_dataset(args.data)
    data = _load_training_data(dataset, cfg)
    net, opt, log = trainer.train(data, cfg)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "checkpoint.dqadckpt"), net, opt)
    features._atomic_write(os.path.join(args.out, "runlog.jsonl"), log.to_jsonl().encode())
    _write_json(os.path.join(args.out, "config.json"), cfg.to_json())
    print(
        f"train: {cfg.total_steps} steps done "
        f"(updates={log.n_updates}, syncs={log.n_syncs}, resamples={log.n_resamples}) -> {args.out}"
    )
    return 0


def _score_images(net, pairs):
    def one(pair):
        _, image = pair
        return metrics.score_map(net, image)

    with ThreadPoolExecutor(max_workers=_n_workers()) as pool:
        return list(pool.map(one, pairs))


def cmd_score(args):
    net, _ = load_checkpoint(args.checkpoint)
    dataset = features.read_dataset(args.data)
    pairs = dataset.select(split=args.split)
    if not pairs:
        raise DataError(f"no images in split {args.split!r}")
    results = _score_images(net, pairs)

    os.makedirs(args.out, exist_ok=True)
    image_scores = {}
    for (entry, image), (grid, img_score) in zip(pairs, results):
        out_map = features.AggregatedFeatureMap(grid[:, :, None], image.mask)
        features.write_feature_map(os.path.join(args.out, f"score_{entry.path}"), out_map)
        image_scores[entry.path] = img_score
    _write_json(os.path.join(args.out, "image_scores.json"), image_scores)
    print(f"score: wrote {len(results)} score maps to {args.out}")
    return 0


def cmd_eval(args):
    net, _ = load_checkpoint(args.checkpoint)
    dataset = features.read_dataset(args.data)
    pairs = dataset.select(split=args.split)
    if not pairs:
        raise DataError(f"no images in split {args.split!r}")
    report = metrics.evaluate(net, pairs)
    n_seen = dataset.count(split="train", kind="anomalous")
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "report.json"), report.to_json(n_seen_anomalies=n_seen))
    print(
        f"eval: I-AUROC={report.i_auroc:.4f} P-AUROC={report.p_auroc:.4f} "
        f"I-DICE={report.i_dice:.4f} P-DICE={report.p_dice:.4f} -> {args.out}"
    )
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="dqad", description="Deep-Q anomaly detection over feature maps")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, help="generate a synthetic dataset")
    p.add_argument("--config", help="SynthSpec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = add("validate", cmd_validate, help="check a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out")

    p = add("train", cmd_train, help="train the agent")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--per", type=_on_off, default=None, help="prioritized replay on|off")
    p.add_argument("--bs", type=_on_off, default=None, help="boundary selection on|off")

    for name, fn in (("score", cmd_score), ("eval", cmd_eval)):
        p = add(name, fn, help=f"{name} a trained checkpoint on a dataset split")
        p.add_argument("--data", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--split", default="test")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, StateError, DqadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
