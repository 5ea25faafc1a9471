"""``multiasl`` command line: synth, train, eval, gradcheck and ablate.

Every command that takes ``--out`` writes fixed file names there
(``config.echo.json``, ``train.log.jsonl``, ``metrics.json``,
``checkpoint.bin``).  Failures print a one-line JSON error to stderr and exit
nonzero.  ``MULTIASL_LOG_LEVEL`` sets the logging level (default WARNING).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .datagen import DatasetFormatError, generate, read_dataset, read_manifest, split_indices, write_dataset
from .gradcheck import run_gradchecks
from .trainer import TrainingError, evaluate, fit, load_model, localization_auc, prepare

DATASET_FILE = "dataset.bin"
FRAME_DUMP_FILE = "frames.jsonl"
log = logging.getLogger("multiasl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _dataset_file(data) -> Path:
    data = Path(data)
    path = data / DATASET_FILE if data.is_dir() else data
    if not path.exists():
        raise FileNotFoundError(f"no dataset at {path}")
    return path


def _load_split(data, split: str):
    path = _dataset_file(data)
    videos, manifest = read_dataset(path), read_manifest(path)
    if len(videos) != len(manifest):
        raise DatasetFormatError("manifest and dataset disagree on the number of records")
    if split == "all":
        return videos
    return [v for v, m in zip(videos, manifest) if m["split"] == split]


def _metrics(result, videos, views) -> dict:
    out = result.summary()
    try:
        out["actionness_auc"] = localization_auc(result, videos, views)
    except ValueError:
        out["actionness_auc"] = None
    return out


def cmd_synth(args) -> dict:
    cfg = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    videos = generate(cfg.synth)
    labels = np.array([v.labels for v in videos]).reshape(len(videos), cfg.synth.num_classes)
    is_test = split_indices(labels, cfg.synth.test_fraction, cfg.synth.seed)
    write_dataset(videos, out / DATASET_FILE, ["test" if t else "train" for t in is_test])
    _write_json(out / "config.echo.json", cfg.to_dict())
    return {"videos": len(videos), "train": int((~is_test).sum()), "test": int(is_test.sum()),
            "path": str(out / DATASET_FILE)}


def cmd_train(args) -> dict:
    cfg = load_config(args.config) if args.config else RunConfig()
    train, test = _load_split(args.data, "train"), _load_split(args.data, "test")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.echo.json", cfg.to_dict())
    result = fit(cfg.train, train, test or None, out_dir=out)
    metrics = {"best_epoch": result.best_epoch, "epochs": len(result.history) - 1}
    if result.test is not None:
        metrics.update(_metrics(result.test, test, cfg.train.views))
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_eval(args) -> dict:
    model, cfg, meta = load_model(args.checkpoint)
    videos = _load_split(args.data, args.split)
    if not videos:
        raise ValueError(f"dataset has no {args.split!r} records")
    data = prepare(videos, cfg.encoder.patch_size, cfg.views, model.input_stats)
    result = evaluate(model, data, cfg.clip_length, cfg.loss, cfg.scores_from)
    metrics = {"checkpoint_epoch": meta["best_epoch"], **_metrics(result, videos, cfg.views)}
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    if args.out:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "metrics.json", metrics)
    if args.dump_frames:
        with open(out / FRAME_DUMP_FILE, "w") as fh:
            for i, v in enumerate(videos):
                frames = result.frame_indices[i]
                row = {"video": i, "frame_indices": frames.tolist(),
                       "actionness": result.actionness[i].tolist(),
                       "positives": np.flatnonzero(result.positives[i]).tolist(),
                       "segment_mask": v.segment_mask(frames, cfg.views).tolist()}
                fh.write(json.dumps(row) + "\n")
    return metrics


def cmd_gradcheck(args) -> dict:
    results = run_gradchecks(args.seed, args.probes)
    for r in results:
        print(json.dumps(r.as_dict()))
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise GradcheckFailed(f"gradient check failed: {', '.join(failed)}")
    print("all checks passed")
    return {}


class GradcheckFailed(Exception):
    pass


LOSS_ROWS = [
    ("view+frame+actionness", dict()),
    ("view+frame", dict(beta2=0.0)),
    ("view", dict(beta1=0.0, beta2=0.0)),
    ("frame+actionness", dict(view_weight=0.0)),
    ("frame", dict(view_weight=0.0, beta2=0.0)),
]


def cmd_ablate(args) -> dict:
    cfg = load_config(args.config) if args.config else RunConfig()
    train, test = _load_split(args.data, "train"), _load_split(args.data, "test")
    if not test:
        raise ValueError("ablation needs a test split")
    base = cfg.train
    rows = {"loss": [], "views": []}

    def run(train_cfg):
        r = fit(train_cfg, train, test)
        return {"map_c": r.test.map_c, "map_s": r.test.map_s}

    if args.table in ("loss", "both"):
        for name, weights in LOSS_ROWS:
            tc = dataclasses.replace(base, loss=dataclasses.replace(base.loss, **weights))
            rows["loss"].append({"losses": name, **run(tc)})
            log.info("loss row %s done", name)
    if args.table in ("views", "both"):
        n = train[0].frames.shape[0]
        for views in [None] + [[i] for i in range(n)]:
            tc = dataclasses.replace(base, views=views)
            rows["views"].append({"views": "all" if views is None else f"view {views[0] + 1}", **run(tc)})
    for table, entries in rows.items():
        for e in entries:
            key = e.get("losses", e.get("views"))
            print(f"{table:6s} {key:24s} mAP_C={e['map_c']:.4f} mAP_S={e['map_s']:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.echo.json", cfg.to_dict())
        _write_json(out / "ablation.json", rows)
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="multiasl", description="Multi-view action selection learning on synthetic videos.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train and write checkpoint, log and metrics")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=["test", "train", "all"], default="test")
    e.add_argument("--dump-frames", action="store_true",
                   help=f"write per-frame actionness and pseudo positives to {FRAME_DUMP_FILE}")
    e.add_argument("--out", help="directory for metrics.json and the frame dump")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference checks of all losses and layers")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--probes", type=int, default=100)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="loss-component and view-subset ablations")
    a.add_argument("--config")
    a.add_argument("--data", required=True)
    a.add_argument("--table", choices=["loss", "views", "both"], default="both")
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("MULTIASL_LOG_LEVEL", "WARNING").upper(), None)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        result = args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except (ConfigError, DatasetFormatError, FileNotFoundError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except (GradcheckFailed, TrainingError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    if args.command != "gradcheck":
        print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
