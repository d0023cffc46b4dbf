"""Command line: ``eegcn {train,eval,sweep,ablate}``.

Exit codes: 0 ok, 2 bad flags or config, 3 data error, 4 non-finite loss,
5 unsupported checkpoint version.  ``EEGCN_LOG_LEVEL`` sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from collections import Counter
from dataclasses import fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .checkpoint import CheckpointError, CheckpointVersionError, load_checkpoint, save_checkpoint
from .corpus import DataError, build_vocab, file_digest, load_dataset, load_glove
from .model import ModelConfig, encode_examples
from .train import (VARIANTS, Experiment, NonFiniteLossError, TrainConfig, evaluate,
                    layer_sweep, run_ablation, run_experiment, write_epoch_log, write_sweep)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONFINITE, EXIT_VERSION = 0, 2, 3, 4, 5

INPUTS = ("train", "test", "parses_train", "parses_test", "glove")

log = logging.getLogger("eegcn")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config files


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    if default is None:  # optional integer (patience)
        return None if raw.lower() in ("", "none") else _coerce(key, raw, 0)
    try:
        return type(default)(raw)
    except ValueError:
        raise UsageError(f"{key}: expected {type(default).__name__}, got {raw!r}") from None


def _defaults() -> dict:
    out = {}
    for cls in (ModelConfig, TrainConfig):
        inst = cls()
        for f in fields(cls):
            out[f.name] = getattr(inst, f.name)
    return out


def parse_settings(lines, source: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    defaults = _defaults()
    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in defaults:
            raise UsageError(f"{source}:{lineno}: unknown setting {key!r}")
        values[key] = _coerce(f"{source}:{lineno}: {key}", raw, defaults[key])
    return values


def resolve_configs(config_path, overrides, seed) -> tuple[ModelConfig, TrainConfig]:
    values = {}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        values.update(parse_settings(path.read_text(encoding="utf-8").splitlines(), str(path)))
    values.update(parse_settings(overrides or [], "--set"))
    if seed is not None:
        values["seed"] = seed
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    try:
        model = ModelConfig(**{k: v for k, v in values.items() if k in model_keys})
        train = TrainConfig(**{k: v for k, v in values.items() if k in train_keys})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    return model, train


# --------------------------------------------------------------------------
# shared plumbing


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _require_inputs(args):
    missing = [f"--{name.replace('_', '-')}" for name in INPUTS if not getattr(args, name)]
    if missing:
        raise UsageError(f"missing required flags: {' '.join(missing)}")
    for name in INPUTS:
        if not Path(getattr(args, name)).is_file():
            raise DataError(f"--{name.replace('_', '-')}: no such file {getattr(args, name)}")


def load_experiment(args, config: ModelConfig, seed: int) -> Experiment:
    train = load_dataset(args.train, args.parses_train)
    test = load_dataset(args.test, args.parses_test)
    if not train:
        raise DataError(f"{args.train}: no examples")
    if not test:
        raise DataError(f"{args.test}: no examples")
    vocab = build_vocab(train + test)
    embeddings = load_glove(args.glove, vocab, dim=config.d_w,
                            rng=np.random.default_rng(seed))
    log.info("vocabulary %d tokens, %d found in %s", len(vocab), embeddings.found, args.glove)
    return Experiment.build(train, test, embeddings)


def _apply_manifest(args):
    """Fill inputs and settings from a previous run's manifest."""
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    for name in INPUTS:
        entry = manifest["inputs"][name]
        setattr(args, name, entry["path"])
        if Path(entry["path"]).is_file() and file_digest(entry["path"]) != entry["sha256"]:
            raise DataError(f"{entry['path']}: digest differs from manifest {args.manifest}")
    settings = {**manifest["model_config"], **manifest["train_config"]}
    args.set = [f"{k}={'none' if v is None else v}" for k, v in settings.items()]
    args.config = None
    args.seed = manifest["seed"]


def _prepare(args):
    if getattr(args, "manifest", None):
        _apply_manifest(args)
    _require_inputs(args)
    model_cfg, train_cfg = resolve_configs(args.config, args.set, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool": f"eegcn {__version__}",
        "backend": backend(),
        "model_config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "seed": train_cfg.seed,
        "inputs": {name: {"path": str(Path(getattr(args, name)).resolve()),
                          "sha256": file_digest(getattr(args, name))} for name in INPUTS},
        "out": str(out.resolve()),
        "started_at": _now(),
    }
    (out / "manifest.json").write_text(_dump(manifest), encoding="utf-8")
    exp = load_experiment(args, model_cfg, train_cfg.seed)
    return model_cfg, train_cfg, exp, out, manifest


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    model_cfg, train_cfg, exp, out, manifest = _prepare(args)
    run = run_experiment(exp, model_cfg, train_cfg)
    save_checkpoint(out / "checkpoint.npz", run.params, run.config, exp.embeddings.vocab,
                    exp.sdi, best_epoch=run.train.best_epoch)
    write_epoch_log(out / "epoch_log.csv", run.train.log)
    (out / "report.json").write_text(run.report.to_json() + "\n", encoding="utf-8")
    manifest["finished_at"] = _now()
    (out / "manifest.json").write_text(_dump(manifest), encoding="utf-8")
    print(run.report.to_json())
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    test = load_dataset(args.test, args.parses_test)
    if not test:
        raise DataError(f"{args.test}: no examples")
    unseen = Counter()
    encoded = encode_examples(test, ckpt.vocab, ckpt.sdi, ckpt.config, unseen)
    report = evaluate(encoded, ckpt.params, ckpt.config, epoch=ckpt.meta.get("best_epoch"),
                      unseen_relations=dict(sorted(unseen.items())))
    sys.stdout.write(report.to_json() + "\n")
    return EXIT_OK


def parse_layers(text: str) -> list[int]:
    text = text.strip()
    m = re.fullmatch(r"(\d+)\s*(?:\.\.|-)\s*(\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        values = list(range(lo, hi + 1))
    else:
        try:
            values = [int(part) for part in text.split(",")]
        except ValueError:
            raise UsageError(f"--layers: cannot parse {text!r}") from None
    if not values or min(values) < 1:
        raise UsageError("--layers: need one or more depths >= 1")
    dupes = sorted(k for k, c in Counter(values).items() if c > 1)
    if dupes:
        raise UsageError(f"--layers: duplicate depths {dupes}")
    return values


def cmd_sweep(args) -> int:
    layers = parse_layers(args.layers)
    model_cfg, train_cfg, exp, out, _ = _prepare(args)
    rows = layer_sweep(layers, exp, model_cfg, train_cfg)
    write_sweep(out / "sweep.csv", rows)
    sys.stdout.write((out / "sweep.csv").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.variant not in VARIANTS:
        raise UsageError(f"--variant must be one of {', '.join(VARIANTS)}")
    model_cfg, train_cfg, exp, out, _ = _prepare(args)
    run = run_ablation(args.variant, exp, model_cfg, train_cfg)
    text = run.report.to_json() + "\n"
    (out / f"report_{args.variant}.json").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _add_run_flags(p, manifest=False):
    p.add_argument("--train", help="training examples (JSON lines)")
    p.add_argument("--test", help="test examples (JSON lines)")
    p.add_argument("--parses-train", dest="parses_train", help="CoNLL-U parses of --train")
    p.add_argument("--parses-test", dest="parses_test", help="CoNLL-U parses of --test")
    p.add_argument("--glove", help="GloVe text vectors")
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one setting (repeatable)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    if manifest:
        p.add_argument("--manifest", help="re-run with the inputs and settings of a manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and evaluate one model")
    _add_run_flags(p, manifest=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--parses-test", dest="parses_test", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train one model per GCN depth")
    _add_run_flags(p)
    p.add_argument("--layers", required=True, help="e.g. 1,2,3 or 1..6")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="train one ablation variant")
    _add_run_flags(p)
    p.add_argument("--variant", required=True, help=" | ".join(VARIANTS))
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("EEGCN_LOG_LEVEL", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"eegcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointVersionError as exc:
        print(f"eegcn: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"eegcn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"eegcn: {exc}", file=sys.stderr)
        return EXIT_NONFINITE


if __name__ == "__main__":
    sys.exit(main())
