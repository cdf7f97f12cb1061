"""Command-line interface: gen-data, train, eval, ablate, gradcheck.

Settings resolve in three layers: built-in defaults, then a JSON object
given with ``--config``, then explicit flags.  Every command validates the
resolved settings before touching the output location, and every file it
writes records them.

Exit status: 0 success, 1 failed check or training error, 2 bad input or
configuration, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from pedfuse import __version__
from pedfuse import gradcheck as gc
from pedfuse.data import SynthConfig, synth_generate, synth_header, write_manifest
from pedfuse.errors import NumericError, PedfuseError
from pedfuse.experiments import (
    DataSpec,
    ablation_csv,
    ablation_text,
    check_compatible,
    hp_from,
    load_splits,
    provenance_block,
    report_document,
    run_variant,
    variant_config,
)
from pedfuse.models import build, variant_names
from pedfuse.training import checkpoint_meta, evaluate_model, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("pedfuse")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

COMMON = {"seed": 0, "out": None, "log_level": "WARNING"}

GEN_DEFAULTS = {
    **COMMON, "out": "data",
    "n_samples": 256, "positive_rate": 0.5, "pose": 0.0, "bbox": 0.0, "speed": 0.0, "local": 0.0, "global": 0.0,
    "noise_sigma": 0.3, "visual": "features", "feature_dim": 32, "image_shape": [16, 16, 1], "track_len": 16,
    "tte_range": [30, 60], "pose_missing_rate": 0.0,
}

TRAIN_DEFAULTS = {
    **COMMON, "out": "run", "data": None, "variant": "Ours",
    "hidden_dim": 16, "seq_len": 16, "overlap": 0.8, "tte_range": [30, 60], "split": [0.7, 0.15, 0.15],
    "dropout_rate": 0.5, "conv_channels": 8, "conv_depth": 2,
    "epochs": 40, "batch_size": 16, "learning_rate": 1e-3, "l2_lambda": 1e-3,
}

ABLATE_DEFAULTS = {**TRAIN_DEFAULTS, "out": "ablation", "jobs": 1}
ABLATE_DEFAULTS.pop("variant")

EVAL_DEFAULTS = {**COMMON, "out": "metrics.json", "checkpoint": None, "data": None, "split_name": "test",
                 "threshold": 0.5}

GRADCHECK_DEFAULTS = {**COMMON, "out": None, "precision": "extended", "kinds": ["op", "layer", "model"]}

DEFAULTS = {"gen-data": GEN_DEFAULTS, "train": TRAIN_DEFAULTS, "eval": EVAL_DEFAULTS, "ablate": ABLATE_DEFAULTS,
            "gradcheck": GRADCHECK_DEFAULTS}


class UsageError(PedfuseError):
    pass


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def _words(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", dest="config_file", help="JSON file of settings (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _model_and_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset directory (manifest.jsonl)")
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--seq-len", type=int)
    p.add_argument("--overlap", type=float)
    p.add_argument("--tte-range", type=_ints, help="min,max frames before the event")
    p.add_argument("--split", type=_floats, help="train,val,test fractions")
    p.add_argument("--dropout-rate", type=float)
    p.add_argument("--conv-channels", type=int)
    p.add_argument("--conv-depth", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--l2", dest="l2_lambda", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pedfuse", description="Multimodal pedestrian crossing-intention models")
    parser.add_argument("--version", action="version", version=f"pedfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset", argument_default=argparse.SUPPRESS)
    _common(p)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--positive-rate", type=float)
    for ch in ("pose", "bbox", "speed", "local", "global"):
        p.add_argument(f"--{ch}", type=float, help=f"{ch} signal strength in [0, 1]")
    p.add_argument("--noise", dest="noise_sigma", type=float)
    p.add_argument("--visual", choices=["features", "images"])
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--image-shape", type=_ints, help="H,W,C")
    p.add_argument("--track-len", type=int)
    p.add_argument("--tte-range", type=_ints)
    p.add_argument("--pose-missing-rate", type=float)

    p = sub.add_parser("train", help="train one model variant", argument_default=argparse.SUPPRESS)
    _common(p)
    _model_and_training(p)
    p.add_argument("--variant", help=f"one of {', '.join(variant_names())}")

    p = sub.add_parser("eval", help="evaluate a checkpoint", argument_default=argparse.SUPPRESS)
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--split-name", choices=["train", "val", "test", "all"])
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("ablate", help="train and score all eight variants", argument_default=argparse.SUPPRESS)
    _common(p)
    _model_and_training(p)
    p.add_argument("--jobs", type=int, help="parallel worker processes")

    p = sub.add_parser("gradcheck", help="finite-difference check of every component", argument_default=argparse.SUPPRESS)
    _common(p)
    p.add_argument("--precision", choices=["extended", "double"],
                   help="precision of the finite-difference evaluations (default extended)")
    p.add_argument("--kinds", type=_words, help="subset of op,layer,model")
    return parser


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """defaults < --config file < flags."""
    defaults = DEFAULTS[command]
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config_file")}
    from_file = {}
    path = getattr(ns, "config_file", None)
    if path:
        try:
            from_file = json.loads(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
        if not isinstance(from_file, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        unknown = sorted(set(from_file) - set(defaults))
        if unknown:
            raise UsageError(f"unknown setting(s) for {command}: {', '.join(unknown)}")
    return {**defaults, **from_file, **flags}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _prepare_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _synth_config(cfg: dict) -> SynthConfig:
    synth = SynthConfig(
        n_samples=cfg["n_samples"], positive_rate=cfg["positive_rate"], pose=cfg["pose"], bbox=cfg["bbox"],
        speed=cfg["speed"], local=cfg["local"], global_=cfg["global"], noise_sigma=cfg["noise_sigma"],
        visual=cfg["visual"], feature_dim=cfg["feature_dim"], image_shape=tuple(cfg["image_shape"]),
        track_len=cfg["track_len"], tte_range=tuple(cfg["tte_range"]), pose_missing_rate=cfg["pose_missing_rate"],
        seed=cfg["seed"],
    )
    synth.validate()
    return synth


def cmd_gen_data(cfg: dict) -> int:
    synth = _synth_config(cfg)
    tracks = synth_generate(synth)
    out = _prepare_dir(cfg["out"])
    header = synth_header(synth, __version__)
    # the dataset's bytes must not depend on where it is written
    header["run_config"] = {k: v for k, v in cfg.items() if k not in ("out", "log_level")}
    path = write_manifest(out, tracks, header)
    provenance = {"tool": "pedfuse", "tool_version": __version__, "command": "gen-data", "seed": cfg["seed"],
                  "config": cfg, "synth_config": synth.to_dict(), "n_tracks": len(tracks)}
    (out / "provenance.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(tracks)} tracks to {path}")
    return EXIT_OK


def _data_spec(cfg: dict) -> DataSpec:
    return DataSpec(seq_len=cfg["seq_len"], overlap=cfg["overlap"], tte_range=tuple(cfg["tte_range"]),
                    split=tuple(cfg["split"]), split_seed=cfg["seed"])


def _dims(cfg: dict) -> dict:
    return {"hidden_dim": cfg["hidden_dim"], "seq_len": cfg["seq_len"], "dropout_rate": cfg["dropout_rate"],
            "conv_channels": cfg["conv_channels"], "conv_depth": cfg["conv_depth"], "seed": cfg["seed"]}


def _check_variant(name: str) -> None:
    if name not in variant_names():
        raise UsageError(f"unknown variant {name!r}; expected one of {', '.join(variant_names())}")


def cmd_train(cfg: dict) -> int:
    _require(cfg, "data")
    _check_variant(cfg["variant"])
    hp = hp_from(cfg)
    splits = load_splits(cfg["data"], _data_spec(cfg))
    config = variant_config(cfg["variant"], splits.manifest.header, **_dims(cfg))
    if not splits.train:
        raise UsageError("the training split is empty")
    model = build(config)
    history = train(model, splits.train, splits.val, hp)
    out = _prepare_dir(cfg["out"])
    meta = {"run_config": cfg, "epochs_run": len(history)}
    save_checkpoint(model, out / "final.ckpt.json", {**meta, "kind": "final", "epoch": len(history)})
    if history.best_state is not None:
        model.load_state_dict(history.best_state)
    save_checkpoint(model, out / "best.ckpt.json", {**meta, "kind": "best", "epoch": history.best_epoch})
    prov = provenance_block(cfg)
    (out / "history.csv").write_text(prov + history.to_csv())
    lines = [prov.rstrip("\n"), f"variant {cfg['variant']}  best epoch {history.best_epoch}  "
             f"train windows {len(splits.train)}  val windows {len(splits.val)}  test windows {len(splits.test)}"]
    for r in history.rows:
        val = "-" if r["val_loss"] is None else f"{r['val_loss']:.4f}"
        acc = "-" if r["val_accuracy"] is None else f"{r['val_accuracy']:.4f}"
        lines.append(f"epoch {r['epoch']:4d}  train_loss {r['train_loss']:.4f}  val_loss {val}  val_accuracy {acc}")
    (out / "history.txt").write_text("\n".join(lines) + "\n")
    print(f"trained {cfg['variant']} for {len(history)} epoch(s); artifacts in {out}")
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    _require(cfg, "checkpoint", "data")
    model = load_checkpoint(cfg["checkpoint"])
    run = checkpoint_meta(cfg["checkpoint"]).get("run_config", {})
    spec_cfg = {**TRAIN_DEFAULTS, **{k: v for k, v in run.items() if k in TRAIN_DEFAULTS}}
    spec = _data_spec(spec_cfg)
    spec.seq_len = model.config.seq_len
    splits = load_splits(cfg["data"], spec)
    check_compatible(model.config, splits.manifest.header, spec.seq_len)
    windows = splits.named(cfg["split_name"])
    if not windows:
        raise UsageError(f"split {cfg['split_name']!r} has no windows")
    report, _, _ = evaluate_model(model, windows, cfg["threshold"])
    doc = {"tool_version": __version__, "config": cfg, "split_config": spec.__dict__ | {"split": list(spec.split)},
           "n_windows": len(windows), **report_document(report)}
    out = Path(cfg["out"])
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, default=list) + "\n")
    for title, value in doc["metrics"].items():
        flag = "  (degenerate)" if any(title.lower().startswith(d) for d in report.degenerate) else ""
        print(f"{title:<10} {value:.4f}{flag}")
    return EXIT_OK


def _ablate_worker(args):
    name, config, hp, splits = args
    return run_variant(name, config, hp, splits)


def cmd_ablate(cfg: dict) -> int:
    _require(cfg, "data")
    if cfg["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    hp = hp_from(cfg)
    splits = load_splits(cfg["data"], _data_spec(cfg))
    if not splits.train or not splits.test:
        raise UsageError("ablation needs non-empty train and test splits")
    header = splits.manifest.header
    data = (splits.train, splits.val, splits.test)
    jobs = [(name, variant_config(name, header, **_dims(cfg)), hp, data) for name in variant_names()]
    out = _prepare_dir(cfg["out"])
    if cfg["jobs"] == 1:
        results = [_ablate_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            results = list(pool.map(_ablate_worker, jobs))
    prov = provenance_block(cfg)
    (out / "ablation.csv").write_text(ablation_csv(results, prov))
    text = ablation_text(results, prov)
    (out / "ablation.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAIL


def cmd_gradcheck(cfg: dict) -> int:
    kinds = tuple(cfg["kinds"])
    bad = set(kinds) - {"op", "layer", "model"}
    if bad:
        raise UsageError(f"unknown gradcheck kind(s): {', '.join(sorted(bad))}")
    results = gc.run_all(cfg["seed"], extended=cfg["precision"] == "extended", kinds=kinds)
    report = gc.format_report(results)
    print(report)
    if cfg["out"]:
        doc = {"tool_version": __version__, "config": cfg, "tolerance": gc.TOLERANCE, "epsilon": gc.EPSILON,
               "components": [r.to_dict() for r in results]}
        Path(cfg["out"]).write_text(json.dumps(doc, indent=2) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = resolve(ns.command, ns)
        logging.basicConfig(level=cfg["log_level"], format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[ns.command](cfg)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except PedfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
