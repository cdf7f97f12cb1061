"""Shared plumbing for the CLI and the acceptance experiments.

Turns a manifest directory into windowed train/val/test splits, builds
model configs that match the data, trains and scores variants, and renders
the ablation table.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

from pedfuse.data import Manifest, load_manifest, prepare_windows, split
from pedfuse.errors import ConfigError
from pedfuse.metrics import METRIC_COLUMNS, METRIC_TITLES, MetricsReport
from pedfuse.models import ENCODER_LABELS, FUSION_LABELS, ModelConfig, build, resolve_variant
from pedfuse.training import Hyperparams, TrainHistory, evaluate_model, train

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = (
    "Model", "Visual Encoder", "Global Context", "Fusion Approach", "Accuracy", "AUC", "F1", "Precision", "Recall",
)
CHECK, CROSS = "✓", "✗"


@dataclass
class DataSpec:
    seq_len: int = 16
    overlap: float = 0.8
    tte_range: tuple = (30, 60)
    split: tuple = (0.7, 0.15, 0.15)
    split_seed: int = 0

    def __post_init__(self):
        self.tte_range = tuple(self.tte_range)
        self.split = tuple(float(r) for r in self.split)


@dataclass
class Splits:
    manifest: Manifest
    train: list
    val: list
    test: list

    def named(self, name: str) -> list:
        if name == "all":
            return self.train + self.val + self.test
        if name not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {name!r}; expected train, val, test or all")
        return getattr(self, name)


def windows_from_tracks(tracks, frame_size, spec: DataSpec) -> tuple[list, list, list]:
    windows = prepare_windows(tracks, frame_size, spec.seq_len, spec.overlap, spec.tte_range)
    return split(windows, spec.split, spec.split_seed)


def load_splits(data_dir, spec: DataSpec) -> Splits:
    manifest = load_manifest(data_dir)
    tr, va, te = windows_from_tracks(manifest.tracks, manifest.frame_size, spec)
    return Splits(manifest, tr, va, te)


def visual_settings(header: dict) -> dict:
    """Model fields implied by the manifest's visual channel description."""
    if header.get("visual", "features") == "images":
        if "image_shape" not in header:
            raise ConfigError("image manifest does not declare image_shape")
        return {"visual_input": "images", "image_shape": tuple(header["image_shape"])}
    if "feature_dim" not in header:
        raise ConfigError("feature manifest does not declare feature_dim")
    return {"visual_input": "features", "feature_dim": int(header["feature_dim"])}


def variant_config(variant: str, header: dict, **dims) -> ModelConfig:
    base = {**dims, **visual_settings(header)}
    return resolve_variant(variant, **base).validate()


def check_compatible(config: ModelConfig, header: dict, seq_len: int) -> None:
    want = visual_settings(header)
    have = {k: getattr(config, k) for k in want}
    if have != want or config.seq_len != seq_len:
        raise ConfigError(
            f"checkpoint expects {have} with seq_len {config.seq_len}, dataset provides {want} with seq_len {seq_len}"
        )


@dataclass
class VariantResult:
    name: str
    config: ModelConfig
    report: MetricsReport | None = None
    history: TrainHistory | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None


def fit_and_score(name: str, config: ModelConfig, hp: Hyperparams, train_set, val_set, test_set) -> VariantResult:
    """Train ``config``, restore its best epoch, and score it on ``test_set``."""
    model = build(config)
    history = train(model, train_set, val_set, hp)
    if history.best_state is not None:
        model.load_state_dict(history.best_state)
    report, _, _ = evaluate_model(model, test_set)
    return VariantResult(name, config, report, history)


def run_variant(name: str, config: ModelConfig, hp: Hyperparams, splits) -> VariantResult:
    """``fit_and_score`` that records failures instead of raising."""
    train_set, val_set, test_set = splits
    try:
        return fit_and_score(name, config, hp, train_set, val_set, test_set)
    except Exception as exc:  # recorded in the table; the grid carries on
        logger.warning("variant %s failed: %s", name, exc)
        return VariantResult(name, config, error=f"{type(exc).__name__}: {exc}")


def _descriptor(r: VariantResult) -> list[str]:
    c = r.config
    return [r.name, ENCODER_LABELS[c.visual_encoder], CHECK if c.use_global_context else CROSS, FUSION_LABELS[c.fusion]]


def best_per_column(results: list[VariantResult]) -> dict[str, float]:
    best = {}
    for key in METRIC_COLUMNS:
        values = [getattr(r.report, key) for r in results if r.ok and key not in r.report.degenerate]
        if values:
            best[key] = max(values)
    return best


def ablation_rows(results: list[VariantResult], mark_best: bool = False) -> list[list[str]]:
    best = best_per_column(results) if mark_best else {}
    rows = []
    for r in results:
        row = _descriptor(r)
        for key in METRIC_COLUMNS:
            if not r.ok:
                row.append("failed")
                continue
            v = getattr(r.report, key)
            cell = f"{v:.4f}" if key not in r.report.degenerate else f"{v:.4f}?"
            if mark_best and key in best and v == best[key] and key not in r.report.degenerate:
                cell = f"*{cell}*"
            row.append(cell)
        rows.append(row)
    return rows


def ablation_csv(results: list[VariantResult], provenance: str) -> str:
    """Plain numeric cells; degenerate metrics and failures get their own columns."""
    buf = io.StringIO()
    buf.write(provenance)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_COLUMNS + ("Status", "Degenerate"))
    for r in results:
        if r.ok:
            cells = [f"{getattr(r.report, k):.4f}" for k in METRIC_COLUMNS]
            tail = ["ok", ";".join(r.report.degenerate)]
        else:
            cells = [""] * len(METRIC_COLUMNS)
            tail = [r.error, ""]
        writer.writerow(_descriptor(r) + cells + tail)
    return buf.getvalue()


def render_table(header, rows) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), rule] + [fmt(r) for r in rows])


def ablation_text(results: list[VariantResult], provenance: str) -> str:
    lines = [provenance.rstrip("\n"), render_table(ABLATION_COLUMNS, ablation_rows(results, mark_best=True)), ""]
    lines.append("*best* marks the best value in each metric column; ? marks a degenerate metric.")
    for r in results:
        if not r.ok:
            lines.append(f"{r.name} failed: {r.error}")
    return "\n".join(lines) + "\n"


def provenance_block(config: dict, prefix: str = "# ") -> str:
    return prefix + "config " + json.dumps(config, sort_keys=True) + "\n"


def hp_from(d: dict) -> Hyperparams:
    keys = Hyperparams.__dataclass_fields__
    return Hyperparams(**{k: v for k, v in d.items() if k in keys}).validate()


def report_document(report: MetricsReport) -> dict:
    """Metrics in the published column order, then the supporting counts."""
    return {
        "metrics": {title: getattr(report, key) for key, title in zip(METRIC_COLUMNS, METRIC_TITLES)},
        "degenerate": list(report.degenerate),
        "threshold": report.threshold,
        "counts": {"tp": report.tp, "fp": report.fp, "tn": report.tn, "fn": report.fn},
    }


def config_dict(obj) -> dict:
    d = asdict(obj)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

