"""Binary cross-entropy training with FC-only L2, Adam, and JSON checkpoints."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from pedfuse import __version__
from pedfuse import tensor as tn
from pedfuse.data import to_batch
from pedfuse.errors import CheckpointError, ConfigError, ContractError, NumericError
from pedfuse.metrics import METRIC_COLUMNS, MetricsReport, evaluate
from pedfuse.models import Model, ModelConfig, build
from pedfuse.tensor import Function, Tensor

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "pedfuse.checkpoint"
CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-12


@dataclass
class Hyperparams:
    learning_rate: float = 1e-3
    epochs: int = 40
    batch_size: int = 16
    l2_lambda: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    @classmethod
    def published(cls, **overrides) -> "Hyperparams":
        """The published schedule (pretrained backbones, tiny learning rate)."""
        return cls(**{"learning_rate": 5e-7, "epochs": 40, "batch_size": 2, **overrides})

    def validate(self) -> "Hyperparams":
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# loss and regularization
# ---------------------------------------------------------------------------

class BinaryCrossEntropy(Function):
    def forward(self, p, y):
        self.y = y
        self.p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
        self.inside = (p >= PROB_CLAMP) & (p <= 1.0 - PROB_CLAMP)
        return np.asarray(-np.mean(y * np.log(self.p) + (1.0 - y) * np.log1p(-self.p)))

    def backward(self, g):
        n = self.p.size
        dp = (-self.y / self.p + (1.0 - self.y) / (1.0 - self.p)) / n
        return g * dp * self.inside, None


def _labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ContractError("BCE labels must be 0 or 1")
    return y


def bce_loss(p, y) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped to [1e-12, 1 - 1e-12]."""
    p = tn.as_tensor(p)
    y = _labels(y).reshape(p.shape)
    return BinaryCrossEntropy.apply(p, tn.constant(y))


def bce_value(p, y) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = _labels(y)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def l2_penalty(fc_params, lam: float) -> Tensor:
    """lam * sum of squared FC weights (pass weights only, not biases)."""
    if lam < 0:
        raise ContractError(f"L2 coefficient must be >= 0, got {lam}")
    fc_params = [fc_params] if isinstance(fc_params, Tensor) else list(fc_params)
    total = tn.constant(0.0)
    if lam == 0:
        return total
    for w in fc_params:
        total = total + tn.sum(w * w)
    return total * lam


def fc_weights(model: Model) -> list[Tensor]:
    return [model.blocks["head"].weight]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict, hp: Hyperparams) -> None:
    """Bias-corrected Adam update of ``params`` (name -> array) in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - hp.beta1**t
    c2 = 1.0 - hp.beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= hp.beta1
        m += (1.0 - hp.beta1) * g
        v *= hp.beta2
        v += (1.0 - hp.beta2) * g * g
        p -= hp.learning_rate * (m / c1) / (np.sqrt(v / c2) + hp.adam_eps)


class Adam:
    def __init__(self, named_params, hp: Hyperparams):
        self.params = dict(named_params)
        self.hp = hp
        self.state = AdamState()

    def step(self) -> None:
        adam_step(
            self.state,
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.hp,
        )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss") + tuple(f"val_{k}" for k in METRIC_COLUMNS)


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    best_epoch: int | None = None
    best_state: dict | None = None

    @property
    def train_loss(self) -> list[float]:
        return [r["train_loss"] for r in self.rows]

    @property
    def val_loss(self) -> list[float | None]:
        return [r["val_loss"] for r in self.rows]

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for r in self.rows:
            writer.writerow(["" if r.get(k) is None else repr(r[k]) for k in HISTORY_COLUMNS])
        return buf.getvalue()


def evaluate_model(model: Model, windows, threshold: float = 0.5) -> tuple[MetricsReport, np.ndarray, np.ndarray]:
    bundle, labels = to_batch(windows)
    scores = model.predict(bundle)
    return evaluate(scores, labels, threshold), scores, labels


def train(model: Model, train_set, val_set, hp: Hyperparams, log_every: int = 0, on_epoch=None) -> TrainHistory:
    """Minibatch Adam on BCE + FC L2, keeping the best-validation-loss parameters.

    Batches are reshuffled every epoch from ``hp.seed``; dropout masks come
    from the same generator, so a run is fully determined by its inputs.
    Without a validation set the best epoch is chosen by training loss.
    ``on_epoch(epoch, model, row)`` runs after each epoch; returning True
    stops training early.
    """
    hp.validate()
    if not train_set:
        raise ContractError("training set is empty")
    history = TrainHistory()
    if hp.epochs == 0:
        return history
    start = time.perf_counter()
    bundle, labels = to_batch(train_set)
    n = len(labels)
    rng = np.random.default_rng(hp.seed)
    opt = Adam(model.named_parameters(), hp)
    fc = fc_weights(model)
    best = math.inf
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for bi, s in enumerate(range(0, n, hp.batch_size)):
            idx = order[s : s + hp.batch_size]
            probs = model.forward(bundle.take(idx), train=True, rng=rng)
            loss = bce_loss(probs, labels[idx]) + l2_penalty(fc, hp.l2_lambda)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {bi}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value * len(idx)
        row = {"epoch": epoch, "train_loss": total / n, "val_loss": None}
        row.update({f"val_{k}": None for k in METRIC_COLUMNS})
        if val_set:
            report, scores, vlabels = evaluate_model(model, val_set)
            row["val_loss"] = bce_value(scores, vlabels)
            row.update({f"val_{k}": getattr(report, k) for k in METRIC_COLUMNS})
        history.rows.append(row)
        key = row["val_loss"] if row["val_loss"] is not None else row["train_loss"]
        if key < best:
            best = key
            history.best_epoch = epoch
            history.best_state = model.state_dict()
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d train_loss %.4f val_loss %s", epoch, row["train_loss"], row["val_loss"])
        if on_epoch is not None and on_epoch(epoch, model, row):
            break
    history.wall_time = time.perf_counter() - start
    return history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def checkpoint_document(model: Model, meta: dict | None = None) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "tool_version": __version__,
        "config": model.config.to_dict(),
        "meta": meta or {},
        "params": {
            name: {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
            for name, p in model.named_parameters()
        },
    }
    return json.dumps(doc) + "\n"


def save_checkpoint(model: Model, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(checkpoint_document(model, meta))
    return path


def load_checkpoint(path) -> Model:
    """Rebuild a model from a checkpoint; any inconsistency raises before a model exists."""
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: missing or unknown checkpoint format header")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {doc.get('version')} is incompatible with version {CHECKPOINT_VERSION}"
        )
    try:
        config = ModelConfig.from_dict(doc["config"])
        state = {}
        for name, entry in doc["params"].items():
            values = np.asarray(entry["values"], dtype=np.float64)
            shape = tuple(entry["shape"])
            if values.size != int(np.prod(shape)):
                raise CheckpointError(f"{path}: parameter {name} has {values.size} values for shape {shape}")
            state[name] = values.reshape(shape)
        model = build(config)
        model.load_state_dict(state)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    return model


def checkpoint_meta(path) -> dict:
    return json.loads(Path(path).read_text()).get("meta", {})
