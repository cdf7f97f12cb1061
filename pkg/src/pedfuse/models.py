"""The four fusion architectures and the named ablation grid.

Channel encoders produce either per-timestep sequences or per-modality
summary vectors, and the fusion strategy decides where they meet:

* hybrid: pose -> +bbox -> +speed GRU stack with attention (non-visual
  branch), one GRU+attention branch per visual channel, then attention over
  the stacked modality vectors ``[local, global, non-visual]``.
* later: every channel has its own encoder and attention; the five modality
  vectors are fused by one attention block.
* early: all channels concatenated per timestep into one GRU + attention.
* hierarchical: one GRU per channel stacked in the order
  local -> global -> pose -> bbox -> speed, then attention.

Modality attention reuses ``AttentionBlock`` over the stacked vectors, so the
last stacked vector acts as the query.  Every model ends in a sigmoid FC head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from pedfuse import tensor as tn
from pedfuse.bundle import BBOX_DIM, POSE_DIM, SPEED_DIM, ChannelBundle
from pedfuse.errors import ConfigError, InputError
from pedfuse.layers import (
    AttentionBlock,
    ConvEncoder2D,
    ConvEncoder3D,
    DenseLayer,
    GRULayer,
    Module,
)
from pedfuse.tensor import Tensor

FUSIONS = ("hybrid", "later", "early", "hierarchical")
VISUAL_ENCODERS = ("frame2d_rnn", "clip3d", "precomputed")
VISUAL_INPUTS = ("features", "images")


@dataclass
class ModelConfig:
    fusion: str = "hybrid"
    visual_encoder: str = "frame2d_rnn"
    use_global_context: bool = True
    hidden_dim: int = 256
    feature_dim: int = 512
    seq_len: int = 16
    dropout_rate: float = 0.5
    visual_input: str = "features"
    image_shape: tuple | None = None
    conv_channels: int = 8
    conv_depth: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.image_shape is not None:
            self.image_shape = tuple(int(v) for v in self.image_shape)

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Desk-scale dimensions (hidden 16, features 32)."""
        base = dict(hidden_dim=16, feature_dim=32)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> "ModelConfig":
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}; expected one of {FUSIONS}")
        if self.visual_encoder not in VISUAL_ENCODERS:
            raise ConfigError(f"unknown visual encoder {self.visual_encoder!r}; expected one of {VISUAL_ENCODERS}")
        if self.visual_input not in VISUAL_INPUTS:
            raise ConfigError(f"unknown visual input {self.visual_input!r}; expected one of {VISUAL_INPUTS}")
        if self.hidden_dim < 1 or self.feature_dim < 1 or self.seq_len < 1:
            raise ConfigError("hidden_dim, feature_dim and seq_len must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.visual_input == "images":
            if self.visual_encoder == "precomputed":
                raise ConfigError("the precomputed encoder consumes feature sequences, not images")
            if self.image_shape is None or len(self.image_shape) != 3:
                raise ConfigError("image input needs image_shape = (H, W, C)")
            if min(self.image_shape[:2]) < 2**self.conv_depth:
                raise ConfigError(f"images {self.image_shape} too small for conv depth {self.conv_depth}")
        if self.visual_encoder == "clip3d" and self.seq_len < 2**self.conv_depth:
            raise ConfigError(f"seq_len {self.seq_len} too short for clip3d depth {self.conv_depth}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_shape"] = None if self.image_shape is None else list(self.image_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def signature(self) -> tuple:
        return self.fusion, self.visual_encoder, self.use_global_context


class Model(Module):
    """A parameterized fusion model; build it with ``build(config)``."""

    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        self.blocks: dict[str, Module] = {}
        rng = np.random.default_rng(config.seed)
        getattr(self, f"_build_{config.fusion}")(rng)

    # -- structure ------------------------------------------------------------
    def named_parameters(self, prefix: str = ""):
        for name, block in self.blocks.items():
            yield from block.named_parameters(f"{prefix}{name}.")

    def count(self, kind: type) -> int:
        return sum(isinstance(b, kind) for b in self.blocks.values())

    @property
    def visual_channels(self) -> tuple:
        return ("local", "global") if self.config.use_global_context else ("local",)

    def _visual_in_width(self) -> int:
        c = self.config
        return c.image_shape[2] if c.visual_input == "images" else c.feature_dim

    def _add_encoder(self, ch: str, rng, out_dim: int) -> None:
        c = self.config
        if c.visual_encoder == "clip3d":
            self.blocks[f"{ch}_enc"] = ConvEncoder3D(
                self._visual_in_width(), out_dim, c.conv_channels, c.conv_depth,
                spatial=c.visual_input == "images", rng=rng,
            )
        elif c.visual_input == "images":
            self.blocks[f"{ch}_enc"] = ConvEncoder2D(c.image_shape[2], c.feature_dim, c.conv_channels, c.conv_depth, rng=rng)

    def _add_visual_vector(self, ch: str, rng) -> None:
        c = self.config
        self._add_encoder(ch, rng, c.hidden_dim)
        if c.visual_encoder != "clip3d":
            self.blocks[f"{ch}_gru"] = GRULayer(c.feature_dim, c.hidden_dim, rng)
            self.blocks[f"{ch}_att"] = AttentionBlock(c.hidden_dim, c.dropout_rate, rng)

    def _add_head(self, rng) -> None:
        self.blocks["head"] = DenseLayer(self.config.hidden_dim, 1, "sigmoid", rng)

    def _build_hybrid(self, rng) -> None:
        c = self.config
        H = c.hidden_dim
        self.blocks["pose_gru"] = GRULayer(POSE_DIM, H, rng)
        self.blocks["bbox_gru"] = GRULayer(H + BBOX_DIM, H, rng)
        self.blocks["speed_gru"] = GRULayer(H + SPEED_DIM, H, rng)
        self.blocks["nonvisual_att"] = AttentionBlock(H, c.dropout_rate, rng)
        for ch in self.visual_channels:
            self._add_visual_vector(ch, rng)
        self.blocks["modality_att"] = AttentionBlock(H, c.dropout_rate, rng)
        self._add_head(rng)

    def _build_later(self, rng) -> None:
        c = self.config
        for ch, width in (("pose", POSE_DIM), ("bbox", BBOX_DIM), ("speed", SPEED_DIM)):
            self.blocks[f"{ch}_gru"] = GRULayer(width, c.hidden_dim, rng)
            self.blocks[f"{ch}_att"] = AttentionBlock(c.hidden_dim, c.dropout_rate, rng)
        for ch in self.visual_channels:
            self._add_visual_vector(ch, rng)
        self.blocks["modality_att"] = AttentionBlock(c.hidden_dim, c.dropout_rate, rng)
        self._add_head(rng)

    def _build_early(self, rng) -> None:
        c = self.config
        for ch in self.visual_channels:
            self._add_encoder(ch, rng, c.feature_dim)
        width = POSE_DIM + BBOX_DIM + SPEED_DIM + len(self.visual_channels) * c.feature_dim
        self.blocks["fused_gru"] = GRULayer(width, c.hidden_dim, rng)
        self.blocks["fused_att"] = AttentionBlock(c.hidden_dim, c.dropout_rate, rng)
        self._add_head(rng)

    def _build_hierarchical(self, rng) -> None:
        c = self.config
        H = c.hidden_dim
        for ch in self.visual_channels:
            self._add_encoder(ch, rng, c.feature_dim)
        widths = {"local": c.feature_dim, "global": c.feature_dim, "pose": POSE_DIM, "bbox": BBOX_DIM, "speed": SPEED_DIM}
        first = True
        for ch in self.stack_order:
            self.blocks[f"stack_{ch}"] = GRULayer(widths[ch] + (0 if first else H), H, rng)
            first = False
        self.blocks["fused_att"] = AttentionBlock(H, c.dropout_rate, rng)
        self._add_head(rng)

    @property
    def stack_order(self) -> tuple:
        return self.visual_channels + ("pose", "bbox", "speed")

    # -- forward --------------------------------------------------------------
    def _check(self, b: ChannelBundle) -> ChannelBundle:
        c = self.config
        b = b.as_batch()
        B, T = b.pose.shape[:2]
        if T != c.seq_len:
            raise InputError(f"bundle has {T} timesteps, model expects {c.seq_len}")
        for name, arr, width in (("pose", b.pose, POSE_DIM), ("bbox", b.bbox, BBOX_DIM), ("speed", b.speed, SPEED_DIM)):
            if arr.shape != (B, T, width):
                raise InputError(f"{name} channel must be [B,{T},{width}], got {arr.shape}")
        if c.use_global_context and b.global_ is None:
            raise InputError("model uses global context but the bundle has no global channel")
        if c.visual_input == "features":
            expect = (B, T, c.feature_dim)
        else:
            expect = (B, T) + c.image_shape
        for ch in self.visual_channels:
            arr = b.local if ch == "local" else b.global_
            if arr is None or arr.shape != expect:
                got = None if arr is None else arr.shape
                raise InputError(f"{ch} channel must be {list(expect)}, got {got}")
        return b

    def _visual_raw(self, b: ChannelBundle, ch: str) -> np.ndarray:
        return b.local if ch == "local" else b.global_

    def _visual_sequence(self, b: ChannelBundle, ch: str) -> Tensor:
        x = tn.constant(self._visual_raw(b, ch))
        enc = self.blocks.get(f"{ch}_enc")
        if self.config.visual_encoder == "clip3d":
            v = enc(x)
            B, d = v.shape
            v = tn.reshape(v, (B, 1, d))
            return tn.concat([v] * self.config.seq_len, axis=1)
        return enc(x) if enc is not None else x

    def _visual_vector(self, b: ChannelBundle, ch: str, train: bool, rng) -> Tensor:
        if self.config.visual_encoder == "clip3d":
            return tn.tanh(self.blocks[f"{ch}_enc"](tn.constant(self._visual_raw(b, ch))))
        hs = self.blocks[f"{ch}_gru"].sequence(self._visual_sequence(b, ch))
        return self.blocks[f"{ch}_att"](hs, train=train, rng=rng)

    def _modality_fusion(self, vectors, train, rng) -> Tensor:
        stacked = tn.stack(vectors, axis=1)
        return self.blocks["modality_att"](stacked, train=train, rng=rng)

    def forward(self, bundle: ChannelBundle, train: bool = False, rng=None) -> Tensor:
        """Crossing probabilities, shape [B]."""
        b = self._check(bundle)
        fused = getattr(self, f"_forward_{self.config.fusion}")(b, train, rng)
        p = self.blocks["head"](fused)
        return tn.reshape(p, (p.shape[0],))

    __call__ = forward

    def _forward_hybrid(self, b, train, rng):
        P, L, S = (tn.constant(a) for a in (b.pose, b.bbox, b.speed))
        hs = self.blocks["pose_gru"].sequence(P)
        hs = self.blocks["bbox_gru"].sequence(tn.concat([hs, L], axis=-1))
        hs = self.blocks["speed_gru"].sequence(tn.concat([hs, S], axis=-1))
        v_nonvisual = self.blocks["nonvisual_att"](hs, train=train, rng=rng)
        visual = [self._visual_vector(b, ch, train, rng) for ch in self.visual_channels]
        return self._modality_fusion(visual + [v_nonvisual], train, rng)

    def _forward_later(self, b, train, rng):
        visual = [self._visual_vector(b, ch, train, rng) for ch in self.visual_channels]
        nonvisual = []
        for ch, arr in (("pose", b.pose), ("bbox", b.bbox), ("speed", b.speed)):
            hs = self.blocks[f"{ch}_gru"].sequence(tn.constant(arr))
            nonvisual.append(self.blocks[f"{ch}_att"](hs, train=train, rng=rng))
        return self._modality_fusion(visual + nonvisual, train, rng)

    def _forward_early(self, b, train, rng):
        parts = [tn.constant(b.pose), tn.constant(b.bbox), tn.constant(b.speed)]
        parts += [self._visual_sequence(b, ch) for ch in self.visual_channels]
        hs = self.blocks["fused_gru"].sequence(tn.concat(parts, axis=-1))
        return self.blocks["fused_att"](hs, train=train, rng=rng)

    def _forward_hierarchical(self, b, train, rng):
        raw = {"pose": b.pose, "bbox": b.bbox, "speed": b.speed}
        hs = None
        for ch in self.stack_order:
            x = tn.constant(raw[ch]) if ch in raw else self._visual_sequence(b, ch)
            hs = self.blocks[f"stack_{ch}"].sequence(x if hs is None else tn.concat([hs, x], axis=-1))
        return self.blocks["fused_att"](hs, train=train, rng=rng)

    def predict(self, bundle: ChannelBundle, batch_size: int = 256) -> np.ndarray:
        """Eval-mode probabilities as a numpy array, without recording a graph."""
        b = bundle.as_batch()
        out = []
        with tn.no_grad():
            for start in range(0, b.batch_size, batch_size):
                idx = np.arange(start, min(start + batch_size, b.batch_size))
                out.append(self.forward(b.take(idx), train=False).data)
        return np.concatenate(out) if out else np.zeros(0)

    # -- state ----------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing, extra = sorted(set(params) - set(state)), sorted(set(state) - set(params))
            raise ConfigError(f"parameter names disagree with the model; missing {missing[:3]}, unexpected {extra[:3]}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ConfigError(f"parameter {name}: shape {value.shape} does not match model {p.shape}")
        for name, p in params.items():
            p.data[...] = state[name]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def build(config: ModelConfig) -> Model:
    return Model(config)


def forward_hybrid(model: Model, b: ChannelBundle, train: bool = False, rng=None) -> Tensor:
    _expect(model, "hybrid")
    return model.forward(b, train, rng)


def forward_later(model: Model, b: ChannelBundle, train: bool = False, rng=None) -> Tensor:
    _expect(model, "later")
    return model.forward(b, train, rng)


def forward_early(model: Model, b: ChannelBundle, train: bool = False, rng=None) -> Tensor:
    _expect(model, "early")
    return model.forward(b, train, rng)


def forward_hierarchical(model: Model, b: ChannelBundle, train: bool = False, rng=None) -> Tensor:
    _expect(model, "hierarchical")
    return model.forward(b, train, rng)


def _expect(model: Model, fusion: str) -> None:
    if model.config.fusion != fusion:
        raise ConfigError(f"model was built for {model.config.fusion} fusion, not {fusion}")


# ---------------------------------------------------------------------------
# ablation grid
# ---------------------------------------------------------------------------

_GRID = (
    ("Ours", "hybrid", "frame2d_rnn", True),
    ("Ours1", "later", "clip3d", True),
    ("Ours2", "early", "clip3d", True),
    ("Ours3", "hierarchical", "clip3d", True),
    ("Ours4", "later", "frame2d_rnn", False),
    ("Ours5", "later", "frame2d_rnn", True),
    ("Ours6", "early", "frame2d_rnn", True),
    ("Ours7", "hierarchical", "frame2d_rnn", True),
)

ENCODER_LABELS = {"frame2d_rnn": "VGG + GRU", "clip3d": "3D CNN", "precomputed": "VGG + GRU"}
FUSION_LABELS = {f: f"{f}-fusion" for f in FUSIONS}


def variant_grid(**base) -> list[tuple[str, ModelConfig]]:
    """The eight named ablation variants; ``base`` sets the shared dimensions."""
    return [
        (name, ModelConfig(**{**base, "fusion": fusion, "visual_encoder": enc, "use_global_context": glob}))
        for name, fusion, enc, glob in _GRID
    ]


def variant_names() -> list[str]:
    return [row[0] for row in _GRID]


def resolve_variant(name: str, **base) -> ModelConfig:
    for vname, cfg in variant_grid(**base):
        if vname == name:
            return cfg
    raise ConfigError(f"unknown variant {name!r}; expected one of {variant_names()}")
