"""Neural building blocks: GRU, bilinear-score attention, dense, dropout, conv encoders.

All layers accept either a single sample or a batch with a leading batch
axis; sequence inputs are ``[T, d]`` or ``[B, T, d]`` and image clips are
``[T, H, W, C]`` or ``[B, T, H, W, C]`` (channels last).
"""

from __future__ import annotations

import numpy as np

from pedfuse import kernels
from pedfuse import tensor as tn
from pedfuse.errors import ContractError, DimensionError
from pedfuse.tensor import Function, Tensor


def init_uniform(rng: np.random.Generator, shape, fan_in: int, name: str | None = None) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return tn.parameter(rng.uniform(-bound, bound, size=shape), name=name)


def init_zeros(shape, name: str | None = None) -> Tensor:
    return tn.parameter(np.zeros(shape), name=name)


class Module:
    """Parameter container; parameters are discovered in attribute order."""

    def named_parameters(self, prefix: str = ""):
        for attr, value in vars(self).items():
            yield from _walk(value, f"{prefix}{attr}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _walk(value, name):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{name}.{k}")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")


def _batched(x: Tensor, rank: int) -> tuple[Tensor, bool]:
    """Add a leading batch axis when ``x`` has the unbatched rank."""
    if x.ndim == rank:
        return tn.reshape(x, (1,) + x.shape), True
    if x.ndim == rank + 1:
        return x, False
    raise DimensionError(f"expected rank {rank} or {rank + 1}, got shape {x.shape}")


def _unbatch(x: Tensor, squeeze: bool) -> Tensor:
    return tn.reshape(x, x.shape[1:]) if squeeze else x


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

class GRUSequence(Function):
    """Whole-sequence GRU as one graph node, backed by ``pedfuse.kernels``."""

    def forward(self, xs, h0, Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh):
        self.W = np.concatenate([Wz, Wr, Wh])
        self.U = np.concatenate([Uz, Ur, Uh])
        b = np.concatenate([bz, br, bh])
        self.xs, self.h0 = xs, h0
        self.hs, self.z, self.r, self.n = kernels.gru_forward(xs, h0, self.W, self.U, b)
        return self.hs

    def backward(self, g):
        gxs, gh0, gW, gU, gb = kernels.gru_backward(
            self.xs, self.h0, self.hs, self.z, self.r, self.n, self.W, self.U, np.ascontiguousarray(g)
        )
        H = self.h0.shape[1]
        parts = []
        for k in range(3):
            sl = slice(k * H, (k + 1) * H)
            parts += [gW[sl], gU[sl], gb[sl]]
        return (gxs, gh0, *parts)


class GRULayer(Module):
    """Gated recurrent unit with update gate z, reset gate r and candidate state.

    Convention: ``h_t = (1 - z) * h_prev + z * candidate``, the reset gate
    multiplying ``h_prev`` before the candidate's recurrent matrix.
    """

    def __init__(self, input_dim: int, hidden_dim: int = 256, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        for gate in ("z", "r", "h"):
            setattr(self, f"W_{gate}", init_uniform(rng, (hidden_dim, input_dim), input_dim))
            setattr(self, f"U_{gate}", init_uniform(rng, (hidden_dim, hidden_dim), hidden_dim))
            setattr(self, f"b_{gate}", init_zeros(hidden_dim))

    def _check_input(self, x: Tensor):
        if x.shape[-1] != self.input_dim:
            raise DimensionError(f"GRU expects input width {self.input_dim}, got shape {x.shape}")

    def step(self, x_t, h_prev) -> Tensor:
        """One recurrence step built from primitive ops (reference path)."""
        x_t, h_prev = tn.as_tensor(x_t), tn.as_tensor(h_prev)
        self._check_input(x_t)
        if h_prev.shape[-1] != self.hidden_dim:
            raise DimensionError(f"GRU hidden state must have width {self.hidden_dim}, got {h_prev.shape}")
        z = tn.sigmoid(tn.linear(x_t, self.W_z, self.b_z) + tn.linear(h_prev, self.U_z))
        r = tn.sigmoid(tn.linear(x_t, self.W_r, self.b_r) + tn.linear(h_prev, self.U_r))
        cand = tn.tanh(tn.linear(x_t, self.W_h, self.b_h) + tn.linear(r * h_prev, self.U_h))
        return (1.0 - z) * h_prev + z * cand

    def sequence(self, xs, h0=None) -> Tensor:
        """All hidden states for ``xs`` ([T, in] or [B, T, in]); h0 defaults to zeros."""
        xs, squeeze = _batched(tn.as_tensor(xs), 2)
        self._check_input(xs)
        B, T = xs.shape[:2]
        if T == 0:
            raise DimensionError("GRU sequence must have at least one timestep")
        if h0 is None:
            h0 = tn.constant(np.zeros((B, self.hidden_dim)))
        else:
            h0 = tn.as_tensor(h0)
            if h0.ndim == 1:
                h0 = tn.reshape(h0, (1, -1)) if B == 1 else tn.constant(np.tile(h0.data, (B, 1)))
            if h0.shape != (B, self.hidden_dim):
                raise DimensionError(f"h0 shape {h0.shape} does not match batch {B}, hidden {self.hidden_dim}")
        hs = GRUSequence.apply(
            xs, h0, self.W_z, self.U_z, self.b_z, self.W_r, self.U_r, self.b_r, self.W_h, self.U_h, self.b_h
        )
        return _unbatch(hs, squeeze)


def gru_step(layer: GRULayer, x_t, h_prev) -> Tensor:
    return layer.step(x_t, h_prev)


def gru_sequence(layer: GRULayer, xs, h0=None) -> Tensor:
    return layer.sequence(xs, h0)


# ---------------------------------------------------------------------------
# dropout, dense
# ---------------------------------------------------------------------------

def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1 - rate); identity in eval."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an explicit rng")
    keep = rng.random(x.shape) >= rate
    return x * tn.constant(keep / (1.0 - rate))


_ACTIVATIONS = {"none": lambda t: t, "sigmoid": tn.sigmoid, "tanh": tn.tanh, "relu": tn.relu}


class DenseLayer(Module):
    def __init__(self, in_dim: int, out_dim: int, activation: str = "none", rng=None):
        if activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim, self.activation = in_dim, out_dim, activation
        self.weight = init_uniform(rng, (out_dim, in_dim), in_dim)
        self.bias = init_zeros(out_dim)

    def __call__(self, x) -> Tensor:
        x = tn.as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"dense layer expects width {self.in_dim}, got shape {x.shape}")
        return _ACTIVATIONS[self.activation](tn.linear(x, self.weight, self.bias))


def dense(layer: DenseLayer, x) -> Tensor:
    return layer(x)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

class AttentionBlock(Module):
    """Bilinear-score attention of the last hidden state over all hidden states.

    ``score_s = h_e^T W_s h_s``, ``alpha = softmax(score)``,
    ``h_c = sum_s alpha_s h_s`` and the output is ``tanh(W_c [h_c; h_e])``,
    with dropout on the output in training mode.
    """

    def __init__(self, dim: int, dropout_rate: float = 0.5, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim, self.dropout_rate = dim, dropout_rate
        self.W_s = init_uniform(rng, (dim, dim), dim)
        self.W_c = init_uniform(rng, (dim, 2 * dim), 2 * dim)
        self.last_weights: np.ndarray | None = None

    def __call__(self, hs, train: bool = False, rng=None, return_weights: bool = False):
        hs, squeeze = _batched(tn.as_tensor(hs), 2)
        B, T, d = hs.shape
        if T == 0:
            raise DimensionError("attention needs at least one source state")
        if d != self.dim:
            raise DimensionError(f"attention block of dim {self.dim} got states of shape {hs.shape}")
        h_e = tn.select(hs, T - 1, axis=1)
        keys = tn.linear(hs, self.W_s)
        scores = tn.reshape(tn.matmul(keys, tn.reshape(h_e, (B, d, 1))), (B, T))
        alpha = tn.softmax(scores, axis=-1)
        h_c = tn.reshape(tn.matmul(tn.reshape(alpha, (B, 1, T)), hs), (B, d))
        out = tn.tanh(tn.linear(tn.concat([h_c, h_e], axis=-1), self.W_c))
        out = dropout(out, self.dropout_rate, train, rng)
        self.last_weights = alpha.data[0] if squeeze else alpha.data
        out = _unbatch(out, squeeze)
        if return_weights:
            return out, _unbatch(alpha, squeeze)
        return out


def attend(block: AttentionBlock, hs, train: bool = False, rng=None) -> Tensor:
    return block(hs, train=train, rng=rng)


# ---------------------------------------------------------------------------
# convolutional visual encoders
# ---------------------------------------------------------------------------

class ConvEncoder2D(Module):
    """Per-frame conv(3x3) -> relu -> maxpool(2x2) stack, spatial mean, dense."""

    def __init__(self, in_channels: int, feature_dim: int, channels: int = 8, depth: int = 2, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.depth = depth
        self.convs = []
        c = in_channels
        for _ in range(depth):
            self.convs.append(
                {"weight": init_uniform(rng, (3, 3, c, channels), 9 * c), "bias": init_zeros(channels)}
            )
            c = channels
        self.proj = DenseLayer(c, feature_dim, rng=rng)
        self.feature_dim = feature_dim

    def frames(self, images: Tensor) -> Tensor:
        """[N, H, W, C] -> [N, feature_dim]."""
        H, W = images.shape[1:3]
        if min(H, W) < 2**self.depth:
            raise DimensionError(f"frames of {H}x{W} too small for {self.depth} pooling stages")
        x = images
        for conv in self.convs:
            x = tn.maxpool(tn.relu(tn.conv(x, conv["weight"], conv["bias"])), (2, 2))
        return self.proj(tn.mean(x, axis=(1, 2)))

    def __call__(self, clip) -> Tensor:
        clip, squeeze = _batched(tn.as_tensor(clip), 4)
        B, T = clip.shape[:2]
        feats = self.frames(tn.reshape(clip, (B * T,) + clip.shape[2:]))
        return _unbatch(tn.reshape(feats, (B, T, self.feature_dim)), squeeze)


class ConvEncoder3D(Module):
    """Clip-level conv3d(3x3x3) -> relu -> maxpool(2x2x2) stack, global mean, dense.

    With ``spatial=False`` the clip is a feature sequence [T, d]: it is treated
    as a [T, 1, 1, d] volume and convolution/pooling act over time only.
    """

    def __init__(self, in_channels: int, feature_dim: int, channels: int = 8, depth: int = 2,
                 spatial: bool = True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.depth, self.spatial = depth, spatial
        k = (3, 3, 3) if spatial else (3, 1, 1)
        self.window = (2, 2, 2) if spatial else (2, 1, 1)
        self.convs = []
        c = in_channels
        for _ in range(depth):
            fan_in = int(np.prod(k)) * c
            self.convs.append({"weight": init_uniform(rng, k + (c, channels), fan_in), "bias": init_zeros(channels)})
            c = channels
        self.proj = DenseLayer(c, feature_dim, rng=rng)
        self.feature_dim = feature_dim

    def __call__(self, clip) -> Tensor:
        clip = tn.as_tensor(clip)
        rank = 4 if self.spatial else 2
        clip, squeeze = _batched(clip, rank)
        if not self.spatial:
            B, T, d = clip.shape
            clip = tn.reshape(clip, (B, T, 1, 1, d))
        extents = clip.shape[1:4] if self.spatial else clip.shape[1:2]
        if min(extents) < 2**self.depth:
            raise DimensionError(f"clip extents {extents} too small for {self.depth} pooling stages")
        x = clip
        for conv in self.convs:
            x = tn.maxpool(tn.relu(tn.conv(x, conv["weight"], conv["bias"])), self.window)
        return _unbatch(self.proj(tn.mean(x, axis=(1, 2, 3))), squeeze)


def encode_frames_2d(enc: ConvEncoder2D, clip) -> Tensor:
    return enc(clip)


def encode_clip_3d(enc: ConvEncoder3D, clip) -> Tensor:
    return enc(clip)
