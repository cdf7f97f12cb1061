"""Finite-difference verification of every differentiable op, layer and full model.

Each component builds a small random problem, reduces it to a scalar, and
compares backprop against central differences on every parameter
coordinate.  The perturbed objectives are evaluated in long double by
default (see ``tensor.finite_diff_errors``) so the comparison is limited by
the analytic gradients, not by rounding in the reference.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from pedfuse import layers as L
from pedfuse import tensor as tn
from pedfuse.bundle import BBOX_DIM, POSE_DIM, SPEED_DIM, ChannelBundle
from pedfuse.models import build, resolve_variant
from pedfuse.training import bce_loss, l2_penalty

TOLERANCE = 1e-4
EPSILON = 1e-5

# one representative variant per fusion strategy
FUSION_VARIANTS = (("hybrid", "Ours"), ("later", "Ours5"), ("early", "Ours6"), ("hierarchical", "Ours7"))
DESK = dict(seq_len=4, feature_dim=8, hidden_dim=8)


@dataclass
class ComponentResult:
    kind: str
    name: str
    worst: float
    worst_param: str
    n_coords: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.worst < TOLERANCE)

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


Case = tuple[str, str, Callable[[], tn.Tensor], dict]


def _weighted(out: tn.Tensor, w: np.ndarray) -> tn.Tensor:
    # a random projection gives every output coordinate its own weight
    return tn.sum(out * tn.constant(np.asarray(w).reshape(out.shape)))


def op_cases(rng: np.random.Generator) -> list[Case]:
    def P(*shape):
        return tn.parameter(rng.normal(size=shape))

    def W(*shape):
        return rng.normal(size=shape)

    cases = []
    a, b, w = P(3, 4), P(3, 4), W(3, 4)
    cases.append(("add/sub/mul", lambda: _weighted(tn.mul(tn.add(a, b), tn.sub(a, b)) + a * 2.0, w), {"a": a, "b": b}))
    for name in ("sigmoid", "tanh", "exp"):
        x = P(3, 4)
        cases.append((name, lambda x=x, f=getattr(tn, name): _weighted(f(x), w), {"x": x}))
    x = tn.parameter(rng.uniform(0.5, 2.0, size=(3, 4)))
    cases.append(("log", lambda x=x: _weighted(tn.log(x), w), {"x": x}))
    # inputs kept away from the kink so the central difference is smooth
    x = tn.parameter(rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.1, 1.0, size=(3, 4)))
    cases.append(("relu", lambda x=x: _weighted(tn.relu(x), w), {"x": x}))

    m1, m2, wm = P(3, 5), P(5, 4), W(3, 4)
    cases.append(("matmul", lambda: _weighted(tn.matmul(m1, m2), wm), {"a": m1, "b": m2}))
    bm1, bm2, wbm = P(2, 3, 5), P(2, 5, 4), W(2, 3, 4)
    cases.append(("matmul-batched", lambda: _weighted(tn.matmul(bm1, bm2), wbm), {"a": bm1, "b": bm2}))
    xs, Wl, bl = P(3, 5), P(4, 5), P(4)
    cases.append(("linear", lambda: _weighted(tn.linear(xs, Wl, bl), wm), {"x": xs, "W": Wl, "b": bl}))

    p, q, ws = P(2, 3), P(2, 2), W(2, 7)

    def shapes():
        wide = tn.concat([p, q], axis=1)                      # [2, 5]
        picked = tn.stack([tn.select(wide, 0, axis=1), tn.select(wide, 4, axis=1)], axis=0)  # [2, 2]
        grid = tn.concat([tn.transpose(wide), picked], axis=0)  # [7, 2]
        return _weighted(tn.reshape(grid, (2, 7)), ws)

    cases.append(("transpose/reshape/concat/stack/select", shapes, {"p": p, "q": q}))

    r = P(2, 3, 4)

    def reductions():
        per = tn.sum(r, axis=(0, 2))
        return tn.sum(tn.mean(r * r, axis=1)) + tn.mean(per * per) + tn.sum(r) * tn.mean(r)

    cases.append(("sum/mean", reductions, {"x": r}))
    s, wsm = P(2, 5), W(2, 5)
    cases.append(("softmax", lambda: _weighted(tn.softmax(s, axis=-1), wsm), {"x": s}))

    img, k2, b2, w2 = P(2, 6, 6, 2), P(3, 3, 2, 3), P(3), W(2, 6, 6, 3)
    cases.append(("conv2d", lambda: _weighted(tn.conv(img, k2, b2), w2), {"x": img, "kernel": k2, "bias": b2}))
    vol, k3, b3, w3 = P(1, 4, 4, 4, 1), P(3, 3, 3, 1, 2), P(2), W(1, 4, 4, 4, 2)
    cases.append(("conv3d", lambda: _weighted(tn.conv(vol, k3, b3), w3), {"x": vol, "kernel": k3, "bias": b3}))
    # well-separated values keep each window's argmax fixed under perturbation
    pool = tn.parameter(rng.permutation(64).reshape(2, 4, 4, 2) * 0.1)
    wp = W(2, 2, 2, 2)
    cases.append(("maxpool", lambda: _weighted(tn.maxpool(pool, (2, 2)), wp), {"x": pool}))
    return [("op", name, f, params) for name, f, params in cases]


def layer_cases(rng: np.random.Generator) -> list[Case]:
    cases = []
    T, I, H = 4, 5, 8

    gru = L.GRULayer(I, H, rng=rng)
    x_t = tn.parameter(rng.normal(size=(3, I)))
    h_prev = tn.parameter(rng.normal(size=(3, H)))
    w = rng.normal(size=(3, H))
    cases.append(("gru_step", lambda: _weighted(L.gru_step(gru, x_t, h_prev), w),
                  {**dict(gru.named_parameters()), "x": x_t, "h0": h_prev}))

    gru_s = L.GRULayer(I, H, rng=rng)
    xs = tn.parameter(rng.normal(size=(2, T, I)))
    h0 = tn.parameter(rng.normal(size=(2, H)))
    ws = rng.normal(size=(2, T, H))
    cases.append(("gru_sequence", lambda: _weighted(L.gru_sequence(gru_s, xs, h0), ws),
                  {**dict(gru_s.named_parameters()), "x": xs, "h0": h0}))

    for act in ("none", "sigmoid", "tanh"):
        layer = L.DenseLayer(6, 4, activation=act, rng=rng)
        xd = tn.parameter(rng.normal(size=(3, 6)))
        wd = rng.normal(size=(3, 4))
        cases.append((f"dense[{act}]", lambda layer=layer, xd=xd, wd=wd: _weighted(L.dense(layer, xd), wd),
                      {**dict(layer.named_parameters()), "x": xd}))
    # relu head: bias keeps pre-activations away from zero
    layer = L.DenseLayer(6, 4, activation="relu", rng=rng)
    layer.bias.data[:] = 3.0
    xr = tn.parameter(rng.normal(size=(3, 6)) * 0.2)
    wr = rng.normal(size=(3, 4))
    cases.append(("dense[relu]", lambda: _weighted(L.dense(layer, xr), wr), {**dict(layer.named_parameters()), "x": xr}))

    att = L.AttentionBlock(H, rng=rng)
    hs = tn.parameter(rng.normal(size=(2, T, H)))
    wa = rng.normal(size=(2, H))
    cases.append(("attention", lambda: _weighted(L.attend(att, hs), wa), {**dict(att.named_parameters()), "hs": hs}))
    att_d = L.AttentionBlock(H, rng=rng)
    # a freshly seeded generator per evaluation fixes the dropout mask
    cases.append(("attention+dropout",
                  lambda: _weighted(L.attend(att_d, hs, train=True, rng=np.random.default_rng(5)), wa),
                  {**dict(att_d.named_parameters()), "hs": hs}))

    enc2 = L.ConvEncoder2D(1, 6, channels=3, depth=2, rng=rng)
    clip2 = tn.constant(rng.normal(size=(2, 8, 8, 1)))
    w2 = rng.normal(size=(2, 6))
    cases.append(("encode_frames_2d", lambda: _weighted(L.encode_frames_2d(enc2, clip2), w2), dict(enc2.named_parameters())))
    enc3 = L.ConvEncoder3D(1, 6, channels=3, depth=2, rng=rng)
    clip3 = tn.constant(rng.normal(size=(4, 8, 8, 1)))
    w3 = rng.normal(size=6)
    cases.append(("encode_clip_3d", lambda: _weighted(L.encode_clip_3d(enc3, clip3), w3), dict(enc3.named_parameters())))
    enc3t = L.ConvEncoder3D(8, 6, channels=3, depth=2, spatial=False, rng=rng)
    seq = tn.constant(rng.normal(size=(2, 4, 8)))
    w3t = rng.normal(size=(2, 6))
    cases.append(("encode_clip_3d[temporal]", lambda: _weighted(L.encode_clip_3d(enc3t, seq), w3t),
                  dict(enc3t.named_parameters())))

    logits = tn.parameter(rng.normal(size=6))
    labels = rng.integers(0, 2, size=6)
    cases.append(("bce_loss", lambda: bce_loss(tn.sigmoid(logits), labels), {"logits": logits}))
    fc = tn.parameter(rng.normal(size=(1, 6)))
    cases.append(("l2_penalty", lambda: l2_penalty([fc], 1e-3) + tn.sum(fc * tn.constant(rng_const(6))), {"fc": fc}))
    return [("layer", name, f, params) for name, f, params in cases]


def rng_const(n: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n).reshape(1, n)


def desk_bundle(rng: np.random.Generator, batch: int = 2, T: int = 4, d: int = 8) -> ChannelBundle:
    return ChannelBundle(
        pose=rng.normal(size=(batch, T, POSE_DIM)),
        bbox=rng.random(size=(batch, T, BBOX_DIM)),
        speed=np.eye(SPEED_DIM)[rng.integers(0, SPEED_DIM, size=(batch, T))],
        local=rng.normal(size=(batch, T, d)),
        global_=rng.normal(size=(batch, T, d)),
    )


def model_cases(rng: np.random.Generator, seed: int = 0) -> list[Case]:
    cases = []
    bundle = desk_bundle(rng, T=DESK["seq_len"], d=DESK["feature_dim"])
    labels = np.array([1, 0])
    for fusion, variant in FUSION_VARIANTS:
        model = build(resolve_variant(variant, seed=seed, **DESK))
        cases.append((f"{fusion} ({variant})", lambda m=model: bce_loss(m(bundle), labels), dict(model.named_parameters())))
    return [("model", name, f, params) for name, f, params in cases]


def run_case(case: Case, extended: bool = True) -> ComponentResult:
    kind, name, f, params = case
    start = time.perf_counter()
    errors = tn.finite_diff_errors(f, params, EPSILON, extended=extended)
    worst_param = max(errors, key=errors.get) if errors else ""
    n = int(sum(p.data.size for p in params.values()))
    return ComponentResult(kind, name, errors.get(worst_param, 0.0), worst_param, n, time.perf_counter() - start)


def all_cases(seed: int = 0, kinds=("op", "layer", "model")) -> list[Case]:
    rng = np.random.default_rng(seed)
    cases = []
    if "op" in kinds:
        cases += op_cases(rng)
    if "layer" in kinds:
        cases += layer_cases(rng)
    if "model" in kinds:
        cases += model_cases(rng, seed)
    return cases


def run_all(seed: int = 0, extended: bool = True, kinds=("op", "layer", "model"), progress=None) -> list[ComponentResult]:
    results = []
    for case in all_cases(seed, kinds):
        res = run_case(case, extended)
        if progress is not None:
            progress(res)
        results.append(res)
    return results


def format_report(results: list[ComponentResult]) -> str:
    width = max((len(r.name) for r in results), default=9)
    lines = [f"{'kind':<6} {'component':<{width}} {'worst rel err':>13}  {'coords':>6}  {'time':>6}  status  worst parameter"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.kind:<6} {r.name:<{width}} {r.worst:>13.3e}  {r.n_coords:>6}  {r.seconds:>5.1f}s  {status:<6}  {r.worst_param}")
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} components below {TOLERANCE:g}")
    return "\n".join(lines)
