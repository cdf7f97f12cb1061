"""Tracks, observation windows, manifests, synthetic scenarios and splits.

On-disk layout of a dataset directory::

    manifest.jsonl   header line, then one track per line
    local.pft        sidecar tensor, one row per frame of every track
    global.pft       same for the global-context channel

Each frame of a track refers to its visual rows as ``"<file>#<row>"``.

Sidecar tensor file (all little-endian)::

    4 bytes   magic b"PFTS"
    uint32    format version (1)
    uint32    ndim
    uint64    dims[ndim]
    float64   values[prod(dims)], row-major
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from pedfuse.bundle import BBOX_DIM, POSE_DIM, SPEED_DIM, ChannelBundle
from pedfuse.errors import ConfigError, ContractError, ParseError, ValidationError

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "pedfuse.manifest"
MANIFEST_VERSION = 1
TENSOR_MAGIC = b"PFTS"
TENSOR_VERSION = 1
CHANNELS = ("pose", "bbox", "speed", "local", "global")
N_ACTIONS = SPEED_DIM  # stopped, slow, fast, decelerating, accelerating
DEFAULT_FRAME_SIZE = (1920, 1080)


# ---------------------------------------------------------------------------
# sidecar tensors
# ---------------------------------------------------------------------------

def write_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = TENSOR_MAGIC + struct.pack("<II", TENSOR_VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != TENSOR_MAGIC:
        raise ParseError(f"{path}: not a sidecar tensor file")
    version, ndim = struct.unpack_from("<II", blob, 4)
    if version != TENSOR_VERSION:
        raise ParseError(f"{path}: unsupported tensor format version {version}")
    off = 12 + 8 * ndim
    dims = struct.unpack_from(f"<{ndim}Q", blob, 12)
    count = int(np.prod(dims)) if ndim else 1
    if len(blob) != off + 8 * count:
        raise ParseError(f"{path}: payload size does not match header dims {dims}")
    return np.frombuffer(blob, dtype="<f8", offset=off, count=count).astype(np.float64).reshape(dims)


@lru_cache(maxsize=16)
def _cached_tensor(path: str, mtime_ns: int) -> np.ndarray:
    return read_tensor(path)


def _resolve_refs(refs: list[str], base: Path) -> np.ndarray:
    rows, files = [], []
    for ref in refs:
        name, _, row = ref.rpartition("#")
        files.append(name)
        rows.append(int(row))
    out = []
    for name in dict.fromkeys(files):
        path = str(base / name)
        table = _cached_tensor(path, os.stat(path).st_mtime_ns)
        idx = [r for f, r in zip(files, rows) if f == name]
        out.append(table[idx])
    if len(out) != 1:
        raise ValidationError("a track's frames must reference a single sidecar file per channel")
    return out[0]


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TrackRecord:
    """One tracked pedestrian up to (not including) its crossing decision event.

    Per-frame arrays are indexed by frame: ``bbox`` [L,4] pixel corners
    (x_top, y_top, x_bottom, y_bottom), ``pose`` [L,36] pixel keypoints with
    ``pose_present`` [L] marking detected frames, ``actions`` [L] driver action
    codes.  Visual channels are held either as arrays or as sidecar references
    that are resolved on first use.
    """

    track_id: str
    bbox: np.ndarray
    pose: np.ndarray
    pose_present: np.ndarray
    actions: np.ndarray
    event_frame: int
    label: int
    frame_rate: float = 30.0
    local: np.ndarray | None = None
    global_: np.ndarray | None = None
    local_refs: list[str] | None = None
    global_refs: list[str] | None = None
    base_dir: Path | None = None

    @property
    def length(self) -> int:
        return len(self.bbox)

    def local_features(self) -> np.ndarray | None:
        if self.local is None and self.local_refs is not None:
            self.local = _resolve_refs(self.local_refs, self.base_dir)
        return self.local

    def global_features(self) -> np.ndarray | None:
        if self.global_ is None and self.global_refs is not None:
            self.global_ = _resolve_refs(self.global_refs, self.base_dir)
        return self.global_

    def validate(self) -> None:
        L = self.length
        if self.bbox.shape != (L, BBOX_DIM):
            raise ValidationError(f"track {self.track_id}: bbox must be [L,4], got {self.bbox.shape}")
        if self.pose.shape != (L, POSE_DIM) or self.pose_present.shape != (L,) or self.actions.shape != (L,):
            raise ValidationError(f"track {self.track_id}: per-frame arrays disagree in length")
        bad = np.nonzero((self.bbox[:, 0] >= self.bbox[:, 2]) | (self.bbox[:, 1] >= self.bbox[:, 3]))[0]
        if bad.size:
            raise ValidationError(f"track {self.track_id}: inverted bbox at frame {int(bad[0])}")
        if np.any((self.actions < 0) | (self.actions >= N_ACTIONS)):
            raise ValidationError(f"track {self.track_id}: driver action outside 0..{N_ACTIONS - 1}")
        if self.label not in (0, 1):
            raise ValidationError(f"track {self.track_id}: label must be 0 or 1, got {self.label}")
        if self.event_frame < L:
            raise ValidationError(
                f"track {self.track_id}: event frame {self.event_frame} is not after the last observed frame {L - 1}"
            )

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrackRecord):
            return NotImplemented
        same = (
            self.track_id == other.track_id
            and self.event_frame == other.event_frame
            and self.label == other.label
            and self.frame_rate == other.frame_rate
        )
        if not same:
            return False
        pairs = [
            (self.bbox, other.bbox), (self.pose, other.pose), (self.pose_present, other.pose_present),
            (self.actions, other.actions), (self.local_features(), other.local_features()),
            (self.global_features(), other.global_features()),
        ]
        for a, b in pairs:
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


@dataclass
class SampleWindow:
    bundle: ChannelBundle
    label: int
    track_id: str
    tte: int
    pose_present: np.ndarray
    normalized: bool = False


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------

@dataclass
class Manifest:
    tracks: list[TrackRecord]
    header: dict = field(default_factory=dict)

    @property
    def frame_size(self) -> tuple[int, int]:
        return tuple(self.header.get("frame_size", DEFAULT_FRAME_SIZE))


def _frame_entry(track: TrackRecord, t: int, offsets: dict) -> dict:
    entry = {
        "bbox": [float(v) for v in track.bbox[t]],
        "pose": [float(v) for v in track.pose[t]] if track.pose_present[t] else None,
        "action": int(track.actions[t]),
    }
    for ch in ("local", "global"):
        if ch in offsets:
            entry[ch] = f"{ch}.pft#{offsets[ch] + t}"
    return entry


def write_manifest(directory, tracks: list[TrackRecord], header: dict | None = None) -> Path:
    """Write ``manifest.jsonl`` plus sidecar tensors into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    head = {"schema": MANIFEST_SCHEMA, "version": MANIFEST_VERSION, "frame_size": list(DEFAULT_FRAME_SIZE),
            "local_context_scale": 1.5, "target_mask_id": None}
    head.update(header or {})
    sidecars = {}
    for ch, getter in (("local", TrackRecord.local_features), ("global", TrackRecord.global_features)):
        arrays = [getter(t) for t in tracks]
        if tracks and all(a is not None for a in arrays):
            sidecars[ch] = arrays
    lines = [json.dumps(head, sort_keys=True)]
    offsets = {ch: 0 for ch in sidecars}
    for i, track in enumerate(tracks):
        record = {
            "track_id": track.track_id,
            "label": int(track.label),
            "event_frame": int(track.event_frame),
            "frame_rate": float(track.frame_rate),
            "frames": [_frame_entry(track, t, offsets) for t in range(track.length)],
        }
        lines.append(json.dumps(record, sort_keys=True))
        for ch in sidecars:
            offsets[ch] += len(sidecars[ch][i])
    for ch, arrays in sidecars.items():
        write_tensor(directory / f"{ch}.pft", np.concatenate(arrays))
    path = directory / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_track(obj, lineno: int, base_dir: Path) -> TrackRecord:
    try:
        frames = obj["frames"]
        L = len(frames)
        bbox = np.array([f["bbox"] for f in frames], dtype=np.float64).reshape(L, BBOX_DIM)
        present = np.array([f.get("pose") is not None for f in frames], dtype=bool)
        pose = np.zeros((L, POSE_DIM))
        for t, f in enumerate(frames):
            if f.get("pose") is not None:
                pose[t] = f["pose"]
        actions = np.array([f["action"] for f in frames], dtype=np.int64).reshape(L)
        local_refs = [f["local"] for f in frames] if L and all("local" in f for f in frames) else None
        global_refs = [f["global"] for f in frames] if L and all("global" in f for f in frames) else None
        track = TrackRecord(
            track_id=str(obj["track_id"]),
            bbox=bbox,
            pose=pose,
            pose_present=present,
            actions=actions,
            event_frame=int(obj["event_frame"]),
            label=int(obj["label"]),
            frame_rate=float(obj.get("frame_rate", 30.0)),
            local_refs=local_refs,
            global_refs=global_refs,
            base_dir=base_dir,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed track record ({exc.__class__.__name__}: {exc})", line=lineno) from None
    return track


def load_manifest(path) -> Manifest:
    """Parse and validate a manifest; ``path`` is the file or its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    lines = path.read_text().splitlines()
    if not lines:
        return Manifest([], {})
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"header is not valid JSON: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or header.get("schema") != MANIFEST_SCHEMA:
        raise ParseError("missing or unknown manifest schema", line=1)
    if header.get("version") != MANIFEST_VERSION:
        raise ParseError(f"unsupported manifest version {header.get('version')}", line=1)
    tracks = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("track record must be an object", line=lineno)
        track = _parse_track(obj, lineno, path.parent)
        track.validate()
        tracks.append(track)
    return Manifest(tracks, header)


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------

def window_stride(T: int, overlap: float) -> int:
    """round-half-down((1 - overlap) * T), at least 1."""
    raw = (1.0 - overlap) * T
    return max(1, math.ceil(raw - 0.5 - 1e-9))


def one_hot_actions(actions: np.ndarray) -> np.ndarray:
    return np.eye(N_ACTIONS)[np.asarray(actions, dtype=np.int64)]


def make_windows(tracks, T: int = 16, overlap: float = 0.8, tte_range=(30, 60), stats: dict | None = None):
    """Slide length-``T`` windows over each track and keep those ending 1-2 s before the event.

    A window whose last frame is ``e`` has time-to-event ``event_frame - e``
    and is kept when that falls inside ``tte_range`` (inclusive).  Tracks
    shorter than ``T`` are skipped and counted in ``stats["skipped"]``.
    """
    if not 0.0 <= overlap < 1.0:
        raise ContractError(f"overlap must be in [0, 1), got {overlap}")
    if T < 1:
        raise ContractError(f"window length must be >= 1, got {T}")
    lo, hi = tte_range
    stride = window_stride(T, overlap)
    windows, skipped, candidates = [], 0, 0
    for track in tracks:
        L = track.length
        if L < T:
            skipped += 1
            continue
        local, glob = track.local_features(), track.global_features()
        for start in range(0, L - T + 1, stride):
            candidates += 1
            end = start + T - 1
            tte = track.event_frame - end
            if not lo <= tte <= hi:
                continue
            sl = slice(start, start + T)
            bundle = ChannelBundle(
                pose=track.pose[sl].copy(),
                bbox=track.bbox[sl].copy(),
                speed=one_hot_actions(track.actions[sl]),
                local=None if local is None else local[sl].copy(),
                global_=None if glob is None else glob[sl].copy(),
            )
            windows.append(SampleWindow(bundle, int(track.label), track.track_id, int(tte), track.pose_present[sl].copy()))
    if skipped:
        logger.warning("skipped %d track(s) shorter than the %d-frame window", skipped, T)
    if stats is not None:
        stats.update(skipped=skipped, candidates=candidates, kept=len(windows), stride=stride)
    return windows


def normalize_bundle(w: SampleWindow, frame_w: float, frame_h: float) -> SampleWindow:
    """Scale bbox into [0,1] by frame size; express pose relative to its bbox.

    Pose keypoints become ((x - x_top) / width, (y - y_top) / height) of the
    bbox in the same frame; frames without a pose stay zero and keep
    ``pose_present`` False.
    """
    if w.normalized:
        return w
    if frame_w <= 0 or frame_h <= 0:
        raise ContractError(f"frame size must be positive, got {frame_w}x{frame_h}")
    b = w.bundle
    widths = b.bbox[:, 2] - b.bbox[:, 0]
    heights = b.bbox[:, 3] - b.bbox[:, 1]
    if np.any(widths <= 0) or np.any(heights <= 0):
        raise ValidationError(f"track {w.track_id}: zero-area bounding box in window")
    bbox = b.bbox / np.array([frame_w, frame_h, frame_w, frame_h])
    xy = b.pose.reshape(len(b.pose), -1, 2)
    rel = np.empty_like(xy)
    rel[..., 0] = (xy[..., 0] - b.bbox[:, None, 0]) / widths[:, None]
    rel[..., 1] = (xy[..., 1] - b.bbox[:, None, 1]) / heights[:, None]
    pose = np.where(w.pose_present[:, None], rel.reshape(len(b.pose), -1), 0.0)
    bundle = replace(b, pose=pose, bbox=bbox)
    return replace(w, bundle=bundle, normalized=True)


def split(windows, ratios=(0.7, 0.15, 0.15), seed: int = 0, by_track: bool = True):
    """Deterministic (train, val, test) partition; whole tracks when ``by_track``."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    if not windows:
        return [], [], []
    rng = np.random.default_rng(seed)
    keys = sorted({w.track_id for w in windows}) if by_track else list(range(len(windows)))
    order = [keys[i] for i in rng.permutation(len(keys))]
    n = len(order)
    n_train = int(round(ratios[0] * n))
    n_val = min(n - n_train, int(round(ratios[1] * n)))
    part = {}
    for i, k in enumerate(order):
        part[k] = 0 if i < n_train else (1 if i < n_train + n_val else 2)
    out = ([], [], [])
    for i, w in enumerate(windows):
        out[part[w.track_id if by_track else i]].append(w)
    return out


# ---------------------------------------------------------------------------
# synthetic scenarios
# ---------------------------------------------------------------------------

# class-conditional driver action distributions (crossing vs not crossing)
_ACTION_BASE = np.full(N_ACTIONS, 1.0 / N_ACTIONS)
_ACTION_CROSS = np.array([0.5, 0.1, 0.05, 0.3, 0.05])
_ACTION_NOCROSS = np.array([0.05, 0.15, 0.5, 0.05, 0.25])

# 18 keypoints as (x, y) fractions of the bounding box
_POSE_TEMPLATE = np.array([
    [0.50, 0.05], [0.50, 0.15], [0.35, 0.17], [0.30, 0.32], [0.28, 0.45], [0.65, 0.17],
    [0.70, 0.32], [0.72, 0.45], [0.40, 0.50], [0.40, 0.72], [0.40, 0.95], [0.60, 0.50],
    [0.60, 0.72], [0.60, 0.95], [0.47, 0.03], [0.53, 0.03], [0.44, 0.05], [0.56, 0.05],
])

LOCAL_SIGNAL_INDEX = 0
GLOBAL_SIGNAL_INDEX = 1


@dataclass
class SynthConfig:
    """Synthetic crossing scenarios with per-channel signal strengths in [0, 1].

    A strength of 0 makes that channel independent of the label.  Visual
    channels are feature vectors of width ``feature_dim`` or, with
    ``visual="images"``, clips of ``image_shape`` (H, W, C).
    """

    n_samples: int = 256
    positive_rate: float = 0.5
    pose: float = 0.0
    bbox: float = 0.0
    speed: float = 0.0
    local: float = 0.0
    global_: float = 0.0
    noise_sigma: float = 0.3
    visual: str = "features"
    feature_dim: int = 32
    image_shape: tuple = (16, 16, 1)
    track_len: int = 16
    tte_range: tuple = (30, 60)
    pose_missing_rate: float = 0.0
    frame_size: tuple = DEFAULT_FRAME_SIZE
    seed: int = 0

    def __post_init__(self):
        self.image_shape = tuple(self.image_shape)
        self.tte_range = tuple(self.tte_range)
        self.frame_size = tuple(self.frame_size)

    @property
    def strengths(self) -> dict:
        return {"pose": self.pose, "bbox": self.bbox, "speed": self.speed, "local": self.local, "global": self.global_}

    @property
    def learnable(self) -> bool:
        return any(v > 0 for v in self.strengths.values())

    def validate(self) -> None:
        if self.n_samples < 0:
            raise ConfigError("n_samples must be >= 0")
        if not 0.0 <= self.positive_rate <= 1.0:
            raise ConfigError("positive_rate must be in [0, 1]")
        for name, v in self.strengths.items():
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"signal strength for {name} must be in [0, 1], got {v}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.visual not in ("features", "images"):
            raise ConfigError(f"visual must be 'features' or 'images', got {self.visual!r}")
        if self.visual == "features" and self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2 (two designated signal coordinates)")
        if self.track_len < 1 or not 1 <= self.tte_range[0] <= self.tte_range[1]:
            raise ConfigError("track_len must be >= 1 and tte_range a non-empty positive interval")
        if not 0.0 <= self.pose_missing_rate < 1.0:
            raise ConfigError("pose_missing_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["global"] = d.pop("global_")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "global" in d:
            d["global_"] = d.pop("global")
        return cls(**d)


def _visual_channel(rng, cfg: SynthConfig, sign: float, strength: float, index: int, L: int) -> np.ndarray:
    sigma = cfg.noise_sigma
    if cfg.visual == "features":
        out = sigma * rng.standard_normal((L, cfg.feature_dim))
        out[:, index] += sign * strength
        return out
    H, W, C = cfg.image_shape
    ys, xs = np.mgrid[0:H, 0:W]
    cx = (W - 1) / 2.0 + sign * strength * W / 4.0
    cy = (H - 1) / 2.0
    blob = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * (W / 8.0) ** 2))
    return blob[None, :, :, None] + sigma * rng.standard_normal((L, H, W, C))


def synth_generate(cfg: SynthConfig) -> list[TrackRecord]:
    """Label-conditioned tracks: each channel is noise plus ``strength`` times a class signal."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    fw, fh = cfg.frame_size
    L = cfg.track_len
    tau = (np.arange(L) + 1.0) / L
    sigma = cfg.noise_sigma
    tracks = []
    for i in range(cfg.n_samples):
        label = int(rng.random() < cfg.positive_rate)
        sign = 1.0 if label else -1.0
        tte = int(rng.integers(cfg.tte_range[0], cfg.tte_range[1] + 1))

        # bbox: horizontal drift whose direction encodes the label
        cx0, cy0 = rng.uniform(0.3, 0.7), rng.uniform(0.45, 0.6)
        w_px = rng.uniform(40.0, 80.0)
        h_px = 2.5 * w_px
        cx = cx0 + 0.05 * (sign * cfg.bbox * tau + sigma * rng.standard_normal(L))
        cx_px, cy_px = cx * fw, np.full(L, cy0 * fh)
        bbox = np.stack([cx_px - w_px / 2, cy_px - h_px / 2, cx_px + w_px / 2, cy_px + h_px / 2], axis=1)

        # pose: lateral keypoint drift inside the box
        rel = np.broadcast_to(_POSE_TEMPLATE, (L, 18, 2)).copy()
        rel[..., 0] += 0.1 * sign * cfg.pose * tau[:, None]
        rel += 0.1 * sigma * rng.standard_normal((L, 18, 2))
        pose = np.empty((L, 18, 2))
        pose[..., 0] = bbox[:, None, 0] + rel[..., 0] * w_px
        pose[..., 1] = bbox[:, None, 1] + rel[..., 1] * h_px
        pose = pose.reshape(L, POSE_DIM)
        present = rng.random(L) >= cfg.pose_missing_rate
        pose[~present] = 0.0

        # driver action: mixture of uninformative and class-conditional codes
        target = _ACTION_CROSS if label else _ACTION_NOCROSS
        probs = (1.0 - cfg.speed) * _ACTION_BASE + cfg.speed * target
        actions = rng.choice(N_ACTIONS, size=L, p=probs / probs.sum())

        local = _visual_channel(rng, cfg, sign, cfg.local, LOCAL_SIGNAL_INDEX, L)
        glob = _visual_channel(rng, cfg, sign, cfg.global_, GLOBAL_SIGNAL_INDEX, L)
        tracks.append(TrackRecord(
            track_id=f"synth_{i:05d}",
            bbox=bbox,
            pose=pose,
            pose_present=present,
            actions=actions.astype(np.int64),
            event_frame=L - 1 + tte,
            label=label,
            local=local,
            global_=glob,
        ))
    return tracks


def synth_header(cfg: SynthConfig, version: str) -> dict:
    head = {"frame_size": list(cfg.frame_size), "visual": cfg.visual,
            "provenance": {"generator": "pedfuse.synth", "tool_version": version, "synth_config": cfg.to_dict()}}
    if cfg.visual == "features":
        head["feature_dim"] = cfg.feature_dim
    else:
        head["image_shape"] = list(cfg.image_shape)
    return head


# ---------------------------------------------------------------------------
# convenience
# ---------------------------------------------------------------------------

def prepare_windows(tracks, frame_size=DEFAULT_FRAME_SIZE, T: int = 16, overlap: float = 0.8, tte_range=(30, 60)):
    """Window and normalize in one pass."""
    fw, fh = frame_size
    return [normalize_bundle(w, fw, fh) for w in make_windows(tracks, T, overlap, tte_range)]


def to_batch(windows) -> tuple[ChannelBundle, np.ndarray]:
    bundle = ChannelBundle.stack([w.bundle for w in windows])
    return bundle, np.array([w.label for w in windows], dtype=np.float64)
