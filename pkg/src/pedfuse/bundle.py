"""The five aligned input channels of one observation window (or a batch of them)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POSE_DIM = 36
BBOX_DIM = 4
SPEED_DIM = 5


@dataclass
class ChannelBundle:
    """pose [T,36], bbox [T,4], speed [T,5] one-hot, local/global [T,d] or [T,H,W,C].

    A batch carries one extra leading axis on every array.  ``global_`` may be
    ``None`` for data without a global-context channel.
    """

    pose: np.ndarray
    bbox: np.ndarray
    speed: np.ndarray
    local: np.ndarray
    global_: np.ndarray | None = None

    @property
    def batched(self) -> bool:
        return self.pose.ndim == 3

    @property
    def seq_len(self) -> int:
        return self.pose.shape[-2]

    @property
    def batch_size(self) -> int:
        return self.pose.shape[0] if self.batched else 1

    def as_batch(self) -> "ChannelBundle":
        if self.batched:
            return self
        return ChannelBundle(
            self.pose[None], self.bbox[None], self.speed[None], self.local[None],
            None if self.global_ is None else self.global_[None],
        )

    def take(self, index) -> "ChannelBundle":
        """Sub-batch by integer index array."""
        b = self.as_batch()
        return ChannelBundle(
            b.pose[index], b.bbox[index], b.speed[index], b.local[index],
            None if b.global_ is None else b.global_[index],
        )

    @classmethod
    def stack(cls, bundles) -> "ChannelBundle":
        bundles = list(bundles)
        has_global = all(b.global_ is not None for b in bundles)
        return cls(
            np.stack([b.pose for b in bundles]),
            np.stack([b.bbox for b in bundles]),
            np.stack([b.speed for b in bundles]),
            np.stack([b.local for b in bundles]),
            np.stack([b.global_ for b in bundles]) if has_global else None,
        )
