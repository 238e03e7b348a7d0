from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

RESOLUTIONS = ("eighth", "full")


class ResolutionError(ValueError):
    pass


@dataclass
class FlowPair:
    """Flows frame1->frame2 (``f1``) and frame2->frame3 (``f2``), each ``2 x H x W``.

    Values are pixels per frame at the stored resolution.
    """

    f1: Tensor
    f2: Tensor
    resolution: str = "eighth"

    def __post_init__(self) -> None:
        if self.resolution not in RESOLUTIONS:
            raise ResolutionError(f"resolution must be one of {RESOLUTIONS}, got {self.resolution!r}")
        if self.f1.shape != self.f2.shape or self.f1.ndim != 3 or self.f1.shape[0] != 2:
            raise ValueError(f"flows must both be 2xHxW, got {self.f1.shape} and {self.f2.shape}")

    @property
    def hw(self) -> tuple[int, int]:
        return self.f1.shape[1], self.f1.shape[2]

    def require(self, resolution: str) -> None:
        if self.resolution != resolution:
            raise ResolutionError(f"expected {resolution} resolution flows, got {self.resolution}")

    def numpy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.f1.data, self.f2.data

    @classmethod
    def zeros(cls, h: int, w: int, resolution: str = "eighth", dtype=np.float32) -> "FlowPair":
        return cls(Tensor(np.zeros((2, h, w), dtype)), Tensor(np.zeros((2, h, w), dtype)), resolution)

    def detach(self) -> "FlowPair":
        return FlowPair(self.f1.detach(), self.f2.detach(), self.resolution)
