"""Sequence losses over the N intermediate flow pairs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, tabs, tsum
from .flowpair import FlowPair


@dataclass
class GtSample:
    """Ground truth for one three-frame window. ``gt_f1`` may be absent."""

    gt_f1: np.ndarray | None
    gt_f2: np.ndarray | None
    valid1: np.ndarray | None = None
    valid2: np.ndarray | None = None
    occlusion_mask: np.ndarray | None = None  # frame-2 pixels hidden in frame 3
    oob_mask: np.ndarray | None = None  # frame-2 pixels whose target leaves the frame
    fg_mask: np.ndarray | None = None  # frame-2 foreground pixels

    def __post_init__(self) -> None:
        ref = self.gt_f2 if self.gt_f2 is not None else self.gt_f1
        if ref is None:
            raise ValueError("at least one ground-truth flow is required")
        if ref.ndim != 3 or ref.shape[0] != 2:
            raise ValueError(f"ground truth must be 2 x H x W, got {ref.shape}")
        hw = ref.shape[1:]
        for name in ("gt_f1", "gt_f2"):
            f = getattr(self, name)
            if f is not None and f.shape != ref.shape:
                raise ValueError(f"{name} shape {f.shape} differs from {ref.shape}")
        for name in ("valid1", "valid2", "occlusion_mask", "oob_mask", "fg_mask"):
            m = getattr(self, name)
            if m is not None and m.shape != hw:
                raise ValueError(f"{name} shape {m.shape} must be {hw}")

    @property
    def hw(self) -> tuple[int, int]:
        ref = self.gt_f2 if self.gt_f2 is not None else self.gt_f1
        return ref.shape[1], ref.shape[2]

    def mask(self, stream: int) -> np.ndarray:
        m = self.valid1 if stream == 1 else self.valid2
        return np.ones(self.hw, bool) if m is None else m.astype(bool)


def stream_l1(pred: Tensor, gt: np.ndarray, valid: np.ndarray) -> Tensor:
    """``|du| + |dv|`` summed over components, averaged over valid pixels."""
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no valid pixels")
    w = np.broadcast_to(valid, gt.shape).astype(pred.dtype)
    err = tabs(pred - Tensor(gt.astype(pred.dtype))) * Tensor(w)
    return tsum(err) * (1.0 / n)


def sequence_loss(stream: Sequence[Tensor], gt: np.ndarray, valid: np.ndarray, gamma: float) -> Tensor:
    """``sum_i gamma^(N-i) * L1_i`` for one flow stream."""
    n = len(stream)
    if n == 0:
        raise ValueError("empty prediction sequence")
    total = None
    for i, pred in enumerate(stream, start=1):
        term = stream_l1(pred, gt, valid) * float(gamma ** (n - i))
        total = term if total is None else total + term
    return total


def _check_full(preds: Sequence[FlowPair]) -> None:
    for p in preds:
        p.require("full")


def loss1(preds: Sequence[FlowPair], gt: GtSample, gamma: float = 0.8) -> Tensor:
    """Both streams supervised: mean of the two per-stream sequence losses."""
    if gt.gt_f1 is None or gt.gt_f2 is None:
        raise ValueError("loss1 needs ground truth for both flows")
    _check_full(preds)
    a = sequence_loss([p.f1 for p in preds], gt.gt_f1, gt.mask(1), gamma)
    b = sequence_loss([p.f2 for p in preds], gt.gt_f2, gt.mask(2), gamma)
    return (a + b) * 0.5


def loss2(preds: Sequence[FlowPair], gt: GtSample, gamma: float = 0.8) -> Tensor:
    """Only the second flow supervised; the first stream is free."""
    if gt.gt_f2 is None:
        raise ValueError("loss2 needs ground truth for the second flow")
    _check_full(preds)
    return sequence_loss([p.f2 for p in preds], gt.gt_f2, gt.mask(2), gamma)
