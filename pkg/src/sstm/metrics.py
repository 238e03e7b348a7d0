"""Evaluation metrics: EPE, Fl outliers, occlusion-distance and speed bands."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

BAND_KINDS = ("occ_distance", "speed")


class EmptyRegionError(ValueError):
    pass


@dataclass(frozen=True)
class RegionSpec:
    kind: str
    lo: float
    hi: float = math.inf

    def __post_init__(self) -> None:
        if self.kind not in BAND_KINDS:
            raise ValueError(f"band kind must be one of {BAND_KINDS}")
        if not self.lo < self.hi:
            raise ValueError(f"band needs lo < hi, got [{self.lo}, {self.hi})")

    @property
    def label(self) -> str:
        prefix = "d" if self.kind == "occ_distance" else "s"
        lo = f"{self.lo:g}"
        return f"{prefix}{lo}+" if math.isinf(self.hi) else f"{prefix}{lo}-{self.hi:g}"

    def contains(self, aux: np.ndarray) -> np.ndarray:
        return (aux >= self.lo) & (aux < self.hi)


def parse_bands(text: str) -> list[RegionSpec]:
    """``d0-10,d10-60,s40+`` style band list."""
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        kind = {"d": "occ_distance", "s": "speed"}.get(item[0])
        if kind is None:
            raise ValueError(f"band {item!r} must start with 'd' or 's'")
        body = item[1:]
        if body.endswith("+"):
            out.append(RegionSpec(kind, float(body[:-1].rstrip("+"))))
        else:
            lo, sep, hi = body.partition("-")
            if not sep:
                raise ValueError(f"band {item!r} needs lo-hi or lo+")
            out.append(RegionSpec(kind, float(lo), float(hi)))
    return out


def _mask(shape: tuple[int, int], mask: np.ndarray | None) -> np.ndarray:
    m = np.ones(shape, bool) if mask is None else np.asarray(mask, bool)
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} must be {shape}")
    return m


def endpoint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[0] != 2:
        raise ValueError(f"flows must share a 2 x H x W shape, got {pred.shape} and {gt.shape}")
    d = np.asarray(pred, np.float64) - np.asarray(gt, np.float64)
    return np.sqrt(d[0] ** 2 + d[1] ** 2)


def epe(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    e = endpoint_errors(pred, gt)
    m = _mask(e.shape, mask)
    if not m.any():
        raise EmptyRegionError("EPE over an empty mask")
    return float(e[m].mean())


def outliers(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    e = endpoint_errors(pred, gt)
    mag = np.sqrt(np.asarray(gt, np.float64)[0] ** 2 + np.asarray(gt, np.float64)[1] ** 2)
    return (e >= 3.0) & (e >= 0.05 * mag)


def fl_rate(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Percentage of pixels with EPE >= 3 px and >= 5% of the true magnitude."""
    bad = outliers(pred, gt)
    m = _mask(bad.shape, mask)
    if not m.any():
        raise EmptyRegionError("Fl over an empty mask")
    return float(100.0 * bad[m].mean())


def occlusion_distance(occ_mask: np.ndarray) -> np.ndarray:
    """Chamfer 3-4 distance (in pixels) to the nearest occluded pixel; inf if none."""
    occ = np.asarray(occ_mask, bool)
    if occ.ndim != 2:
        raise ValueError("occlusion mask must be 2-D")
    h, w = occ.shape
    d = np.where(occ, 0.0, np.inf)
    ramp = 3.0 * np.arange(w)

    def sweep_row(row: np.ndarray) -> np.ndarray:
        # row[j] = min_k row[k] + 3 |j - k| for k on the sweep's trailing side
        return ramp + np.minimum.accumulate(row - ramp)

    for i in range(h):
        if i:
            prev = d[i - 1]
            cand = prev + 3.0
            cand[1:] = np.minimum(cand[1:], prev[:-1] + 4.0)
            cand[:-1] = np.minimum(cand[:-1], prev[1:] + 4.0)
            d[i] = np.minimum(d[i], cand)
        d[i] = sweep_row(d[i])
    for i in range(h - 1, -1, -1):
        if i < h - 1:
            nxt = d[i + 1]
            cand = nxt + 3.0
            cand[1:] = np.minimum(cand[1:], nxt[:-1] + 4.0)
            cand[:-1] = np.minimum(cand[:-1], nxt[1:] + 4.0)
            d[i] = np.minimum(d[i], cand)
        d[i] = sweep_row(d[i][::-1])[::-1]
    return d / 3.0


def band_stats(
    pred: np.ndarray, gt: np.ndarray, spec: RegionSpec, aux: np.ndarray, mask: np.ndarray | None = None
) -> tuple[int, float]:
    """(pixel count, EPE sum) inside the band."""
    e = endpoint_errors(pred, gt)
    if aux.shape != e.shape:
        raise ValueError(f"band map shape {aux.shape} must be {e.shape}")
    sel = spec.contains(aux) & _mask(e.shape, mask)
    return int(sel.sum()), float(e[sel].sum())


def banded_epe(
    pred: np.ndarray, gt: np.ndarray, spec: RegionSpec, aux: np.ndarray, mask: np.ndarray | None = None
) -> float:
    """EPE over pixels whose band value (occlusion distance or true speed) lies in ``[lo, hi)``."""
    n, total = band_stats(pred, gt, spec, aux, mask)
    if n == 0:
        raise EmptyRegionError(f"band {spec.label} is empty")
    return total / n


def speed_map(gt: np.ndarray) -> np.ndarray:
    g = np.asarray(gt, np.float64)
    return np.sqrt(g[0] ** 2 + g[1] ** 2)


def band_aux(spec: RegionSpec, gt: np.ndarray, occ_dist: np.ndarray | None) -> np.ndarray:
    if spec.kind == "speed":
        return speed_map(gt)
    if occ_dist is None:
        raise ValueError(f"band {spec.label} needs an occlusion mask")
    return occ_dist


def evaluate_flow(
    pred: np.ndarray,
    gt: np.ndarray,
    mask: np.ndarray | None = None,
    bands: Iterable[RegionSpec] = (),
    occ_mask: np.ndarray | None = None,
) -> "dict[str, float]":
    """EPE, Fl and per-band EPE (NaN for empty bands) in one mapping."""
    out = {"epe": epe(pred, gt, mask), "fl": fl_rate(pred, gt, mask)}
    dist = occlusion_distance(occ_mask) if occ_mask is not None else None
    for spec in bands:
        n, total = band_stats(pred, gt, spec, band_aux(spec, gt, dist), mask)
        out[f"epe_{spec.label}"] = total / n if n else math.nan
        out[f"count_{spec.label}"] = n
    return out


def partition_residual(pred: np.ndarray, gt: np.ndarray, bands: Iterable[RegionSpec], aux: np.ndarray, mask=None) -> float:
    """``|sum(count * band EPE) - total * global EPE|`` for a band cover."""
    covered = sum(band_stats(pred, gt, b, aux, mask)[1] for b in bands)
    e = endpoint_errors(pred, gt)
    return abs(covered - float(e[_mask(e.shape, mask)].sum()))


def format_report(values: Mapping[str, float], prefix: str = "") -> str:
    lines = []
    for k, v in values.items():
        text = f"{v:.6f}" if isinstance(v, float) else str(v)
        lines.append(f"{prefix}{k}={text}")
    return "\n".join(lines)
