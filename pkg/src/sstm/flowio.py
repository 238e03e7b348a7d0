"""Flow interchange: Middlebury .flo, KITTI 16-bit PNG, 8-bit PNG images, colour coding.

The PNG codec covers only non-interlaced greyscale or RGB at 8 or 16 bits,
which is all the KITTI layout and the visualisations need.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FLO_SENTINEL = 202021.25
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
KITTI_SCALE = 64.0
KITTI_OFFSET = 2**15


class FlowFormatError(ValueError):
    pass


class TruncatedFlowError(FlowFormatError):
    pass


class FlowRangeError(FlowFormatError):
    pass


@dataclass
class FlowFile:
    flow: np.ndarray  # 2 x H x W float32
    valid: np.ndarray | None = None  # H x W bool

    def __post_init__(self) -> None:
        self.flow = np.asarray(self.flow, np.float32)
        if self.flow.ndim != 3 or self.flow.shape[0] != 2:
            raise FlowFormatError(f"flow must be 2 x H x W, got {self.flow.shape}")
        if self.valid is not None:
            self.valid = np.asarray(self.valid, bool)
            if self.valid.shape != self.flow.shape[1:]:
                raise FlowFormatError(f"valid mask {self.valid.shape} does not match flow {self.flow.shape}")

    @property
    def height(self) -> int:
        return self.flow.shape[1]

    @property
    def width(self) -> int:
        return self.flow.shape[2]


# ---------------------------------------------------------------------------
# .flo
# ---------------------------------------------------------------------------

def encode_flo(ff: FlowFile) -> bytes:
    header = struct.pack("<fii", FLO_SENTINEL, ff.width, ff.height)
    body = np.ascontiguousarray(ff.flow.transpose(1, 2, 0), dtype="<f4").tobytes()
    return header + body


def decode_flo(raw: bytes) -> FlowFile:
    if len(raw) < 12:
        raise TruncatedFlowError(f".flo header needs 12 bytes, got {len(raw)}")
    sentinel, w, h = struct.unpack_from("<fii", raw)
    if sentinel != np.float32(FLO_SENTINEL):
        raise FlowFormatError(f"bad .flo sentinel {sentinel!r}")
    if w <= 0 or h <= 0:
        raise FlowFormatError(f"bad .flo extent {w}x{h}")
    need = 12 + 8 * w * h
    if len(raw) < need:
        raise TruncatedFlowError(f".flo body holds {(len(raw) - 12) // 4} floats, header promises {2 * w * h}")
    if len(raw) > need:
        raise FlowFormatError(f".flo has {len(raw) - need} trailing bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    return FlowFile(data.transpose(2, 0, 1).astype(np.float32))


def write_flo(path: str | Path, ff: FlowFile) -> None:
    Path(path).write_bytes(encode_flo(ff))


def read_flo(path: str | Path) -> FlowFile:
    return decode_flo(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# PNG subset
# ---------------------------------------------------------------------------

def _chunk(kind: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)


def encode_png(image: np.ndarray) -> bytes:
    """``H x W`` or ``H x W x 3`` array of uint8 or uint16."""
    img = np.asarray(image)
    if img.dtype == np.uint8:
        depth = 8
    elif img.dtype == np.uint16:
        depth = 16
    else:
        raise FlowFormatError(f"PNG pixels must be uint8 or uint16, got {img.dtype}")
    if img.ndim == 2:
        color, channels = 0, 1
    elif img.ndim == 3 and img.shape[2] == 3:
        color, channels = 2, 3
    else:
        raise FlowFormatError(f"PNG image must be H x W or H x W x 3, got {img.shape}")
    h, w = img.shape[:2]
    rows = img.astype(">u2" if depth == 16 else np.uint8).reshape(h, w * channels)
    raw = np.concatenate([np.zeros((h, 1), np.uint8), rows.view(np.uint8).reshape(h, -1)], axis=1)
    ihdr = struct.pack(">IIBBBBB", w, h, depth, color, 0, 0, 0)
    return PNG_SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(raw.tobytes(), 6)) + _chunk(b"IEND", b"")


def _unfilter(data: bytes, h: int, stride: int, bpp: int) -> np.ndarray:
    out = np.zeros((h, stride), np.uint8)
    prev = np.zeros(stride, np.int32)
    pos = 0
    for y in range(h):
        ftype = data[pos]
        line = np.frombuffer(data, np.uint8, stride, pos + 1).astype(np.int32)
        pos += stride + 1
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            cur = np.zeros(stride, np.int32)
            for x in range(stride):
                a = cur[x - bpp] if x >= bpp else 0
                b = prev[x]
                c = prev[x - bpp] if x >= bpp else 0
                if ftype == 1:
                    pred = a
                elif ftype == 3:
                    pred = (a + b) >> 1
                else:
                    p = a + b - c
                    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                    pred = a if pa <= pb and pa <= pc else (b if pb <= pc else c)
                cur[x] = (line[x] + pred) & 0xFF
        else:
            raise FlowFormatError(f"unknown PNG filter type {ftype}")
        out[y] = cur
        prev = cur
    return out


def decode_png(raw: bytes) -> np.ndarray:
    if not raw.startswith(PNG_SIGNATURE):
        raise FlowFormatError("not a PNG file")
    pos = len(PNG_SIGNATURE)
    header = None
    idat = []
    while True:
        if pos + 8 > len(raw):
            raise TruncatedFlowError("PNG ends before IEND")
        length, kind = struct.unpack_from(">I4s", raw, pos)
        end = pos + 12 + length
        if end > len(raw):
            raise TruncatedFlowError(f"PNG chunk {kind!r} is truncated")
        data = raw[pos + 8 : pos + 8 + length]
        (crc,) = struct.unpack_from(">I", raw, pos + 8 + length)
        if zlib.crc32(kind + data) & 0xFFFFFFFF != crc:
            raise FlowFormatError(f"PNG chunk {kind!r} fails its CRC")
        pos = end
        if kind == b"IHDR":
            header = struct.unpack(">IIBBBBB", data)
        elif kind == b"IDAT":
            idat.append(data)
        elif kind == b"IEND":
            break
        elif kind[0] & 0x20 == 0:  # critical chunk we do not understand, e.g. PLTE
            raise FlowFormatError(f"unsupported PNG chunk {kind!r}")
    if header is None:
        raise FlowFormatError("PNG has no IHDR")
    w, h, depth, color, _, _, interlace = header
    if depth not in (8, 16) or color not in (0, 2):
        raise FlowFormatError(f"unsupported PNG layout: depth {depth}, colour type {color}")
    if interlace:
        raise FlowFormatError("interlaced PNG is not supported")
    channels = 3 if color == 2 else 1
    bpp = channels * depth // 8
    stride = w * bpp
    try:
        data = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise FlowFormatError(f"corrupt PNG image data: {exc}") from None
    if len(data) < h * (stride + 1):
        raise TruncatedFlowError("PNG image data is shorter than its header promises")
    rows = _unfilter(data, h, stride, bpp)
    if depth == 16:
        pixels = rows.view(">u2").astype(np.uint16)
    else:
        pixels = rows
    return pixels.reshape(h, w, channels) if channels == 3 else pixels.reshape(h, w)


def write_png(path: str | Path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_png(image))


def read_png(path: str | Path) -> np.ndarray:
    return decode_png(Path(path).read_bytes())


def read_image(path: str | Path) -> np.ndarray:
    """8-bit PNG as a float32 ``3 x H x W`` array in 0..255 (grey is replicated)."""
    img = read_png(path)
    if img.dtype != np.uint8:
        raise FlowFormatError(f"{path}: expected an 8-bit image")
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img.transpose(2, 0, 1).astype(np.float32)


def write_image(path: str | Path, image: np.ndarray) -> None:
    """``3 x H x W`` values in 0..255 to an 8-bit RGB PNG."""
    img = np.clip(np.rint(np.asarray(image)), 0, 255).astype(np.uint8)
    write_png(path, img.transpose(1, 2, 0))


def read_mask(path: str | Path) -> np.ndarray:
    img = read_png(path)
    return (img if img.ndim == 2 else img.max(axis=2)) > 0


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    write_png(path, np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8))


# ---------------------------------------------------------------------------
# KITTI 16-bit flow PNG
# ---------------------------------------------------------------------------

def encode_kitti(ff: FlowFile) -> np.ndarray:
    valid = np.isfinite(ff.flow).all(axis=0) if ff.valid is None else ff.valid
    flow = np.where(valid[None], ff.flow, 0.0).astype(np.float64)
    q = np.rint(flow * KITTI_SCALE) + KITTI_OFFSET
    if (q < 0).any() or (q > 65535).any():
        worst = float(np.abs(flow).max())
        raise FlowRangeError(f"flow magnitude {worst:.2f} px exceeds the KITTI range of about 512 px")
    out = np.empty(ff.flow.shape[1:] + (3,), np.uint16)
    out[..., 0] = q[0]
    out[..., 1] = q[1]
    out[..., 2] = valid
    return out


def decode_kitti(img: np.ndarray) -> FlowFile:
    if img.dtype != np.uint16 or img.ndim != 3 or img.shape[2] != 3:
        raise FlowFormatError(f"KITTI flow must be 16-bit RGB, got {img.dtype} {img.shape}")
    u = (img[..., 0].astype(np.float64) - KITTI_OFFSET) / KITTI_SCALE
    v = (img[..., 1].astype(np.float64) - KITTI_OFFSET) / KITTI_SCALE
    return FlowFile(np.stack([u, v]).astype(np.float32), img[..., 2] > 0)


def write_kitti_png(path: str | Path, ff: FlowFile) -> None:
    write_png(path, encode_kitti(ff))


def read_kitti_png(path: str | Path) -> FlowFile:
    return decode_kitti(read_png(path))


def read_flow(path: str | Path) -> FlowFile:
    """Dispatch on extension: ``.flo`` or KITTI ``.png``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".flo":
        return read_flo(path)
    if suffix == ".png":
        return read_kitti_png(path)
    raise FlowFormatError(f"unknown flow file type {suffix!r}")


# ---------------------------------------------------------------------------
# colour coding
# ---------------------------------------------------------------------------

def color_wheel() -> np.ndarray:
    """Middlebury 55-entry wheel: red, yellow, green, cyan, blue, magenta segments."""
    segments = [(15, (255, 0, 0), (255, 255, 0)), (6, (255, 255, 0), (0, 255, 0)), (4, (0, 255, 0), (0, 255, 255)),
                (11, (0, 255, 255), (0, 0, 255)), (13, (0, 0, 255), (255, 0, 255)), (6, (255, 0, 255), (255, 0, 0))]
    rows = []
    for n, start, stop in segments:
        t = np.floor(255 * np.arange(n) / n) / 255
        a, b = np.array(start, float), np.array(stop, float)
        rows.append(a + np.outer(t, b - a))
    return np.concatenate(rows)


def flow_to_color(flow: np.ndarray, max_rad: float | None = None) -> np.ndarray:
    """``H x W x 3`` uint8: hue encodes direction, saturation the clamped magnitude."""
    flow = np.asarray(flow, np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise FlowFormatError(f"flow must be 2 x H x W, got {flow.shape}")
    if not np.isfinite(flow).all():
        raise FlowFormatError("flow contains non-finite values")
    u, v = flow
    rad = np.sqrt(u * u + v * v)
    if max_rad is None:
        max_rad = float(rad.max())
    if max_rad <= 0:
        max_rad = 1.0
    wheel = color_wheel()
    ncols = len(wheel)
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = (1 - f) * wheel[k0] / 255 + f * wheel[k1] / 255
    sat = np.minimum(rad / max_rad, 1.0)[..., None]
    col = 1 - sat * (1 - col)
    return np.floor(255 * col).astype(np.uint8)
