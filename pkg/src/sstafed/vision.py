"""Frame preprocessing: gradients, HoG descriptors, face crop and augmentation.

Frames are float64 arrays of shape (H, W) or (H, W, C) with values in [0, 1].
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import InputError, ParameterError

Rect = tuple[int, int, int, int]  # (top, left, bottom, right), bottom/right exclusive


def check_frame(frame) -> np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim not in (2, 3) or (f.ndim == 3 and f.shape[2] not in (1, 3)):
        raise InputError(f"frame must be HxW or HxWxC with C in (1, 3), got shape {f.shape}")
    if f.shape[0] < 2 or f.shape[1] < 2:
        raise InputError(f"frame must be at least 2x2, got {f.shape[:2]}")
    if not np.all(np.isfinite(f)) or f.min() < 0.0 or f.max() > 1.0:
        raise InputError("frame pixels must lie in [0, 1]")
    return f


# -- gradients ---------------------------------------------------------------

@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray
    orientation: np.ndarray
    signed: bool = False


def orientation_range(signed: bool) -> float:
    return 2.0 * math.pi if signed else math.pi


def _orientation(gx, gy, signed):
    rng = orientation_range(signed)
    ang = np.mod(np.arctan2(gy, gx), rng)
    ang[ang >= rng] = 0.0
    ang[(gx == 0.0) & (gy == 0.0)] = 0.0
    return ang


def compute_gradients(frame, signed: bool = False) -> GradientField:
    """Per-pixel derivatives: central differences inside, one-sided at the border.

    x runs along columns, y along rows. For multi-channel frames the channel with
    the largest magnitude wins at each pixel.
    """
    f = check_frame(frame)
    if f.ndim == 2:
        f = f[:, :, None]
    gy = np.gradient(f, axis=0)
    gx = np.gradient(f, axis=1)
    mag = np.sqrt(gx * gx + gy * gy)
    if f.shape[2] > 1:
        pick = np.argmax(mag, axis=2)[:, :, None]
        gx = np.take_along_axis(gx, pick, axis=2)
        gy = np.take_along_axis(gy, pick, axis=2)
        mag = np.take_along_axis(mag, pick, axis=2)
    gx, gy, mag = gx[:, :, 0], gy[:, :, 0], mag[:, :, 0]
    return GradientField(gx, gy, mag, _orientation(gx, gy, signed), signed)


# -- HoG ---------------------------------------------------------------------

@dataclass(frozen=True)
class HogConfig:
    cell_size: int = 8
    bins: int = 9
    block_cells: int = 4
    block_stride: int = 1
    eta: float = 1e-5
    signed_orientation: bool = False

    def __post_init__(self):
        if self.cell_size < 1:
            raise ParameterError("cell_size must be >= 1")
        if self.bins < 2:
            raise ParameterError("bins must be >= 2")
        side = math.isqrt(self.block_cells)
        if self.block_cells < 1 or side * side != self.block_cells:
            raise ParameterError(f"block_cells must be a positive square number, got {self.block_cells}")
        if self.block_stride < 1:
            raise ParameterError("block_stride must be >= 1")
        if not self.eta > 0:
            raise ParameterError("eta must be positive")

    @property
    def block_side(self) -> int:
        return math.isqrt(self.block_cells)

    @classmethod
    def from_dict(cls, d: dict) -> "HogConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown HoG option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class HogDescriptor:
    blocks: int
    vector: np.ndarray


def cell_histograms(field: GradientField, cfg: HogConfig) -> np.ndarray:
    """Histograms of shape (cells_y, cells_x, bins); partial edge cells are dropped."""
    h, w = field.magnitude.shape
    if h < cfg.cell_size or w < cfg.cell_size:
        raise InputError(f"{h}x{w} field holds no complete {cfg.cell_size}px cell")
    return kernels.cell_histograms(
        field.magnitude, field.orientation, cfg.cell_size, cfg.bins, orientation_range(field.signed)
    )


def block_vectors(hist: np.ndarray, cfg: HogConfig) -> np.ndarray:
    """Normalised block vectors, shape (L, block_cells * bins), blocks in row-major order."""
    ncy, ncx, _ = hist.shape
    side, stride = cfg.block_side, cfg.block_stride
    if ncy < side or ncx < side:
        raise InputError(f"{ncy}x{ncx} cells cannot hold a {side}x{side} block")
    rows = []
    for by in range(0, ncy - side + 1, stride):
        for bx in range(0, ncx - side + 1, stride):
            rows.append(hist[by:by + side, bx:bx + side].reshape(-1))
    v = np.array(rows)
    return v / np.sqrt(np.sum(v * v, axis=1, keepdims=True) + cfg.eta ** 2)


def hog_descriptor(frame, cfg: HogConfig = HogConfig()) -> HogDescriptor:
    field = compute_gradients(frame, signed=cfg.signed_orientation)
    blocks = block_vectors(cell_histograms(field, cfg), cfg)
    return HogDescriptor(blocks=blocks.shape[0], vector=blocks.reshape(-1))


# -- face crop ---------------------------------------------------------------

Detector = Callable[[np.ndarray], Optional[Rect]]


def full_frame_detector(frame: np.ndarray) -> Rect:
    """Stand-in detector that reports the whole frame as the face."""
    return (0, 0, frame.shape[0], frame.shape[1])


def fixed_rect_detector(rect: Rect) -> Detector:
    def detect(frame):
        return rect

    return detect


def no_face_detector(frame: np.ndarray) -> None:
    return None


def crop_face(frame, detector: Detector = full_frame_detector) -> Optional[np.ndarray]:
    """Copy of the detected face region, or ``None`` when the detector finds no face."""
    f = check_frame(frame)
    rect = detector(f)
    if rect is None:
        return None
    top, left, bottom, right = (int(v) for v in rect)
    if not (0 <= top < bottom <= f.shape[0] and 0 <= left < right <= f.shape[1]):
        raise InputError(f"detector rectangle {rect} outside {f.shape[0]}x{f.shape[1]} frame")
    return f[top:bottom, left:right].copy()


# -- augmentation ------------------------------------------------------------

AUGMENT_KINDS = ("identity", "horizontal_flip", "rotate", "brightness", "zoom")
_LIMITS = {"rotate": (-30.0, 30.0), "brightness": (-0.3, 0.3), "zoom": (0.8, 1.25)}
_DEFAULTS = {"rotate": 0.0, "brightness": 0.0, "zoom": 1.0}


@dataclass(frozen=True)
class AugmentOp:
    kind: str
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in AUGMENT_KINDS:
            raise ParameterError(f"unknown augmentation {self.kind!r}")
        if self.kind in _LIMITS:
            lo, hi = _LIMITS[self.kind]
            if not lo <= self.value <= hi:
                raise ParameterError(f"{self.kind} parameter {self.value} outside [{lo}, {hi}]")

    @property
    def label(self) -> str:
        return self.kind if self.kind not in _LIMITS else f"{self.kind}:{self.value:g}"


def parse_augment_spec(spec: str) -> list[AugmentOp]:
    """Parse ``"horizontal_flip,rotate:10,brightness:-0.1"`` (``flip`` abbreviates horizontal_flip)."""
    ops = []
    for item in filter(None, (s.strip() for s in spec.split(","))):
        name, _, val = item.partition(":")
        name = {"flip": "horizontal_flip"}.get(name.strip(), name.strip())
        if name in _LIMITS:
            ops.append(AugmentOp(name, float(val) if val else _DEFAULTS[name]))
        else:
            if val:
                raise ParameterError(f"{name} takes no parameter")
            ops.append(AugmentOp(name))
    return ops


def _bilinear(f, src_y, src_x):
    h, w = f.shape[:2]
    sy = np.clip(src_y, 0.0, h - 1.0)
    sx = np.clip(src_x, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = sy - y0
    fx = sx - x0
    if f.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    top = f[y0, x0] * (1 - fx) + f[y0, x1] * fx
    bot = f[y1, x0] * (1 - fx) + f[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _warp(f, inverse):
    h, w = f.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sy, sx = inverse(yy - cy, xx - cx)
    return _bilinear(f, sy + cy, sx + cx)


def apply_op(frame: np.ndarray, op: AugmentOp) -> np.ndarray:
    f = frame
    if op.kind == "identity":
        return f.copy()
    if op.kind == "horizontal_flip":
        return f[:, ::-1].copy()
    if op.kind == "brightness":
        return np.clip(f + op.value, 0.0, 1.0)
    if op.kind == "zoom":
        return np.clip(_warp(f, lambda dy, dx: (dy / op.value, dx / op.value)), 0.0, 1.0)
    # rotate: counter-clockwise by op.value degrees, sampled through the inverse map
    a = math.radians(op.value)
    c, s = math.cos(a), math.sin(a)
    return np.clip(_warp(f, lambda dy, dx: (c * dy - s * dx, s * dy + c * dx)), 0.0, 1.0)


def augment(frame, ops: Sequence[AugmentOp]) -> list[np.ndarray]:
    """[original, T_1(original), ..., T_Z(original)]; each transform sees the untouched input."""
    f = check_frame(frame)
    return [f.copy()] + [apply_op(f, op) for op in ops]


# -- I/O ---------------------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) into a [0, 1] float frame."""
    data = Path(path).read_bytes()
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        if start == i:
            raise InputError(f"{path}: truncated PGM header")
        tokens.append(data[start:i])
    if tokens[0] != b"P5":
        raise InputError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise InputError(f"{path}: malformed PGM header") from None
    if maxval < 1 or maxval > 255:
        raise InputError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    pixels = data[i + 1:i + 1 + w * h]
    if len(pixels) != w * h:
        raise InputError(f"{path}: expected {w * h} pixel bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).astype(np.float64) / maxval


def write_pgm(path, frame) -> None:
    f = check_frame(frame)
    if f.ndim == 3:
        f = f.mean(axis=2)
    h, w = f.shape
    raw = np.rint(f * 255.0).astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + raw)


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_descriptor_csv(path, rows: Sequence[tuple[str, np.ndarray]]) -> None:
    """One descriptor per row: name followed by its values at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        for name, vec in rows:
            wr.writerow([name] + [format_float(v) for v in vec])


def read_descriptor_csv(path) -> list[tuple[str, np.ndarray]]:
    with open(path, newline="") as fh:
        return [(r[0], np.array([float(v) for v in r[1:]])) for r in csv.reader(fh)]
