"""Domain types and shared conventions.

Depth is metric (meters) with ``0.0`` meaning a missing pixel. RGB is float in
``[0, 1]``. On disk depth is 16-bit PNG in millimeters, RGB is 8-bit PNG.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from PIL import Image

PLANE_CLASSES = ("other", "floor", "ceiling", "wall")
OTHER, FLOOR, CEILING, WALL = range(4)


class ParameterError(ValueError):
    """Raised when an operation receives arguments that violate its contract."""


class MalformedFileError(ValueError):
    """Raised when a dataset file is unreadable or inconsistent."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = Path(path)
        self.reason = reason


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RgbImage:
    data: np.ndarray  # H x W x 3, float32 in [0, 1]

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3 or d.shape[2] != 3 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ParameterError(f"rgb must be HxWx3, got {d.shape}")
        if not np.all((d >= 0.0) & (d <= 1.0)):
            raise ParameterError("rgb values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(d))

    @property
    def shape(self):
        return self.data.shape[:2]

    @classmethod
    def from_uint8(cls, a: np.ndarray) -> "RgbImage":
        return cls(np.asarray(a, dtype=np.float32) / 255.0)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.data * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class DepthMap:
    data: np.ndarray  # H x W, float32 meters, 0 = missing

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim == 3 and d.shape[2] == 1:
            d = d[..., 0]
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ParameterError(f"depth must be HxW, got {d.shape}")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ParameterError("depth must be finite and non-negative")
        object.__setattr__(self, "data", _frozen(d))

    @property
    def shape(self):
        return self.data.shape

    def valid(self) -> np.ndarray:
        return validity_mask(self)


@dataclass(frozen=True)
class NormalMap:
    data: np.ndarray  # H x W x 3; zero vector marks an undefined normal

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ParameterError(f"normals must be HxWx3, got {d.shape}")
        object.__setattr__(self, "data", _frozen(d))

    @property
    def shape(self):
        return self.data.shape[:2]


@dataclass(frozen=True)
class SegMask:
    data: np.ndarray  # H x W integer labels
    plane_classes: Mapping[int, str]

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2 or not np.issubdtype(d.dtype, np.integer):
            raise ParameterError("seg must be an HxW integer array")
        classes = {int(k): str(v) for k, v in dict(self.plane_classes).items()}
        bad = {v for v in classes.values() if v not in PLANE_CLASSES}
        if bad:
            raise ParameterError(f"unknown plane classes {sorted(bad)}")
        missing = set(np.unique(d).tolist()) - set(classes)
        if missing:
            raise ParameterError(f"labels without a plane class: {sorted(missing)}")
        object.__setattr__(self, "data", _frozen(d.astype(np.int32)))
        object.__setattr__(self, "plane_classes", classes)

    @property
    def shape(self):
        return self.data.shape

    def plane_codes(self) -> np.ndarray:
        """Per-pixel plane code: OTHER, FLOOR, CEILING or WALL."""
        lut = {name: i for i, name in enumerate(PLANE_CLASSES)}
        out = np.zeros(self.data.shape, dtype=np.int64)
        for label, name in self.plane_classes.items():
            out[self.data == label] = lut[name]
        return out


@dataclass(frozen=True)
class CameraIntrinsics:
    K: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ParameterError("focal lengths must be positive")
        if abs(np.linalg.det(K)) < 1e-12:
            raise ParameterError("intrinsic matrix is singular")
        object.__setattr__(self, "K", _frozen(K))

    @classmethod
    def from_params(cls, fx, fy, cx, cy) -> "CameraIntrinsics":
        return cls(np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]]))

    fx = property(lambda self: float(self.K[0, 0]))
    fy = property(lambda self: float(self.K[1, 1]))
    cx = property(lambda self: float(self.K[0, 2]))
    cy = property(lambda self: float(self.K[1, 2]))

    def scaled(self, sx: float, sy: float) -> "CameraIntrinsics":
        return CameraIntrinsics.from_params(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy)

    def cropped(self, x0: int, y0: int) -> "CameraIntrinsics":
        return CameraIntrinsics.from_params(self.fx, self.fy, self.cx - x0, self.cy - y0)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # N x 3 float64

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ParameterError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(p))

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class SampleRecord:
    id: str
    rgb: RgbImage
    raw_depth: DepthMap
    intrinsics: CameraIntrinsics
    gt_depth: Optional[DepthMap] = None
    seg: Optional[SegMask] = None
    gt_normals: Optional[NormalMap] = None
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        hw = self.rgb.shape
        for name in ("raw_depth", "gt_depth", "seg", "gt_normals"):
            item = getattr(self, name)
            if item is not None and tuple(item.shape) != tuple(hw):
                raise ParameterError(f"{name} has shape {item.shape}, rgb has {hw}")

    @property
    def shape(self):
        return self.rgb.shape


def validity_mask(d: DepthMap) -> np.ndarray:
    return np.asarray(d.data) > 0


# --- on-disk formats -------------------------------------------------------

def encode_depth_mm(d: DepthMap) -> np.ndarray:
    mm = np.rint(np.asarray(d.data, dtype=np.float64) * 1000.0)
    if mm.max(initial=0) > 65535:
        raise ParameterError("depth exceeds the 16-bit millimeter range")
    return mm.astype(np.uint16)


def decode_depth_mm(a: np.ndarray) -> DepthMap:
    return DepthMap(np.asarray(a, dtype=np.float32) / 1000.0)


def save_depth_png(path, d: DepthMap) -> None:
    Image.fromarray(encode_depth_mm(d)).save(path)


def load_depth_png(path) -> DepthMap:
    try:
        with Image.open(path) as im:
            a = np.array(im)
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as e:
        raise MalformedFileError(path, f"cannot decode depth image ({e})") from e
    if a.ndim != 2:
        raise MalformedFileError(path, "depth image must be single-channel")
    return decode_depth_mm(a)


def save_rgb_png(path, rgb: RgbImage) -> None:
    Image.fromarray(rgb.to_uint8(), mode="RGB").save(path)


def load_rgb_png(path) -> RgbImage:
    try:
        with Image.open(path) as im:
            a = np.array(im.convert("RGB"))
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as e:
        raise MalformedFileError(path, f"cannot decode rgb image ({e})") from e
    return RgbImage.from_uint8(a)


def save_seg_png(path, seg: SegMask) -> None:
    if seg.data.min() < 0 or seg.data.max() > 255:
        raise ParameterError("labels must fit in 8 bits")
    Image.fromarray(seg.data.astype(np.uint8), mode="L").save(path)


def load_seg_png(path, plane_classes: Mapping[int, str]) -> SegMask:
    try:
        with Image.open(path) as im:
            a = np.array(im)
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as e:
        raise MalformedFileError(path, f"cannot decode segmentation ({e})") from e
    if a.ndim != 2:
        raise MalformedFileError(path, "segmentation must be single-channel")
    try:
        return SegMask(a.astype(np.int32), plane_classes)
    except ParameterError as e:
        raise MalformedFileError(path, str(e)) from e


def read_intrinsics(path) -> CameraIntrinsics:
    try:
        vals = [float(v) for v in Path(path).read_text().split()]
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as e:
        raise MalformedFileError(path, f"cannot parse intrinsics ({e})") from e
    if len(vals) != 9:
        raise MalformedFileError(path, f"expected 9 values, found {len(vals)}")
    try:
        return CameraIntrinsics(np.array(vals).reshape(3, 3))
    except ParameterError as e:
        raise MalformedFileError(path, str(e)) from e


def write_intrinsics(path, K: CameraIntrinsics) -> None:
    rows = [" ".join(repr(float(v)) for v in row) for row in K.K]
    Path(path).write_text("\n".join(rows) + "\n")


def read_plane_classes(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in PLANE_CLASSES:
            raise MalformedFileError(path, f"line {n}: expected '<label> <{'|'.join(PLANE_CLASSES)}>'")
        try:
            out[int(parts[0])] = parts[1]
        except ValueError:
            raise MalformedFileError(path, f"line {n}: label must be an integer") from None
    return out


def write_plane_classes(path, classes: Mapping[int, str]) -> None:
    Path(path).write_text("".join(f"{k} {v}\n" for k, v in sorted(classes.items())))
