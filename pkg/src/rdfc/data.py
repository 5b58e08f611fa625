"""Dataset ingestion, preprocessing, sparse sampling and synthetic rooms."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import (
    CameraIntrinsics,
    DepthMap,
    MalformedFileError,
    NormalMap,
    ParameterError,
    RgbImage,
    SampleRecord,
    SegMask,
    load_depth_png,
    load_rgb_png,
    load_seg_png,
    read_intrinsics,
    read_plane_classes,
    save_depth_png,
    save_rgb_png,
    save_seg_png,
    write_intrinsics,
    write_plane_classes,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "test")
CHANNEL_DIRS = ("rgb", "raw_depth", "gt_depth", "seg")


# --- dataset layout ----------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    id: str
    paths: dict  # channel dir name -> Path, only for files that exist


@dataclass
class DatasetManifest:
    root: Path
    split: str
    entries: list = field(default_factory=list)
    intrinsics: Optional[CameraIntrinsics] = None
    plane_classes: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self):
        return [e.id for e in self.entries]

    def load(self, i: int) -> SampleRecord:
        e = self.entries[i]
        rgb = load_rgb_png(e.paths["rgb"])
        raw = load_depth_png(e.paths["raw_depth"])
        gt = load_depth_png(e.paths["gt_depth"]) if "gt_depth" in e.paths else None
        seg = load_seg_png(e.paths["seg"], self.plane_classes) if "seg" in e.paths else None
        normals = normals_from_depth(gt, self.intrinsics) if gt is not None else None
        return SampleRecord(e.id, rgb, raw, self.intrinsics, gt_depth=gt, seg=seg, gt_normals=normals)

    def __iter__(self) -> Iterator[SampleRecord]:
        for i in range(len(self)):
            yield self.load(i)

    def records(self) -> list:
        return list(self)


def _image_size(path) -> tuple:
    try:
        with Image.open(path) as im:
            return im.size
    except (OSError, ValueError) as e:
        raise MalformedFileError(path, f"unreadable image ({e})") from e


def load_dataset(root, split: str = "train") -> DatasetManifest:
    """Index ``<root>/<split>/{rgb,raw_depth,gt_depth,seg}/<id>.png``.

    Only headers are read here; pixel data is decoded by ``DatasetManifest.load``.
    rgb and raw_depth are required per sample, gt_depth and seg are optional.
    """
    root = Path(root)
    if split not in SPLITS:
        raise ParameterError(f"split must be one of {SPLITS}")
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    base = root / split
    manifest = DatasetManifest(root, split)
    rgb_dir = base / "rgb"
    ids = sorted(p.stem for p in rgb_dir.glob("*.png")) if rgb_dir.is_dir() else []
    if not ids:
        return manifest

    k_path = root / "intrinsics.txt"
    if not k_path.exists():
        raise MalformedFileError(k_path, "missing intrinsics file")
    manifest.intrinsics = read_intrinsics(k_path)
    pc_path = root / "plane_classes.txt"
    if pc_path.exists():
        manifest.plane_classes = read_plane_classes(pc_path)

    for sid in ids:
        paths = {}
        for ch in CHANNEL_DIRS:
            p = base / ch / f"{sid}.png"
            if p.exists():
                paths[ch] = p
        if "raw_depth" not in paths:
            raise MalformedFileError(base / "raw_depth" / f"{sid}.png", "missing raw depth")
        if "seg" in paths and not manifest.plane_classes:
            raise MalformedFileError(pc_path, "segmentation present but plane_classes.txt missing")
        size = _image_size(paths["rgb"])
        for ch, p in paths.items():
            other = _image_size(p)
            if other != size:
                raise MalformedFileError(p, f"size {other} does not match rgb size {size}")
        manifest.entries.append(ManifestEntry(sid, paths))
    return manifest


def write_dataset(root, records: Sequence[SampleRecord], split: str = "train") -> None:
    """Write records in the on-disk layout. All records must share intrinsics."""
    root = Path(root)
    base = root / split
    for ch in CHANNEL_DIRS:
        (base / ch).mkdir(parents=True, exist_ok=True)
    classes = {}
    for r in records:
        save_rgb_png(base / "rgb" / f"{r.id}.png", r.rgb)
        save_depth_png(base / "raw_depth" / f"{r.id}.png", r.raw_depth)
        if r.gt_depth is not None:
            save_depth_png(base / "gt_depth" / f"{r.id}.png", r.gt_depth)
        if r.seg is not None:
            save_seg_png(base / "seg" / f"{r.id}.png", r.seg)
            classes.update(r.seg.plane_classes)
    if records:
        write_intrinsics(root / "intrinsics.txt", records[0].intrinsics)
    if classes:
        write_plane_classes(root / "plane_classes.txt", classes)


# --- preprocessing -----------------------------------------------------------

def _resize_channel(a: np.ndarray, size, resample) -> np.ndarray:
    return np.asarray(Image.fromarray(np.ascontiguousarray(a, dtype=np.float32), mode="F").resize(size, resample))


def _resize(a: np.ndarray, size, resample) -> np.ndarray:
    if a.ndim == 2:
        return _resize_channel(a, size, resample)
    return np.stack([_resize_channel(a[..., c], size, resample) for c in range(a.shape[2])], axis=-1)


def crop_window(shape_hw, crop, mode: str, seed: int = 0) -> tuple:
    """Top-left corner ``(x0, y0)`` of a ``crop=(W, H)`` window in an image of ``shape_hw``."""
    h, w = shape_hw
    cw, ch = crop
    if cw > w or ch > h:
        raise ParameterError(f"crop {crop} larger than image {(w, h)}")
    if mode == "center":
        return (w - cw) // 2, (h - ch) // 2
    if mode == "random":
        rng = np.random.default_rng(seed)
        return int(rng.integers(0, w - cw + 1)), int(rng.integers(0, h - ch + 1))
    raise ParameterError(f"unknown crop mode {mode!r}")


def preprocess(s: SampleRecord, resize, crop, mode: str = "center", seed: int = 0) -> SampleRecord:
    """Resize every channel to ``resize=(W, H)`` then crop to ``crop=(W, H)``.

    RGB is resampled bilinearly; depth, labels and normals use nearest
    neighbour so no value is interpolated across a hole.
    """
    rw, rh = resize
    cw, ch = crop
    if cw > rw or ch > rh:
        raise ParameterError(f"crop {crop} exceeds resize {resize}")
    h, w = s.shape
    K = s.intrinsics
    rgb = s.rgb.data
    raw = s.raw_depth.data
    gt = s.gt_depth.data if s.gt_depth is not None else None
    seg = s.seg.data if s.seg is not None else None
    nrm = s.gt_normals.data if s.gt_normals is not None else None

    if (rw, rh) != (w, h):
        rgb = np.clip(_resize(rgb, (rw, rh), Image.BILINEAR), 0.0, 1.0)
        raw = _resize(raw, (rw, rh), Image.NEAREST)
        gt = _resize(gt, (rw, rh), Image.NEAREST) if gt is not None else None
        if seg is not None:
            seg = _resize(seg.astype(np.float32), (rw, rh), Image.NEAREST).astype(np.int32)
        nrm = _resize(nrm, (rw, rh), Image.NEAREST) if nrm is not None else None
        K = K.scaled(rw / w, rh / h)

    x0, y0 = crop_window((rh, rw), crop, mode, seed)
    win = (slice(y0, y0 + ch), slice(x0, x0 + cw))
    return SampleRecord(
        s.id,
        RgbImage(rgb[win]),
        DepthMap(raw[win]),
        K.cropped(x0, y0),
        gt_depth=DepthMap(gt[win]) if gt is not None else None,
        seg=SegMask(seg[win], s.seg.plane_classes) if seg is not None else None,
        gt_normals=NormalMap(nrm[win]) if nrm is not None else None,
        extras=dict(s.extras),
    )


def sample_sparse(d: DepthMap, n: int, seed: int) -> DepthMap:
    """Keep ``min(n, #valid)`` valid pixels drawn uniformly without replacement."""
    if n < 0:
        raise ParameterError("n must be non-negative")
    src = np.asarray(d.data)
    idx = np.flatnonzero(src > 0)
    if n < idx.size:
        idx = np.random.default_rng(seed).choice(idx, size=n, replace=False)
    out = np.zeros_like(src)
    out.flat[idx] = src.flat[idx]
    return DepthMap(out)


# --- geometry helpers --------------------------------------------------------

def camera_to_gravity(v: np.ndarray) -> np.ndarray:
    """Optical frame (x right, y down, z forward) to gravity frame (x right, y forward, z up).

    Valid for a camera with zero roll and pitch.
    """
    v = np.asarray(v)
    return np.stack([v[..., 0], v[..., 2], -v[..., 1]], axis=-1)


def backproject_grid(depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """H x W x 3 optical-frame points for every pixel, holes included (z = 0)."""
    h, w = depth.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    z = depth.astype(np.float64)
    x = (u - K.cx) / K.fx * z
    y = (v - K.cy) / K.fy * z
    return np.stack([x, y, z], axis=-1)


def normals_from_depth(d: DepthMap, K: CameraIntrinsics, window: int = 5,
                       max_residual: float = 0.01) -> NormalMap:
    """Least-squares plane normals over a ``window`` x ``window`` neighbourhood.

    Normals point toward the camera and are returned in the gravity frame.
    Pixels whose window holds a hole, or whose RMS point-to-plane residual
    exceeds ``max_residual`` meters, get the zero vector (undefined).
    """
    depth = np.asarray(d.data, dtype=np.float64)
    P = backproject_grid(depth, K)
    valid = (depth > 0).astype(np.float64)
    n_win = window * window
    box = lambda a: ndimage.uniform_filter(a, size=window, mode="constant") * n_win  # noqa: E731

    count = box(valid)
    mean = np.stack([box(P[..., i]) for i in range(3)], axis=-1) / np.maximum(count, 1)[..., None]
    cov = np.empty(depth.shape + (3, 3))
    for i in range(3):
        for j in range(i, 3):
            c = box(P[..., i] * P[..., j]) / np.maximum(count, 1) - mean[..., i] * mean[..., j]
            cov[..., i, j] = cov[..., j, i] = c
    evals, evecs = np.linalg.eigh(cov)
    n = evecs[..., :, 0]
    resid = np.sqrt(np.clip(evals[..., 0], 0.0, None))
    flip = np.sum(n * P, axis=-1) > 0
    n[flip] *= -1
    ok = (count > n_win - 0.5) & (resid <= max_residual) & (depth > 0)
    n = camera_to_gravity(n)
    n[~ok] = 0.0
    return NormalMap(n.astype(np.float32))


# --- synthetic Manhattan rooms -----------------------------------------------

SYNTH_PLANE_CLASSES = {1: "floor", 2: "ceiling", 3: "wall", 4: "other", 5: "other", 6: "other"}
SYNTH_LABELS = {"floor": 1, "ceiling": 2, "wall": 3, "object": 4, "reflective": 5, "dark": 6}
REFLECTIVE_LABELS = (5,)


@dataclass(frozen=True)
class SynthBox:
    lo: tuple
    hi: tuple
    color: tuple = (0.55, 0.35, 0.2)
    kind: str = "object"  # object | reflective | dark


@dataclass(frozen=True)
class SynthSceneSpec:
    room: tuple = (5.0, 5.0, 2.8)  # x, y, z extents in meters, z up
    camera: tuple = (2.5, 1.0, 1.4)  # world position
    yaw: float = 0.0  # radians about +z; 0 looks along +y
    image_size: tuple = (64, 48)  # (W, H)
    focal_scale: float = 0.8  # fx = fy = focal_scale * W
    boxes: tuple = ()
    texture_amplitude: float = 0.03
    texture_seed: Optional[int] = None
    wall_colors: tuple = ((0.75, 0.7, 0.6), (0.6, 0.68, 0.75), (0.7, 0.62, 0.68), (0.62, 0.72, 0.6))
    floor_color: tuple = (0.45, 0.33, 0.25)
    ceiling_color: tuple = (0.9, 0.9, 0.88)

    def intrinsics(self) -> CameraIntrinsics:
        w, h = self.image_size
        f = self.focal_scale * w
        return CameraIntrinsics.from_params(f, f, (w - 1) / 2.0, (h - 1) / 2.0)


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def render_scene(spec: SynthSceneSpec) -> dict:
    """Ray-cast the room; returns depth, gravity-frame normals, labels, face ids, base colors."""
    L = np.asarray(spec.room, dtype=np.float64)
    o = np.asarray(spec.camera, dtype=np.float64)
    if np.any(L <= 0) or np.any(np.asarray(spec.image_size) < 1):
        raise ParameterError("room dimensions and image size must be positive")
    if np.any(o <= 0) or np.any(o >= L):
        raise ParameterError(f"camera {tuple(o)} is not strictly inside the room {tuple(L)}")
    for b in spec.boxes:
        if np.all(o >= np.asarray(b.lo)) and np.all(o <= np.asarray(b.hi)):
            raise ParameterError("camera lies inside an object box")

    w, h = spec.image_size
    K = spec.intrinsics()
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = (u - K.cx) / K.fx
    dy = (v - K.cy) / K.fy
    R = _yaw_matrix(spec.yaw)
    dir_g = np.stack([dx, np.ones_like(dx), -dy], axis=-1)
    dir_w = dir_g @ R.T

    best_t = np.full((h, w), np.inf)
    normal_w = np.zeros((h, w, 3))
    label = np.zeros((h, w), dtype=np.int32)
    face = np.full((h, w), -1, dtype=np.int32)
    color = np.zeros((h, w, 3))

    room_faces = [
        (0, 0.0, +1, "wall", spec.wall_colors[0]),
        (0, L[0], -1, "wall", spec.wall_colors[1]),
        (1, 0.0, +1, "wall", spec.wall_colors[2]),
        (1, L[1], -1, "wall", spec.wall_colors[3]),
        (2, 0.0, +1, "floor", spec.floor_color),
        (2, L[2], -1, "ceiling", spec.ceiling_color),
    ]
    with np.errstate(divide="ignore", invalid="ignore"):
        for fid, (axis, val, sign, kind, col) in enumerate(room_faces):
            t = (val - o[axis]) / dir_w[..., axis]
            hit = (t > 0) & (t < best_t)
            best_t[hit] = t[hit]
            nv = np.zeros(3)
            nv[axis] = sign
            normal_w[hit] = nv
            label[hit] = SYNTH_LABELS[kind]
            face[hit] = fid
            color[hit] = col

        for bi, b in enumerate(spec.boxes):
            lo = np.asarray(b.lo, dtype=np.float64)
            hi = np.asarray(b.hi, dtype=np.float64)
            t1 = (lo - o) / dir_w
            t2 = (hi - o) / dir_w
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            tmin = np.where(np.isnan(tmin), -np.inf, tmin)
            tmax = np.where(np.isnan(tmax), np.inf, tmax)
            t_near = tmin.max(axis=-1)
            t_far = tmax.min(axis=-1)
            axis = tmin.argmax(axis=-1)
            hit = (t_near <= t_far) & (t_near > 0) & (t_near < best_t)
            best_t[hit] = t_near[hit]
            sgn = -np.sign(np.take_along_axis(dir_w, axis[..., None], axis=-1)[..., 0])
            nv = np.zeros((h, w, 3))
            np.put_along_axis(nv, axis[..., None], sgn[..., None], axis=-1)
            normal_w[hit] = nv[hit]
            label[hit] = SYNTH_LABELS[b.kind]
            face[hit] = 6 + 6 * bi + axis[hit] * 2 + (sgn[hit] > 0)
            color[hit] = b.color

    # ray parameter equals optical depth because the forward component of dir is 1
    depth = best_t
    normals = normal_w @ R  # world -> gravity-aligned camera frame, i.e. R^T n
    return {"depth": depth, "normals": normals, "label": label, "face": face, "color": color}


def synth_scene(spec: SynthSceneSpec, seed: int = 0) -> SampleRecord:
    """Render a synthetic room with analytic depth, normals and plane labels.

    ``raw_depth`` equals ``gt_depth``; corrupting it is the pseudo module's job.
    """
    r = render_scene(spec)
    tex_seed = spec.texture_seed if spec.texture_seed is not None else seed
    rng = np.random.default_rng(tex_seed)
    noise = rng.uniform(-1.0, 1.0, size=r["color"].shape) * spec.texture_amplitude
    flat = (r["label"] == SYNTH_LABELS["dark"])[..., None]
    rgb = np.clip(r["color"] + np.where(flat, 0.0, noise), 0.0, 1.0)
    # round-trip through 8 bits so in-memory and on-disk scenes agree exactly
    rgb = np.rint(rgb * 255.0) / 255.0
    depth = DepthMap(r["depth"].astype(np.float32))
    return SampleRecord(
        id=f"synth_{seed:06d}",
        rgb=RgbImage(rgb.astype(np.float32)),
        raw_depth=depth,
        intrinsics=spec.intrinsics(),
        gt_depth=depth,
        seg=SegMask(r["label"], SYNTH_PLANE_CLASSES),
        gt_normals=NormalMap(r["normals"].astype(np.float32)),
        extras={"face": r["face"]},
    )


def random_scene_spec(seed: int, image_size=(64, 48), max_boxes: int = 3) -> SynthSceneSpec:
    """Draw a gravity-aligned room with a few floor-standing boxes."""
    rng = np.random.default_rng(seed)
    room = (rng.uniform(3.5, 6.5), rng.uniform(3.5, 6.5), rng.uniform(2.5, 3.2))
    cam = (rng.uniform(0.8, room[0] - 0.8), rng.uniform(0.8, room[1] - 0.8), rng.uniform(1.1, 1.6))
    yaw = rng.uniform(-np.pi, np.pi)
    boxes = []
    kinds = ("object", "reflective", "dark")
    for _ in range(int(rng.integers(1, max_boxes + 1))):
        for _attempt in range(20):
            sx, sy = rng.uniform(0.4, 1.2, size=2)
            sz = rng.uniform(0.4, 1.8)
            x0 = rng.uniform(0.05, room[0] - sx - 0.05)
            y0 = rng.uniform(0.05, room[1] - sy - 0.05)
            lo, hi = (x0, y0, 0.0), (x0 + sx, y0 + sy, sz)
            margin = 0.3
            if not (lo[0] - margin <= cam[0] <= hi[0] + margin and lo[1] - margin <= cam[1] <= hi[1] + margin):
                kind = kinds[int(rng.integers(0, 3))]
                col = {
                    "object": tuple(rng.uniform(0.2, 0.8, size=3)),
                    "reflective": (0.98, 0.98, 0.98),
                    "dark": (0.0, 0.0, 0.0),
                }[kind]
                boxes.append(SynthBox(lo, hi, col, kind))
                break
    return SynthSceneSpec(room=room, camera=cam, yaw=yaw, image_size=tuple(image_size), boxes=tuple(boxes))


def synth_dataset(n: int, seed: int = 0, image_size=(64, 48)) -> list:
    out = []
    for i in range(n):
        s = seed * 100003 + i
        rec = synth_scene(random_scene_spec(s, image_size), seed=s)
        out.append(replace(rec, id=f"scene_{i:05d}"))
    return out
