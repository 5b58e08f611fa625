"""Depth-space and point-cloud evaluation metrics."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import CameraIntrinsics, DepthMap, PointCloud, load_depth_png, read_intrinsics

log = logging.getLogger(__name__)

DELTA_THRESHOLDS = (1.25, 1.25**2, 1.25**3)
F1_THRESHOLDS = (0.02, 0.03, 0.04)
CD_REPORT_SCALE = 1e4  # CD is also reported in units of 1e-4


class UndefinedMetricError(ValueError):
    """A metric has no valid pixels or points to average over."""


def _pair(pred: DepthMap, gt: DepthMap):
    p = np.asarray(pred.data, dtype=np.float64)
    g = np.asarray(gt.data, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    valid = g > 0
    if not valid.any():
        raise UndefinedMetricError("ground truth has no valid pixels")
    return p[valid], g[valid]


def rmse(pred: DepthMap, gt: DepthMap) -> float:
    p, g = _pair(pred, gt)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def rel(pred: DepthMap, gt: DepthMap) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean(np.abs(p - g) / g))


def delta(pred: DepthMap, gt: DepthMap, th: float) -> float:
    """Percentage of valid pixels with ``max(pred/gt, gt/pred) < th``."""
    if th <= 1:
        raise ValueError("threshold must exceed 1")
    p, g = _pair(pred, gt)
    with np.errstate(divide="ignore"):
        ratio = np.maximum(p / g, g / p)  # pred == 0 gives inf, never inside
    return 100.0 * int(np.count_nonzero(ratio < th)) / ratio.size


def depth_to_pointcloud(d: DepthMap, K: CameraIntrinsics) -> PointCloud:
    """One point ``d * K^-1 [u, v, 1]`` per valid pixel, u = column, v = row."""
    depth = np.asarray(d.data, dtype=np.float64)
    v, u = np.nonzero(depth > 0)
    z = depth[v, u]
    pix = np.stack([u, v, np.ones_like(u)], axis=0).astype(np.float64)
    rays = np.linalg.solve(K.K, pix)
    return PointCloud((rays * z).T)


def _nn_dist(src: PointCloud, dst: PointCloud) -> np.ndarray:
    """Exact Euclidean distance from each ``src`` point to its nearest ``dst`` point."""
    if len(src) == 0 or len(dst) == 0:
        raise UndefinedMetricError("empty point cloud")
    d, _ = cKDTree(dst.points).query(src.points, k=1)
    return d


def chamfer(A: PointCloud, B: PointCloud) -> float:
    da = _nn_dist(A, B)
    db = _nn_dist(B, A)
    return float(np.mean(da**2) + np.mean(db**2))


def f1_score(pred: PointCloud, gt: PointCloud, thresholds=F1_THRESHOLDS) -> tuple:
    """Per-threshold precision/recall and the threshold-averaged F1."""
    d_pred = _nn_dist(pred, gt)
    d_gt = _nn_dist(gt, pred)
    prec, recall, f1s = {}, {}, []
    for t in thresholds:
        p = float(np.mean(d_pred < t))
        r = float(np.mean(d_gt < t))
        prec[t], recall[t] = p, r
        f1s.append(0.0 if p == 0 or r == 0 else 2.0 / (1.0 / p + 1.0 / r))
    return prec, recall, float(np.mean(f1s))


@dataclass
class MetricsReport:
    rmse: float
    rel: float
    delta: dict  # threshold -> percentage
    cd: float  # squared meters
    f1: float
    precision: dict = field(default_factory=dict)
    recall: dict = field(default_factory=dict)
    n_valid: int = 0
    n_samples: int = 1

    @property
    def cd_1e4(self) -> float:
        return self.cd * CD_REPORT_SCALE

    def to_json(self) -> dict:
        d = asdict(self)
        d["cd_1e-4"] = self.cd_1e4
        for key in ("delta", "precision", "recall"):
            d[key] = {f"{k:.6g}": v for k, v in d[key].items()}
        return d


def evaluate_sample(pred: DepthMap, gt: DepthMap, K: CameraIntrinsics) -> MetricsReport:
    p_cloud = depth_to_pointcloud(pred, K)
    g_cloud = depth_to_pointcloud(gt, K)
    prec, recall, f1 = f1_score(p_cloud, g_cloud)
    return MetricsReport(
        rmse=rmse(pred, gt),
        rel=rel(pred, gt),
        delta={th: delta(pred, gt, th) for th in DELTA_THRESHOLDS},
        cd=chamfer(p_cloud, g_cloud),
        f1=f1,
        precision=prec,
        recall=recall,
        n_valid=int(np.count_nonzero(np.asarray(gt.data) > 0)),
    )


def aggregate(reports) -> MetricsReport:
    """Unweighted mean of per-sample reports."""
    reports = list(reports)
    if not reports:
        raise UndefinedMetricError("no samples to aggregate")
    mean = lambda xs: float(np.mean(xs))  # noqa: E731
    return MetricsReport(
        rmse=mean([r.rmse for r in reports]),
        rel=mean([r.rel for r in reports]),
        delta={k: mean([r.delta[k] for r in reports]) for k in reports[0].delta},
        cd=mean([r.cd for r in reports]),
        f1=mean([r.f1 for r in reports]),
        precision={k: mean([r.precision[k] for r in reports]) for k in reports[0].precision},
        recall={k: mean([r.recall[k] for r in reports]) for k in reports[0].recall},
        n_valid=int(sum(r.n_valid for r in reports)),
        n_samples=len(reports),
    )


def evaluate_many(pairs, K: CameraIntrinsics) -> tuple:
    """Evaluate ``(id, pred, gt)`` triples; samples whose metrics are undefined are skipped."""
    per_sample = {}
    for sid, pred, gt in pairs:
        try:
            per_sample[sid] = evaluate_sample(pred, gt, K)
        except UndefinedMetricError as e:
            log.warning("skipping %s: %s", sid, e)
    return aggregate(per_sample.values()), per_sample


def evaluate_dirs(pred_dir, gt_dir, intrinsics_file, out=None) -> dict:
    """Compare same-named 16-bit depth PNGs in two directories."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    K = read_intrinsics(intrinsics_file)
    names = sorted(p.name for p in pred_dir.glob("*.png") if (gt_dir / p.name).exists())
    pairs = ((Path(n).stem, load_depth_png(pred_dir / n), load_depth_png(gt_dir / n)) for n in names)
    summary, per_sample = evaluate_many(pairs, K)
    doc = {"summary": summary.to_json(), "samples": {k: v.to_json() for k, v in per_sample.items()}}
    if out is not None:
        Path(out).write_text(json.dumps(doc, indent=2, sort_keys=True))
    return doc
