"""Cross-view consistency metrics for generated multi-view videos.

``matched_pixel_rate`` scores colour agreement at known correspondences;
``pose_accuracy`` recovers relative camera poses from matched pixels with the
normalised eight-point algorithm and compares them with the conditioning rig.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import geometry as geo


class EmptyCorrespondenceError(ValueError):
    pass


class PoseEstimationError(ValueError):
    pass


def _sample(video_frame: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Colours (N, c) at the nearest pixel of each (u, v)."""
    c, h, w = video_frame.shape
    u = np.clip(np.rint(uv[:, 0]).astype(int), 0, w - 1)
    v = np.clip(np.rint(uv[:, 1]).astype(int), 0, h - 1)
    return video_frame[:, v, u].T


def matched_pixel_rate(videos: np.ndarray, correspondences: np.ndarray, tol: float = 0.1) -> float:
    """Fraction of co-visible correspondence pairs whose colours agree within ``tol`` (max over channels).

    ``videos`` is (n, f, c, h, w); ``correspondences`` is (f, M, n, 3). The
    rate is computed per frame over every view pair, then averaged over frames.
    """
    n, f = videos.shape[:2]
    rates = []
    for k in range(f):
        corr = correspondences[k]
        hits = total = 0
        for i, j in itertools.combinations(range(n), 2):
            both = (corr[:, i, 2] > 0.5) & (corr[:, j, 2] > 0.5)
            if not both.any():
                continue
            ci = _sample(videos[i, k], corr[both, i, :2])
            cj = _sample(videos[j, k], corr[both, j, :2])
            hits += int(np.sum(np.max(np.abs(ci - cj), axis=1) <= tol))
            total += int(both.sum())
        if total:
            rates.append(hits / total)
    if not rates:
        raise EmptyCorrespondenceError("no co-visible correspondences")
    return float(np.mean(rates))


def noise_baseline_rate(correspondences: np.ndarray, shape, tol: float = 0.1, seed: int = 0) -> float:
    """Rate obtained by the same metric when every view is independent uniform noise."""
    rng = np.random.default_rng(seed)
    return matched_pixel_rate(rng.random(shape), correspondences, tol)


def temporal_smoothness(video: np.ndarray) -> float:
    """Mean squared difference of consecutive frames; frames on axis -4."""
    video = np.asarray(video, dtype=np.float64)
    if video.shape[-4] < 2:
        raise ValueError("need at least two frames")
    d = np.diff(video, axis=-4)
    return float(np.mean(d * d))


# ---------------------------------------------------------------------------
# relative pose


def _hartley(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    xh = np.hstack([x, np.ones((len(x), 1))]) @ T.T
    return xh, T


def triangulate(P1: np.ndarray, P2: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Linear (DLT) triangulation of normalised image points; returns (N, 3)."""
    out = np.empty((len(x1), 3))
    for k, (a, b) in enumerate(zip(x1, x2)):
        A = np.stack([a[0] * P1[2] - P1[0], a[1] * P1[2] - P1[1], b[0] * P2[2] - P2[0], b[1] * P2[2] - P2[1]])
        X = np.linalg.svd(A)[2][-1]
        out[k] = X[:3] / X[3]
    return out


def eight_point_pose(pts_a, pts_b, K: geo.CameraIntrinsics, degeneracy_tol: float = 1e-8):
    """Relative pose (R, unit t) mapping camera-a coordinates into camera b.

    Normalised eight-point on calibrated coordinates, projection to the
    essential manifold, and cheirality voting over the four decompositions.
    """
    pts_a = np.asarray(pts_a, dtype=np.float64)
    pts_b = np.asarray(pts_b, dtype=np.float64)
    if len(pts_a) < 8 or pts_a.shape != pts_b.shape:
        raise PoseEstimationError(f"need >= 8 matched pairs, got {len(pts_a)}")
    Kinv = np.linalg.inv(K.matrix())
    na = (np.hstack([pts_a, np.ones((len(pts_a), 1))]) @ Kinv.T)[:, :2]
    nb = (np.hstack([pts_b, np.ones((len(pts_b), 1))]) @ Kinv.T)[:, :2]
    xa, Ta = _hartley(na)
    xb, Tb = _hartley(nb)
    A = np.stack([xb[:, 0] * xa[:, 0], xb[:, 0] * xa[:, 1], xb[:, 0],
                  xb[:, 1] * xa[:, 0], xb[:, 1] * xa[:, 1], xb[:, 1],
                  xa[:, 0], xa[:, 1], np.ones(len(xa))], axis=1)
    _, S, Vt = np.linalg.svd(A)
    if len(S) < 9 or S[7] < degeneracy_tol * S[0]:
        raise PoseEstimationError("degenerate configuration (zero baseline, pure rotation or planar points)")
    E = Tb.T @ Vt[-1].reshape(3, 3) @ Ta
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    best, best_count = None, -1
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for t in (U[:, 2], -U[:, 2]):
            P2 = np.hstack([R, t[:, None]])
            X = triangulate(P1, P2, na, nb)
            count = int(np.sum((X[:, 2] > 0) & ((X @ R.T + t)[:, 2] > 0)))
            if count > best_count:
                best, best_count = (R, t), count
    if best_count <= 0:
        raise PoseEstimationError("no decomposition puts points in front of both cameras")
    R, t = best
    return geo.as_rotation(R), t / np.linalg.norm(t)


Matcher = Callable[[np.ndarray, int, int, int], tuple[np.ndarray, np.ndarray]]


class GroundTruthMatcher:
    """Correspondences straight from the renderer, optionally kept only where colours agree."""

    def __init__(self, correspondences: np.ndarray, tol: Optional[float] = None):
        self.corr = correspondences
        self.tol = tol

    def __call__(self, videos, frame, i, j):
        c = self.corr[frame]
        both = (c[:, i, 2] > 0.5) & (c[:, j, 2] > 0.5)
        a, b = c[both, i, :2], c[both, j, :2]
        if self.tol is not None and len(a):
            keep = np.max(np.abs(_sample(videos[i, frame], a) - _sample(videos[j, frame], b)), axis=1) <= self.tol
            a, b = a[keep], b[keep]
        return a, b


class BlockMatcher:
    """Content-only matcher: exhaustive normalised cross-correlation with a mutual-best check."""

    def __init__(self, radius: int = 2, stride: int = 2, min_texture: float = 0.02, min_score: float = 0.8):
        self.radius, self.stride = radius, stride
        self.min_texture, self.min_score = min_texture, min_score

    def _descriptors(self, img: np.ndarray):
        r = self.radius
        c, h, w = img.shape
        pad = np.pad(img, ((0, 0), (r, r), (r, r)), mode="edge")
        win = np.lib.stride_tricks.sliding_window_view(pad, (2 * r + 1, 2 * r + 1), axis=(1, 2))
        desc = win.transpose(1, 2, 0, 3, 4).reshape(h * w, -1)
        desc = desc - desc.mean(axis=1, keepdims=True)
        norm = np.linalg.norm(desc, axis=1, keepdims=True)
        std = norm[:, 0] / math.sqrt(desc.shape[1])
        return desc / np.maximum(norm, 1e-12), std

    def __call__(self, videos, frame, i, j):
        img_a, img_b = videos[i, frame], videos[j, frame]
        c, h, w = img_a.shape
        da, sa = self._descriptors(img_a)
        db, sb = self._descriptors(img_b)
        v, u = np.meshgrid(np.arange(0, h, self.stride), np.arange(0, w, self.stride), indexing="ij")
        q = (v * w + u).ravel()
        q = q[sa[q] > self.min_texture]
        if not len(q):
            return np.zeros((0, 2)), np.zeros((0, 2))
        scores = da[q] @ db.T
        scores[:, sb <= self.min_texture] = -np.inf
        best_b = np.argmax(scores, axis=1)
        back = np.argmax(db[best_b] @ da.T, axis=1)
        ok = (back == q) & (scores[np.arange(len(q)), best_b] >= self.min_score)
        qa, qb = q[ok], best_b[ok]
        to_uv = lambda idx: np.stack([idx % w, idx // w], axis=1).astype(np.float64)
        return to_uv(qa), to_uv(qb)


@dataclass
class PoseAccuracy:
    rot_err_deg: float
    trans_err: float
    estimates: int
    failures: int


def pose_accuracy(videos: np.ndarray, rig_gt: geo.CameraRig, matcher: Matcher) -> PoseAccuracy:
    """Average RotErr / TransErr over frames and view pairs against the ground-truth relative poses."""
    n, f = videos.shape[:2]
    if n < 2:
        raise ValueError("pose accuracy needs at least two views")
    rots, trans, fails = [], [], 0
    for k in range(f):
        for i, j in itertools.combinations(range(n), 2):
            a, b = matcher(videos, k, i, j)
            try:
                R, t = eight_point_pose(a, b, rig_gt.intrinsics)
            except PoseEstimationError:
                fails += 1
                continue
            gt = geo.relative_pose(rig_gt[i], rig_gt[j])
            rots.append(geo.rot_err(R, gt.R))
            trans.append(geo.trans_err(t, gt.t))
    nan = float("nan")
    return PoseAccuracy(float(np.mean(rots)) if rots else nan, float(np.mean(trans)) if trans else nan,
                        len(rots), fails)


# ---------------------------------------------------------------------------
# reports


@dataclass
class SceneReport:
    scene_id: str
    matched_pixel_rate: float
    rot_err_deg: float
    trans_err: float
    temporal_smoothness: float
    pose_failures: int


@dataclass
class EvalReport:
    matched_pixel_rate: float
    rot_err_deg: float
    trans_err: float
    temporal_smoothness: float
    pose_failures: int
    scenes: list[SceneReport] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d["scenes"] = [SceneReport(**s) for s in d["scenes"]]
        return cls(**d)

    def table(self) -> str:
        head = f"{'scene':<14}{'mat.pix':>9}{'rot(deg)':>10}{'trans':>8}{'tsmooth':>10}{'fail':>6}"
        rows = [head, "-" * len(head)]
        for s in self.scenes:
            rows.append(f"{s.scene_id:<14}{s.matched_pixel_rate:>9.4f}{s.rot_err_deg:>10.4f}"
                        f"{s.trans_err:>8.4f}{s.temporal_smoothness:>10.5f}{s.pose_failures:>6d}")
        rows.append("-" * len(head))
        rows.append(f"{'mean':<14}{self.matched_pixel_rate:>9.4f}{self.rot_err_deg:>10.4f}"
                    f"{self.trans_err:>8.4f}{self.temporal_smoothness:>10.5f}{self.pose_failures:>6d}")
        return "\n".join(rows)


def evaluate_scene(scene_id: str, videos: np.ndarray, rig: geo.CameraRig, correspondences: np.ndarray,
                   tol: float = 0.1, matcher: Optional[Matcher] = None) -> SceneReport:
    matcher = matcher or GroundTruthMatcher(correspondences)
    pose = pose_accuracy(videos, rig, matcher)
    return SceneReport(scene_id, matched_pixel_rate(videos, correspondences, tol), pose.rot_err_deg,
                       pose.trans_err, temporal_smoothness(videos) if videos.shape[1] > 1 else 0.0, pose.failures)


def summarize(scenes: list[SceneReport]) -> EvalReport:
    if not scenes:
        raise ValueError("no scenes evaluated")
    def mean(key):
        vals = np.array([getattr(s, key) for s in scenes], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        return float(vals.mean()) if len(vals) else float("nan")
    return EvalReport(mean("matched_pixel_rate"), mean("rot_err_deg"), mean("trans_err"),
                      mean("temporal_smoothness"), int(sum(s.pose_failures for s in scenes)), scenes)
