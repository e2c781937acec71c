"""Static-camera detection by tracking a grid of anchors with block matching."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class StaticResult:
    is_static: bool
    max_disp_px: float
    inconclusive: bool = False
    static_fraction: float = 0.0


def _offsets(window: int) -> np.ndarray:
    r = np.arange(-window, window + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    off = np.stack([dy.ravel(), dx.ravel()], axis=1)
    # ties resolve towards the smallest motion
    return off[np.argsort(np.hypot(off[:, 0], off[:, 1]), kind="stable")]


def track_anchors(gray: np.ndarray, anchors: np.ndarray, window: int = 8, radius: int = 3,
                  stay_ratio: float = 1.5, clip: float = 0.1) -> np.ndarray:
    """Follow each anchor through the video; returns positions (f, A, 2) as (row, col).

    Each frame is searched around the previous position for the anchor's
    frame-0 template. Keeping the first template stops a passing subject from
    being absorbed into it and dragging the anchor along. A move must beat
    staying put by ``stay_ratio`` in SSD, so near-ambiguous matches (flat or
    ramp-like texture, partial occlusion) do not register as motion.
    Per-pixel differences are truncated at ``clip`` so a few occluded pixels
    cannot outweigh the rest of the window.
    """
    f, h, w = gray.shape
    pad = window + radius
    padded = np.pad(gray, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    off = _offsets(window)
    size = 2 * radius + 1
    pos = np.zeros((f, len(anchors), 2), dtype=np.int64)
    pos[0] = anchors
    for k in range(1, f):
        prev = pos[k - 1] + pad
        wins = sliding_window_view(padded[k], (size, size))
        for a, (r, c) in enumerate(prev):
            r0, c0 = anchors[a] + pad
            tmpl = padded[0, r0 - radius:r0 + radius + 1, c0 - radius:c0 + radius + 1]
            cand = np.clip(np.stack([r + off[:, 0], c + off[:, 1]], axis=1) - radius, 0,
                           [wins.shape[0] - 1, wins.shape[1] - 1])
            ssd = np.minimum((wins[cand[:, 0], cand[:, 1]] - tmpl) ** 2, clip * clip).sum(axis=(1, 2))
            j = int(np.argmin(ssd))
            best = off[0] if ssd[0] <= stay_ratio * ssd[j] + 1e-12 else off[j]
            pos[k, a] = np.clip(pos[k - 1, a] + best, 0, [h - 1, w - 1])
    return pos


def grid_anchors(h: int, w: int, grid: int) -> np.ndarray:
    rows = ((np.arange(grid) + 0.5) * h / grid).astype(np.int64)
    cols = ((np.arange(grid) + 0.5) * w / grid).astype(np.int64)
    r, c = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([r.ravel(), c.ravel()], axis=1)


def static_filter(video: np.ndarray, grid: int = 8, thresh_frac: float = 0.02, quorum: float = 0.9,
                  window: int = 8, radius: int = 3, min_texture: float = 1e-3) -> StaticResult:
    """Decide whether ``video`` (f, c, h, w) was shot from a fixed camera.

    Anchors whose frame-0 neighbourhood is flat cannot be tracked and are
    left out of the vote; with no trackable anchor the result is
    inconclusive and counts as non-static.
    """
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4 or video.shape[0] < 2:
        raise ValueError("static_filter needs a (f >= 2, c, h, w) video")
    gray = video.mean(axis=1)
    f, h, w = gray.shape
    anchors = grid_anchors(h, w, grid)
    pad = np.pad(gray[0], radius, mode="edge")
    texture = np.array([pad[r:r + 2 * radius + 1, c:c + 2 * radius + 1].std() for r, c in anchors])
    usable = texture > min_texture
    if not usable.any():
        return StaticResult(False, float("nan"), inconclusive=True)
    pos = track_anchors(gray, anchors[usable], window, radius)
    disp = np.linalg.norm(pos - pos[0], axis=2).max(axis=0)
    thresh = thresh_frac * math.hypot(h, w)
    frac = float(np.mean(disp <= thresh))
    return StaticResult(frac >= quorum, float(disp.max()), False, frac)
