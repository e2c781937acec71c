"""Analytic ray caster for small procedural scenes.

Scenes hold one or two moving primitives (spheres, axis-aligned boxes) over a
textured ground plane under a sky gradient. Shading is Lambertian with a fixed
sun, so a surface point has the same colour from every viewpoint, and every
hit point is known exactly. That is what makes cross-view correspondences free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import geometry as geo

SUN = np.array([0.4, 0.3, 0.85]) / np.linalg.norm([0.4, 0.3, 0.85])
AMBIENT = 0.4
FRAME_DT = 0.1

PALETTE = {
    "red": (0.85, 0.15, 0.12),
    "green": (0.15, 0.7, 0.2),
    "blue": (0.15, 0.3, 0.9),
    "yellow": (0.95, 0.85, 0.15),
    "orange": (0.95, 0.5, 0.1),
    "purple": (0.6, 0.2, 0.75),
    "white": (0.95, 0.95, 0.95),
    "cyan": (0.1, 0.8, 0.85),
}
GROUNDS = {
    "gray": ((0.45, 0.45, 0.45), (0.62, 0.62, 0.6)),
    "grass": ((0.3, 0.5, 0.22), (0.42, 0.6, 0.3)),
    "sand": ((0.7, 0.6, 0.42), (0.82, 0.72, 0.52)),
    "brick": ((0.55, 0.3, 0.25), (0.68, 0.42, 0.33)),
}


class VisibilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class Subject:
    shape: str  # "sphere" or "box"
    color: str
    size: float  # radius, or box half-extent
    path: str  # "circle" or "line"
    a: tuple[float, float]  # circle centre / line start (ground-plane xy)
    b: tuple[float, float]  # (radius, phase) / line end
    speed: float

    def position(self, k: int) -> np.ndarray:
        tau = k * FRAME_DT * self.speed
        if self.path == "circle":
            r, ph = self.b
            xy = np.array(self.a) + r * np.array([math.cos(ph + tau), math.sin(ph + tau)])
        else:
            u = tau % 2.0
            u = u if u <= 1.0 else 2.0 - u  # ping-pong along the segment
            xy = (1 - u) * np.array(self.a) + u * np.array(self.b)
        return np.array([xy[0], xy[1], self.size])

    def describe(self) -> str:
        return f"{self.color} {self.shape}"


@dataclass(frozen=True)
class SceneSpec:
    subjects: tuple[Subject, ...]
    ground: str = "gray"
    texture_freq: tuple[float, float] = (2.0, 1.7)
    texture_phase: tuple[float, float] = (0.0, 0.0)
    sky: tuple[tuple[float, float, float], tuple[float, float, float]] = ((0.75, 0.85, 0.95), (0.3, 0.5, 0.85))
    center: tuple[float, float, float] = (0.0, 0.0, 0.5)
    seed: int = 0
    frozen: bool = field(default=False)  # subjects hold their frame-0 pose

    def __post_init__(self):
        if len(self.subjects) not in (1, 2):
            raise ValueError("a scene has one or two subjects")

    def prompt(self) -> str:
        names = " and a ".join(s.describe() for s in self.subjects)
        verb = "resting" if self.frozen else "moving"
        return f"a {names} {verb} on a {self.ground} plane"

    def positions(self, k: int) -> list[np.ndarray]:
        return [s.position(0 if self.frozen else k) for s in self.subjects]

    def to_dict(self) -> dict:
        return {
            "subjects": [s.__dict__ for s in self.subjects],
            "ground": self.ground,
            "texture_freq": list(self.texture_freq),
            "texture_phase": list(self.texture_phase),
            "center": list(self.center),
            "seed": self.seed,
            "frozen": self.frozen,
        }


def random_scene(rng: np.random.Generator, seed: int = 0, frozen: bool = False) -> SceneSpec:
    count = int(rng.integers(1, 3))
    colors = rng.choice(list(PALETTE), size=count, replace=False)
    subjects = []
    for i in range(count):
        shape = "sphere" if rng.random() < 0.5 else "box"
        size = float(rng.uniform(0.35, 0.55) if shape == "sphere" else rng.uniform(0.3, 0.45))
        if rng.random() < 0.5:
            a = tuple(float(x) for x in rng.uniform(-0.3, 0.3, 2))
            b = (float(rng.uniform(0.3, 0.6)), float(rng.uniform(0, 2 * math.pi)))
            path = "circle"
        else:
            ang = rng.uniform(0, 2 * math.pi)
            r = rng.uniform(0.4, 0.8)
            a = (float(r * math.cos(ang)), float(r * math.sin(ang)))
            b = (float(-r * math.cos(ang)), float(-r * math.sin(ang)))
            path = "line"
        subjects.append(Subject(shape, str(colors[i]), size, path, a, b, float(rng.uniform(0.5, 1.5))))
    return SceneSpec(
        subjects=tuple(subjects),
        ground=str(rng.choice(list(GROUNDS))),
        texture_freq=tuple(float(x) for x in rng.uniform(1.4, 2.2, 2)),
        texture_phase=tuple(float(x) for x in rng.uniform(0, 2 * math.pi, 2)),
        seed=seed,
        frozen=frozen,
    )


# ---------------------------------------------------------------------------
# ray casting


def _ground_albedo(spec: SceneSpec, p: np.ndarray) -> np.ndarray:
    lo, hi = (np.array(c) for c in GROUNDS[spec.ground])
    fx, fy = spec.texture_freq
    px, py = spec.texture_phase
    pattern = 0.5 + 0.5 * np.sin(fx * p[:, 0] + px) * np.sin(fy * p[:, 1] + py)
    # texture fades with distance so far ground does not alias
    fade = np.exp(-(p[:, 0] ** 2 + p[:, 1] ** 2) / 36.0)
    mix = 0.5 + (pattern - 0.5) * fade
    return lo + mix[:, None] * (hi - lo)


def _hit_sphere(o, d, c, r):
    oc = o - c
    b = np.einsum("ij,ij->i", d, oc)
    q = np.einsum("ij,ij->i", oc, oc) - r * r
    disc = b * b - q
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0, t1 = -b - sq, -b + sq
    return np.where(ok & (t0 > 1e-9), t0, np.where(ok & (t1 > 1e-9), t1, np.inf))


def _hit_box(o, d, c, h):
    lo, hi = c - h, c + h
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (lo - o) * inv
        tb = (hi - o) * inv
    tmin = np.nanmax(np.minimum(ta, tb), axis=1)
    tmax = np.nanmin(np.maximum(ta, tb), axis=1)
    ok = (tmax >= tmin) & (tmax > 1e-9)
    return np.where(ok, np.where(tmin > 1e-9, tmin, tmax), np.inf)


def _box_normal(p, c, h):
    q = (p - c) / h
    axis = np.argmax(np.abs(q), axis=1)
    n = np.zeros_like(p)
    n[np.arange(len(p)), axis] = np.sign(q[np.arange(len(p)), axis])
    return n


def cast(spec: SceneSpec, k: int, origin, dirs: np.ndarray):
    """Trace rays at frame ``k``. Returns (colour (N,3), distance (N,), hit id (N,)).

    Ids: -1 sky, 0 ground, i >= 1 subject i-1. Rays are unit length.
    """
    o = np.broadcast_to(np.asarray(origin, dtype=np.float64), dirs.shape)
    N = dirs.shape[0]
    best = np.full(N, np.inf)
    ids = np.full(N, -1, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = np.where(dirs[:, 2] < -1e-12, -o[:, 2] / dirs[:, 2], np.inf)
    tg = np.where(tg > 1e-9, tg, np.inf)
    sel = tg < best
    best[sel], ids[sel] = tg[sel], 0
    positions = spec.positions(k)
    for i, (subj, c) in enumerate(zip(spec.subjects, positions)):
        if subj.shape == "sphere":
            ts = _hit_sphere(o, dirs, c, subj.size)
        else:
            ts = _hit_box(o, dirs, c, subj.size)
        sel = ts < best
        best[sel], ids[sel] = ts[sel], i + 1

    p = o + dirs * np.where(np.isfinite(best), best, 0.0)[:, None]
    col = np.zeros((N, 3))
    sky_lo, sky_hi = (np.array(c) for c in spec.sky)
    up = np.clip(dirs[:, 2], 0.0, 1.0)[:, None]
    sky = sky_lo + up * (sky_hi - sky_lo)
    col[ids == -1] = sky[ids == -1]
    g = ids == 0
    if g.any():
        shade = AMBIENT + (1 - AMBIENT) * max(SUN[2], 0.0)
        col[g] = _ground_albedo(spec, p[g]) * shade
    for i, (subj, c) in enumerate(zip(spec.subjects, positions)):
        m = ids == i + 1
        if not m.any():
            continue
        if subj.shape == "sphere":
            nrm = (p[m] - c) / subj.size
        else:
            nrm = _box_normal(p[m], c, subj.size)
        lam = np.clip(nrm @ SUN, 0.0, 1.0)
        col[m] = np.array(PALETTE[subj.color]) * (AMBIENT + (1 - AMBIENT) * lam)[:, None]
    return np.clip(col, 0.0, 1.0), best, ids


def render_view(spec: SceneSpec, cam: geo.CameraExtrinsics, K: geo.CameraIntrinsics, k: int, h: int, w: int):
    """One frame from one camera: image (3, h, w), distance (h, w), ids (h, w)."""
    dirs = geo.pixel_rays(cam, K, geo.pixel_grid(h, w)).reshape(-1, 3)
    col, dist, ids = cast(spec, k, cam.center, dirs)
    return col.T.reshape(3, h, w), dist.reshape(h, w), ids.reshape(h, w)


def visible_in(spec: SceneSpec, k: int, cam: geo.CameraExtrinsics, K: geo.CameraIntrinsics,
               X: np.ndarray, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates of world points ``X`` in ``cam`` and whether each is unoccluded and in frame."""
    uv, z = geo.project(cam, K, X)
    inside = (z > 1e-6) & (uv[:, 0] >= -0.5) & (uv[:, 0] < w - 0.5) & (uv[:, 1] >= -0.5) & (uv[:, 1] < h - 0.5)
    vis = np.zeros(len(X), dtype=bool)
    if inside.any():
        C = cam.center
        vec = X[inside] - C
        rng_ = np.linalg.norm(vec, axis=1)
        _, dist, _ = cast(spec, k, C, vec / rng_[:, None])
        vis[inside] = dist >= rng_ * (1 - 1e-7) - 1e-7
    uv = np.where(np.isfinite(uv), uv, -1.0)
    return uv, vis


@dataclass
class RenderResult:
    videos: np.ndarray  # (n, f, 3, h, w) in [0, 1]
    correspondences: np.ndarray  # (f, M, n, 3): u, v, visible
    ids: np.ndarray  # (n, f, h, w) hit ids
    points: np.ndarray  # (f, M, 3) world points behind the correspondences (nan = padding)


def render_scene(spec: SceneSpec, rig: geo.CameraRig, f: int, res: tuple[int, int], corr_stride: int = 4) -> RenderResult:
    """Render ``f`` synchronised frames from every camera of ``rig``.

    Correspondences: per frame, surface points seen at a strided pixel grid of
    every view, with their pixel coordinates and visibility in all views.
    """
    if f < 1:
        raise ValueError("need at least one frame")
    h, w = res
    n = len(rig)
    K = rig.intrinsics
    videos = np.zeros((n, f, 3, h, w))
    ids = np.zeros((n, f, h, w), dtype=np.int64)
    grid = geo.pixel_grid(h, w)[::corr_stride, ::corr_stride].reshape(-1, 2)
    per_view = len(grid)
    M = n * per_view
    corr = np.zeros((f, M, n, 3))
    pts = np.full((f, M, 3), np.nan)
    for k in range(f):
        seen = np.zeros(len(spec.subjects), dtype=bool)
        for i, cam in enumerate(rig.cameras):
            img, dist, hit = render_view(spec, cam, K, k, h, w)
            videos[i, k], ids[i, k] = img, hit
            for s in range(len(spec.subjects)):
                seen[s] |= bool((hit == s + 1).any())
            dirs = geo.pixel_rays(cam, K, grid)
            gd = dist[grid[:, 1].astype(int), grid[:, 0].astype(int)]
            ok = np.isfinite(gd)
            pts[k, i * per_view:(i + 1) * per_view][ok] = cam.center + dirs[ok] * gd[ok, None]
        if not seen.all():
            raise VisibilityError(f"frame {k}: subject(s) {np.flatnonzero(~seen).tolist()} not visible in any view")
        valid = np.isfinite(pts[k, :, 0])
        for j, cam in enumerate(rig.cameras):
            uv, vis = visible_in(spec, k, cam, K, pts[k, valid], h, w)
            corr[k, valid, j, :2] = uv
            corr[k, valid, j, 2] = vis
    return RenderResult(videos, corr, ids, pts)


def default_intrinsics(h: int, w: int) -> geo.CameraIntrinsics:
    return geo.CameraIntrinsics.from_fov(h, w, 55.0)
