"""Camera extrinsics, rigs and the multi-view geometry built on them.

Convention: world-to-camera, ``x_cam = R @ X + t``. Camera axes are x right,
y down, z forward. The world is z-up with the ground plane at z = 0. Pixel
coordinates put integer values at pixel centres, so the pixel in row ``v``
and column ``u`` sits at ``(u, v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ORTHO_TOL = 1e-6
REPAIR_TOL = 1e-3


class GeometryError(ValueError):
    """Base class for geometry failures."""


class InvalidRotationError(GeometryError):
    pass


class ConstraintError(GeometryError):
    pass


class UndefinedAzimuthError(GeometryError):
    pass


class DegenerateGeometryError(GeometryError):
    pass


class UndefinedDirectionError(GeometryError):
    pass


def as_rotation(R) -> np.ndarray:
    """Validate ``R`` as a proper rotation, repairing small drift.

    Matrices within ``REPAIR_TOL`` of orthonormal are snapped back with a
    polar decomposition; anything further away raises.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidRotationError(f"rotation must be a finite 3x3 matrix, got shape {R.shape}")
    dev = np.max(np.abs(R.T @ R - np.eye(3)))
    det = np.linalg.det(R)
    if dev < ORTHO_TOL and abs(det - 1.0) < ORTHO_TOL:
        return R
    if dev < REPAIR_TOL and det > 0:
        U, _, Vt = np.linalg.svd(R)
        fixed = U @ Vt
        if np.linalg.det(fixed) > 0:
            return fixed
    raise InvalidRotationError(f"not a rotation (orthonormality error {dev:.3g}, det {det:.6g})")


def rot_x(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class CameraExtrinsics:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", as_rotation(self.R))
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise GeometryError(f"translation must be a finite 3-vector, got {t!r}")
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "CameraExtrinsics":
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    @property
    def forward(self) -> np.ndarray:
        """Optical axis in world coordinates."""
        return self.R[2].copy()

    def matrix(self) -> np.ndarray:
        return np.hstack([self.R, self.t[:, None]])

    def compose(self, other: "CameraExtrinsics") -> "CameraExtrinsics":
        """Return ``self ∘ other``: first map by ``other``, then by ``self``."""
        return CameraExtrinsics(self.R @ other.R, self.R @ other.t + self.t)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.R.T + self.t


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")

    @classmethod
    def from_fov(cls, h: int, w: int, fov_deg: float = 60.0) -> "CameraIntrinsics":
        """Square pixels, horizontal field of view ``fov_deg``, centred principal point."""
        f = (w / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(f, f, (w - 1) / 2.0, (h - 1) / 2.0)

    def check_image(self, h: int, w: int) -> None:
        if not (0 <= self.cx < w and 0 <= self.cy < h):
            raise GeometryError(f"principal point ({self.cx}, {self.cy}) outside {h}x{w} image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_list(self) -> list[float]:
        return [self.fx, self.fy, self.cx, self.cy]


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[CameraExtrinsics, ...]
    intrinsics: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics.from_fov(32, 32))

    def __post_init__(self):
        cams = tuple(self.cameras)
        if len(cams) < 1:
            raise GeometryError("a rig needs at least one camera")
        object.__setattr__(self, "cameras", cams)

    def __len__(self) -> int:
        return len(self.cameras)

    def __getitem__(self, i):
        return self.cameras[i]

    def subset(self, idx: Sequence[int]) -> "CameraRig":
        return CameraRig(tuple(self.cameras[i] for i in idx), self.intrinsics)

    def flat(self) -> np.ndarray:
        """(n, 12) array of flattened extrinsics."""
        return np.stack([flatten_extrinsics(c) for c in self.cameras])


@dataclass(frozen=True)
class SphericalPose:
    """Camera on a sphere around ``target``, looking at it.

    Azimuth is measured in the ground plane from +x towards +y; elevation is
    positive above the target.
    """

    azimuth: float
    elevation: float
    distance: float
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.distance > 0:
            raise GeometryError("distance must be positive")
        object.__setattr__(self, "azimuth", float(self.azimuth) % 360.0)

    def center(self) -> np.ndarray:
        az, el = math.radians(self.azimuth), math.radians(self.elevation)
        offset = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        return np.asarray(self.target, dtype=np.float64) + self.distance * offset

    def to_extrinsics(self) -> CameraExtrinsics:
        return look_at(self.center(), self.target)

    @classmethod
    def from_extrinsics(cls, cam: CameraExtrinsics, target=(0.0, 0.0, 0.0)) -> "SphericalPose":
        target = np.asarray(target, dtype=np.float64)
        d = cam.center - target
        dist = float(np.linalg.norm(d))
        if dist <= 0:
            raise UndefinedAzimuthError("camera centre coincides with target")
        el = math.degrees(math.asin(max(-1.0, min(1.0, d[2] / dist))))
        az = math.degrees(math.atan2(d[1], d[0])) % 360.0
        return cls(az, el, dist, tuple(target))


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> CameraExtrinsics:
    center = np.asarray(center, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - center
    norm = np.linalg.norm(fwd)
    if norm == 0:
        raise GeometryError("look_at: centre equals target")
    fwd /= norm
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        # looking straight along the up axis
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return CameraExtrinsics(R, -R @ center)


# ---------------------------------------------------------------------------
# operations


def normalize_rig(rig: CameraRig) -> CameraRig:
    """Re-express every camera relative to camera 0, which becomes ``[I|0]``."""
    R0, t0 = rig.cameras[0].R, rig.cameras[0].t
    out = []
    for i, cam in enumerate(rig.cameras):
        if i == 0:
            out.append(CameraExtrinsics.identity())
            continue
        Rr = cam.R @ R0.T
        out.append(CameraExtrinsics(Rr, cam.t - Rr @ t0))
    return CameraRig(tuple(out), rig.intrinsics)


@dataclass(frozen=True)
class CameraConstraints:
    dist_min: float = 3.5
    dist_max: float = 9.0
    elev_min: float = 0.0
    elev_max: float = 45.0

    def validate(self) -> None:
        if not (0 < self.dist_min <= self.dist_max):
            raise ConstraintError(f"bad distance range [{self.dist_min}, {self.dist_max}]")
        if not (0.0 <= self.elev_min <= self.elev_max <= 90.0):
            raise ConstraintError(f"bad elevation range [{self.elev_min}, {self.elev_max}]")


def sample_spherical(constraints: CameraConstraints, target, rng: np.random.Generator) -> SphericalPose:
    constraints.validate()
    az = rng.uniform(0.0, 360.0)
    el = rng.uniform(constraints.elev_min, constraints.elev_max)
    dist = rng.uniform(constraints.dist_min, constraints.dist_max)
    return SphericalPose(az, el, dist, tuple(np.asarray(target, dtype=np.float64)))


def sample_camera(constraints: CameraConstraints, target, rng: np.random.Generator) -> CameraExtrinsics:
    return sample_spherical(constraints, target, rng).to_extrinsics()


def camera_azimuth(cam: CameraExtrinsics, target) -> float:
    d = cam.center - np.asarray(target, dtype=np.float64)
    if math.hypot(d[0], d[1]) < 1e-12:
        raise UndefinedAzimuthError("camera is directly above/below or at the target")
    return math.degrees(math.atan2(d[1], d[0])) % 360.0


def azimuth_difference(a: CameraExtrinsics, b: CameraExtrinsics, target) -> float:
    """Unsigned azimuth gap between two cameras around ``target``, in [0, 180]."""
    d = abs(camera_azimuth(a, target) - camera_azimuth(b, target)) % 360.0
    return min(d, 360.0 - d)


def flatten_extrinsics(cam: CameraExtrinsics) -> np.ndarray:
    return np.concatenate([cam.R.reshape(-1), cam.t])


def unflatten_extrinsics(v) -> CameraExtrinsics:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != (12,):
        raise GeometryError(f"expected 12 numbers, got {v.size}")
    return CameraExtrinsics(v[:9].reshape(3, 3), v[9:])


def extrinsics_to_bytes(cam: CameraExtrinsics) -> bytes:
    return flatten_extrinsics(cam).astype("<f8").tobytes()


def extrinsics_from_bytes(buf: bytes) -> CameraExtrinsics:
    return unflatten_extrinsics(np.frombuffer(buf, dtype="<f8"))


def project(cam: CameraExtrinsics, K: CameraIntrinsics, X) -> tuple[np.ndarray, np.ndarray]:
    """Project world points; returns (N, 2) pixels and (N,) depths."""
    Xc = cam.transform(np.atleast_2d(X))
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([K.fx * Xc[:, 0] / z + K.cx, K.fy * Xc[:, 1] / z + K.cy], axis=1)
    return uv, z


def pixel_rays(cam: CameraExtrinsics, K: CameraIntrinsics, uv) -> np.ndarray:
    """Unit world-frame directions of the rays through pixel coordinates ``uv``."""
    uv = np.asarray(uv, dtype=np.float64)
    d_cam = np.stack([(uv[..., 0] - K.cx) / K.fx, (uv[..., 1] - K.cy) / K.fy, np.ones(uv.shape[:-1])], axis=-1)
    d = d_cam @ cam.R
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def pixel_grid(h: int, w: int) -> np.ndarray:
    v, u = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return np.stack([u, v], axis=-1)


def plucker_rays(cam: CameraExtrinsics, K: CameraIntrinsics, h: int, w: int) -> np.ndarray:
    """(h, w, 6) map of (direction, moment) per pixel centre."""
    if h < 1 or w < 1:
        raise GeometryError("image must be at least 1x1")
    d = pixel_rays(cam, K, pixel_grid(h, w))
    m = np.cross(np.broadcast_to(cam.center, d.shape), d)
    return np.concatenate([d, m], axis=-1)


def relative_pose(a: CameraExtrinsics, b: CameraExtrinsics) -> CameraExtrinsics:
    """Transform taking camera-a coordinates to camera-b coordinates."""
    R = b.R @ a.R.T
    return CameraExtrinsics(R, b.t - R @ a.t)


def essential_from_pose(rel: CameraExtrinsics) -> np.ndarray:
    return skew(rel.t) @ rel.R


def fundamental_matrix(a: CameraExtrinsics, b: CameraExtrinsics, K: CameraIntrinsics) -> np.ndarray:
    """F with ``x_b^T F x_a = 0``, unit Frobenius norm."""
    rel = relative_pose(a, b)
    if np.linalg.norm(rel.t) <= 1e-9:
        raise DegenerateGeometryError("no baseline between cameras (pure rotation)")
    Kinv = np.linalg.inv(K.matrix())
    F = Kinv.T @ essential_from_pose(rel) @ Kinv
    return F / np.linalg.norm(F)


def rot_err(R_est, R_gt) -> float:
    """Geodesic angle between two rotations, degrees."""
    R_est, R_gt = as_rotation(R_est), as_rotation(R_gt)
    c = (np.trace(R_gt.T @ R_est) - 1.0) / 2.0
    return math.degrees(math.acos(max(-1.0, min(1.0, c))))


def trans_err(t_est, t_gt) -> float:
    """Distance between unit-normalised translations, in [0, 2]."""
    t_est = np.asarray(t_est, dtype=np.float64).reshape(3)
    t_gt = np.asarray(t_gt, dtype=np.float64).reshape(3)
    ne, ng = np.linalg.norm(t_est), np.linalg.norm(t_gt)
    if ne == 0 or ng == 0:
        raise UndefinedDirectionError("translation direction undefined for a zero vector")
    return float(np.linalg.norm(t_est / ne - t_gt / ng))
