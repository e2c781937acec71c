"""Multi-view synchronization blocks plugged into a frozen backbone.

Per block: add a camera embedding to every view's spatial features, attend
across views at each (frame, position), and add the result back through a
projector. Camera encoder and projector start at zero, so a freshly attached
module leaves the backbone's output untouched.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from . import geometry as geo
from .backbone import Attention, Backbone, ModelConfig, attention

CAMERA_REPRS = ("extrinsic", "plucker")
ATTN_MODES = ("view", "full", "epipolar")


@dataclass
class CameraBatch:
    """Conditioning tensors for B rigs of n (normalised) cameras each."""

    flat: torch.Tensor  # (B, n, 12)
    rays: Optional[torch.Tensor] = None  # (B, n, s, 6) patch-averaged Plücker rays
    mask: Optional[torch.Tensor] = None  # (B, n*s, n*s) epipolar admissibility

    @property
    def views(self) -> int:
        return self.flat.shape[1]

    def select(self, idx: Sequence[int]) -> "CameraBatch":
        """Keep the views in ``idx`` (for evaluating on a subset of views)."""
        idx = list(idx)
        rays = None if self.rays is None else self.rays[:, idx]
        mask = None
        if self.mask is not None:
            B, ns, _ = self.mask.shape
            n = self.views
            s = ns // n
            m = self.mask.reshape(B, n, s, n, s)[:, idx][:, :, :, idx]
            mask = m.reshape(B, len(idx) * s, len(idx) * s)
        return CameraBatch(self.flat[:, idx], rays, mask)


def patch_rays(rig: geo.CameraRig, h: int, w: int, patch: int) -> np.ndarray:
    """(n, s, 6) Plücker rays averaged over each patch."""
    out = []
    for cam in rig.cameras:
        r = geo.plucker_rays(cam, rig.intrinsics, h, w)
        r = r.reshape(h // patch, patch, w // patch, patch, 6).mean(axis=(1, 3))
        out.append(r.reshape(-1, 6))
    return np.stack(out)


def patch_centers(h_p: int, w_p: int, patch: int) -> np.ndarray:
    v, u = np.meshgrid(np.arange(h_p), np.arange(w_p), indexing="ij")
    off = (patch - 1) / 2.0
    return np.stack([u.ravel() * patch + off, v.ravel() * patch + off], axis=1).astype(np.float64)


def default_band(patch: int) -> float:
    return 1.5 * patch * np.sqrt(2.0)


def epipolar_mask(rig: geo.CameraRig, h_p: int, w_p: int, patch: int, band_px: float):
    """Boolean (n*s, n*s) mask plus the list of view pairs that fell back to full attention.

    Token (i, p) sees all of view i, and a token q of view j != i when q's
    patch centre lies within ``band_px`` of the epipolar line of p's patch
    centre, or when some point of patch p and some point of patch q satisfy
    the epipolar constraint. The second test is exact: ``b^T F a`` is
    bilinear, so over two patch rectangles it changes sign iff it does so
    across their 16 corner pairs. It guarantees true correspondences are
    never masked out, which the centre-line band alone cannot near the
    epipoles.
    """
    if not band_px > 0:
        raise ValueError("band_px must be positive")
    n, s = len(rig), h_p * w_p
    centers = patch_centers(h_p, w_p, patch)
    xh = np.hstack([centers, np.ones((s, 1))])
    # patch k spans pixel coordinates [k p - 0.5, (k + 1) p - 0.5] on each axis
    offs = np.array([[-1, -1], [1, -1], [-1, 1], [1, 1]]) * patch / 2.0
    corners = np.hstack([(centers[:, None, :] + offs).reshape(-1, 2), np.ones((4 * s, 1))])
    mask = np.zeros((n, s, n, s), dtype=bool)
    degenerate = []
    for i in range(n):
        mask[i, :, i, :] = True
        for j in range(n):
            if j == i:
                continue
            try:
                Fm = geo.fundamental_matrix(rig[i], rig[j], rig.intrinsics)
            except geo.DegenerateGeometryError:
                mask[i, :, j, :] = True
                degenerate.append((i, j))
                continue
            lines = xh @ Fm.T  # epipolar lines in view j, one per patch of view i
            norm = np.hypot(lines[:, 0], lines[:, 1])[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                dist = np.abs(lines @ xh.T) / norm
            near = np.where(np.isfinite(dist), dist <= band_px, True)
            vals = (corners @ Fm @ corners.T).reshape(s, 4, s, 4)  # [q, corner, p, corner]
            straddle = (vals.min(axis=(1, 3)) <= 0) & (vals.max(axis=(1, 3)) >= 0)
            mask[i, :, j, :] = near | straddle.T
    if degenerate:
        warnings.warn(f"epipolar mask: degenerate geometry for pairs {degenerate}; using full attention")
    return mask.reshape(n * s, n * s), degenerate


def make_camera_batch(rigs: Sequence[geo.CameraRig], cfg: ModelConfig, *, rays: bool = False,
                      epipolar: bool = False, band_px: Optional[float] = None, dtype=torch.float64) -> CameraBatch:
    flat = torch.tensor(np.stack([r.flat() for r in rigs]), dtype=dtype)
    ray_t = mask_t = None
    if rays:
        ray_t = torch.tensor(np.stack([patch_rays(r, cfg.height, cfg.width, cfg.patch) for r in rigs]), dtype=dtype)
    if epipolar:
        hp, wp = cfg.grid
        band = default_band(cfg.patch) if band_px is None else band_px
        mask_t = torch.tensor(np.stack([epipolar_mask(r, hp, wp, cfg.patch, band)[0] for r in rigs]))
    return CameraBatch(flat, ray_t, mask_t)


def _zero_linear(i: int, o: int) -> nn.Linear:
    layer = nn.Linear(i, o)
    nn.init.zeros_(layer.weight)
    nn.init.zeros_(layer.bias)
    return layer


class SyncBlock(nn.Module):
    def __init__(self, dim: int, donor: Attention, camera_repr: str = "extrinsic", attn_mode: str = "view"):
        super().__init__()
        if camera_repr not in CAMERA_REPRS:
            raise ValueError(f"camera_repr must be one of {CAMERA_REPRS}")
        if attn_mode not in ATTN_MODES:
            raise ValueError(f"attn_mode must be one of {ATTN_MODES}")
        self.camera_repr = camera_repr
        self.attn_mode = attn_mode
        self.cam_encoder = _zero_linear(6 if camera_repr == "plucker" else 12, dim)
        self.view_attn = copy.deepcopy(donor)
        self.view_attn.requires_grad_(True)
        self.projector = _zero_linear(dim, dim)

    def forward(self, feats: torch.Tensor, cams: CameraBatch) -> torch.Tensor:
        return mvs_forward(feats, cams, self)


def camera_encode(cam12: torch.Tensor, state: SyncBlock) -> torch.Tensor:
    return state.cam_encoder(cam12)


def plucker_condition(feats: torch.Tensor, rays: torch.Tensor, state: SyncBlock) -> torch.Tensor:
    """Add the encoded per-patch ray to each spatial token: (B, n, f, s, d)."""
    if rays.shape[2] != feats.shape[3]:
        raise ValueError(f"ray map has {rays.shape[2]} patches, features have {feats.shape[3]}")
    return feats + state.cam_encoder(rays)[:, :, None, :, :]


def mvs_forward(feats: torch.Tensor, cams: CameraBatch, state: SyncBlock) -> torch.Tensor:
    """feats: (B, n, f, s, d) spatial features -> synchronised features of the same shape."""
    B, n, f, s, d = feats.shape
    if cams.views != n:
        raise ValueError(f"{cams.views} cameras for {n} views")
    if state.camera_repr == "plucker":
        if cams.rays is None:
            raise ValueError("Plücker conditioning needs ray maps in the camera batch")
        fv = plucker_condition(feats, cams.rays, state)
    else:
        fv = feats + camera_encode(cams.flat, state)[:, :, None, None, :]

    if state.attn_mode == "view":
        tok = fv.permute(0, 2, 3, 1, 4).reshape(B * f * s, n, d)
        att = state.view_attn(tok).reshape(B, f, s, n, d).permute(0, 3, 1, 2, 4)
    else:
        mask = None
        if state.attn_mode == "epipolar":
            if cams.mask is None:
                raise ValueError("epipolar attention needs a mask in the camera batch")
            mask = cams.mask.repeat_interleave(f, dim=0)
        tok = fv.permute(0, 2, 1, 3, 4).reshape(B * f, n * s, d)
        att = state.view_attn(tok, mask=mask).reshape(B, f, n, s, d).permute(0, 2, 1, 3, 4)
    return fv + state.projector(att)


def init_sync_states(backbone: Backbone, camera_repr: str = "extrinsic", attn_mode: str = "view") -> nn.ModuleList:
    """One zero-initialised block per backbone block; view attention copied from that block's 3D attention."""
    return nn.ModuleList(
        SyncBlock(backbone.cfg.dim, blk.attn_st, camera_repr, attn_mode) for blk in backbone.blocks
    )


def attach_to_backbone(backbone: Backbone, states: Sequence[SyncBlock], cams: CameraBatch) -> list:
    if len(states) != len(backbone.blocks):
        raise ValueError(f"{len(states)} sync states for {len(backbone.blocks)} blocks")
    return [(lambda x, st=st: mvs_forward(x, cams, st)) for st in states]


class SyncModel(nn.Module):
    """Frozen backbone plus trainable synchronization blocks."""

    def __init__(self, backbone: Backbone, camera_repr: str = "extrinsic", attn_mode: str = "view"):
        super().__init__()
        self.backbone = backbone
        self.sync = init_sync_states(backbone, camera_repr, attn_mode).to(
            dtype=next(backbone.parameters()).dtype)

    @property
    def cfg(self) -> ModelConfig:
        return self.backbone.cfg

    @property
    def camera_repr(self) -> str:
        return self.sync[0].camera_repr

    @property
    def attn_mode(self) -> str:
        return self.sync[0].attn_mode

    def camera_batch(self, rigs: Sequence[geo.CameraRig], band_px: Optional[float] = None) -> CameraBatch:
        return make_camera_batch(rigs, self.cfg, rays=self.camera_repr == "plucker",
                                 epipolar=self.attn_mode == "epipolar", band_px=band_px,
                                 dtype=next(self.parameters()).dtype)

    def forward(self, z, t, prompt_ids, prompt_mask, cams: Optional[CameraBatch]):
        hooks = None if cams is None else attach_to_backbone(self.backbone, self.sync, cams)
        return self.backbone(z, t, prompt_ids, prompt_mask, hooks)
