"""Joint sampling of synchronized views, and novel-view re-rendering of a reference video."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch

from . import geometry as geo
from .backbone import PromptSpec, prompt_batch
from .flow import GuidanceWeights, euler_sample, guided_velocity
from .sync import SyncModel

DEFAULT_STEPS = 64


def initial_noise(rng: np.random.Generator, shape, shared: bool, dtype) -> torch.Tensor:
    """Standard normal start state (B, n, ...); ``shared`` draws one sample per batch entry for all views."""
    if shared:
        one = rng.standard_normal((shape[0], 1) + tuple(shape[2:]))
        return torch.tensor(np.repeat(one, shape[1], axis=1), dtype=dtype)
    return torch.tensor(rng.standard_normal(shape), dtype=dtype)


def encode(pixels) -> torch.Tensor:
    """Pixels in [0, 1] to latents in [-1, 1]; exact (and exactly invertible) for float32-origin data."""
    return 2.0 * torch.as_tensor(np.asarray(pixels, dtype=np.float64)) - 1.0


def decode(z: torch.Tensor) -> np.ndarray:
    return ((z.detach() + 1.0) / 2.0).clamp(0.0, 1.0).cpu().numpy()


@torch.no_grad()
def generate(model: SyncModel, rigs: Sequence[geo.CameraRig], prompts: Sequence[Optional[PromptSpec]],
             frames: int, rng: np.random.Generator, steps: int = DEFAULT_STEPS,
             text_scale: float = 1.0, shared_noise: bool = False) -> np.ndarray:
    """Sample one synchronized multi-view video per rig: (B, n, f, c, h, w) pixels.

    ``text_scale`` is ordinary prompt guidance; 1.0 evaluates the conditional
    branch only. A single-camera rig reduces to plain text-to-video sampling.
    Views start from independent noise unless ``shared_noise`` is set.
    """
    cfg = model.cfg
    n = len(rigs[0])
    if any(len(r) != n for r in rigs):
        raise ValueError("all rigs in a batch need the same number of cameras")
    B = len(rigs)
    cams = model.camera_batch([geo.normalize_rig(r) for r in rigs])
    ids, mask = prompt_batch(list(prompts), cfg)
    null_ids, null_mask = prompt_batch([None] * B, cfg)
    z1 = initial_noise(rng, (B, n, frames, cfg.channels, cfg.height, cfg.width), shared_noise,
                       next(model.parameters()).dtype)

    def velocity(z, t):
        v = model(z, t, ids, mask, cams)
        if text_scale != 1.0:
            vn = model(z, t, null_ids, null_mask, cams)
            v = vn + text_scale * (v - vn)
        return v

    return decode(euler_sample(velocity, z1, steps))


@torch.no_grad()
def rerender(model: SyncModel, video: np.ndarray, rig: geo.CameraRig, prompt: Optional[PromptSpec],
             rng: np.random.Generator, steps: int = DEFAULT_STEPS,
             weights: GuidanceWeights = GuidanceWeights(), shared_noise: bool = False) -> np.ndarray:
    """Novel views of ``video`` (f, c, h, w); camera 0 of ``rig`` is the reference camera.

    View 0's state is overwritten by the clean reference latent before every
    velocity evaluation and after the last step. Guidance combines the
    unconditional, video-only and video-plus-text branches. In the
    unconditional branch the reference view carries the same noise level as
    the others instead of the clean latent. Returns (n, f, c, h, w) pixels.
    """
    cfg = model.cfg
    video = np.asarray(video)
    if video.shape[1:] != (cfg.channels, cfg.height, cfg.width):
        raise ValueError(f"input video {video.shape[1:]} does not match the model resolution "
                         f"{(cfg.channels, cfg.height, cfg.width)}")
    n, f = len(rig), video.shape[0]
    dtype = next(model.parameters()).dtype
    z_ref = encode(video).to(dtype)
    cams = model.camera_batch([geo.normalize_rig(rig)])
    ids, mask = prompt_batch([prompt], cfg)
    null_ids, null_mask = prompt_batch([None], cfg)
    z1 = initial_noise(rng, (1, n, f) + video.shape[1:], shared_noise, dtype)
    eps_ref = z1[:, 0].clone()

    def replace(z, t):
        z = z.clone()
        z[:, 0] = z_ref
        return z

    def velocity(z, t):
        v_full = model(z, t, ids, mask, cams)
        if weights.s_video == 1.0 and weights.s_text == 1.0:
            return v_full
        v_vid = model(z, t, null_ids, null_mask, cams)
        z_null = z.clone()
        z_null[:, 0] = (1.0 - t) * z_ref + t * eps_ref
        v_null = model(z_null, t, null_ids, null_mask, cams)
        return guided_velocity(v_null, v_vid, v_full, weights)

    z = euler_sample(velocity, z1, steps, replace=replace)
    out = decode(z)[0]
    return out
