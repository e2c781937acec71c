"""Rectified-flow path, flow-matching target, Euler sampler and two-condition guidance.

Latent batches are tensors whose leading dimensions are ``(..., n, f, c, h, w)``.
The path runs from data at t = 0 to noise at t = 1; sampling integrates the
velocity field from t = 1 back to t = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch


class ShapeMismatchError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class GuidanceWeights:
    s_video: float = 1.8
    s_text: float = 7.5

    def __post_init__(self):
        for v in (self.s_video, self.s_text):
            if not (v >= 0 and v != float("inf")):
                raise ValueError("guidance weights must be finite and non-negative")


def _same_shape(*xs: torch.Tensor) -> None:
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise ShapeMismatchError(f"shape {tuple(x.shape)} does not match {tuple(shape)}")


def _broadcast_t(t, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=like.dtype, device=like.device)
    if t.dim() == 0:
        return t
    if t.dim() != 1 or t.shape[0] != like.shape[0]:
        raise ShapeMismatchError(f"per-sample t of shape {tuple(t.shape)} vs batch {like.shape[0]}")
    return t.reshape(-1, *([1] * (like.dim() - 1)))


def forward_interpolate(z0: torch.Tensor, eps: torch.Tensor, t) -> torch.Tensor:
    """``(1 - t) z0 + t eps``; ``t`` is a scalar or one value per leading batch entry."""
    _same_shape(z0, eps)
    tt = _broadcast_t(t, z0)
    return (1 - tt) * z0 + tt * eps


def velocity_target(z0: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    _same_shape(z0, eps)
    return eps - z0


def cfm_loss(v_pred: torch.Tensor, z0: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    _same_shape(v_pred, z0, eps)
    return (v_pred - velocity_target(z0, eps)).square().mean()


def euler_sample(
    velocity_fn: Callable[[torch.Tensor, float], torch.Tensor],
    z_init: torch.Tensor,
    steps: int,
    replace: Optional[Callable[[torch.Tensor, float], torch.Tensor]] = None,
) -> torch.Tensor:
    """Integrate ``dz = v(z, t) dt`` from t = 1 down to t = 0 with uniform Euler steps.

    ``replace(z, t)`` runs before every velocity evaluation and once on the
    final state; it is how the reference view is clamped during re-rendering.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    dt = -1.0 / steps
    z = z_init
    for k in range(steps):
        t = 1.0 - k / steps
        if replace is not None:
            z = replace(z, t)
        v = velocity_fn(z, t)
        if not torch.isfinite(v).all():
            raise DivergenceError(f"non-finite velocity at t={t:.4f} (step {k})")
        z = z + v * dt
    if replace is not None:
        z = replace(z, 0.0)
    return z


def guided_velocity(v_null, v_vid, v_full, w: GuidanceWeights) -> torch.Tensor:
    """Two-condition classifier-free guidance.

    Algebraically ``v_null + s_V (v_vid - v_null) + s_T (v_full - v_vid)``,
    regrouped per argument so that (1, 1) returns ``v_full`` and (0, 0)
    returns ``v_null`` without rounding.
    """
    _same_shape(v_null, v_vid, v_full)
    s_v, s_t = float(w.s_video), float(w.s_text)
    return (1.0 - s_v) * v_null + (s_v - s_t) * v_vid + s_t * v_full
