"""Toy text-to-video diffusion transformer.

Each block runs, with pre-norm residuals: spatial attention (per view, per
frame), joint spatial-temporal attention (per view), cross-attention to the
prompt, and a feed-forward layer. Every norm is an RMSNorm whose scale is a
learned function of the timestep. Views never exchange information inside
the backbone; cross-view mixing only happens through hooks.
"""

from __future__ import annotations

import hashlib
import math
import re
import zlib
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

Hook = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 3
    height: int = 32
    width: int = 32
    patch: int = 4
    dim: int = 64  # wide enough to carry a whole 4x4x3 patch
    heads: int = 2
    blocks: int = 2
    vocab: int = 256
    max_prompt: int = 16
    max_frames: int = 16
    ffn_mult: int = 4
    time_dim: int = 32

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(f"{self.height}x{self.width} not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    @property
    def tokens(self) -> int:
        hp, wp = self.grid
        return hp * wp

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# prompts


@dataclass(frozen=True)
class PromptSpec:
    token_ids: tuple[int, ...]
    raw_text: str = ""

    @classmethod
    def from_text(cls, text: str, vocab: int = 256, max_len: int = 16) -> "PromptSpec":
        words = re.findall(r"[a-z0-9]+", text.lower())[:max_len]
        return cls(tuple(zlib.crc32(w.encode()) % vocab for w in words), text)

    @classmethod
    def null(cls) -> "PromptSpec":
        return cls((), "")


def prompt_batch(prompts: Sequence[Optional[PromptSpec]], cfg: ModelConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Token ids and key mask, shape (B, max_prompt + 1); slot 0 is the always-present null token.

    ``None`` entries (and empty prompts) are the unconditional prompt.
    """
    L = cfg.max_prompt + 1
    ids = torch.full((len(prompts), L), cfg.vocab, dtype=torch.long)
    mask = torch.zeros((len(prompts), L), dtype=torch.bool)
    mask[:, 0] = True
    for b, p in enumerate(prompts):
        if p is None:
            continue
        if len(p.token_ids) > cfg.max_prompt:
            raise ValueError(f"prompt has {len(p.token_ids)} tokens, limit {cfg.max_prompt}")
        if any(not 0 <= i < cfg.vocab for i in p.token_ids):
            raise ValueError("token id outside vocabulary")
        k = len(p.token_ids)
        ids[b, 1:1 + k] = torch.tensor(p.token_ids, dtype=torch.long)
        mask[b, 1:1 + k] = True
    return ids, mask


# ---------------------------------------------------------------------------
# functional pieces


def patchify(video: torch.Tensor, patch: int) -> torch.Tensor:
    """(..., c, h, w) -> (..., s, c*patch*patch), tokens in row-major patch order."""
    *lead, c, h, w = video.shape
    if h % patch or w % patch:
        raise ValueError(f"{h}x{w} not divisible by patch {patch}")
    hp, wp = h // patch, w // patch
    x = video.reshape(*lead, c, hp, patch, wp, patch)
    nl = len(lead)
    x = x.permute(*range(nl), nl + 1, nl + 3, nl, nl + 2, nl + 4)
    return x.reshape(*lead, hp * wp, c * patch * patch)


def unpatchify(tokens: torch.Tensor, patch: int, h: int, w: int) -> torch.Tensor:
    *lead, s, dp = tokens.shape
    hp, wp = h // patch, w // patch
    if s != hp * wp:
        raise ValueError(f"{s} tokens do not tile a {h}x{w} image at patch {patch}")
    c = dp // (patch * patch)
    x = tokens.reshape(*lead, hp, wp, c, patch, patch)
    nl = len(lead)
    x = x.permute(*range(nl), nl + 2, nl, nl + 3, nl + 1, nl + 4)
    return x.reshape(*lead, c, h, w)


def rms_norm(x: torch.Tensor, scale: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    return x * torch.rsqrt(x.square().mean(dim=-1, keepdim=True) + eps) * scale


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features of ``1000 t``, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype) / half)
    args = 1000.0 * t[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class FullyMaskedRowError(ValueError):
    pass


def attention(q, k, v, heads: int, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Multi-head scaled dot-product attention on (..., L, heads*d_head) tensors.

    ``mask`` is boolean, True where a query may attend to a key, broadcastable
    to (..., Lq, Lk).
    """
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("key and value counts differ")
    *lead, lq, width = q.shape
    lk = k.shape[-2]
    dh = width // heads
    q = q.reshape(*lead, lq, heads, dh).transpose(-2, -3)
    k = k.reshape(*k.shape[:-2], lk, heads, dh).transpose(-2, -3)
    v = v.reshape(*v.shape[:-2], lk, heads, dh).transpose(-2, -3)
    logits = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if mask is not None:
        if not mask.any(dim=-1).all():
            raise FullyMaskedRowError("a query has every key masked out")
        logits = logits.masked_fill(~mask.unsqueeze(-3), float("-inf"))
    out = torch.softmax(logits, dim=-1) @ v
    return out.transpose(-2, -3).reshape(*lead, lq, width)


def _init_linear(layer: nn.Linear, std: float = 0.02) -> nn.Linear:
    nn.init.normal_(layer.weight, 0.0, std)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)
    return layer


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.to_q = _init_linear(nn.Linear(dim, dim))
        self.to_k = _init_linear(nn.Linear(dim, dim))
        self.to_v = _init_linear(nn.Linear(dim, dim))
        self.out = _init_linear(nn.Linear(dim, dim))

    def forward(self, x, context=None, mask=None):
        ctx = x if context is None else context
        h = attention(self.to_q(x), self.to_k(ctx), self.to_v(ctx), self.heads, mask)
        return self.out(h)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int):
        super().__init__()
        self.fc1 = _init_linear(nn.Linear(dim, dim * mult))
        self.fc2 = _init_linear(nn.Linear(dim * mult, dim))

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class TimestepScale(nn.Module):
    """Per-channel RMSNorm scale ``1 + A emb(t)``; A starts at zero so the scale starts at one."""

    def __init__(self, time_dim: int, dim: int):
        super().__init__()
        self.proj = nn.Linear(time_dim, dim)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, temb):
        return 1.0 + self.proj(temb)


NORM_SLOTS = ("spatial", "st", "cross", "ffn")


class BaseBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.scales = nn.ModuleDict({k: TimestepScale(cfg.time_dim, cfg.dim) for k in NORM_SLOTS})
        self.attn_spatial = Attention(cfg.dim, cfg.heads)
        self.attn_st = Attention(cfg.dim, cfg.heads)
        self.cross = Attention(cfg.dim, cfg.heads)
        self.ffn = FeedForward(cfg.dim, cfg.ffn_mult)

    def timestep_scales(self, temb: torch.Tensor) -> dict[str, torch.Tensor]:
        return {k: m(temb) for k, m in self.scales.items()}

    def forward(self, x, text, text_mask, temb, hook: Optional[Hook] = None):
        """x: (N, f, s, d); text: (N, L, d); text_mask: (N, L); temb: (N, time_dim)."""
        N, f, s, d = x.shape
        sc = {k: v[:, None, None, :] for k, v in self.timestep_scales(temb).items()}

        h = rms_norm(x, sc["spatial"]).reshape(N * f, s, d)
        x = x + self.attn_spatial(h).reshape(N, f, s, d)
        if hook is not None:
            x = hook(x)

        h = rms_norm(x, sc["st"]).reshape(N, f * s, d)
        x = x + self.attn_st(h).reshape(N, f, s, d)

        h = rms_norm(x, sc["cross"]).reshape(N, f * s, d)
        x = x + self.cross(h, context=text, mask=text_mask[:, None, :]).reshape(N, f, s, d)

        x = x + self.ffn(rms_norm(x, sc["ffn"]))
        return x


class Backbone(nn.Module):
    """Velocity predictor for latent batches of shape (B, n, f, c, h, w)."""

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        d, p = cfg.dim, cfg.patch
        self.patch_embed = _init_linear(nn.Linear(cfg.channels * p * p, d))
        self.pos_spatial = nn.Parameter(torch.randn(cfg.tokens, d) * 0.02)
        self.pos_frame = nn.Parameter(torch.randn(cfg.max_frames, d) * 0.02)
        self.text_embed = nn.Embedding(cfg.vocab + 1, d)
        nn.init.normal_(self.text_embed.weight, 0.0, 0.02)
        self.pos_text = nn.Parameter(torch.randn(cfg.max_prompt + 1, d) * 0.02)
        self.blocks = nn.ModuleList(BaseBlock(cfg) for _ in range(cfg.blocks))
        self.final_scale = TimestepScale(cfg.time_dim, d)
        self.unpatch = _init_linear(nn.Linear(d, cfg.channels * p * p))
        self.frozen = False

    def freeze(self) -> "Backbone":
        self.requires_grad_(False)
        self.frozen = True
        return self

    def embed_prompt(self, ids: torch.Tensor) -> torch.Tensor:
        return self.text_embed(ids) + self.pos_text[: ids.shape[1]]

    def forward(self, z, t, prompt_ids, prompt_mask, hooks: Optional[Sequence[Optional[Hook]]] = None):
        cfg = self.cfg
        B, n, f, c, h, w = z.shape
        if f > cfg.max_frames:
            raise ValueError(f"{f} frames exceeds max_frames={cfg.max_frames}")
        if hooks is not None and len(hooks) != len(self.blocks):
            raise ValueError(f"{len(hooks)} hooks for {len(self.blocks)} blocks")
        t = torch.as_tensor(t, dtype=z.dtype).reshape(-1).expand(B)

        x = self.patch_embed(patchify(z, cfg.patch))  # (B, n, f, s, d)
        x = x + self.pos_spatial + self.pos_frame[:f, None, :]
        s, d = x.shape[-2:]
        x = x.reshape(B * n, f, s, d)

        text = self.embed_prompt(prompt_ids).repeat_interleave(n, dim=0)
        tmask = prompt_mask.repeat_interleave(n, dim=0)
        temb = timestep_embedding(t, cfg.time_dim).repeat_interleave(n, dim=0)

        for b, block in enumerate(self.blocks):
            hook = None if hooks is None else hooks[b]
            if hook is not None:
                hook = _view_hook(hook, B, n)
            x = block(x, text, tmask, temb, hook)

        x = rms_norm(x, self.final_scale(temb)[:, None, None, :])
        out = unpatchify(self.unpatch(x), cfg.patch, h, w)
        return out.reshape(B, n, f, c, h, w)


def _view_hook(hook: Hook, B: int, n: int) -> Hook:
    def wrapped(x):
        N, f, s, d = x.shape
        return hook(x.reshape(B, n, f, s, d)).reshape(N, f, s, d)
    return wrapped


def weights_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
