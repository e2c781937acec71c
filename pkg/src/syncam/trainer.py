"""Training: frozen-base optimisation of the sync blocks, hybrid data, v2mv replacement, checkpoints.

All randomness flows through one ``numpy.random.Generator`` owned by the
trainer, drawn in a fixed order per step (sample, t, noise, prompt dropout,
replacement mask). Its state is stored in checkpoints, so a resumed run
replays the uninterrupted one exactly.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import geometry as geo
from .backbone import Backbone, ModelConfig, PromptSpec, prompt_batch, weights_checksum
from .flow import cfm_loss, forward_interpolate
from .scene.dataset import Dataset
from .scene.sampling import (
    DEFAULT_MAX_GAP,
    DEFAULT_PROBS,
    CurriculumSchedule,
    SampleKind,
    SubsetTable,
    TrainSample,
    curriculum_stage,
    hybrid_sampler,
    replicate_single_view,
    sample_multiview_frames,
    select_view_subset,
    validate_probs,
)
from .scene.static import static_filter
from .sync import SyncModel
from .tensorio import read_container, write_container

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


class FrozenBaseError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    total_steps: int = 2000
    batch_size: int = 4
    learning_rate: float = 1e-4
    source_probs: tuple = DEFAULT_PROBS
    curriculum: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    v2mv_mode: bool = False
    p_replace: float = 0.9
    seed: int = 0
    views: tuple = (2, 4)
    max_gap: int = DEFAULT_MAX_GAP
    p_uncond: float = 0.1
    loss_on_reference: bool = True
    check_every: int = 100

    def __post_init__(self):
        self.source_probs = tuple(float(p) for p in self.source_probs)
        self.views = tuple(int(v) for v in self.views)
        if isinstance(self.curriculum, (list, tuple)):
            self.curriculum = CurriculumSchedule(tuple(tuple(float(x) for x in s) for s in self.curriculum))
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.p_replace <= 1.0:
            raise ConfigError("p_replace must lie in [0, 1]")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ConfigError("p_uncond must lie in [0, 1]")
        try:
            validate_probs(self.source_probs)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        lo, hi = self.views
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad view range {self.views}")
        if self.v2mv_mode and lo < 2:
            raise ConfigError("v2mv training needs at least two views")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("total_steps and batch_size must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["curriculum"] = [list(s) for s in self.curriculum.stages]
        d["source_probs"] = list(self.source_probs)
        d["views"] = list(self.views)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# data


@dataclass
class TrainBatch:
    kind: SampleKind
    samples: list[TrainSample]
    bounds: Optional[tuple[float, float]] = None  # azimuth bounds the views were drawn under

    @property
    def views(self) -> int:
        return self.samples[0].videos.shape[0]

    def latents(self, dtype=torch.float64) -> torch.Tensor:
        """Pixels in [0, 1] mapped to the latent range [-1, 1]: (B, n, f, c, h, w)."""
        return torch.tensor(np.stack([2.0 * s.videos - 1.0 for s in self.samples]), dtype=dtype)

    @property
    def rigs(self) -> list[geo.CameraRig]:
        return [s.rig for s in self.samples]

    @property
    def prompts(self) -> list[PromptSpec]:
        return [s.prompt for s in self.samples]


class DataPipeline:
    """Draws training batches from a forged dataset with the hybrid sampler and angle curriculum."""

    def __init__(self, dataset: Dataset, cfg: TrainConfig, model_cfg: ModelConfig):
        self.ds = dataset
        self.cfg = cfg
        self.model_cfg = model_cfg
        if tuple(dataset.res) != (model_cfg.height, model_cfg.width):
            raise ConfigError(f"dataset resolution {dataset.res} does not match model "
                              f"{model_cfg.height}x{model_cfg.width}")
        if not dataset.scenes:
            raise ConfigError("dataset has no scenes")
        self.tables = [SubsetTable(s.rig, s.target) for s in dataset.scenes]
        self.max_cams = min(len(s.rig) for s in dataset.scenes)
        self.static_clips = [(v, p) for v, p in dataset.general_clips() if static_filter(v).is_static]

    def _prompt(self, text: str) -> PromptSpec:
        return PromptSpec.from_text(text, self.model_cfg.vocab, self.model_cfg.max_prompt)

    def _multiview_videos(self, v: int, lo: float, hi: float, rng) -> tuple[list[TrainSample], tuple]:
        # shrink v, then widen the bounds, until some scene admits a subset
        bounds = (lo, hi)
        while True:
            for vv in range(v, min(v, 2) - 1, -1):
                ok = [i for i, t in enumerate(self.tables) if t.get(vv, *bounds)]
                if ok:
                    break
            else:
                bounds = (max(0.0, bounds[0] - 10.0), min(180.0, bounds[1] + 10.0))
                warnings.warn(f"curriculum exhausted at {(lo, hi)}; relaxing to {bounds}")
                continue
            break
        out = []
        for _ in range(self.cfg.batch_size):
            i = ok[int(rng.integers(len(ok)))]
            rec = self.ds.scenes[i]
            order, sub = select_view_subset(rec.rig, vv, *bounds, rec.target, rng, self.tables[i])
            out.append(TrainSample(SampleKind.MULTI_VIEW_VIDEO, rec.videos[list(order)], geo.normalize_rig(sub),
                                   self._prompt(rec.prompt)))
        return out, bounds

    def _multiview_images(self, v: int, rng) -> list[TrainSample]:
        trajs = self.ds.trajectories()
        out = []
        for _ in range(self.cfg.batch_size):
            if trajs:
                seq = trajs[int(rng.integers(len(trajs)))]
                s = sample_multiview_frames(seq, v, self.cfg.max_gap, rng, self.model_cfg.vocab)
                out.append(TrainSample(s.kind, s.videos, s.rig, self._prompt(seq.prompt)))
            else:
                # no trajectories forged: one frame of a synchronized scene is a multi-view image
                rec = self.ds.scenes[int(rng.integers(len(self.ds.scenes)))]
                idx = rng.choice(len(rec.rig), size=min(v, len(rec.rig)), replace=False)
                k = int(rng.integers(rec.videos.shape[1]))
                out.append(TrainSample(SampleKind.MULTI_VIEW_IMAGE, rec.videos[idx, k:k + 1],
                                       geo.normalize_rig(rec.rig.subset(tuple(int(i) for i in idx))),
                                       self._prompt(rec.prompt)))
        return out

    def _single_view(self, v: int, rng) -> list[TrainSample]:
        out = []
        for _ in range(self.cfg.batch_size):
            if self.static_clips:
                video, text = self.static_clips[int(rng.integers(len(self.static_clips)))]
            else:
                # every synchronized camera is fixed, so its video is a static-camera clip
                rec = self.ds.scenes[int(rng.integers(len(self.ds.scenes)))]
                video, text = rec.videos[int(rng.integers(len(rec.rig)))], rec.prompt
            out.append(replicate_single_view(video, v, self._prompt(text)))
        return out

    def batch(self, step: int, rng: np.random.Generator) -> TrainBatch:
        kind = hybrid_sampler(rng, self.cfg.source_probs)
        lo_v, hi_v = self.cfg.views
        v = int(rng.integers(lo_v, hi_v + 1))
        if kind is SampleKind.MULTI_VIEW_VIDEO:
            samples, bounds = self._multiview_videos(min(v, self.max_cams), *curriculum_stage(
                self.cfg.curriculum, step % self.cfg.total_steps, self.cfg.total_steps), rng)
            return TrainBatch(kind, samples, bounds)
        if kind is SampleKind.MULTI_VIEW_IMAGE:
            return TrainBatch(kind, self._multiview_images(v, rng))
        return TrainBatch(kind, self._single_view(v, rng))


def base_batch(dataset: Dataset, batch_size: int, rng: np.random.Generator, cfg: ModelConfig,
               p_image: float = 0.2) -> tuple[torch.Tensor, list[PromptSpec]]:
    """Single-view clips (or single frames) for pretraining the base: (B, 1, f, c, h, w)."""
    image = rng.random() < p_image
    clips = dataset.general_clips()
    vids, prompts = [], []
    for _ in range(batch_size):
        j = int(rng.integers(len(dataset.scenes) + len(clips)))
        if j < len(dataset.scenes):
            rec = dataset.scenes[j]
            video, text = rec.videos[int(rng.integers(len(rec.rig)))], rec.prompt
        else:
            video, text = clips[j - len(dataset.scenes)]
        if image:
            k = int(rng.integers(video.shape[0]))
            video = video[k:k + 1]
        vids.append(video[None])
        prompts.append(PromptSpec.from_text(text, cfg.vocab, cfg.max_prompt))
    return torch.tensor(2.0 * np.stack(vids) - 1.0, dtype=torch.float64), prompts


# ---------------------------------------------------------------------------
# steps


def _check_finite(loss: torch.Tensor, what: str, **diag) -> None:
    if not torch.isfinite(loss):
        detail = ", ".join(f"{k}={v}" for k, v in diag.items())
        raise NonFiniteLossError(f"non-finite {what} loss ({detail})")


def step_loss(model: SyncModel, z0: torch.Tensor, cams, prompts: Sequence[Optional[PromptSpec]],
              t: torch.Tensor, noise: torch.Tensor, replace: Optional[torch.Tensor] = None,
              loss_on_reference: bool = True) -> torch.Tensor:
    """CFM loss of one batch; ``replace`` (B,) bool puts clean view-0 latents into z_t."""
    zt = forward_interpolate(z0, noise, t)
    if replace is not None and bool(replace.any()):
        zt = zt.clone()
        zt[replace, 0] = z0[replace, 0]
    ids, mask = prompt_batch(prompts, model.cfg)
    v = model(zt, t, ids, mask, cams)
    if replace is not None and not loss_on_reference:
        return cfm_loss(v[:, 1:], z0[:, 1:], noise[:, 1:])
    return cfm_loss(v, z0, noise)


def train_step(model: SyncModel, optimizer: torch.optim.Optimizer, batch: TrainBatch, t: torch.Tensor,
               noise: torch.Tensor, uncond: np.ndarray, replace: Optional[torch.Tensor] = None,
               loss_on_reference: bool = True) -> float:
    """One adaptive-moment update of the sync parameters; returns the pre-update loss."""
    z0 = batch.latents(noise.dtype)
    cams = model.camera_batch(batch.rigs)
    prompts = [None if u else p for u, p in zip(uncond, batch.prompts)]
    optimizer.zero_grad(set_to_none=True)
    loss = step_loss(model, z0, cams, prompts, t, noise, replace, loss_on_reference)
    _check_finite(loss, "training", kind=batch.kind.value, views=batch.views, t=t.tolist())
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def make_optimizer(params, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)


def draw_noise(rng: np.random.Generator, shape, dtype=torch.float64) -> torch.Tensor:
    return torch.tensor(rng.standard_normal(shape), dtype=dtype)


def pretrain_base(backbone: Backbone, dataset: Dataset, steps: int, rng: np.random.Generator, lr: float = 1e-3,
                  batch_size: int = 4, p_uncond: float = 0.1,
                  on_step: Optional[Callable[[int, float], None]] = None) -> list[float]:
    """Fit the single-view base model on monocular clips before it is frozen."""
    if backbone.frozen:
        raise ConfigError("base is already frozen")
    opt = make_optimizer(backbone.parameters(), lr)
    losses = []
    for k in range(steps):
        z0, prompts = base_batch(dataset, batch_size, rng, backbone.cfg)
        t = torch.tensor(rng.random(batch_size), dtype=z0.dtype)
        noise = draw_noise(rng, z0.shape, z0.dtype)
        drop = rng.random(batch_size) < p_uncond
        ids, mask = prompt_batch([None if d else p for d, p in zip(drop, prompts)], backbone.cfg)
        opt.zero_grad(set_to_none=True)
        loss = cfm_loss(backbone(forward_interpolate(z0, noise, t), t, ids, mask), z0, noise)
        _check_finite(loss, "pretraining", step=k)
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if on_step:
            on_step(k, losses[-1])
    return losses


class Trainer:
    """Owns the model, optimizer and generator for a sync-module training run."""

    def __init__(self, model: SyncModel, cfg: TrainConfig, pipeline: Optional[DataPipeline] = None):
        if not model.backbone.frozen:
            model.backbone.freeze()
        self.model = model
        self.cfg = cfg
        self.pipeline = pipeline
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self.optimizer = make_optimizer(list(model.sync.parameters()), cfg.learning_rate)
        self.step = 0
        self.base_checksum = weights_checksum(model.backbone)
        self.dtype = next(model.parameters()).dtype

    def draws(self, batch: TrainBatch):
        """Per-step randomness in its fixed order: t, noise, prompt dropout, replacement."""
        B = len(batch.samples)
        t = torch.tensor(self.rng.random(B), dtype=self.dtype)
        noise = draw_noise(self.rng, (B,) + batch.samples[0].videos.shape, self.dtype)
        uncond = self.rng.random(B) < self.cfg.p_uncond
        replace = None
        if self.cfg.v2mv_mode:
            if batch.views < 2:
                raise ConfigError("v2mv training needs at least two views")
            replace = torch.tensor(self.rng.random(B) < self.cfg.p_replace)
        return t, noise, uncond, replace

    def train_one(self) -> float:
        if self.pipeline is None:
            raise ConfigError("trainer has no data pipeline")
        batch = self.pipeline.batch(self.step, self.rng)
        t, noise, uncond, replace = self.draws(batch)
        loss = train_step(self.model, self.optimizer, batch, t, noise, uncond, replace,
                          self.cfg.loss_on_reference)
        self.step += 1
        if self.cfg.check_every and self.step % self.cfg.check_every == 0:
            self.verify_frozen()
        return loss

    def run(self, steps: int, on_step: Optional[Callable[[int, float], None]] = None) -> list[float]:
        losses = []
        for _ in range(steps):
            losses.append(self.train_one())
            if on_step:
                on_step(self.step, losses[-1])
        return losses

    def verify_frozen(self) -> None:
        if weights_checksum(self.model.backbone) != self.base_checksum:
            raise FrozenBaseError(f"base weights changed by step {self.step}")

    # -- checkpoints --------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self)

    @classmethod
    def load(cls, path, pipeline: Optional[DataPipeline] = None) -> "Trainer":
        return load_checkpoint(path, pipeline)


def _np(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float64)


def save_checkpoint(path, trainer: Trainer) -> None:
    model = trainer.model
    params = list(model.sync.parameters())
    optim = {}
    step_dtype = None
    for i, p in enumerate(params):
        st = trainer.optimizer.state.get(p)
        if not st:
            continue
        optim[f"{i}.exp_avg"] = _np(st["exp_avg"])
        optim[f"{i}.exp_avg_sq"] = _np(st["exp_avg_sq"])
        optim[f"{i}.step"] = _np(torch.as_tensor(st["step"]))
        step_dtype = str(torch.as_tensor(st["step"]).dtype)
    sections = {
        "base": {k: _np(v) for k, v in model.backbone.state_dict().items()},
        "sync": {k: _np(v) for k, v in model.sync.state_dict().items()},
        "optim": optim,
    }
    meta = {
        "version": CHECKPOINT_VERSION,
        "step": trainer.step,
        "rng_state": trainer.rng.bit_generator.state,
        "train_config": trainer.cfg.to_dict(),
        "model_config": model.cfg.to_dict(),
        "camera_repr": model.camera_repr,
        "attn_mode": model.attn_mode,
        "base_checksum": trainer.base_checksum,
        "dtype": str(trainer.dtype),
        "step_dtype": step_dtype,
    }
    write_container(path, sections, meta)


def _torch_dtype(name: str) -> torch.dtype:
    return getattr(torch, name.replace("torch.", ""))


def load_model(sections: dict, meta: dict) -> SyncModel:
    dtype = _torch_dtype(meta.get("dtype", "torch.float64"))
    backbone = Backbone(ModelConfig(**meta["model_config"])).to(dtype)
    backbone.load_state_dict({k: torch.tensor(v, dtype=dtype) for k, v in sections["base"].items()})
    backbone.freeze()
    if weights_checksum(backbone) != meta["base_checksum"]:
        raise CheckpointError("base weights do not match the checksum recorded in the checkpoint")
    model = SyncModel(backbone, meta["camera_repr"], meta["attn_mode"])
    model.sync.load_state_dict({k: torch.tensor(v, dtype=dtype) for k, v in sections["sync"].items()})
    return model


def load_checkpoint(path, pipeline: Optional[DataPipeline] = None) -> Trainer:
    try:
        sections, meta = read_container(path)
    except ValueError as e:
        raise CheckpointError(f"{path}: {e}") from e
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {meta.get('version')} unsupported")
    model = load_model(sections, meta)
    trainer = Trainer(model, TrainConfig.from_dict(meta["train_config"]), pipeline)
    trainer.base_checksum = meta["base_checksum"]
    trainer.step = meta["step"]
    trainer.rng.bit_generator.state = meta["rng_state"]
    optim = sections["optim"]
    if optim:
        step_dtype = _torch_dtype(meta["step_dtype"])
        for i, p in enumerate(trainer.optimizer.param_groups[0]["params"]):
            if f"{i}.step" not in optim:
                continue
            trainer.optimizer.state[p] = {
                "step": torch.tensor(optim[f"{i}.step"], dtype=step_dtype),
                "exp_avg": torch.tensor(optim[f"{i}.exp_avg"], dtype=p.dtype),
                "exp_avg_sq": torch.tensor(optim[f"{i}.exp_avg_sq"], dtype=p.dtype),
            }
    return trainer


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationSet:
    """Fixed batches with pre-drawn t and noise so losses are comparable across training."""

    z0: list[torch.Tensor]
    rigs: list[list[geo.CameraRig]]
    prompts: list[list[PromptSpec]]
    t: list[torch.Tensor]
    noise: list[torch.Tensor]

    @classmethod
    def from_dataset(cls, dataset: Dataset, cfg: ModelConfig, views: int = 4, batch_size: int = 4,
                     repeats: int = 2, seed: int = 1234, dtype=torch.float64) -> "ValidationSet":
        rng = np.random.default_rng(seed)
        z0, rigs, prompts, ts, noise = [], [], [], [], []
        recs = [r for r in dataset.scenes for _ in range(repeats)]
        for k in range(0, len(recs), batch_size):
            chunk = recs[k:k + batch_size]
            n = min(views, min(len(r.rig) for r in chunk))
            z = torch.tensor(np.stack([2.0 * r.videos[:n] - 1.0 for r in chunk]), dtype=dtype)
            z0.append(z)
            rigs.append([geo.normalize_rig(r.rig.subset(tuple(range(n)))) for r in chunk])
            prompts.append([PromptSpec.from_text(r.prompt, cfg.vocab, cfg.max_prompt) for r in chunk])
            # stratified t so every batch covers the whole schedule
            ts.append(torch.tensor((np.arange(len(chunk)) + rng.random(len(chunk))) / len(chunk), dtype=dtype))
            noise.append(draw_noise(rng, z.shape, dtype))
        return cls(z0, rigs, prompts, ts, noise)

    @torch.no_grad()
    def loss(self, model: SyncModel, use_sync: bool = True) -> float:
        total = count = 0.0
        for z0, rigs, prompts, t, noise in zip(self.z0, self.rigs, self.prompts, self.t, self.noise):
            cams = model.camera_batch(rigs) if use_sync else None
            total += float(step_loss(model, z0, cams, prompts, t, noise)) * len(rigs)
            count += len(rigs)
        return total / count


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_error: float
    group_errors: dict[str, float]
    probes: list[tuple[str, tuple[int, ...], float, float, float]]  # name, index, analytic, numeric, error

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol

    def table(self) -> str:
        rows = [f"{'parameter group':<40}{'worst rel. error':>18}"]
        rows += [f"{g:<40}{e:>18.3e}" for g, e in sorted(self.group_errors.items())]
        rows.append(f"{'max':<40}{self.max_error:>18.3e}")
        return "\n".join(rows)


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def grad_check(module: torch.nn.Module, loss_fn: Callable[[], torch.Tensor], probe_count: int,
               rng: np.random.Generator, h: float = 1e-5,
               params: Optional[Sequence[tuple[str, torch.nn.Parameter]]] = None) -> GradCheckReport:
    """Compare autograd against central differences on randomly chosen scalar parameters.

    Probes are drawn uniformly over the scalar entries of ``params`` (all
    named parameters of ``module`` by default), regardless of requires_grad.
    """
    named = list(params if params is not None else module.named_parameters())
    for _, p in named:
        if p.dtype != torch.float64:
            raise ConfigError("gradient checking needs a 64-bit model")
    saved = [p.requires_grad for _, p in named]
    for _, p in named:
        p.requires_grad_(True)
        p.grad = None
    try:
        loss = loss_fn()
        grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
        sizes = np.array([p.numel() for _, p in named], dtype=np.float64)
        probes, groups = [], {}
        with torch.no_grad():
            for _ in range(probe_count):
                k = int(rng.choice(len(named), p=sizes / sizes.sum()))
                name, p = named[k]
                flat = int(rng.integers(p.numel()))
                idx = tuple(int(i) for i in np.unravel_index(flat, tuple(p.shape)))
                g = grads[k]
                ga = 0.0 if g is None else float(g[idx])
                orig = p[idx].clone()
                p[idx] = orig + h
                lp = float(loss_fn())
                p[idx] = orig - h
                lm = float(loss_fn())
                p[idx] = orig
                gfd = (lp - lm) / (2 * h)
                err = relative_error(ga, gfd)
                probes.append((name, idx, ga, gfd, err))
                group = name.rsplit(".", 1)[0]
                groups[group] = max(groups.get(group, 0.0), err)
    finally:
        for (_, p), r in zip(named, saved):
            p.requires_grad_(r)
    return GradCheckReport(max((e for *_, e in probes), default=0.0), groups, probes)


def desk_gradcheck(probe_count: int = 50, seed: int = 0, model_cfg: Optional[ModelConfig] = None,
                   views: int = 2, frames: int = 2, perturb: float = 0.15) -> GradCheckReport:
    """Gradient check of the full desk model on a random batch.

    Every parameter is jittered by N(0, perturb) first. At a fresh init the
    attention logits are nearly flat and some gradients sit below 1e-9,
    where central differences are dominated by float64 round-off.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    cfg = model_cfg or ModelConfig()
    backbone = Backbone(cfg).double()
    model = SyncModel(backbone)
    with torch.no_grad():
        # move off the zero init so every path through the sync blocks carries gradient
        for p in model.parameters():
            p.add_(torch.tensor(rng.normal(0, perturb, p.shape), dtype=p.dtype))
    z0 = torch.tensor(rng.uniform(-1, 1, (1, views, frames, cfg.channels, cfg.height, cfg.width)))
    noise = torch.tensor(rng.standard_normal(z0.shape))
    t = torch.tensor([0.37])
    rig = geo.normalize_rig(geo.CameraRig(
        tuple(geo.sample_camera(geo.CameraConstraints(), (0, 0, 0.5), rng) for _ in range(views)),
        geo.CameraIntrinsics.from_fov(cfg.height, cfg.width)))
    cams = model.camera_batch([rig])
    prompts = [PromptSpec.from_text("a red sphere moving on a gray plane", cfg.vocab, cfg.max_prompt)]
    loss_fn = lambda: step_loss(model, z0, cams, prompts, t, noise)
    return grad_check(model, loss_fn, probe_count, rng)


def config_json(cfg: TrainConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
