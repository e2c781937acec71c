import dataclasses

import numpy as np
import pytest
import torch

from syncam import geometry as geo
from syncam.backbone import Backbone, PromptSpec, weights_checksum
from syncam.scene import Dataset, SampleKind
from syncam.sync import SyncModel
from syncam.tensorio import read_container, write_container
from syncam.trainer import (
    CheckpointError,
    ConfigError,
    DataPipeline,
    FrozenBaseError,
    NonFiniteLossError,
    TrainBatch,
    TrainConfig,
    Trainer,
    ValidationSet,
    base_batch,
    grad_check,
    load_checkpoint,
    make_optimizer,
    pretrain_base,
    relative_error,
    step_loss,
)

from conftest import TINY, make_rig


def _trainer(root, **kw):
    torch.manual_seed(0)
    model = SyncModel(Backbone(TINY).double())
    cfg = TrainConfig(total_steps=40, batch_size=2, learning_rate=1e-3, **kw)
    return Trainer(model, cfg, DataPipeline(Dataset(root), cfg, TINY))


def _sync_state(model):
    return {k: v.clone() for k, v in model.sync.state_dict().items()}


# --- configuration ------------------------------------------------------------------


def test_config_validation_and_round_trip():
    cfg = TrainConfig(v2mv_mode=True, p_replace=0.5, views=(2, 3))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    for bad in (dict(learning_rate=0.0), dict(p_replace=1.5), dict(source_probs=(0.5, 0.5, 0.5)),
                dict(views=(3, 2)), dict(v2mv_mode=True, views=(1, 3)), dict(batch_size=0)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_pipeline_rejects_resolution_mismatch(small_dataset):
    with pytest.raises(ConfigError):
        DataPipeline(Dataset(small_dataset), TrainConfig(), dataclasses.replace(TINY, height=32, width=32))


# --- data pipeline ------------------------------------------------------------------


def test_pipeline_batches_follow_curriculum(small_dataset):
    ds = Dataset(small_dataset)
    cfg = TrainConfig(total_steps=10, batch_size=3, source_probs=(1.0, 0.0, 0.0))
    pipe = DataPipeline(ds, cfg, TINY)
    rng = np.random.default_rng(0)
    for step in range(10):
        b = pipe.batch(step, rng)
        assert b.kind is SampleKind.MULTI_VIEW_VIDEO and len(b.samples) == 3
        assert 2 <= b.views <= 4
        lo, hi = b.bounds
        for s in b.samples:
            assert np.array_equal(s.rig[0].R, np.eye(3))
            for i in range(len(s.rig)):
                for j in range(i + 1, len(s.rig)):
                    rel = geo.relative_pose(s.rig[i], s.rig[j])
                    assert np.isfinite(rel.R).all()
        assert b.latents().shape[:2] == (3, b.views)
        assert float(b.latents().min()) >= -1.0 and float(b.latents().max()) <= 1.0


def test_pipeline_other_sources(small_dataset):
    ds = Dataset(small_dataset)
    rng = np.random.default_rng(1)
    pipe = DataPipeline(ds, TrainConfig(source_probs=(0.0, 1.0, 0.0)), TINY)
    b = pipe.batch(0, rng)
    assert b.kind is SampleKind.MULTI_VIEW_IMAGE and b.samples[0].videos.shape[1] == 1
    pipe = DataPipeline(ds, TrainConfig(source_probs=(0.0, 0.0, 1.0)), TINY)
    b = pipe.batch(0, rng)
    assert b.kind is SampleKind.SINGLE_VIEW_VIDEO
    v = b.samples[0].videos
    assert all(np.array_equal(v[0], v[i]) for i in range(len(v)))


def test_base_batch_shapes(small_dataset):
    z0, prompts = base_batch(Dataset(small_dataset), 3, np.random.default_rng(0), TINY)
    assert z0.shape[:2] == (3, 1) and z0.shape[3:] == (3, 16, 16) and len(prompts) == 3


# --- training ------------------------------------------------------------------------


def test_training_updates_sync_only(small_dataset):
    tr = _trainer(small_dataset)
    base = weights_checksum(tr.model.backbone)
    before = _sync_state(tr.model)
    losses = tr.run(5)
    assert len(losses) == 5 and all(np.isfinite(losses))
    assert weights_checksum(tr.model.backbone) == base
    after = tr.model.sync.state_dict()
    assert any(not torch.equal(before[k], after[k]) for k in before)
    tr.verify_frozen()
    with torch.no_grad():
        next(tr.model.backbone.parameters()).add_(1e-3)
    with pytest.raises(FrozenBaseError):
        tr.verify_frozen()


def test_single_batch_overfit():
    """The whole model (base unfrozen) memorises one fixed batch."""
    torch.manual_seed(0)
    cfg = dataclasses.replace(TINY, dim=32)
    model = SyncModel(Backbone(cfg).double())
    rng = np.random.default_rng(0)
    z0 = torch.tensor(rng.uniform(-1, 1, (1, 2, 2, 3, 16, 16)))
    noise = torch.tensor(rng.standard_normal(z0.shape))
    t = torch.tensor([0.5])
    cams = model.camera_batch([make_rig(0, 2)])
    prompts = [PromptSpec.from_text("x")]
    opt = make_optimizer(model.parameters(), 3e-3)
    for k in range(500):
        opt.zero_grad()
        loss = step_loss(model, z0, cams, prompts, t, noise)
        loss.backward()
        opt.step()
        if k == 0:
            first = float(loss.detach())
    assert float(loss.detach()) < 0.1 * first


def test_replacement_mask_semantics(tiny_backbone):
    model = SyncModel(tiny_backbone)
    rng = np.random.default_rng(2)
    z0 = torch.tensor(rng.uniform(-1, 1, (3, 2, 2, 3, 16, 16)))
    noise = torch.tensor(rng.standard_normal(z0.shape))
    t = torch.tensor([0.2, 0.5, 0.9])
    cams = model.camera_batch([make_rig(k, 2) for k in range(3)])
    prompts = [PromptSpec.from_text("a")] * 3
    none = step_loss(model, z0, cams, prompts, t, noise)
    off = step_loss(model, z0, cams, prompts, t, noise, replace=torch.zeros(3, dtype=torch.bool))
    assert torch.equal(none, off)
    on = step_loss(model, z0, cams, prompts, t, noise, replace=torch.ones(3, dtype=torch.bool))
    assert not torch.equal(none, on)
    excl = step_loss(model, z0, cams, prompts, t, noise, replace=torch.ones(3, dtype=torch.bool),
                     loss_on_reference=False)
    assert not torch.equal(on, excl)


def test_replacement_frequency(small_dataset):
    tr = _trainer(small_dataset, v2mv_mode=True, p_replace=0.9)
    batch = tr.pipeline.batch(0, np.random.default_rng(0))
    hits = total = 0
    for _ in range(5000):
        _, _, _, replace = tr.draws(batch)
        hits += int(replace.sum())
        total += len(replace)
    assert abs(hits / total - 0.9) < 0.01
    tr_off = _trainer(small_dataset)
    assert tr_off.draws(batch)[3] is None


def test_non_finite_loss_raises(small_dataset):
    tr = _trainer(small_dataset)
    with torch.no_grad():
        tr.model.sync[0].projector.weight.fill_(float("nan"))
    with pytest.raises(NonFiniteLossError):
        tr.train_one()


def test_pretrain_base_reduces_loss(small_dataset):
    torch.manual_seed(0)
    bb = Backbone(TINY).double()
    losses = pretrain_base(bb, Dataset(small_dataset), 60, np.random.default_rng(0), lr=3e-3)
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    bb.freeze()
    with pytest.raises(ConfigError):
        pretrain_base(bb, Dataset(small_dataset), 1, np.random.default_rng(0))


def test_validation_set_is_fixed(small_dataset):
    ds = Dataset(small_dataset)
    a = ValidationSet.from_dataset(ds, TINY)
    b = ValidationSet.from_dataset(ds, TINY)
    torch.manual_seed(0)
    model = SyncModel(Backbone(TINY).double())
    assert a.loss(model) == b.loss(model)
    # zero-initialised sync modules leave the base prediction untouched
    assert a.loss(model) == pytest.approx(a.loss(model, use_sync=False), abs=1e-12)


# --- checkpoints ---------------------------------------------------------------------


def test_checkpoint_round_trip_is_bitwise(small_dataset, tmp_path):
    tr = _trainer(small_dataset)
    tr.run(3)
    tr.save(tmp_path / "a.scmc")
    back = load_checkpoint(tmp_path / "a.scmc", tr.pipeline)
    assert back.step == 3 and back.cfg == tr.cfg
    for k, v in tr.model.state_dict().items():
        assert torch.equal(v, back.model.state_dict()[k])
    assert back.rng.bit_generator.state == tr.rng.bit_generator.state
    for p, q in zip(tr.optimizer.param_groups[0]["params"], back.optimizer.param_groups[0]["params"]):
        for key in ("exp_avg", "exp_avg_sq", "step"):
            assert torch.equal(tr.optimizer.state[p][key], back.optimizer.state[q][key])


def test_resume_matches_uninterrupted_run(small_dataset, tmp_path):
    full = _trainer(small_dataset, v2mv_mode=True)
    ref = full.run(6)
    part = _trainer(small_dataset, v2mv_mode=True)
    first = part.run(3)
    part.save(tmp_path / "mid.scmc")
    resumed = load_checkpoint(tmp_path / "mid.scmc", DataPipeline(Dataset(small_dataset), part.cfg, TINY))
    second = resumed.run(3)
    assert first + second == ref
    for k, v in full.model.sync.state_dict().items():
        assert torch.equal(v, resumed.model.sync.state_dict()[k])


def test_checkpoint_errors(small_dataset, tmp_path):
    tr = _trainer(small_dataset)
    path = tmp_path / "c.scmc"
    tr.save(path)
    raw = path.read_bytes()
    (tmp_path / "cut.scmc").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.scmc")
    sections, meta = read_container(path)
    meta["version"] = 999
    write_container(tmp_path / "v.scmc", sections, meta)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "v.scmc")
    sections, meta = read_container(path)
    k = next(iter(sections["base"]))
    sections["base"][k] = sections["base"][k] + 1.0
    write_container(tmp_path / "b.scmc", sections, meta)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "b.scmc")


# --- gradient checking ------------------------------------------------------------------


def test_grad_check_on_linear_model():
    torch.manual_seed(0)
    lin = torch.nn.Linear(5, 3).double()
    x = torch.randn(7, 5, dtype=torch.float64)
    y = torch.randn(7, 3, dtype=torch.float64)
    rep = grad_check(lin, lambda: ((lin(x) - y) ** 2).sum(), 40, np.random.default_rng(0))
    assert rep.max_error < 1e-9 and len(rep.probes) == 40
    assert set(rep.group_errors) <= {"weight", "bias"}


def test_grad_check_dead_path_and_flag_restore():
    torch.manual_seed(0)
    net = torch.nn.ModuleDict({"used": torch.nn.Linear(3, 1), "unused": torch.nn.Linear(3, 1)}).double()
    net["unused"].requires_grad_(False)
    x = torch.randn(4, 3, dtype=torch.float64)
    rep = grad_check(net, lambda: net["used"](x).pow(2).sum(), 60, np.random.default_rng(1))
    dead = [p for p in rep.probes if p[0].startswith("unused")]
    assert dead and all(p[2] == 0.0 and p[3] == 0.0 and p[4] == 0.0 for p in dead)
    assert not any(p.requires_grad for p in net["unused"].parameters())


class _WrongSquare(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * 3.0 * x  # should be 2x


def test_grad_check_detects_wrong_backward():
    torch.manual_seed(0)
    lin = torch.nn.Linear(4, 2).double()
    x = torch.randn(5, 4, dtype=torch.float64)
    rep = grad_check(lin, lambda: _WrongSquare.apply(lin(x)).sum(), 20, np.random.default_rng(0))
    assert not rep.passed(1e-4) and rep.max_error > 0.1


def test_grad_check_needs_float64():
    lin = torch.nn.Linear(2, 1)
    with pytest.raises(ConfigError):
        grad_check(lin, lambda: lin(torch.ones(1, 2)).sum(), 1, np.random.default_rng(0))


def test_relative_error_guard():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
