import numpy as np
import pytest
import torch

from syncam.backbone import PromptSpec
from syncam.flow import GuidanceWeights
from syncam.inference import decode, encode, generate, rerender
from syncam.sync import SyncModel

from conftest import make_rig


def _model(tiny_backbone):
    model = SyncModel(tiny_backbone.freeze())
    with torch.no_grad():
        for blk in model.sync:  # give the sync path something to do
            blk.projector.weight.normal_(0, 0.05)
    return model


def test_encode_decode_round_trip_float32_exact():
    x = np.random.default_rng(0).random((2, 3, 4, 4)).astype(np.float32)
    back = decode(encode(x))
    assert np.array_equal(back.astype(np.float32), x)


def test_generate_shapes_and_determinism(tiny_backbone):
    model = _model(tiny_backbone)
    rigs = [make_rig(0, 3), make_rig(1, 3)]
    prompts = [PromptSpec.from_text("a red box"), None]
    a = generate(model, rigs, prompts, 2, np.random.default_rng(4), steps=4)
    b = generate(model, rigs, prompts, 2, np.random.default_rng(4), steps=4)
    assert a.shape == (2, 3, 2, 3, 16, 16) and np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0
    with pytest.raises(ValueError):
        generate(model, [make_rig(0, 2), make_rig(1, 3)], [None, None], 2, np.random.default_rng(0), steps=2)


def test_single_camera_generation_is_base_sampling(tiny_backbone):
    model = _model(tiny_backbone)
    out = generate(model, [make_rig(0, 1)], [None], 2, np.random.default_rng(1), steps=3)
    assert out.shape[1] == 1


def test_rerender_reference_view_is_exact(tiny_backbone):
    model = _model(tiny_backbone)
    video = np.random.default_rng(2).random((2, 3, 16, 16)).astype(np.float32).astype(np.float64)
    rig = make_rig(5, 3)
    for w in (GuidanceWeights(), GuidanceWeights(1.0, 1.0)):
        out = rerender(model, video, rig, PromptSpec.from_text("x"), np.random.default_rng(0), steps=3, weights=w)
        assert out.shape == (3, 2, 3, 16, 16)
        assert np.array_equal(out[0], video)
    with pytest.raises(ValueError):
        rerender(model, np.zeros((2, 3, 8, 8)), rig, None, np.random.default_rng(0), steps=2)


def test_rerender_unit_guidance_skips_extra_branches(tiny_backbone):
    model = _model(tiny_backbone)
    calls = []
    orig = model.forward
    model.forward = lambda *a, **k: calls.append(1) or orig(*a, **k)
    video = np.random.default_rng(3).random((2, 3, 16, 16))
    rerender(model, video, make_rig(0, 2), None, np.random.default_rng(0), steps=2, weights=GuidanceWeights(1, 1))
    assert len(calls) == 2
    calls.clear()
    rerender(model, video, make_rig(0, 2), None, np.random.default_rng(0), steps=2)
    assert len(calls) == 6


def test_shared_noise_flag(tiny_backbone):
    from syncam.inference import initial_noise
    z = initial_noise(np.random.default_rng(0), (2, 3, 1, 3, 4, 4), True, torch.float64)
    assert torch.equal(z[:, 0], z[:, 2]) and not torch.equal(z[0], z[1])
    z = initial_noise(np.random.default_rng(0), (2, 3, 1, 3, 4, 4), False, torch.float64)
    assert not torch.equal(z[:, 0], z[:, 1])
    # identical cameras and shared noise give identical views
    model = SyncModel(tiny_backbone.freeze())
    rig = make_rig(0, 1)
    from syncam import geometry as geo
    twin = geo.CameraRig((rig[0], rig[0]), rig.intrinsics)
    out = generate(model, [twin], [None], 2, np.random.default_rng(1), steps=3, shared_noise=True)
    assert np.array_equal(out[0, 0], out[0, 1])
