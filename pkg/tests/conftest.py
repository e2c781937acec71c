import numpy as np
import pytest
import torch

from syncam import geometry as geo
from syncam.backbone import Backbone, ModelConfig
from syncam.scene.dataset import forge_dataset

TINY = ModelConfig(height=16, width=16, patch=4, dim=16, heads=2, blocks=2, max_frames=8)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def tiny_backbone():
    torch.manual_seed(0)
    return Backbone(TINY).double()


def make_rig(seed: int, n: int, h: int = 16, w: int = 16) -> geo.CameraRig:
    rng = np.random.default_rng(seed)
    cams = tuple(geo.sample_camera(geo.CameraConstraints(), (0, 0, 0.5), rng) for _ in range(n))
    return geo.CameraRig(cams, geo.CameraIntrinsics.from_fov(h, w))


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Six 16x16 scenes with four cameras and four frames, plus trajectories and general clips."""
    root = tmp_path_factory.mktemp("ds")
    forge_dataset(root, scenes=6, cams=4, frames=4, res=(16, 16), seed=3, trajectories=2, traj_frames=12,
                  general=4)
    return root


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
