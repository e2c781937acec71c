import json
from collections import Counter

import numpy as np
import pytest

from syncam import geometry as geo
from syncam.backbone import PromptSpec
from syncam.scene import (
    CurriculumExhaustedError,
    CurriculumSchedule,
    Dataset,
    SampleKind,
    SamplingError,
    TrajectorySequence,
    curriculum_stage,
    forge_dataset,
    hybrid_sampler,
    random_scene,
    render_scene,
    replicate_single_view,
    sample_multiview_frames,
    select_view_subset,
    static_filter,
)
from syncam.scene.dataset import dataset_checksum, forge_scene
from syncam.scene.render import Subject, SceneSpec, default_intrinsics, render_view
from syncam.scene.sampling import SubsetTable, admissible_subsets, validate_probs

import calib
from conftest import make_rig


# --- renderer ------------------------------------------------------------------------


def test_render_is_deterministic_and_in_range():
    spec, rig, res = forge_scene(11, 3, 2, (16, 16))
    spec2, rig2, res2 = forge_scene(11, 3, 2, (16, 16))
    assert np.array_equal(res.videos, res2.videos)
    assert res.videos.shape == (3, 2, 3, 16, 16)
    assert res.videos.min() >= 0.0 and res.videos.max() <= 1.0


def test_correspondences_reproject_to_same_surface_colour():
    spec, rig, res = forge_scene(5, 4, 3, (32, 32))
    corr = res.correspondences
    agree = total = 0
    for k in range(3):
        for i in range(4):
            for j in range(i + 1, 4):
                both = (corr[k, :, i, 2] > 0.5) & (corr[k, :, j, 2] > 0.5)
                ui = np.rint(corr[k, both, i, :2]).astype(int)
                uj = np.rint(corr[k, both, j, :2]).astype(int)
                ci = res.videos[i, k][:, ui[:, 1], ui[:, 0]]
                cj = res.videos[j, k][:, uj[:, 1], uj[:, 0]]
                agree += int(np.sum(np.max(np.abs(ci - cj), axis=0) <= 0.1))
                total += int(both.sum())
    assert total > 100 and agree / total > 0.95


def test_correspondence_points_project_consistently():
    spec, rig, res = forge_scene(6, 3, 1, (32, 32))
    pts = res.points[0]
    ok = np.isfinite(pts[:, 0])
    for j, cam in enumerate(rig.cameras):
        uv, _ = geo.project(cam, rig.intrinsics, pts[ok])
        vis = res.correspondences[0, ok, j, 2] > 0.5
        assert np.allclose(uv[vis], res.correspondences[0, ok, j, :2][vis], atol=1e-9)


def test_subject_visible_and_moves():
    spec = SceneSpec((Subject("sphere", "red", 0.5, "line", (-1.0, 0.0), (1.0, 0.0), 1.0),))
    assert np.allclose(spec.positions(0)[0], [-1.0, 0.0, 0.5])
    assert not np.allclose(spec.positions(5)[0], spec.positions(0)[0])
    frozen = SceneSpec(spec.subjects, frozen=True)
    assert np.allclose(frozen.positions(5)[0], frozen.positions(0)[0])
    cam = geo.SphericalPose(0.0, 20.0, 6.0, (0, 0, 0.5)).to_extrinsics()
    _, _, ids = render_view(spec, cam, default_intrinsics(32, 32), 0, 32, 32)
    assert (ids == 1).any() and (ids == 0).any() and (ids == -1).any()
    assert spec.prompt() == "a red sphere moving on a gray plane"


def test_shading_is_view_independent():
    """A ground point has the same colour from every camera."""
    spec = random_scene(np.random.default_rng(0))
    K = default_intrinsics(32, 32)
    a = geo.SphericalPose(10, 25, 6, (0, 0, 0.5)).to_extrinsics()
    b = geo.SphericalPose(80, 35, 5, (0, 0, 0.5)).to_extrinsics()
    X = np.array([[1.3, -0.2, 0.0]])
    cols = []
    for cam in (a, b):
        uv, _ = geo.project(cam, K, X)
        img, _, ids = render_view(spec, cam, K, 0, 32, 32)
        dirs = geo.pixel_rays(cam, K, uv)
        from syncam.scene.render import cast
        col, dist, hit = cast(spec, 0, cam.center, dirs)
        cols.append(col[0])
        assert hit[0] == 0
    assert np.allclose(cols[0], cols[1], atol=1e-12)


# --- sampling --------------------------------------------------------------------------


def test_hybrid_sampler_frequencies():
    rng = np.random.default_rng(0)
    counts = Counter(hybrid_sampler(rng) for _ in range(10000))
    freq = [counts[k] / 10000 for k in SampleKind]
    assert np.allclose(freq, [0.6, 0.2, 0.2], atol=0.02)
    with pytest.raises(ValueError):
        validate_probs((0.5, 0.5, 0.1))
    with pytest.raises(ValueError):
        validate_probs((1.2, -0.1, -0.1))
    assert all(hybrid_sampler(rng, (0, 1, 0)) is SampleKind.MULTI_VIEW_IMAGE for _ in range(100))


def test_curriculum_schedule():
    sch = CurriculumSchedule()
    assert curriculum_stage(sch, 0, 100) == (0.0, 60.0)
    assert curriculum_stage(sch, 19, 100) == (0.0, 60.0)
    assert curriculum_stage(sch, 20, 100) == (30.0, 90.0)
    assert curriculum_stage(sch, 99, 100) == (60.0, 120.0)
    with pytest.raises(ValueError):
        curriculum_stage(sch, 100, 100)
    with pytest.raises(ValueError):
        CurriculumSchedule(((0.5, 0, 60), (0.4, 0, 90), (1.0, 0, 120)))
    with pytest.raises(ValueError):
        CurriculumSchedule(((0.5, 0, 60),))


def test_view_subsets_respect_bounds():
    rng = np.random.default_rng(0)
    rig = make_rig(3, 8)
    target = (0, 0, 0.5)
    table = SubsetTable(rig, target)
    for lo, hi in [(0, 60), (30, 90), (60, 120)]:
        for _ in range(200):
            try:
                order, sub = select_view_subset(rig, 2, lo, hi, target, rng, table)
            except CurriculumExhaustedError:
                continue
            assert len(set(order)) == 2
            assert lo <= geo.azimuth_difference(sub[0], sub[1], target) <= hi
    with pytest.raises(CurriculumExhaustedError):
        select_view_subset(rig, 8, 170, 180, target, rng, table)


def test_admissible_subsets_exhaustive_oracle():
    rig = geo.CameraRig(tuple(geo.SphericalPose(a, 20, 5).to_extrinsics() for a in (0, 40, 100, 170)),
                        geo.CameraIntrinsics.from_fov(16, 16))
    assert admissible_subsets(rig, 2, 50, 100, (0, 0, 0)) == [(0, 2), (1, 2), (2, 3)]
    assert admissible_subsets(rig, 3, 0, 100, (0, 0, 0)) == [(0, 1, 2)]


def _trajectory(L=300):
    K = geo.CameraIntrinsics.from_fov(8, 8)
    poses = tuple(geo.SphericalPose(i * 0.5, 20, 5).to_extrinsics() for i in range(L))
    return TrajectorySequence(np.random.default_rng(0).random((L, 3, 8, 8)), poses, K, "a red box")


def test_multiview_frames_gap_and_normalisation():
    seq = _trajectory()
    rng = np.random.default_rng(1)
    for _ in range(2000):
        v = int(rng.integers(2, 5))
        s = sample_multiview_frames(seq, v, 100, rng)
        assert s.videos.shape == (v, 1, 3, 8, 8)
        idx = [int(np.argmax([np.array_equal(seq.frames[i], fr[0]) for i in range(300)])) for fr in s.videos[:1]]
        assert np.array_equal(s.rig[0].R, np.eye(3))
        s.check()
    with pytest.raises(SamplingError):
        sample_multiview_frames(seq, 5, 2, rng)


def test_multiview_frame_gap_bound_via_indices():
    seq = _trajectory(50)
    lookup = {seq.frames[i].tobytes(): i for i in range(50)}
    rng = np.random.default_rng(2)
    for _ in range(1000):
        s = sample_multiview_frames(seq, 3, 10, rng)
        idx = [lookup[f[0].tobytes()] for f in s.videos]
        assert len(set(idx)) == 3 and max(idx) - min(idx) <= 10


def test_replicated_single_view():
    video = np.random.default_rng(0).random((4, 3, 8, 8))
    s = replicate_single_view(video, 4, PromptSpec.from_text("x"))
    s.check()
    assert s.videos.shape == (4, 4, 3, 8, 8)
    assert all(np.array_equal(c.R, np.eye(3)) for c in s.rig.cameras)
    with pytest.raises(ValueError):
        replicate_single_view(video, 0)


# --- static filter ----------------------------------------------------------------------


def test_static_filter_basic_cases():
    rng = np.random.default_rng(0)
    still = calib.static_video(rng)
    r = static_filter(still)
    assert r.is_static and r.max_disp_px == 0.0
    tex = calib.texture(rng, 32, 80)
    pan = calib.color_video(np.stack([tex[:, 5 * k:5 * k + 32] for k in range(8)]))
    r = static_filter(pan)
    assert not r.is_static and r.max_disp_px >= 25
    flat = np.full((4, 3, 16, 16), 0.5)
    r = static_filter(flat)
    assert r.inconclusive and not r.is_static
    with pytest.raises(ValueError):
        static_filter(still[:1])


def test_static_filter_tolerates_small_subject():
    rng = np.random.default_rng(4)
    for _ in range(5):
        assert static_filter(calib.moving_subject_video(rng)).is_static


# --- dataset ------------------------------------------------------------------------------


def test_dataset_layout_and_reader(small_dataset):
    ds = Dataset(small_dataset)
    assert len(ds.scenes) == 6 and ds.res == (16, 16) and ds.frames == 4
    rec = ds.scenes[0]
    assert rec.videos.shape == (4, 4, 3, 16, 16)
    assert rec.correspondences.shape[0] == 4 and rec.correspondences.shape[2] == 4
    m = json.loads((small_dataset / rec.scene_id / "manifest.json").read_text())
    cam = rec.rig[1]
    assert np.array_equal(geo.flatten_extrinsics(cam), np.array(m["cameras"][1]["extrinsics"]))
    assert len(ds.trajectories()) == 2 and ds.trajectories()[0].frames.shape == (12, 3, 16, 16)
    assert len(ds.general_clips()) == 4
    assert rec.prompt == rec.spec.prompt()


def test_forge_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for root in (a, b):
        forge_dataset(root, scenes=2, cams=2, frames=2, res=(16, 16), seed=1, trajectories=1, traj_frames=4,
                      general=1)
    assert dataset_checksum(a) == dataset_checksum(b)
    forge_dataset(tmp_path / "c", scenes=2, cams=2, frames=2, res=(16, 16), seed=2, trajectories=1,
                  traj_frames=4, general=1)
    assert dataset_checksum(a) != dataset_checksum(tmp_path / "c")
    with pytest.raises(ValueError):
        forge_dataset(tmp_path / "d", scenes=0)


def test_dataset_errors(tmp_path):
    from syncam.scene.dataset import DatasetError
    with pytest.raises(DatasetError):
        Dataset(tmp_path)
