"""Forging procedural multi-view datasets and reading them back.

Layout under ``root``::

    dataset.json                      index: scene ids, trajectories, general clips
    <scene_id>/manifest.json          cameras, intrinsics, prompt, seed, spec
    <scene_id>/cam_<k>.scmt           (f, 3, h, w) float32 video of camera k
    <scene_id>/correspondences.scmt   (f, M, n, 3) float64: u, v, visible per view
    trajectories/<id>/frames.scmt     (F, 3, h, w) monocular video
    trajectories/<id>/manifest.json   per-frame extrinsics
    general/<id>.scmt                 single-view clips (static and moving cameras)
    general/index.json
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .. import geometry as geo
from ..tensorio import load_tensor, save_tensor
from .render import SceneSpec, Subject, VisibilityError, default_intrinsics, random_scene, render_scene, render_view
from .sampling import TrajectorySequence

LAYOUT_VERSION = 1
SCENE_TARGET = (0.0, 0.0, 0.5)


def _threads() -> int:
    return max(1, int(os.environ.get("SCM_THREADS", "1")))


def camera_entry(k: int, cam: geo.CameraExtrinsics) -> dict:
    return {
        "index": k,
        "file": f"cam_{k}.scmt",
        "extrinsics": geo.flatten_extrinsics(cam).tolist(),
        "extrinsics_le64": geo.extrinsics_to_bytes(cam).hex(),
    }


def camera_from_entry(entry: dict) -> geo.CameraExtrinsics:
    return geo.extrinsics_from_bytes(bytes.fromhex(entry["extrinsics_le64"]))


def spec_from_dict(d: dict) -> SceneSpec:
    subjects = tuple(Subject(**{**s, "a": tuple(s["a"]), "b": tuple(s["b"])}) for s in d["subjects"])
    return SceneSpec(subjects, d["ground"], tuple(d["texture_freq"]), tuple(d["texture_phase"]),
                     center=tuple(d["center"]), seed=d["seed"], frozen=d["frozen"])


def forge_scene(seed: int, cams: int, frames: int, res: tuple[int, int], max_tries: int = 20):
    """Draw a scene and camera rig from ``seed`` and render it; redraws if a subject is never visible."""
    rng = np.random.default_rng(seed)
    K = default_intrinsics(*res)
    for _ in range(max_tries):
        spec = random_scene(rng, seed)
        rig = geo.CameraRig(tuple(geo.sample_camera(geo.CameraConstraints(), SCENE_TARGET, rng)
                                  for _ in range(cams)), K)
        try:
            return spec, rig, render_scene(spec, rig, frames, res)
        except VisibilityError:
            continue
    raise VisibilityError(f"seed {seed}: no visible configuration in {max_tries} tries")


def write_scene(root: Path, scene_id: str, spec: SceneSpec, rig: geo.CameraRig, result) -> dict:
    d = root / scene_id
    d.mkdir(parents=True, exist_ok=True)
    for k in range(len(rig)):
        save_tensor(d / f"cam_{k}.scmt", result.videos[k])
    save_tensor(d / "correspondences.scmt", result.correspondences, "float64")
    n, f, c, h, w = result.videos.shape
    manifest = {
        "version": LAYOUT_VERSION,
        "scene_id": scene_id,
        "seed": spec.seed,
        "frames": f,
        "res": [h, w],
        "prompt": spec.prompt(),
        "intrinsics": rig.intrinsics.to_list(),
        "target": list(SCENE_TARGET),
        "cameras": [camera_entry(k, cam) for k, cam in enumerate(rig.cameras)],
        "correspondences": {"file": "correspondences.scmt", "layout": "frame, point, view, (u, v, visible)"},
        "spec": spec.to_dict(),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def render_trajectory(spec: SceneSpec, K: geo.CameraIntrinsics, frames: int, res, rng: np.random.Generator,
                      sweep_deg: float = 150.0) -> TrajectorySequence:
    """Orbit a camera around a frozen scene, one pose per frame."""
    az0 = rng.uniform(0, 360)
    el = rng.uniform(10, 35)
    dist = rng.uniform(4.5, 7.0)
    poses, imgs = [], []
    for k in range(frames):
        az = az0 + sweep_deg * k / max(frames - 1, 1)
        cam = geo.SphericalPose(az, el, dist, SCENE_TARGET).to_extrinsics()
        img, _, _ = render_view(spec, cam, K, 0, *res)
        poses.append(cam)
        imgs.append(img)
    return TrajectorySequence(np.stack(imgs), tuple(poses), K, spec.prompt())


def render_general_clip(spec: SceneSpec, K, frames: int, res, rng: np.random.Generator, moving: bool):
    """Monocular clip; ``moving`` pans the camera a few degrees per frame."""
    pose = geo.sample_spherical(geo.CameraConstraints(4.0, 7.0, 5.0, 30.0), SCENE_TARGET, rng)
    base = pose.to_extrinsics()
    pan = rng.choice([-1.0, 1.0]) * rng.uniform(3.0, 5.0) if moving else 0.0
    imgs = []
    for k in range(frames):
        R = geo.rot_y(pan * k) @ base.R
        cam = geo.CameraExtrinsics(R, -R @ base.center)
        imgs.append(render_view(spec, cam, K, k, *res)[0])
    return np.stack(imgs)


def forge_dataset(root, scenes: int = 64, cams: int = 8, frames: int = 8, res=(32, 32), seed: int = 7,
                  trajectories: int = 8, traj_frames: int = 32, general: int = 8) -> dict:
    if scenes < 1:
        raise ValueError("need at least one scene")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence(seed)
    scene_ss, traj_ss, gen_ss = ss.spawn(3)
    scene_seeds = [int(s.generate_state(1)[0]) for s in scene_ss.spawn(scenes)]
    ids = [f"scene_{i:04d}" for i in range(scenes)]

    def one(args):
        sid, s = args
        spec, rig, result = forge_scene(s, cams, frames, tuple(res))
        return write_scene(root, sid, spec, rig, result)

    with ThreadPoolExecutor(_threads()) as pool:
        manifests = list(pool.map(one, zip(ids, scene_seeds)))

    K = default_intrinsics(*res)
    traj_ids = []
    for i, s in enumerate(traj_ss.spawn(trajectories)):
        rng = np.random.default_rng(s)
        seq = render_trajectory(random_scene(rng, int(s.generate_state(1)[0]), frozen=True), K, traj_frames, res, rng)
        tid = f"traj_{i:04d}"
        d = root / "trajectories" / tid
        d.mkdir(parents=True, exist_ok=True)
        save_tensor(d / "frames.scmt", seq.frames)
        (d / "manifest.json").write_text(json.dumps({
            "version": LAYOUT_VERSION, "prompt": seq.prompt, "intrinsics": K.to_list(),
            "poses": [camera_entry(k, p) for k, p in enumerate(seq.poses)],
        }, indent=1, sort_keys=True))
        traj_ids.append(tid)

    clips = []
    for i, s in enumerate(gen_ss.spawn(general)):
        rng = np.random.default_rng(s)
        spec = random_scene(rng, int(s.generate_state(1)[0]))
        moving = i % 2 == 1
        video = render_general_clip(spec, K, frames, res, rng, moving)
        cid = f"clip_{i:04d}"
        (root / "general").mkdir(parents=True, exist_ok=True)
        save_tensor(root / "general" / f"{cid}.scmt", video)
        clips.append({"id": cid, "prompt": spec.prompt(), "moving_camera": moving})
    if clips:
        (root / "general" / "index.json").write_text(json.dumps(clips, indent=1, sort_keys=True))

    index = {
        "version": LAYOUT_VERSION, "seed": seed, "scenes": ids, "cams": cams, "frames": frames,
        "res": list(res), "trajectories": traj_ids, "general": [c["id"] for c in clips],
    }
    (root / "dataset.json").write_text(json.dumps(index, indent=1, sort_keys=True))
    return {"index": index, "manifests": manifests}


# ---------------------------------------------------------------------------
# reading


class DatasetError(ValueError):
    pass


@dataclass
class SceneRecord:
    root: Path
    manifest: dict

    @property
    def scene_id(self) -> str:
        return self.manifest["scene_id"]

    @property
    def prompt(self) -> str:
        return self.manifest["prompt"]

    @cached_property
    def rig(self) -> geo.CameraRig:
        K = geo.CameraIntrinsics(*self.manifest["intrinsics"])
        return geo.CameraRig(tuple(camera_from_entry(c) for c in self.manifest["cameras"]), K)

    @property
    def target(self):
        return tuple(self.manifest["target"])

    @cached_property
    def videos(self) -> np.ndarray:
        """(n, f, 3, h, w) float64."""
        d = self.root / self.scene_id
        vids = [load_tensor(d / c["file"]) for c in self.manifest["cameras"]]
        return np.stack(vids).astype(np.float64)

    @cached_property
    def correspondences(self) -> np.ndarray:
        return load_tensor(self.root / self.scene_id / self.manifest["correspondences"]["file"]).astype(np.float64)

    @cached_property
    def spec(self) -> SceneSpec:
        return spec_from_dict(self.manifest["spec"])


class Dataset:
    def __init__(self, root):
        self.root = Path(root)
        index_path = self.root / "dataset.json"
        if not index_path.exists():
            raise DatasetError(f"{root}: no dataset.json")
        self.index = json.loads(index_path.read_text())
        if self.index.get("version") != LAYOUT_VERSION:
            raise DatasetError(f"{root}: layout version {self.index.get('version')} unsupported")
        self.scenes = []
        for sid in self.index["scenes"]:
            mpath = self.root / sid / "manifest.json"
            if not mpath.exists():
                raise DatasetError(f"{root}: scene {sid} listed but missing")
            self.scenes.append(SceneRecord(self.root, json.loads(mpath.read_text())))
        self._trajectories = None
        self._general = None

    @property
    def res(self) -> tuple[int, int]:
        return tuple(self.index["res"])

    @property
    def frames(self) -> int:
        return self.index["frames"]

    def scene(self, scene_id: str) -> SceneRecord:
        for s in self.scenes:
            if s.scene_id == scene_id:
                return s
        raise DatasetError(f"unknown scene {scene_id}")

    def trajectories(self) -> list[TrajectorySequence]:
        if self._trajectories is None:
            out = []
            for tid in self.index.get("trajectories", []):
                d = self.root / "trajectories" / tid
                m = json.loads((d / "manifest.json").read_text())
                out.append(TrajectorySequence(load_tensor(d / "frames.scmt").astype(np.float64),
                                              tuple(camera_from_entry(p) for p in m["poses"]),
                                              geo.CameraIntrinsics(*m["intrinsics"]), m["prompt"]))
            self._trajectories = out
        return self._trajectories

    def general_clips(self) -> list[tuple[np.ndarray, str]]:
        if self._general is None:
            out = []
            if self.index.get("general"):
                meta = {c["id"]: c for c in json.loads((self.root / "general" / "index.json").read_text())}
                for cid in self.index["general"]:
                    out.append((load_tensor(self.root / "general" / f"{cid}.scmt").astype(np.float64),
                                meta[cid]["prompt"]))
            self._general = out
        return self._general


def dataset_checksum(root) -> str:
    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
