"""Training-sample construction: data-source mixing, angle curriculum, view and frame selection."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .. import geometry as geo
from ..backbone import PromptSpec


class SampleKind(enum.Enum):
    MULTI_VIEW_VIDEO = "multi_view_video"
    MULTI_VIEW_IMAGE = "multi_view_image"
    SINGLE_VIEW_VIDEO = "single_view_video"


KINDS = (SampleKind.MULTI_VIEW_VIDEO, SampleKind.MULTI_VIEW_IMAGE, SampleKind.SINGLE_VIEW_VIDEO)
DEFAULT_PROBS = (0.6, 0.2, 0.2)
DEFAULT_MAX_GAP = 100


class SamplingError(ValueError):
    pass


class CurriculumExhaustedError(SamplingError):
    pass


@dataclass
class TrainSample:
    kind: SampleKind
    videos: np.ndarray  # (n, f, c, h, w), pixel values in [0, 1]
    rig: geo.CameraRig
    prompt: PromptSpec

    def __post_init__(self):
        if self.videos.ndim != 5:
            raise ValueError(f"videos must be (n, f, c, h, w), got {self.videos.shape}")
        if self.videos.shape[0] != len(self.rig):
            raise ValueError("one camera per view")

    def check(self) -> None:
        """Raise if the kind-specific invariants do not hold."""
        if self.kind is SampleKind.MULTI_VIEW_IMAGE and self.videos.shape[1] != 1:
            raise AssertionError("multi-view image samples have a single frame")
        if self.kind is SampleKind.SINGLE_VIEW_VIDEO:
            ref = self.rig[0]
            for cam in self.rig.cameras[1:]:
                if not (np.array_equal(cam.R, ref.R) and np.array_equal(cam.t, ref.t)):
                    raise AssertionError("replicated views must share one camera")
            if not all(np.array_equal(v, self.videos[0]) for v in self.videos[1:]):
                raise AssertionError("replicated views must be identical")


@dataclass
class TrajectorySequence:
    """Monocular video with a per-frame camera pose."""

    frames: np.ndarray  # (F, c, h, w)
    poses: tuple[geo.CameraExtrinsics, ...]
    intrinsics: geo.CameraIntrinsics
    prompt: str = ""

    def __post_init__(self):
        if len(self.frames) < 2 or len(self.frames) != len(self.poses):
            raise ValueError("a trajectory needs >= 2 frames, each with a pose")


def sample_multiview_frames(seq: TrajectorySequence, v: int, max_gap: float, rng: np.random.Generator,
                            vocab: int = 256) -> TrainSample:
    """Pick ``v`` distinct frames spanning at most ``max_gap`` frames and treat them as views."""
    L = len(seq.frames)
    if v < 1 or v > L:
        raise SamplingError(f"cannot take {v} frames from a {L}-frame sequence")
    if max_gap < v - 1:
        raise SamplingError(f"{v} distinct frames cannot fit inside a gap of {max_gap}")
    start = int(rng.integers(0, L - v + 1))
    stop = L - 1 if max_gap == float("inf") else min(L - 1, start + int(max_gap))
    idx = np.sort(rng.choice(np.arange(start, stop + 1), size=v, replace=False))
    rig = geo.normalize_rig(geo.CameraRig(tuple(seq.poses[i] for i in idx), seq.intrinsics))
    return TrainSample(SampleKind.MULTI_VIEW_IMAGE, seq.frames[idx][:, None], rig,
                       PromptSpec.from_text(seq.prompt, vocab))


def replicate_single_view(video: np.ndarray, v: int, prompt: Optional[PromptSpec] = None,
                          intrinsics: Optional[geo.CameraIntrinsics] = None) -> TrainSample:
    """A monocular video as ``v`` overlapping views with identical identity cameras."""
    if v < 1:
        raise ValueError("v must be >= 1")
    video = np.asarray(video)
    if video.ndim != 4:
        raise ValueError("video must be (f, c, h, w)")
    K = intrinsics or geo.CameraIntrinsics.from_fov(video.shape[2], video.shape[3])
    rig = geo.CameraRig(tuple(geo.CameraExtrinsics.identity() for _ in range(v)), K)
    return TrainSample(SampleKind.SINGLE_VIEW_VIDEO, np.repeat(video[None], v, axis=0), rig,
                       prompt or PromptSpec.null())


def validate_probs(probs: Sequence[float]) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (len(KINDS),) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"source probabilities must be {len(KINDS)} non-negative numbers summing to 1, got {probs}")
    return p


def hybrid_sampler(rng: np.random.Generator, probs: Sequence[float] = DEFAULT_PROBS) -> SampleKind:
    p = validate_probs(probs)
    return KINDS[int(np.searchsorted(np.cumsum(p), rng.random(), side="right").clip(0, len(KINDS) - 1))]


@dataclass(frozen=True)
class CurriculumSchedule:
    """Stages of (end fraction of training, min azimuth gap, max azimuth gap)."""

    stages: tuple[tuple[float, float, float], ...] = ((0.2, 0.0, 60.0), (0.4, 30.0, 90.0), (1.0, 60.0, 120.0))

    def __post_init__(self):
        if not self.stages:
            raise ValueError("empty curriculum")
        prev = 0.0
        for end, lo, hi in self.stages:
            if not (prev < end <= 1.0) or not lo < hi:
                raise ValueError(f"bad curriculum stage {(end, lo, hi)}")
            prev = end
        if prev != 1.0:
            raise ValueError("the last curriculum stage must end at 1.0")

    @classmethod
    def flat(cls, lo: float = 0.0, hi: float = 180.0) -> "CurriculumSchedule":
        return cls(((1.0, lo, hi),))


def curriculum_stage(schedule: CurriculumSchedule, step: int, total_steps: int) -> tuple[float, float]:
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    frac = step / total_steps
    for end, lo, hi in schedule.stages:
        if frac < end:
            return lo, hi
    return schedule.stages[-1][1:]


def admissible_subsets(rig: geo.CameraRig, v: int, lo: float, hi: float, center) -> list[tuple[int, ...]]:
    """Every v-subset whose pairwise azimuth gaps all lie in [lo, hi]."""
    n = len(rig)
    gap = np.zeros((n, n))
    for i, j in itertools.combinations(range(n), 2):
        gap[i, j] = gap[j, i] = geo.azimuth_difference(rig[i], rig[j], center)
    ok = (gap >= lo) & (gap <= hi)
    return [c for c in itertools.combinations(range(n), v)
            if all(ok[i, j] for i, j in itertools.combinations(c, 2))]


class SubsetTable:
    """Precomputed admissible subsets, keyed by (v, lo, hi)."""

    def __init__(self, rig: geo.CameraRig, center):
        self.rig = rig
        self.center = center
        self._cache: dict = {}

    def get(self, v: int, lo: float, hi: float) -> list[tuple[int, ...]]:
        key = (v, lo, hi)
        if key not in self._cache:
            self._cache[key] = admissible_subsets(self.rig, v, lo, hi, self.center)
        return self._cache[key]


def select_view_subset(rig: geo.CameraRig, v: int, lo: float, hi: float, center, rng: np.random.Generator,
                       table: Optional[SubsetTable] = None) -> tuple[tuple[int, ...], geo.CameraRig]:
    """Uniformly draw an admissible v-subset and shuffle its order; the rig is not normalised."""
    subsets = (table or SubsetTable(rig, center)).get(v, lo, hi)
    if not subsets:
        raise CurriculumExhaustedError(f"no {v}-view subset with azimuth gaps in [{lo}, {hi}]")
    chosen = subsets[int(rng.integers(len(subsets)))]
    order = tuple(int(i) for i in rng.permutation(chosen))
    return order, rig.subset(order)
