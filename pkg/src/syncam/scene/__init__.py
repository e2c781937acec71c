"""Procedural multi-view data: rendering, sampling, filtering and the on-disk dataset."""

from .dataset import Dataset, SceneRecord, forge_dataset
from .render import RenderResult, SceneSpec, Subject, VisibilityError, random_scene, render_scene
from .sampling import (
    CurriculumExhaustedError,
    CurriculumSchedule,
    SampleKind,
    SamplingError,
    TrainSample,
    TrajectorySequence,
    curriculum_stage,
    hybrid_sampler,
    replicate_single_view,
    sample_multiview_frames,
    select_view_subset,
)
from .static import StaticResult, static_filter

__all__ = [
    "CurriculumExhaustedError", "CurriculumSchedule", "Dataset", "RenderResult", "SampleKind",
    "SamplingError", "SceneRecord", "SceneSpec", "StaticResult", "Subject", "TrainSample",
    "TrajectorySequence", "VisibilityError", "curriculum_stage", "forge_dataset", "hybrid_sampler",
    "random_scene", "render_scene", "replicate_single_view", "sample_multiview_frames",
    "select_view_subset", "static_filter",
]
