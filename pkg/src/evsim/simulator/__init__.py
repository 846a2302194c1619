"""Ideal event-camera simulation from rendered frames."""
from ._backend import BACKEND
from .core import (
    EventGenerator,
    FrameSequence,
    SimulatorConfig,
    generate_events,
    log_intensity,
    reconstruct,
    reconstruction_errors,
    rgb_to_luma,
)
from .render import (
    PlanarScene,
    SamplingReport,
    check_sampling_density,
    circular_trajectory,
    fronto_parallel_pose,
    linear_trajectory,
    look_at,
    random_texture,
    render_planar_sequence,
    render_scene,
)

__all__ = [
    "BACKEND",
    "EventGenerator",
    "FrameSequence",
    "PlanarScene",
    "SamplingReport",
    "SimulatorConfig",
    "check_sampling_density",
    "circular_trajectory",
    "fronto_parallel_pose",
    "generate_events",
    "linear_trajectory",
    "log_intensity",
    "look_at",
    "random_texture",
    "reconstruct",
    "reconstruction_errors",
    "render_planar_sequence",
    "render_scene",
    "rgb_to_luma",
]
