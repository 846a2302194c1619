"""Textured-plane renderer and the inter-frame motion check.

A plane is the ``z = 0`` plane of its own frame P, seen from its ``+z``
side.  Texture texel ``(row, col)`` sits at plane coordinates
``((col - (W-1)/2) * texel_size, (row - (H-1)/2) * texel_size)``.
Trajectories are lists of ``(t, T_WC)`` camera-to-world poses.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import DegenerateView
from ..geometry import (  # noqa: F401  (look_at re-exported)
    CameraIntrinsics,
    RigidTransform,
    UnitQuaternion,
    look_at,
    pixel_to_normalized,
    project,
)
from .core import FrameSequence

logger = logging.getLogger(__name__)

MAX_DISPLACEMENT_PX = 1.0 / 3.0


@dataclass(frozen=True)
class PlanarScene:
    texture: np.ndarray
    plane_pose: RigidTransform = RigidTransform.identity()  # T_WP
    texel_size: float = 0.01
    background: float = 0.5

    def texel_coords(self, ab):
        h, w = self.texture.shape
        col = ab[..., 0] / self.texel_size + 0.5 * (w - 1)
        row = ab[..., 1] / self.texel_size + 0.5 * (h - 1)
        return row, col


def _pixel_rays(K, width, height, supersampling=1, stride=1):
    s = int(supersampling)
    offs = (np.arange(s) + 0.5) / s - 0.5
    us = (np.arange(0, width, stride)[:, None] + offs[None, :]).ravel()
    vs = (np.arange(0, height, stride)[:, None] + offs[None, :]).ravel()
    uu, vv = np.meshgrid(us, vs)
    xn = pixel_to_normalized(K, np.stack([uu, vv], axis=-1))
    rays = np.concatenate([xn, np.ones(xn.shape[:-1] + (1,))], axis=-1)
    return rays, np.stack([uu, vv], axis=-1)


def _intersect(scene: PlanarScene, T_WC: RigidTransform, rays, index=None):
    """Plane coordinates hit by camera rays; NaN where a ray misses."""
    T_PC = scene.plane_pose.inverse() @ T_WC
    origin = T_PC.translation
    if origin[2] <= 0:
        where = "" if index is None else f" at pose {index}"
        raise DegenerateView(f"camera is behind or on the textured plane{where}")
    D = rays @ T_PC.rotation.matrix().T
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = -origin[2] / D[..., 2]
    lam = np.where(D[..., 2] < 0, lam, np.nan)
    return origin[:2] + lam[..., None] * D[..., :2]


def render_planar_sequence(texture, plane_pose: RigidTransform, K: CameraIntrinsics, trajectory,
                           supersampling=1, width=240, height=180, texel_size=0.01,
                           background=0.5) -> FrameSequence:
    """Render one frame per trajectory pose with bilinear texture lookup.

    Samples ``supersampling**2`` sub-pixel rays per pixel and averages them.
    Regions off the texture or not hitting the plane get ``background``.
    """
    scene = PlanarScene(np.asarray(texture, dtype=np.float64), plane_pose, texel_size, background)
    s = int(supersampling)
    if s < 1:
        raise ValueError("supersampling must be >= 1")
    rays, _ = _pixel_rays(K, width, height, s)
    times, frames = [], []
    for j, (t, T_WC) in enumerate(trajectory):
        ab = _intersect(scene, T_WC, rays, j)
        row, col = scene.texel_coords(ab)
        miss = ~np.isfinite(row)
        coords = np.stack([np.where(miss, -10.0, row), np.where(miss, -10.0, col)])
        img = ndimage.map_coordinates(scene.texture, coords.reshape(2, -1), order=1,
                                      mode="constant", cval=background).reshape(row.shape)
        img[miss] = background
        if s > 1:
            img = img.reshape(height, s, width, s).mean(axis=(1, 3))
        times.append(float(t))
        frames.append(img)
    return FrameSequence(np.array(times), np.stack(frames))


def render_scene(scene: PlanarScene, K, trajectory, supersampling=1, width=240, height=180):
    return render_planar_sequence(scene.texture, scene.plane_pose, K, trajectory, supersampling,
                                  width, height, scene.texel_size, scene.background)


@dataclass(frozen=True)
class SamplingReport:
    max_displacement: float
    per_interval: np.ndarray
    threshold: float = MAX_DISPLACEMENT_PX

    @property
    def exceeds(self) -> bool:
        return self.max_displacement > self.threshold


def check_sampling_density(seq: FrameSequence, trajectory, scene: PlanarScene, K: CameraIntrinsics,
                           stride=4, threshold=MAX_DISPLACEMENT_PX) -> SamplingReport:
    """Largest apparent pixel motion of the scene between consecutive frames.

    Pixels on a ``stride`` grid are back-projected onto the plane at frame
    ``k`` and re-projected into frame ``k+1``.
    """
    rays, uv = _pixel_rays(K, seq.width, seq.height, 1, stride)
    poses = [T for _, T in trajectory]
    if len(poses) != len(seq):
        raise ValueError("trajectory and frame sequence differ in length")
    per = np.zeros(max(len(poses) - 1, 0))
    for k in range(len(poses) - 1):
        ab = _intersect(scene, poses[k], rays, k)
        ok = np.all(np.isfinite(ab), axis=-1)
        if not np.any(ok):
            continue
        P_plane = np.concatenate([ab[ok], np.zeros((int(ok.sum()), 1))], axis=-1)
        P_next = (poses[k + 1].inverse() @ scene.plane_pose).apply(P_plane)
        front = P_next[:, 2] > 0
        if not np.any(front):
            continue
        d = np.linalg.norm(project(K, P_next[front]) - uv[ok][front], axis=-1)
        per[k] = d.max()
    m = float(per.max()) if per.size else 0.0
    if m > threshold:
        logger.warning("inter-frame motion %.3f px exceeds %.3f px; render more frames", m, threshold)
    return SamplingReport(m, per, threshold)


def fronto_parallel_pose(distance) -> RigidTransform:
    """Plane pose facing a camera at the world origin looking along +z."""
    # plane normal (+z of P) points back toward the camera
    R = np.diag([1.0, -1.0, -1.0])
    return RigidTransform(UnitQuaternion.from_matrix(R), [0.0, 0.0, distance])


def linear_trajectory(times, velocity, start=RigidTransform.identity()):
    velocity = np.asarray(velocity, dtype=np.float64)
    return [(float(t), RigidTransform(start.rotation, start.translation + velocity * t)) for t in times]


def circular_trajectory(times, radius, period, start=RigidTransform.identity()):
    """Camera translating on a circle in its own x-y plane, orientation fixed."""
    out = []
    for t in times:
        a = 2 * np.pi * t / period
        offset = radius * np.array([np.cos(a) - 1.0, np.sin(a), 0.0])
        out.append((float(t), RigidTransform(start.rotation, start.translation + start.rotation.rotate(offset))))
    return out


def random_texture(rng, shape=(256, 256), sigma=3.0, lo=0.05, hi=0.95) -> np.ndarray:
    """Smooth random intensity texture with values spanning ``[lo, hi]``."""
    tex = ndimage.gaussian_filter(rng.random(shape), sigma, mode="wrap")
    tex -= tex.min()
    tex /= max(tex.max(), 1e-12)
    return lo + (hi - lo) * tex
