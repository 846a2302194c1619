"""Rigid transforms, scalar-last quaternions and the pinhole camera model.

Quaternions are stored as ``(qx, qy, qz, qw)`` everywhere.  Rotation
algebra follows the Hamilton product, so ``R(q) v == q * v * conj(q)``.
A transform ``T_ba`` maps points from frame ``a`` to frame ``b``:
``P_b = T_ba @ P_a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NonPositiveDepth

_NORM_SLACK = 1e-12


def _as_vec3(v) -> np.ndarray:
    a = np.array(v, dtype=np.float64).reshape(3)
    a.setflags(write=False)
    return a


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a * b`` of scalar-last quaternions (broadcasts)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax, ay, az, aw = np.moveaxis(a, -1, 0)
    bx, by, bz, bw = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrices for an array of scalar-last quaternions (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    x, y, z, w = np.moveaxis(q, -1, 0)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.stack(
        [
            1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
            2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
            2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(R) -> np.ndarray:
    """Shepperd's method; returns a scalar-last quaternion with qw >= 0."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    q = np.array(q)
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


def rotvec_to_quat(w) -> np.ndarray:
    """Axis-angle vector(s) (..., 3) to scalar-last quaternion(s)."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < 1e-8
    # sin(theta/2)/theta, with its Taylor series near zero
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(half) / np.where(small, 1.0, theta))
    return np.concatenate([w * k, np.cos(half)], axis=-1)


def quat_to_rotvec(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = np.where(q[..., 3:4] < 0, -q, q)
    v = q[..., :3]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    theta = 2.0 * np.arctan2(s, q[..., 3:4])
    small = s < 1e-12
    k = np.where(small, 2.0 / np.where(small, q[..., 3:4], 1.0), theta / np.where(small, 1.0, s))
    return v * k


def quat_angle(q) -> np.ndarray:
    """Rotation angle in [0, pi] of quaternion(s) (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., :3], axis=-1), np.abs(q[..., 3]))


@dataclass(frozen=True)
class UnitQuaternion:
    qx: float = 0.0
    qy: float = 0.0
    qz: float = 0.0
    qw: float = 1.0

    def __post_init__(self):
        n = math.sqrt(self.qx**2 + self.qy**2 + self.qz**2 + self.qw**2)
        if not math.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must be finite and non-zero")
        # leave already-unit input bit-exact so text round-trips are lossless
        if abs(n - 1.0) > _NORM_SLACK:
            for name in ("qx", "qy", "qz", "qw"):
                object.__setattr__(self, name, float(getattr(self, name)) / n)
        else:
            for name in ("qx", "qy", "qz", "qw"):
                object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(0.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_array(cls, q) -> "UnitQuaternion":
        qx, qy, qz, qw = (float(v) for v in q)
        return cls(qx, qy, qz, qw)

    @classmethod
    def from_matrix(cls, R) -> "UnitQuaternion":
        return cls.from_array(matrix_to_quat(R))

    @classmethod
    def from_rotvec(cls, w) -> "UnitQuaternion":
        return cls.from_array(rotvec_to_quat(w))

    def as_array(self) -> np.ndarray:
        return np.array([self.qx, self.qy, self.qz, self.qw])

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.as_array())

    def rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.as_array())

    def angle(self) -> float:
        return float(quat_angle(self.as_array()))

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(-self.qx, -self.qy, -self.qz, self.qw)

    inverse = conjugate

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        return UnitQuaternion.from_array(quat_multiply(self.as_array(), other.as_array()))

    def rotate(self, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) @ self.matrix().T


@dataclass(frozen=True)
class RigidTransform:
    rotation: UnitQuaternion = UnitQuaternion()
    translation: np.ndarray = None

    def __post_init__(self):
        t = np.zeros(3) if self.translation is None else self.translation
        object.__setattr__(self, "translation", _as_vec3(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(UnitQuaternion.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, T, orthonormalize=True) -> "RigidTransform":
        """Build from a 4x4 (or 3x4) matrix.

        With ``orthonormalize`` the rotation block is projected onto SO(3)
        first, which is needed for matrices printed with few digits.
        """
        T = np.asarray(T, dtype=np.float64)
        R = T[:3, :3]
        if orthonormalize:
            U, _, Vt = np.linalg.svd(R)
            D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
            R = U @ D @ Vt
        return cls(UnitQuaternion.from_matrix(R), T[:3, 3])

    @classmethod
    def from_rt(cls, R, t) -> "RigidTransform":
        return cls(UnitQuaternion.from_matrix(R), t)

    @classmethod
    def from_pose7(cls, v) -> "RigidTransform":
        """From ``px py pz qx qy qz qw``."""
        v = np.asarray(v, dtype=np.float64)
        return cls(UnitQuaternion.from_array(v[3:7]), v[:3])

    def pose7(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation.as_array()])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.matrix()
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "RigidTransform":
        qi = self.rotation.conjugate()
        return RigidTransform(qi, -qi.rotate(self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        q = self.rotation * other.rotation
        t = self.rotation.rotate(other.translation) + self.translation
        return RigidTransform(q, t)

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return self.compose(other)
        return self.apply(other)

    def apply(self, points) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.matrix().T + self.translation

    def perturbed(self, delta) -> "RigidTransform":
        """Right-multiplied local update: rotation R*exp(w), translation t + v.

        ``delta`` is ``(w, v)`` as a 6-vector, axis-angle radians then meters.
        """
        delta = np.asarray(delta, dtype=np.float64)
        dq = UnitQuaternion.from_rotvec(delta[:3])
        return RigidTransform(self.rotation * dq, self.translation + delta[3:6])

    def angle_to(self, other: "RigidTransform") -> float:
        """Geodesic angle between the two rotations, radians."""
        return (self.rotation.conjugate() * other.rotation).angle()

    def allclose(self, other: "RigidTransform", atol=1e-9) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), rtol=0.0, atol=atol))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-world pose with the optical (+z) axis pointing at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidTransform.from_rt(np.column_stack([x, y, z]), eye)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def inverse(a: RigidTransform) -> RigidTransform:
    return a.inverse()


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0

    FIELD_ORDER = ("fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2", "k3")

    def __post_init__(self):
        for name in self.FIELD_ORDER:
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @classmethod
    def from_array(cls, values) -> "CameraIntrinsics":
        values = [float(v) for v in values]
        if len(values) != 9:
            raise ValueError("expected 9 values: fx fy cx cy k1 k2 p1 p2 k3")
        return cls(*values)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.FIELD_ORDER])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def has_distortion(self) -> bool:
        return any((self.k1, self.k2, self.k3, self.p1, self.p2))


def distort_normalized(K: CameraIntrinsics, x) -> np.ndarray:
    """Radial-tangential distortion of normalized coordinates (..., 2)."""
    x = np.asarray(x, dtype=np.float64)
    u, v = x[..., 0], x[..., 1]
    r2 = u * u + v * v
    radial = 1.0 + r2 * (K.k1 + r2 * (K.k2 + r2 * K.k3))
    du = 2.0 * K.p1 * u * v + K.p2 * (r2 + 2.0 * u * u)
    dv = K.p1 * (r2 + 2.0 * v * v) + 2.0 * K.p2 * u * v
    return np.stack([u * radial + du, v * radial + dv], axis=-1)


def _distortion_jacobian(K: CameraIntrinsics, x):
    u, v = x[..., 0], x[..., 1]
    r2 = u * u + v * v
    radial = 1.0 + r2 * (K.k1 + r2 * (K.k2 + r2 * K.k3))
    dradial = K.k1 + 2.0 * K.k2 * r2 + 3.0 * K.k3 * r2 * r2  # d radial / d r2
    j00 = radial + 2.0 * u * u * dradial + 2.0 * K.p1 * v + 6.0 * K.p2 * u
    j01 = 2.0 * u * v * dradial + 2.0 * K.p1 * u + 2.0 * K.p2 * v
    j10 = 2.0 * u * v * dradial + 2.0 * K.p1 * u + 2.0 * K.p2 * v
    j11 = radial + 2.0 * v * v * dradial + 6.0 * K.p1 * v + 2.0 * K.p2 * u
    return j00, j01, j10, j11


def undistort_normalized(K: CameraIntrinsics, x_d, radius=1.5, max_iter=20, tol=1e-10) -> np.ndarray:
    """Invert :func:`distort_normalized` by Newton fixed-point iteration.

    Raises NoConvergence when any point lies outside ``radius`` or its
    residual ``|distort(x) - x_d|`` is still above ``tol`` after
    ``max_iter`` iterations.
    """
    x_d = np.asarray(x_d, dtype=np.float64)
    if not K.has_distortion:
        return x_d.copy()
    if np.any(np.linalg.norm(x_d, axis=-1) >= radius):
        raise NoConvergence(f"point outside the invertible region (|x_d| >= {radius})")
    x = x_d.copy()
    for _ in range(max_iter):
        r = distort_normalized(K, x) - x_d
        if np.all(np.abs(r) <= tol):
            break
        j00, j01, j10, j11 = _distortion_jacobian(K, x)
        det = j00 * j11 - j01 * j10
        with np.errstate(divide="ignore", invalid="ignore"):
            step0 = (j11 * r[..., 0] - j01 * r[..., 1]) / det
            step1 = (-j10 * r[..., 0] + j00 * r[..., 1]) / det
        x = x - np.stack([step0, step1], axis=-1)
    r = distort_normalized(K, x) - x_d
    if not np.all(np.isfinite(r)) or np.any(np.abs(r) > tol):
        raise NoConvergence(
            f"undistortion residual {np.nanmax(np.abs(r)):.3g} above {tol:g} after {max_iter} iterations"
        )
    return x


def project(K: CameraIntrinsics, p_cam) -> np.ndarray:
    """Project camera-frame point(s) (..., 3) to distorted pixel coordinates."""
    p = np.asarray(p_cam, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        bad = np.flatnonzero(np.atleast_1d(z) <= 0)
        raise NonPositiveDepth(f"point(s) at or behind the camera: indices {bad[:10].tolist()}")
    xn = p[..., :2] / z[..., None]
    xd = distort_normalized(K, xn)
    return np.stack([K.fx * xd[..., 0] + K.cx, K.fy * xd[..., 1] + K.cy], axis=-1)


def pixel_to_normalized(K: CameraIntrinsics, uv, **kwargs) -> np.ndarray:
    """Undistorted normalized coordinates of pixel(s); inverse of :func:`project`."""
    uv = np.asarray(uv, dtype=np.float64)
    xd = np.stack([(uv[..., 0] - K.cx) / K.fx, (uv[..., 1] - K.cy) / K.fy], axis=-1)
    return undistort_normalized(K, xd, **kwargs)
