"""Hand-eye calibration.

Frames: W (motion-capture world), H (tracked body, the "hand"), E (event
camera, the "eye"), C (checkerboard).  Unknowns are X = T_HE and
Z = T_WC.  Absolute measurements are hand poses A'_j = T_WH_j and eye
poses B'_j = T_CE_j, related by A'_j X = Z B'_j.  Relative motions
A = T_HkHj and B = T_EkEj satisfy A X = X B.

The pipeline is a Tsai-Lenz linear estimate of X from relative motions,
then joint Gauss-Newton refinement of X and Z on checkerboard corner
reprojection error.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateMotion,
    DivergedOrStalled,
    NonPositiveDepth,
    TooFewPoses,
    UsageError,
)
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    UnitQuaternion,
    look_at,
    pixel_to_normalized,
    project,
    skew,
)

logger = logging.getLogger(__name__)

MIN_PAIR_ANGLE = 0.05      # rad; smaller relative rotations carry no axis info
ANGLE_GATE = 1e-2          # rad; |angle(A) - angle(B)| allowed for one pair
MIN_AXIS_SPREAD = 0.1      # rad; needed between at least two rotation axes

BOARD_ROWS, BOARD_COLS, BOARD_SPACING = 5, 6, 0.070  # inner corners of 6x7 tiles, 70 mm


@dataclass(frozen=True)
class RelativePosePair:
    A: RigidTransform  # T_HkHj
    B: RigidTransform  # T_EkEj

    @property
    def angle_gap(self) -> float:
        return abs(self.A.rotation.angle() - self.B.rotation.angle())


@dataclass
class HandEyeProblem:
    """Inputs of the reprojection refinement.

    ``observations[j]`` is ``(corner_ids, pixels)`` for hand pose ``j``:
    an int array of indices into ``corners`` and an (n, 2) pixel array.
    """

    hand_poses: list
    observations: list
    corners: np.ndarray
    K: CameraIntrinsics
    eye_poses: list | None = None

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=np.float64).reshape(-1, 3)
        if len(self.observations) != len(self.hand_poses):
            raise UsageError("one observation list per hand pose required")
        if self.eye_poses is not None and len(self.eye_poses) != len(self.hand_poses):
            raise UsageError("eye poses and hand poses differ in length")
        obs = []
        for j, (ids, px) in enumerate(self.observations):
            ids = np.asarray(ids, dtype=np.int64).reshape(-1)
            px = np.asarray(px, dtype=np.float64).reshape(-1, 2)
            if len(ids) != len(px):
                raise UsageError(f"pose {j}: corner ids and pixels differ in length")
            if np.any((ids < 0) | (ids >= len(self.corners))):
                raise UsageError(f"pose {j}: corner id out of range")
            obs.append((ids, px))
        self.observations = obs

    @property
    def num_observations(self) -> int:
        return sum(len(ids) for ids, _ in self.observations)

    def subset(self, indices) -> "HandEyeProblem":
        idx = list(indices)
        return HandEyeProblem(
            [self.hand_poses[i] for i in idx],
            [self.observations[i] for i in idx],
            self.corners,
            self.K,
            None if self.eye_poses is None else [self.eye_poses[i] for i in idx],
        )


@dataclass(frozen=True)
class HandEyeSolution:
    X: RigidTransform
    Z: RigidTransform
    final_cost: float
    iterations: int
    initial_cost: float = float("nan")
    cost_history: tuple = field(default=(), repr=False)
    num_observations: int = 0

    @property
    def rms(self) -> float:
        """Root-mean-square corner reprojection distance, pixels."""
        return float(np.sqrt(self.final_cost / max(self.num_observations, 1)))


# --- relative motions and the linear solver --------------------------------

def make_relative_pairs(hand_abs: Sequence[RigidTransform], eye_abs: Sequence[RigidTransform],
                        window=1, min_angle=MIN_PAIR_ANGLE, gate=ANGLE_GATE) -> list:
    """Relative motions between poses ``j`` and ``k = j+1 .. j+window``.

    Pairs rotating less than ``min_angle`` are dropped, as are pairs whose
    hand and eye rotation angles disagree by more than ``gate`` (logged).
    """
    if len(hand_abs) != len(eye_abs):
        raise UsageError("hand and eye pose lists differ in length")
    if len(hand_abs) < 2:
        raise TooFewPoses(f"need at least 2 poses, got {len(hand_abs)}")
    pairs = []
    for j in range(len(hand_abs)):
        for k in range(j + 1, min(j + window, len(hand_abs) - 1) + 1):
            A = hand_abs[k].inverse() @ hand_abs[j]
            B = eye_abs[k].inverse() @ eye_abs[j]
            if A.rotation.angle() < min_angle:
                continue
            pair = RelativePosePair(A, B)
            if pair.angle_gap > gate:
                logger.warning("dropping pair (%d, %d): hand/eye rotation angles differ by %.4f rad",
                               j, k, pair.angle_gap)
                continue
            pairs.append(pair)
    return pairs


def _modified_rodrigues(q: UnitQuaternion) -> np.ndarray:
    """2 sin(theta/2) * axis."""
    v = q.as_array()
    return 2.0 * (v[:3] if v[3] >= 0 else -v[:3])


def _axis_spread(pairs) -> float:
    axes = []
    for p in pairs:
        w = p.A.rotation.rotvec()
        n = np.linalg.norm(w)
        if n > 0:
            axes.append(w / n)
    best = 0.0
    for i in range(len(axes)):
        for j in range(i + 1, len(axes)):
            c = min(1.0, abs(float(axes[i] @ axes[j])))
            best = max(best, float(np.arccos(c)))
    return best


def tsai_linear(pairs: Sequence[RelativePosePair]) -> RigidTransform:
    """Tsai-Lenz closed-form X from relative motion pairs (A X = X B).

    Rotation: solve ``skew(Pa + Pb) x = Pb - Pa`` in least squares for the
    scaled modified-Rodrigues vector of R_X.  Translation: least squares on
    ``(R_A - I) t_X = R_X t_B - t_A``.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise DegenerateMotion(f"need at least 2 motion pairs, got {len(pairs)}")
    if _axis_spread(pairs) < MIN_AXIS_SPREAD:
        raise DegenerateMotion("all rotation axes are (anti-)parallel; rotation about them is unobservable")

    M = np.zeros((3 * len(pairs), 3))
    rhs = np.zeros(3 * len(pairs))
    for i, p in enumerate(pairs):
        pa = _modified_rodrigues(p.A.rotation)
        pb = _modified_rodrigues(p.B.rotation)
        M[3 * i:3 * i + 3] = skew(pa + pb)
        rhs[3 * i:3 * i + 3] = pb - pa
    x, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    # x = tan(theta/2) * axis
    P = 2.0 * x / np.sqrt(1.0 + x @ x)
    n2 = P @ P
    R_X = (1.0 - 0.5 * n2) * np.eye(3) + 0.5 * (np.outer(P, P) + np.sqrt(4.0 - n2) * skew(P))

    C = np.zeros((3 * len(pairs), 3))
    d = np.zeros(3 * len(pairs))
    for i, p in enumerate(pairs):
        C[3 * i:3 * i + 3] = p.A.rotation.matrix() - np.eye(3)
        d[3 * i:3 * i + 3] = R_X @ p.B.translation - p.A.translation
    t_X, *_ = np.linalg.lstsq(C, d, rcond=None)
    return RigidTransform.from_rt(R_X, t_X)


# --- reprojection cost -----------------------------------------------------

def predicted_eye_pose(X, Z, hand_pose) -> RigidTransform:
    """B'_m = Z^-1 A'_m X, the eye pose in the checkerboard frame."""
    return Z.inverse() @ hand_pose @ X


def reprojection_residuals(X: RigidTransform, Z: RigidTransform, problem: HandEyeProblem,
                           poses=None) -> np.ndarray:
    """Stacked ``measured - predicted`` pixel residuals (u, v per corner)."""
    Zi = Z.inverse()
    out = []
    for m in (range(len(problem.hand_poses)) if poses is None else poses):
        ids, px = problem.observations[m]
        if not len(ids):
            continue
        T_EC = (Zi @ problem.hand_poses[m] @ X).inverse()
        P = T_EC.apply(problem.corners[ids])
        behind = np.flatnonzero(P[:, 2] <= 0)
        if behind.size:
            n = int(ids[behind[0]])
            raise NonPositiveDepth(f"pose {m}, corner {n}: behind the camera", pose=m, corner=n)
        out.append((px - project(problem.K, P)).ravel())
    return np.concatenate(out) if out else np.empty(0)


def reprojection_cost(X, Z, problem: HandEyeProblem):
    """Sum of squared pixel distances, plus the residual vector."""
    r = reprojection_residuals(X, Z, problem)
    return float(r @ r), r


# --- Gauss-Newton ----------------------------------------------------------

@dataclass
class GaussNewtonResult:
    state: object
    cost: float
    iterations: int
    history: list


def gauss_newton(residuals: Callable, retract: Callable, state, n_params, fd_step=1e-7,
                 max_iter=50, rel_tol=1e-12, max_halvings=10, cost_floor=1e-20,
                 grad_tol=1e-4) -> GaussNewtonResult:
    """Minimize ``|residuals(state)|^2`` over local updates ``retract(state, delta)``.

    Central-difference Jacobians.  A step is kept only if it lowers the
    cost; otherwise it is halved, up to ``max_halvings`` times.  Stops on a
    relative decrease below ``rel_tol``, a cost below ``cost_floor`` or
    after ``max_iter`` accepted steps.  If no step helps while the gradient
    is still large, raises DivergedOrStalled.
    """
    r = residuals(state)
    cost = float(r @ r)
    history = [cost]
    its = 0
    eye = np.eye(n_params) * fd_step
    while its < max_iter and cost > cost_floor:
        J = np.empty((len(r), n_params))
        for i in range(n_params):
            J[:, i] = (residuals(retract(state, eye[i])) - residuals(retract(state, -eye[i]))) / (2 * fd_step)
        grad = 2.0 * J.T @ r
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        accepted = False
        for _ in range(max_halvings + 1):
            cand = retract(state, step)
            try:
                rc = residuals(cand)
            except NonPositiveDepth:
                step = 0.5 * step
                continue
            c = float(rc @ rc)
            if c < cost:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            if np.linalg.norm(grad) > grad_tol * (1.0 + np.sqrt(cost)):
                raise DivergedOrStalled(
                    f"no descent step after {max_halvings} halvings; |grad| = {np.linalg.norm(grad):.3g}")
            break
        its += 1
        rel = (cost - c) / cost
        state, r, cost = cand, rc, c
        history.append(cost)
        if rel < rel_tol:
            break
    return GaussNewtonResult(state, cost, its, history)


def initial_Z(hand_pose: RigidTransform, X: RigidTransform, eye_pose: RigidTransform) -> RigidTransform:
    """Z = A'_1 X B'_1^-1."""
    return hand_pose @ X @ eye_pose.inverse()


def refine_handeye(problem: HandEyeProblem, X0: RigidTransform, Z0: RigidTransform | None = None,
                   **gn_options) -> HandEyeSolution:
    """Jointly refine X and Z on reprojection error, starting from X0.

    Without ``Z0`` the first eye pose initializes it.  Each transform gets
    a right-multiplied 6-DOF update (axis-angle, translation).
    """
    if Z0 is None:
        if not problem.eye_poses:
            raise UsageError("Z0 or the problem's eye poses are needed to initialize Z")
        Z0 = initial_Z(problem.hand_poses[0], X0, problem.eye_poses[0])

    def residuals(state):
        return reprojection_residuals(state[0], state[1], problem)

    def retract(state, delta):
        return state[0].perturbed(delta[:6]), state[1].perturbed(delta[6:])

    res = gauss_newton(residuals, retract, (X0, Z0), 12, **gn_options)
    X, Z = res.state
    return HandEyeSolution(X, Z, res.cost, res.iterations, res.history[0], tuple(res.history),
                           problem.num_observations)


def calibrate(problem: HandEyeProblem, window=1, **gn_options) -> tuple:
    """Linear initialization followed by refinement; returns (X_linear, solution)."""
    if not problem.eye_poses:
        raise UsageError("eye poses are required for the linear stage")
    pairs = make_relative_pairs(problem.hand_poses, problem.eye_poses, window=window)
    X_lin = tsai_linear(pairs)
    return X_lin, refine_handeye(problem, X_lin, **gn_options)


def compose_groundtruth(hand_stream, X: RigidTransform) -> list:
    """T_WE_j = T_WH_j X for each hand pose.

    Items may be bare transforms or ``(t, transform)`` pairs; the output
    keeps the same shape.
    """
    out = []
    for item in hand_stream:
        if isinstance(item, RigidTransform):
            out.append(item @ X)
        else:
            t, T_WH = item
            out.append((t, T_WH @ X))
    return out


# --- eye pose from corners -------------------------------------------------

def _homography(src, dst):
    """Normalized DLT homography mapping 2-D points src -> dst."""
    def norm(p):
        c = p.mean(axis=0)
        s = np.sqrt(2.0) / max(np.mean(np.linalg.norm(p - c, axis=1)), 1e-12)
        T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
        return T, (p - c) * s
    Ts, a = norm(src)
    Td, b = norm(dst)
    rows = []
    for (x, y), (u, v) in zip(a, b):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, _, Vt = np.linalg.svd(np.asarray(rows))
    H = Vt[-1].reshape(3, 3)
    return np.linalg.inv(Td) @ H @ Ts


def estimate_eye_pose(K: CameraIntrinsics, corners, pixels, refine=True) -> RigidTransform:
    """Pose B' = T_CE of the camera from >= 4 corners of a planar board (z = 0).

    Homography decomposition for the initial guess, then Gauss-Newton on
    reprojection error.
    """
    corners = np.asarray(corners, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    if len(corners) < 4:
        raise UsageError("need at least 4 corners")
    if np.any(np.abs(corners[:, 2]) > 1e-12):
        raise UsageError("corners must lie on the z = 0 board plane")
    xn = pixel_to_normalized(K, pixels)
    H = _homography(corners[:, :2], xn)
    lam = 2.0 / (np.linalg.norm(H[:, 0]) + np.linalg.norm(H[:, 1]))
    if H[2, 2] * lam < 0:
        lam = -lam
    r1, r2, t = lam * H[:, 0], lam * H[:, 1], lam * H[:, 2]
    U, _, Vt = np.linalg.svd(np.column_stack([r1, r2, np.cross(r1, r2)]))
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    T_EC = RigidTransform.from_rt(R, t)
    if refine:
        def residuals(T):
            return (pixels - project(K, T.apply(corners))).ravel()
        T_EC = gauss_newton(residuals, lambda T, d: T.perturbed(d), T_EC, 6).state
    return T_EC.inverse()


# --- synthetic problems ----------------------------------------------------

DEFAULT_SYNTH_K = CameraIntrinsics(200.0, 200.0, 120.0, 90.0, -0.3, 0.1, 1e-3, -1e-3, 0.0)


def board_corners(rows=BOARD_ROWS, cols=BOARD_COLS, spacing=BOARD_SPACING) -> np.ndarray:
    """Inner-corner grid of the checkerboard in its own frame (z = 0)."""
    jj, ii = np.mgrid[0:rows, 0:cols]
    return np.column_stack([ii.ravel() * spacing, jj.ravel() * spacing, np.zeros(rows * cols)])


def random_rotation(rng) -> UnitQuaternion:
    q = rng.normal(size=4)
    return UnitQuaternion.from_array(q / np.linalg.norm(q))


def random_transform(rng, scale=1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, 3))


@dataclass
class SyntheticCalibration:
    problem: HandEyeProblem
    X: RigidTransform
    Z: RigidTransform


def synthetic_problem(rng, n_poses=20, noise=0.0, K=DEFAULT_SYNTH_K, X=None, Z=None,
                      width=240, height=180, distance=(0.5, 0.9), cone_deg=40.0,
                      margin=5.0) -> SyntheticCalibration:
    """Random calibration problem with known X and Z.

    Camera poses look at the board from within a cone around its normal;
    every corner is visible.  ``noise`` is the pixel standard deviation
    added to observations; eye poses are then estimated from the noisy
    corners, as they would be in practice.
    """
    X = random_transform(rng, 0.1) if X is None else X
    Z = random_transform(rng, 2.0) if Z is None else Z
    corners = board_corners()
    center = corners.mean(axis=0)
    hand, eye_true, obs = [], [], []
    while len(hand) < n_poses:
        theta = np.deg2rad(cone_deg) * np.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * np.pi)
        direction = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
        eye_pos = center + rng.uniform(*distance) * direction
        target = center + rng.uniform(-0.04, 0.04, 3) * [1, 1, 0]
        roll = rng.uniform(0, 2 * np.pi)
        up = np.array([np.cos(roll), np.sin(roll), 0.0])
        B = look_at(eye_pos, target, up)  # T_CE
        P = B.inverse().apply(corners)
        if np.any(P[:, 2] <= 0):
            continue
        px = project(K, P)
        if (np.any(px < margin) or np.any(px[:, 0] > width - 1 - margin)
                or np.any(px[:, 1] > height - 1 - margin)):
            continue
        hand.append(Z @ B @ X.inverse())
        eye_true.append(B)
        obs.append((np.arange(len(corners)), px + noise * rng.normal(size=px.shape)))
    if noise > 0:
        eye = [estimate_eye_pose(K, corners, px) for _, px in obs]
    else:
        eye = eye_true
    return SyntheticCalibration(HandEyeProblem(hand, obs, corners, K, eye), X, Z)


# --- text formats used by the CLI -----------------------------------------

def load_corners(path) -> np.ndarray:
    """``id X Y Z`` per line -> (N, 3) array indexed by id (ids 0..N-1)."""
    rows = {}
    with open(path, encoding="ascii") as f:
        for lineno, line in enumerate(f, 1):
            s = line.split()
            if not s:
                continue
            if len(s) != 4:
                raise UsageError(f"{path}:{lineno}: expected 'id X Y Z'")
            rows[int(s[0])] = [float(v) for v in s[1:]]
    if sorted(rows) != list(range(len(rows))):
        raise UsageError(f"{path}: corner ids must be 0..N-1")
    return np.array([rows[i] for i in range(len(rows))]).reshape(-1, 3)


def load_observations(path, n_poses) -> list:
    """``pose_index corner_id u v`` per line -> per-pose (ids, pixels)."""
    per = [([], []) for _ in range(n_poses)]
    with open(path, encoding="ascii") as f:
        for lineno, line in enumerate(f, 1):
            s = line.split()
            if not s:
                continue
            if len(s) != 4:
                raise UsageError(f"{path}:{lineno}: expected 'pose_index corner_id u v'")
            j, n = int(s[0]), int(s[1])
            if not 0 <= j < n_poses:
                raise UsageError(f"{path}:{lineno}: pose index {j} out of range")
            per[j][0].append(n)
            per[j][1].append((float(s[2]), float(s[3])))
    return [(np.array(ids, dtype=np.int64), np.array(px, dtype=np.float64).reshape(-1, 2)) for ids, px in per]
