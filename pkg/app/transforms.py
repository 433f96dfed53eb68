from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.transform import Rotation

# Rigid transforms are 4x4 homogeneous float64 matrices, T_A_B maps B into A.


def make_transform(rotation: ArrayLike | None = None, translation: ArrayLike | None = None) -> np.ndarray:
    T = np.eye(4)
    if rotation is not None:
        T[:3, :3] = np.asarray(rotation, dtype=float)
    if translation is not None:
        T[:3, 3] = np.asarray(translation, dtype=float)
    return T


def invert(T: np.ndarray) -> np.ndarray:
    """Return the inverse of a rigid transform without a general matrix inverse."""
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def apply(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Transform an (N, 3) array of points."""
    return points @ T[:3, :3].T + T[:3, 3]


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis: ArrayLike, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return Rotation.from_rotvec(axis / np.linalg.norm(axis) * angle).as_matrix()


def from_xyz_rpy(xyz: ArrayLike, rpy: ArrayLike) -> np.ndarray:
    """Fixed-axis roll, pitch, yaw (R = Rz(yaw) Ry(pitch) Rx(roll))."""
    return make_transform(Rotation.from_euler("xyz", rpy).as_matrix(), xyz)


def from_yaw_pitch_roll(yaw: float, pitch: float, roll: float) -> np.ndarray:
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


def euler_zyx(R: np.ndarray) -> tuple[float, float, float]:
    """Return (yaw, pitch, roll) for the Z-Y-X convention."""
    # Closed form avoids scipy's gimbal-lock warning; callers check pitch first.
    pitch = float(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0)))
    yaw = float(np.arctan2(R[1, 0], R[0, 0]))
    roll = float(np.arctan2(R[2, 1], R[2, 2]))
    return yaw, pitch, roll


def orthonormality_error(R: np.ndarray) -> float:
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def orthonormalize(T: np.ndarray) -> np.ndarray:
    """Project the rotation block onto SO(3) (polar decomposition)."""
    U, _, Vt = np.linalg.svd(T[:3, :3])
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1.0
        R = U @ Vt
    out = T.copy()
    out[:3, :3] = R
    return out


def quaternion_wxyz(R: np.ndarray) -> np.ndarray:
    q = Rotation.from_matrix(R).as_quat(scalar_first=True)
    # Canonical hemisphere keeps CSV output deterministic
    return -q if q[0] < 0 else q


def from_quaternion_wxyz(q: ArrayLike) -> np.ndarray:
    return Rotation.from_quat(np.asarray(q, dtype=float), scalar_first=True).as_matrix()


def relative_angle(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Angle of the minimal rotation aligning R_a with R_b."""
    return float(Rotation.from_matrix(R_a.T @ R_b).magnitude())
