"""Grasp representations and conversions in a fixed world frame.

World frame: ground plane z=0, +z up. A parallel-jaw grasp is either a
contact pair with a pitch angle (Grasp7) or a center pose with a unit
quaternion (GraspPose).

Frame convention (fixed, invertible; training and evaluation share it):
  closing axis   a = normalize(c2 - c1)
  horizontal ref h = normalize(z_hat x a)   (h = x_hat when a is vertical)
  in-plane up    n = a x h                  (satisfies n.z >= 0)
  approach       v(phi) = cos(phi) h - sin(phi) n
so v.z <= 0 for phi in [0, pi]: the gripper always comes from the upper
hemisphere, with v(0), v(pi) horizontal. Gripper axes: x = a, z = v, y = z x x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGrasp

MIN_CONTACT_SEPARATION = 1e-6  # meters
_Z = np.array([0.0, 0.0, 1.0])
_X = np.array([1.0, 0.0, 0.0])


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector {a}")
    return a


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion (w, x, y, z)."""

    w: float
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if n == 0.0:
            raise ValueError("zero quaternion")
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def dot(self, other: "Quaternion") -> float:
        return float(self.as_array() @ other.as_array())

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Quaternion":
        # Shepperd's method: branch on the largest diagonal term for stability
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2
            q = Quaternion(s / 4, (m[2, 1] - m[1, 2]) / s,
                           (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q = Quaternion((m[2, 1] - m[1, 2]) / s, s / 4,
                           (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        elif m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            q = Quaternion((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                           s / 4, (m[1, 2] + m[2, 1]) / s)
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            q = Quaternion((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                           (m[1, 2] + m[2, 1]) / s, s / 4)
        return q.normalized()

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Grasp7:
    """Contact-pair grasp: two surface contacts plus pitch angle in [0, pi]."""

    c1: np.ndarray
    c2: np.ndarray
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "c1", _vec3(self.c1))
        object.__setattr__(self, "c2", _vec3(self.c2))
        phi = float(self.phi)
        if not math.isfinite(phi):
            raise ValueError("non-finite pitch angle")
        if phi < -1e-9 or phi > math.pi + 1e-9:
            raise ValueError(f"pitch angle {phi} outside [0, pi]")
        object.__setattr__(self, "phi", min(max(phi, 0.0), math.pi))

    def width(self) -> float:
        return float(np.linalg.norm(self.c2 - self.c1))


@dataclass(frozen=True)
class GraspPose:
    """Jaw-center position plus unit quaternion orientation."""

    x: np.ndarray
    u: Quaternion

    def __post_init__(self):
        object.__setattr__(self, "x", _vec3(self.x))
        object.__setattr__(self, "u", self.u.normalized())


def closing_frame(a: np.ndarray):
    """Horizontal reference h and in-plane up n for a unit closing axis a."""
    zxa = np.cross(_Z, a)
    s = np.linalg.norm(zxa)
    h = _X.copy() if s < 1e-9 else zxa / s
    n = np.cross(a, h)
    return h, n


def canonicalize(g: Grasp7) -> Grasp7:
    """Order contacts so c1 is the one closer to the ground (ties keep input
    order). The pitch is re-expressed as pi - phi on a swap so the pose is
    unchanged: flipping the closing axis flips the horizontal reference."""
    if g.c1[2] > g.c2[2]:
        return Grasp7(g.c2, g.c1, math.pi - g.phi)
    return g


def grasp7_to_pose(g: Grasp7) -> GraspPose:
    """Convert a contact-pair grasp to its center pose.

    The input is canonicalized first, so both orderings of the same physical
    grasp map to one pose.
    """
    g = canonicalize(g)
    d = g.c2 - g.c1
    length = float(np.linalg.norm(d))
    if length < MIN_CONTACT_SEPARATION:
        raise DegenerateGrasp(f"contact separation {length:.3e} m below "
                              f"{MIN_CONTACT_SEPARATION:.0e} m")
    a = d / length
    h, n = closing_frame(a)
    v = math.cos(g.phi) * h - math.sin(g.phi) * n
    y = np.cross(v, a)
    rot = np.column_stack([a, y, v])
    return GraspPose((g.c1 + g.c2) / 2.0, Quaternion.from_matrix(rot))


def pose_to_grasp7(p: GraspPose, jaw_half_width: float) -> Grasp7:
    """Inverse of grasp7_to_pose for a given jaw half width.

    Poses whose approach points into the lower hemisphere are not
    representable with phi in [0, pi]; their recovered pitch is wrapped by pi
    (the approach flips into the upper hemisphere).
    """
    rot = p.u.to_matrix()
    a = rot[:, 0]
    v = rot[:, 2]
    h, n = closing_frame(a)
    phi = math.atan2(-float(v @ n), float(v @ h))
    if phi < 0.0:
        phi += math.pi
    return Grasp7(p.x - jaw_half_width * a, p.x + jaw_half_width * a, phi)


def center_distance(a: GraspPose, b: GraspPose) -> float:
    return float(np.linalg.norm(a.x - b.x))


def angular_distance(u1: Quaternion, u2: Quaternion) -> float:
    """arccos |<u1, u2>|, in [0, pi/2]; invariant to sign flips of either
    argument. The dot product is clamped before arccos."""
    d = min(abs(u1.dot(u2)), 1.0)
    return math.acos(d)


def grasp_match(pred: GraspPose, gt: GraspPose, tol_x: float, tol_theta: float) -> bool:
    return (center_distance(pred, gt) <= tol_x
            and angular_distance(pred.u, gt.u) <= tol_theta)
