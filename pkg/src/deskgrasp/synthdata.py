"""Procedural shapes, partial-view rendering, and analytic grasp annotation.

Shapes are convex primitives (box, cylinder, sphere) resting on the ground
plane z=0. Grasp candidates are antipodal contact pairs sampled analytically,
then labeled by a rule-based oracle that stands in for a physics simulator:
a grasp passes iff the contacts are on the surface, the closing axis lies in
both friction cones, the width fits the gripper, the swept fingers clear the
ground, and the approach comes from the upper hemisphere. Lift-time slip is
not modeled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyView, InvalidDimensions
from .geometry import Grasp7, canonicalize, grasp7_to_pose

MIN_DIMENSION = 0.005        # meters; smallest allowed shape dimension
SURFACE_TOL = 1e-3           # meters; |SDF| tolerance for "on surface"
SIZE_RANGE = (0.06, 0.15)    # generator default dimension range, meters

KINDS = ("box", "cylinder", "sphere")


@dataclass(frozen=True)
class GripperSpec:
    max_opening: float = 0.085
    finger_length: float = 0.04
    friction: float = 0.5
    ground_margin: float = 0.005

    def __post_init__(self):
        if min(self.max_opening, self.finger_length, self.friction, self.ground_margin) <= 0:
            raise ValueError("gripper spec values must be positive")


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    dims: tuple[float, ...]   # box: (ex, ey, ez) extents; cylinder: (r, h); sphere: (r,)
    yaw: float = 0.0          # resting rotation about z
    xy: tuple[float, float] = (0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidDimensions(f"unknown shape kind {self.kind!r}")
        expected = {"box": 3, "cylinder": 2, "sphere": 1}[self.kind]
        if len(self.dims) != expected:
            raise InvalidDimensions(f"{self.kind} needs {expected} dims, got {self.dims}")
        if min(self.dims) < MIN_DIMENSION:
            raise InvalidDimensions(f"dimension below {MIN_DIMENSION} m: {self.dims}")


@dataclass(frozen=True)
class LabeledGrasp:
    grasp: Grasp7
    label: int
    reason: str | None = None   # oracle failure reason for negatives

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass
class GraspSet:
    grasps: list[LabeledGrasp]
    shape_id: str = ""
    view_id: str = ""

    def positives(self) -> list[LabeledGrasp]:
        return [g for g in self.grasps if g.label == 1]

    def negatives(self) -> list[LabeledGrasp]:
        return [g for g in self.grasps if g.label == 0]


class Shape:
    """Analytic closed surface: signed distance, outward normals, sampling."""

    def __init__(self, spec: ShapeSpec):
        self.spec = spec
        if spec.kind == "box":
            height = spec.dims[2]
        elif spec.kind == "cylinder":
            height = spec.dims[1]
        else:
            height = 2 * spec.dims[0]
        self.center = np.array([spec.xy[0], spec.xy[1], height / 2.0])
        c, s = math.cos(spec.yaw), math.sin(spec.yaw)
        self._rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    # -- local frame helpers -------------------------------------------------
    def _to_local(self, p: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(p) - self.center) @ self._rot

    def _to_world_dir(self, d: np.ndarray) -> np.ndarray:
        return d @ self._rot.T

    # -- queries ---------------------------------------------------------------
    def sdf(self, points) -> np.ndarray:
        """Signed distance, negative inside. Accepts (3,) or (n, 3)."""
        q = self._to_local(points)
        kind, dims = self.spec.kind, self.spec.dims
        if kind == "box":
            half = np.array(dims) / 2.0
            d = np.abs(q) - half
            outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
            inside = np.minimum(d.max(axis=1), 0.0)
            out = outside + inside
        elif kind == "cylinder":
            r, h = dims
            radial = np.hypot(q[:, 0], q[:, 1]) - r
            axial = np.abs(q[:, 2]) - h / 2.0
            d = np.stack([radial, axial], axis=1)
            out = (np.linalg.norm(np.maximum(d, 0.0), axis=1)
                   + np.minimum(d.max(axis=1), 0.0))
        else:
            out = np.linalg.norm(q, axis=1) - dims[0]
        return out if np.ndim(points) == 2 else float(out[0])

    def surface_normal(self, point) -> np.ndarray:
        """Outward unit normal at the surface point nearest to `point`."""
        q = self._to_local(point)[0]
        kind, dims = self.spec.kind, self.spec.dims
        if kind == "box":
            half = np.array(dims) / 2.0
            rel = np.abs(q) / half
            axis = int(rel.argmax())
            n = np.zeros(3)
            n[axis] = math.copysign(1.0, q[axis]) if q[axis] != 0 else 1.0
        elif kind == "cylinder":
            r, h = dims
            radial = math.hypot(q[0], q[1]) - r
            axial = abs(q[2]) - h / 2.0
            if axial > radial:
                n = np.array([0.0, 0.0, math.copysign(1.0, q[2]) if q[2] != 0 else 1.0])
            else:
                rad = math.hypot(q[0], q[1])
                n = (np.array([q[0], q[1], 0.0]) / rad if rad > 1e-12
                     else np.array([1.0, 0.0, 0.0]))
        else:
            d = np.linalg.norm(q)
            n = q / d if d > 1e-12 else np.array([0.0, 0.0, 1.0])
        return self._to_world_dir(n)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform-by-area surface samples, world frame."""
        kind, dims = self.spec.kind, self.spec.dims
        pts = np.empty((n, 3))
        if kind == "box":
            ex, ey, ez = dims
            areas = np.array([ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey])
            face = rng.choice(6, size=n, p=areas / areas.sum())
            u = rng.uniform(-0.5, 0.5, size=(n, 2))
            half = np.array(dims) / 2.0
            for i in range(n):
                axis = face[i] // 2
                sign = 1.0 if face[i] % 2 == 0 else -1.0
                other = [a for a in range(3) if a != axis]
                p = np.empty(3)
                p[axis] = sign * half[axis]
                p[other[0]] = u[i, 0] * dims[other[0]]
                p[other[1]] = u[i, 1] * dims[other[1]]
                pts[i] = p
        elif kind == "cylinder":
            r, h = dims
            areas = np.array([2 * math.pi * r * h, math.pi * r * r, math.pi * r * r])
            part = rng.choice(3, size=n, p=areas / areas.sum())
            theta = rng.uniform(0, 2 * math.pi, size=n)
            for i in range(n):
                if part[i] == 0:
                    z = rng.uniform(-h / 2, h / 2)
                    pts[i] = [r * math.cos(theta[i]), r * math.sin(theta[i]), z]
                else:
                    rad = r * math.sqrt(rng.uniform())
                    z = h / 2 if part[i] == 1 else -h / 2
                    pts[i] = [rad * math.cos(theta[i]), rad * math.sin(theta[i]), z]
        else:
            v = rng.normal(size=(n, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            pts = v * dims[0]
        return pts @ self._rot.T + self.center

    def antipodal_pair(self, rng: np.random.Generator):
        """One exactly-antipodal contact pair (surface points whose outward
        normals oppose along the line joining them)."""
        kind, dims = self.spec.kind, self.spec.dims
        p1_local = self._to_local(self.sample_surface(1, rng))[0]
        if kind == "box":
            half = np.array(dims) / 2.0
            axis = int((np.abs(p1_local) / half).argmax())
            p2_local = p1_local.copy()
            p2_local[axis] = -p1_local[axis]
        elif kind == "cylinder":
            r, h = dims
            radial = math.hypot(p1_local[0], p1_local[1]) - r
            axial = abs(p1_local[2]) - h / 2.0
            p2_local = p1_local.copy()
            if axial > radial:            # cap point: mirror to the other cap
                p2_local[2] = -p1_local[2]
            else:                         # side point: diametral at same height
                p2_local[0] = -p1_local[0]
                p2_local[1] = -p1_local[1]
        else:
            p2_local = -p1_local
        p1 = self._to_world_dir(p1_local) + self.center
        p2 = self._to_world_dir(p2_local) + self.center
        return p1, p2


def make_shape(spec: ShapeSpec) -> Shape:
    return Shape(spec)


def sample_partial_view(shape: Shape, view_dir, n: int, seed: int) -> np.ndarray:
    """N surface points visible from a camera looking along view_dir: only the
    subset with outward normal n satisfying n . (-view) > 0 is kept (exact for
    convex primitives). Deterministic for a given seed."""
    v = np.asarray(view_dir, dtype=np.float64)
    v = v / np.linalg.norm(v)
    if n < 1:
        raise ValueError("need n >= 1 points")
    rng = np.random.default_rng(seed)
    kept = []
    total = 0
    for _ in range(200):
        batch = shape.sample_surface(max(4 * n, 64), rng)
        normals = np.array([shape.surface_normal(p) for p in batch])
        mask = normals @ (-v) > 0.0
        kept.append(batch[mask])
        total += int(mask.sum())
        if total >= n:
            break
    cloud = np.concatenate(kept, axis=0) if kept else np.zeros((0, 3))
    if cloud.shape[0] < n:
        raise EmptyView(f"only {cloud.shape[0]} of {n} surface points face the camera")
    return cloud[:n]


# ---------------------------------------------------------------------------
# rule-based grasp oracle
# ---------------------------------------------------------------------------

def oracle_check(shape: Shape, grasp: Grasp7, gripper: GripperSpec):
    """Analytic pass/fail for a grasp; returns (ok, reason).

    Checks, in order: contacts on the surface (|SDF| <= 1 mm), antipodal
    friction-cone condition at both contacts, width within the jaw opening,
    ground clearance of the swept fingers (line segments of finger length
    along the approach, dilated by the margin), and the upper-hemisphere
    pitch range.
    """
    c1, c2 = grasp.c1, grasp.c2
    if abs(shape.sdf(c1)) > SURFACE_TOL or abs(shape.sdf(c2)) > SURFACE_TOL:
        return False, "contact"
    axis = c2 - c1
    width = float(np.linalg.norm(axis))
    if width < 1e-9:
        return False, "contact"
    axis = axis / width
    cos_limit = 1.0 / math.sqrt(1.0 + gripper.friction ** 2)  # cos(arctan mu)
    n1_in = -shape.surface_normal(c1)
    n2_in = -shape.surface_normal(c2)
    if float(axis @ n1_in) < cos_limit or float(-axis @ n2_in) < cos_limit:
        return False, "friction"
    if width > gripper.max_opening:
        return False, "width"
    pose = grasp7_to_pose(grasp)
    approach = pose.u.to_matrix()[:, 2]
    for contact in (c1, c2):
        # finger tip at the contact, body extending back along -approach
        z_tip = contact[2]
        z_back = contact[2] - gripper.finger_length * approach[2]
        if min(z_tip, z_back) < gripper.ground_margin:
            return False, "clearance"
    if not (0.0 <= grasp.phi <= math.pi):
        return False, "approach"
    return True, None


def annotate_grasps(shape: Shape, gripper: GripperSpec, count: int,
                    seed: int) -> GraspSet:
    """Antipodal candidate grasps labeled by the oracle.

    Every stored grasp satisfies the antipodal surface condition by
    construction; negatives fail on contact, width, or clearance. One in three
    candidates is pushed off the surface along the closing axis to guarantee
    contact-failure negatives. Grasps are stored canonicalized.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        p1, p2 = shape.antipodal_pair(rng)
        phi = rng.uniform(0.0, math.pi)
        if i % 3 == 2:
            # off-surface variant: same nearest surface points and normals
            shift = rng.uniform(0.002, 0.004)
            d = p2 - p1
            d = d / np.linalg.norm(d)
            p1 = p1 - shift * d
            p2 = p2 + shift * d
        grasp = canonicalize(Grasp7(p1, p2, phi))
        ok, reason = oracle_check(shape, grasp, gripper)
        out.append(LabeledGrasp(grasp, 1 if ok else 0, reason))
    return GraspSet(out)


def random_antipodal_grasps(shape: Shape, count: int, rng: np.random.Generator):
    """Uniform-random antipodal pairs with uniform random scores; the naive
    reference predictor for end-to-end comparisons."""
    grasps = []
    for _ in range(count):
        p1, p2 = shape.antipodal_pair(rng)
        grasps.append((canonicalize(Grasp7(p1, p2, rng.uniform(0.0, math.pi))),
                       float(rng.uniform())))
    return grasps


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

@dataclass
class Sample:
    sample_id: str
    spec: ShapeSpec
    view_dir: np.ndarray
    cloud: np.ndarray
    grasps: GraspSet
    split: str


@dataclass
class Dataset:
    samples: list[Sample] = field(default_factory=list)

    def split(self, tag: str) -> list[Sample]:
        return [s for s in self.samples if s.split == tag]


def _draw_spec(rng: np.random.Generator) -> ShapeSpec:
    """Random resting shape with dimensions uniform in SIZE_RANGE; callers
    redraw until the grasp annotation finds positives, so non-graspable draws
    (e.g. spheres wider than the jaw opening) are simply rejected."""
    kind = KINDS[rng.integers(len(KINDS))]
    lo, hi = SIZE_RANGE
    if kind == "box":
        dims = (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)),
                float(rng.uniform(lo, hi)))
    elif kind == "cylinder":
        dims = (float(rng.uniform(lo / 2, hi / 2)), float(rng.uniform(lo, hi)))
    else:
        dims = (float(rng.uniform(lo / 2, hi / 2)),)
    yaw = float(rng.uniform(0.0, 2 * math.pi))
    xy = (float(rng.uniform(-0.05, 0.05)), float(rng.uniform(-0.05, 0.05)))
    return ShapeSpec(kind, dims, yaw, xy)


def _draw_view(rng: np.random.Generator) -> np.ndarray:
    """Camera direction looking down from above the horizon."""
    azimuth = rng.uniform(0.0, 2 * math.pi)
    elevation = rng.uniform(math.radians(20), math.radians(70))
    return np.array([math.cos(azimuth) * math.cos(elevation),
                     math.sin(azimuth) * math.cos(elevation),
                     -math.sin(elevation)])


def build_dataset(num_shapes: int, views_per_shape: int, grasps_per_shape: int,
                  seed: int, cloud_points: int = 512, test_shapes: int = 0,
                  gripper: GripperSpec = GripperSpec()) -> Dataset:
    """Deterministic procedural dataset split by shape (no shape overlap).

    Shapes are redrawn (from the same seeded stream) until the annotation
    yields both grasp classes, so every sample has usable ground truth.
    """
    if num_shapes < 1 or views_per_shape < 1 or grasps_per_shape < 1:
        raise ValueError("dataset counts must be positive")
    if test_shapes >= num_shapes:
        raise ValueError("test_shapes must leave at least one training shape")
    rng = np.random.default_rng(seed)
    dataset = Dataset()
    for shape_idx in range(num_shapes):
        for _attempt in range(200):
            spec = _draw_spec(rng)
            shape = make_shape(spec)
            grasps = annotate_grasps(shape, gripper, grasps_per_shape,
                                     seed=int(rng.integers(2 ** 31)))
            if grasps.positives() and grasps.negatives():
                break
        else:
            raise RuntimeError("could not draw a graspable shape in 200 tries")
        split = "test" if shape_idx >= num_shapes - test_shapes else "train"
        for view_idx in range(views_per_shape):
            view = _draw_view(rng)
            sample_id = f"s{shape_idx:03d}_v{view_idx}"
            cloud = sample_partial_view(shape, view, cloud_points,
                                        seed=int(rng.integers(2 ** 31)))
            gs = GraspSet(grasps.grasps, shape_id=f"s{shape_idx:03d}",
                          view_id=f"v{view_idx}")
            dataset.samples.append(Sample(sample_id, spec, view, cloud, gs, split))
    return dataset
