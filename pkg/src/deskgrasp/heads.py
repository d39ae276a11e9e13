"""Grasp regressor and classifier heads, ground-truth matching, and the
regression / classification losses plus the joint objective.

The regression loss compares predicted and matched grasps as poses. On the
tape, the predicted rotation is built directly from (c1, c2, phi) with the
geometry module's frame convention, and the quaternion dot magnitude is
recovered from the rotation-matrix trace identity
    |<u, u+>| = sqrt((trace(R^T R+) + 1) / 4),
which avoids differentiating a matrix-to-quaternion extraction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import DiffValue, Parameter, Tape
from .encoder import COORD_SCALE
from .errors import EmptyGroundTruth, LengthMismatch
from .geometry import (Grasp7, GraspPose, angular_distance, canonicalize,
                       grasp7_to_pose, grasp_match)
from .net import Mlp

DEGENERATE_WIDTH = 1e-6
AXIS_NORM_FLOOR = 0.01   # closing-axis normalization floor (meters); below this
                         # width the rotation columns shrink smoothly, so the
                         # angular term pushes the width up instead of spinning
                         # the offset direction with an unbounded 1/width factor


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.1                      # weight of the angular term in Eq-7 style loss
    alpha: float = 10.0                   # sampling-loss weight (kept here for one-stop config)
    tol_x: float = 0.025                  # meters
    tol_theta: float = math.radians(30.0)

    def __post_init__(self):
        if min(self.lam, self.alpha, self.tol_x, self.tol_theta) <= 0:
            raise ValueError("loss config values must be positive")


@dataclass
class HeadsParams:
    regressor: Mlp
    embed: Mlp
    scorer: Mlp

    def parameters(self) -> list[Parameter]:
        return (self.regressor.parameters() + self.embed.parameters()
                + self.scorer.parameters())


def init_parameters(feature_dim: int, seed: int, hidden: tuple[int, ...] = (64, 64)) -> HeadsParams:
    rng = np.random.default_rng(seed)
    regressor = Mlp("reg", [feature_dim + 3, *hidden, 4], rng)  # features ++ c1
    embed = Mlp("cls.embed", [4, hidden[0], feature_dim], rng)
    scorer = Mlp("cls.score", [feature_dim, *hidden, 1], rng)
    return HeadsParams(regressor, embed, scorer)


def regress(tape: Tape, features: DiffValue, c1: DiffValue, params: HeadsParams):
    """Predict the second contact and pitch for each first contact.

    The MLP sees the neighborhood feature together with the contact position;
    c2 = c1 + offset (offset in COORD_SCALE units), phi = pi * sigmoid(raw).
    """
    inp = dc.concat([features, dc.mul(c1, tape.const(1.0 / COORD_SCALE))], axis=1)
    out = params.regressor.forward(tape, inp)                   # (M, 4)
    offset = dc.mul(dc.gather(out, [0, 1, 2], axis=1), tape.const(COORD_SCALE))
    c2 = dc.add(c1, offset)
    phi = dc.mul(dc.sigmoid(dc.gather(out, [3], axis=1)), math.pi)
    return c2, phi


def classify(tape: Tape, features: DiffValue, c2: DiffValue, phi: DiffValue,
             params: HeadsParams) -> DiffValue:
    """Score each grasp: embed (c2, phi), sum with the contact feature, then a
    second MLP and a sigmoid. Output strictly inside (0, 1)."""
    raw = dc.concat([dc.mul(c2, tape.const(1.0 / COORD_SCALE)), phi], axis=1)
    emb = params.embed.forward(tape, raw)                       # (M, D)
    merged = dc.add(emb, features)
    return dc.sigmoid(params.scorer.forward(tape, merged))      # (M, 1)


# ---------------------------------------------------------------------------
# ground-truth matching and labels
# ---------------------------------------------------------------------------

def _positive_grasps(positives) -> list[Grasp7]:
    out = []
    for g in positives:
        out.append(g.grasp if hasattr(g, "grasp") else g)
    return out


def _contact_anchors(positives):
    grasps = [canonicalize(g) for g in _positive_grasps(positives)]
    if not grasps:
        raise EmptyGroundTruth("no positive grasps to match against")
    anchors = np.array([[g.c1, g.c2] for g in grasps]).reshape(-1, 3)
    return grasps, anchors


def _select(grasps, row: int) -> Grasp7:
    g = grasps[row // 2]
    if row % 2:
        # anchored at the stored second contact: relabel so the anchor is c1
        # (the pitch re-expression keeps the physical pose unchanged)
        return Grasp7(g.c2, g.c1, math.pi - g.phi)
    return g


def match_ground_truth(c1, positives) -> Grasp7:
    """Positive grasp with the contact nearest to c1 (ties by lower index),
    relabeled so that contact is its first one.

    Anchoring on either contact rather than the stored c1 alone keeps targets
    consistent for contacts whose partner faces away from the camera; both
    labelings describe the same pose.
    """
    grasps, anchors = _contact_anchors(positives)
    d2 = ((anchors - np.asarray(c1, dtype=np.float64)) ** 2).sum(axis=1)
    return _select(grasps, int(d2.argmin()))


def match_ground_truth_batch(c1_points: np.ndarray, positives) -> list[Grasp7]:
    grasps, anchors = _contact_anchors(positives)
    q = np.atleast_2d(np.asarray(c1_points, dtype=np.float64))
    d2 = ((q[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=2)
    return [_select(grasps, int(r)) for r in d2.argmin(axis=1)]


def assign_labels(predictions, positives, tol_x: float, tol_theta: float) -> np.ndarray:
    """Binary labels: 1 iff a predicted grasp matches some positive within the
    rule-based tolerances; the same criterion evaluation uses for success."""
    pos_poses = [grasp7_to_pose(g) for g in _positive_grasps(positives)]
    labels = np.zeros(len(predictions))
    for j, g in enumerate(predictions):
        grasp = g.grasp if hasattr(g, "grasp") else g
        if grasp.width() < DEGENERATE_WIDTH:
            continue
        pose = grasp7_to_pose(grasp)
        if any(grasp_match(pose, gt, tol_x, tol_theta) for gt in pos_poses):
            labels[j] = 1.0
    return labels


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def classification_loss(tape: Tape, scores: DiffValue, labels) -> DiffValue:
    """Binary cross-entropy, averaged over the prediction set."""
    lab = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if scores.shape != lab.shape:
        raise LengthMismatch(f"scores {scores.shape} vs labels {lab.shape}")
    lab = tape.const(lab)
    s = dc.clamp(scores, 1e-12, 1.0 - 1e-12)
    pos = dc.mul(lab, dc.log(s))
    negv = dc.mul(dc.sub(1.0, lab), dc.log(dc.sub(1.0, s)))
    return dc.neg(dc.vmean(dc.add(pos, negv)))


def regression_loss(predictions, matched, lam: float) -> float:
    """Value-level pose distance: mean of center distance plus lam times the
    quaternion angular distance."""
    if len(predictions) != len(matched):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(matched)} matches")
    if not predictions:
        raise LengthMismatch("empty prediction list")
    total = 0.0
    for p, g in zip(predictions, matched):
        total += float(np.linalg.norm(p.x - g.x)) + lam * angular_distance(p.u, g.u)
    return total / len(predictions)


def _col(x: DiffValue, j: int) -> DiffValue:
    return dc.gather(x, [j], axis=1)


def _cross_rows(a: DiffValue, b: DiffValue) -> DiffValue:
    ax, ay, az = _col(a, 0), _col(a, 1), _col(a, 2)
    bx, by, bz = _col(b, 0), _col(b, 1), _col(b, 2)
    return dc.concat([
        dc.sub(dc.mul(ay, bz), dc.mul(az, by)),
        dc.sub(dc.mul(az, bx), dc.mul(ax, bz)),
        dc.sub(dc.mul(ax, by), dc.mul(ay, bx)),
    ], axis=1)


def _row_norm(tape: Tape, x: DiffValue) -> DiffValue:
    return dc.sqrt(dc.clamp(dc.vsum(dc.mul(x, x), axis=1), lo=1e-18))


def pose_rows(tape: Tape, c1: DiffValue, c2: DiffValue, phi: DiffValue):
    """Differentiable canonical pose per contact pair.

    Returns (centers (M,3), rotations (M,9) row-major, valid (M,1) constant
    mask that is 0 for degenerate pairs). Row branches (contact swap, vertical
    closing axis, degeneracy) are selected from forward values. For widths
    below AXIS_NORM_FLOOR the closing axis is normalized by the floor instead
    of the true length, so the rotation columns shrink and the angular loss
    term reads short pairs as misaligned; at valid grasp widths the rotation
    is exact.
    """
    m = c1.shape[0]
    swap = (c1.value[:, 2] > c2.value[:, 2]).astype(np.float64).reshape(m, 1)
    k_swap = tape.const(swap)
    k_keep = tape.const(1.0 - swap)
    cc1 = dc.add(dc.scale_rows(c1, k_keep), dc.scale_rows(c2, k_swap))
    cc2 = dc.add(dc.scale_rows(c2, k_keep), dc.scale_rows(c1, k_swap))
    phic = dc.add(dc.mul(phi, tape.const(1.0 - 2.0 * swap)), tape.const(math.pi * swap))

    d = dc.sub(cc2, cc1)
    length = _row_norm(tape, d)
    valid = (length.value[:, 0] >= DEGENERATE_WIDTH).astype(np.float64).reshape(m, 1)
    a = dc.scale_rows(d, dc.div(1.0, dc.clamp(length, lo=AXIS_NORM_FLOOR)))

    ax, ay = _col(a, 0), _col(a, 1)
    zeros = tape.const(np.zeros((m, 1)))
    zxa = dc.concat([dc.neg(ay), ax, zeros], axis=1)
    s = _row_norm(tape, zxa)
    vertical = (s.value[:, 0] < 1e-9).astype(np.float64).reshape(m, 1)
    h = dc.scale_rows(zxa, dc.div(1.0, s))
    h = dc.add(dc.scale_rows(h, tape.const(1.0 - vertical)),
               tape.const(np.outer(vertical[:, 0], [1.0, 0.0, 0.0])))
    n = _cross_rows(a, h)
    v = dc.sub(dc.scale_rows(h, dc.cos(phic)), dc.scale_rows(n, dc.sin(phic)))
    y = _cross_rows(v, a)

    centers = dc.mul(dc.add(cc1, cc2), 0.5)
    rot = dc.concat([
        _col(a, 0), _col(y, 0), _col(v, 0),
        _col(a, 1), _col(y, 1), _col(v, 1),
        _col(a, 2), _col(y, 2), _col(v, 2),
    ], axis=1)
    return centers, rot, valid


def regression_loss_diff(tape: Tape, centers: DiffValue, rot: DiffValue,
                         matched_poses, lam: float, valid: np.ndarray) -> DiffValue:
    """Tape version of the regression loss against constant matched poses.

    Degenerate rows (valid == 0) contribute their center distance only; their
    undefined orientation is excluded rather than substituted.
    """
    m = centers.shape[0]
    if len(matched_poses) != m:
        raise LengthMismatch(f"{m} predictions vs {len(matched_poses)} matches")
    gt_x = tape.const(np.array([p.x for p in matched_poses]))
    gt_r = tape.const(np.array([p.u.to_matrix().reshape(9) for p in matched_poses]))
    diff = dc.sub(centers, gt_x)
    center_term = _row_norm(tape, diff)                          # (M, 1)
    tr = dc.vsum(dc.mul(rot, gt_r), axis=1)                      # (M, 1)
    dot_abs = dc.sqrt(dc.clamp(dc.mul(dc.add(tr, 1.0), 0.25), lo=1e-12, hi=1.0))
    ang = dc.mul(dc.arccos(dot_abs), tape.const(np.asarray(valid).reshape(m, 1)))
    return dc.vmean(dc.add(center_term, dc.mul(ang, float(lam))))


def total_loss(tape: Tape, l_sample, l_regr, l_class) -> DiffValue:
    """Unweighted sum of the active loss components (weights already inside)."""
    parts = [p for p in (l_sample, l_regr, l_class) if p is not None]
    if not parts:
        raise LengthMismatch("no loss components")
    out = parts[0]
    for p in parts[1:]:
        out = dc.add(out, p)
    return out
