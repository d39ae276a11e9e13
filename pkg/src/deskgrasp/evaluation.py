"""Rule-based grasp evaluation: ranked success@k%, coverage@k%, the
success-coverage curve, and oracle-checked success as the simulation proxy.

A prediction is successful if at least one positive ground-truth grasp lies
within both tolerances (25 mm center, 30 deg quaternion angle by default); a
ground-truth grasp is covered if some prediction is that close to it. All
grasps are canonicalized before pose comparison, so the metrics are invariant
to how a prediction labels its two contacts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGroundTruth, EmptyPredictions
from .geometry import Grasp7, GraspPose, grasp7_to_pose, grasp_match
from .synthdata import GripperSpec, Shape, oracle_check

DEFAULT_K = (10, 30, 50, 100)
TOL_X = 0.025
TOL_THETA = math.radians(30.0)


@dataclass(frozen=True)
class GraspPrediction:
    grasp: Grasp7
    score: float


@dataclass
class RankedPredictions:
    """Predictions in descending score order (stable: ties keep input order)."""

    predictions: list[GraspPrediction]

    def __post_init__(self):
        scores = [p.score for p in self.predictions]
        if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
            raise ValueError("predictions not sorted by descending score")

    def __len__(self):
        return len(self.predictions)


def rank(predictions) -> RankedPredictions:
    preds = [p if isinstance(p, GraspPrediction) else GraspPrediction(*p)
             for p in predictions]
    scores = np.array([p.score for p in preds])
    order = np.argsort(-scores, kind="stable")
    return RankedPredictions([preds[i] for i in order])


def top_k_count(total: int, k_percent: float) -> int:
    """Top-k set size: ceil(k% of total), at least 1."""
    return max(1, math.ceil(k_percent / 100.0 * total))


def _poses(grasps) -> list[GraspPose]:
    return [grasp7_to_pose(g) for g in grasps]


def _check_inputs(ranked: RankedPredictions, positives):
    if len(ranked) == 0:
        raise EmptyPredictions("no predictions to evaluate")
    if not positives:
        raise EmptyGroundTruth("no positive ground-truth grasps")


def _match_matrix(pred_poses, gt_poses, tol_x, tol_theta) -> np.ndarray:
    out = np.zeros((len(pred_poses), len(gt_poses)), dtype=bool)
    for i, p in enumerate(pred_poses):
        for j, g in enumerate(gt_poses):
            out[i, j] = grasp_match(p, g, tol_x, tol_theta)
    return out


def _positive_grasps(positives) -> list[Grasp7]:
    return [g.grasp if hasattr(g, "grasp") else g for g in positives]


def success_rate_at_k(ranked: RankedPredictions, positives, k_percent: float,
                      tol_x: float = TOL_X, tol_theta: float = TOL_THETA) -> float:
    """Fraction of the top-k% predictions matching at least one positive."""
    _check_inputs(ranked, positives)
    m = top_k_count(len(ranked), k_percent)
    pred_poses = _poses([p.grasp for p in ranked.predictions[:m]])
    gt_poses = _poses(_positive_grasps(positives))
    matches = _match_matrix(pred_poses, gt_poses, tol_x, tol_theta)
    return float(matches.any(axis=1).mean())


def coverage_rate_at_k(ranked: RankedPredictions, positives, k_percent: float,
                       tol_x: float = TOL_X, tol_theta: float = TOL_THETA) -> float:
    """Fraction of positives matched by at least one top-k% prediction."""
    _check_inputs(ranked, positives)
    m = top_k_count(len(ranked), k_percent)
    pred_poses = _poses([p.grasp for p in ranked.predictions[:m]])
    gt_poses = _poses(_positive_grasps(positives))
    matches = _match_matrix(pred_poses, gt_poses, tol_x, tol_theta)
    return float(matches.any(axis=0).mean())


def success_coverage_curve(ranked: RankedPredictions, positives,
                           tol_x: float = TOL_X,
                           tol_theta: float = TOL_THETA) -> list[tuple[float, float]]:
    """One (coverage, success) point per ranked prefix length 1..M."""
    _check_inputs(ranked, positives)
    pred_poses = _poses([p.grasp for p in ranked.predictions])
    gt_poses = _poses(_positive_grasps(positives))
    matches = _match_matrix(pred_poses, gt_poses, tol_x, tol_theta)
    pred_hit = matches.any(axis=1)
    points = []
    covered = np.zeros(len(gt_poses), dtype=bool)
    hits = 0
    for i in range(len(pred_poses)):
        covered |= matches[i]
        hits += int(pred_hit[i])
        points.append((float(covered.mean()), hits / (i + 1)))
    return points


def oracle_success_at_k(ranked: RankedPredictions, shape: Shape,
                        gripper: GripperSpec, k_percent: float) -> float:
    """Fraction of top-k% predictions passing the analytic grasp oracle."""
    if len(ranked) == 0:
        raise EmptyPredictions("no predictions to evaluate")
    m = top_k_count(len(ranked), k_percent)
    ok = [oracle_check(shape, p.grasp, gripper)[0]
          for p in ranked.predictions[:m]]
    return float(np.mean(ok))


@dataclass
class SampleMetrics:
    sample_id: str
    success: dict[int, float]
    coverage: dict[int, float]
    oracle: dict[int, float]
    curve: list[tuple[float, float]]


@dataclass
class MetricReport:
    """Aggregate over samples: unweighted mean per k, per-sample breakdown,
    and the mean success-coverage curve (pointwise over equal-length curves)."""

    k_values: tuple[int, ...]
    success: dict[int, float]
    coverage: dict[int, float]
    oracle: dict[int, float]
    per_sample: list[SampleMetrics] = field(default_factory=list)
    curve: list[tuple[float, float]] = field(default_factory=list)


def evaluate_sample(sample_id: str, predictions, positives, shape, gripper,
                    k_values=DEFAULT_K, tol_x: float = TOL_X,
                    tol_theta: float = TOL_THETA) -> SampleMetrics:
    ranked = rank(predictions)
    return SampleMetrics(
        sample_id=sample_id,
        success={k: success_rate_at_k(ranked, positives, k, tol_x, tol_theta)
                 for k in k_values},
        coverage={k: coverage_rate_at_k(ranked, positives, k, tol_x, tol_theta)
                  for k in k_values},
        oracle={k: oracle_success_at_k(ranked, shape, gripper, k)
                for k in k_values},
        curve=success_coverage_curve(ranked, positives, tol_x, tol_theta),
    )


def aggregate(per_sample: list[SampleMetrics], k_values=DEFAULT_K) -> MetricReport:
    if not per_sample:
        raise EmptyPredictions("no per-sample metrics to aggregate")
    ordered = sorted(per_sample, key=lambda s: s.sample_id)
    mean = lambda vals: float(np.mean(vals))
    curve = []
    n_points = min(len(s.curve) for s in ordered)
    for i in range(n_points):
        curve.append((mean([s.curve[i][0] for s in ordered]),
                      mean([s.curve[i][1] for s in ordered])))
    return MetricReport(
        k_values=tuple(k_values),
        success={k: mean([s.success[k] for s in ordered]) for k in k_values},
        coverage={k: mean([s.coverage[k] for s in ordered]) for k in k_values},
        oracle={k: mean([s.oracle[k] for s in ordered]) for k in k_values},
        per_sample=ordered,
        curve=curve,
    )
