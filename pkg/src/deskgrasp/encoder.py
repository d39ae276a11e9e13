"""Desk-scale point-cloud encoder.

Shared per-point MLP -> elementwise max pool -> global feature; a second
per-point MLP over [stage-1 output || global] yields per-point features. The
global feature is exactly permutation invariant and the per-point features are
permutation equivariant because every op is applied row-wise.

Coordinates (meters) are divided by COORD_SCALE on entry so activations sit
near O(1) at desk scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import DiffValue, Parameter, Tape
from .errors import NeighborhoodTooLarge
from .net import Mlp

COORD_SCALE = 0.1  # meters per feature unit


@dataclass(frozen=True)
class EncoderConfig:
    stage1_hidden: tuple[int, ...] = (32,)
    feature_global: int = 64    # F_s (paper-scale 1024 stays configurable)
    stage2_hidden: tuple[int, ...] = (64,)
    feature_point: int = 32     # F_p (paper-scale 128 stays configurable)
    seed: int = 0

    def __post_init__(self):
        dims = (*self.stage1_hidden, self.feature_global,
                *self.stage2_hidden, self.feature_point)
        if any(d < 1 for d in dims):
            raise ValueError(f"encoder dims must be >= 1, got {dims}")


@dataclass
class FeatureBundle:
    per_point: DiffValue       # (N, F_p)
    global_feature: DiffValue  # (1, F_s)


@dataclass
class EncoderParams:
    stage1: Mlp
    stage2: Mlp
    cfg: EncoderConfig

    def parameters(self) -> list[Parameter]:
        return self.stage1.parameters() + self.stage2.parameters()


def init_parameters(cfg: EncoderConfig, seed: int) -> EncoderParams:
    """Xavier-uniform weights, zero biases, deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    stage1 = Mlp("enc.s1", [3, *cfg.stage1_hidden, cfg.feature_global], rng)
    stage2 = Mlp("enc.s2", [2 * cfg.feature_global,
                            *cfg.stage2_hidden, cfg.feature_point], rng)
    return EncoderParams(stage1, stage2, cfg)


def encode(tape: Tape, points: np.ndarray, params: EncoderParams) -> FeatureBundle:
    """Forward pass producing per-point and global features."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ValueError(f"point cloud must be (N, 3) with N >= 1, got {pts.shape}")
    n = pts.shape[0]
    x = tape.const(pts / COORD_SCALE)
    h1 = params.stage1.forward(tape, x, final_relu=True)          # (N, F_s)
    global_feature = dc.vmax(h1, axis=0)                          # (1, F_s)
    tiled = dc.matmul(tape.const(np.ones((n, 1))), global_feature)
    h2 = params.stage2.forward(tape, dc.concat([h1, tiled], axis=1))
    return FeatureBundle(per_point=h2, global_feature=global_feature)


def neighborhood_indices(queries: np.ndarray, cloud: np.ndarray, nn: int) -> np.ndarray:
    """Indices of the nn nearest cloud points per query row, nearest first.

    Ties break toward the lower point index (stable sort on distances).
    """
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    p = np.asarray(cloud, dtype=np.float64)
    if nn > p.shape[0]:
        raise NeighborhoodTooLarge(f"nn={nn} > cloud size {p.shape[0]}")
    d2 = ((q[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
    return np.argsort(d2, axis=1, kind="stable")[:, :nn]


def gather_neighborhood_features_batch(tape: Tape, queries: DiffValue,
                                       cloud: np.ndarray, bundle: FeatureBundle,
                                       nn: int) -> DiffValue:
    """Per-query aggregated feature: max over the nn nearest points' per-point
    rows, concatenated with the relative offset to the neighborhood centroid
    (scaled by 1/COORD_SCALE). Gradients reach the selected feature rows and
    the query coordinates; neighbor membership is recomputed from values."""
    idx = neighborhood_indices(queries.value, cloud, nn)
    pooled = dc.group_max(bundle.per_point, idx)                 # (M, F_p)
    centroids = np.asarray(cloud)[idx].mean(axis=1)              # (M, 3) constant
    rel = dc.sub(queries, tape.const(centroids))
    rel = dc.mul(rel, tape.const(1.0 / COORD_SCALE))
    return dc.concat([pooled, rel], axis=1)


def gather_neighborhood_features(tape: Tape, q, cloud: np.ndarray,
                                 bundle: FeatureBundle, nn: int) -> DiffValue:
    """Single-query version; returns a (1, F_p + 3) feature row."""
    if not isinstance(q, DiffValue):
        q = tape.const(np.asarray(q, dtype=np.float64).reshape(1, 3))
    return gather_neighborhood_features_batch(tape, q, cloud, bundle, nn)
