"""Contact-point sampler: candidate generation from the global feature,
temperature-controlled soft projection onto the observed surface, the
closeness-coverage losses, and the non-learned FPS baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import DiffValue, Parameter, Tape
from .encoder import COORD_SCALE
from .errors import EmptySet, NeighborhoodTooLarge, TooManyPoints
from .geometry import Grasp7
from .net import Mlp

T_MIN = 1e-4  # temperature floor: keeps Eq-5 weights finite as t is driven down


@dataclass(frozen=True)
class SamplerConfig:
    num_points: int = 64            # M; paper-scale 500 stays configurable
    neighborhood: int = 10          # k nearest points for the soft projection
    alpha: float = 10.0             # weight of the closeness-coverage loss
    hidden: tuple[int, ...] = (64, 128, 256)
    t_init: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_points < 1 or self.neighborhood < 1 or self.alpha <= 0 or self.t_init <= 0:
            raise ValueError("sampler config values must be positive")


@dataclass
class SamplerParams:
    generator: Mlp
    temperature: Parameter
    cfg: SamplerConfig

    def parameters(self) -> list[Parameter]:
        return self.generator.parameters() + [self.temperature]


def init_parameters(cfg: SamplerConfig, feature_dim: int, seed: int) -> SamplerParams:
    rng = np.random.default_rng(seed)
    gen = Mlp("gen", [feature_dim, *cfg.hidden, cfg.num_points * 3], rng)
    t = Parameter("t", cfg.t_init)
    return SamplerParams(gen, t, cfg)


def generate(tape: Tape, global_feature: DiffValue, params: SamplerParams) -> DiffValue:
    """M x 3 candidate contact points from the global feature (4 FC layers)."""
    out = params.generator.forward(tape, global_feature)       # (1, M*3)
    pts = dc.reshape(out, (params.cfg.num_points, 3))
    return dc.mul(pts, tape.const(COORD_SCALE))                # back to meters


def _as_points(tape: Tape, x, name: str) -> DiffValue:
    if not isinstance(x, DiffValue):
        x = tape.const(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if x.ndim != 2 or x.shape[1] != 3 or x.shape[0] < 1:
        raise EmptySet(f"{name} must be a non-empty (n, 3) point set, got {x.shape}")
    return x


def pairwise_sq_dists(tape: Tape, x: DiffValue, y: DiffValue) -> DiffValue:
    """(|X|, |Y|) matrix of squared Euclidean distances, differentiable in both."""
    xx = dc.vsum(dc.mul(x, x), axis=1)                          # (n, 1)
    yy = dc.vsum(dc.mul(y, y), axis=1)                          # (m, 1)
    cross = dc.matmul(x, dc.transpose(y))                       # (n, m)
    n, m = x.shape[0], y.shape[0]
    left = dc.matmul(xx, tape.const(np.ones((1, m))))
    right = dc.matmul(tape.const(np.ones((n, 1))), dc.transpose(yy))
    return dc.add(dc.sub(left, dc.mul(cross, 2.0)), right)


def loss_nn(tape: Tape, x, y) -> DiffValue:
    """Average nearest-neighbor loss: mean over X of min over Y of squared distance."""
    x = _as_points(tape, x, "X")
    y = _as_points(tape, y, "Y")
    d2 = pairwise_sq_dists(tape, x, y)
    return dc.vmean(dc.vmin(d2, axis=1))


def loss_mn(tape: Tape, x, y) -> DiffValue:
    """Maximal nearest-neighbor loss: worst-case min squared distance."""
    x = _as_points(tape, x, "X")
    y = _as_points(tape, y, "Y")
    d2 = pairwise_sq_dists(tape, x, y)
    return dc.vmax(dc.vmin(d2, axis=1))


def loss_cc(tape: Tape, q, c) -> DiffValue:
    """Closeness-coverage loss: nn(Q,C) + nn(C,Q) + mn(Q,C)."""
    q = _as_points(tape, q, "Q")
    c = _as_points(tape, c, "C")
    return dc.add(dc.add(loss_nn(tape, q, c), loss_nn(tape, c, q)),
                  loss_mn(tape, q, c))


def soft_project_batch(tape: Tape, queries: DiffValue, cloud: np.ndarray,
                       t, k: int):
    """Soft projection of each query onto the cloud via its k nearest points.

    Weights are exp(-d_i^2/t^2) normalized over the neighborhood; the exponent
    is shifted by the per-row minimum so the nearest point's weight never
    underflows as t anneals toward the floor. Returns (projected (M,3),
    weights (M,k), indices (M,k)).
    """
    p = np.asarray(cloud, dtype=np.float64)
    n = p.shape[0]
    if k > n:
        raise NeighborhoodTooLarge(f"k={k} > cloud size {n}")
    if not isinstance(t, DiffValue):
        t = tape.const(t)
    t = dc.clamp(t, lo=T_MIN)
    pc = tape.const(p)
    d2_full = pairwise_sq_dists(tape, queries, pc)              # (M, N)
    idx = np.argsort(d2_full.value, axis=1, kind="stable")[:, :k]
    d2 = dc.take_per_row(d2_full, idx)                          # (M, k)
    m = queries.shape[0]
    row_min = dc.vmin(d2, axis=1)                               # (M, 1)
    shift = dc.sub(d2, dc.matmul(row_min, tape.const(np.ones((1, k)))))
    inv_t2 = dc.div(-1.0, dc.mul(t, t))
    weights = dc.exp(dc.mul(shift, inv_t2))                     # (M, k), max entry 1
    norm = dc.div(1.0, dc.vsum(weights, axis=1))                # (M, 1)
    weights = dc.scale_rows(weights, norm)
    cols = []
    for c in range(3):
        coords = tape.const(p[idx, c])                          # (M, k) constant
        cols.append(dc.vsum(dc.mul(weights, coords), axis=1))
    return dc.concat(cols, axis=1), weights, idx


def soft_project(tape: Tape, q, cloud: np.ndarray, t, k: int):
    """Single-point soft projection; returns (r (1,3), weights (1,k), indices (k,))."""
    if not isinstance(q, DiffValue):
        q = tape.const(np.asarray(q, dtype=np.float64).reshape(1, 3))
    r, w, idx = soft_project_batch(tape, q, cloud, t, k)
    return r, w, idx[0]


def projection_loss(tape: Tape, t) -> DiffValue:
    """Temperature penalty t^2 that anneals the soft projection toward hard
    nearest-neighbor sampling."""
    if not isinstance(t, DiffValue):
        t = tape.const(t)
    return dc.mul(t, t)


def sample_loss(tape: Tape, q, c, t, alpha: float) -> DiffValue:
    return dc.add(dc.mul(loss_cc(tape, q, c), float(alpha)),
                  projection_loss(tape, t))


def hard_sample(queries: np.ndarray, cloud: np.ndarray) -> np.ndarray:
    """Snap each query to its nearest cloud point (ties: lower index)."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    p = np.asarray(cloud, dtype=np.float64)
    d2 = ((q[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def fps(cloud: np.ndarray, m: int, seed_index: int = 0) -> np.ndarray:
    """Farthest-point sampling: greedily add the point maximizing the minimum
    distance to the selected set (ties: lower index)."""
    p = np.asarray(cloud, dtype=np.float64)
    n = p.shape[0]
    if m > n:
        raise TooManyPoints(f"requested {m} of {n} points")
    selected = np.empty(m, dtype=np.intp)
    selected[0] = seed_index
    dist = ((p - p[seed_index]) ** 2).sum(axis=1)
    for i in range(1, m):
        nxt = int(dist.argmax())
        selected[i] = nxt
        dist = np.minimum(dist, ((p - p[nxt]) ** 2).sum(axis=1))
    return selected


def visible_contacts(positives, cloud: np.ndarray, eps_vis: float = 0.005) -> np.ndarray:
    """Contact points of positive grasps that lie on the observed surface,
    i.e. within eps_vis of some cloud point. Returns a (n, 3) array (possibly
    empty)."""
    p = np.asarray(cloud, dtype=np.float64)
    contacts = []
    for g in positives:
        grasp = g.grasp if hasattr(g, "grasp") else g
        assert isinstance(grasp, Grasp7)
        contacts.append(grasp.c1)
        contacts.append(grasp.c2)
    if not contacts:
        return np.zeros((0, 3))
    c = np.asarray(contacts)
    d2 = ((c[:, None, :] - p[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    return c[d2 <= eps_vis * eps_vis]
