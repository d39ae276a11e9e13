"""Model assembly, joint training loop, inference, and the ablation harness.

Variants:
  full       learned sampler, soft projection, all three losses
  no-proj    full minus the temperature penalty t^2
  fps        farthest-point-sampled contacts, heads losses only
  no-sample  one grasp per observed point, heads losses only
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import encoder as enc
from . import heads as hd
from . import sampler as sp
from .config import RunConfig
from .diffcore import Parameter, Tape
from .errors import TrainingDiverged
from .evaluation import (GraspPrediction, MetricReport, aggregate,
                         evaluate_sample)
from .geometry import Grasp7, canonicalize, grasp7_to_pose
from .synthdata import Dataset, GripperSpec, Sample, make_shape

log = logging.getLogger(__name__)


def gripper_from_config(cfg: RunConfig) -> GripperSpec:
    return GripperSpec(cfg.gripper_opening, cfg.finger_length,
                       cfg.friction, cfg.ground_margin)


@dataclass
class GraspModel:
    encoder: enc.EncoderParams
    sampler: sp.SamplerParams | None
    heads: hd.HeadsParams
    cfg: RunConfig

    def parameters(self) -> list[Parameter]:
        params = self.encoder.parameters()
        if self.sampler is not None:
            params += self.sampler.parameters()
        return params + self.heads.parameters()

    def load_values(self, values: dict[str, np.ndarray]):
        for p in self.parameters():
            if p.name not in values:
                raise KeyError(f"checkpoint missing parameter {p.name}")
            p.value = np.array(values[p.name], dtype=np.float64)


def feature_dim(cfg: RunConfig) -> int:
    return cfg.feature_point + 3  # pooled per-point features plus offset encoding


def build_model(cfg: RunConfig) -> GraspModel:
    enc_seed, samp_seed, heads_seed = np.random.SeedSequence(cfg.seed).generate_state(3)
    ecfg = enc.EncoderConfig(cfg.stage1_hidden, cfg.feature_global,
                             cfg.stage2_hidden, cfg.feature_point, cfg.seed)
    encoder = enc.init_parameters(ecfg, int(enc_seed))
    sampler = None
    if cfg.variant in ("full", "no-proj"):
        scfg = sp.SamplerConfig(cfg.num_samples, cfg.neighborhood_k, cfg.alpha,
                                cfg.generator_hidden, cfg.t_init, cfg.seed)
        sampler = sp.init_parameters(scfg, cfg.feature_global, int(samp_seed))
    heads_params = hd.init_parameters(feature_dim(cfg), int(heads_seed),
                                      tuple(cfg.heads_hidden))
    return GraspModel(encoder, sampler, heads_params, cfg)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainSample:
    sample_id: str
    cloud: np.ndarray
    positives: list[Grasp7]
    contacts: np.ndarray      # visible positive contacts


def prepare_training_samples(dataset: Dataset, cfg: RunConfig) -> list[TrainSample]:
    """Training views with usable supervision; views whose positive contacts
    are all hidden are skipped with a warning (the sampling loss is undefined
    on an empty contact set)."""
    out = []
    for s in dataset.split("train"):
        positives = [g.grasp for g in s.grasps.positives()]
        contacts = sp.visible_contacts(positives, s.cloud, cfg.eps_vis)
        if not positives or contacts.shape[0] == 0:
            log.warning("skipping %s: no visible positive contacts", s.sample_id)
            continue
        out.append(TrainSample(s.sample_id, s.cloud, positives, contacts))
    return out


@dataclass
class StepLosses:
    total: dc.DiffValue
    l_sample: dc.DiffValue | None
    l_regr: dc.DiffValue
    l_class: dc.DiffValue
    l_cc: dc.DiffValue | None
    degenerate_rows: int
    # forward-value diagnostics (screening, logging)
    c1: np.ndarray | None = None
    c2: np.ndarray | None = None
    phi: np.ndarray | None = None
    raw_points: np.ndarray | None = None
    labels: np.ndarray | None = None


def _contact_points(tape: Tape, sample: TrainSample, model: GraspModel,
                    cfg: RunConfig, bundle):
    """First-contact candidates per variant: (c1, raw points, l_cc, l_sample)."""
    if model.sampler is not None:
        q = sp.generate(tape, bundle.global_feature, model.sampler)
        l_cc = sp.loss_cc(tape, q, sample.contacts)
        t = tape.param(model.sampler.temperature)
        r, _, _ = sp.soft_project_batch(tape, q, sample.cloud, t,
                                        cfg.neighborhood_k)
        l_sample = dc.mul(l_cc, cfg.alpha)
        if cfg.variant == "full":
            l_sample = dc.add(l_sample, sp.projection_loss(tape, t))
        return r, q.value, l_cc, l_sample
    if cfg.variant == "fps":
        idx = sp.fps(sample.cloud, min(cfg.num_samples, len(sample.cloud)))
        return tape.const(sample.cloud[idx]), None, None, None
    return tape.const(sample.cloud), None, None, None  # no-sample: every point


def training_losses(tape: Tape, sample: TrainSample, model: GraspModel,
                    cfg: RunConfig) -> StepLosses:
    bundle = enc.encode(tape, sample.cloud, model.encoder)
    c1, raw_points, l_cc, l_sample = _contact_points(tape, sample, model, cfg,
                                                     bundle)
    nn = min(cfg.neighborhood_nn, len(sample.cloud))
    feats = enc.gather_neighborhood_features_batch(tape, c1, sample.cloud,
                                                   bundle, nn)
    feats = dc.mul(feats, float(cfg.feature_gain))
    c2, phi = hd.regress(tape, feats, c1, model.heads)
    centers, rot, valid = hd.pose_rows(tape, c1, c2, phi)
    matched = hd.match_ground_truth_batch(c1.value, sample.positives)
    matched_poses = [grasp7_to_pose(g) for g in matched]
    l_regr = hd.regression_loss_diff(tape, centers, rot, matched_poses,
                                     cfg.lam, valid)
    scores = hd.classify(tape, feats, c2, phi, model.heads)
    predicted = [Grasp7(c1.value[j], c2.value[j], float(phi.value[j, 0]))
                 if valid[j, 0] else Grasp7(c1.value[j],
                                            c1.value[j] + (1e-3, 0, 0), 0.0)
                 for j in range(c1.shape[0])]
    labels = hd.assign_labels(predicted, sample.positives, cfg.tol_x,
                              cfg.tol_theta)
    labels[valid[:, 0] == 0.0] = 0.0
    l_class = hd.classification_loss(tape, scores, labels)
    total = hd.total_loss(tape, l_sample, l_regr, l_class)
    return StepLosses(total, l_sample, l_regr, l_class, l_cc,
                      int((valid == 0.0).sum()), c1=c1.value.copy(),
                      c2=c2.value.copy(), phi=phi.value.copy(),
                      raw_points=raw_points, labels=labels)


def _clip_gradients(grads: dict, max_norm: float):
    """Scale all gradients down when their joint norm exceeds max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for key in grads:
            grads[key] = grads[key] * scale


@dataclass
class TrainResult:
    model: GraspModel
    velocities: dict[Parameter, np.ndarray]
    trace: list[tuple] = field(default_factory=list)  # (step, ls, lr, lc, t)
    steps: int = 0


def train(cfg: RunConfig, dataset: Dataset,
          model: GraspModel | None = None) -> TrainResult:
    """Joint optimization of the active losses, one example per step with a
    seeded per-epoch shuffle. Raises TrainingDiverged on a non-finite loss."""
    samples = prepare_training_samples(dataset, cfg)
    if not samples:
        raise TrainingDiverged("no usable training samples")
    if model is None:
        model = build_model(cfg)
    params = model.parameters()
    opt = dc.SGD(params, cfg.lr, cfg.momentum)
    shuffle_seed = int(np.random.SeedSequence(cfg.seed).generate_state(4)[3])
    trace = []
    order: list[int] = []
    epoch = 0
    for step in range(cfg.steps):
        if not order:
            rng = np.random.default_rng([shuffle_seed, epoch])
            order = list(rng.permutation(len(samples)))
            epoch += 1
        sample = samples[order.pop(0)]
        if cfg.steps > 1:
            opt.lr = cfg.lr * cfg.lr_decay ** (step / (cfg.steps - 1))
        tape = Tape()
        losses = training_losses(tape, sample, model, cfg)
        if not math.isfinite(losses.total.item()):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        grads = tape.backward(losses.total)
        _clip_gradients(grads, cfg.grad_clip)
        opt.step(grads)
        if model.sampler is not None:
            t_param = model.sampler.temperature
            t_param.value = np.maximum(t_param.value, sp.T_MIN)
        trace.append((
            step,
            None if losses.l_sample is None else losses.l_sample.item(),
            losses.l_regr.item(),
            losses.l_class.item(),
            None if model.sampler is None
            else float(model.sampler.temperature.value),
        ))
    return TrainResult(model, opt.velocities, trace, cfg.steps)


# ---------------------------------------------------------------------------
# inference and evaluation
# ---------------------------------------------------------------------------

def predict(model: GraspModel, cfg: RunConfig, cloud: np.ndarray) -> list[GraspPrediction]:
    """Grasp proposals for one view. At inference the sampler's points are
    hard-snapped to the cloud; fps / no-sample variants take their contacts
    from the cloud directly."""
    tape = Tape()
    bundle = enc.encode(tape, cloud, model.encoder)
    if model.sampler is not None:
        q = sp.generate(tape, bundle.global_feature, model.sampler)
        idx = sp.hard_sample(q.value, cloud)
        c1 = tape.const(cloud[idx])
    elif cfg.variant == "fps":
        c1 = tape.const(cloud[sp.fps(cloud, min(cfg.num_samples, len(cloud)))])
    else:
        c1 = tape.const(cloud)
    nn = min(cfg.neighborhood_nn, len(cloud))
    feats = enc.gather_neighborhood_features_batch(tape, c1, cloud, bundle, nn)
    feats = dc.mul(feats, float(cfg.feature_gain))
    c2, phi = hd.regress(tape, feats, c1, model.heads)
    scores = hd.classify(tape, feats, c2, phi, model.heads)
    preds = []
    for j in range(c1.shape[0]):
        width = float(np.linalg.norm(c2.value[j] - c1.value[j]))
        if width < hd.DEGENERATE_WIDTH:
            log.warning("dropping degenerate prediction %d (width %.2e)", j, width)
            continue
        grasp = canonicalize(Grasp7(c1.value[j], c2.value[j],
                                    float(phi.value[j, 0])))
        preds.append(GraspPrediction(grasp, float(scores.value[j, 0])))
    return preds


def evaluate_model(model: GraspModel, cfg: RunConfig, dataset: Dataset,
                   split: str = "test") -> MetricReport:
    per_sample = []
    gripper = gripper_from_config(cfg)
    for s in dataset.split(split):
        preds = predict(model, cfg, s.cloud)
        positives = [g.grasp for g in s.grasps.positives()]
        shape = make_shape(s.spec)
        per_sample.append(evaluate_sample(s.sample_id, preds, positives, shape,
                                          gripper, cfg.k_list, cfg.tol_x,
                                          cfg.tol_theta))
    return aggregate(per_sample, cfg.k_list)


def mean_generated_lcc(model: GraspModel, cfg: RunConfig, dataset: Dataset,
                       split: str = "train") -> float:
    """Mean closeness-coverage loss of the raw generated points against the
    visible contacts (views without visible contacts are skipped)."""
    vals = []
    for s in dataset.split(split):
        contacts = sp.visible_contacts([g.grasp for g in s.grasps.positives()],
                                       s.cloud, cfg.eps_vis)
        if contacts.shape[0] == 0:
            continue
        tape = Tape()
        bundle = enc.encode(tape, s.cloud, model.encoder)
        q = sp.generate(tape, bundle.global_feature, model.sampler)
        vals.append(sp.loss_cc(tape, q, contacts).item())
    return float(np.mean(vals))


def heldout_lcc_comparison(model: GraspModel, cfg: RunConfig, dataset: Dataset,
                           split: str = "test") -> tuple[float, float]:
    """(learned, fps) mean L_cc on held-out views, both evaluated on actual
    cloud points (hard-snapped learned samples vs FPS selection)."""
    learned, baseline = [], []
    for s in dataset.split(split):
        contacts = sp.visible_contacts([g.grasp for g in s.grasps.positives()],
                                       s.cloud, cfg.eps_vis)
        if contacts.shape[0] == 0:
            continue
        tape = Tape()
        bundle = enc.encode(tape, s.cloud, model.encoder)
        q = sp.generate(tape, bundle.global_feature, model.sampler)
        snapped = s.cloud[sp.hard_sample(q.value, s.cloud)]
        fps_pts = s.cloud[sp.fps(s.cloud, cfg.num_samples)]
        learned.append(sp.loss_cc(Tape(), snapped, contacts).item())
        baseline.append(sp.loss_cc(Tape(), fps_pts, contacts).item())
    return float(np.mean(learned)), float(np.mean(baseline))


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = ("full", "no-proj", "fps", "no-sample")


@dataclass
class AblationRow:
    variant: str
    report: MetricReport
    final_lcc: float | None      # n/a for variants without a sampler
    final_t: float | None


def ablate(cfg: RunConfig, dataset: Dataset) -> list[AblationRow]:
    """Train and evaluate all four variants with a shared seed."""
    from dataclasses import replace
    rows = []
    for variant in ABLATION_VARIANTS:
        vcfg = replace(cfg, variant=variant)
        result = train(vcfg, dataset)
        report = evaluate_model(result.model, vcfg, dataset, "test")
        has_sampler = result.model.sampler is not None
        rows.append(AblationRow(
            variant=variant,
            report=report,
            final_lcc=(mean_generated_lcc(result.model, vcfg, dataset, "train")
                       if has_sampler else None),
            final_t=(float(result.model.sampler.temperature.value)
                     if has_sampler else None),
        ))
    return rows


def random_baseline_oracle(cfg: RunConfig, dataset: Dataset, seed: int,
                           split: str = "test") -> dict[int, float]:
    """Oracle success@k of uniform-random antipodal pairs with random scores;
    the floor any learned pipeline must clear."""
    from .evaluation import oracle_success_at_k, rank
    from .synthdata import random_antipodal_grasps
    gripper = gripper_from_config(cfg)
    rng = np.random.default_rng(seed)
    per_k: dict[int, list[float]] = {k: [] for k in cfg.k_list}
    for s in dataset.split(split):
        shape = make_shape(s.spec)
        preds = [GraspPrediction(g, score) for g, score in
                 random_antipodal_grasps(shape, cfg.num_samples, rng)]
        ranked = rank(preds)
        for k in cfg.k_list:
            per_k[k].append(oracle_success_at_k(ranked, shape, gripper, k))
    return {k: float(np.mean(v)) for k, v in per_k.items()}
