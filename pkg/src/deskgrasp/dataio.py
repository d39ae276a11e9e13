"""On-disk formats: point clouds, grasp lists, dataset manifests, checkpoints,
loss traces, metric reports, and a minimal SVG curve writer.

All text, all deterministic: floats are written with 9 significant digits in
data files, and checkpoints use hex floats so reloads are bit-exact.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .diffcore import Parameter
from .evaluation import MetricReport
from .geometry import Grasp7
from .synthdata import Dataset, GraspSet, LabeledGrasp, Sample, ShapeSpec

FLOAT_FMT = "{:.9g}"


def _fmt(values) -> str:
    return " ".join(FLOAT_FMT.format(float(v)) for v in values)


# ---------------------------------------------------------------------------
# point clouds: one "x y z" triple per line, meters
# ---------------------------------------------------------------------------

def write_cloud(path: str, cloud: np.ndarray):
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(cloud):
            fh.write(_fmt(row) + "\n")


def read_cloud(path: str) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append([float(v) for v in line.split()])
    return np.array(rows)


# ---------------------------------------------------------------------------
# grasps: "c1x c1y c1z c2x c2y c2z phi label score" (label/score -1 if absent)
# ---------------------------------------------------------------------------

def write_grasps(path: str, grasps, scores=None):
    with open(path, "w", encoding="utf-8") as fh:
        for i, g in enumerate(grasps):
            grasp = g.grasp if hasattr(g, "grasp") else g
            label = getattr(g, "label", -1)
            score = scores[i] if scores is not None else getattr(g, "score", -1.0)
            fh.write(_fmt([*grasp.c1, *grasp.c2, grasp.phi]) +
                     f" {int(label)} " + FLOAT_FMT.format(float(score)) + "\n")


def read_grasps(path: str):
    """Returns a list of (Grasp7, label, score) tuples."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            vals = [float(v) for v in parts]
            grasp = Grasp7(vals[0:3], vals[3:6], vals[6])
            out.append((grasp, int(vals[7]), vals[8]))
    return out


# ---------------------------------------------------------------------------
# dataset directory: manifest + per-sample cloud/grasp files
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.txt"


def write_dataset(dataset: Dataset, out_dir: str):
    os.makedirs(os.path.join(out_dir, "clouds"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "grasps"), exist_ok=True)
    lines = []
    for s in dataset.samples:
        cloud_path = f"clouds/{s.sample_id}.xyz"
        grasp_path = f"grasps/{s.sample_id}.grasp"
        write_cloud(os.path.join(out_dir, cloud_path), s.cloud)
        write_grasps(os.path.join(out_dir, grasp_path), s.grasps.grasps)
        dims = ",".join(FLOAT_FMT.format(d) for d in s.spec.dims)
        lines.append(" ".join([
            s.sample_id, s.spec.kind, dims,
            _fmt([s.spec.yaw, s.spec.xy[0], s.spec.xy[1]]),
            _fmt(s.view_dir), cloud_path, grasp_path, s.split,
        ]))
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(out_dir: str) -> Dataset:
    dataset = Dataset()
    with open(os.path.join(out_dir, MANIFEST_NAME), "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            (sample_id, kind, dims_raw, yaw, cx, cy,
             vx, vy, vz, cloud_path, grasp_path, split) = parts
            spec = ShapeSpec(kind, tuple(float(d) for d in dims_raw.split(",")),
                             float(yaw), (float(cx), float(cy)))
            cloud = read_cloud(os.path.join(out_dir, cloud_path))
            records = read_grasps(os.path.join(out_dir, grasp_path))
            grasps = GraspSet([LabeledGrasp(g, label) for g, label, _ in records],
                              shape_id=sample_id.split("_")[0],
                              view_id=sample_id.split("_")[1])
            dataset.samples.append(Sample(sample_id, spec,
                                          np.array([float(vx), float(vy), float(vz)]),
                                          cloud, grasps, split))
    return dataset


def file_sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# ---------------------------------------------------------------------------
# checkpoints: text with hex floats (bit-exact reload)
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    velocities: dict[str, np.ndarray]
    config_hash: str
    step: int


def _write_array(fh, tag: str, name: str, arr: np.ndarray):
    shape = ",".join(str(d) for d in arr.shape) or "scalar"
    data = " ".join(float(v).hex() for v in np.asarray(arr).reshape(-1))
    fh.write(f"{tag} {name} {shape} {data}\n")


def _read_array(shape_raw: str, data: list[str]) -> np.ndarray:
    vals = np.array([float.fromhex(v) for v in data])
    if shape_raw == "scalar":
        return vals.reshape(())
    return vals.reshape(tuple(int(d) for d in shape_raw.split(",")))


def save_checkpoint(path: str, params: list[Parameter],
                    velocities: dict[Parameter, np.ndarray],
                    config_hash: str, step: int):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"config_hash {config_hash}\n")
        fh.write(f"step {step}\n")
        for p in params:
            _write_array(fh, "param", p.name, p.value)
        for p in params:
            v = velocities.get(p)
            if v is not None:
                _write_array(fh, "velocity", p.name, v)


def load_checkpoint(path: str) -> Checkpoint:
    params: dict[str, np.ndarray] = {}
    velocities: dict[str, np.ndarray] = {}
    config_hash = ""
    step = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "config_hash":
                config_hash = parts[1]
            elif parts[0] == "step":
                step = int(parts[1])
            elif parts[0] == "param":
                params[parts[1]] = _read_array(parts[2], parts[3:])
            elif parts[0] == "velocity":
                velocities[parts[1]] = _read_array(parts[2], parts[3:])
    return Checkpoint(params, velocities, config_hash, step)


# ---------------------------------------------------------------------------
# loss traces: "step l_sample l_regr l_class t" per line ("na" when inactive)
# ---------------------------------------------------------------------------

def trace_line(step: int, l_sample, l_regr, l_class, t) -> str:
    def cell(v):
        return "na" if v is None else f"{float(v):.12g}"
    return f"{step} {cell(l_sample)} {cell(l_regr)} {cell(l_class)} {cell(t)}"


# ---------------------------------------------------------------------------
# metric reports
# ---------------------------------------------------------------------------

def report_table(report: MetricReport, title: str) -> str:
    lines = [title, ""]
    header = f"{'k%':>6} {'success':>10} {'coverage':>10} {'oracle':>10}"
    lines.append(header)
    lines.append("-" * len(header))
    for k in report.k_values:
        lines.append(f"{k:>6} {report.success[k]:>10.6f} "
                     f"{report.coverage[k]:>10.6f} {report.oracle[k]:>10.6f}")
    return "\n".join(lines) + "\n"


def report_records(report: MetricReport) -> str:
    lines = []
    for k in report.k_values:
        lines.append(f"aggregate success@{k} {report.success[k]:.12g}")
        lines.append(f"aggregate coverage@{k} {report.coverage[k]:.12g}")
        lines.append(f"aggregate oracle@{k} {report.oracle[k]:.12g}")
    for s in report.per_sample:
        for k in report.k_values:
            lines.append(f"{s.sample_id} success@{k} {s.success[k]:.12g}")
            lines.append(f"{s.sample_id} coverage@{k} {s.coverage[k]:.12g}")
            lines.append(f"{s.sample_id} oracle@{k} {s.oracle[k]:.12g}")
    return "\n".join(lines) + "\n"


def curve_csv(report: MetricReport) -> str:
    lines = ["prefix,coverage,success"]
    for i, (cov, suc) in enumerate(report.curve, 1):
        lines.append(f"{i},{cov:.9g},{suc:.9g}")
    return "\n".join(lines) + "\n"


def curve_svg(report: MetricReport, width: int = 480, height: int = 360) -> str:
    """Success-coverage curve as a standalone SVG (polyline plus axes)."""
    pad = 48
    pts = report.curve or [(0.0, 0.0)]
    max_cov = max(0.05, max(p[0] for p in pts))

    def sx(cov):
        return pad + (width - 2 * pad) * cov / max_cov

    def sy(suc):
        return height - pad - (height - 2 * pad) * suc

    poly = " ".join(f"{sx(c):.2f},{sy(s):.2f}" for c, s in pts)
    tick_cov = [0.0, max_cov / 2, max_cov]
    tick_suc = [0.0, 0.5, 1.0]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<polyline points="{poly}" fill="none" stroke="#1f77b4" stroke-width="2"/>',
    ]
    for c in tick_cov:
        parts.append(f'<text x="{sx(c):.2f}" y="{height - pad + 16}" '
                     f'font-size="11" text-anchor="middle">{c:.2f}</text>')
    for s in tick_suc:
        parts.append(f'<text x="{pad - 6}" y="{sy(s) + 4:.2f}" font-size="11" '
                     f'text-anchor="end">{s:.1f}</text>')
    parts.append(f'<text x="{width / 2}" y="{height - 10}" font-size="12" '
                 f'text-anchor="middle">coverage</text>')
    parts.append(f'<text x="14" y="{height / 2}" font-size="12" '
                 f'text-anchor="middle" transform="rotate(-90 14 {height / 2})">'
                 f'success</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
