"""Round-trip optimization tasks.

Each task kind renders targets from a ground-truth scene, starts one
parameter group from a perturbed value and recovers it with Adam:

    a  silhouette_geometry   vertex positions, silhouette (IOU) loss only
    b  vertex_colors         per-vertex colors
    c  texture               texels of a texture map
    d  uvs                   per-vertex texture coordinates
    e  lambertian_geometry   vertex positions under Lambertian shading
    f  camera_eye            camera position under Lambertian shading
    g  sh_lighting           9 spherical-harmonics coefficients
    h  phong_material        k_d, k_s and shininess under Phong shading
"""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .config import SceneConfig, _shading_defaults, build_scene, view_cameras
from .errors import NonFiniteLoss, SchemaError
from .geometry import adjacency
from .io import ensure_dir, load_png, save_obj, save_png, write_loss_csv
from .losses import LossReport
from .optim import AdamState, adam_step
from .pipeline import ParamSet, Target, evaluate, forward_render, get_param, render_targets, set_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskKind:
    letter: str
    name: str
    groups: tuple
    terms: tuple
    model: Optional[str]  # required shading model, None = any (defaults to "none")
    textured: bool = False


TASKS = {t.letter: t for t in (
    TaskKind("a", "silhouette_geometry", ("vertex_positions",), ("iou",), None),
    TaskKind("b", "vertex_colors", ("vertex_colors",), ("iou", "col"), None),
    TaskKind("c", "texture", ("texture",), ("iou", "col"), None, textured=True),
    TaskKind("d", "uvs", ("uvs",), ("iou", "col"), None, textured=True),
    TaskKind("e", "lambertian_geometry", ("vertex_positions",), ("iou", "col"), "lambertian"),
    TaskKind("f", "camera_eye", ("camera_eye",), ("iou", "col"), "lambertian"),
    TaskKind("g", "sh_lighting", ("sh_coeffs",), ("iou", "col"), "sh"),
    TaskKind("h", "phong_material", ("k_d", "k_s", "shininess"), ("iou", "col"), "phong"),
)}


@dataclass
class OptimizationReport:
    kind: str
    losses: list
    final: LossReport
    wall_time: float
    snapshots: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    truth: dict = field(default_factory=dict)
    scene: object = field(default=None, repr=False)
    floor: float = 0.0  # loss at the ground-truth parameters

    @property
    def reduction(self) -> float:
        """Fraction of the reducible loss (initial minus floor) removed."""
        gap = self.losses[0].total - self.floor
        return 1.0 - (self.final.total - self.floor) / gap if gap > 0 else 1.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "iterations": len(self.losses),
            "initial_loss": self.losses[0].total if self.losses else None,
            "final": {"total": self.final.total, **self.final.components},
            "truth_loss": self.floor,
            "reduction": self.reduction if self.losses else None,
            "wall_time_s": self.wall_time,
            "snapshots": list(self.snapshots),
            "metrics": self.metrics,
            "params": {k: np.asarray(v).tolist() for k, v in self.params.items() if np.size(v) <= 64},
        }


@dataclass
class TaskSetup:
    kind: TaskKind
    truth_scene: object
    init_scene: object
    targets: list
    params: ParamSet


def _shading_for(kind: TaskKind, cfg: SceneConfig) -> dict:
    if cfg.shading is None:
        return _shading_defaults({"model": kind.model or "none"})
    if kind.model is not None and cfg.shading["model"] != kind.model:
        raise SchemaError("$.shading.model", f"task {kind.letter} ({kind.name}) needs the {kind.model!r} model")
    return cfg.shading


def _rotate_y(vec, angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * vec[0] + s * vec[2], vec[1], -s * vec[0] + c * vec[2]])


def setup_task(cfg: SceneConfig) -> TaskSetup:
    """Ground-truth scene, perturbed starting scene and per-view targets."""
    if cfg.task is None:
        raise SchemaError("$.task", "optimize needs a task section")
    kind = TASKS[cfg.task["kind"]]
    if kind.textured and cfg.material.get("source") != "texture":
        cfg = replace(cfg, material={"source": "texture", "texture": {"size": 16, "pattern": "checker", "value": 0.5}})
    truth = build_scene(cfg, _shading_for(kind, cfg))
    rng = np.random.default_rng(cfg.seed + 101)
    init = truth
    if kind.letter in ("a", "e"):
        truth = set_params(truth, {"vertex_positions": truth.mesh.vertices * np.asarray(cfg.task["target_scale"])})
    elif kind.letter == "b":
        init = set_params(truth, {"vertex_colors": np.full_like(truth.mesh.colors, 0.5)})
    elif kind.letter == "c":
        init = set_params(truth, {"texture": np.full_like(truth.texture.texels, 0.5)})
    elif kind.letter == "d":
        uv = truth.mesh.uvs
        init = set_params(truth, {"uvs": np.clip(uv + rng.normal(0.0, 0.02, size=uv.shape), 0.0, 1.0)})
    elif kind.letter == "f":
        center = np.asarray(truth.camera.center)
        eye = np.asarray(truth.camera.eye)
        init = set_params(truth, {"camera_eye": center + 1.05 * _rotate_y(eye - center, math.radians(8.0))})
    elif kind.letter == "g":
        init = set_params(truth, {"sh_coeffs": np.array([1.5] + [0.0] * 8)})
    elif kind.letter == "h":
        init = set_params(truth, {"k_d": [0.6], "k_s": [0.15], "shininess": [4.0]})

    cams = view_cameras(cfg)
    if cfg.task.get("targets"):
        targets = []
        for cam, t in zip(cams, cfg.task["targets"]):
            rgb, a_in = load_png(cfg.path(t["color"]))
            alpha = a_in
            if "alpha" in t:
                a_rgb, a_ch = load_png(cfg.path(t["alpha"]))
                alpha = a_ch if a_ch is not None else a_rgb[..., 0]
            if alpha is None:
                raise SchemaError("$.task.targets", "target needs an alpha channel or an alpha image")
            if rgb.shape[:2] != (cfg.height, cfg.width):
                raise SchemaError("$.task.targets", f"target size {rgb.shape[:2]} vs resolution {cfg.height}x{cfg.width}")
            targets.append(Target(cam, rgb, alpha))
        if len(targets) != len(cams):
            raise SchemaError("$.task.targets", f"{len(targets)} targets for {len(cams)} views")
    else:
        targets = render_targets(truth, cams, cfg.workers)
    return TaskSetup(kind, truth, init, targets, ParamSet.from_scene(init, kind.groups))


def silhouette_iou(a, b, threshold: float = 0.5) -> float:
    ma, mb = np.asarray(a) >= threshold, np.asarray(b) >= threshold
    union = np.sum(ma | mb)
    return float(np.sum(ma & mb) / union) if union else 1.0


def _metrics(setup: TaskSetup, scene, targets, workers) -> dict:
    out = {}
    ious, l1s = [], []
    for vi, t in enumerate(targets):
        color, alpha, _ = forward_render(scene, scene.camera if vi == 0 else t.camera, workers)
        ious.append(silhouette_iou(alpha, t.alpha))
        l1s.append(float(np.mean(np.abs(color - t.color))))
    out["silhouette_iou"] = float(np.mean(ious))
    out["color_l1"] = float(np.mean(l1s))
    truth = setup.truth_scene
    k = setup.kind.letter
    if k == "g":
        c, c0 = get_param(scene, "sh_coeffs"), get_param(truth, "sh_coeffs")
        out["sh_rel_l2"] = float(np.linalg.norm(c - c0) / np.linalg.norm(c0))
    if k == "f":
        radius = float(np.max(np.linalg.norm(truth.mesh.vertices - truth.mesh.vertices.mean(axis=0), axis=1)))
        err = float(np.linalg.norm(get_param(scene, "camera_eye") - get_param(truth, "camera_eye")))
        out["eye_error"] = err
        out["eye_error_over_radius"] = err / radius
    if k == "h":
        for g in ("k_d", "k_s", "shininess"):
            out[g] = float(get_param(scene, g)[0])
            out[g + "_true"] = float(get_param(truth, g)[0])
    if k == "c":
        out["texel_mae"] = float(np.mean(np.abs(scene.texture.texels - truth.texture.texels)))
    if k == "d":
        out["uv_mae"] = float(np.mean(np.abs(scene.mesh.uvs - truth.mesh.uvs)))
    if k == "b":
        out["color_mae"] = float(np.mean(np.abs(scene.mesh.colors - truth.mesh.colors)))
    return out


def run_task(cfg: SceneConfig, out_dir: Optional[str] = None, workers: Optional[int] = None,
             callback=None) -> OptimizationReport:
    """Optimize the task's parameter group against its targets with Adam.

    Writes snapshots to ``out_dir`` every ``task.snapshot_every`` iterations
    when both are set. ``callback(i, report, scene)`` runs after each loss
    evaluation.
    """
    workers = workers or cfg.workers
    setup = setup_task(cfg)
    scene = setup.init_scene
    params = setup.params
    state = AdamState(**cfg.optimizer)
    weights = cfg.weights
    adj = adjacency(scene.mesh)
    iters = int(cfg.task["iterations"])
    every = int(cfg.task.get("snapshot_every") or 0)
    losses, snaps = [], []
    values = dict(params.values)
    t0 = time.perf_counter()
    for it in range(iters):
        rep, grads = evaluate(scene, setup.targets, weights, params.enabled, adj, workers=workers,
                              terms=setup.kind.terms)
        if not math.isfinite(rep.total):
            snap = None
            if out_dir:
                snap = os.path.join(ensure_dir(out_dir), f"nonfinite_{it:05d}.png")
                color, alpha, _ = forward_render(scene, workers=workers)
                save_png(snap, np.nan_to_num(color), np.nan_to_num(alpha))
            raise NonFiniteLoss(f"loss became non-finite at iteration {it}", it, snap)
        losses.append(rep)
        if callback is not None:
            callback(it, rep, scene)
        if out_dir and every and it % every == 0:
            snaps.append(_snapshot(scene, out_dir, it, workers))
        values, state = adam_step(values, {g: grads[g] for g in params.enabled}, state)
        scene = set_params(scene, values)
    final, _ = evaluate(scene, setup.targets, weights, params.enabled, adj, workers=workers, terms=setup.kind.terms)
    wall = time.perf_counter() - t0
    if out_dir and every:
        snaps.append(_snapshot(scene, out_dir, iters, workers))
    # regularizers count toward the floor only when they count toward the loss
    reg = tuple(g for g in params.enabled if g == "vertex_positions")
    floor, _ = evaluate(setup.truth_scene, setup.targets, weights, reg, adj, workers=workers, terms=setup.kind.terms)
    report = OptimizationReport(setup.kind.letter, losses, final, wall, snaps,
                                _metrics(setup, scene, setup.targets, workers),
                                {g: get_param(scene, g) for g in params.enabled},
                                {g: get_param(setup.truth_scene, g) for g in params.enabled}, scene,
                                floor.total)
    return report


def _snapshot(scene, out_dir, it, workers) -> str:
    path = os.path.join(ensure_dir(out_dir), f"snapshot_{it:05d}.png")
    color, alpha, _ = forward_render(scene, workers=workers)
    save_png(path, color, alpha)
    return os.path.basename(path)


def write_artifacts(report: OptimizationReport, out_dir: str) -> list:
    """loss.csv, final render, mesh.obj, texture.png (textured scenes) and report.json."""
    import json

    ensure_dir(out_dir)
    written = []
    p = os.path.join(out_dir, "loss.csv")
    write_loss_csv(p, report.losses)
    written.append(p)
    scene = report.scene
    color, alpha, _ = forward_render(scene)
    p = os.path.join(out_dir, "final.png")
    save_png(p, color, alpha)
    written.append(p)
    p = os.path.join(out_dir, "mesh.obj")
    save_obj(scene.mesh, p)
    written.append(p)
    if scene.texture is not None:
        p = os.path.join(out_dir, "texture.png")
        save_png(p, scene.texture.texels)
        written.append(p)
    p = os.path.join(out_dir, "report.json")
    with open(p, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(p)
    return written
