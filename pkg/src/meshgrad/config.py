"""Scene/task configuration: JSON schema validation, defaults and scene construction."""
from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Optional

import jsonschema
import numpy as np

from .camera import Camera
from .errors import DegenerateCamera, MeshgradError, SchemaError
from .geometry import unit_sphere
from .io import load_obj, load_png
from .losses import LossWeights
from .pipeline import Scene
from .raster import SoftConfig
from .shading import Lambertian, NoneLighting, Phong, SphericalHarmonics, Texture

TASK_ALIASES = {
    "silhouette_geometry": "a", "vertex_colors": "b", "texture": "c", "uvs": "d",
    "lambertian_geometry": "e", "camera_eye": "f", "sh_lighting": "g", "phong_material": "h",
}

DEFAULT_LIGHT_DIR = (0.4, 0.5, 1.0)
DEFAULT_SH = (1.0, 0.25, 0.35, 0.2, 0.05, 0.1, -0.05, 0.08, 0.06)


def load_schema() -> dict:
    text = resources.files("meshgrad").joinpath("data/scene.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass
class SceneConfig:
    mesh: str = "icosphere:2"
    material: dict = field(default_factory=lambda: {"source": "vertex_colors", "texture": None})
    shading: Optional[dict] = None
    camera: dict = field(default_factory=lambda: {
        "eye": [0.0, 0.0, 3.0], "center": [0.0, 0.0, 0.0], "up": [0.0, 1.0, 0.0],
        "fov_y_deg": 45.0, "near": 0.1, "far": 100.0})
    views: dict = field(default_factory=lambda: {"count": 1, "elevation_deg": 20.0, "radius": None})
    soft: dict = field(default_factory=lambda: {"delta": 1e-4, "cutoff_eps": 1e-7})
    resolution: list = field(default_factory=lambda: [64, 64])
    loss_weights: dict = field(default_factory=lambda: {"lambda_col": 1.0, "lambda_sm": 0.001, "lambda_lap": 0.01})
    task: Optional[dict] = None
    optimizer: dict = field(default_factory=lambda: {"lr": 1e-4, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8})
    seed: int = 0
    workers: int = 1
    precision: str = "double"
    base_dir: str = field(default=".", repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def width(self) -> int:
        return int(self.resolution[0])

    @property
    def height(self) -> int:
        return int(self.resolution[1])

    @property
    def weights(self) -> LossWeights:
        return LossWeights(**self.loss_weights)

    def path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _json_path(err) -> str:
    parts = ["$"]
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else f".{p}")
    return "".join(parts)


def parse_scene(source, overrides: Optional[dict] = None) -> SceneConfig:
    """Validate a config (path, JSON text or dict) and materialize defaults.

    ``overrides`` uses the same layout as the file and wins over it.
    """
    base_dir = "."
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        path = os.fspath(source)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        base_dir = os.path.dirname(os.path.abspath(path))
    if not isinstance(raw, dict):
        raise SchemaError("$", "top level must be an object")
    if overrides:
        raw = _merge(raw, overrides)

    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise SchemaError(_json_path(e), e.message)

    defaults = SceneConfig()
    merged = _merge(asdict(defaults), raw)
    merged.pop("base_dir", None)
    cfg = SceneConfig(**merged, base_dir=base_dir)
    if cfg.shading is not None:
        cfg.shading = _shading_defaults(cfg.shading)
    if cfg.material.get("source") == "texture" and cfg.material.get("texture") is None:
        cfg.material["texture"] = {"size": 16, "pattern": "checker"}
    if isinstance(cfg.material.get("texture"), dict):
        cfg.material["texture"] = _merge({"size": 16, "pattern": "checker", "value": 0.5}, cfg.material["texture"])
    if cfg.task is not None:
        kind = TASK_ALIASES.get(cfg.task["kind"], cfg.task["kind"])
        cfg.task = _merge({"iterations": 500, "snapshot_every": 0, "target_scale": [1.25, 0.8, 1.0],
                           "targets": None}, cfg.task)
        cfg.task["kind"] = kind
    _check_references(cfg)
    return cfg


def _shading_defaults(sh: dict) -> dict:
    model = sh["model"]
    if model == "lambertian":
        return _merge({"k_d": 1.0, "light_dir": list(DEFAULT_LIGHT_DIR)}, sh)
    if model == "phong":
        return _merge({"k_d": 1.0, "k_s": 0.4, "shininess": 10.0, "light_dir": list(DEFAULT_LIGHT_DIR)}, sh)
    if model == "sh":
        return _merge({"coeffs": list(DEFAULT_SH)}, sh)
    return dict(sh)


def _check_references(cfg: SceneConfig) -> None:
    if cfg.mesh.startswith("icosphere:"):
        try:
            level = int(cfg.mesh.split(":", 1)[1])
        except ValueError:
            raise SchemaError("$.mesh", f"bad template {cfg.mesh!r}") from None
        if not 0 <= level <= 5:
            raise SchemaError("$.mesh", "icosphere level must be in 0..5")
    elif not os.path.isfile(cfg.path(cfg.mesh)):
        raise SchemaError("$.mesh", f"mesh file {cfg.mesh!r} not found")
    tex = cfg.material.get("texture")
    if isinstance(tex, str) and not os.path.isfile(cfg.path(tex)):
        raise SchemaError("$.material.texture", f"texture file {tex!r} not found")
    c = cfg.camera
    if not c["near"] < c["far"]:
        raise SchemaError("$.camera", "near must be smaller than far")
    if np.allclose(c["eye"], c["center"]):
        raise SchemaError("$.camera.eye", "eye coincides with center")
    if cfg.task is not None and cfg.task.get("targets"):
        for i, t in enumerate(cfg.task["targets"]):
            for key in ("color", "alpha"):
                if key in t and not os.path.isfile(cfg.path(t[key])):
                    raise SchemaError(f"$.task.targets[{i}].{key}", f"file {t[key]!r} not found")


# ---- scene construction ----

def default_colors(vertices, seed: int = 0):
    """Smooth per-vertex color pattern in [0.1, 0.9], fixed by ``seed``."""
    rng = np.random.default_rng(seed)
    freq = rng.uniform(1.5, 3.0, size=3)
    phase = rng.uniform(0.0, 2 * np.pi, size=3)
    perm = rng.permutation(3)
    return 0.5 + 0.4 * np.sin(vertices[:, perm] * freq + phase)


def planar_uvs(vertices):
    """Front projection of x/y onto [0.02, 0.98]^2; v grows downward."""
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    u = (vertices[:, 0] - lo[0]) / span[0]
    v = (hi[1] - vertices[:, 1]) / span[1]
    return 0.02 + 0.96 * np.stack([u, v], axis=1)


def make_texture(spec: dict, seed: int = 0) -> np.ndarray:
    size = int(spec.get("size", 16))
    rng = np.random.default_rng(seed + 1)
    if spec.get("pattern") == "constant":
        return np.full((size, size, 3), float(spec.get("value", 0.5)))
    if spec.get("pattern") == "noise":
        coarse = rng.uniform(0.1, 0.9, size=(4, 4, 3))
        idx = np.minimum((np.arange(size) * 4) // size, 3)
        return coarse[idx][:, idx]
    a, b = rng.uniform(0.15, 0.45, 3), rng.uniform(0.55, 0.9, 3)
    cell = max(size // 4, 1)
    ii, jj = np.meshgrid(np.arange(size) // cell, np.arange(size) // cell, indexing="ij")
    check = ((ii + jj) % 2)[..., None]
    return np.where(check == 1, a, b) + rng.uniform(-0.05, 0.05, size=(size, size, 3))


def make_lighting(shading: Optional[dict]):
    if shading is None or shading["model"] == "none":
        return NoneLighting()
    m = shading["model"]
    if m == "lambertian":
        return Lambertian(shading["k_d"], tuple(shading["light_dir"]))
    if m == "phong":
        return Phong(shading["k_d"], shading["k_s"], shading["shininess"], tuple(shading["light_dir"]))
    return SphericalHarmonics(tuple(shading["coeffs"]))


def make_camera(cfg: SceneConfig, eye=None) -> Camera:
    c = cfg.camera
    try:
        return Camera(tuple(eye if eye is not None else c["eye"]), tuple(c["center"]), tuple(c["up"]),
                      math.radians(c["fov_y_deg"]), cfg.width / cfg.height, c["near"], c["far"])
    except DegenerateCamera as exc:
        raise SchemaError("$.camera", str(exc)) from None


def view_cameras(cfg: SceneConfig):
    """Primary camera followed by count-1 seeded ring cameras."""
    cams = [make_camera(cfg)]
    v = cfg.views
    n = int(v["count"])
    if n > 1:
        center = np.asarray(cfg.camera["center"], dtype=np.float64)
        radius = v["radius"] or float(np.linalg.norm(np.asarray(cfg.camera["eye"]) - center))
        rng = np.random.default_rng(cfg.seed + 7919)
        el = math.radians(v["elevation_deg"])
        for az in rng.uniform(0.0, 2 * math.pi, size=n - 1):
            eye = center + radius * np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
            cams.append(make_camera(cfg, eye))
    return cams


def load_mesh(cfg: SceneConfig):
    if cfg.mesh.startswith("icosphere:"):
        return unit_sphere(int(cfg.mesh.split(":", 1)[1]))
    try:
        return load_obj(cfg.path(cfg.mesh))
    except MeshgradError as exc:
        raise SchemaError("$.mesh", str(exc)) from None


def build_scene(cfg: SceneConfig, shading: Optional[dict] = None) -> Scene:
    """Scene described by a config; ``shading`` overrides ``cfg.shading``."""
    mesh = load_mesh(cfg)
    textured = cfg.material.get("source") == "texture"
    kw = {}
    if mesh.colors is None:
        kw["colors"] = default_colors(mesh.vertices, cfg.seed)
    texture = None
    if textured:
        if mesh.uvs is None:
            kw["uvs"] = planar_uvs(mesh.vertices)
        tex = cfg.material["texture"]
        if isinstance(tex, str):
            rgb, _ = load_png(cfg.path(tex))
            texture = Texture(rgb)
        else:
            texture = Texture(make_texture(tex, cfg.seed))
    if kw:
        mesh = mesh.replace(**kw)
    if cfg.precision == "single":
        mesh = mesh.replace(vertices=mesh.vertices.astype(np.float32),
                            colors=None if mesh.colors is None else mesh.colors.astype(np.float32),
                            uvs=None if mesh.uvs is None else mesh.uvs.astype(np.float32))
        if texture is not None:
            texture = Texture(texture.texels.astype(np.float32))
    lighting = make_lighting(shading if shading is not None else cfg.shading)
    return Scene(mesh, make_camera(cfg), lighting, texture,
                 SoftConfig(cfg.soft["delta"], cfg.soft["cutoff_eps"]), cfg.width, cfg.height)
