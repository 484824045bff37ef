"""Full render pipeline (project -> rasterize -> shade) and its reverse pass."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .camera import Camera, project_backward, project_vertices
from .errors import ShapeMismatch, TapeMismatch
from .geometry import Adjacency, Mesh, adjacency, vertex_normals_array, vertex_normals_backward
from .optim import project
from .losses import LossReport, LossWeights, combined_loss, iou_loss, l1_loss, laplacian_loss, smoothness_loss
from .raster import SoftConfig, rasterize, rasterize_backward
from .shading import (
    Lambertian,
    NoneLighting,
    Phong,
    SphericalHarmonics,
    Texture,
    sample_texture,
    sample_texture_backward,
    shade,
    shading_backward,
)

GROUPS = ("vertex_positions", "vertex_colors", "uvs", "texture", "light_dir", "k_d", "k_s",
          "shininess", "sh_coeffs", "camera_eye")
GEOMETRY_GROUPS = {"vertex_positions", "vertex_colors", "uvs", "texture", "camera_eye"}


@dataclass(frozen=True)
class Scene:
    mesh: Mesh
    camera: Camera
    lighting: object = field(default_factory=NoneLighting)
    texture: Optional[Texture] = None
    soft: SoftConfig = field(default_factory=SoftConfig)
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if self.texture is not None and self.mesh.uvs is None:
            raise ShapeMismatch("texture model needs per-vertex uvs")
        if self.texture is None and self.mesh.colors is None:
            raise ShapeMismatch("vertex-color model needs per-vertex colors")

    @property
    def textured(self) -> bool:
        return self.texture is not None


@dataclass
class RenderTapes:
    scene: Scene
    camera: Camera
    layout: dict
    vertex: object
    raster: object
    buffers: object
    shade: object
    texture: object = None


class GradientSet(dict):
    """Mapping from parameter-group name to a gradient array."""


def _layout(scene: Scene):
    layout, k = {}, 0
    base = ("uvs", 2) if scene.textured else ("colors", 3)
    layout[base[0]] = slice(k, k + base[1])
    k += base[1]
    if not isinstance(scene.lighting, NoneLighting):
        layout["normals"] = slice(k, k + 3)
        k += 3
    if isinstance(scene.lighting, Phong):
        layout["positions"] = slice(k, k + 3)
        k += 3
    return layout


def forward_render(scene: Scene, camera: Optional[Camera] = None, workers: int = 1):
    """Render color (H, W, 3) and alpha (H, W) images plus the tapes for backward."""
    camera = camera or scene.camera
    mesh = scene.mesh
    screen, vtape = project_vertices(mesh.vertices, camera)
    layout = _layout(scene)
    cols = []
    for name in layout:
        if name == "colors":
            cols.append(mesh.colors)
        elif name == "uvs":
            cols.append(mesh.uvs)
        elif name == "normals":
            cols.append(vertex_normals_array(mesh.vertices, mesh.faces)[0])
        else:
            cols.append(mesh.vertices)
    attrs = np.concatenate(cols, axis=1)
    buffers, rtape = rasterize(screen, mesh.faces, attrs, scene.soft, scene.width, scene.height, workers)
    img = buffers.attr_image
    covered = buffers.covered
    ttape = None
    if scene.textured:
        i_c, ttape = sample_texture(scene.texture, img[..., layout["uvs"]], covered)
    else:
        i_c = img[..., layout["colors"]]
    normal_img = img[..., layout["normals"]] if "normals" in layout else None
    pos_img = img[..., layout["positions"]] if "positions" in layout else None
    color, stape = shade(i_c, scene.lighting, covered, normal_img, pos_img, camera.eye)
    tapes = RenderTapes(scene, camera, layout, vtape, rtape, buffers, stape, ttape)
    return color, buffers.alpha, tapes


def backward_render(grad_color, grad_alpha, tapes: RenderTapes, enabled=GROUPS) -> GradientSet:
    """Reverse the pipeline; only groups in ``enabled`` appear in the result."""
    enabled = set(enabled)
    scene = tapes.scene
    H, W = scene.height, scene.width
    grad_color = np.zeros((H, W, 3)) if grad_color is None else np.asarray(grad_color, dtype=np.float64)
    grad_alpha = np.zeros((H, W)) if grad_alpha is None else np.asarray(grad_alpha, dtype=np.float64)
    if grad_color.shape != (H, W, 3) or grad_alpha.shape != (H, W):
        raise TapeMismatch("gradient images do not match the rendered resolution")
    out = GradientSet()
    sg = shading_backward(grad_color, tapes.shade)
    for name, val in sg.grad_light.items():
        if name in enabled:
            out[name] = np.atleast_1d(np.asarray(val, dtype=np.float64))
    if not enabled & GEOMETRY_GROUPS:
        return out

    layout = tapes.layout
    C = tapes.raster.attrs.shape[1]
    g_attr_img = np.zeros((H, W, C))
    if scene.textured:
        g_tex, g_uv = sample_texture_backward(sg.grad_color, tapes.texture)
        g_attr_img[..., layout["uvs"]] = g_uv
        if "texture" in enabled:
            out["texture"] = g_tex
    else:
        g_attr_img[..., layout["colors"]] = sg.grad_color
    if "normals" in layout:
        g_attr_img[..., layout["normals"]] = sg.grad_normals
    if "positions" in layout:
        g_attr_img[..., layout["positions"]] = sg.grad_positions

    need_raster = enabled & {"vertex_positions", "vertex_colors", "uvs", "camera_eye"}
    if not need_raster:
        return out
    g_xy, g_attrs = rasterize_backward(g_attr_img, grad_alpha, tapes.raster)
    if "vertex_colors" in enabled and "colors" in layout:
        out["vertex_colors"] = g_attrs[:, layout["colors"]]
    if "uvs" in enabled and "uvs" in layout:
        out["uvs"] = g_attrs[:, layout["uvs"]]
    if enabled & {"vertex_positions", "camera_eye"}:
        g_v, g_eye = project_backward(g_xy, None, tapes.vertex)
        if "vertex_positions" in enabled:
            mesh = scene.mesh
            if "normals" in layout:
                g_v = g_v + vertex_normals_backward(mesh.vertices, mesh.faces, g_attrs[:, layout["normals"]])
            if "positions" in layout:
                g_v = g_v + g_attrs[:, layout["positions"]]
            out["vertex_positions"] = g_v
        if "camera_eye" in enabled:
            if sg.grad_eye is not None:
                g_eye = g_eye + sg.grad_eye
            out["camera_eye"] = g_eye
    return out


# ---- parameter groups ----

def light_groups(lighting) -> tuple:
    if isinstance(lighting, Lambertian):
        return ("light_dir", "k_d")
    if isinstance(lighting, Phong):
        return ("light_dir", "k_d", "k_s", "shininess")
    if isinstance(lighting, SphericalHarmonics):
        return ("sh_coeffs",)
    return ()


def expand_groups(scene: Scene, groups) -> tuple:
    """Resolve aliases ("light", "material") and check groups exist in the scene."""
    out = []
    for g in groups:
        if g == "light":
            out += light_groups(scene.lighting)
        elif g == "material":
            out += [x for x in ("k_d", "k_s", "shininess") if x in light_groups(scene.lighting)]
        else:
            out.append(g)
    avail = set(available_groups(scene))
    for g in out:
        if g not in GROUPS:
            raise ValueError(f"unknown parameter group {g!r}")
        if g not in avail:
            raise ValueError(f"group {g!r} is not present in this scene")
    if not out:
        raise ValueError("at least one parameter group must be enabled")
    return tuple(dict.fromkeys(out))


def available_groups(scene: Scene) -> tuple:
    g = ["vertex_positions", "camera_eye"]
    g.append("uvs" if scene.textured else "vertex_colors")
    if scene.textured:
        g.append("texture")
    return tuple(g) + light_groups(scene.lighting)


@dataclass
class ParamSet:
    enabled: tuple
    values: dict

    @classmethod
    def from_scene(cls, scene: Scene, groups) -> "ParamSet":
        groups = expand_groups(scene, groups)
        return cls(groups, {g: get_param(scene, g) for g in groups})


def get_param(scene: Scene, group: str) -> np.ndarray:
    m, L = scene.mesh, scene.lighting
    if group == "vertex_positions":
        return m.vertices.copy()
    if group == "vertex_colors":
        return m.colors.copy()
    if group == "uvs":
        return m.uvs.copy()
    if group == "texture":
        return scene.texture.texels.copy()
    if group == "camera_eye":
        return np.array(scene.camera.eye, dtype=np.float64)
    if group == "sh_coeffs":
        return np.array(L.coeffs, dtype=np.float64)
    if group == "light_dir":
        return np.array(L.light_dir, dtype=np.float64)
    if group in ("k_d", "k_s", "shininess"):
        return np.array([getattr(L, group)], dtype=np.float64)
    raise ValueError(f"unknown parameter group {group!r}")


def set_params(scene: Scene, values: dict) -> Scene:
    """Return a scene with the given group values substituted."""
    mesh_kw, light_kw, changes = {}, {}, {}
    for g, v in values.items():
        v = np.asarray(v, dtype=np.float64)
        if g == "vertex_positions":
            mesh_kw["vertices"] = v
        elif g == "vertex_colors":
            mesh_kw["colors"] = v
        elif g == "uvs":
            mesh_kw["uvs"] = v
        elif g == "texture":
            changes["texture"] = Texture(v)
        elif g == "camera_eye":
            changes["camera"] = scene.camera.with_eye(v)
        elif g == "sh_coeffs":
            light_kw["coeffs"] = tuple(v)
        elif g == "light_dir":
            light_kw["light_dir"] = tuple(v)
        elif g in ("k_d", "k_s", "shininess"):
            light_kw[g] = float(v.reshape(-1)[0])
        else:
            raise ValueError(f"unknown parameter group {g!r}")
    if mesh_kw:
        changes["mesh"] = scene.mesh.replace(**mesh_kw)
    if light_kw:
        changes["lighting"] = replace(scene.lighting, **light_kw)
    return replace(scene, **changes) if changes else scene


# ---- losses over a scene ----

@dataclass(frozen=True)
class Target:
    camera: Camera
    color: np.ndarray
    alpha: np.ndarray


def render_targets(scene: Scene, cameras, workers: int = 1):
    out = []
    for c in cameras:
        color, alpha, _ = forward_render(scene, c, workers)
        out.append(Target(c, color, alpha))
    return out


def evaluate(scene: Scene, targets, weights: LossWeights, enabled=GROUPS, adj: Optional[Adjacency] = None,
             regularize: bool = True, workers: int = 1, terms=("iou", "col")):
    """Combined loss over all target views and its gradient for the enabled groups.

    Image terms are averaged over views. The primary camera (``scene.camera``)
    is replaced by each target's camera, except that the camera_eye group
    always refers to the first view.
    """
    enabled = tuple(enabled)
    iou_sum = col_sum = 0.0
    grads = GradientSet()
    nview = len(targets)
    for vi, tgt in enumerate(targets):
        camera = scene.camera if vi == 0 else tgt.camera
        color, alpha, tapes = forward_render(scene, camera, workers)
        g_color = g_alpha = None
        if "iou" in terms:
            v, g_alpha = iou_loss(tgt.alpha, alpha)
            iou_sum += v
            g_alpha = g_alpha / nview
        if "col" in terms and weights.lambda_col > 0:
            v, g_color = l1_loss(tgt.color, color)
            col_sum += v
            g_color = g_color * (weights.lambda_col / nview)
        view_enabled = enabled if vi == 0 else tuple(g for g in enabled if g != "camera_eye")
        for k, g in backward_render(g_color, g_alpha, tapes, view_enabled).items():
            grads[k] = grads[k] + g if k in grads else g
    comps = {"iou": iou_sum / nview, "col": col_sum / nview}
    if regularize and "vertex_positions" in enabled:
        adj = adj or adjacency(scene.mesh)
        sm, g_sm = smoothness_loss(scene.mesh, adj)
        lap, g_lap = laplacian_loss(scene.mesh, adj)
        comps["sm"], comps["lap"] = sm, lap
        grads["vertex_positions"] = (grads.get("vertex_positions", 0.0) + weights.lambda_sm * g_sm
                                     + weights.lambda_lap * g_lap)
    for g in enabled:
        grads.setdefault(g, np.zeros_like(get_param(scene, g)))
    return combined_loss(comps, weights), grads


# ---- gradient check ----

@dataclass
class GradcheckReport:
    group: str
    rows: list  # (index, analytic, numeric, rel_err, status)
    passed: int = 0
    failed: int = 0
    skipped: int = 0
    rejected: Optional[str] = None

    @property
    def pass_rate(self) -> float:
        n = self.passed + self.failed
        return self.passed / n if n else 0.0

    def ok(self, min_rate: float = 0.99) -> bool:
        return self.rejected is None and self.passed + self.failed > 0 and self.pass_rate >= min_rate

    def table(self) -> str:
        lines = [f"# gradcheck group={self.group} passed={self.passed} failed={self.failed} skipped={self.skipped}"]
        if self.rejected:
            lines.append(f"# rejected: {self.rejected}")
        lines.append("index\tanalytic\tnumeric\trel_err\tstatus")
        for idx, a, n, r, s in self.rows:
            lines.append(f"{idx}\t{a:.10e}\t{n:.10e}\t{r:.3e}\t{s}")
        return "\n".join(lines) + "\n"


def smoothness_signature(scene: Scene, extra_cameras=(), workers: int = 1):
    """Discrete state of every non-smooth switch in the render: winning faces,
    soft-support membership, lighting clamps and texel cells.

    The first view is always ``scene.camera`` so eye perturbations register.
    """
    sig = []
    for c in [scene.camera, *extra_cameras]:
        _, _, t = forward_render(scene, c, workers)
        sig.append(t.buffers.face_id.tobytes())
        for _, rec in t.raster.tiles:
            sig.append(rec.s_pix.tobytes() + rec.s_face.tobytes())
        sh = t.shade
        for arr in (sh.ln, sh.rv, sh.i_l if isinstance(scene.lighting, SphericalHarmonics) else None):
            if arr is not None:
                sig.append((arr > 0).tobytes())
        if t.texture is not None:
            sig.append(t.texture.idx.tobytes())
    return sig


def gradcheck_targets(scene: Scene, cameras, seed: int = 0, workers: int = 1):
    """Targets that keep the L1 term away from its kink: every channel sits at
    least 0.1 from the current render."""
    rng = np.random.default_rng(seed)
    out = []
    for c in cameras:
        color, alpha, _ = forward_render(scene, c, workers)
        offset = rng.choice([-1.0, 1.0], size=color.shape) * rng.uniform(0.1, 0.3, size=color.shape)
        out.append(Target(c, color + offset, rng.uniform(0.0, 1.0, size=alpha.shape)))
    return out


def _inset(group: str, value: np.ndarray, h: float) -> np.ndarray:
    """Project a jittered base point at least h inside the lower bounds."""
    if group in ("k_d", "k_s"):
        return np.maximum(value, h)
    if group == "shininess":
        return np.maximum(value, 1.0 + h)
    return project(group, value)


def gradcheck(scene: Scene, param_group: str, sample_count: int = 20, h: float = 1e-4, tolerance: float = 1e-3,
              weights: LossWeights = LossWeights(), targets=None, seed: int = 0, terms=("iou", "col"),
              atol: float = 1e-8, precision: str = "double", workers: int = 1) -> GradcheckReport:
    """Compare analytic and central-difference gradients of the total loss.

    Samples whose +h or -h perturbation changes any non-smooth switch (see
    :func:`smoothness_signature`) are skipped.
    """
    report = GradcheckReport(param_group, [])
    if not h > 0:
        report.rejected = f"step h must be positive, got {h}"
        return report
    if precision != "double":
        report.rejected = "gradcheck requires double precision"
        return report
    try:
        (group,) = expand_groups(scene, [param_group])
    except ValueError as exc:
        report.rejected = str(exc)
        return report
    if targets is None:
        targets = gradcheck_targets(scene, [scene.camera], seed, workers)
    cameras = [t.camera for t in targets[1:]]
    adj = adjacency(scene.mesh)
    rng = np.random.default_rng(seed)
    base = get_param(scene, group)

    def loss_and_grad(val):
        s = set_params(scene, {group: val})
        rep, g = evaluate(s, targets, weights, (group,), adj, workers=workers, terms=terms)
        return rep.total, g[group].reshape(-1), s

    # samples are (base point, coordinate); small groups get extra samples
    # at jittered base points so the pass rate means something
    _, flat_a, base_scene = loss_and_grad(base)
    nonzero = np.flatnonzero(flat_a != 0)
    n_pref = min(len(nonzero), int(round(0.75 * sample_count)))
    picks = list(rng.choice(nonzero, size=n_pref, replace=False)) if n_pref else []
    rest = np.setdiff1d(np.arange(flat_a.size), picks)
    picks += list(rng.choice(rest, size=min(len(rest), sample_count - len(picks)), replace=False))
    plan = [(0, int(i)) for i in picks]
    n_jitter = sample_count - len(plan)
    offsets = [np.zeros_like(base)]
    for j in range(n_jitter):
        offsets.append(rng.uniform(-50 * h, 50 * h, size=base.shape))
        plan.append((j + 1, int(rng.integers(base.size))))

    cache = {}
    for which, idx in plan:
        if which not in cache:
            # keep both difference points valid, then round-trip through the
            # scene so e.g. light_dir stays unit length
            b = get_param(set_params(scene, {group: _inset(group, base + offsets[which], h)}), group)
            if which == 0:
                cache[which] = (b, flat_a, smoothness_signature(base_scene, cameras, workers))
            else:
                _, g, sc = loss_and_grad(b)
                cache[which] = (b, g, smoothness_signature(sc, cameras, workers))
        b, g, sig = cache[which]
        plus, minus = b.copy(), b.copy()
        plus.reshape(-1)[idx] += h
        minus.reshape(-1)[idx] -= h
        lp, _, sp = loss_and_grad(plus)
        lm, _, sm_ = loss_and_grad(minus)
        num = (lp - lm) / (2 * h)
        a = float(g[idx])
        err = abs(a - num)
        rel = err / max(abs(a), abs(num), 1e-300)
        label = idx if which == 0 else f"{idx}@j{which}"
        if (smoothness_signature(sp, cameras, workers) != sig
                or smoothness_signature(sm_, cameras, workers) != sig):
            report.rows.append((label, a, num, rel, "skip"))
            report.skipped += 1
            continue
        ok = err <= atol or rel <= tolerance
        report.rows.append((label, a, num, rel, "pass" if ok else "FAIL"))
        if ok:
            report.passed += 1
        else:
            report.failed += 1
    return report
