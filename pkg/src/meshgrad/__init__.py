"""Differentiable triangle rasterizer with analytic gradients and inverse-rendering tasks."""
from .camera import Camera, project_backward, project_vertices
from .config import SceneConfig, build_scene, parse_scene
from .geometry import Mesh, adjacency, build_mesh, face_normals, unit_sphere, vertex_normals
from .io import load_obj, load_png, save_obj, save_png
from .losses import LossWeights, combined_loss, iou_loss, l1_loss, laplacian_loss, smoothness_loss
from .optim import AdamState, adam_step
from .pipeline import Scene, backward_render, evaluate, forward_render, gradcheck
from .raster import SoftConfig, rasterize, rasterize_backward
from .shading import Lambertian, NoneLighting, Phong, SphericalHarmonics, Texture, shade, shading_backward
from .tasks import TASKS, run_task

__version__ = "0.1.0"
