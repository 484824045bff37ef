"""Look-at/perspective vertex transform and its reverse-mode derivative."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCamera, TapeMismatch


@dataclass(frozen=True)
class Camera:
    eye: tuple
    center: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    fov_y: float = math.radians(60.0)
    aspect: float = 1.0
    near: float = 0.1
    far: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.fov_y < math.pi:
            raise DegenerateCamera(f"fov_y must lie in (0, pi), got {self.fov_y}")
        if self.aspect <= 0:
            raise DegenerateCamera("aspect must be positive")
        if not 0.0 < self.near < self.far:
            raise DegenerateCamera(f"need 0 < near < far, got near={self.near} far={self.far}")
        view_basis(self)

    def with_eye(self, eye) -> "Camera":
        return Camera(tuple(float(x) for x in eye), self.center, self.up,
                      self.fov_y, self.aspect, self.near, self.far)


def view_basis(camera: Camera):
    """Return (side, up, forward) unit vectors of the look-at frame."""
    eye = np.asarray(camera.eye, dtype=np.float64)
    center = np.asarray(camera.center, dtype=np.float64)
    up = np.asarray(camera.up, dtype=np.float64)
    r = center - eye
    rn = np.linalg.norm(r)
    if rn == 0.0:
        raise DegenerateCamera("eye coincides with center")
    f = r / rn
    upn = up / np.linalg.norm(up)
    if abs(float(f @ upn)) > math.cos(1e-6):
        raise DegenerateCamera("up vector is parallel to the view direction")
    q = np.cross(f, upn)
    s = q / np.linalg.norm(q)
    u = np.cross(s, f)
    return s, u, f


def look_at_matrix(camera: Camera) -> np.ndarray:
    s, u, f = view_basis(camera)
    eye = np.asarray(camera.eye, dtype=np.float64)
    m = np.eye(4)
    m[0, :3], m[1, :3], m[2, :3] = s, u, -f
    m[:3, 3] = -m[:3, :3] @ eye
    return m


def perspective_matrix(camera: Camera) -> np.ndarray:
    t = math.tan(camera.fov_y / 2.0)
    n, f = camera.near, camera.far
    m = np.zeros((4, 4))
    m[0, 0] = 1.0 / (camera.aspect * t)
    m[1, 1] = 1.0 / t
    m[2, 2] = -(f + n) / (f - n)
    m[2, 3] = -2.0 * f * n / (f - n)
    m[3, 2] = -1.0
    return m


@dataclass(frozen=True)
class ScreenVertices:
    ndc_xy: np.ndarray
    depth: np.ndarray
    inv_w: np.ndarray
    behind_flags: np.ndarray


@dataclass(frozen=True)
class VertexStageTape:
    basis: tuple
    offsets: np.ndarray  # vertex - eye, world frame
    cam: np.ndarray  # camera-frame (x, y, depth)
    scale: tuple  # (aspect * tan, tan)
    r_norm: float
    q_norm: float
    up: np.ndarray
    behind: np.ndarray


def project_vertices(vertices, camera: Camera):
    """Map object-space points to NDC.

    Depth is the distance along the view direction, positive in front of
    the eye; vertices with depth <= near are flagged and given NaN-free
    placeholder coordinates.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    s, u, f = view_basis(camera)
    eye = np.asarray(camera.eye, dtype=np.float64)
    d = vertices - eye
    x, y, z = d @ s, d @ u, d @ f
    behind = z <= camera.near
    safe = np.where(behind, 1.0, z)
    t = math.tan(camera.fov_y / 2.0)
    ndc = np.stack([x / (camera.aspect * t * safe), y / (t * safe)], axis=1)
    ndc[behind] = 0.0
    inv_w = np.where(behind, 0.0, 1.0 / safe)

    up = np.asarray(camera.up, dtype=np.float64)
    upn = up / np.linalg.norm(up)
    tape = VertexStageTape(
        basis=(s, u, f), offsets=d, cam=np.stack([x, y, z], axis=1),
        scale=(camera.aspect * t, t),
        r_norm=float(np.linalg.norm(np.asarray(camera.center, dtype=np.float64) - eye)),
        q_norm=float(np.linalg.norm(np.cross(f, upn))), up=upn, behind=behind,
    )
    return ScreenVertices(ndc, z.copy(), inv_w, behind), tape


def project_backward(grad_ndc, grad_depth, tape: VertexStageTape):
    """Gradients of a scalar w.r.t. vertex positions and the camera eye.

    Center and up are held fixed; behind-flagged vertices get zero.
    """
    n = len(tape.offsets)
    grad_ndc = np.asarray(grad_ndc, dtype=np.float64)
    grad_depth = np.zeros(n) if grad_depth is None else np.asarray(grad_depth, dtype=np.float64)
    if grad_ndc.shape != (n, 2) or grad_depth.shape != (n,):
        raise TapeMismatch(f"gradient shapes {grad_ndc.shape}/{grad_depth.shape} do not match tape with {n} vertices")
    s, u, f = tape.basis
    x, y, z = tape.cam.T
    live = ~tape.behind
    z = np.where(live, z, 1.0)
    ax, ay = tape.scale
    gx = np.where(live, grad_ndc[:, 0] / (ax * z), 0.0)
    gy = np.where(live, grad_ndc[:, 1] / (ay * z), 0.0)
    gz = np.where(live, grad_depth - (gx * x + gy * y) / z, 0.0)

    grad_d = gx[:, None] * s + gy[:, None] * u + gz[:, None] * f
    d = tape.offsets
    g_s = gx @ d
    g_u = gy @ d
    g_f = gz @ d
    # u = s x f
    g_s = g_s + np.cross(f, g_u)
    g_f = g_f + np.cross(g_u, s)
    # s = normalize(f x up)
    g_q = (g_s - s * (s @ g_s)) / tape.q_norm
    g_f = g_f + np.cross(tape.up, g_q)
    # f = normalize(center - eye)
    g_r = (g_f - f * (f @ g_f)) / tape.r_norm
    grad_eye = -grad_d.sum(axis=0) - g_r
    return grad_d, grad_eye
