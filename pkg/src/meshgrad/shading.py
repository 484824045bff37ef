"""Fragment stage: texture lookup, lighting factors and color composition.

The final color is ``I = I_l * I_c + I_s`` where ``I_c`` is the unlit base
color and the lighting model supplies the multiplicative factor ``I_l`` and
the additive specular term ``I_s``. All dot products are clamped at zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np

from .errors import ShapeMismatch, TapeMismatch, WrongSpecVariant
from .geometry import normalize_backward

SH_C0 = 0.282095
SH_C1 = 0.488603
SH_C2 = 1.092548
SH_C3 = 0.315392
SH_C4 = 0.546274


def _unit(v, name="light_dir"):
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise ValueError(f"{name} must be a non-zero finite vector")
    return v / n


@dataclass(frozen=True)
class NoneLighting:
    pass


@dataclass(frozen=True)
class Lambertian:
    k_d: float = 1.0
    light_dir: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.k_d < 0:
            raise ValueError("k_d must be non-negative")
        object.__setattr__(self, "light_dir", tuple(_unit(self.light_dir)))


@dataclass(frozen=True)
class Phong:
    k_d: float = 1.0
    k_s: float = 0.4
    shininess: float = 10.0
    light_dir: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.k_d < 0 or self.k_s < 0:
            raise ValueError("k_d and k_s must be non-negative")
        if self.shininess < 1:
            raise ValueError("shininess must be >= 1")
        object.__setattr__(self, "light_dir", tuple(_unit(self.light_dir)))


@dataclass(frozen=True)
class SphericalHarmonics:
    coeffs: tuple = (1.0,) + (0.0,) * 8

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.shape != (9,) or not np.all(np.isfinite(c)):
            raise ValueError("spherical harmonics need 9 finite coefficients")
        object.__setattr__(self, "coeffs", tuple(float(x) for x in c))


LightingSpec = Union[NoneLighting, Lambertian, Phong, SphericalHarmonics]


@dataclass(frozen=True)
class Texture:
    texels: np.ndarray

    def __post_init__(self):
        t = np.array(self.texels, dtype=np.float64)
        if t.ndim != 3 or t.shape[2] != 3 or t.shape[0] < 1 or t.shape[1] < 1:
            raise ShapeMismatch(f"texture must be HxWx3, got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("texels must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "texels", t)

    @property
    def height(self) -> int:
        return self.texels.shape[0]

    @property
    def width(self) -> int:
        return self.texels.shape[1]


def sh_basis(n):
    """Real spherical harmonics, bands 0-2, evaluated at unit vectors (..., 3)."""
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    return np.stack([
        np.full_like(x, SH_C0),
        SH_C1 * y, SH_C1 * z, SH_C1 * x,
        SH_C2 * x * y, SH_C2 * y * z, SH_C3 * (3 * z * z - 1), SH_C2 * x * z, SH_C4 * (x * x - y * y),
    ], axis=-1)


def _sh_basis_grad(n, c):
    """d/dn of sum_i c_i Y_i(n)."""
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    gx = c[3] * SH_C1 + c[4] * SH_C2 * y + c[7] * SH_C2 * z + c[8] * 2 * SH_C4 * x
    gy = c[1] * SH_C1 + c[4] * SH_C2 * x + c[5] * SH_C2 * z - c[8] * 2 * SH_C4 * y
    gz = c[2] * SH_C1 + c[5] * SH_C2 * y + c[6] * 6 * SH_C3 * z + c[7] * SH_C2 * x
    return np.stack([gx, gy, gz], axis=-1)


# ---- texture ----

@dataclass(frozen=True)
class TextureTape:
    shape: tuple  # texture (H, W)
    image_shape: tuple
    pix: np.ndarray  # flat indices of sampled pixels
    idx: np.ndarray  # (n, 4) flat texel indices: (y0,x0), (y0,x1), (y1,x0), (y1,x1)
    wts: np.ndarray  # (n, 4) bilinear weights
    dwu: np.ndarray  # (n, 4) d(weights)/du
    dwv: np.ndarray  # (n, 4) d(weights)/dv
    texels: np.ndarray


def _axis(coord, size):
    inside = (coord >= 0.0) & (coord <= 1.0)
    x = np.clip(coord, 0.0, 1.0) * size - 0.5
    x0 = np.floor(x)
    fx = x - x0
    i0 = np.clip(x0, 0, size - 1).astype(np.int64)
    i1 = np.clip(x0 + 1, 0, size - 1).astype(np.int64)
    return i0, i1, fx, np.where(inside, float(size), 0.0)


def sample_texture(texture: Texture, uv_image, coverage_mask=None):
    """Bilinear lookup with clamp-to-edge; texel (i, j) is centered at
    u = (j + 0.5) / W, v = (i + 0.5) / H. Uncovered pixels are black."""
    uv_image = np.asarray(uv_image, dtype=np.float64)
    if uv_image.ndim != 3 or uv_image.shape[2] != 2:
        raise ShapeMismatch(f"uv image must be HxWx2, got {uv_image.shape}")
    H, W = uv_image.shape[:2]
    mask = np.ones((H, W), bool) if coverage_mask is None else np.asarray(coverage_mask, bool)
    if mask.shape != (H, W):
        raise ShapeMismatch(f"coverage mask {mask.shape} vs uv image {(H, W)}")
    pix = np.flatnonzero(mask)
    uv = uv_image.reshape(-1, 2)[pix]
    if not np.all(np.isfinite(uv)):
        raise ValueError("uv values must be finite")
    th, tw = texture.height, texture.width
    ix0, ix1, fx, su = _axis(uv[:, 0], tw)
    iy0, iy1, fy, sv = _axis(uv[:, 1], th)
    idx = np.stack([iy0 * tw + ix0, iy0 * tw + ix1, iy1 * tw + ix0, iy1 * tw + ix1], axis=1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    dwu = np.stack([-(1 - fy), 1 - fy, -fy, fy], axis=1) * su[:, None]
    dwv = np.stack([-(1 - fx), -fx, 1 - fx, fx], axis=1) * sv[:, None]
    flat = texture.texels.reshape(-1, 3)
    out = np.zeros((H * W, 3))
    out[pix] = np.einsum("nk,nkc->nc", wts, flat[idx])
    tape = TextureTape((th, tw), (H, W), pix, idx, wts, dwu, dwv, texture.texels)
    return out.reshape(H, W, 3), tape


def sample_texture_backward(grad_color, tape: TextureTape):
    grad_color = np.asarray(grad_color, dtype=np.float64)
    if grad_color.shape != tape.image_shape + (3,):
        raise TapeMismatch(f"gradient image {grad_color.shape} vs tape {tape.image_shape}")
    g = grad_color.reshape(-1, 3)[tape.pix]
    th, tw = tape.shape
    grad_tex = np.zeros((th * tw, 3))
    for k in range(4):
        for ch in range(3):
            grad_tex[:, ch] += np.bincount(tape.idx[:, k], weights=tape.wts[:, k] * g[:, ch], minlength=th * tw)
    vals = tape.texels.reshape(-1, 3)[tape.idx]  # (n, 4, 3)
    gdot = np.einsum("nkc,nc->nk", vals, g)
    grad_uv = np.zeros((tape.image_shape[0] * tape.image_shape[1], 2))
    grad_uv[tape.pix, 0] = np.sum(gdot * tape.dwu, axis=1)
    grad_uv[tape.pix, 1] = np.sum(gdot * tape.dwv, axis=1)
    return grad_tex.reshape(th, tw, 3), grad_uv.reshape(tape.image_shape + (2,))


# ---- lighting factors ----

def _dot(a, b):
    return np.sum(a * b, axis=-1)


def lambertian_factors(normal_image, spec):
    if not isinstance(spec, Lambertian):
        raise WrongSpecVariant(f"expected Lambertian, got {type(spec).__name__}")
    return spec.k_d * np.maximum(0.0, _dot(np.asarray(normal_image), np.asarray(spec.light_dir)))


def reflect(light_dir, normal):
    ln = _dot(normal, light_dir)[..., None]
    return 2.0 * ln * normal - light_dir


def phong_factors(normal_image, view_dir_image, spec):
    if not isinstance(spec, Phong):
        raise WrongSpecVariant(f"expected Phong, got {type(spec).__name__}")
    n = np.asarray(normal_image, dtype=np.float64)
    L = np.asarray(spec.light_dir)
    i_l = spec.k_d * np.maximum(0.0, _dot(n, L))
    rv = np.maximum(0.0, _dot(reflect(L, n), np.asarray(view_dir_image)))
    return i_l, spec.k_s * rv ** spec.shininess


def sh_factors(normal_image, spec):
    if not isinstance(spec, SphericalHarmonics):
        raise WrongSpecVariant(f"expected SphericalHarmonics, got {type(spec).__name__}")
    return np.maximum(0.0, sh_basis(np.asarray(normal_image, dtype=np.float64)) @ np.asarray(spec.coeffs))


def compose(i_c, i_l, i_s):
    """I = I_l * I_c + I_s; scalar factor images broadcast over color channels."""
    i_c = np.asarray(i_c, dtype=np.float64)
    i_l = np.asarray(i_l, dtype=np.float64)
    i_s = np.asarray(i_s, dtype=np.float64)
    if i_c.ndim == 3:
        if i_l.ndim == 2:
            i_l = i_l[..., None]
        if i_s.ndim == 2:
            i_s = i_s[..., None]
    try:
        return i_l * i_c + i_s
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None


# ---- full fragment stage ----

@dataclass
class ShadeTape:
    spec: object
    image_shape: tuple
    pix: np.ndarray
    i_c: np.ndarray  # (n, 3)
    n_raw: Optional[np.ndarray] = None
    n: Optional[np.ndarray] = None
    i_l: Optional[np.ndarray] = None
    v_raw: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    ln: Optional[np.ndarray] = None
    rv: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)


class ShadingGrads(NamedTuple):
    grad_color: np.ndarray  # w.r.t. I_c, (H, W, 3)
    grad_normals: Optional[np.ndarray]  # w.r.t. unnormalized interpolated normals, (H, W, 3)
    grad_light: dict
    grad_positions: Optional[np.ndarray] = None  # (H, W, 3), Phong only
    grad_eye: Optional[np.ndarray] = None


def shade(i_c, spec, coverage_mask, normal_image=None, position_image=None, eye=None):
    """Apply a lighting model to the base color image over covered pixels."""
    i_c = np.asarray(i_c, dtype=np.float64)
    H, W = i_c.shape[:2]
    mask = np.asarray(coverage_mask, bool)
    pix = np.flatnonzero(mask)
    tape = ShadeTape(spec, (H, W), pix, i_c.reshape(-1, 3)[pix])
    if isinstance(spec, NoneLighting):
        return i_c.copy(), tape
    n_raw = np.asarray(normal_image, dtype=np.float64).reshape(-1, 3)[pix]
    norm = np.linalg.norm(n_raw, axis=1, keepdims=True)
    n = np.divide(n_raw, norm, out=np.zeros_like(n_raw), where=norm > 0)
    tape.n_raw, tape.n = n_raw, n
    i_s = np.zeros(len(pix))
    if isinstance(spec, Lambertian):
        i_l = lambertian_factors(n, spec)
        tape.ln = _dot(n, np.asarray(spec.light_dir))
    elif isinstance(spec, Phong):
        v_raw = np.asarray(eye, dtype=np.float64) - np.asarray(position_image, dtype=np.float64).reshape(-1, 3)[pix]
        vn = np.linalg.norm(v_raw, axis=1, keepdims=True)
        v = np.divide(v_raw, vn, out=np.zeros_like(v_raw), where=vn > 0)
        i_l, i_s = phong_factors(n, v, spec)
        L = np.asarray(spec.light_dir)
        tape.v_raw, tape.v, tape.ln = v_raw, v, _dot(n, L)
        tape.rv = _dot(reflect(L, n), v)
    elif isinstance(spec, SphericalHarmonics):
        i_l = sh_factors(n, spec)
        tape.extra["basis"] = sh_basis(n)
    else:
        raise WrongSpecVariant(f"unknown lighting spec {type(spec).__name__}")
    tape.i_l = i_l
    out = np.zeros((H * W, 3))
    out[pix] = compose(tape.i_c, i_l[:, None], i_s[:, None])
    return out.reshape(H, W, 3), tape


def shading_backward(grad_final, tape: ShadeTape, spec=None) -> ShadingGrads:
    """Reverse pass of :func:`shade`. Clamped dot products pass zero gradient."""
    spec = tape.spec if spec is None else spec
    grad_final = np.asarray(grad_final, dtype=np.float64)
    H, W = tape.image_shape
    if grad_final.shape != (H, W, 3) or type(spec) is not type(tape.spec):
        raise TapeMismatch("gradient image or lighting spec does not match the shading tape")
    if isinstance(spec, NoneLighting):
        return ShadingGrads(grad_final.copy(), None, {})
    pix = tape.pix
    g = grad_final.reshape(-1, 3)[pix]
    g_ic = np.zeros((H * W, 3))
    g_ic[pix] = g * tape.i_l[:, None]
    g_il = np.sum(g * tape.i_c, axis=1)
    g_n = np.zeros_like(tape.n)
    light = {}
    g_pos = g_eye = None

    if isinstance(spec, (Lambertian, Phong)):
        L = np.asarray(spec.light_dir)
        active = tape.ln > 0
        lit = np.where(active, tape.ln, 0.0)
        light["k_d"] = float(np.sum(g_il * lit))
        g_ln = g_il * spec.k_d * active
        g_n += g_ln[:, None] * L
        g_L = g_ln @ tape.n
        if isinstance(spec, Phong):
            g_is = np.sum(g, axis=1)
            pos = tape.rv > 0
            rv = np.where(pos, tape.rv, 1.0)
            powv = np.where(pos, rv ** spec.shininess, 0.0)
            light["k_s"] = float(np.sum(g_is * powv))
            light["shininess"] = float(np.sum(np.where(pos, g_is * spec.k_s * powv * np.log(rv), 0.0)))
            g_rv = np.where(pos, g_is * spec.k_s * spec.shininess * rv ** (spec.shininess - 1.0), 0.0)
            R = reflect(L, tape.n)
            g_R = g_rv[:, None] * tape.v
            g_v = g_rv[:, None] * R
            gRn = _dot(g_R, tape.n)
            g_n += 2.0 * (tape.ln[:, None] * g_R + gRn[:, None] * L)
            g_L = g_L + 2.0 * (gRn @ tape.n) - g_R.sum(axis=0)
            g_vraw = normalize_backward(tape.v_raw, g_v)
            g_eye = g_vraw.sum(axis=0)
            g_pos = np.zeros((H * W, 3))
            g_pos[pix] = -g_vraw
            g_pos = g_pos.reshape(H, W, 3)
        # light_dir is the normalization of a free vector: keep the tangent part
        light["light_dir"] = g_L - L * (L @ g_L)
    elif isinstance(spec, SphericalHarmonics):
        c = np.asarray(spec.coeffs)
        active = tape.i_l > 0
        g_s = g_il * active
        light["sh_coeffs"] = g_s @ tape.extra["basis"]
        g_n += g_s[:, None] * _sh_basis_grad(tape.n, c)

    g_nraw = np.zeros((H * W, 3))
    g_nraw[pix] = normalize_backward(tape.n_raw, g_n)
    return ShadingGrads(g_ic.reshape(H, W, 3), g_nraw.reshape(H, W, 3), light, g_pos, g_eye)
