"""Hard z-buffered interpolation for covered pixels, soft alpha for the rest.

Covered pixels take their value from the nearest face containing the pixel
center, interpolated with affine screen-space barycentric weights. Uncovered
pixels get a soft silhouette value

    A = 1 - prod_j (1 - exp(-d2_j / delta))

over faces whose squared NDC distance d2_j keeps exp(-d2_j / delta) above a
cutoff. Work is split into fixed row tiles; gradient partials are summed in
tile order so the result does not depend on the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DegenerateTriangle, EmptyFaceList, ShapeMismatch, TapeMismatch, ZeroResolution

NONE = -1
AREA_EPS = 1e-12
TILE_ROWS = 16


@dataclass(frozen=True)
class SoftConfig:
    delta: float = 1e-4
    cutoff_eps: float = 1e-7

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not 0 < self.cutoff_eps < 1:
            raise ValueError(f"cutoff_eps must lie in (0, 1), got {self.cutoff_eps}")

    @property
    def radius(self) -> float:
        """NDC distance beyond which a face's soft value drops below the cutoff."""
        return math.sqrt(self.delta * math.log(1.0 / self.cutoff_eps))


@dataclass(frozen=True)
class FrameBuffers:
    attr_image: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray
    face_id: np.ndarray
    bary: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return self.face_id != NONE


@dataclass
class _TileRecord:
    # covered pixels
    pix: np.ndarray
    face: np.ndarray
    w: np.ndarray  # (n, 3)
    # soft entries (uncovered pixels only), sorted by (pix, face)
    s_pix: np.ndarray
    s_face: np.ndarray
    s_a: np.ndarray
    s_edge: np.ndarray
    s_t: np.ndarray
    s_excl: np.ndarray  # prod over the pixel's other entries of (1 - A)


@dataclass(frozen=True)
class RasterTape:
    xy: np.ndarray
    faces: np.ndarray
    attrs: np.ndarray
    width: int
    height: int
    soft: SoftConfig
    tiles: tuple
    workers: int = 1

    @property
    def delta(self) -> float:
        return self.soft.delta


def _edge_fn(a, b, c):
    """Twice the signed area of (a, b, c); positive for counter-clockwise."""
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def _edge_fn_grads(a, b, c):
    """Partials of _edge_fn w.r.t. a, b and c, each shaped like the inputs."""
    ga = np.stack([b[..., 1] - c[..., 1], c[..., 0] - b[..., 0]], axis=-1)
    gb = np.stack([c[..., 1] - a[..., 1], a[..., 0] - c[..., 0]], axis=-1)
    gc = np.stack([a[..., 1] - b[..., 1], b[..., 0] - a[..., 0]], axis=-1)
    return ga, gb, gc


def _bary(v0, v1, v2, p):
    d = _edge_fn(v0, v1, v2)
    w1 = _edge_fn(p, v2, v0) / d
    w2 = _edge_fn(p, v0, v1) / d
    return 1.0 - w1 - w2, w1, w2, d


def barycentric_weights(v0, v1, v2, p):
    """Barycentric weights of ``p`` in triangle (v0, v1, v2).

    w1 and w2 are signed-area ratios; w0 is 1 - w1 - w2 so the weights sum
    to one exactly. Inputs broadcast over leading axes.
    """
    v0, v1, v2, p = (np.asarray(a, dtype=np.float64) for a in (v0, v1, v2, p))
    if np.any(0.5 * np.abs(_edge_fn(v0, v1, v2)) < AREA_EPS):
        raise DegenerateTriangle("triangle area below threshold")
    w0, w1, w2, _ = _bary(v0, v1, v2, p)
    return w0, w1, w2


def _bary_backward(v0, v1, v2, p, g0, g1, g2):
    w0, w1, w2, d = _bary(v0, v1, v2, p)
    # fold the w0 = 1 - w1 - w2 dependency into the other two weights
    h1 = (g1 - g0) / d
    h2 = (g2 - g0) / d
    d0, d1, d2 = _edge_fn_grads(v0, v1, v2)
    _, n1_v2, n1_v0 = _edge_fn_grads(p, v2, v0)
    _, n2_v0, n2_v1 = _edge_fn_grads(p, v0, v1)
    k = (h1 * w1 + h2 * w2)[..., None]
    g_v0 = h1[..., None] * n1_v0 + h2[..., None] * n2_v0 - k * d0
    g_v1 = h2[..., None] * n2_v1 - k * d1
    g_v2 = h1[..., None] * n1_v2 - k * d2
    return g_v0, g_v1, g_v2


def barycentric_backward(v0, v1, v2, p, grad_w):
    """Vertex-position gradients given d(loss)/d(w0, w1, w2)."""
    v0, v1, v2, p = (np.asarray(a, dtype=np.float64) for a in (v0, v1, v2, p))
    grad_w = np.asarray(grad_w, dtype=np.float64)
    if np.any(0.5 * np.abs(_edge_fn(v0, v1, v2)) < AREA_EPS):
        raise DegenerateTriangle("triangle area below threshold")
    return _bary_backward(v0, v1, v2, p, grad_w[..., 0], grad_w[..., 1], grad_w[..., 2])


class Witness(NamedTuple):
    kind: str  # "inside", "edge" or "vertex"
    index: int  # edge k runs from vertex k to vertex (k + 1) % 3
    t: float


def _tri_dist2(p, a, b, c):
    """Vectorized squared distance to closed triangles.

    Returns (d2, edge, t, inside); for outside points ``edge``/``t`` name the
    nearest boundary point a_k + t (a_{k+1} - a_k).
    """
    verts = (a, b, c)
    best = None
    for k in range(3):
        o, q = verts[k], verts[(k + 1) % 3]
        e = q - o
        ee = np.sum(e * e, axis=-1)
        t = np.clip(np.sum((p - o) * e, axis=-1) / ee, 0.0, 1.0)
        diff = p - (o + t[..., None] * e)
        d2 = np.sum(diff * diff, axis=-1)
        if best is None:
            best = [d2, np.zeros(d2.shape, dtype=np.int64), t]
        else:
            better = d2 < best[0]
            best[0] = np.where(better, d2, best[0])
            best[1] = np.where(better, k, best[1])
            best[2] = np.where(better, t, best[2])
    area = _edge_fn(a, b, c)
    sgn = np.sign(area)
    inside = ((_edge_fn(p, b, c) * sgn >= 0) & (_edge_fn(p, c, a) * sgn >= 0)
              & (_edge_fn(p, a, b) * sgn >= 0))
    d2 = np.where(inside, 0.0, best[0])
    return d2, best[1], best[2], inside


def point_triangle_dist2(p, v0, v1, v2):
    """Squared 2D distance from ``p`` to a closed triangle, plus the nearest feature."""
    p, v0, v1, v2 = (np.asarray(a, dtype=np.float64) for a in (p, v0, v1, v2))
    if 0.5 * abs(float(_edge_fn(v0, v1, v2))) < AREA_EPS:
        raise DegenerateTriangle("triangle area below threshold")
    d2, edge, t, inside = _tri_dist2(p, v0, v1, v2)
    if inside:
        return 0.0, Witness("inside", -1, 0.0)
    k, t = int(edge), float(t)
    if t == 0.0:
        return float(d2), Witness("vertex", k, 0.0)
    if t == 1.0:
        return float(d2), Witness("vertex", (k + 1) % 3, 1.0)
    return float(d2), Witness("edge", k, t)


def live_faces(screen, faces) -> np.ndarray:
    """Mask of faces that are rasterized: all vertices in front, non-zero screen area."""
    faces = np.asarray(faces)
    xy = screen.ndc_xy
    front = ~screen.behind_flags[faces].any(axis=1)
    area = 0.5 * np.abs(_edge_fn(xy[faces[:, 0]], xy[faces[:, 1]], xy[faces[:, 2]]))
    return front & (area >= AREA_EPS)


def pixel_centers(width, height):
    """NDC x for each column and NDC y for each row (y up, row 0 at the top)."""
    xs = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    ys = 1.0 - (np.arange(height) + 0.5) / height * 2.0
    return xs, ys


def _pairs(fids, x_lo, x_hi, y_lo, y_hi):
    wx = np.maximum(x_hi - x_lo + 1, 0)
    wy = np.maximum(y_hi - y_lo + 1, 0)
    cnt = wx * wy
    total = int(cnt.sum())
    face = np.repeat(fids, cnt)
    start = np.cumsum(cnt) - cnt
    local = np.arange(total) - np.repeat(start, cnt)
    rw = np.repeat(wx, cnt)
    xi = np.repeat(x_lo, cnt) + local % rw if total else local
    yi = np.repeat(y_lo, cnt) + local // rw if total else local
    return face, xi, yi


def _exclusive_products(keys, a):
    """For entries grouped by ``keys`` (sorted), prod of (1 - a) over each group
    and over the group minus each entry; exact when some (1 - a) is zero."""
    one_minus = 1.0 - a
    zero = one_minus == 0.0
    safe = np.where(zero, 1.0, one_minus)
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    group = np.cumsum(np.r_[True, keys[1:] != keys[:-1]]) - 1
    prod_nz = np.multiply.reduceat(safe, starts)
    nzero = np.add.reduceat(zero.astype(np.int64), starts)
    total = np.where(nzero > 0, 0.0, prod_nz)
    gp, gz = prod_nz[group], nzero[group]
    excl = np.where(zero, np.where(gz == 1, gp, 0.0), np.where(gz == 0, gp / safe, 0.0))
    return starts, total, excl


class _Frame:
    """Per-call constants shared by the tile workers."""

    def __init__(self, xy, depth, faces, live, attrs, soft, width, height):
        self.xy, self.depth, self.faces, self.attrs = xy, depth, faces, attrs
        self.soft, self.width, self.height = soft, width, height
        self.px, self.py = pixel_centers(width, height)
        fids = np.flatnonzero(live)
        tri = xy[faces[fids]]  # (F, 3, 2)
        r = soft.radius * (1.0 + 1e-9) + 1e-12
        lo, hi = tri.min(axis=1) - r, tri.max(axis=1) + r
        self.fids = fids
        self.x_lo = np.maximum(np.ceil((lo[:, 0] + 1.0) * width / 2.0 - 0.5), 0).astype(np.int64)
        self.x_hi = np.minimum(np.floor((hi[:, 0] + 1.0) * width / 2.0 - 0.5), width - 1).astype(np.int64)
        self.y_lo = np.maximum(np.ceil((1.0 - hi[:, 1]) * height / 2.0 - 0.5), 0).astype(np.int64)
        self.y_hi = np.minimum(np.floor((1.0 - lo[:, 1]) * height / 2.0 - 0.5), height - 1).astype(np.int64)


def _raster_tile(fr: _Frame, row0: int, row1: int):
    W = fr.width
    sel = (fr.y_hi >= row0) & (fr.y_lo < row1) & (fr.x_hi >= fr.x_lo)
    face, xi, yi = _pairs(fr.fids[sel], fr.x_lo[sel], fr.x_hi[sel],
                          np.maximum(fr.y_lo[sel], row0), np.minimum(fr.y_hi[sel], row1 - 1))
    npix = (row1 - row0) * W
    pix = (yi - row0) * W + xi
    p = np.stack([fr.px[xi], fr.py[yi]], axis=1)
    fv = fr.faces[face]
    a, b, c = fr.xy[fv[:, 0]], fr.xy[fv[:, 1]], fr.xy[fv[:, 2]]
    d2, edge, t, inside = _tri_dist2(p, a, b, c)

    # z-buffer among covering faces: nearest depth, then lowest face index
    ci = np.flatnonzero(inside)
    w0, w1, w2, _ = _bary(a[ci], b[ci], c[ci], p[ci])
    w = np.stack([w0, w1, w2], axis=1)
    z = np.sum(w * fr.depth[fv[ci]], axis=1)
    order = np.lexsort((face[ci], z, pix[ci]))
    cpix = pix[ci][order]
    first = np.r_[True, cpix[1:] != cpix[:-1]] if len(cpix) else np.zeros(0, bool)
    win = ci[order][first]
    win_w = w[order][first]
    win_z = z[order][first]
    win_pix = pix[win]

    covered = np.zeros(npix, dtype=bool)
    covered[win_pix] = True

    keep = ~covered[pix]
    a_soft = np.exp(-d2[keep] / fr.soft.delta)
    retained = a_soft >= fr.soft.cutoff_eps
    si = np.flatnonzero(keep)[retained]
    a_soft = a_soft[retained]
    order = np.lexsort((face[si], pix[si]))
    si, a_soft = si[order], a_soft[order]
    s_pix = pix[si]

    alpha = covered.astype(np.float64)
    excl = np.zeros(0)
    if len(si):
        starts, prod, excl = _exclusive_products(s_pix, a_soft)
        alpha[s_pix[starts]] = 1.0 - prod

    face_id = np.full(npix, NONE, dtype=np.int64)
    face_id[win_pix] = face[win]
    bary = np.zeros((npix, 3))
    bary[win_pix] = win_w
    depth = np.full(npix, np.inf)
    depth[win_pix] = win_z
    attr = np.zeros((npix, fr.attrs.shape[1]))
    if len(win):
        wv = fr.faces[face[win]]
        attr[win_pix] = (win_w[:, 0:1] * fr.attrs[wv[:, 0]] + win_w[:, 1:2] * fr.attrs[wv[:, 1]]
                         + win_w[:, 2:3] * fr.attrs[wv[:, 2]])
    rec = _TileRecord(win_pix, face[win], win_w, s_pix, face[si], a_soft, edge[si], t[si], excl)
    return (attr, alpha, depth, face_id, bary), rec


def _tile_bounds(height):
    return [(r, min(r + TILE_ROWS, height)) for r in range(0, height, TILE_ROWS)]


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda it: fn(*it), items))


def rasterize(screen, faces, attrs, soft_config: Optional[SoftConfig] = None,
              width: int = 64, height: int = 64, workers: int = 1):
    """Rasterize projected faces into FrameBuffers and a RasterTape.

    ``attrs`` holds C channels per vertex. Faces with a vertex behind the
    near plane or with screen area below threshold are skipped entirely.
    """
    soft = soft_config or SoftConfig()
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        raise EmptyFaceList("nothing to rasterize")
    if width < 1 or height < 1:
        raise ZeroResolution(f"resolution {width}x{height}")
    attrs = np.asarray(attrs, dtype=np.float64)
    if attrs.ndim == 1:
        attrs = attrs[:, None]
    if len(attrs) != len(screen.ndc_xy):
        raise ShapeMismatch(f"{len(attrs)} attribute rows for {len(screen.ndc_xy)} vertices")

    fr = _Frame(screen.ndc_xy, screen.depth, faces, live_faces(screen, faces), attrs, soft, width, height)
    bounds = _tile_bounds(height)
    results = _map(lambda r0, r1: _raster_tile(fr, r0, r1), bounds, workers)

    C = attrs.shape[1]
    parts = list(zip(*[r[0] for r in results]))
    buffers = FrameBuffers(
        attr_image=np.concatenate(parts[0]).reshape(height, width, C),
        alpha=np.concatenate(parts[1]).reshape(height, width),
        depth=np.concatenate(parts[2]).reshape(height, width),
        face_id=np.concatenate(parts[3]).reshape(height, width),
        bary=np.concatenate(parts[4]).reshape(height, width, 3),
    )
    tape = RasterTape(screen.ndc_xy.copy(), faces, attrs, width, height, soft,
                      tuple(zip(bounds, [r[1] for r in results])), workers)
    return buffers, tape


def _backward_tile(tape: RasterTape, row0, row1, rec: _TileRecord, g_img, g_alpha):
    W, V = tape.width, len(tape.xy)
    C = tape.attrs.shape[1]
    xs, ys = pixel_centers(tape.width, tape.height)
    g_xy = np.zeros((V, 2))
    g_attr = np.zeros((V, C))

    if len(rec.pix):
        gp = g_img[rec.pix]  # (n, C)
        fv = tape.faces[rec.face]
        for k in range(3):
            for ch in range(C):
                g_attr[:, ch] += np.bincount(fv[:, k], weights=rec.w[:, k] * gp[:, ch], minlength=V)
        gw = [np.sum(gp * tape.attrs[fv[:, k]], axis=1) for k in range(3)]
        p = np.stack([xs[rec.pix % W], ys[rec.pix // W + row0]], axis=1)
        gv = _bary_backward(tape.xy[fv[:, 0]], tape.xy[fv[:, 1]], tape.xy[fv[:, 2]], p, *gw)
        for k in range(3):
            for d in range(2):
                g_xy[:, d] += np.bincount(fv[:, k], weights=gv[k][:, d], minlength=V)

    if len(rec.s_pix):
        g_d2 = g_alpha[rec.s_pix] * rec.s_excl * (-rec.s_a / tape.soft.delta)
        fv = tape.faces[rec.s_face]
        k0 = rec.s_edge
        ia = fv[np.arange(len(k0)), k0]
        ib = fv[np.arange(len(k0)), (k0 + 1) % 3]
        pa, pb = tape.xy[ia], tape.xy[ib]
        t = rec.s_t[:, None]
        p = np.stack([xs[rec.s_pix % W], ys[rec.s_pix // W + row0]], axis=1)
        diff = p - (pa + t * (pb - pa))
        ga = (-2.0 * (1.0 - t) * diff) * g_d2[:, None]
        gb = (-2.0 * t * diff) * g_d2[:, None]
        for idx, g in ((ia, ga), (ib, gb)):
            for d in range(2):
                g_xy[:, d] += np.bincount(idx, weights=g[:, d], minlength=V)
    return g_xy, g_attr


def rasterize_backward(grad_attr_image, grad_alpha, tape: RasterTape):
    """Gradients w.r.t. projected vertex xy and per-vertex attributes.

    Covered pixels contribute through interpolation only; uncovered pixels
    contribute through the soft alpha of every retained face.
    """
    H, W, C = tape.height, tape.width, tape.attrs.shape[1]
    g_img = np.zeros((H, W, C)) if grad_attr_image is None else np.asarray(grad_attr_image, dtype=np.float64)
    g_alpha = np.zeros((H, W)) if grad_alpha is None else np.asarray(grad_alpha, dtype=np.float64)
    if g_img.ndim == 2 and C == 1:
        g_img = g_img[..., None]
    if g_img.shape != (H, W, C) or g_alpha.shape != (H, W):
        raise ShapeMismatch(f"gradient images {g_img.shape}/{g_alpha.shape} vs forward {(H, W, C)}")
    g_img = g_img.reshape(H * W, C)
    g_alpha = g_alpha.reshape(H * W)
    items = []
    for (r0, r1), rec in tape.tiles:
        items.append((r0, r1, rec, g_img[r0 * W:r1 * W], g_alpha[r0 * W:r1 * W]))
    parts = _map(lambda r0, r1, rec, gi, ga: _backward_tile(tape, r0, r1, rec, gi, ga), items, tape.workers)
    g_xy = np.zeros((len(tape.xy), 2))
    g_attr = np.zeros((len(tape.xy), C))
    for gx, ga in parts:
        g_xy += gx
        g_attr += ga
    return g_xy, g_attr


def check_tape(tape: RasterTape, screen) -> None:
    if tape.xy.shape != screen.ndc_xy.shape or not np.array_equal(tape.xy, screen.ndc_xy):
        raise TapeMismatch("raster tape was recorded for different screen vertices")
