"""OBJ meshes, PNG images and CSV loss curves."""
from __future__ import annotations

import csv
import logging
import os

import numpy as np
import png

from .errors import DecodeError, ParseError, UnsupportedColorType
from .geometry import Mesh, build_mesh

log = logging.getLogger(__name__)

_SKIPPED = {"o", "g", "s", "mtllib", "usemtl", "l", "p", "vp", "cstype", "deg", "curv", "surf"}


def _resolve(idx_text, count, lineno, col):
    try:
        i = int(idx_text)
    except ValueError:
        raise ParseError(f"bad index {idx_text!r}", lineno, col) from None
    if i == 0:
        raise ParseError("index 0 is not valid in OBJ", lineno, col)
    j = i - 1 if i > 0 else count + i
    if not 0 <= j < count:
        raise ParseError(f"index {i} out of range ({count} defined)", lineno, col)
    return j


def _floats(parts, n, lineno, line):
    if len(parts) < n:
        raise ParseError(f"expected {n} numbers", lineno)
    out = []
    for p in parts[:n]:
        try:
            out.append(float(p))
        except ValueError:
            raise ParseError(f"bad number {p!r}", lineno, line.find(p) + 1) from None
    return out


def load_obj(path) -> Mesh:
    """Read v/vt/vn/f records into a Mesh.

    Polygons are fan-triangulated. A position used with different vt/vn
    indices is split into separate vertices so every vertex carries one
    uv and one normal.
    """
    pos, tex, nrm = [], [], []
    corners = []  # per triangle: 3 tuples (v, vt, vn)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag, args = parts[0], parts[1:]
            if tag == "v":
                pos.append(_floats(args, 3, lineno, raw))
            elif tag == "vt":
                tex.append(_floats(args, 2, lineno, raw))
            elif tag == "vn":
                nrm.append(_floats(args, 3, lineno, raw))
            elif tag == "f":
                if len(args) < 3:
                    raise ParseError("face needs at least 3 vertices", lineno)
                poly = []
                for tok in args:
                    col = raw.find(tok) + 1
                    fields = tok.split("/")
                    if len(fields) > 3 or fields[0] == "":
                        raise ParseError(f"bad face vertex {tok!r}", lineno, col)
                    vi = _resolve(fields[0], len(pos), lineno, col)
                    ti = _resolve(fields[1], len(tex), lineno, col) if len(fields) > 1 and fields[1] else None
                    ni = _resolve(fields[2], len(nrm), lineno, col) if len(fields) > 2 and fields[2] else None
                    poly.append((vi, ti, ni))
                for k in range(1, len(poly) - 1):
                    corners.append((poly[0], poly[k], poly[k + 1]))
            elif tag in _SKIPPED:
                log.warning("%s:%d: unsupported directive %r skipped", path, lineno, tag)
            else:
                log.warning("%s:%d: unknown directive %r skipped", path, lineno, tag)
    if not corners:
        raise ParseError("no faces in file")
    has_t = any(c[1] is not None for tri in corners for c in tri)
    has_n = any(c[2] is not None for tri in corners for c in tri)
    if has_t and any(c[1] is None for tri in corners for c in tri):
        raise ParseError("some face corners have texture indices and some do not")
    if has_n and any(c[2] is None for tri in corners for c in tri):
        raise ParseError("some face corners have normal indices and some do not")

    # first use of a position keeps its index; other vt/vn combos are appended
    index_of, claimed, extra = {}, {}, []
    for tri in corners:
        for key in tri:
            if key in index_of:
                continue
            if key[0] not in claimed:
                claimed[key[0]] = key
                index_of[key] = key[0]
            else:
                index_of[key] = len(pos) + len(extra)
                extra.append(key)
    keys = [claimed.get(i, (i, None, None)) for i in range(len(pos))] + extra
    verts = np.array([pos[k[0]] for k in keys], dtype=np.float64)
    uvs = np.array([tex[k[1]] if k[1] is not None else (0.0, 0.0) for k in keys]) if has_t else None
    normals = None
    if has_n:
        n = np.array([nrm[k[2]] if k[2] is not None else (0.0, 0.0, 1.0) for k in keys], dtype=np.float64)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        normals = np.divide(n, norm, out=np.tile([0.0, 0.0, 1.0], (len(n), 1)), where=norm > 0)
    tri = np.array([[index_of[k] for k in f] for f in corners], dtype=np.int64)
    return build_mesh(verts, tri, uvs=uvs, normals=normals)


def _fmt(x: float) -> str:
    s = f"{x:.9g}"
    return "0" if s == "-0" else s


def save_obj(mesh: Mesh, path) -> None:
    """Write positions, then vt/vn when present, then 1-based faces."""
    lines = []
    for v in mesh.vertices:
        lines.append("v " + " ".join(_fmt(x) for x in v))
    if mesh.uvs is not None:
        lines += ["vt " + " ".join(_fmt(x) for x in t) for t in mesh.uvs]
    if mesh.normals is not None:
        lines += ["vn " + " ".join(_fmt(x) for x in n) for n in mesh.normals]
    for f in mesh.faces + 1:
        if mesh.uvs is not None and mesh.normals is not None:
            lines.append("f " + " ".join(f"{i}/{i}/{i}" for i in f))
        elif mesh.uvs is not None:
            lines.append("f " + " ".join(f"{i}/{i}" for i in f))
        elif mesh.normals is not None:
            lines.append("f " + " ".join(f"{i}//{i}" for i in f))
        else:
            lines.append("f " + " ".join(str(i) for i in f))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def quantize(image, bitdepth: int = 8) -> np.ndarray:
    top = (1 << bitdepth) - 1
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * top).astype(np.uint16)


def save_png(path, image, alpha=None, bitdepth: int = 8) -> None:
    """Write an (H, W) gray, (H, W, 3) RGB or (H, W, 4) RGBA float image in [0, 1].

    ``alpha`` (H, W), if given, is appended as the fourth channel. Values are
    clamped, then coded as round(x * (2**bitdepth - 1)).
    """
    if bitdepth not in (8, 16):
        raise UnsupportedColorType(f"bit depth {bitdepth}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if alpha is not None:
        img = np.concatenate([img, np.asarray(alpha, dtype=np.float64)[..., None]], axis=2)
    h, w, c = img.shape
    if c not in (1, 3, 4):
        raise UnsupportedColorType(f"{c} channels")
    codes = quantize(img, bitdepth)
    writer = png.Writer(w, h, greyscale=(c == 1), alpha=(c == 4), bitdepth=bitdepth)
    with open(path, "wb") as fh:
        writer.write(fh, codes.reshape(h, w * c).tolist())


def load_png(path):
    """Return (rgb (H, W, 3), alpha (H, W) or None) as floats in [0, 1]."""
    try:
        w, h, rows, info = png.Reader(filename=str(path)).asDirect()
        data = np.array([np.asarray(r, dtype=np.float64) for r in rows])
    except png.Error as exc:
        raise DecodeError(str(exc)) from None
    planes = info["planes"]
    top = float((1 << info["bitdepth"]) - 1)
    if info["bitdepth"] not in (8, 16):
        raise UnsupportedColorType(f"bit depth {info['bitdepth']}")
    data = data.reshape(h, w, planes) / top
    if info.get("greyscale"):
        rgb = np.repeat(data[..., :1], 3, axis=2)
    else:
        rgb = data[..., :3]
    alpha = data[..., -1] if info.get("alpha") else None
    return rgb, alpha


LOSS_COLUMNS = ("iteration", "total", "iou", "col", "sm", "lap")


def write_loss_csv(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(LOSS_COLUMNS)
        for i, r in enumerate(reports):
            out.writerow([i, repr(r.total), repr(r.iou), repr(r.col), repr(r.sm), repr(r.lap)])


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
