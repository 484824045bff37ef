"""Independent reference implementations used as test oracles."""
import numpy as np

from meshgrad.camera import ScreenVertices


def screen(xy, depth=None):
    xy = np.asarray(xy, dtype=np.float64)
    depth = np.ones(len(xy)) if depth is None else np.asarray(depth, dtype=np.float64)
    return ScreenVertices(xy, depth, 1.0 / depth, np.zeros(len(xy), dtype=bool))


def random_screen_scene(rng, n_faces, spread=1.2, size=0.5):
    """Independent random triangles in NDC with positive depths."""
    centers = rng.uniform(-spread, spread, (n_faces, 1, 2))
    xy = (centers + rng.uniform(-size, size, (n_faces, 3, 2))).reshape(-1, 2)
    depth = rng.uniform(1.0, 5.0, len(xy))
    faces = np.arange(3 * n_faces).reshape(-1, 3)
    return screen(xy, depth), faces


def seg_dist2(p, a, b):
    ab = b - a
    t = min(max(float(np.dot(p - a, ab) / np.dot(ab, ab)), 0.0), 1.0)
    d = p - (a + t * ab)
    return float(d @ d)


def inside_closed(p, a, b, c):
    def cross(o, q, r):
        return (q[0] - o[0]) * (r[1] - o[1]) - (q[1] - o[1]) * (r[0] - o[0])
    d1, d2, d3 = cross(p, a, b), cross(p, b, c), cross(p, c, a)
    return (d1 >= 0 and d2 >= 0 and d3 >= 0) or (d1 <= 0 and d2 <= 0 and d3 <= 0)


def brute_alpha(xy, faces, width, height, delta, min_area=1e-12):
    """Per-pixel loop over every face: 1 if any face covers the center,
    else 1 - prod(1 - exp(-d2 / delta)) with no cutoff."""
    out = np.zeros((height, width))
    tris = []
    for f in faces:
        a, b, c = xy[f[0]], xy[f[1]], xy[f[2]]
        area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area >= min_area:
            tris.append((a, b, c))
    for y in range(height):
        for x in range(width):
            p = np.array([(x + 0.5) / width * 2 - 1, 1 - (y + 0.5) / height * 2])
            if any(inside_closed(p, *t) for t in tris):
                out[y, x] = 1.0
                continue
            prod = 1.0
            for a, b, c in tris:
                d2 = min(seg_dist2(p, a, b), seg_dist2(p, b, c), seg_dist2(p, c, a))
                prod *= 1.0 - np.exp(-d2 / delta)
            out[y, x] = 1.0 - prod
    return out


def dense_boundary_dist2(p, verts, n=20001):
    """Minimum squared distance over densely sampled triangle edges."""
    best = np.inf
    t = np.linspace(0, 1, n)[:, None]
    for k in range(3):
        a, b = np.asarray(verts[k], float), np.asarray(verts[(k + 1) % 3], float)
        pts = a + t * (b - a)
        best = min(best, float(np.min(np.sum((pts - p) ** 2, axis=1))))
    return best


def area2(a, b, c):
    """Twice the signed area of a 2D triangle."""
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
