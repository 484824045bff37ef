import glob
import logging
import os

import numpy as np
import pytest

from meshgrad.errors import DecodeError, ParseError, UnsupportedColorType
from meshgrad.geometry import build_mesh, unit_sphere
from meshgrad.io import load_obj, load_png, quantize, save_obj, save_png, write_loss_csv
from meshgrad.losses import LossReport

FIX = os.path.join(os.path.dirname(__file__), "fixtures")
MESHES = sorted(glob.glob(os.path.join(FIX, "meshes", "*.obj")))
IMAGES = sorted(glob.glob(os.path.join(FIX, "images", "*.png")))


def test_corpus_size():
    assert len(MESHES) >= 10 and len(IMAGES) >= 10


def _tri_set(vertices, faces):
    return sorted(tuple(sorted(tuple(np.round(vertices[i], 9)) for i in f)) for f in faces)


def test_minimal_and_quad():
    assert load_obj(os.path.join(FIX, "meshes", "triangle.obj")).n_faces == 1
    m = load_obj(os.path.join(FIX, "meshes", "quad.obj"))
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


# trimesh resolves negative indices against the final vertex count, so it is
# only a valid oracle for files whose faces all follow every vertex
@pytest.mark.parametrize("name", ["negative_trailing.obj", "cube.obj", "pentagon_fan.obj", "tetrahedron.obj"])
def test_matches_independent_reader(name):
    trimesh = pytest.importorskip("trimesh")
    path = os.path.join(FIX, "meshes", name)
    ours = load_obj(path)
    ref = trimesh.load(path, process=False, force="mesh")
    assert _tri_set(ours.vertices, ours.faces) == _tri_set(np.asarray(ref.vertices), np.asarray(ref.faces))


def test_interleaved_negative_indices():
    """Relative indices count back from the vertices defined so far."""
    m = load_obj(os.path.join(FIX, "meshes", "negative_indices.obj"))
    want = [[[0, 0, 0], [1, 0, 0], [1, 1, 0]], [[0, 0, 0], [1, 1, 0], [0, 1, 0]],
            [[1, 0, 0], [2, 0, 0], [2, 1, 0]], [[1, 0, 0], [2, 1, 0], [1, 1, 0]]]
    assert m.vertices[m.faces].tolist() == want
    m = load_obj(os.path.join(FIX, "meshes", "mixed_negative_uv.obj"))
    assert m.vertices[m.faces].tolist() == [[[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[1, 0, 0], [1, 1, 0], [0, 1, 0]]]
    np.testing.assert_array_equal(m.uvs[m.faces[1]], [[1, 0], [1, 1], [0, 1]])


@pytest.mark.parametrize("path", MESHES, ids=os.path.basename)
def test_obj_round_trip(path, tmp_path):
    m = load_obj(path)
    out = tmp_path / "m.obj"
    save_obj(m, out)
    back = load_obj(out)
    assert np.max(np.abs(back.vertices - m.vertices)) <= 1e-6
    assert np.array_equal(back.faces, m.faces)
    for attr in ("uvs", "normals"):
        a, b = getattr(m, attr), getattr(back, attr)
        assert (a is None) == (b is None)
        if a is not None:
            assert np.max(np.abs(a - b)) <= 1e-6


def test_icosphere_round_trip_and_determinism(tmp_path):
    m = unit_sphere(2)
    save_obj(m, tmp_path / "a.obj")
    save_obj(m, tmp_path / "b.obj")
    assert (tmp_path / "a.obj").read_bytes() == (tmp_path / "b.obj").read_bytes()
    back = load_obj(tmp_path / "a.obj")
    assert np.max(np.abs(back.vertices - m.vertices)) <= 1e-6


def test_vt_vn_written_only_when_present(tmp_path):
    m = unit_sphere(0)
    save_obj(m, tmp_path / "a.obj")
    text = (tmp_path / "a.obj").read_text()
    assert "vt " not in text and "vn " not in text
    save_obj(m.replace(uvs=np.zeros((12, 2))), tmp_path / "b.obj")
    text = (tmp_path / "b.obj").read_text()
    assert "vt " in text and "vn " not in text and "f 1/1" in text


def test_attribute_seams_split_vertices():
    m = load_obj(os.path.join(FIX, "meshes", "full_attrs.obj"))
    assert m.n_vertices == 5  # vertex 1 used with two different uvs
    np.testing.assert_allclose(m.uvs[m.faces[1, 0]], [0.5, 0.5])
    np.testing.assert_allclose(m.normals, np.tile([0, 0, 1.0], (5, 1)))


def test_normals_are_normalized():
    m = load_obj(os.path.join(FIX, "meshes", "normals.obj"))
    np.testing.assert_allclose(m.normals, np.tile([0, 0, 1.0], (3, 1)))


@pytest.mark.parametrize("text,line,col", [
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n", 4, 7),
    ("v 0 0 0\nv 1 0 x\n", 2, 7),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 0\n", 4, 7),
    ("v 0 0 0\nv 1 0 0\nf 1 2\n", 3, None),
])
def test_parse_errors_carry_position(tmp_path, text, line, col):
    p = tmp_path / "bad.obj"
    p.write_text(text)
    with pytest.raises(ParseError) as exc:
        load_obj(p)
    assert exc.value.line == line
    if col is not None:
        assert exc.value.column == col


def test_unsupported_directive_warns(caplog):
    with caplog.at_level(logging.WARNING):
        load_obj(os.path.join(FIX, "meshes", "with_comments.obj"))
    assert "mtllib" in caplog.text and "usemtl" in caplog.text


def test_mixed_texture_indices_rejected(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2 3\n")
    with pytest.raises(ParseError):
        load_obj(p)


def test_png_quantization(tmp_path):
    save_png(tmp_path / "a.png", np.full((2, 2, 3), 0.5))
    rgb, alpha = load_png(tmp_path / "a.png")
    assert alpha is None
    np.testing.assert_array_equal(rgb, 128 / 255)


def test_white_pixel():
    rgb, _ = load_png(os.path.join(FIX, "images", "white_1x1.png"))
    assert rgb.shape == (1, 1, 3) and np.all(rgb == 1.0)


def test_16bit_round_trip_bound(tmp_path, rng):
    img = rng.uniform(size=(7, 9, 3))
    a = rng.uniform(size=(7, 9))
    save_png(tmp_path / "a.png", img, a, bitdepth=16)
    rgb, alpha = load_png(tmp_path / "a.png")
    assert np.max(np.abs(rgb - img)) <= 1 / (2 * 65535) + 1e-15
    assert np.max(np.abs(alpha - a)) <= 1 / (2 * 65535) + 1e-15


@pytest.mark.parametrize("path", IMAGES, ids=os.path.basename)
def test_png_corpus_round_trip(path, tmp_path):
    rgb, alpha = load_png(path)
    depth = 16 if "16" in os.path.basename(path) and "16x16" not in path else 8
    out = tmp_path / "x.png"
    save_png(out, rgb, alpha, bitdepth=depth)
    rgb2, alpha2 = load_png(out)
    assert np.array_equal(rgb, rgb2)
    assert (alpha is None) == (alpha2 is None)
    if alpha is not None:
        assert np.array_equal(alpha, alpha2)


def test_png_errors(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png at all")
    with pytest.raises(DecodeError):
        load_png(bad)
    with pytest.raises(UnsupportedColorType):
        save_png(tmp_path / "x.png", np.zeros((2, 2, 2)))
    with pytest.raises(UnsupportedColorType):
        save_png(tmp_path / "x.png", np.zeros((2, 2, 3)), bitdepth=4)


def test_no_gamma_transfer():
    assert quantize(np.array([0.25]))[0] == round(0.25 * 255)


def test_loss_csv(tmp_path):
    reps = [LossReport(0.5 - i * 0.1, 0.1, 0.2, 0.0, 0.0) for i in range(3)]
    write_loss_csv(tmp_path / "l.csv", reps)
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "iteration,total,iou,col,sm,lap"
    assert [int(x.split(",")[0]) for x in lines[1:]] == [0, 1, 2]
    assert float(lines[2].split(",")[1]) == reps[1].total
