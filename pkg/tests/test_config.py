import json

import numpy as np
import pytest

from meshgrad.config import build_scene, load_schema, parse_scene, view_cameras
from meshgrad.errors import SchemaError
from meshgrad.shading import Lambertian, NoneLighting, Phong, SphericalHarmonics

from conftest import config_path


def test_empty_config_gives_defaults():
    cfg = parse_scene({"mesh": "icosphere:2"})
    assert cfg.mesh == "icosphere:2" and cfg.resolution == [64, 64]
    assert cfg.loss_weights == {"lambda_col": 1.0, "lambda_sm": 0.001, "lambda_lap": 0.01}
    assert cfg.soft == {"delta": 1e-4, "cutoff_eps": 1e-7}
    assert cfg.optimizer["lr"] == 1e-4 and cfg.task is None and cfg.shading is None
    assert parse_scene({}).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("raw,path", [
    ({"shading": {"model": "toon"}}, "$.shading.model"),
    ({"resolution": [4, 64]}, "$.resolution[0]"),
    ({"camera": {"eye": [0, 0]}}, "$.camera.eye"),
    ({"bogus": 1}, "$"),
    ({"mesh": "icosphere:9"}, "$.mesh"),
    ({"mesh": "missing.obj"}, "$.mesh"),
    ({"camera": {"eye": [0, 0, 0]}}, "$.camera.eye"),
    ({"camera": {"near": 5, "far": 1}}, "$.camera"),
    ({"task": {"kind": "z"}}, "$.task.kind"),
    ({"shading": {"model": "sh", "coeffs": [1, 2]}}, "$.shading.coeffs"),
])
def test_schema_errors_name_the_field(raw, path):
    with pytest.raises(SchemaError) as exc:
        parse_scene(raw)
    assert exc.value.path == path


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{ nope")
    with pytest.raises(SchemaError, match="line 1"):
        parse_scene(p)


def test_overrides_win_over_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "soft": {"delta": 0.01}, "resolution": [16, 16]}))
    cfg = parse_scene(p, {"seed": 9, "soft": {"delta": 0.002}})
    assert cfg.seed == 9 and cfg.soft == {"delta": 0.002, "cutoff_eps": 1e-7} and cfg.resolution == [16, 16]


def test_relative_paths_resolve_against_config(tmp_path):
    (tmp_path / "m.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"mesh": "m.obj"}))
    assert build_scene(parse_scene(p)).mesh.n_faces == 1


def test_task_alias_and_defaults():
    cfg = parse_scene({"task": {"kind": "sh_lighting"}})
    assert cfg.task["kind"] == "g" and cfg.task["iterations"] == 500


@pytest.mark.parametrize("model,cls", [("none", NoneLighting), ("lambertian", Lambertian),
                                       ("phong", Phong), ("sh", SphericalHarmonics)])
def test_build_scene_lighting(model, cls):
    scene = build_scene(parse_scene({"shading": {"model": model}, "resolution": [16, 16]}))
    assert isinstance(scene.lighting, cls) and (scene.width, scene.height) == (16, 16)


def test_textured_scene_gets_uvs_and_texture():
    scene = build_scene(parse_scene({"material": {"source": "texture", "texture": {"size": 8, "pattern": "noise"}}}))
    assert scene.textured and scene.texture.texels.shape == (8, 8, 3) and scene.mesh.uvs is not None
    assert np.all((scene.mesh.uvs > 0) & (scene.mesh.uvs < 1))


def test_single_precision_storage():
    single = build_scene(parse_scene({"precision": "single"})).mesh
    double = build_scene(parse_scene({})).mesh
    # inputs are rounded to float32; kernels still compute in double
    assert np.array_equal(single.vertices, double.vertices.astype(np.float32).astype(np.float64))
    assert np.array_equal(single.colors, double.colors.astype(np.float32).astype(np.float64))
    assert not np.array_equal(single.vertices, double.vertices)


def test_view_cameras_seeded():
    cfg = parse_scene({"views": {"count": 3}, "seed": 4})
    a, b = view_cameras(cfg), view_cameras(parse_scene({"views": {"count": 3}, "seed": 4}))
    assert len(a) == 3 and a == b
    assert view_cameras(parse_scene({"views": {"count": 3}, "seed": 5}))[1] != a[1]
    radius = np.linalg.norm(np.subtract(a[0].eye, a[0].center))
    for cam in a[1:]:
        assert np.linalg.norm(np.subtract(cam.eye, cam.center)) == pytest.approx(radius)


def test_shipped_configs_are_valid():
    for name in ["sphere.json", "sphere_phong.json"] + [f"task_{k}.json" for k in "abcdefgh"]:
        parse_scene(config_path(name))


def test_schema_loads():
    assert load_schema()["type"] == "object"
