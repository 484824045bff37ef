import math
import os

import numpy as np
import pytest

from meshgrad.camera import Camera
from meshgrad.geometry import unit_sphere
from meshgrad.pipeline import Scene
from meshgrad.shading import Lambertian, Phong, SphericalHarmonics, Texture

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def sphere_mesh(level=2):
    m = unit_sphere(level)
    v = m.vertices
    colors = 0.5 + 0.4 * np.sin(3 * v)
    uv = np.stack([np.arctan2(v[:, 2], v[:, 0]) / (2 * np.pi) + 0.5,
                   np.arccos(np.clip(v[:, 1], -1, 1)) / np.pi], axis=1) * 0.9 + 0.05
    return m.replace(colors=colors, uvs=uv)


def make_scenes(res=32):
    """Small scenes covering every lighting model and the textured path."""
    m = sphere_mesh()
    cam = Camera(eye=(0.3, 0.4, 3.0), fov_y=math.radians(45))
    tex = Texture(np.random.default_rng(1).uniform(0, 1, (8, 8, 3)))
    kw = dict(width=res, height=res)
    return {
        "none": Scene(m, cam, **kw),
        "lambertian": Scene(m, cam, Lambertian(0.9, (0.3, 0.5, 1.0)), **kw),
        "phong": Scene(m, cam, Phong(0.8, 0.4, 5.0, (0.3, 0.5, 1.0)), **kw),
        "sh": Scene(m, cam, SphericalHarmonics((0.8, 0.1, 0.2, 0.3, 0.05, -0.05, 0.1, 0.02, 0.03)), **kw),
        "textured": Scene(m, cam, Lambertian(0.9, (0.3, 0.5, 1.0)), texture=tex, **kw),
    }


@pytest.fixture(scope="session")
def scenes():
    return make_scenes()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def config_path(name):
    return os.path.join(CONFIGS, name)


_TASK_RUNS = {}


def task_report(letter, workers=1):
    """Run configs/task_<letter>.json once per session and cache the report."""
    from meshgrad.config import parse_scene
    from meshgrad.tasks import run_task

    key = (letter, workers)
    if key not in _TASK_RUNS:
        cfg = parse_scene(config_path(f"task_{letter}.json"), {"workers": workers})
        _TASK_RUNS[key] = run_task(cfg)
    return _TASK_RUNS[key]


# acceptance criteria: one PASS/FAIL line each in the terminal summary
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    key = mark.args
    prev = _CRITERIA.get(key, True)
    _CRITERIA[key] = prev and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), ok in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {title}")
