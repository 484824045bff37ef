import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshgrad.camera import Camera, look_at_matrix, perspective_matrix, project_backward, project_vertices, view_basis
from meshgrad.errors import DegenerateCamera, TapeMismatch

CAM = Camera(eye=(0.0, 0.0, 2.0), fov_y=math.radians(90))


def test_origin_projects_to_center():
    sv, _ = project_vertices([[0, 0, 0]], CAM)
    np.testing.assert_allclose(sv.ndc_xy[0], [0, 0], atol=1e-15)
    assert sv.depth[0] == pytest.approx(2.0)


def test_vertex_at_eye_is_behind():
    sv, _ = project_vertices([[0, 0, 2]], CAM)
    assert sv.behind_flags[0]


def test_hand_projection():
    sv, _ = project_vertices([[1, 0, 0]], CAM)
    assert sv.ndc_xy[0, 0] == pytest.approx(0.5)


def test_look_at_matrix():
    m = look_at_matrix(CAM)
    np.testing.assert_allclose(m @ [0, 0, 0, 1], [0, 0, -2, 1], atol=1e-15)
    np.testing.assert_allclose(m @ [0, 0, 2, 1], [0, 0, 0, 1], atol=1e-15)
    r = m[:3, :3]
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-9)


def test_perspective_matrix_anchors():
    p = perspective_matrix(CAM)
    for z, want in ((-CAM.near, -1.0), (-CAM.far, 1.0)):
        c = p @ [0, 0, z, 1]
        assert c[2] / c[3] == pytest.approx(want)
    c = p @ [1, 0, -1, 1]
    assert c[0] / c[3] == pytest.approx(1.0)


@pytest.mark.parametrize("kw", [dict(eye=(0, 0, 0)), dict(eye=(0, 2, 0)), dict(eye=(0, 0, 1), near=2, far=1)])
def test_degenerate_camera(kw):
    with pytest.raises(DegenerateCamera):
        Camera(**kw)


def _random_camera(rng):
    eye = rng.normal(size=3)
    eye = 3 * eye / np.linalg.norm(eye)
    return Camera(tuple(eye), tuple(rng.normal(0, 0.2, 3)), (0, 1, 0),
                  math.radians(rng.uniform(30, 80)), rng.uniform(0.7, 1.5))


def test_matches_matrix_pipeline(rng):
    for _ in range(20):
        cam = _random_camera(rng)
        pts = rng.normal(0, 0.5, (30, 3))
        sv, _ = project_vertices(pts, cam)
        clip = (perspective_matrix(cam) @ look_at_matrix(cam) @ np.c_[pts, np.ones(30)].T).T
        np.testing.assert_allclose(sv.ndc_xy, clip[:, :2] / clip[:, 3:], atol=1e-9)
        np.testing.assert_allclose(sv.inv_w, 1 / clip[:, 3], atol=1e-9)


def test_fov_does_not_move_on_axis_points():
    for fov in (20, 60, 120):
        sv, _ = project_vertices([[0, 0, -1]], Camera((0, 0, 2), fov_y=math.radians(fov)))
        np.testing.assert_allclose(sv.ndc_xy[0], 0, atol=1e-15)


def test_zero_gradients_give_zero():
    _, tape = project_vertices(np.eye(3) * 0.3, CAM)
    gv, ge = project_backward(np.zeros((3, 2)), np.zeros(3), tape)
    assert not gv.any() and not ge.any()


def test_tape_mismatch():
    _, tape = project_vertices(np.eye(3) * 0.3, CAM)
    with pytest.raises(TapeMismatch):
        project_backward(np.zeros((4, 2)), None, tape)


def _loss(pts, cam, wn, wd):
    sv, _ = project_vertices(pts, cam)
    return np.sum(wn * sv.ndc_xy) + np.sum(wd * sv.depth)


def test_jacobian_matches_fd(rng):
    """100 random scenes, every vertex and eye component, h=1e-5."""
    h = 1e-5
    for _ in range(100):
        cam = _random_camera(rng)
        pts = rng.normal(0, 0.5, (4, 3))
        wn, wd = rng.normal(size=(4, 2)), rng.normal(size=4)
        sv, tape = project_vertices(pts, cam)
        assert not sv.behind_flags.any()
        gv, ge = project_backward(wn, wd, tape)
        for i in range(pts.size):
            p, m = pts.copy(), pts.copy()
            p.flat[i] += h
            m.flat[i] -= h
            num = (_loss(p, cam, wn, wd) - _loss(m, cam, wn, wd)) / (2 * h)
            assert abs(gv.flat[i] - num) <= max(1e-8, 1e-4 * abs(num))
        eye = np.array(cam.eye)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            num = (_loss(pts, cam.with_eye(eye + e), wn, wd) - _loss(pts, cam.with_eye(eye - e), wn, wd)) / (2 * h)
            assert abs(ge[i] - num) <= max(1e-8, 1e-4 * abs(num))


def test_common_translation_has_zero_gradient(rng):
    """Moving vertices, eye and center together changes nothing. Center is
    held fixed by the backward pass, so sum(grad_v) + grad_eye must cancel
    the center derivative."""
    cam = Camera((0.5, 0.3, 3.0), center=(0.1, 0.0, 0.0))
    pts = rng.normal(0, 0.5, (6, 3))
    wn, wd = rng.normal(size=(6, 2)), rng.normal(size=6)
    shift = np.array([0.01, -0.02, 0.015])
    moved = Camera(tuple(np.add(cam.eye, shift)), tuple(np.add(cam.center, shift)))
    np.testing.assert_allclose(project_vertices(pts + shift, moved)[0].ndc_xy,
                               project_vertices(pts, cam)[0].ndc_xy, atol=1e-12)
    _, tape = project_vertices(pts, cam)
    gv, ge = project_backward(wn, wd, tape)
    h = 1e-6
    g_center = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        cp = Camera(cam.eye, tuple(np.add(cam.center, e)))
        cm = Camera(cam.eye, tuple(np.subtract(cam.center, e)))
        g_center[i] = (_loss(pts, cp, wn, wd) - _loss(pts, cm, wn, wd)) / (2 * h)
    np.testing.assert_allclose(gv.sum(axis=0) + ge + g_center, 0, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_basis_orthonormal(x, y, z):
    eye = np.array([x, y, z + 5.0])
    s, u, f = view_basis(Camera(tuple(eye)))
    b = np.stack([s, u, f])
    np.testing.assert_allclose(b @ b.T, np.eye(3), atol=1e-9)
