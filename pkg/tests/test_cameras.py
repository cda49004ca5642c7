import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from humanfield.cameras import (Camera, camera_azimuth, make_turntable_rig, pixel_to_ray, plucker_embed,
                                plucker_map, project, Ray)


def identity_camera(f=100.0, c=50.0, size=101):
    K = np.array([[f, 0, c], [0, f, c], [0, 0, 1.0]])
    return Camera(K, np.eye(3), np.zeros(3), size, size)


@pytest.mark.parametrize("n,expected", [(3, [0, 120, 240]), (8, [0, 45, 90, 135, 180, 225, 270, 315])])
def test_turntable_azimuths(n, expected):
    cams = make_turntable_rig(n, 3.0)
    assert np.allclose([camera_azimuth(c) for c in cams], expected, atol=1e-9)


def test_single_camera_looks_at_target():
    target = np.array([0.2, -0.1, 0.3])
    (cam,) = make_turntable_rig(1, 2.0, elevation=15.0, look_at=target)
    assert camera_azimuth(cam, target) == pytest.approx(0.0, abs=1e-9)
    to_target = (target - cam.center) / np.linalg.norm(target - cam.center)
    assert np.allclose(cam.optical_axis, to_target, atol=1e-12)


def test_rig_rejects_bad_radius():
    with pytest.raises(ValueError):
        make_turntable_rig(3, 0.0)
    with pytest.raises(ValueError):
        make_turntable_rig(3, -1.0)


def test_principal_point_ray_is_optical_axis():
    cam = make_turntable_rig(5, 2.5, elevation=20)[2]
    cx, cy = cam.intrinsics[0, 2], cam.intrinsics[1, 2]
    ray = pixel_to_ray(cam, (cx, cy))
    assert np.allclose(ray.direction, cam.optical_axis, atol=1e-12)
    assert np.allclose(ray.origin, cam.center)


def test_pinhole_direction():
    cam = identity_camera(f=50.0)
    ray = pixel_to_ray(cam, (50.0 + 50.0, 50.0))
    assert np.allclose(ray.direction, np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0), atol=1e-12)


def test_out_of_bounds_pixel_rejected():
    with pytest.raises(ValueError):
        pixel_to_ray(identity_camera(), (-3.0, 10.0))


def test_plucker_examples():
    p = plucker_embed(Ray(np.array([1.0, 0, 0]), np.array([0, 0, 1.0])), (0.1, 0.2, 0.3))
    assert np.allclose(p.moment, [0, -1, 0])
    assert p.as_vector().shape == (9,)
    p0 = plucker_embed(Ray(np.zeros(3), np.array([0, 0, 1.0])), (0, 0, 0))
    assert np.allclose(p0.moment, 0)


unit = st.tuples(*[st.floats(-1, 1) for _ in range(3)]).filter(lambda v: np.linalg.norm(v) > 0.1)
coord = st.floats(-5, 5)


@settings(max_examples=200, deadline=None)
@given(o=st.tuples(coord, coord, coord), d=unit, t=st.floats(-10, 10))
def test_plucker_moment_invariant_along_ray(o, d, t):
    d = np.asarray(d) / np.linalg.norm(d)
    o = np.asarray(o)
    a = plucker_embed(Ray(o, d), (0, 0, 0))
    b = plucker_embed(Ray(o + t * d, d), (0, 0, 0))
    assert np.allclose(a.moment, b.moment, atol=1e-9)
    assert abs(a.moment @ d) < 1e-6


def test_project_examples():
    cam = identity_camera()
    pix, z = project(cam, (1.0, 0.0, 1.0))
    assert np.allclose(pix, (150.0, 50.0)) and z == pytest.approx(1.0)
    pix, z = project(cam, (0.0, 0.0, 4.0))
    assert np.allclose(pix, (50.0, 50.0)) and z == pytest.approx(4.0)
    with pytest.raises(ValueError):
        project(cam, (0.0, 0.0, -1.0))


@settings(max_examples=200, deadline=None)
@given(az=st.floats(0, 360), el=st.floats(-60, 60), u=st.floats(-0.5, 63.5), v=st.floats(-0.5, 47.5),
       s=st.floats(0.1, 10.0))
def test_ray_projection_round_trip(az, el, u, v, s):
    cam = make_turntable_rig(1, 3.0, elevation=el, width=64, height=48, azimuth_offset=az)[0]
    ray = pixel_to_ray(cam, (u, v))
    pix, _ = project(cam, ray.origin + s * ray.direction)
    assert np.allclose(pix, (u, v), atol=1e-4)


def test_camera_validation():
    K = np.array([[100.0, 0, 50], [0, 100, 50], [0, 0, 1]])
    with pytest.raises(ValueError):
        Camera(K, np.diag([1.0, 1.0, -1.0]), np.zeros(3), 100, 100)
    with pytest.raises(ValueError):
        Camera(K * np.array([[-1], [1], [1]]), np.eye(3), np.zeros(3), 100, 100)
    with pytest.raises(ValueError):
        Camera(K, np.eye(3), np.zeros(3), 40, 100)


def test_plucker_map_rows_match_single_rays():
    cam = make_turntable_rig(3, 2.0, width=16, height=12)[1]
    pm = plucker_map(cam)
    ray = pixel_to_ray(cam, (5.0, 7.0))
    assert np.allclose(pm[7, 5, 3:], ray.direction)
    assert np.allclose(pm[7, 5, :3], np.cross(ray.origin, ray.direction))
