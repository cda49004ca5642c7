import numpy as np
import pytest

from humanfield.cameras import look_at_camera
from humanfield.field import finite_difference_gradient
from humanfield.scenes import PART_NAMES, make_synthetic_scene, normals_to_rgb, render_reference


@pytest.fixture(scope="module")
def person():
    return make_synthetic_scene("capsule_person", 0)


def test_sphere_is_analytic():
    s = make_synthetic_scene("sphere", 0)
    assert s.sdf([[0, 0, 0]])[0] == pytest.approx(-1.0)
    p = np.random.default_rng(0).normal(size=(100, 3))
    assert np.allclose(s.sdf(p), np.linalg.norm(p, axis=1) - 1.0)


def test_person_layout(person):
    assert set(np.unique(person.part_labels)) == set(range(len(PART_NAMES)))
    height = person.bbox[1, 1] - person.bbox[0, 1]
    assert 1.5 < height < 2.5


@pytest.mark.parametrize("kind", ["sphere", "capsule_person"])
def test_proxy_vertices_near_surface(kind):
    s = make_synthetic_scene(kind, 3)
    assert np.abs(s.sdf(s.vertices)).max() <= 0.05 * s.diagonal
    assert np.all(s.vertices >= s.bbox[0]) and np.all(s.vertices <= s.bbox[1])


def test_scene_determinism():
    a = make_synthetic_scene("capsule_person", 11)
    b = make_synthetic_scene("capsule_person", 11)
    for name in ("seg_a", "seg_b", "radii", "vertices", "part_labels", "tex_freq", "tex_phase", "bbox"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = make_synthetic_scene("capsule_person", 12)
    assert not np.array_equal(a.vertices, c.vertices)


def test_unit_gradient_norm(person):
    rng = np.random.default_rng(0)
    pts = rng.uniform(person.bbox[0] - 0.3, person.bbox[1] + 0.3, size=(10000, 3))
    g = finite_difference_gradient(person.sdf, pts, h=1e-6)
    err = np.abs(np.linalg.norm(g, axis=1) - 1.0)
    # the hard union has measure-zero creases where two capsules tie
    assert np.mean(err < 1e-4) > 0.995
    assert np.allclose(np.linalg.norm(person.normals(pts), axis=1), 1.0)


def test_sphere_silhouette_area():
    s = make_synthetic_scene("sphere", 0)
    res = 256
    cam = look_at_camera((0, 0, 3.0), (0, 0, 0), res, res, focal=0.5 * res / np.tan(np.deg2rad(20)))
    ref = render_reference(s, cam)
    # analytic disc: angular radius asin(1/3) -> image radius f * tan(asin(1/3))
    f = cam.intrinsics[0, 0]
    r_img = f * np.tan(np.arcsin(1 / 3))
    area = np.pi * r_img ** 2
    assert abs(ref.mask.sum() - area) / area < 0.01
    assert np.all(ref.image[~ref.mask] == 0)
    assert np.allclose(np.linalg.norm(ref.normals[ref.mask], axis=1), 1.0)
    # pixel 128 sits half a pixel off the principal point, so the hit is slightly off-axis
    off = 0.5 * np.sqrt(2) / f
    assert ref.depth[res // 2, res // 2] == pytest.approx(3.0 - np.sqrt(1.0 - (3.0 * off) ** 2), abs=1e-4)


def test_normal_rgb_of_facing_sphere():
    s = make_synthetic_scene("sphere", 0)
    cam = look_at_camera((0, 0, 3.0), (0, 0, 0), 33, 33, focal=40.0)
    ref = render_reference(s, cam)
    rgb = normals_to_rgb(ref.normals, cam)
    assert np.allclose(rgb[16, 16], (0.5, 0.5, 1.0), atol=1e-6)
