import math
from collections import Counter

import numpy as np
import pytest
import torch

from conftest import rel_err
from humanfield.cameras import look_at_camera, pixel_grid, pixels_to_rays
from humanfield.renderer import (AnalyticField, Sharpness, composite, extract_mesh, per_ray_jitter, render_ray,
                                 render_rays, render_view, sample_ray, sample_rays, sdf_to_alpha, sphere_field,
                                 transmittance)
from humanfield.training import build_model

BOX = np.array([[-1.5, -1.5, -1.5], [1.5, 1.5, 1.5]])


def test_midpoint_sampling():
    s = sample_ray((0, 0, -1.0), (0, 0, 1.0), [[-1, -1, -1], [1, 1, 0]], 4)
    assert torch.allclose(s.depths, torch.tensor([0.125, 0.375, 0.625, 0.875], dtype=torch.float64))
    assert torch.allclose(s.deltas, torch.tensor([0.25, 0.25, 0.25, 0.125], dtype=torch.float64))


def test_stratified_sampling_in_bins_and_seeded():
    o = torch.tensor([[0, 0, -1.0]], dtype=torch.float64).expand(50, 3)
    d = torch.tensor([[0, 0, 1.0]], dtype=torch.float64).expand(50, 3)
    box = [[-1, -1, -1], [1, 1, 0]]
    a = sample_rays(o, d, box, 8, stratified=True, generator=torch.Generator().manual_seed(3))
    b = sample_rays(o, d, box, 8, stratified=True, generator=torch.Generator().manual_seed(3))
    assert torch.equal(a.depths, b.depths)
    bins = torch.arange(8, dtype=torch.float64) / 8
    assert torch.all(a.depths >= bins) and torch.all(a.depths <= bins + 1 / 8)
    assert torch.all(a.deltas > 0)


def test_missing_ray():
    assert sample_ray((5.0, 5.0, 5.0), (1.0, 0, 0), BOX, 8) is None
    with pytest.raises(ValueError):
        sample_ray((0, 0, -5.0), (0, 0, 1.0), BOX, 1)


def test_sdf_to_alpha_examples():
    sig = lambda x: 1 / (1 + math.exp(-x))
    a = sdf_to_alpha(torch.tensor(0.1, dtype=torch.float64), torch.tensor(-0.1, dtype=torch.float64), 10.0)
    assert a.item() == pytest.approx((sig(1) - sig(-1)) / sig(1), abs=1e-12)
    assert abs(a.item() - 0.632) < 1e-3
    assert sdf_to_alpha(torch.tensor(0.3), torch.tensor(0.3), 50.0).item() == 0.0
    assert sdf_to_alpha(torch.tensor(-0.1), torch.tensor(0.1), 50.0).item() == 0.0
    deep = sdf_to_alpha(torch.tensor(-40.0, dtype=torch.float64), torch.tensor(-41.0, dtype=torch.float64), 10.0)
    assert deep.item() == pytest.approx(1 - math.exp(-10), rel=1e-9)


def test_composite_examples():
    values = torch.tensor([[1.0], [0.0]])
    acc, w, op = composite(torch.tensor([0.5, 0.5]), values)
    assert acc.item() == pytest.approx(0.5) and op.item() == pytest.approx(0.75)
    assert torch.allclose(w, torch.tensor([0.5, 0.25]))
    acc, w, op = composite(torch.zeros(4), torch.ones(4, 3))
    assert torch.all(acc == 0) and op.item() == 0 and torch.all(transmittance(torch.zeros(4)) == 1)
    vals = torch.tensor([[0.2, 0.4, 0.6], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    acc, _, op = composite(torch.tensor([1.0, 0.3, 0.9]), vals)
    assert torch.allclose(acc, vals[0]) and op.item() == 1.0


def test_sharpness_is_positive():
    s = Sharpness(20.0)
    assert s.inv_s.item() == pytest.approx(20.0)
    with torch.no_grad():
        s.log_inv_s.fill_(-50.0)
    assert s.inv_s.item() > 0
    with pytest.raises(ValueError):
        Sharpness(0.0)


@pytest.fixture(scope="module")
def sphere_render():
    res = 48
    cam = look_at_camera((0, 0, 3.0), (0, 0, 0), res, res, focal=0.5 * res / math.tan(math.radians(20)))
    maps = render_view(cam, sphere_field(1.0), BOX, 128, 200.0, dtype=torch.float64)
    return cam, maps


def _analytic_hits(cam, pixels):
    o, d = pixels_to_rays(cam, pixels)
    b = (o * d).sum(-1)
    disc = b ** 2 - ((o * o).sum(-1) - 1.0)
    hit = disc > 0
    t = -b - np.sqrt(np.maximum(disc, 0))
    return hit, t, o + t[:, None] * d


def pixels_dirs(cam, pix):
    return pixels_to_rays(cam, pix)[1]


def test_sphere_oracle(sphere_render):
    cam, maps = sphere_render
    pix = pixel_grid(cam.width, cam.height)
    hit, t, _ = _analytic_hits(cam, pix)
    op = maps["opacity"].reshape(-1).numpy()
    col = maps["color"].reshape(-1, 3).numpy()
    # stay a pixel away from the silhouette edge, where the disc only partly covers the pixel footprint
    edge = np.abs(np.linalg.norm(np.cross(cam.center, pixels_dirs(cam, pix)), axis=-1) - 1.0) < 0.05
    inner, outer = hit & ~edge, ~hit & ~edge
    assert np.all(op[inner] > 0.99)
    assert np.allclose(col[inner], [1, 0, 0], atol=1e-2)
    assert np.all(op[outer] < 0.01)
    depth = maps["depth"].reshape(-1).numpy()
    assert np.abs(depth[inner] - t[inner]).max() < 1e-2
    normal = maps["normal_world"].reshape(-1, 3).numpy()
    assert np.all(np.linalg.norm(normal, axis=-1) <= op + 1e-5)
    c = cam.height // 2 * cam.width + cam.width // 2
    d = pixels_dirs(cam, pix[c:c + 1])[0]
    assert normal[c] @ d < -0.99
    assert np.allclose(maps["normal"][cam.height // 2, cam.width // 2].numpy(), [0.5, 0.5, 1.0], atol=2e-2)


def test_background_view_is_empty():
    cam = look_at_camera((0, 0, 3.0), (0, 0, 0), 12, 12, focal=20.0)
    far_sphere = sphere_field(0.2, center=(0.0, 0.0, -50.0))
    maps = render_view(cam, far_sphere, BOX, 16, 50.0)
    assert maps["opacity"].abs().max() < 1e-6


def test_subset_matches_full_render(tiny_data):
    cfg, data = tiny_data
    model = build_model(cfg, len(data.scene.vertices))
    cam = data.eval_cameras[0]
    with torch.no_grad():
        ctx = model.encode(data.source)
        full = render_view(cam, ctx, data.scene.bbox, 8, ctx.inv_s, stratified=True, seed=4)
        subset = np.array([[3, 5], [17, 2], [0, 0], [23, 23]])
        part = render_view(cam, ctx, data.scene.bbox, 8, ctx.inv_s, stratified=True, seed=4, subset=subset, chunk=3)
    for k in ("color", "depth", "opacity", "normal"):
        assert torch.allclose(part[k], full[k][subset[:, 1], subset[:, 0]], atol=1e-6)


def test_jitter_is_keyed_per_pixel():
    a = per_ray_jitter(7, np.array([0, 5, 9]), 6)
    b = per_ray_jitter(7, np.array([9]), 6)
    assert np.array_equal(a[2], b[0])
    assert np.all((a >= 0) & (a < 1))
    assert not np.array_equal(per_ray_jitter(8, np.array([9]), 6), b)


def test_degenerate_gradient_is_flagged():
    flat = AnalyticField(lambda p: torch.zeros(p.shape[0], dtype=p.dtype) + 0.0 * p.sum(-1))
    out = render_ray(flat, (0, 0, -3.0), (0, 0, 1.0), BOX, 8, 20.0)
    assert out["degenerate"].all()
    assert torch.isfinite(out["normal"]).all()


def test_sphere_mesh():
    mesh = extract_mesh(sphere_field(1.0).sdf, BOX, 64, dtype=torch.float64)
    r = np.linalg.norm(mesh.vertices, axis=-1)
    assert r.min() >= 0.99 and r.max() <= 1.01
    edges = Counter()
    for f in mesh.faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            edges[(min(a, b), max(a, b))] += 1
    assert set(edges.values()) == {2}
    fn, _ = mesh.face_normals()
    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    assert np.all((fn * centroids).sum(-1) > 0)
    assert np.allclose(mesh.normals, mesh.vertices / r[:, None], atol=1e-6)


def test_constant_sdf_gives_empty_mesh():
    assert extract_mesh(lambda p: torch.ones(p.shape[0]), BOX, 16).is_empty
    with pytest.raises(ValueError):
        extract_mesh(sphere_field(1.0).sdf, BOX, 4)


def test_pixel_colour_gradient_wrt_sdf_parameters(tiny_data):
    cfg, data = tiny_data
    model = build_model(cfg, len(data.scene.vertices)).double()
    cam = data.eval_cameras[0]
    o, d = pixels_to_rays(cam, np.array([[12.0, 10.0], [11.0, 14.0]]))
    o, d = torch.as_tensor(o), torch.as_tensor(d)
    probe = torch.tensor([[0.3, -0.2, 0.5], [0.1, 0.7, -0.4]], dtype=torch.float64)

    def pixel_value():
        ctx = model.encode(data.source)
        out = render_rays(ctx, o, d, data.scene.bbox, 8, ctx.inv_s, create_graph=True)
        return (out["color"] * probe).sum()

    w = model.sdf_net.hidden[0].weight
    (g,) = torch.autograd.grad(pixel_value(), w)
    idx = torch.argsort(g.abs().reshape(-1), descending=True)[:12]
    fd = torch.zeros(len(idx), dtype=torch.float64)
    h = 1e-6
    with torch.no_grad():
        for j, i in enumerate(idx):
            w.view(-1)[i] += h
            fp = pixel_value()
            w.view(-1)[i] -= 2 * h
            fm = pixel_value()
            w.view(-1)[i] += h
            fd[j] = (fp - fm) / (2 * h)
    assert rel_err(g.reshape(-1)[idx], fd) < 1e-2
