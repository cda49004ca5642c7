import math

import pytest
import torch

from humanfield.losses import (LossReport, eikonal_loss, mask_loss, recompute_total, rgb_loss, smooth_loss,
                              total_loss)
from humanfield.renderer import plane_field, sphere_field

LAM = {"lambda_rgb": 1.0, "lambda_sds": 0.0, "lambda_eik": 0.1, "lambda_sm": 0.01}


def test_rgb_loss_examples():
    t = torch.rand(10, 3)
    assert rgb_loss(t, t).item() == 0.0
    assert rgb_loss(t + torch.tensor([0.3, 0, 0]), t).item() == pytest.approx(0.3, abs=1e-6)
    pred = torch.tensor([[0.3, 0.0, 0.0], [0.0, 0.05, -0.05]])
    assert rgb_loss(pred, torch.zeros(2, 3)).item() == pytest.approx(0.2)
    with pytest.raises(ValueError):
        rgb_loss(torch.zeros(2, 3), torch.zeros(3, 3))


def test_eikonal_examples():
    p = torch.randn(100, 3, dtype=torch.float64, requires_grad=True)
    (g,) = torch.autograd.grad(sphere_field(1.0).sdf(p).sum(), p)
    assert abs(eikonal_loss(g).item()) < 1e-10
    assert eikonal_loss(torch.zeros(5, 3)).item() == 1.0
    assert eikonal_loss(torch.tensor([[2.0, 0, 0], [0, 1.0, 0]])).item() == pytest.approx(0.5)


def test_smooth_loss_examples():
    gen = lambda: torch.Generator().manual_seed(0)
    p = torch.randn(200, 3, dtype=torch.float64)
    assert smooth_loss(p, plane_field((1.0, 2.0, -0.5), 0.2).sdf, 0.5, gen()).item() == 0.0
    assert smooth_loss(p, sphere_field(1.0).sdf, 1e-5, gen()).item() < 1e-6
    a = smooth_loss(p, sphere_field(1.0).sdf, 0.01, gen())
    assert a.item() == smooth_loss(p, sphere_field(1.0).sdf, 0.01, gen()).item() > 0
    with pytest.raises(ValueError):
        smooth_loss(p, sphere_field(1.0).sdf, 0.0)


def test_total_loss_examples():
    zero = {"rgb": 0.0, "sds": 0.0, "eikonal": 0.0, "smooth": 0.0}
    total, rep = total_loss(zero, LAM)
    assert total == 0.0 and rep.total == 0.0
    ones = {k: torch.tensor(1.0, dtype=torch.float64) for k in zero}
    total, rep = total_loss(ones, {**LAM, "lambda_sds": 5.0}, phase="train")
    assert total.item() == pytest.approx(1.11) and rep.total == pytest.approx(1.11)
    total, rep = total_loss(ones, {**LAM, "lambda_sds": 5.0}, phase="finetune")
    assert total.item() == pytest.approx(6.11)
    with pytest.raises(ValueError):
        total_loss(ones, {**LAM, "lambda_rgb": -1.0})


def test_report_total_recomposes_exactly():
    g = torch.Generator().manual_seed(0)
    for i in range(200):
        vals = torch.rand(5, generator=g, dtype=torch.float64) * 10
        lam = dict(zip((*LAM, "lambda_mask"), (torch.rand(5, generator=g, dtype=torch.float64)).tolist()))
        terms = dict(zip(("rgb", "sds", "eikonal", "smooth", "mask"), vals))
        _, rep = total_loss(terms, lam, i, "finetune")
        assert rep.total == recompute_total(rep.to_dict(), lam)
        assert isinstance(rep, LossReport) and rep.iteration == i


def test_mask_loss_examples():
    half = torch.full((10,), 0.5, dtype=torch.float64)
    assert mask_loss(half, torch.ones(10)).item() == pytest.approx(math.log(2.0), abs=1e-12)
    assert mask_loss(half, torch.zeros(10)).item() == pytest.approx(math.log(2.0), abs=1e-12)
    o = torch.tensor([0.9, 0.2], dtype=torch.float64)
    expected = -(math.log(0.9) + math.log(0.8)) / 2
    assert mask_loss(o, torch.tensor([True, False])).item() == pytest.approx(expected, abs=1e-12)
    perfect = torch.tensor([1.0, 0.0], dtype=torch.float64)
    assert mask_loss(perfect, torch.tensor([1.0, 0.0])).item() < 2e-4
    with pytest.raises(ValueError):
        mask_loss(half, torch.ones(3))


def test_mask_term_enters_total():
    terms = {"rgb": 0.0, "sds": 0.0, "eikonal": 0.0, "smooth": 0.0, "mask": torch.tensor(2.0)}
    total, rep = total_loss(terms, {**LAM, "lambda_mask": 0.25})
    assert total.item() == pytest.approx(0.5) and rep.mask == 2.0 and rep.total == pytest.approx(0.5)
    total, _ = total_loss(terms, LAM)
    assert total == 0.0
