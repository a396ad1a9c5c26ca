import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from m3dnet.errors import InvalidInputError
from m3dnet.recon3d import LightParams, ViewParams, depth_to_normals, render, shading
from m3dnet.recon3d.renderer import bilinear_sample, euler_to_matrix, reprojection_offsets

from oracles import bilinear_oracle, central_difference_grad, relative_error


def _scene(seed, size=8, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    depth = 1 + 0.05 * (torch.rand(1, 1, size, size, generator=g, dtype=dtype) - 0.5)
    albedo = 0.2 + 0.3 * torch.rand(1, 3, size, size, generator=g, dtype=dtype)
    return depth, albedo


def test_ambient_only_returns_albedo():
    depth, albedo = _scene(0, dtype=torch.float32)
    light = LightParams.neutral(1, ambient=1.0, diffuse=0.0)
    out = render(depth, albedo, ViewParams.identity(1), light)
    assert torch.allclose(out, albedo, atol=1e-6)


def test_flat_depth_gives_constant_shading():
    normals = depth_to_normals(torch.ones(2, 1, 8, 8))
    # a constant depth plane seen through a pinhole is still a plane facing the camera
    assert torch.allclose(normals[:, 2], torch.ones(2, 8, 8), atol=1e-6)
    light = LightParams(torch.tensor([0.2, 0.1]), torch.tensor([0.5, 0.7]), torch.tensor([[0.3, -0.2], [0.0, 0.4]]))
    s = shading(normals, light)
    for b in range(2):
        assert float(s[b].max() - s[b].min()) < 1e-6
        cos = float(light.direction[b, 2])
        assert float(s[b, 0, 0, 0]) == pytest.approx(float(light.ambient[b] + light.diffuse[b] * cos), abs=1e-6)


def test_normals_are_unit():
    depth, _ = _scene(1)
    n = depth_to_normals(depth)
    assert torch.allclose(n.norm(dim=1), torch.ones(1, 8, 8, dtype=torch.float64), atol=1e-12)


def test_receding_plane_normal_points_toward_receding_side():
    # depth increasing with u is the left wall of a corridor: its normal points to +x
    u = torch.arange(16, dtype=torch.float64).view(1, 1, 1, 16).expand(1, 1, 16, 16)
    n = depth_to_normals(1 + 0.002 * u)
    assert bool((n[:, 0, 4:12, 4:12] > 0).all())


def test_identity_view_offsets_are_zero():
    depth, _ = _scene(2)
    du, dv = reprojection_offsets(depth, ViewParams.identity(1, dtype=torch.float64))
    assert float(du.abs().max()) == 0.0 and float(dv.abs().max()) == 0.0


def test_rotation_matrix_orthonormal():
    r = euler_to_matrix(torch.tensor([[0.3, -0.5, 0.9]], dtype=torch.float64))[0]
    assert torch.allclose(r @ r.T, torch.eye(3, dtype=torch.float64), atol=1e-12)
    assert float(torch.det(r)) == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0, 7), st.floats(0, 5), st.integers(0, 1000))
def test_bilinear_sample_matches_oracle(x, y, seed):
    g = torch.Generator().manual_seed(seed)
    img = torch.rand(1, 2, 6, 8, generator=g, dtype=torch.float64)
    xs = torch.full((1, 6, 8), x, dtype=torch.float64)
    ys = torch.full((1, 6, 8), y, dtype=torch.float64)
    got = bilinear_sample(img, xs, ys)[0, :, 0, 0].tolist()
    assert np.allclose(got, bilinear_oracle(img[0].numpy(), x, y), atol=1e-12)


def test_bilinear_sample_exact_at_integers():
    img = torch.rand(1, 3, 5, 5)
    u = torch.arange(5.0).view(1, 1, 5).expand(1, 5, 5)
    v = torch.arange(5.0).view(1, 5, 1).expand(1, 5, 5)
    assert torch.equal(bilinear_sample(img, u, v), img)


@given(st.integers(0, 10_000), st.floats(0.0, 0.5), st.floats(0.2, 0.5), st.floats(-0.8, 0.8))
def test_flip_consistency(seed, ambient, diffuse, ly):
    # with no horizontal light component and identity pose, rendering flipped
    # factors equals flipping the rendering
    depth, albedo = _scene(seed, dtype=torch.float64)
    light = LightParams(torch.tensor([ambient], dtype=torch.float64), torch.tensor([diffuse], dtype=torch.float64),
                        torch.tensor([[0.0, ly]], dtype=torch.float64))
    view = ViewParams.identity(1, dtype=torch.float64)
    a = render(depth.flip(-1), albedo.flip(-1), view, light)
    b = render(depth, albedo, view, light).flip(-1)
    assert torch.allclose(a, b, atol=1e-12)


def test_output_in_unit_range_and_shape():
    depth, albedo = _scene(3, size=16, dtype=torch.float32)
    albedo = albedo * 3
    light = LightParams.neutral(1, 0.6, 0.9)
    view = ViewParams(torch.tensor([[0.1, -0.2, 0.05]]), torch.tensor([[0.02, -0.01, 0.0]]))
    out = render(depth, albedo.clamp(0, 1), view, light)
    assert out.shape == (1, 3, 16, 16)
    assert float(out.min()) >= 0 and float(out.max()) <= 1


def test_shape_errors():
    with pytest.raises(InvalidInputError):
        render(torch.ones(1, 3, 8, 8), torch.ones(1, 3, 8, 8), ViewParams.identity(1), LightParams.neutral(1))
    with pytest.raises(InvalidInputError):
        render(torch.ones(1, 1, 8, 8), torch.ones(1, 3, 4, 4), ViewParams.identity(1), LightParams.neutral(1))


def render_fd_inputs(seed=11):
    depth, albedo = _scene(seed)
    rot = torch.tensor([[0.02, -0.03, 0.01]], dtype=torch.float64)
    trans = torch.tensor([[0.004, -0.003, 0.002]], dtype=torch.float64)
    amb = torch.tensor([0.3], dtype=torch.float64)
    dif = torch.tensor([0.4], dtype=torch.float64)
    lxy = torch.tensor([[0.2, -0.1]], dtype=torch.float64)
    weights = torch.rand(1, 3, 8, 8, generator=torch.Generator().manual_seed(seed + 1), dtype=torch.float64)
    return [depth, albedo, rot, trans, amb, dif, lxy], weights


def render_scalar(weights):
    def fn(depth, albedo, rot, trans, amb, dif, lxy):
        out = render(depth, albedo, ViewParams(rot, trans), LightParams(amb, dif, lxy))
        return (out * weights).sum()
    return fn


def test_render_gradients_match_finite_differences():
    inputs, weights = render_fd_inputs()
    fn = render_scalar(weights)
    leaves = [t.clone().requires_grad_(True) for t in inputs]
    analytic = torch.autograd.grad(fn(*leaves), leaves)
    numeric = central_difference_grad(fn, inputs)
    for name, a, n in zip(("depth", "albedo", "rotation", "translation", "ambient", "diffuse", "light_xy"),
                          analytic, numeric):
        assert relative_error(a, n) < 1e-3, name
        assert float(n.abs().max()) > 0, name


def test_render_small_rotation_moves_pixels():
    depth, albedo = _scene(4)
    light = LightParams.neutral(1, dtype=torch.float64)
    base = render(depth, albedo, ViewParams.identity(1, dtype=torch.float64), light)
    turned = render(depth, albedo, ViewParams(torch.tensor([[0.0, math.radians(5), 0.0]], dtype=torch.float64),
                                              torch.zeros(1, 3, dtype=torch.float64)), light)
    assert float((base - turned).abs().max()) > 1e-3
