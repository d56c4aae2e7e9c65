import numpy as np
import pytest

from conftest import random_splats
from splat_autolabel import nn
from splat_autolabel.errors import CountMismatch, ShapeMismatch, StaleRecord
from splat_autolabel.geometry import Intrinsics, Pose
from splat_autolabel.renderer import (
    CameraView,
    RenderConfig,
    Splats,
    project_gaussian,
    project_gaussians,
    render,
    render_backward,
    render_op,
)

ATTRIBUTES = ("position", "rotation", "log_scale", "opacity", "color")


def loss_and_grads(splats, view, weights, cfg=None):
    image, record = render(splats, view, cfg)
    return float((image.pixels * weights).sum()), render_backward(record, weights)


def check_gradients(rng, view):
    # low opacities keep every alpha away from the clamp and the transmittance cutoff
    splats = random_splats(rng, int(rng.integers(1, 11)))
    splats.opacity = rng.uniform(0.1, 0.5, size=len(splats))
    weights = rng.normal(size=(view.height, view.width, 3))
    _, grads = loss_and_grads(splats, view, weights)
    eps = 1e-6
    for name in ATTRIBUTES:
        values = getattr(splats, name)
        analytic = getattr(grads, name)
        numeric = np.zeros_like(values)
        for i in np.ndindex(values.shape):
            old = values[i]
            values[i] = old + eps
            hi, _ = loss_and_grads(splats, view, weights)
            values[i] = old - eps
            lo, _ = loss_and_grads(splats, view, weights)
            values[i] = old
            numeric[i] = (hi - lo) / (2 * eps)
        floor = 1e-6 * max(1.0, float(np.abs(numeric).max()))
        np.testing.assert_allclose(analytic.reshape(numeric.shape), numeric, rtol=1e-3, atol=floor, err_msg=name)


def test_gradients_match_finite_differences(rng, view):
    for _ in range(5):
        check_gradients(rng, view)


@pytest.mark.slow
def test_gradients_match_finite_differences_many_scenes(view):
    rng = np.random.default_rng(7)
    for _ in range(50):
        check_gradients(rng, view)


def test_composited_weights_stay_in_unit_interval(rng, view):
    for _ in range(1000):
        splats = random_splats(rng, int(rng.integers(1, 8)))
        image, _ = render(splats, view, RenderConfig(debug=True))
        assert np.all(image.alpha >= 0.0)
        assert np.all(image.alpha <= 1.0)
        assert np.all((image.pixels >= 0.0) & (image.pixels <= 1.0))


def test_zero_opacity_primitive_changes_nothing(rng, view):
    for _ in range(100):
        splats = random_splats(rng)
        before, _ = render(splats, view)
        extra = random_splats(rng, 1)
        merged = Splats(
            np.vstack([splats.position, extra.position]),
            np.vstack([splats.rotation, extra.rotation]),
            np.vstack([splats.log_scale, extra.log_scale]),
            np.append(splats.opacity, 0.0),
            np.vstack([splats.color, extra.color]),
        )
        after, _ = render(merged, view)
        assert np.abs(after.pixels - before.pixels).max() < 1e-7


def test_primitive_order_does_not_matter(rng, view):
    for _ in range(100):
        splats = random_splats(rng)
        perm = rng.permutation(len(splats))
        shuffled = Splats(*(getattr(splats, name)[perm] for name in ATTRIBUTES))
        a, _ = render(splats, view)
        b, _ = render(shuffled, view)
        np.testing.assert_array_equal(a.pixels, b.pixels)


def test_thread_count_does_not_change_results(rng):
    view = CameraView(Pose.identity(), Intrinsics(40.0, 40.0, 16.0, 16.0, 32, 32))
    splats = random_splats(rng, 10)
    weights = rng.normal(size=(32, 32, 3))
    one, g1 = loss_and_grads(splats, view, weights, RenderConfig(tile_size=8, threads=1))
    many, g4 = loss_and_grads(splats, view, weights, RenderConfig(tile_size=8, threads=4))
    assert one == many
    for name in ATTRIBUTES:
        np.testing.assert_array_equal(getattr(g1, name), getattr(g4, name))


def test_empty_scene_renders_background(view):
    black, _ = render(Splats.empty(), view)
    assert np.all(black.pixels == 0.0)
    white, record = render(Splats.empty(), view, RenderConfig(white_background=True))
    assert np.all(white.pixels == 1.0)
    grads = render_backward(record, np.ones((view.height, view.width, 3)))
    assert grads.position.shape == (0, 3)


def test_primitives_behind_the_camera_are_culled(view):
    splats = Splats(np.array([[0.0, 0.0, -3.0]]), np.array([[1.0, 0, 0, 0]]), np.zeros((1, 3)), [0.9], [[1.0, 1, 1]])
    assert len(project_gaussians(splats, view)) == 0
    image, _ = render(splats, view)
    assert np.all(image.pixels == 0.0)


def test_single_projection_lands_on_principal_point(view):
    proj = project_gaussian(np.array([0.0, 0.0, 3.0]), np.array([1.0, 0, 0, 0]), np.log([0.2, 0.2, 0.2]), view)
    assert proj is not None
    k = view.intrinsics
    np.testing.assert_allclose(proj.mean2d[0], [k.cx, k.cy])
    # isotropic primitive: circular footprint plus the low-pass term
    expected = (k.fx * 0.2 / 3.0) ** 2 + 0.3
    np.testing.assert_allclose(proj.cov2d[0], np.diag([expected, expected]), atol=1e-12)


def test_stale_record_is_rejected(rng, view):
    class Owner:
        version = 0

    owner = Owner()
    splats = random_splats(rng)
    splats.owner = owner
    image, record = render(splats, view)
    owner.version = 1
    with pytest.raises(StaleRecord):
        render_backward(record, np.ones_like(image.pixels))


def test_backward_checks_gradient_shape(rng, view):
    _, record = render(random_splats(rng), view)
    with pytest.raises(ShapeMismatch):
        render_backward(record, np.ones((3, 3, 3)))


def test_splats_check_row_counts():
    with pytest.raises(CountMismatch):
        Splats(np.zeros((2, 3)), np.zeros((1, 4)), np.zeros((2, 3)), np.zeros(2), np.zeros((2, 3)))


def test_render_op_backward_matches_render_backward(rng, view):
    splats = random_splats(rng)
    weights = rng.normal(size=(view.height, view.width, 3))
    inputs = [nn.variable(getattr(splats, name)) for name in ATTRIBUTES]
    inputs[3] = nn.variable(splats.opacity[:, None])
    result = render_op(*inputs, view)
    grads = nn.backward(nn.sum(result.image * weights))
    _, expected = loss_and_grads(splats, view, weights)
    for tensor, name in zip(inputs, ATTRIBUTES):
        np.testing.assert_allclose(grads.for_input(tensor).reshape(-1), getattr(expected, name).reshape(-1))
    assert result.gradients is not None
    assert result.gradients.visible.all()
