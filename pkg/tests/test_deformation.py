import numpy as np
import pytest

from splat_autolabel import nn
from splat_autolabel.constants import INITIAL_OPACITY
from splat_autolabel.deformation import (
    DeformableModel,
    ModelConfig,
    OpacityDecoder,
    assemble_g2,
    deform,
    dem_factors,
)
from splat_autolabel.errors import CountMismatch, InvalidConfig
from splat_autolabel.renderer import Splats, render
from splat_autolabel.scene import SceneConfig, init_from_points

SMALL = ModelConfig(
    position_bands=3,
    time_bands=2,
    deform_width=16,
    deform_depth=2,
    dem_width=8,
    oem_width=8,
    state_dim=4,
    opacity_logits_dim=4,
)
SMALL_SCENE = SceneConfig(state_dim=4, opacity_logits_dim=4)


def make_model(rng, n=12, cfg=SMALL):
    points = np.column_stack([rng.uniform(-0.5, 0.5, n), rng.uniform(-0.5, 0.5, n), rng.uniform(2.5, 4.0, n)])
    scene = init_from_points(points, rng.uniform(size=(n, 3)), rng, SMALL_SCENE)
    return DeformableModel(scene, cfg, rng)


def plain_render(model, view):
    scene = model.scene
    opacity = np.full(len(scene), INITIAL_OPACITY)
    splats = Splats(scene.position.value, scene.rotation.value, scene.log_scale.value, opacity, scene.color.value)
    return render(splats, view)[0].pixels


def deformed_render(model, view, rows=None):
    g2 = model.snapshot(view.time, view.center, rows)
    splats = Splats(g2.position.value, g2.rotation.value, g2.log_scale.value, g2.opacity.value, g2.color.value)
    return render(splats, view)[0].pixels


def test_untrained_model_renders_like_the_static_scene(rng, view):
    for _ in range(20):
        model = make_model(rng)
        np.testing.assert_allclose(deformed_render(model, view), plain_render(model, view), atol=0.02)


def test_untrained_field_outputs_no_offsets(rng):
    model = make_model(rng)
    scene = model.scene
    out = deform(model.field, nn.leaf(scene.position), nn.leaf(scene.state), 0.7)
    for part in (out.delta_position, out.delta_rotation, out.delta_log_scale):
        assert np.all(part.value == 0.0)


def test_field_does_not_move_canonical_positions(rng):
    model = make_model(rng)
    last = model.field.mlp.weights[-1]
    last.assign(rng.normal(size=last.shape))
    scene = model.scene
    out = deform(model.field, nn.leaf(scene.position), nn.leaf(scene.state), 0.3)
    nn.backward(nn.sum(out.delta_position))
    assert np.all(scene.position.grad == 0.0)
    assert np.any(scene.state.grad != 0.0)


def test_warm_up_bypasses_the_field_and_enhancement(rng, view):
    model = make_model(rng)
    last = model.field.mlp.weights[-1]
    last.assign(rng.normal(size=last.shape))
    rows = np.arange(len(model.scene))
    g2 = model.deformed(0.5, view.center, rows, warm=True)
    np.testing.assert_array_equal(g2.position.value, model.scene.position.value)
    nn.backward(nn.sum(g2.position) + nn.sum(g2.opacity))
    for mlp in [model.field.mlp, *model.dem.networks().values()]:
        for p in mlp.parameters():
            assert np.all(p.grad == 0.0)
    assert any(np.any(p.grad != 0.0) for p in model.decoder.parameters())


def test_deformation_changes_with_time(rng, view):
    model = make_model(rng)
    last = model.field.mlp.weights[-1]
    last.assign(rng.normal(0.0, 0.1, size=last.shape))
    a = model.snapshot(0.0, view.center).position.value
    b = model.snapshot(1.0, view.center).position.value
    assert not np.allclose(a, b)


def test_assemble_g2_normalizes_and_clamps(rng):
    n = 5
    rotation = nn.variable(rng.normal(size=(n, 4)) * 3)
    opacity = nn.variable(np.full(n, 1.5))
    g2 = assemble_g2(
        nn.variable(rng.normal(size=(n, 3))),
        rotation,
        nn.variable(np.zeros((n, 3))),
        opacity,
        nn.variable(np.zeros((n, 3))),
        None,
        None,
    )
    np.testing.assert_allclose(np.linalg.norm(g2.rotation.value, axis=1), 1.0)
    assert np.all(g2.opacity.value == 1.0)
    np.testing.assert_array_equal(g2.rows, np.arange(n))


def test_assemble_g2_checks_row_counts(rng):
    with pytest.raises(CountMismatch):
        assemble_g2(
            nn.variable(np.zeros((3, 3))),
            nn.variable(np.zeros((2, 4))),
            nn.variable(np.zeros((3, 3))),
            nn.variable(np.zeros(3)),
            nn.variable(np.zeros((3, 3))),
            None,
            None,
        )


def test_decoder_limit_respects_ceiling(rng):
    decoder = OpacityDecoder(SMALL, rng)
    for w in decoder.mlp.weights:
        w.assign(rng.normal(size=w.shape))
    logits = rng.normal(0.0, 3.0, size=(200, SMALL.opacity_logits_dim))
    limited = decoder.limit(logits, 0.01)
    assert np.all(decoder.decode(limited) <= 0.01 + 1e-9)
    low = decoder.decode(logits) <= 0.01
    np.testing.assert_array_equal(limited[low], logits[low])


def test_disabled_decoder_is_a_plain_sigmoid(rng):
    decoder = OpacityDecoder(ModelConfig(opacity_logits_dim=4, state_dim=4, use_oem=False), rng)
    logits = rng.normal(size=(6, 4))
    np.testing.assert_allclose(decoder.decode(logits), 1.0 / (1.0 + np.exp(-logits[:, 0])))
    assert decoder.parameters() == []


def test_network_set_follows_switches(rng):
    assert set(make_model(rng).networks()) == {"deform", "dem_trunk", "dem_position", "dem_opacity", "oem"}
    cfg = ModelConfig(**{**SMALL.__dict__, "use_dem": False, "use_oem": False})
    assert set(make_model(rng, cfg=cfg).networks()) == {"deform"}
    cfg = ModelConfig(**{**SMALL.__dict__, "use_deform": False})
    assert set(make_model(rng, cfg=cfg).networks()) == {"oem"}


def test_model_checks_scene_widths(rng):
    scene = init_from_points(np.zeros((2, 3)) + [[0, 0, 1], [0, 1, 1]], np.zeros((2, 3)), rng)
    with pytest.raises(CountMismatch):
        DeformableModel(scene, SMALL, rng)


def test_model_config_validation():
    with pytest.raises(InvalidConfig):
        ModelConfig(position_bands=0)
    with pytest.raises(InvalidConfig):
        ModelConfig(deform_width=0)


def test_untrained_enhancement_factors_sit_near_one(rng):
    model = make_model(rng)
    scene = model.scene
    factors = dem_factors(model.dem, nn.leaf(scene.state), 0.3, nn.leaf(scene.position), np.array([0.0, 0.0, -1.0]))
    assert factors.position.value.shape == (len(scene), 1)
    np.testing.assert_allclose(factors.position.value, 1.0 / (1.0 + np.exp(-4.0)))
    np.testing.assert_allclose(factors.opacity.value, np.tanh(3.0))


def test_enhancement_factors_check_row_counts(rng):
    model = make_model(rng)
    scene = model.scene
    positions = nn.leaf(scene.position)[np.arange(3)]
    with pytest.raises(CountMismatch):
        dem_factors(model.dem, nn.leaf(scene.state), 0.0, positions, np.zeros(3))
