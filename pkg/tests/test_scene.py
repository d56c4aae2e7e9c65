import numpy as np
import pytest

from splat_autolabel.constants import INITIAL_OPACITY, PRUNE_OPACITY, RESET_OPACITY
from splat_autolabel.errors import CountMismatch, EmptyPointCloud, InvalidConfig, MalformedHeader
from splat_autolabel.geometry import quaternion_to_rotation
from splat_autolabel.scene import (
    GaussianScene,
    SceneConfig,
    SigmoidCodec,
    covariance3d,
    init_from_points,
    initial_scales,
)


def make_scene(rng, n=20, spread=10.0):
    points = rng.uniform(-spread, spread, size=(n, 3))
    return init_from_points(points, rng.uniform(size=(n, 3)), rng)


def test_init_from_points(rng):
    scene = make_scene(rng)
    assert len(scene) == 20
    np.testing.assert_allclose(SigmoidCodec().decode(scene.opacity_logits.value), INITIAL_OPACITY)
    np.testing.assert_allclose(scene.rotation.value[:, 0], 1.0)
    assert scene.state.shape == (20, SceneConfig().state_dim)
    assert np.all(scene.group_ids == 0)


def test_init_rejects_bad_point_clouds(rng):
    with pytest.raises(EmptyPointCloud):
        init_from_points(np.zeros((0, 3)), np.zeros((0, 3)), rng)
    with pytest.raises(CountMismatch):
        init_from_points(np.zeros((3, 3)), np.zeros((2, 3)), rng)


def test_initial_scales_use_nearest_neighbours():
    points = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 2.0, 0], [0, 0, 3.0]])
    # mean of the three other distances
    assert initial_scales(points)[0] == pytest.approx(2.0)
    assert initial_scales(points[:1]).shape == (1,)


def test_covariance_is_symmetric_positive_definite(rng):
    q = rng.normal(size=(50, 4))
    s = rng.normal(size=(50, 3))
    cov = covariance3d(q, s)
    np.testing.assert_allclose(cov, np.swapaxes(cov, 1, 2), atol=1e-12)
    assert np.all(np.linalg.eigvalsh(cov) > 0)
    r = quaternion_to_rotation(q[0] / np.linalg.norm(q[0]))
    np.testing.assert_allclose(cov[0], r @ np.diag(np.exp(2 * s[0])) @ r.T, atol=1e-12)


def test_scene_config_validation():
    with pytest.raises(InvalidConfig):
        SceneConfig(densify_from=10, densify_until=5)
    with pytest.raises(InvalidConfig):
        SceneConfig(images_per_group=0)
    with pytest.raises(InvalidConfig):
        SceneConfig(valid_distance=0.0)


def test_schedules():
    cfg = SceneConfig(densify_from=100, densify_until=300, densification_interval=100, opacity_reset_interval=200)
    assert [i for i in range(0, 501) if cfg.densify_due(i)] == [100, 200, 300]
    assert [i for i in range(0, 501) if cfg.reset_due(i)] == [200]


def test_group_assignment_matches_brute_force(rng):
    scene = make_scene(rng, n=10_000, spread=50.0)
    groups = [rng.uniform(-50, 50, size=(int(rng.integers(1, 6)), 3)) for _ in range(6)]
    radius = 12.0
    scene.assign_group_ids(groups, radius)
    expected = np.zeros(len(scene), dtype=np.int64)
    for i, p in enumerate(scene.position.value):
        for g, centers in enumerate(groups, start=1):
            if np.any(np.linalg.norm(centers - p, axis=1) < radius):
                expected[i] = g
    np.testing.assert_array_equal(scene.group_ids, expected)


def test_group_rows(rng):
    scene = make_scene(rng, n=5)
    scene.group_ids = np.array([1, 2, 1, 0, 2])
    np.testing.assert_array_equal(scene.group_rows(1), [0, 2])
    np.testing.assert_array_equal(scene.group_rows(0), [3])


def test_densify_clones_small_and_splits_large(rng):
    scene = make_scene(rng, n=4)
    scene.extent = 10.0
    log_scale = np.log(np.array([[0.01] * 3, [1.0] * 3, [0.01] * 3, [1.0] * 3]))
    scene.log_scale.assign(log_scale)
    scene.group_ids = np.array([1, 1, 2, 2])
    grads = np.array([1.0, 1.0, 0.0, 0.0])
    report = scene.densify_and_prune(grads, SceneConfig(), np.full(4, 0.5), rng)
    assert (report.cloned, report.split, report.pruned) == (1, 1, 0)
    # three kept, one clone, two halves of the split primitive
    assert len(scene) == 6
    np.testing.assert_array_equal(report.source_rows, [0, 2, 3, -1, -1, -1])
    np.testing.assert_array_equal(scene.group_ids, [1, 2, 2, 1, 1, 1])
    np.testing.assert_allclose(np.exp(scene.log_scale.value[-1]), 1.0 / 1.6)


def test_densify_prunes_faint_primitives(rng):
    scene = make_scene(rng, n=3)
    opacity = np.array([PRUNE_OPACITY / 2, 0.5, 0.5])
    report = scene.densify_and_prune(np.zeros(3), SceneConfig(), opacity, rng)
    assert report.pruned == 1
    np.testing.assert_array_equal(report.source_rows, [1, 2])
    assert len(scene) == 2


def test_densify_without_changes_leaves_scene(rng):
    scene = make_scene(rng, n=3)
    before = scene.position.value.copy()
    report = scene.densify_and_prune(np.zeros(3), SceneConfig(), np.full(3, 0.5), rng)
    assert not report.changed
    np.testing.assert_array_equal(scene.position.value, before)


def test_densify_without_changes_still_clears_gradient_stats(rng):
    scene = make_scene(rng, n=3)
    scene.add_densification_stats(np.arange(3), np.full(3, 1e-5))
    report = scene.densify_and_prune(scene.mean_position_gradients(), SceneConfig(), np.full(3, 0.5), rng)
    assert not report.changed
    np.testing.assert_array_equal(scene.mean_position_gradients(), np.zeros(3))


def test_primitive_at_the_size_threshold_is_split(rng):
    scene = make_scene(rng, n=3)
    scene.log_scale.assign(np.zeros((3, 3)))
    scene.extent = 2.0
    cfg = SceneConfig(percent_dense=0.5)
    report = scene.densify_and_prune(np.array([1.0, 0.0, 0.0]), cfg, np.full(3, 0.5), rng)
    assert (report.cloned, report.split) == (0, 1)
    assert len(scene) == 4


def test_densify_rejects_wrong_lengths(rng):
    scene = make_scene(rng, n=3)
    with pytest.raises(CountMismatch):
        scene.densify_and_prune(np.zeros(2), SceneConfig(), np.zeros(3), rng)


def test_opacity_reset_caps_decoded_opacity(rng):
    scene = make_scene(rng, n=4)
    logits = scene.opacity_logits.value.copy()
    logits[:, 0] = [5.0, -8.0, 2.0, 0.0]
    scene.opacity_logits.assign(logits)
    codec = SigmoidCodec()
    scene.opacity_reset(codec)
    decoded = codec.decode(scene.opacity_logits.value)
    assert np.all(decoded <= RESET_OPACITY + 1e-12)
    # already below the ceiling: untouched
    assert scene.opacity_logits.value[1, 0] == -8.0


def test_checkpoint_round_trip_is_exact(tmp_path, rng):
    scene = make_scene(rng, n=30)
    scene.group_ids = rng.integers(0, 4, size=30)
    scene.save(str(tmp_path))
    loaded = GaussianScene.load(str(tmp_path))
    for a, b in zip(scene.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(a.value, b.value)
    np.testing.assert_array_equal(loaded.group_ids, scene.group_ids)
    assert loaded.extent == scene.extent


def test_checkpoint_rejects_truncated_data(tmp_path, rng):
    make_scene(rng, n=5).save(str(tmp_path))
    path = tmp_path / "scene.bin"
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(MalformedHeader):
        GaussianScene.load(str(tmp_path))


def test_extent_from_cameras(rng):
    scene = make_scene(rng, n=3)
    scene.set_extent_from_cameras(np.array([[0.0, 0, 0], [2.0, 0, 0]]))
    assert scene.extent == pytest.approx(1.1)
