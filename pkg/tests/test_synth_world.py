import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab.exceptions import ConfigError
from driftlab.synth_world import (
    PerturbationSpec,
    World,
    dump_scene,
    load_scene,
    perturb,
    render_frame,
    split_chunks,
)


@pytest.fixture(scope="module")
def world():
    return World(seed=7)


@pytest.fixture(scope="module")
def scene(world):
    return world.sample_scene(seed=1, n_frames=12)


def test_zero_identity_renders_background(scene):
    blank = scene.with_identity(np.zeros_like(scene.identity))
    for ell in (0, 5, 11):
        np.testing.assert_array_equal(render_frame(blank, ell), blank.background)


def test_render_is_deterministic_and_pose_driven(world, scene):
    np.testing.assert_array_equal(render_frame(scene, 3), render_frame(scene, 3))
    poses = scene.pose_track.copy()
    poses[7] = poses[2]
    twin = type(scene)(world, scene.background, scene.identity, poses, scene.reference_poses)
    np.testing.assert_array_equal(render_frame(twin, 7), render_frame(twin, 2))
    with pytest.raises(IndexError):
        render_frame(scene, 12)


def test_character_is_linear_in_identity(world, scene):
    B = world.character_basis(scene.pose_track)
    np.testing.assert_allclose(np.einsum("tdq,q->td", B, scene.identity), scene.character_frames(), atol=1e-12)


def test_scenes_regenerate_from_seed(world):
    a = world.sample_scene(seed=4, n_frames=6)
    b = World(seed=7).sample_scene(seed=4, n_frames=6)
    np.testing.assert_array_equal(a.frames(), b.frames())
    c = world.sample_scene(seed=5, n_frames=6)
    assert not np.allclose(a.background, c.background)


def test_motion_heterogeneity(scene):
    frames = scene.frames()
    bg_part = np.broadcast_to(scene.background, frames.shape)
    assert np.all(np.ptp(bg_part, axis=0) == 0.0)
    assert np.all(scene.character_frames().var(axis=0) > 0.0)


def test_identity_swap_keeps_background(scene):
    other = scene.with_identity(scene.identity[::-1] + 1.0)
    np.testing.assert_allclose(other.frames() - other.character_frames(),
                               scene.frames() - scene.character_frames(), atol=1e-12)


def test_split_chunks(scene):
    chunks = split_chunks(scene, 4)
    assert len(chunks) == 3
    assert all(f.shape == (4, 32) and p.shape == (4, 4) for f, p in chunks)
    np.testing.assert_array_equal(np.concatenate([f for f, _ in chunks]), scene.frames())
    for n, (_, poses) in enumerate(chunks):
        np.testing.assert_array_equal(poses[0], scene.pose_track[n * 4])
    with pytest.raises(ConfigError):
        split_chunks(scene, 5)


@pytest.mark.parametrize("kind", ["gain", "offset", "smooth", "compose"])
def test_zero_magnitude_is_identity(scene, kind):
    chunk = scene.frames()[:4]
    np.testing.assert_array_equal(perturb(chunk, PerturbationSpec(kind, 0.0, seed=3)), chunk)


def test_offset_definition():
    out = perturb(np.zeros((3, 5)), PerturbationSpec("offset", 0.1, direction=np.eye(5)[0]))
    expected = np.zeros((3, 5))
    expected[:, 0] = 0.1
    np.testing.assert_array_equal(out, expected)


def test_gain_leaves_constant_chunk():
    chunk = np.full((4, 6), 2.5)
    np.testing.assert_array_equal(perturb(chunk, PerturbationSpec("gain", 0.3)), chunk)


def test_smooth_blends_toward_temporal_average():
    chunk = np.array([[0.0], [3.0], [0.0]])
    out = perturb(chunk, PerturbationSpec("smooth", 1.0))
    np.testing.assert_allclose(out[:, 0], [1.0, 1.0, 1.0])


def test_unknown_kind_is_config_error():
    with pytest.raises(ConfigError):
        PerturbationSpec("blur", 0.1)


@settings(max_examples=30)
@given(st.sampled_from(["gain", "offset", "smooth", "compose"]), st.floats(-0.5, 0.5), st.integers(0, 2**32))
def test_perturb_preserves_shape_and_finiteness(kind, m, seed):
    chunk = np.random.default_rng(seed % 1000).normal(size=(6, 8))
    out = perturb(chunk, PerturbationSpec(kind, m, seed=seed))
    assert out.shape == chunk.shape and np.all(np.isfinite(out))


def test_scene_dump_round_trip(tmp_path, scene):
    path = tmp_path / "scene.txt"
    dump_scene(scene, path)
    text = path.read_text()
    assert text.startswith("# driftlab scene v1")
    back = load_scene(path)
    np.testing.assert_array_equal(back.frames(), scene.frames())
    np.testing.assert_array_equal(back.reference_poses, scene.reference_poses)


def test_background_is_spatially_smooth():
    smooth, white = World(seed=3), World(seed=3, background_correlation=0.0)
    bgs = np.stack([smooth.sample_scene(seed=s, n_frames=1).background for s in range(400)])
    # unit marginal variance, strong correlation between neighbouring coordinates
    assert np.var(bgs) == pytest.approx(1.0, rel=0.1)
    lag1 = np.mean(bgs * np.roll(bgs, 1, axis=1))
    assert lag1 == pytest.approx(np.exp(-1 / (4 * 3.0 ** 2)), abs=0.08)
    wb = np.stack([white.sample_scene(seed=s, n_frames=1).background for s in range(400)])
    assert abs(np.mean(wb * np.roll(wb, 1, axis=1))) < 0.08
