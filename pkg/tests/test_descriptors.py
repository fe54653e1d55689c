import numpy as np
import pytest

from localtraj.descriptors import (
    KINDS_2D,
    KINDS_3D,
    VolumeSpec,
    describe_2d,
    describe_3d,
    descriptor_dim,
    hof,
    hof_votes,
    hog,
    hsf,
    hsf_votes,
    kinds_for,
    mbh,
    mbh3d,
    trajectory_shape,
    tsd,
    tsd3d,
)
from localtraj.exceptions import ParameterError, ShapeError
from localtraj.flow import FlowField2D, FrameGray, SceneFlowField
from localtraj.tracking import Trajectory2D, Trajectory3D

SIZE = 64
L = 15


def centred_2d(t0=0):
    return Trajectory2D(t0, np.full((L + 1, 2), 32.0))


def centred_3d(points=None):
    if points is None:
        points = np.column_stack([np.zeros(L + 1), np.zeros(L + 1), np.full(L + 1, 2.0)])
    return Trajectory3D(0, points, np.full((L + 1, 2), 32.0))


def frames_of(image, count=L):
    return [FrameGray(image)] * count


def flows_of(u, v, count=L):
    return [FlowField2D(np.asarray(u, float), np.asarray(v, float))] * count


def scene_flows_of(dX, dY, dZ, count=L):
    return [SceneFlowField(np.asarray(dX, float), np.asarray(dY, float), np.asarray(dZ, float))] * count


def grid():
    return np.mgrid[0:SIZE, 0:SIZE].astype(float)


def full(value):
    return np.full((SIZE, SIZE), float(value))


def cells(block, bins):
    return block.values.reshape(-1, bins)


def test_dimensions():
    expected = {"HOG": 96, "HOF": 108, "MBH": 192, "TSD": 30, "HSF": 108, "MBH3D": 324, "TSD3D": 45}
    for kind, dim in expected.items():
        assert descriptor_dim(kind) == dim
    with pytest.raises(ParameterError):
        descriptor_dim("SIFT")


def test_describe_2d_dimensions():
    rows, cols = grid()
    out = describe_2d(frames_of(np.sin(cols / 3.0) * 0.5 + 0.5), flows_of(full(1), full(0)), [centred_2d()] * 3)
    assert list(out) == list(KINDS_2D)
    for kind, block in out.items():
        assert block.shape == (3, descriptor_dim(kind))
        assert np.all(np.isfinite(block))


def test_tsd_examples():
    straight = Trajectory2D(0, np.column_stack([np.arange(L + 1), np.zeros(L + 1)]).astype(float))
    np.testing.assert_allclose(tsd(straight).values.reshape(L, 2), np.tile([1 / 15, 0.0], (L, 1)))
    assert not np.any(tsd(Trajectory2D(0, np.zeros((L + 1, 2)))).values)
    x = np.array([i % 2 for i in range(L + 1)], dtype=float)
    alternating = Trajectory2D(0, np.column_stack([x, np.zeros(L + 1)]))
    steps = tsd(alternating).values.reshape(L, 2)[:, 0]
    np.testing.assert_allclose(np.abs(steps), 1 / 15)
    assert np.all(steps[::2] > 0) and np.all(steps[1::2] < 0)


def test_tsd_is_scale_invariant(rng):
    points = np.cumsum(rng.normal(size=(L + 1, 2)), axis=0)
    np.testing.assert_allclose(trajectory_shape(points), trajectory_shape(3.7 * points), atol=1e-9)


def test_tsd3d_examples():
    radial = centred_3d(np.column_stack([np.zeros(L + 1), np.zeros(L + 1), 2.0 + 0.1 * np.arange(L + 1)]))
    np.testing.assert_allclose(tsd3d(radial).values.reshape(L, 3), np.tile([0, 0, 1 / 15], (L, 1)))
    lateral = centred_3d(np.column_stack([0.1 * np.arange(L + 1), np.zeros(L + 1), np.full(L + 1, 2.0)]))
    np.testing.assert_allclose(tsd3d(lateral).values.reshape(L, 3), np.tile([1 / 15, 0, 0], (L, 1)))
    assert tsd3d(lateral).dim == 45
    assert not np.any(tsd3d(centred_3d()).values)


def test_hog_vertical_edges():
    rows, cols = grid()
    block = hog(frames_of(cols / SIZE), centred_2d())
    per_cell = cells(block, 8)
    np.testing.assert_allclose(per_cell[:, 0], 1.0)
    np.testing.assert_allclose(per_cell[:, 1:], 0.0, atol=1e-12)


def test_hog_constant_image():
    assert not np.any(hog(frames_of(full(0.4)), centred_2d()).values)


def test_hog_diagonal_grating():
    rows, cols = grid()
    image = 0.5 + 0.4 * np.sin((rows + cols) * 2 * np.pi / 12)
    per_cell = cells(hog(frames_of(image), centred_2d()), 8)
    assert np.all(per_cell.argmax(axis=1) == 2)
    np.testing.assert_allclose(per_cell[:, 2], 1.0)


def test_hof_examples():
    per_cell = cells(hof(flows_of(full(1), full(0)), centred_2d()), 9)
    np.testing.assert_allclose(per_cell[:, 0], 1.0)
    per_cell = cells(hof(flows_of(full(0), full(0)), centred_2d()), 9)
    np.testing.assert_allclose(per_cell[:, 8], 1.0)
    per_cell = cells(hof(flows_of(full(0), full(2)), centred_2d()), 9)
    np.testing.assert_allclose(per_cell[:, 2], 1.0)
    votes = hof_votes(FlowField2D(full(0), full(2)))
    np.testing.assert_allclose(votes[10, 10], [0, 0, 2, 0, 0, 0, 0, 0, 0])


def test_hof_l1_normalized(rng):
    u = rng.normal(size=(SIZE, SIZE))
    v = rng.normal(size=(SIZE, SIZE))
    per_cell = cells(hof(flows_of(u, v), centred_2d()), 9)
    np.testing.assert_allclose(per_cell.sum(axis=1), 1.0)


def test_mbh_constant_and_shear():
    assert not np.any(mbh(flows_of(full(3), full(-1)), centred_2d()).values)
    rows, cols = grid()
    block = mbh(flows_of(rows, full(0)), centred_2d()).values
    u_part = block[:96].reshape(-1, 8)
    np.testing.assert_allclose(u_part[:, 2], 1.0)
    np.testing.assert_allclose(np.delete(u_part, 2, axis=1), 0.0, atol=1e-12)
    assert not np.any(block[96:])


def test_mbh_ignores_uniform_translation(rng):
    u = rng.normal(size=(SIZE, SIZE))
    v = rng.normal(size=(SIZE, SIZE))
    plain = mbh(flows_of(u, v), centred_2d()).values
    shifted = mbh(flows_of(u + 2.5, v - 1.25), centred_2d()).values
    np.testing.assert_allclose(plain, shifted, atol=1e-9)


def test_hsf_examples():
    per_cell = cells(hsf(scene_flows_of(full(1), full(0), full(0)), centred_3d()), 9)
    np.testing.assert_allclose(per_cell[:, 0], 1.0)
    per_cell = cells(hsf(scene_flows_of(full(0), full(0), full(1)), centred_3d()), 9)
    np.testing.assert_allclose(per_cell[:, 0], 1.0)
    per_cell = cells(hsf(scene_flows_of(full(0), full(0), full(-1)), centred_3d()), 9)
    np.testing.assert_allclose(per_cell[:, 1], 1.0)
    per_cell = cells(hsf(scene_flows_of(full(0), full(0), full(0)), centred_3d()), 9)
    np.testing.assert_allclose(per_cell[:, 8], 1.0)
    per_cell = cells(hsf(scene_flows_of(full(0), full(0.5), full(0)), centred_3d()), 9)
    np.testing.assert_allclose(per_cell[:, 2], 1.0)


def test_hsf_skips_invalid_pixels():
    dX = full(1)
    dX[:, :32] = np.nan
    votes = hsf_votes(SceneFlowField(dX, full(0), full(0)))
    assert not np.any(votes[:, :32])
    np.testing.assert_allclose(votes[:, 32:, 0], 1.0)


def test_mbh3d_examples():
    per_cell = cells(mbh3d(scene_flows_of(full(0.1), full(0), full(0.2)), centred_3d()), 9)
    np.testing.assert_allclose(per_cell[:, 8], 1.0)
    rows, cols = grid()
    block = mbh3d(scene_flows_of(full(0), full(0), cols * 0.01), centred_3d()).values
    dz_part = block[216:].reshape(-1, 9)
    np.testing.assert_allclose(dz_part[:, 0], 1.0)
    np.testing.assert_allclose(block[:216].reshape(-1, 9)[:, 8], 1.0)


def test_mbh3d_scale_and_translation(rng):
    dX, dY, dZ = (rng.normal(size=(SIZE, SIZE)) for _ in range(3))
    plain = mbh3d(scene_flows_of(dX, dY, dZ), centred_3d()).values
    np.testing.assert_allclose(mbh3d(scene_flows_of(4 * dX, 4 * dY, 4 * dZ), centred_3d()).values, plain, atol=1e-9)
    np.testing.assert_allclose(
        mbh3d(scene_flows_of(dX + 1, dY - 2, dZ + 0.5), centred_3d()).values, plain, atol=1e-9
    )


def test_describe_3d_dimensions():
    out = describe_3d(scene_flows_of(full(0), full(0), full(0.1)), [centred_3d()] * 2)
    assert list(out) == list(KINDS_3D)
    for kind, block in out.items():
        assert block.shape == (2, descriptor_dim(kind))


def test_volumes_at_the_border_are_clamped():
    traj = Trajectory2D(0, np.zeros((L + 1, 2)))
    per_cell = cells(hof(flows_of(full(1), full(0)), traj), 9)
    np.testing.assert_allclose(per_cell[:, 0], 1.0)


def test_empty_and_wrong_length_input():
    out = describe_2d([], [], [])
    assert all(block.shape == (0, descriptor_dim(kind)) for kind, block in out.items())
    with pytest.raises(ShapeError):
        describe_2d(frames_of(full(0)), flows_of(full(0), full(0)), [Trajectory2D(0, np.zeros((5, 2)))])


def test_volume_spec():
    assert VolumeSpec().cells == 12
    np.testing.assert_array_equal(VolumeSpec().temporal_cell(), [0] * 5 + [1] * 5 + [2] * 5)
    with pytest.raises(ParameterError):
        VolumeSpec(size=30, cells_x=4)
    assert kinds_for("3d") == list(KINDS_3D)
    with pytest.raises(ParameterError):
        kinds_for("4d")
