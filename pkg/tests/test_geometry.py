import json

import numpy as np
import pytest

from localtraj.exceptions import (
    BehindCameraError,
    InvalidDepthError,
    InvalidPointError,
    ParameterError,
)
from localtraj.geometry import (
    CameraIntrinsics,
    PixelDepth,
    Point3,
    back_project,
    back_project_grid,
    project,
    project_grid,
    read_intrinsics,
    scene_flow_from_motion_field,
    scene_flow_grid,
    write_intrinsics,
)


def test_back_project_principal_ray(intrinsics):
    q = back_project(PixelDepth(intrinsics.cx, intrinsics.cy, 2.0), intrinsics)
    assert q == pytest.approx((0.0, 0.0, 2.0))


def test_back_project_offsets(intrinsics):
    q = back_project(PixelDepth(intrinsics.cx + 100, intrinsics.cy, 2.0), intrinsics)
    assert q == pytest.approx((0.4, 0.0, 2.0))
    q = back_project(PixelDepth(intrinsics.cx, intrinsics.cy - 50, 1.0), intrinsics)
    assert q == pytest.approx((0.0, -0.1, 1.0))


@pytest.mark.parametrize("depth", [0.0, -1.0, float("nan")])
def test_back_project_rejects_bad_depth(intrinsics, depth):
    with pytest.raises(InvalidDepthError):
        back_project(PixelDepth(10.0, 10.0, depth), intrinsics)


def test_project(intrinsics):
    assert project(Point3(0.0, 0.0, 2.0), intrinsics) == pytest.approx((320.0, 240.0, 2.0))
    assert project(Point3(0.4, 0.0, 2.0), intrinsics) == pytest.approx((420.0, 240.0, 2.0))


def test_project_behind_camera(intrinsics):
    with pytest.raises(BehindCameraError):
        project(Point3(0.1, 0.2, 0.0), intrinsics)
    with pytest.raises(BehindCameraError):
        project(Point3(0.1, 0.2, -1.0), intrinsics)


def test_round_trip_random_points(intrinsics, rng):
    points = np.column_stack(
        [rng.uniform(-3, 3, 10000), rng.uniform(-3, 3, 10000), rng.uniform(0.1, 10, 10000)]
    )
    for X, Y, Z in points:
        q = back_project(project(Point3(X, Y, Z), intrinsics), intrinsics)
        np.testing.assert_allclose(q, (X, Y, Z), rtol=1e-9, atol=1e-12)


def test_scene_flow_examples(intrinsics):
    q = Point3(0.0, 0.0, 2.0)
    assert scene_flow_from_motion_field((0, 0, 0), q, intrinsics) == (0.0, 0.0, 0.0)
    assert scene_flow_from_motion_field((0, 0, 0.1), q, intrinsics) == pytest.approx((0, 0, 0.1))
    assert scene_flow_from_motion_field((10, 0, 0), q, intrinsics) == pytest.approx((0.04, 0, 0))


def test_scene_flow_off_axis(intrinsics):
    q = Point3(0.5, -0.25, 2.0)
    dX, dY, dZ = scene_flow_from_motion_field((4.0, 2.0, 0.2), q, intrinsics)
    assert dX == pytest.approx(2.0 / 500 * 4.0 + 0.5 / 2.0 * 0.2)
    assert dY == pytest.approx(2.0 / 500 * 2.0 - 0.25 / 2.0 * 0.2)
    assert dZ == pytest.approx(0.2)


def test_scene_flow_is_linear(intrinsics, rng):
    for _ in range(100):
        q = Point3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 5))
        s1 = rng.normal(size=3)
        s2 = rng.normal(size=3)
        a, b = rng.normal(size=2)
        combined = scene_flow_from_motion_field(a * s1 + b * s2, q, intrinsics)
        separate = a * np.array(scene_flow_from_motion_field(s1, q, intrinsics)) + b * np.array(
            scene_flow_from_motion_field(s2, q, intrinsics)
        )
        np.testing.assert_allclose(combined, separate, rtol=1e-9, atol=1e-12)


def test_scene_flow_invalid_point(intrinsics):
    with pytest.raises(InvalidPointError):
        scene_flow_from_motion_field((1, 1, 1), Point3(0, 0, 0), intrinsics)


def test_grid_variants_mark_invalid(intrinsics):
    x = np.array([320.0, 420.0, 10.0])
    y = np.array([240.0, 240.0, 10.0])
    X, Y, Z = back_project_grid(x, y, np.array([2.0, 2.0, 0.0]), intrinsics)
    np.testing.assert_allclose(X[:2], [0.0, 0.4])
    assert np.isnan(Z[2])
    px, py = project_grid(X, Y, Z, intrinsics)
    np.testing.assert_allclose(px[:2], x[:2])
    assert np.isnan(px[2])
    dX, dY, dZ = scene_flow_grid(np.full(3, 10.0), np.zeros(3), np.zeros(3), X, Y, Z, intrinsics)
    np.testing.assert_allclose(dX[:2], [0.04, 0.04])
    assert np.isnan(dZ[2])


def test_intrinsics_validation():
    with pytest.raises(ParameterError):
        CameraIntrinsics(0.0, 500.0, 1.0, 1.0)
    with pytest.raises(ParameterError):
        CameraIntrinsics(500.0, 500.0, float("inf"), 1.0)
    k = CameraIntrinsics.default_for(640, 480)
    assert (k.fx, k.fy, k.cx, k.cy) == (525.0, 525.0, 319.5, 239.5)


def test_intrinsics_file(tmp_path, intrinsics):
    path = tmp_path / "intrinsics.json"
    write_intrinsics(str(path), intrinsics)
    assert json.loads(path.read_text()) == {"fx": 500.0, "fy": 500.0, "cx": 320.0, "cy": 240.0}
    assert read_intrinsics(str(path)) == intrinsics
    path.write_text("{}")
    with pytest.raises(ParameterError):
        read_intrinsics(str(path))
