import math

import numpy as np
import pytest

from geomcoder.clouds import LabeledPointCloud, PlyError, load_labeled_cloud, read_ply, write_ply
from geomcoder.errors import DegenerateInput, DimensionMismatch, EmptyBand, EmptyFrame, LabelNotFound, ParseError
from geomcoder.geometry import RigidTransform
from geomcoder.scene import (
    BirdsEyeMap,
    DepthFrame,
    SemanticMask,
    align_similarity,
    build_birdseye,
    crop_by_label,
    project_mask,
    project_points,
    read_depth,
    read_mask,
    read_pgm,
    unproject_depth,
    valid_pixel_coords,
    write_depth,
    write_pgm,
)
from oracles import quat_of, random_rotation


def _frame(depth, pose=RigidTransform()):
    return DepthFrame(np.asarray(depth, float), 100.0, 80.0, 2.0, 1.0, pose)


def test_principal_ray():
    d = np.zeros((3, 5))
    d[1, 2] = 1.0
    assert np.allclose(unproject_depth(_frame(d)).points, [(0, 0, 1)])


def test_pinhole_offset_pixel():
    d = np.zeros((3, 5))
    d[1, 3] = 2.0  # one pixel right of the principal point
    fx = 1.0
    frame = DepthFrame(d, fx, 1.0, 2.0, 1.0)
    assert np.allclose(unproject_depth(frame).points, [((3 - 2.0) * 2.0 / fx, 0.0, 2.0)])


def test_all_zero_depth():
    with pytest.raises(EmptyFrame):
        unproject_depth(_frame(np.zeros((3, 5))))


def test_camera_pose_applied():
    d = np.zeros((3, 5))
    d[1, 2] = 1.5
    pose = RigidTransform((0.0, 1.0, 0.0, 0.0), (1.0, 1.0, 2.0))
    assert np.allclose(unproject_depth(_frame(d, pose)).points, [(1.0, 1.0, 0.5)])


def test_reprojection_round_trip():
    rng = np.random.default_rng(0)
    d = rng.uniform(0.5, 3.0, (12, 16)) * (rng.uniform(size=(12, 16)) > 0.2)
    pose = RigidTransform(quat_of(random_rotation(rng)), (0.3, -0.2, 1.1))
    frame = DepthFrame(d, 50.0, 55.0, 7.5, 6.0, pose)
    uv = project_points(frame, unproject_depth(frame))
    assert np.abs(uv - valid_pixel_coords(frame)).max() <= 1e-6


def test_frame_validation():
    with pytest.raises(ValueError):
        DepthFrame(np.ones((3, 5)), 0.0, 1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        DepthFrame(np.ones((3, 5)), 1.0, 1.0, 7.0, 1.0)
    with pytest.raises(ValueError):
        DepthFrame(-np.ones((3, 5)), 1.0, 1.0, 2.0, 1.0)


def test_uniform_mask_labels():
    cloud = project_mask(SemanticMask(np.full((3, 5), 7)), _frame(np.ones((3, 5))))
    assert (cloud.labels == 7).all() and len(cloud) == 15


def test_background_mask():
    cloud = project_mask(SemanticMask(np.zeros((3, 5), int)), _frame(np.ones((3, 5))))
    assert (cloud.labels == 0).all()


def test_half_split_counts_match_valid_pixels():
    rng = np.random.default_rng(1)
    depth = rng.uniform(1, 2, (6, 8)) * (rng.uniform(size=(6, 8)) > 0.3)
    labels = np.zeros((6, 8), int)
    labels[:, 4:] = 3
    cloud = project_mask(SemanticMask(labels), DepthFrame(depth, 10.0, 10.0, 4.0, 3.0))
    valid = depth > 0
    assert (cloud.labels == 3).sum() == (valid & (labels == 3)).sum()
    assert (cloud.labels == 0).sum() == (valid & (labels == 0)).sum()


def test_mask_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        project_mask(SemanticMask(np.zeros((2, 5), int)), _frame(np.ones((3, 5))))


def test_align_identity():
    pts = np.random.default_rng(2).normal(size=(20, 3))
    s, T = align_similarity(pts, pts)
    assert s == pytest.approx(1.0) and np.allclose(T.matrix, np.eye(3)) and np.allclose(T.translation, 0, atol=1e-12)


def test_align_pure_scale():
    pts = np.random.default_rng(3).normal(size=(20, 3))
    s, T = align_similarity(pts, 2 * pts)
    assert s == pytest.approx(2.0) and np.allclose(T.matrix, np.eye(3)) and np.allclose(T.translation, 0, atol=1e-12)


def test_align_noisy_similarity():
    rng = np.random.default_rng(4)
    R = random_rotation(rng)
    src = rng.uniform(-0.5, 0.5, (100, 3))
    dst = 1.7 * src @ R.T + (0.2, -0.4, 1.0) + rng.normal(0, 0.001, (100, 3))
    s, T = align_similarity(src, dst)
    assert abs(s / 1.7 - 1) <= 0.005
    cosang = (np.trace(T.matrix.T @ R) - 1) / 2
    assert math.degrees(math.acos(min(1.0, cosang))) <= 0.5


def test_align_collinear_rejected():
    src = np.outer(np.arange(5.0), (1, 1, 0))
    with pytest.raises(DegenerateInput):
        align_similarity(src, src)


def test_align_length_mismatch():
    with pytest.raises(DimensionMismatch):
        align_similarity(np.eye(3), np.eye(4)[:, :3])


def test_one_point_map():
    bev = build_birdseye(LabeledPointCloud([(1.0, 2.0, 0.5)], [4]), 0.1)
    assert bev.cells.shape == (1, 1) and bev.cells[0, 0] == 4


def test_majority_label():
    cloud = LabeledPointCloud([(0.01, 0.01, 0.5), (0.02, 0.02, 0.5), (0.03, 0.01, 0.5)], [3, 3, 5])
    assert build_birdseye(cloud, 0.1).cells[0, 0] == 3


def test_majority_tie_goes_to_smaller_label():
    cloud = LabeledPointCloud([(0.01, 0.01, 0.5), (0.02, 0.02, 0.5)], [9, 2])
    assert build_birdseye(cloud, 0.1).cells[0, 0] == 2


def test_points_outside_band():
    with pytest.raises(EmptyBand):
        build_birdseye(LabeledPointCloud([(0, 0, 3.0)], [1]), 0.1)


def test_bad_cell_size():
    with pytest.raises(ValueError):
        build_birdseye(LabeledPointCloud([(0, 0, 0.5)], [1]), 0.0)


def test_cell_lookup_and_json():
    bev = build_birdseye(LabeledPointCloud([(0.0, 0.0, 0.5), (0.35, 0.12, 0.5)], [1, 2]), 0.1)
    assert bev.cell_of(0.35, 0.12) == (1, 3) and bev.cells[1, 3] == 2
    again = BirdsEyeMap.from_dict(bev.to_dict())
    assert np.array_equal(again.cells, bev.cells) and again.origin == bev.origin
    assert "<svg" in bev.to_svg()


def test_crop_order_preserved():
    cloud = LabeledPointCloud([(0, 0, 0), (1, 0, 0), (2, 0, 0)], [1, 2, 1])
    assert np.array_equal(crop_by_label(cloud, 1).points, [(0, 0, 0), (2, 0, 0)])


def test_crop_absent_label():
    with pytest.raises(LabelNotFound):
        crop_by_label(LabeledPointCloud([(0, 0, 0)], [1]), 9)


def test_crop_background_count():
    labels = np.r_[np.zeros(10, int), np.ones(10, int)]
    cloud = LabeledPointCloud(np.random.default_rng(0).normal(size=(20, 3)), labels)
    assert len(crop_by_label(cloud, 0)) == 10


# file formats


def test_depth_raster_round_trip(tmp_path):
    frame = DepthFrame(np.random.default_rng(0).uniform(0, 2, (4, 6)).astype(np.float32), 5.0, 5.0, 3.0, 2.0)
    write_depth(frame, tmp_path / "d.f32")
    (tmp_path / "d.json").write_text(__import__("json").dumps(frame.header()))
    again = read_depth(tmp_path / "d.f32", tmp_path / "d.json")
    assert np.array_equal(again.depth, frame.depth)


def test_truncated_raster(tmp_path):
    frame = DepthFrame(np.ones((4, 6)), 5.0, 5.0, 3.0, 2.0)
    (tmp_path / "d.f32").write_bytes(b"\0" * 10)
    (tmp_path / "d.json").write_text(__import__("json").dumps(frame.header()))
    with pytest.raises(DimensionMismatch):
        read_depth(tmp_path / "d.f32", tmp_path / "d.json")


def test_pgm_16bit_round_trip(tmp_path):
    labels = np.array([[0, 1, 300], [65535, 2, 0]])
    write_pgm(tmp_path / "m.pgm", labels)
    assert np.array_equal(read_pgm(tmp_path / "m.pgm"), labels)
    assert read_mask(tmp_path / "m.pgm").width == 3


def test_ascii_pgm(tmp_path):
    (tmp_path / "m.pgm").write_text("P2\n# comment\n3 1\n255\n0 4 9\n")
    assert read_pgm(tmp_path / "m.pgm").tolist() == [[0, 4, 9]]


def test_bad_pgm_magic(tmp_path):
    (tmp_path / "m.pgm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(ParseError):
        read_pgm(tmp_path / "m.pgm")


def test_ply_round_trip_with_labels(tmp_path):
    pts = np.random.default_rng(0).normal(size=(5, 3))
    write_ply(tmp_path / "c.ply", pts, labels=np.arange(5))
    back, colors, labels = read_ply(tmp_path / "c.ply")
    assert np.allclose(back, pts, atol=1e-8) and colors is None and labels.tolist() == [0, 1, 2, 3, 4]


def test_label_sidecar(tmp_path):
    write_ply(tmp_path / "c.ply", np.zeros((3, 3)))
    (tmp_path / "l.json").write_text('{"1": 4}')
    assert load_labeled_cloud(tmp_path / "c.ply", tmp_path / "l.json").labels.tolist() == [0, 4, 0]


@pytest.mark.parametrize(
    "text",
    [
        "not a ply\n",
        "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 nan 0\n",
    ],
)
def test_malformed_ply(tmp_path, text):
    (tmp_path / "c.ply").write_text(text)
    with pytest.raises(PlyError):
        read_ply(tmp_path / "c.ply")
