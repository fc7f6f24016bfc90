import math

import numpy as np
import pytest

from geomcoder.geometry import (
    ConvexEnvelope,
    Cuboid,
    Cylinder,
    HingeAxis,
    ParamObject,
    Plane,
    RigidTransform,
    RobotProfile,
    Sphere,
    distance_to_primitive,
    primitive_clearance,
    primitive_from_dict,
    primitive_to_dict,
    quat_from_axis_angle,
    rotate_about_axis,
    transform_primitive,
)
from geomcoder.errors import DegenerateInput, SchemaError
from oracles import box_sdf, quat_of, random_rotation


def test_quarter_turn_about_z():
    assert np.allclose(rotate_about_axis((1, 0, 0), (0, 0, 0), (0, 0, 1), math.pi / 2), (0, 1, 0), atol=1e-15)


def test_zero_angle_is_identity():
    assert rotate_about_axis((1, 0, 0), (0, 0, 0), (0, 0, 1), 0.0) == (1.0, 0.0, 0.0)


def test_eighth_turn_about_z():
    r = math.sqrt(0.5)
    assert np.allclose(rotate_about_axis((1, 0, 0), (0, 0, 0), (0, 0, 1), math.pi / 4), (r, r, 0), atol=1e-12)


def test_rotation_about_offset_axis():
    p = rotate_about_axis((2, 1, 5), (1, 1, 0), (0, 0, 1), math.pi)
    assert np.allclose(p, (0, 1, 5), atol=1e-12)


def test_distance_outside_unit_sphere():
    assert distance_to_primitive((0, 0, 2), Sphere((0, 0, 0), 1.0)) == pytest.approx(1.0)


def test_distance_cube_center_is_negative_half():
    assert distance_to_primitive((0, 0, 0), Cuboid((0, 0, 0), (0.5, 0.5, 0.5))) == pytest.approx(-0.5)


def test_distance_cylinder_lateral():
    cyl = Cylinder((0, 0, 0), (0, 0, 1), 0.03, 0.12)
    assert distance_to_primitive((0.05, 0, 0.06), cyl) == pytest.approx(0.02, abs=1e-12)


def test_cylinder_distance_beyond_cap_corner():
    cyl = Cylinder((0, 0, 0), (0, 0, 1), 0.03, 0.12)
    assert distance_to_primitive((0.06, 0, 0.16), cyl) == pytest.approx(0.05, abs=1e-12)


def test_plane_half_space_sign():
    plane = Plane((0, 0, 1), 0.0)
    assert distance_to_primitive((0, 0, 0.3), plane) == pytest.approx(0.3)
    assert distance_to_primitive((0, 0, -0.2), plane) == pytest.approx(-0.2)


def test_cuboid_distance_matches_exact_box_oracle():
    rng = np.random.default_rng(3)
    R = random_rotation(rng)
    box = Cuboid((0.2, -0.1, 0.4), (0.3, 0.2, 0.1), quat_of(R))
    pts = rng.uniform(-1, 1, (400, 3))
    assert np.allclose(box.signed_distance(pts), box_sdf(pts, box.center, box.half_extents, R), atol=1e-12)


def test_envelope_distance_inside_and_outside():
    env = ConvexEnvelope([(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)])
    assert distance_to_primitive((0.5, 0.5, 0.5), env) == pytest.approx(-0.5)
    assert distance_to_primitive((2, 0.5, 0.5), env) == pytest.approx(1.0)
    assert distance_to_primitive((2, 2, 0.5), env) == pytest.approx(math.sqrt(2))


def test_envelope_needs_four_vertices():
    with pytest.raises(DegenerateInput):
        ConvexEnvelope([(0, 0, 0), (1, 0, 0), (0, 1, 0)])


def test_translate_sphere():
    out = transform_primitive(Sphere((0, 0, 0), 0.5), RigidTransform.from_translation((1, 2, 3)))
    assert out == Sphere((1, 2, 3), 0.5)


def test_identity_keeps_cuboid():
    box = Cuboid((1, 2, 3), (0.1, 0.2, 0.3), quat_from_axis_angle((0, 0, 1), 0.3))
    out = transform_primitive(box, RigidTransform.identity())
    assert np.allclose(out.center, box.center) and np.allclose(out.orientation, box.orientation)
    assert out.half_extents == box.half_extents


def test_cylinder_axis_follows_rotation():
    cyl = Cylinder((0, 0, 0), (0, 0, 1), 0.03, 0.12)
    out = transform_primitive(cyl, RigidTransform.from_axis_angle((1, 0, 0), math.pi / 2))
    assert np.allclose(out.axis_dir, (0, -1, 0), atol=1e-12)
    assert (out.radius, out.height) == (0.03, 0.12)


def test_sphere_pair_clearance():
    assert primitive_clearance(Sphere((0, 0, 0), 1), Sphere((3, 0, 0), 1)) == pytest.approx(1.0)


def test_identical_spheres_full_overlap():
    s = Sphere((0.3, 0.1, 0), 0.25)
    assert primitive_clearance(s, s) == pytest.approx(-0.5)


def test_sphere_above_plane():
    assert primitive_clearance(Sphere((0, 0, 0.1), 0.04), Plane((0, 0, 1), 0.0)) == pytest.approx(0.06)


def test_sampled_pair_within_resolution():
    a = Cuboid((0, 0, 0), (0.5, 0.5, 0.5))
    b = Cuboid((1.3, 0, 0), (0.5, 0.5, 0.5))
    res = 0.005
    assert abs(primitive_clearance(a, b, res) - 0.3) <= res
    assert abs(primitive_clearance(b, a, res) - 0.3) <= res


def test_overlapping_boxes_negative():
    a = Cuboid((0, 0, 0), (0.5, 0.5, 0.5))
    b = Cuboid((0.8, 0, 0), (0.5, 0.5, 0.5))
    assert primitive_clearance(a, b) < 0


@pytest.mark.parametrize(
    "prim",
    [
        Sphere((1, 2, 3), 0.5),
        Cylinder((0, 0, 1), (0, 1, 0), 0.02, 0.3),
        Cuboid((0, 0, 0), (0.1, 0.2, 0.3), quat_from_axis_angle((1, 1, 0), 0.4)),
        Plane((0, 0, 1), 0.72),
        HingeAxis((3, 1.5, 0), (0, 0, -1), (0.0, 1.5)),
        ConvexEnvelope([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]),
    ],
)
def test_json_tagged_union_round_trip(prim):
    d = primitive_to_dict(prim)
    assert d["kind"] == prim.kind
    assert primitive_to_dict(primitive_from_dict(d)) == d


def test_unknown_primitive_kind():
    with pytest.raises(SchemaError):
        primitive_from_dict({"kind": "torus"})


def test_param_object_part_rules():
    s = Sphere((0, 0, 0), 0.04)
    with pytest.raises(ValueError):
        ParamObject("a", "apple", (("body", s), ("body", s)))
    with pytest.raises(ValueError):
        ParamObject("a", "apple", (("body", s),), functional_part="handle")
    obj = ParamObject("a", "apple", (("body", s),), "body")
    assert ParamObject.from_dict(obj.to_dict()) == obj


def test_robot_profile_positive_fields():
    with pytest.raises(ValueError):
        RobotProfile(passage_width=0.0)
    with pytest.raises(SchemaError):
        RobotProfile.from_dict({"wheels": 4})
    assert RobotProfile.from_dict(RobotProfile().to_dict()) == RobotProfile()


def test_transform_composition_associative():
    rng = np.random.default_rng(1)
    Ts = [RigidTransform(quat_of(random_rotation(rng)), rng.normal(size=3)) for _ in range(3)]
    p = rng.normal(size=3)
    left = ((Ts[0] @ Ts[1]) @ Ts[2]).apply(p)
    right = (Ts[0] @ (Ts[1] @ Ts[2])).apply(p)
    assert np.allclose(left, right, atol=1e-12)
