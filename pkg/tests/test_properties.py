"""Property-based checks of the documented invariants."""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from geomcoder.errors import NoFeasibleCurve
from geomcoder.fitting import RansacConfig, fit_cuboid, fit_cylinder, fit_envelope, fit_plane, fit_sphere, robust_fit
from geomcoder.geometry import (
    Cuboid,
    Cylinder,
    HingeAxis,
    Pose,
    RigidTransform,
    Sphere,
    distance_to_primitive,
    primitive_clearance,
    primitive_from_dict,
    primitive_to_dict,
    rotate_about_axis,
    transform_point,
    transform_primitive,
)
from geomcoder.jsonio import canonical, dumps, loads
from geomcoder.clouds import LabeledPointCloud
from geomcoder.pipeline import run_plan
from geomcoder.planner import SkillCache, SkillKey, SkillRecord
from geomcoder.scenarios import drawer_apples
from geomcoder.scene import DepthFrame, align_similarity, build_birdseye, crop_by_label, project_points, unproject_depth, valid_pixel_coords
from geomcoder.sim import Door, Drawer, update_door, update_drawer
from geomcoder.trajectory import (
    Arc,
    Composite,
    ConstraintSet,
    CubicBezier,
    Fixed,
    LineSegment,
    TrajectorySpec,
    arc_length,
    check_constraints,
    eval_curve,
    points_at_fractions,
    required_sweep,
    sample_waypoints,
    synth_bezier_avoid,
    synth_door_arc,
)
from oracles import angle_between_lines, cylinder_points, quat_of, random_rotation, sphere_points

PROPS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
seeds = st.integers(0, 2**32 - 1)
coord = st.floats(-5, 5, allow_nan=False)
point = st.tuples(coord, coord, coord)
angle = st.floats(-2 * math.pi, 2 * math.pi, allow_nan=False)


def _rigid(seed):
    rng = np.random.default_rng(seed)
    return RigidTransform(quat_of(random_rotation(rng)), rng.uniform(-2, 2, 3)), rng


def _axis(rng):
    d = rng.normal(size=3)
    return d / np.linalg.norm(d)


def _line_distance(p, a, d):
    v = np.asarray(p) - np.asarray(a)
    return float(np.linalg.norm(v - (v @ d) * d))


# geometry


@PROPS
@given(point, point, angle, seeds)
def test_rotation_keeps_axis_distance_and_inverts(p, a, theta, seed):
    d = _axis(np.random.default_rng(seed))
    q = rotate_about_axis(p, a, d, theta)
    assert abs(_line_distance(q, a, d) - _line_distance(p, a, d)) <= 1e-12 * max(1.0, np.linalg.norm(np.subtract(p, a)))
    assert np.allclose(rotate_about_axis(q, a, d, -theta), p, atol=1e-12 * 10)


@PROPS
@given(seeds)
def test_transform_then_inverse_restores_primitive(seed):
    T, rng = _rigid(seed)
    prims = [
        Sphere(tuple(rng.normal(size=3)), 0.3),
        Cylinder(tuple(rng.normal(size=3)), tuple(_axis(rng)), 0.05, 0.2),
        Cuboid(tuple(rng.normal(size=3)), (0.1, 0.2, 0.3), quat_of(random_rotation(rng))),
        HingeAxis(tuple(rng.normal(size=3)), tuple(_axis(rng)), (0.0, 1.0)),
    ]
    for prim in prims:
        back = transform_primitive(transform_primitive(prim, T), T.inverse())
        pts = rng.normal(size=(10, 3))
        assert np.allclose(back.signed_distance(pts), prim.signed_distance(pts), atol=1e-9)
        assert primitive_to_dict(primitive_from_dict(primitive_to_dict(back))) == primitive_to_dict(back)


@PROPS
@given(seeds)
def test_distance_is_rigid_invariant(seed):
    T, rng = _rigid(seed)
    prim = Cuboid(tuple(rng.normal(size=3)), tuple(rng.uniform(0.05, 0.5, 3)), quat_of(random_rotation(rng)))
    for p in rng.normal(size=(20, 3)) * 2:
        moved = distance_to_primitive(transform_point(tuple(p), T), transform_primitive(prim, T))
        assert moved == pytest.approx(distance_to_primitive(tuple(p), prim), abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_clearance_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = Cuboid(tuple(rng.uniform(-1, 1, 3)), tuple(rng.uniform(0.05, 0.3, 3)), quat_of(random_rotation(rng)))
    b = Cylinder(tuple(rng.uniform(-1, 1, 3)), tuple(_axis(rng)), 0.1, 0.3)
    res = 0.01
    assert abs(primitive_clearance(a, b, res) - primitive_clearance(b, a, res)) <= 2 * res


# fitting


@PROPS
@given(seeds)
def test_sphere_fit_equivariant_and_exact(seed):
    T, rng = _rigid(seed)
    pts = sphere_points(rng.normal(size=3), rng.uniform(0.02, 0.5), 200, rng=rng)
    a, b = fit_sphere(pts), fit_sphere(T.apply(pts))
    assert a.rmse < 1e-9
    assert np.allclose(b.primitive.center, T.apply(a.primitive.center), atol=1e-6)
    assert b.primitive.radius == pytest.approx(a.primitive.radius, abs=1e-6)


@PROPS
@given(seeds)
def test_plane_fit_equivariant_and_exact(seed):
    T, rng = _rigid(seed)
    u, v = np.linalg.qr(rng.normal(size=(3, 2)))[0].T
    pts = rng.normal(size=3) + np.outer(rng.uniform(-1, 1, 60), u) + np.outer(rng.uniform(-1, 1, 60), v)
    a, b = fit_plane(pts), fit_plane(T.apply(pts))
    assert a.rmse < 1e-9 and b.rmse < 1e-9
    assert angle_between_lines(b.primitive.normal, T.matrix @ np.asarray(a.primitive.normal)) < 1e-6


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_cylinder_fit_equivariant_and_exact(seed):
    T, rng = _rigid(seed)
    r, h = rng.uniform(0.02, 0.1), rng.uniform(0.1, 0.3)
    pts = cylinder_points(rng.normal(size=3), _axis(rng), r, h, 300, rng=rng)
    a, b = fit_cylinder(pts), fit_cylinder(T.apply(pts))
    assert a.rmse < 1e-9 and a.primitive.radius == pytest.approx(r, abs=1e-9)
    assert b.primitive.radius == pytest.approx(a.primitive.radius, abs=1e-6)
    assert b.primitive.height == pytest.approx(a.primitive.height, abs=1e-6)
    assert angle_between_lines(b.primitive.axis_dir, T.matrix @ np.asarray(a.primitive.axis_dir)) < 1e-4
    assert np.allclose(b.primitive.centroid(), T.apply(a.primitive.centroid()), atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_cuboid_fit_equivariant_and_exact(seed):
    T, rng = _rigid(seed)
    box = Cuboid(tuple(rng.normal(size=3)), tuple(rng.uniform(0.05, 0.4, 3)), quat_of(random_rotation(rng)))
    pts = box.sample_surface(0.02)
    a, b = fit_cuboid(pts), fit_cuboid(T.apply(pts))
    assert a.rmse < 1e-9
    assert np.allclose(b.primitive.centroid(), T.apply(a.primitive.centroid()), atol=1e-6)
    assert sorted(b.primitive.half_extents) == pytest.approx(sorted(a.primitive.half_extents), abs=1e-6)


@PROPS
@given(seeds)
def test_envelope_contains_inputs(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(80, 3)) * rng.uniform(0.05, 1.0, 3)
    env = fit_envelope(pts).primitive
    assert (env.signed_distance(pts) <= 1e-9).all()


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_robust_fit_deterministic(seed):
    rng = np.random.default_rng(seed)
    pts = np.vstack([sphere_points((0, 0, 0), 0.05, 150, 0.001, rng), rng.uniform(-0.2, 0.2, (50, 3))])
    cfg = RansacConfig(seed=seed % 1000)
    (ra, ma), (rb, mb) = robust_fit(pts, "sphere", cfg), robust_fit(pts, "sphere", cfg)
    assert ra.to_dict() == rb.to_dict() and np.array_equal(ma, mb)


def test_sphere_error_grows_with_noise():
    means = []
    for sigma in (0.0, 0.001, 0.002, 0.004):
        errs = []
        for seed in range(100):
            pts = sphere_points((0, 0, 0), 0.04, 500, sigma, np.random.default_rng(seed))
            errs.append(abs(fit_sphere(pts).primitive.radius - 0.04))
        means.append(np.mean(errs))
    assert means == sorted(means)


# scene


@PROPS
@given(seeds)
def test_reprojection_round_trip(seed):
    T, rng = _rigid(seed)
    h, w = rng.integers(4, 20, 2)
    depth = rng.uniform(0.3, 4.0, (h, w)) * (rng.uniform(size=(h, w)) > 0.3)
    assume((depth > 0).any())
    frame = DepthFrame(depth, rng.uniform(20, 600), rng.uniform(20, 600), rng.uniform(0, w - 1), rng.uniform(0, h - 1), T)
    uv = project_points(frame, unproject_depth(frame))
    assert np.abs(uv - valid_pixel_coords(frame)).max() <= 1e-6


@PROPS
@given(seeds, st.floats(0.1, 10))
def test_similarity_recovered_exactly(seed, scale):
    T, rng = _rigid(seed)
    src = rng.uniform(-1, 1, (30, 3))
    s, est = align_similarity(src, scale * (src @ T.matrix.T) + T.translation)
    assert abs(s - scale) <= 1e-9 * scale
    assert np.allclose(est.matrix, T.matrix, atol=1e-9) and np.allclose(est.translation, T.translation, atol=1e-9)


@PROPS
@given(seeds)
def test_birdseye_counts_conserved(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 400))
    pts = rng.uniform(-2, 2, (n, 3)) * (1, 1, 1.2) + (0, 0, 0.9)
    labels = rng.integers(0, 5, n)
    in_band = (pts[:, 2] >= 0.02) & (pts[:, 2] <= 1.8)
    assume(in_band.any())
    bev = build_birdseye(LabeledPointCloud(pts, labels), float(rng.uniform(0.05, 0.5)))
    assert bev.counts.sum() == in_band.sum()
    for lab in np.unique(labels):
        assert len(crop_by_label(LabeledPointCloud(pts, labels), int(lab))) == (labels == lab).sum()


# trajectory


def _curve(rng, kind):
    p = [tuple(rng.uniform(-1, 1, 3)) for _ in range(4)]
    if kind == "line":
        return LineSegment(p[0], p[1])
    if kind == "arc":
        return Arc(p[0], tuple(_axis(rng)), p[1], float(rng.uniform(0.1, 2 * math.pi)) * rng.choice([-1, 1]))
    if kind == "bezier":
        return CubicBezier(*p)
    return Composite((LineSegment(p[0], p[1]), CubicBezier(p[1], p[2], p[3], p[0])))


@PROPS
@given(seeds, st.floats(0, 1))
def test_arc_radius_constant(seed, t):
    rng = np.random.default_rng(seed)
    arc = _curve(rng, "arc")
    d = np.asarray(arc.axis_dir)
    assert abs(_line_distance(eval_curve(arc, t), arc.axis_point, d) - arc.radius) <= 1e-12 * max(1.0, arc.radius)


@PROPS
@given(seeds, st.sampled_from(["line", "arc", "bezier", "composite"]))
def test_endpoints_and_length_bounds(seed, kind):
    c = _curve(np.random.default_rng(seed), kind)
    assert eval_curve(c, 0.0) == pytest.approx(c.start_point, abs=1e-12)
    assert eval_curve(c, 1.0) == pytest.approx(c.end_point, abs=1e-12)
    if kind == "bezier":
        assert eval_curve(c, 0.0) == c.p0 and eval_curve(c, 1.0) == c.p3
    chord = float(np.linalg.norm(np.subtract(c.end_point, c.start_point)))
    assert arc_length(c) >= chord - 1e-9
    if kind == "composite":
        assert arc_length(c) == pytest.approx(sum(arc_length(s) for s in c.segments), abs=1e-5)


@PROPS
@given(seeds, st.sampled_from(["line", "arc"]), st.integers(2, 40))
def test_line_and_arc_spacing_uniform(seed, kind, n):
    c = _curve(np.random.default_rng(seed), kind)
    pts = np.array([w.pose.position for w in sample_waypoints(TrajectorySpec(c, Fixed(), n))])
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    assert np.abs(gaps - gaps.mean()).max() <= 1e-9 * max(1.0, gaps.mean())


@PROPS
@given(st.floats(0.3, 2.0), st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8))
def test_required_sweep_monotone(panel, passages):
    passages = sorted(p for p in passages if p <= panel)
    sweeps = [required_sweep(panel, p) for p in passages]
    assert sweeps == sorted(sweeps) and all(0 < s <= math.pi / 2 for s in sweeps)


def _avoid_scene(rng):
    start = np.array([0.0, 0.0, 0.8]) + rng.uniform(-0.1, 0.1, 3)
    end = start + np.r_[rng.uniform(0.4, 0.7), rng.uniform(-0.2, 0.2), rng.uniform(-0.1, 0.1)]
    mid = 0.5 * (start + end) + rng.uniform(-0.05, 0.05, 3)
    obstacle = [
        Sphere(tuple(mid), float(rng.uniform(0.03, 0.12))),
        Cuboid(tuple(mid), tuple(rng.uniform(0.02, 0.1, 3)), quat_of(random_rotation(rng))),
        Cylinder(tuple(mid - (0, 0, 0.1)), tuple(_axis(rng)), float(rng.uniform(0.02, 0.08)), 0.2),
    ][int(rng.integers(0, 3))]
    return start, end, ConstraintSet(float(rng.uniform(0.01, 0.05)), (obstacle,), base_pose=Pose((0.3, 0.0, 0.5)))


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_bezier_avoid_passes_its_own_check(seed):
    rng = np.random.default_rng(seed)
    start, end, cs = _avoid_scene(rng)
    assume(all(float(cs.obstacles[0].signed_distance(np.array([p]))[0]) >= cs.clearance_margin for p in (start, end)))
    try:
        bez = synth_bezier_avoid(start, end, cs)
    except NoFeasibleCurve:
        return
    assert check_constraints(TrajectorySpec(bez, Fixed()), cs).ok


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_synthesis_rigid_invariance(seed):
    T, rng = _rigid(seed)
    f = np.linspace(0, 1, 33)
    hinge = HingeAxis(tuple(rng.normal(size=3)), tuple(_axis(rng)), (0.0, 2.0))
    grasp = tuple(np.asarray(hinge.point) + rng.normal(size=3))
    arc = synth_door_arc(hinge, grasp, 1.3)
    moved = synth_door_arc(hinge.transformed(T), T.apply(grasp), 1.3)
    assert np.allclose(points_at_fractions(moved, f), T.apply(points_at_fractions(arc, f)), atol=1e-9)
    start, end, cs = _avoid_scene(rng)
    try:
        bez = synth_bezier_avoid(start, end, cs)
    except Exception as exc:  # the transformed problem must fail the same way
        with pytest.raises(type(exc)):
            synth_bezier_avoid(T.apply(start), T.apply(end), cs.transformed(T))
        return
    moved = synth_bezier_avoid(T.apply(start), T.apply(end), cs.transformed(T))
    assert np.allclose(moved.control, T.apply(bez.control), atol=1e-9)


# planner and sim


@PROPS
@given(st.lists(st.tuples(st.sampled_from(["get", "put"]), st.sampled_from(["a", "b", "c"]), st.integers(0, 5)), max_size=60))
def test_cache_coherence(ops):
    cache, latest, gets = SkillCache(), {}, 0
    for op, label, value in ops:
        key = SkillKey(label, "pick")
        if op == "put":
            cache.put(SkillRecord(key, f"t{value}", {"v": value}))
            latest[key] = (f"t{value}", {"v": value})
        else:
            gets += 1
            rec = cache.get(key)
            if key in latest:
                assert (rec.template_id, rec.default_params) == latest[key]
            else:
                assert rec is None
    assert cache.hits + cache.misses == gets
    seqs = sorted(r.created_seq for r in cache.records.values())
    assert seqs == list(range(len(seqs)))


@PROPS
@given(point)
def test_articulation_state_stays_in_range(ee):
    hinge = HingeAxis((0, 0, 0), (0, 0, 1), (0.0, 1.2))
    door = Door("d", hinge, Cuboid((0.4, 0, 1), (0.4, 0.02, 1)), Cylinder((0.7, 0, 0.94), (0, 0, 1), 0.01, 0.12))
    new, _ = update_door(door, ee)
    assert 0.0 <= new.angle <= 1.2
    drawer = Drawer("w", Cuboid((0, 0, 0.5), (0.1, 0.2, 0.1)), Cylinder((-0.12, -0.05, 0.5), (0, 1, 0), 0.01, 0.1), (-1, 0, 0), 0.25)
    new, _ = update_drawer(drawer, ee)
    assert 0.0 <= new.extension <= 0.25


@PROPS
@given(st.recursive(
    st.none() | st.booleans() | st.integers(-10**6, 10**6) | st.floats(allow_nan=False, allow_infinity=False) | st.text(max_size=8),
    lambda children: st.lists(children, max_size=4) | st.dictionaries(st.text(max_size=5), children, max_size=4),
    max_leaves=20,
))
def test_canonical_json_stable(doc):
    text = dumps(doc)
    assert dumps(loads(text)) == text
    assert canonical(loads(text)) == loads(text)


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(0.0, 0.05), st.floats(0.0, 0.02))
def test_long_term_success_iff_all_subtasks_succeed(seed, jitter, noise):
    # heavy fitting noise makes some runs fail, so both directions are exercised
    sc = drawer_apples(seed % 10_000, jitter)
    report, _ = run_plan(sc.world, sc.robot, sc.plan, sc.profile, seed=seed % 10_000, noise=noise)
    complete = len(report.results) == len(sc.plan.subtasks)
    assert report.success == (complete and all(r.success for r in report.results))
