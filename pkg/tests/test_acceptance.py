"""Acceptance criteria 1-8, each reported as one PASS/FAIL line."""

import json
import math
import time

import numpy as np
from scipy.spatial import cKDTree

from geomcoder.cli import main
from geomcoder.clouds import LabeledPointCloud
from geomcoder.errors import InsufficientConsensus, NoFeasibleCurve
from geomcoder.fitting import RansacConfig, fit_cuboid, fit_cylinder, fit_plane, fit_sphere, robust_fit
from geomcoder.geometry import Cuboid, Cylinder, HingeAxis, ParamObject, Pose, RigidTransform, RobotProfile, Sphere
from geomcoder.pipeline import run_plan
from geomcoder.planner import SkillCache, Subtask, plan_from_dict, synthesize_subtask, validate_plan
from geomcoder.scenarios import drawer_apples, two_room_navigation
from geomcoder.scene import BirdsEyeMap, DepthFrame, align_similarity, build_birdseye, project_points, unproject_depth, valid_pixel_coords
from geomcoder.sim import Door, RobotState, SceneWorld, execute_plan, navigate, perceive
from geomcoder.trajectory import (
    Arc,
    ConstraintSet,
    CubicBezier,
    Fixed,
    LineSegment,
    RadialFacing,
    TrajectorySpec,
    eval_curve,
    points_at_fractions,
    required_sweep,
    sample_waypoints,
    synth_bezier_avoid,
    synth_door_arc,
)
from oracles import (
    angle_between_lines,
    bezier_eval,
    box_sdf,
    capped_cylinder_sdf,
    cylinder_points,
    grid_shortest_path_length,
    quat_of,
    random_rotation,
    point_segment_distance,
    sphere_points,
)

VERDICTS: list[str] = []
FLOAT_SLACK = 1e-12
SCENARIOS = ["bottle-pour", "box-apples", "drawer-apples-with-obstacles", "tennis-ball-relay", "cloth-wipe"]


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _rigid(rng):
    return RigidTransform(quat_of(random_rotation(rng)), rng.uniform(-3, 3, 3))


def _run_cli(argv, capsys):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


# 1. primitive-fit recovery


def test_criterion_1_primitive_fit_recovery():
    t0 = time.perf_counter()
    sphere_ok = cyl_ok = box_ok = plane_ok = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        c = rng.uniform(-1, 1, 3)
        s = fit_sphere(sphere_points(c, 0.04, 500, 0.002, rng)).primitive
        sphere_ok += abs(s.radius - 0.04) <= 1e-3 and np.linalg.norm(np.subtract(s.center, c)) <= 1e-3

        axis = _unit(rng)
        cyl = fit_cylinder(cylinder_points(rng.uniform(-1, 1, 3), axis, 0.03, 0.12, 500, 0.001, rng)).primitive
        cyl_ok += abs(cyl.radius - 0.03) <= 5e-4 and angle_between_lines(cyl.axis_dir, axis) <= 1.0

        half = rng.uniform(0.03, 0.4, 3)
        truth = Cuboid(tuple(rng.uniform(-1, 1, 3)), tuple(half), quat_of(random_rotation(rng)))
        box = fit_cuboid(truth.sample_surface(float(half.min()) / 4)).primitive
        box_ok += np.prod(box.half_extents) <= 1.05 * np.prod(half)

        normal = _unit(rng)
        u, v = np.linalg.svd(normal[None])[2][1:]
        uv = rng.uniform(-0.5, 0.5, (500, 2))
        pts = rng.normal(size=3) + uv[:, :1] * u + uv[:, 1:] * v + rng.normal(0, 0.002, (500, 1)) * normal
        plane_ok += angle_between_lines(fit_plane(pts).primitive.normal, normal) <= 1.0
    elapsed = time.perf_counter() - t0
    ok = (sphere_ok, cyl_ok, box_ok, plane_ok) == (100, 100, 100, 100) and elapsed < 10.0
    verdict(1, ok, f"sphere {sphere_ok}/100, cylinder {cyl_ok}/100, cuboid {box_ok}/100, plane {plane_ok}/100 in {elapsed:.2f} s")


# 2. RANSAC robustness


def _sphere_with_outliers(n_total, outlier_fraction, rng):
    n_out = int(round(n_total * outlier_fraction))
    inl = sphere_points((0, 0, 0), 0.04, n_total - n_out, 0.001, rng)
    pts = np.vstack([inl, rng.uniform(-0.1, 0.1, (n_out, 3))])
    return pts, np.r_[np.ones(n_total - n_out, bool), np.zeros(n_out, bool)]


def test_criterion_2_ransac_robustness():
    good = 0
    for seed in range(100):
        pts, truth = _sphere_with_outliers(500, 0.3, np.random.default_rng(seed))
        res, mask = robust_fit(pts, "sphere", RansacConfig(seed=seed))
        recall = (mask & truth).sum() / truth.sum()
        good += recall >= 0.95 and abs(res.primitive.radius - 0.04) <= 0.02 * 0.04
    rejected = 0
    for seed in range(100):
        pts, _ = _sphere_with_outliers(500, 0.9, np.random.default_rng(1000 + seed))
        try:
            robust_fit(pts, "sphere", RansacConfig(seed=seed))
        except InsufficientConsensus:
            rejected += 1
    verdict(2, good >= 95 and rejected == 100, f"30% outliers recovered {good}/100, 90% outliers rejected {rejected}/100")


# 3. trajectory invariants


def _oracle_sdf(prim, pts):
    if isinstance(prim, Sphere):
        return np.linalg.norm(pts - np.asarray(prim.center), axis=1) - prim.radius
    if isinstance(prim, Cuboid):
        return box_sdf(pts, prim.center, prim.half_extents, prim.axes)
    return capped_cylinder_sdf(pts, prim.axis_point, prim.axis_dir, prim.radius, prim.height)


def _avoid_scene(rng):
    start = np.array([0.0, 0.0, 0.8]) + rng.uniform(-0.1, 0.1, 3)
    end = start + np.r_[rng.uniform(0.4, 0.7), rng.uniform(-0.2, 0.2), rng.uniform(-0.1, 0.1)]
    mid = 0.5 * (start + end) + rng.uniform(-0.05, 0.05, 3)
    kind = int(rng.integers(0, 3))
    if kind == 0:
        obstacle = Sphere(tuple(mid), float(rng.uniform(0.03, 0.12)))
    elif kind == 1:
        obstacle = Cuboid(tuple(mid), tuple(rng.uniform(0.02, 0.1, 3)), quat_of(random_rotation(rng)))
    else:
        axis = _unit(rng)
        obstacle = Cylinder(tuple(mid - 0.1 * axis), tuple(axis), float(rng.uniform(0.02, 0.08)), 0.2)
    margin = float(rng.uniform(0.01, 0.05))
    return start, end, ConstraintSet(margin, (obstacle,), base_pose=Pose((0.3, 0.0, 0.5)))


def test_criterion_3_trajectory_invariants():
    rng = np.random.default_rng(3)
    t = np.linspace(0, 1, 1001)
    radius_dev = 0.0
    for _ in range(50):
        arc = Arc(tuple(rng.uniform(-1, 1, 3)), tuple(_unit(rng)), tuple(rng.uniform(-1, 1, 3)), float(rng.uniform(-6, 6)))
        d = np.asarray(arc.axis_dir)
        rel = np.array([eval_curve(arc, x) for x in t]) - arc.axis_point
        dist = np.linalg.norm(rel - np.outer(rel @ d, d), axis=1)
        radius_dev = max(radius_dev, float(np.abs(dist - arc.radius).max()))

    spacing_dev, endpoints_exact = 0.0, True
    dense_t = np.linspace(0, 1, 200_001)
    for _ in range(20):
        ctrl = rng.uniform(-1, 1, (4, 3))
        bez = CubicBezier(*map(tuple, ctrl))
        endpoints_exact &= eval_curve(bez, 0.0) == bez.p0 and eval_curve(bez, 1.0) == bez.p3
        dense = bezier_eval(ctrl, dense_t)
        cum = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))]
        wps = np.array([w.pose.position for w in sample_waypoints(TrajectorySpec(bez, Fixed(), 25))])
        idx = cKDTree(dense).query(wps)[1]
        gaps = np.diff(cum[idx])
        spacing_dev = max(spacing_dev, float(np.abs(gaps - gaps.mean()).max() / gaps.mean()))

    passed = raised = 0
    for _ in range(50):
        start, end, cs = _avoid_scene(rng)
        obstacle = cs.obstacles[0]
        try:
            bez = synth_bezier_avoid(start, end, cs)
        except NoFeasibleCurve:
            straight = start + np.outer(np.linspace(0, 1, 10_000), end - start)
            raised += float(_oracle_sdf(obstacle, straight).min()) < cs.clearance_margin
            continue
        pts = bezier_eval(bez.control, np.linspace(0, 1, 10_000))
        passed += float(_oracle_sdf(obstacle, pts).min()) >= cs.clearance_margin

    rigid_dev = 0.0
    f = np.linspace(0, 1, 65)
    for _ in range(100):
        T = _rigid(rng)
        hinge = HingeAxis(tuple(rng.normal(size=3)), tuple(_unit(rng)), (0.0, 2.0))
        grasp = np.asarray(hinge.point) + rng.normal(size=3)
        sweep = float(rng.uniform(0.1, 2.0))
        arc = synth_door_arc(hinge, tuple(grasp), sweep)
        moved = synth_door_arc(hinge.transformed(T), tuple(T.apply(grasp)), sweep)
        rigid_dev = max(rigid_dev, float(np.abs(points_at_fractions(moved, f) - T.apply(points_at_fractions(arc, f))).max()))
        start, end, cs = _avoid_scene(rng)
        bez = synth_bezier_avoid(start, end, cs)
        moved = synth_bezier_avoid(T.apply(start), T.apply(end), cs.transformed(T))
        rigid_dev = max(rigid_dev, float(np.abs(np.asarray(moved.control) - T.apply(bez.control)).max()))

    ok = radius_dev <= 1e-12 and spacing_dev <= 0.005 and endpoints_exact and passed + raised == 50 and rigid_dev <= 1e-9
    verdict(
        3,
        ok,
        f"arc radius dev {radius_dev:.1e}, spacing dev {spacing_dev:.2%}, endpoints exact {endpoints_exact}, "
        f"avoid {passed} clear + {raised} infeasible of 50, rigid dev {rigid_dev:.1e}",
    )


# 4. door gap


def test_criterion_4_door_gap():
    gaps = []
    for w in (0.6, 0.7, 0.8, 0.9):
        hinge = HingeAxis((0, 0, 1.0), (0, 0, 1), (0.0, math.pi / 2))
        handle = Cylinder((w - 0.06, -0.06, 0.94), (0, 0, 1), 0.012, 0.12)
        door = Door("door", hinge, Cuboid((w / 2, 0, 1.0), (w / 2, 0.02, 1.0)), handle)
        grid = BirdsEyeMap((-1.0, -1.0), 0.1, np.zeros((20, 20), dtype=np.int64))
        world = SceneWorld(grid, doors=[door], robot_start=(0.6 * w, -0.4, 0.0))
        arc = synth_door_arc(hinge, handle.centroid(), required_sweep(w, 0.4))
        spec = TrajectorySpec(arc, RadialFacing(), 16, ((0, "closed"), (15, "open")))
        plan = plan_from_dict({"instruction": "open", "subtasks": [{"verb": "open", "targets": ["door"], "params": {"passage": 0.4}}]})
        results, _, sim = execute_plan(world, RobotState(world.robot_start), plan, [spec], RobotProfile())
        panel = sim.world.get("door").current_panel
        u, c = panel.axes[:, 0], np.asarray(panel.center)
        a, b = c - panel.half_extents[0] * u, c + panel.half_extents[0] * u
        gap = point_segment_distance((w, 0.0), a[:2], b[:2])
        gaps.append(gap if results[0].success else -math.inf)
    exact = required_sweep(0.8, 0.4) == math.pi / 6
    # the opening sweep makes the gap exactly 0.4 m; allow only float rounding
    ok = min(gaps) >= 0.4 - FLOAT_SLACK and exact
    verdict(4, ok, f"passage minus 0.4 m: {', '.join(f'{g - 0.4:+.1e}' for g in gaps)} for widths 0.6-0.9, required_sweep(0.8, 0.4) == pi/6 {exact}")


# 5. end-to-end scenarios


def test_criterion_5_scenarios(fixtures_dir, tmp_path, capsys):
    codes = {}
    for name in SCENARIOS:
        d = fixtures_dir / "scenarios" / name
        code, out, _ = _run_cli(
            ["run", d / "scene.json", d / "plan.json", "--profile", d / "profile.json", "--out", tmp_path / name], capsys
        )
        codes[name] = code if code != 0 or json.loads(out)["long_term_success"] else -1
    successes = 0
    for seed in range(100):
        sc = drawer_apples(seed, 0.02)
        report, _ = run_plan(sc.world, sc.robot, sc.plan, sc.profile, seed=seed, noise=0.002)
        successes += report.success
    ok = all(c == 0 for c in codes.values()) and successes >= 90
    verdict(5, ok, f"scenario exit codes {codes}, drawer under perturbation {successes}/100")


# 6. cache semantics


def test_criterion_6_cache_semantics(fixtures_dir, tmp_path, capsys):
    s = fixtures_dir / "synth"
    cache = tmp_path / "cache.json"
    files = ("spec.json", "waypoints.csv", "trajectory.svg")
    provenance, outputs, lookups, codes = [], [], 0, []
    for i in range(20):
        if i % 4 == 3:
            code, out, _ = _run_cli(["cache", "stats", "--cache", cache], capsys)
        else:
            out_dir = tmp_path / f"out{i}"
            code, out, _ = _run_cli(
                ["synth", s / "open_door.json", s / "objects.json", s / "constraints.json", "--out", out_dir, "--cache", cache], capsys
            )
            lookups += 1
            provenance.append(out.strip())
            outputs.append(tuple((out_dir / f).read_bytes() for f in files))
        codes.append(code)
    stats = json.loads(_run_cli(["cache", "stats", "--cache", cache], capsys)[1])
    counted = stats["hits"] + stats["misses"] == lookups
    reruns_cached = provenance[0] == "generated" and set(provenance[1:]) == {"cached"}
    identical = len(set(outputs)) == 1

    objects = [ParamObject.from_dict(o) for o in json.loads((s / "objects.json").read_text())["objects"]]
    cs = ConstraintSet.from_dict(json.loads((s / "constraints.json").read_text()))
    warm = SkillCache()
    generated, p1 = synthesize_subtask(Subtask("open", ("door",)), objects, cs, cs.robot, warm)
    cached, p2 = synthesize_subtask(Subtask("open", ("door",)), objects, cs, cs.robot, warm)
    fresh, p3 = synthesize_subtask(Subtask("open", ("door",)), objects, cs, cs.robot, SkillCache())
    fields = (p1, p2, p3) == ("generated", "cached", "generated") and cached == generated == fresh
    fields &= cached.to_dict() == fresh.to_dict()

    ok = all(c == 0 for c in codes) and counted and reruns_cached and identical and fields
    verdict(
        6,
        ok,
        f"{lookups} lookups vs hits+misses {stats['hits'] + stats['misses']}, reruns cached {reruns_cached}, "
        f"byte-identical outputs {identical}, cached == generated {fields}",
    )


# 7. scene pipeline


def test_criterion_7_scene_pipeline():
    rng = np.random.default_rng(7)
    reproj = 0.0
    for _ in range(20):
        h, w = 48, 64
        depth = rng.uniform(0.3, 5.0, (h, w)) * (rng.uniform(size=(h, w)) > 0.1)
        frame = DepthFrame(depth, rng.uniform(40, 600), rng.uniform(40, 600), w / 2 + rng.normal(), h / 2 + rng.normal(), _rigid(rng))
        uv = project_points(frame, unproject_depth(frame))
        reproj = max(reproj, float(np.abs(uv - valid_pixel_coords(frame)).max()))

    exact_dev, noisy_scale, noisy_angle = 0.0, 0.0, 0.0
    for _ in range(20):
        T, scale = _rigid(rng), float(rng.uniform(0.1, 10))
        src = rng.uniform(-1, 1, (100, 3))
        dst = scale * src @ T.matrix.T + T.translation
        s, est = align_similarity(src, dst)
        exact_dev = max(exact_dev, abs(s - scale) / scale, float(np.abs(np.asarray(est.matrix) - T.matrix).max()), float(np.abs(np.asarray(est.translation) - T.translation).max()))
        s, est = align_similarity(src, dst + rng.normal(0, 0.001, dst.shape))
        rel = est.matrix.T @ T.matrix
        angle = math.degrees(math.acos(np.clip((np.trace(rel) - 1) / 2, -1, 1)))
        noisy_scale, noisy_angle = max(noisy_scale, abs(s - scale) / scale), max(noisy_angle, angle)

    conserved = 0
    for _ in range(50):
        n = int(rng.integers(100, 5000))
        pts = rng.uniform((-3, -3, -0.5), (3, 3, 2.5), (n, 3))
        cell = float(rng.uniform(0.05, 0.5))
        bev = build_birdseye(LabeledPointCloud(pts, rng.integers(0, 4, n)), cell)
        in_band = (pts[:, 2] >= 0.02) & (pts[:, 2] <= 1.8)
        conserved += int(bev.counts.sum()) == int(in_band.sum())

    ok = reproj <= 1e-6 and exact_dev <= 1e-9 and noisy_scale <= 0.005 and noisy_angle <= 0.5 and conserved == 50
    verdict(
        7,
        ok,
        f"reprojection {reproj:.1e} px, exact alignment dev {exact_dev:.1e}, noisy scale {noisy_scale:.3%} "
        f"angle {noisy_angle:.3f} deg, conservation {conserved}/50",
    )


# 8. navigation oracle


def test_criterion_8_navigation_oracle():
    rng = np.random.default_rng(8)
    agree = 0
    for _ in range(200):
        shape = tuple(rng.integers(5, 30, 2))
        cells = (rng.uniform(size=shape) < rng.uniform(0.1, 0.4)).astype(np.int64)
        start = (int(rng.integers(0, shape[0])), int(rng.integers(0, shape[1])))
        goal = (int(rng.integers(0, shape[0])), int(rng.integers(0, shape[1])))
        cells[start] = cells[goal] = 0
        world = SceneWorld(BirdsEyeMap((0.0, 0.0), 0.1, cells))
        oracle = grid_shortest_path_length(cells == 0, start, goal)
        robot = RobotState(((start[1] + 0.5) * 0.1, (start[0] + 0.5) * 0.1, 0.0))
        try:
            got = len(navigate(world, robot, goal)[0])
        except Exception:
            got = None
        agree += got == oracle

    sc = two_room_navigation()
    objects = perceive(sc.world)
    start = sc.world.map.cell_of(*sc.world.robot_start[:2])
    nav_only = plan_from_dict({"instruction": "go", "subtasks": [sc.plan.subtasks[1].to_dict()]})
    blocked = [p.kind for p in validate_plan(nav_only, objects, sc.world.map, start)] == ["missing-prerequisite: open(door)"]
    allowed = validate_plan(sc.plan, objects, sc.world.map, start) == []
    report, sim = run_plan(sc.world, sc.robot, sc.plan, sc.profile, noise=0.0)
    flipped = grid_shortest_path_length((sc.world.map.cells == 0) | (sc.world.map.cells == 2), start, (19, 45))
    reached = report.success and sim.world.map.cell_of(*sim.robot.base[:2]) == (19, 45) and flipped is not None
    ok = agree == 200 and blocked and allowed and reached
    verdict(8, ok, f"BFS agreement {agree}/200, door prerequisite enforced {blocked}, open-then-navigate reaches goal {reached}")
