"""Regenerate every file under fixtures/ from code.

Usage: python3 scripts/generate_fixtures.py [fixtures_dir]

Nothing in fixtures/ is hand-edited; rerunning this script reproduces the
directory byte for byte.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from geomcoder.clouds import write_ply
from geomcoder.geometry import Pose, RigidTransform
from geomcoder.jsonio import write_json
from geomcoder.planner import Subtask, save_plan, subtask_obstacles
from geomcoder.scenarios import SCENARIOS, Scenario, two_room_navigation
from geomcoder.scene import DepthFrame, write_depth, write_pgm
from geomcoder.sim import perceive
from geomcoder.trajectory import ConstraintSet

APPLE_CENTER = (0.5, 0.2, 0.8)
APPLE_RADIUS = 0.04
APPLE_POINTS = 500
APPLE_SIGMA = 0.001

FRAME_SIZE = (64, 48)
FRAME_INTRINSICS = (60.0, 60.0, 32.0, 24.0)
# Camera 2 m above (1, 1) looking straight down.
FRAME_POSE = RigidTransform((0.0, 1.0, 0.0, 0.0), (1.0, 1.0, 2.0))


def write_scenario(out: Path, sc: Scenario) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "scene.json", sc.world.to_dict())
    write_json(out / "plan.json", save_plan(sc.plan))
    write_json(out / "profile.json", sc.profile.to_dict())


def scenarios(root: Path) -> None:
    for name, build in SCENARIOS.items():
        write_scenario(root / name, build())
    nav = two_room_navigation()
    write_scenario(root / "two-room-navigation", nav)
    # Robot needs more clearance than the door panel can ever provide.
    write_scenario(root / "wide-robot-doorway", replace(nav, profile=replace(nav.profile, passage_width=1.0)))
    drawer = SCENARIOS["drawer-apples-with-obstacles"]()
    bad = save_plan(drawer.plan)
    bad["subtasks"][1]["targets"] = ["bowl_9"]
    write_scenario(root / "missing-object", drawer)
    write_json(root / "missing-object" / "plan.json", bad)


def apple(root: Path) -> None:
    rng = np.random.default_rng(7)
    d = rng.normal(size=(APPLE_POINTS, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = np.asarray(APPLE_CENTER) + (APPLE_RADIUS + rng.normal(0.0, APPLE_SIGMA, (APPLE_POINTS, 1))) * d
    write_ply(root / "apple.ply", pts)


def frame(root: Path) -> None:
    w, h = FRAME_SIZE
    depth = np.full((h, w), 2.0)
    labels = np.zeros((h, w), dtype=np.int64)
    depth[10:22, 8:30] = 1.5  # box top at z = 0.5
    labels[10:22, 8:30] = 1
    depth[28:40, 36:50] = 1.0  # cabinet top at z = 1.0
    labels[28:40, 36:50] = 2
    depth[:, :2] = 0.0  # invalid border columns
    depth[45:, :] = 0.0
    out = root / "frame"
    out.mkdir(parents=True, exist_ok=True)
    fx, fy, cx, cy = FRAME_INTRINSICS
    write_depth(DepthFrame(depth, fx, fy, cx, cy, FRAME_POSE), out / "depth.f32")
    write_json(
        out / "depth.json",
        {"width": w, "height": h, "fx": fx, "fy": fy, "cx": cx, "cy": cy, "camera_pose": FRAME_POSE.to_dict()},
    )
    write_pgm(out / "mask.pgm", labels)
    write_pgm(out / "mask_small.pgm", labels[: h // 2, : w // 2])


def door_synth(root: Path) -> None:
    nav = two_room_navigation()
    objects = perceive(nav.world)
    subtask = Subtask("open", ("door",), {})
    robot = nav.robot
    cs = ConstraintSet(0.02, subtask_obstacles(subtask, objects, ()), nav.profile, Pose(tuple(robot.mount)))
    out = root / "synth"
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "open_door.json", subtask.to_dict())
    write_json(out / "objects.json", {"objects": [o.to_dict() for o in objects]})
    write_json(out / "constraints.json", cs.to_dict())
    stripped = [
        replace(o, parts=tuple(p for p in o.parts if p[0] != "hinge")) if o.object_id == "door" else o for o in objects
    ]
    write_json(out / "objects_no_hinge.json", {"objects": [o.to_dict() for o in stripped]})


def main(argv: list[str]) -> None:
    root = Path(argv[0]) if argv else Path(__file__).resolve().parents[1] / "fixtures"
    root.mkdir(parents=True, exist_ok=True)
    scenarios(root / "scenarios")
    apple(root)
    frame(root)
    door_synth(root)


if __name__ == "__main__":
    main(sys.argv[1:])
