"""Generated long-horizon scenes: two-room bottle pour, box apples, drawer apples,
tennis-ball relay and cloth wipe.

Every number here is a scene-design choice; fixtures on disk are written from
these builders by ``scripts/generate_fixtures.py``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fitting import derive_hinge
from .geometry import ConvexEnvelope, Cuboid, Cylinder, GeometricPrimitive, RobotProfile, Sphere
from .planner import Plan, plan_from_dict
from .scene import BirdsEyeMap
from .sim import Door, Drawer, FreeObject, RobotState, SceneWorld, Stain, StaticObstacle

CELL = 0.1
TABLE_TOP = 0.72
SLAB = 0.04
WALL_LABEL = 1
DOOR_LABEL = 2
FURNITURE_LABEL = 3


@dataclass
class Scenario:
    name: str
    world: SceneWorld
    plan: Plan
    profile: RobotProfile

    @property
    def robot(self) -> RobotState:
        return RobotState(self.world.robot_start)


def box(center: tuple, size: tuple) -> Cuboid:
    return Cuboid(center, tuple(0.5 * s for s in size))


def table(x: float, y: float, sx: float, sy: float) -> Cuboid:
    """Table top slab (legs are not modeled)."""
    return box((x, y, TABLE_TOP - SLAB / 2), (sx, sy, SLAB))


def upright(x: float, y: float, z: float, radius: float, height: float) -> Cylinder:
    return Cylinder((x, y, z), (0.0, 0.0, 1.0), radius, height)


def rasterize(
    shape: tuple[int, int], footprints: list[tuple[int, GeometricPrimitive]], cell: float = CELL
) -> BirdsEyeMap:
    """Label every cell whose center lies within half a cell of a footprint (first match wins)."""
    h, w = shape
    rows, cols = np.mgrid[0:h, 0:w]
    xs = ((cols + 0.5) * cell).ravel()
    ys = ((rows + 0.5) * cell).ravel()
    cells = np.zeros(h * w, dtype=np.int64)
    for label, prim in footprints:
        z = float(prim.centroid()[2])
        d = prim.signed_distance(np.c_[xs, ys, np.full_like(xs, z)])
        cells[(cells == 0) & (d < 0.5 * cell)] = label
    return BirdsEyeMap((0.0, 0.0), cell, cells.reshape(h, w))


def make_door(object_id: str, panel: Cuboid, handle: Cylinder, hint: tuple, hi: float, label: str, map_label: int) -> Door:
    hinge = derive_hinge(panel, handle, hint, (0.0, hi))
    return Door(object_id, hinge, panel, handle, 0.0, label, map_label)


def _plan(text: str, subtasks: list[dict]) -> Plan:
    return plan_from_dict({"instruction": text, "subtasks": subtasks})


def _furniture_map(shape: tuple[int, int], world: SceneWorld) -> BirdsEyeMap:
    prints = [(s.map_label, s.primitive) for s in world.static_obstacles if s.map_label]
    prints += [(d.map_label, d.panel) for d in world.doors if d.map_label]
    return rasterize(shape, prints)


def two_room_world() -> SceneWorld:
    """Rooms x<3 and x>3 split by a wall with a 0.9 m doorway at y in [1.5, 2.4]."""
    walls = [
        StaticObstacle("wall_south", "wall", box((3.0, 0.75, 1.1), (0.1, 1.5, 2.2)), False, WALL_LABEL),
        StaticObstacle("wall_north", "wall", box((3.0, 3.2, 1.1), (0.1, 1.6, 2.2)), False, WALL_LABEL),
    ]
    panel = box((3.0, 1.95, 1.01), (0.04, 0.89, 2.0))
    handle = upright(2.95, 2.3, 0.94, 0.015, 0.12)
    door = make_door("door", panel, handle, (0.0, 0.0, 1.0), 1.9, "door", DOOR_LABEL)
    world = SceneWorld(BirdsEyeMap((0.0, 0.0), CELL, np.zeros((40, 60), dtype=np.int64)), walls, [door])
    return world


def bottle_pour() -> Scenario:
    world = two_room_world()
    world.static_obstacles += [
        StaticObstacle("table_a", "table", table(1.8, 1.95, 0.4, 0.3), False, FURNITURE_LABEL),
        StaticObstacle("table_b", "table", table(4.3, 2.4, 0.4, 0.4), False, FURNITURE_LABEL),
        StaticObstacle("cup", "cup", upright(4.2, 2.4, TABLE_TOP, 0.07, 0.1), True),
    ]
    world.free_objects.append(FreeObject("bottle", "bottle", upright(1.9, 1.95, TABLE_TOP, 0.03, 0.2)))
    world.map = _furniture_map((40, 60), world)
    world.robot_start = (2.45, 1.95, 0.0)
    plan = _plan(
        "Open the door, take the bottle to the next room and pour it into the cup.",
        [
            {"verb": "open", "targets": ["door"], "params": {}},
            {"verb": "pick", "targets": ["bottle"], "params": {}},
            {"verb": "navigate", "targets": [], "params": {"goal": [19, 39]}},
            {"verb": "pour", "targets": ["bottle"], "params": {"into": "cup"}},
        ],
    )
    return Scenario("bottle-pour", world, plan, RobotProfile())


def box_apples() -> Scenario:
    cx, cy, floor = 1.6, 1.1, TABLE_TOP
    statics = [
        StaticObstacle("table", "table", table(1.6, 0.9, 0.6, 1.0), False, FURNITURE_LABEL),
        StaticObstacle("box_floor", "box", box((cx, cy, floor + 0.005), (0.3, 0.3, 0.01))),
        StaticObstacle("box_wall_front", "box", box((cx - 0.145, cy, floor + 0.07), (0.01, 0.3, 0.12))),
        StaticObstacle("box_wall_back", "box", box((cx + 0.145, cy, floor + 0.07), (0.01, 0.3, 0.12))),
        StaticObstacle("box_wall_left", "box", box((cx, cy - 0.145, floor + 0.07), (0.28, 0.01, 0.12))),
        StaticObstacle("box_wall_right", "box", box((cx, cy + 0.145, floor + 0.07), (0.28, 0.01, 0.12))),
        StaticObstacle("board", "cutting_board", box((1.5, 0.6, floor + 0.01), (0.2, 0.25, 0.02))),
    ]
    lid_z = floor + 0.135
    lid = box((cx, cy, lid_z), (0.3, 0.3, 0.01))
    handle = Cylinder((cx - 0.11, cy - 0.04, lid_z + 0.045), (0.0, 1.0, 0.0), 0.01, 0.08)
    door = make_door("box_lid", lid, handle, (0.0, 1.0, 0.0), 1.9, "box", 0)
    apple = FreeObject("apple", "apple", Sphere((cx, cy, floor + 0.01 + 0.035), 0.035))
    world = SceneWorld(BirdsEyeMap((0.0, 0.0), CELL, np.zeros((25, 30), dtype=np.int64)), statics, [door], [], [apple])
    world.map = _furniture_map((25, 30), world)
    world.robot_start = (1.15, 0.85, 0.0)
    plan = _plan(
        "Open the box and put the apple on the cutting board.",
        [
            {"verb": "open", "targets": ["box_lid"], "params": {}},
            {"verb": "pick", "targets": ["apple"], "params": {}},
            {"verb": "place", "targets": ["apple"], "params": {"destination": "board"}},
        ],
    )
    return Scenario("box-apples", world, plan, RobotProfile())


def drawer_apples(seed: int | None = None, jitter: float = 0.0) -> Scenario:
    """Apple from a side table into a drawer, past a floor lamp.

    With ``seed`` set, the drawer assembly and the apple are shifted by
    independent uniform offsets in [-jitter, jitter] along x and y.
    """
    rng = np.random.default_rng(seed)

    def shift() -> np.ndarray:
        return np.r_[rng.uniform(-jitter, jitter, 2), 0.0] if seed is not None else np.zeros(3)

    d = shift()
    tray = box(tuple(np.array([1.6, 1.0, 0.62]) + d), (0.2, 0.5, 0.24))
    handle = Cylinder(tuple(np.array([1.465, 0.94, 0.62]) + d), (0.0, 1.0, 0.0), 0.012, 0.12)
    cabinet = box(tuple(np.array([1.8, 1.0, 0.38]) + d), (0.6, 0.6, 0.76))
    drawer = Drawer("drawer", tray, handle, (-1.0, 0.0, 0.0), 0.3)
    a = shift()
    apple = FreeObject("apple", "apple", Sphere(tuple(np.array([1.15, 1.45, TABLE_TOP + 0.035]) + a), 0.035))
    statics = [
        StaticObstacle("cabinet", "cabinet", cabinet, False, FURNITURE_LABEL),
        StaticObstacle("side_table", "table", table(1.0, 1.6, 0.5, 0.4), False, FURNITURE_LABEL),
        StaticObstacle("lamp", "lamp", upright(1.27, 1.25, 0.0, 0.03, 0.9), False, FURNITURE_LABEL),
    ]
    world = SceneWorld(BirdsEyeMap((0.0, 0.0), CELL, np.zeros((25, 25), dtype=np.int64)), statics, [], [drawer], [apple])
    world.map = _furniture_map((25, 25), world)
    world.robot_start = (1.0, 1.0, 0.0)
    plan = _plan(
        "Open the drawer and put the apple in it.",
        [
            {"verb": "open", "targets": ["drawer"], "params": {}},
            {"verb": "pick", "targets": ["apple"], "params": {}},
            {"verb": "place", "targets": ["apple"], "params": {"destination": "drawer"}},
        ],
    )
    return Scenario("drawer-apples-with-obstacles", world, plan, RobotProfile())


def tennis_ball_relay() -> Scenario:
    statics = [
        StaticObstacle(f"table_{k}", "table", table(x, 2.2, 0.5, 0.4), False, FURNITURE_LABEL)
        for k, x in ((1, 1.0), (2, 2.0), (3, 3.0))
    ]
    statics.append(StaticObstacle("bowl", "bowl", upright(3.05, 2.1, TABLE_TOP, 0.08, 0.06), True))
    ball = FreeObject("ball", "tennis_ball", Sphere((0.9, 2.15, TABLE_TOP + 0.033), 0.033))
    world = SceneWorld(BirdsEyeMap((0.0, 0.0), CELL, np.zeros((30, 40), dtype=np.int64)), statics, [], [], [ball])
    world.map = _furniture_map((30, 40), world)
    world.robot_start = (1.05, 1.65, 0.0)
    plan = _plan(
        "Take the tennis ball from the first table to the bowl on the third table.",
        [
            {"verb": "pick", "targets": ["ball"], "params": {}},
            {"verb": "navigate", "targets": [], "params": {"goal": [16, 30]}},
            {"verb": "place", "targets": ["ball"], "params": {"destination": "bowl"}},
        ],
    )
    return Scenario("tennis-ball-relay", world, plan, RobotProfile())


def cloth_envelope(x: float, y: float, z: float, size: float = 0.12, thick: float = 0.01) -> ConvexEnvelope:
    h = size / 2
    verts = [(x + sx * h, y + sy * h, z + sz * thick) for sx in (-1, 1) for sy in (-1, 1) for sz in (0, 1)]
    return ConvexEnvelope(tuple(verts))


def cloth_wipe() -> Scenario:
    statics = [StaticObstacle("table", "table", table(1.5, 1.0, 0.8, 0.6), False, FURNITURE_LABEL)]
    cloth = FreeObject("cloth", "cloth", cloth_envelope(1.25, 0.85, TABLE_TOP))
    stain = Stain("stain", box((1.5, 1.05, TABLE_TOP + 0.001), (0.2, 0.15, 0.002)))
    world = SceneWorld(
        BirdsEyeMap((0.0, 0.0), CELL, np.zeros((20, 25), dtype=np.int64)), statics, [], [], [cloth], [stain]
    )
    world.map = _furniture_map((20, 25), world)
    world.robot_start = (1.0, 1.0, 0.0)
    plan = _plan(
        "Wipe the stain off the table with the cloth.",
        [
            {"verb": "pick", "targets": ["cloth"], "params": {}},
            {"verb": "wipe", "targets": ["stain"], "params": {"with": "cloth"}},
        ],
    )
    return Scenario("cloth-wipe", world, plan, RobotProfile())


SCENARIOS = {
    "bottle-pour": bottle_pour,
    "box-apples": box_apples,
    "drawer-apples-with-obstacles": drawer_apples,
    "tennis-ball-relay": tennis_ball_relay,
    "cloth-wipe": cloth_wipe,
}


def two_room_navigation() -> Scenario:
    """Door prerequisite fixture: reach the far room, which needs the door open."""
    world = two_room_world()
    world.map = _furniture_map((40, 60), world)
    world.robot_start = (2.45, 1.95, 0.0)
    plan = _plan(
        "Go to the other room.",
        [
            {"verb": "open", "targets": ["door"], "params": {}},
            {"verb": "navigate", "targets": [], "params": {"goal": [19, 45]}},
        ],
    )
    return Scenario("two-room", world, plan, RobotProfile())


