"""Deterministic kinematic simulator for articulated scenes and a mobile manipulator.

The arm is abstracted as an end-effector that teleports from waypoint to
waypoint within reach of the base. Collisions use two spheres: the base
sphere (footprint radius, centered at footprint height) and a wrist sphere
offset from the tool point along the tool z-axis. Grasps, slips and drops are
threshold rules.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .errors import DomainError, SchemaError, Unreachable
from .fitting import derive_hinge, fit_cuboid, fit_cylinder, fit_envelope, fit_sphere
from .geometry import (
    ConvexEnvelope,
    Cuboid,
    Cylinder,
    GeometricPrimitive,
    HingeAxis,
    ParamObject,
    Pose,
    RigidTransform,
    RobotProfile,
    Sphere,
    primitive_from_dict,
    quat_conjugate,
    quat_multiply,
    quat_to_matrix,
    unit3,
    vec3,
)
from .grid import bfs_path
from .jsonio import canonical, dumps
from .planner import Plan, Subtask, panel_width, required_passage
from .scene import BirdsEyeMap
from .trajectory import (
    MIN_POUR_TILT,
    TrajectorySpec,
    Waypoint,
    _outline_xy,
    sample_waypoints,
    top_opening,
    vertical_extent,
)

GRASP_TOL = 0.02
SLIP_TOL = 0.02
EE_SPHERE_RADIUS = 0.05
WRIST_OFFSET = 0.08
ARM_MOUNT_HEIGHT = 0.5
SWEEP_STEP = 0.01
PLACE_TOL = 0.03
WIPE_GRID = 0.01
WIPE_DENSIFY = 0.005
WIPE_COVERAGE_GOAL = 0.9
DEFAULT_WIPE_RADIUS = 0.03
CONTAINER_FLOOR = 0.005
DEFAULT_PERCEPTION_NOISE = 0.002


# World records


def _door_transform(hinge: HingeAxis, angle: float) -> RigidTransform:
    return RigidTransform.from_axis_angle(hinge.direction, angle, about=hinge.point)


@dataclass
class Door:
    """Revolute panel; ``panel`` and ``handle`` are given at angle 0 (closed)."""

    object_id: str
    hinge: HingeAxis
    panel: Cuboid
    handle: Cylinder
    angle: float = 0.0
    class_label: str = "door"
    map_label: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.hinge.swing_range
        if not lo <= self.angle <= hi:
            raise ValueError(f"door {self.object_id} angle {self.angle} outside swing range {(lo, hi)}")

    @property
    def transform(self) -> RigidTransform:
        return _door_transform(self.hinge, self.angle)

    @property
    def current_panel(self) -> Cuboid:
        return self.panel.transformed(self.transform)

    @property
    def current_handle(self) -> Cylinder:
        return self.handle.transformed(self.transform)

    @property
    def handle_radius(self) -> float:
        return float(self.hinge.signed_distance(self.handle.centroid())[0])

    @property
    def width(self) -> float:
        return panel_width(self.panel, self.hinge)

    def passage(self) -> float:
        """Clear opening: panel width times the sine of the opening angle."""
        return self.width * math.sin(min(max(self.angle, 0.0), math.pi / 2))

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "class_label": self.class_label,
            "hinge": self.hinge.to_dict(),
            "panel": self.panel.to_dict(),
            "handle": self.handle.to_dict(),
            "angle": self.angle,
            "map_label": self.map_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Door:
        return cls(
            str(d["object_id"]),
            primitive_from_dict(d["hinge"]),
            primitive_from_dict(d["panel"]),
            primitive_from_dict(d["handle"]),
            float(d.get("angle", 0.0)),
            str(d.get("class_label", "door")),
            int(d.get("map_label", 0)),
        )


@dataclass
class Drawer:
    """Prismatic tray; ``body`` and ``handle`` are given at extension 0."""

    object_id: str
    body: Cuboid
    handle: Cylinder
    axis: tuple[float, float, float]
    max_extension: float
    extension: float = 0.0
    class_label: str = "drawer"
    map_label: int = 0

    def __post_init__(self) -> None:
        self.axis = unit3(self.axis)
        if not 0.0 <= self.extension <= self.max_extension:
            raise ValueError(f"drawer {self.object_id} extension {self.extension} outside [0, {self.max_extension}]")

    @property
    def transform(self) -> RigidTransform:
        return RigidTransform.from_translation(self.extension * np.asarray(self.axis))

    @property
    def current_body(self) -> Cuboid:
        return self.body.transformed(self.transform)

    @property
    def current_handle(self) -> Cylinder:
        return self.handle.transformed(self.transform)

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "class_label": self.class_label,
            "body": self.body.to_dict(),
            "handle": self.handle.to_dict(),
            "axis": list(self.axis),
            "extension": self.extension,
            "max_extension": self.max_extension,
            "map_label": self.map_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Drawer:
        return cls(
            str(d["object_id"]),
            primitive_from_dict(d["body"]),
            primitive_from_dict(d["handle"]),
            tuple(d["axis"]),
            float(d["max_extension"]),
            float(d.get("extension", 0.0)),
            str(d.get("class_label", "drawer")),
            int(d.get("map_label", 0)),
        )


@dataclass
class FreeObject:
    object_id: str
    class_label: str
    primitive: GeometricPrimitive
    resting_on: str | None = None

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "class_label": self.class_label,
            "primitive": self.primitive.to_dict(),
            "resting_on": self.resting_on,
        }

    @classmethod
    def from_dict(cls, d: dict) -> FreeObject:
        return cls(str(d["object_id"]), str(d["class_label"]), primitive_from_dict(d["primitive"]), d.get("resting_on"))


@dataclass
class StaticObstacle:
    """Immovable geometry; a container lets released objects settle onto its floor."""

    object_id: str
    class_label: str
    primitive: GeometricPrimitive
    container: bool = False
    map_label: int = 0

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "class_label": self.class_label,
            "primitive": self.primitive.to_dict(),
            "container": self.container,
            "map_label": self.map_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> StaticObstacle:
        return cls(
            str(d["object_id"]),
            str(d["class_label"]),
            primitive_from_dict(d["primitive"]),
            bool(d.get("container", False)),
            int(d.get("map_label", 0)),
        )


@dataclass
class Stain:
    """Thin patch on a surface; coverage is tracked on a 1 cm grid over its top face."""

    object_id: str
    patch: Cuboid
    covered: np.ndarray | None = None
    class_label: str = "stain"

    def __post_init__(self) -> None:
        cells = self.grid_points()
        if self.covered is None:
            self.covered = np.zeros(len(cells), dtype=bool)
        else:
            self.covered = np.asarray(self.covered, dtype=bool).reshape(-1)
            if len(self.covered) != len(cells):
                raise ValueError("stain coverage mask does not match its grid")

    def _frame(self) -> tuple[np.ndarray, np.ndarray, int, int, int]:
        axes, half = self.patch.axes, np.asarray(self.patch.half_extents)
        k = int(np.argmax(np.abs(axes[2])))
        up = axes[:, k] * (1.0 if axes[2, k] > 0 else -1.0)
        i, j = sorted((a for a in range(3) if a != k), key=lambda a: (-half[a], a))
        return up, half, k, i, j

    def grid_points(self) -> np.ndarray:
        up, half, k, i, j = self._frame()
        axes = self.patch.axes

        def centers(h: float) -> np.ndarray:
            n = max(1, int(math.ceil(2 * h / WIPE_GRID - 1e-9)))
            step = 2 * h / n
            return -h + step * (np.arange(n) + 0.5)

        a, b = np.meshgrid(centers(half[i]), centers(half[j]), indexing="ij")
        top = np.asarray(self.patch.center) + half[k] * up
        return top + np.outer(a.ravel(), axes[:, i]) + np.outer(b.ravel(), axes[:, j])

    @property
    def coverage(self) -> float:
        return float(self.covered.mean())

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "class_label": self.class_label,
            "patch": self.patch.to_dict(),
            "coverage": self.coverage,
            "covered": [int(i) for i in np.flatnonzero(self.covered)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Stain:
        s = cls(str(d["object_id"]), primitive_from_dict(d["patch"]), None, str(d.get("class_label", "stain")))
        s.covered[np.asarray(d.get("covered", []), dtype=int)] = True
        return s


@dataclass
class SceneWorld:
    map: BirdsEyeMap
    static_obstacles: list[StaticObstacle] = field(default_factory=list)
    doors: list[Door] = field(default_factory=list)
    drawers: list[Drawer] = field(default_factory=list)
    free_objects: list[FreeObject] = field(default_factory=list)
    stains: list[Stain] = field(default_factory=list)
    robot_start: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        ids = [r.object_id for r in self.records()]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise ValueError(f"duplicate object ids: {sorted(dup)}")

    def records(self) -> list:
        return [*self.static_obstacles, *self.doors, *self.drawers, *self.free_objects, *self.stains]

    def get(self, object_id: str) -> Any:
        for r in self.records():
            if r.object_id == object_id:
                return r
        raise KeyError(object_id)

    def copy(self) -> SceneWorld:
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "map": self.map.to_dict(),
            "static_obstacles": [r.to_dict() for r in self.static_obstacles],
            "doors": [r.to_dict() for r in self.doors],
            "drawers": [r.to_dict() for r in self.drawers],
            "free_objects": [r.to_dict() for r in self.free_objects],
            "stains": [r.to_dict() for r in self.stains],
            "robot_start": list(self.robot_start),
        }

    def state_dict(self) -> dict:
        """Dynamic state only (no map or static geometry)."""
        return {
            "doors": {d.object_id: d.angle for d in self.doors},
            "drawers": {d.object_id: d.extension for d in self.drawers},
            "free_objects": {o.object_id: o.primitive.to_dict() for o in self.free_objects},
            "stains": {s.object_id: s.coverage for s in self.stains},
        }

    @classmethod
    def from_dict(cls, d: Any) -> SceneWorld:
        if not isinstance(d, dict):
            raise SchemaError("scene", "expected an object")
        try:
            return cls(
                BirdsEyeMap.from_dict(d["map"]),
                [StaticObstacle.from_dict(r) for r in d.get("static_obstacles", [])],
                [Door.from_dict(r) for r in d.get("doors", [])],
                [Drawer.from_dict(r) for r in d.get("drawers", [])],
                [FreeObject.from_dict(r) for r in d.get("free_objects", [])],
                [Stain.from_dict(r) for r in d.get("stains", [])],
                tuple(float(v) for v in d.get("robot_start", (0.0, 0.0, 0.0))),
            )
        except KeyError as exc:
            raise SchemaError(str(exc.args[0]), "missing scene field") from exc
        except (TypeError, ValueError) as exc:
            raise SchemaError("scene", str(exc)) from exc


# Robot


@dataclass
class Held:
    """A free object rigidly attached to the tool since ``grasp_ee``."""

    object_id: str
    grasp_ee: RigidTransform
    grasp_primitive: GeometricPrimitive
    mouth: np.ndarray | None = None


@dataclass
class RobotState:
    base: tuple[float, float, float]
    ee_pose: Pose | None = None
    gripper: str = "open"
    held: Held | None = None
    grasped: tuple[str, str] | None = None

    @property
    def base_xy(self) -> np.ndarray:
        return np.asarray(self.base[:2], dtype=float)

    @property
    def mount(self) -> np.ndarray:
        return np.array([self.base[0], self.base[1], ARM_MOUNT_HEIGHT])

    @property
    def held_id(self) -> str | None:
        return self.held.object_id if self.held else None

    def to_dict(self) -> dict:
        return {
            "base": list(self.base),
            "ee_pose": self.ee_pose.to_dict() if self.ee_pose else None,
            "gripper": self.gripper,
            "held": self.held_id,
            "grasped": list(self.grasped) if self.grasped else None,
        }


def base_sphere(robot: RobotState, profile: RobotProfile) -> Sphere:
    r = profile.base_footprint_radius
    return Sphere((robot.base[0], robot.base[1], r), r)


def wrist_center(pose: Pose) -> np.ndarray:
    return np.asarray(pose.position) + WRIST_OFFSET * quat_to_matrix(pose.orientation)[:, 2]


# Events and results


@dataclass(frozen=True)
class Event:
    step: int
    kind: str
    detail: str
    value: float | None = None

    def to_dict(self) -> dict:
        return {"step": self.step, "kind": self.kind, "detail": self.detail, "value": self.value}


@dataclass
class SubtaskResult:
    index: int
    verb: str
    success: bool
    reason: str = ""
    events: list[Event] = field(default_factory=list)
    provenance: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "verb": self.verb,
            "outcome": "success" if self.success else "failure",
            "reason": self.reason,
            "events": [e.to_dict() for e in self.events],
            "provenance": self.provenance,
        }


@dataclass
class ExecutionTrace:
    """One step per executed waypoint or traversed navigation cell."""

    steps: list[dict] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)
    outlines: list[dict] = field(default_factory=list)
    success: bool | None = None

    def record(self, subtask: int, robot: RobotState, kind: str) -> None:
        self.steps.append({"step": len(self.steps), "subtask": subtask, "kind": kind, **robot.to_dict()})

    def to_jsonl(self) -> str:
        return "".join(json.dumps(canonical(s), sort_keys=True, separators=(",", ":")) + "\n" for s in self.steps)

    def write(self, out_dir: str | Path, world: SceneWorld | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.jsonl").write_text(self.to_jsonl(), encoding="utf-8")
        (out / "snapshots.json").write_text(dumps({"snapshots": self.snapshots, "success": self.success}), encoding="utf-8")
        for k, shapes in enumerate(self.outlines):
            (out / f"snapshot_{k:02d}.svg").write_text(_snapshot_svg(shapes, self.steps), encoding="utf-8")


def _snapshot_outlines(world: SceneWorld, robot: RobotState, profile: RobotProfile) -> dict:
    prims = [o.primitive for o in world.static_obstacles]
    prims += [d.current_panel for d in world.doors] + [d.current_body for d in world.drawers]
    prims += [o.primitive for o in world.free_objects] + [s.patch for s in world.stains]
    polys = [p.tolist() for p in (_outline_xy(q) for q in prims) if p is not None]
    base = _outline_xy(base_sphere(robot, profile))
    return {"polygons": polys, "base": base.tolist()}


def _snapshot_svg(shapes: dict, steps: list[dict], px_per_m: float = 100.0) -> str:
    polys = [np.asarray(p) for p in shapes["polygons"]] + [np.asarray(shapes["base"])]
    path = np.array([s["base"][:2] for s in steps]) if steps else np.zeros((0, 2))
    allpts = np.vstack(polys + [path])
    lo, hi = allpts.min(axis=0) - 0.1, allpts.max(axis=0) + 0.1
    w, h = (hi - lo) * px_per_m

    def xy(p: np.ndarray) -> str:
        return f"{(p[0] - lo[0]) * px_per_m:.1f},{(hi[1] - p[1]) * px_per_m:.1f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" viewBox="0 0 {w:.1f} {h:.1f}">',
        f'<rect width="{w:.1f}" height="{h:.1f}" fill="white"/>',
    ]
    for p in polys[:-1]:
        out.append(f'<polygon points="{" ".join(xy(q) for q in p)}" fill="#ddd" stroke="#555" stroke-width="1"/>')
    out.append(f'<polygon points="{" ".join(xy(q) for q in polys[-1])}" fill="none" stroke="#26c" stroke-width="2"/>')
    if len(path) > 1:
        out.append(f'<polyline points="{" ".join(xy(q) for q in path)}" fill="none" stroke="#c22" stroke-width="1.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# Navigation


def free_cells(world: SceneWorld, profile: RobotProfile) -> np.ndarray:
    """Traversable cells: unlabeled, plus door regions opened wide enough to pass."""
    cells = world.map.cells
    free = cells == 0
    for d in world.doors:
        if d.map_label and d.passage() >= profile.passage_width - 1e-9:
            free |= cells == d.map_label
    return free


def navigate(
    world: SceneWorld, robot: RobotState, goal_cell: tuple[int, int], profile: RobotProfile = RobotProfile()
) -> tuple[list[tuple[int, int]], RobotState]:
    """Shortest 4-connected path; the base teleports along cell centers."""
    grid = world.map
    goal = (int(goal_cell[0]), int(goal_cell[1]))
    if not grid.in_bounds(goal):
        raise Unreachable(f"goal {list(goal)} outside the {grid.height}x{grid.width} map")
    start = grid.cell_of(robot.base[0], robot.base[1])
    path = bfs_path(free_cells(world, profile), start, goal)
    if path is None:
        raise Unreachable(f"no free path from {list(start)} to {list(goal)}")
    heading = robot.base[2]
    if len(path) > 1:
        (r0, c0), (r1, c1) = path[-2], path[-1]
        heading = math.atan2(r1 - r0, c1 - c0)
    x, y = grid.cell_center(goal)
    return path, RobotState((x, y, heading), robot.ee_pose, robot.gripper, robot.held, robot.grasped)


# Articulation updates


def update_door(door: Door, ee: Any) -> tuple[Door, bool]:
    """Door angle from the tool position; slip when it leaves the handle circle."""
    p = np.asarray(vec3(ee))
    k = np.asarray(door.hinge.direction)
    a = np.asarray(door.hinge.point)
    ref = door.handle.centroid() - a
    ref = ref - (ref @ k) * k
    v = p - a
    v = v - (v @ k) * k
    radial = float(np.linalg.norm(v))
    if abs(radial - door.handle_radius) > SLIP_TOL:
        return door, True
    angle = math.atan2(float(np.cross(ref, v) @ k), float(ref @ v))
    lo, hi = door.hinge.swing_range
    new = copy.copy(door)
    new.angle = min(max(angle, lo), hi)
    return new, False


def update_drawer(drawer: Drawer, ee: Any) -> tuple[Drawer, bool]:
    """Extension from the tool displacement along the slide axis, clamped."""
    p = np.asarray(vec3(ee))
    n = np.asarray(drawer.axis)
    d = p - drawer.handle.centroid()
    along = float(d @ n)
    lateral = float(np.linalg.norm(d - along * n))
    if lateral > SLIP_TOL:
        return drawer, True
    new = copy.copy(drawer)
    new.extension = min(max(along, 0.0), drawer.max_extension)
    return new, False


def densify(points: Any, step: float = WIPE_DENSIFY) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        return pts
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / step)))
        out.append(a + np.outer(np.arange(1, n + 1) / n, b - a))
    return np.vstack(out)


def wipe_sweep(world: SceneWorld, patch_id: str, ee_path: Any, wipe_radius: float) -> float:
    """Mark stain grid cells within ``wipe_radius`` of any path point; returns coverage."""
    stain = world.get(patch_id)
    if not isinstance(stain, Stain):
        raise KeyError(f"{patch_id} is not a stain")
    pts = np.asarray(ee_path, dtype=float).reshape(-1, 3)
    if len(pts):
        grid = stain.grid_points()
        todo = np.flatnonzero(~stain.covered)
        for chunk in np.array_split(todo, max(1, len(todo) // 512)):
            if len(chunk) == 0:
                continue
            d = np.linalg.norm(grid[chunk, None, :] - pts[None, :, :], axis=2).min(axis=1)
            stain.covered[chunk[d <= wipe_radius]] = True
    return stain.coverage


# Support and grasp geometry


def _vertical_interval(prim: GeometricPrimitive, x: float, y: float) -> tuple[float, float] | None:
    """z-range where the vertical line through (x, y) is inside ``prim``."""
    if isinstance(prim, Cuboid):
        axes, c, half = prim.axes, np.asarray(prim.center), np.asarray(prim.half_extents)
        a = (np.array([x, y, 0.0]) - c) @ axes
        b = axes[2]
        lo, hi = -math.inf, math.inf
        for k in range(3):
            if abs(b[k]) < 1e-12:
                if abs(a[k]) > half[k]:
                    return None
                continue
            t1, t2 = (-half[k] - a[k]) / b[k], (half[k] - a[k]) / b[k]
            lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
        return (lo, hi) if lo <= hi else None
    if isinstance(prim, Cylinder):
        d = np.asarray(prim.axis_dir)
        if abs(d[2]) < 0.99:
            return None
        if math.hypot(x - prim.center[0], y - prim.center[1]) > prim.radius:
            return None
        zs = (prim.axis_point[2], prim.top_center[2])
        return min(zs), max(zs)
    return None


def grasp_dimension(prim: GeometricPrimitive) -> float:
    if isinstance(prim, (Sphere, Cylinder)):
        return 2.0 * prim.radius
    if isinstance(prim, Cuboid):
        return 2.0 * float(min(prim.half_extents))
    if isinstance(prim, ConvexEnvelope):
        return float(np.ptp(prim.points, axis=0).min())
    return math.inf


def _bottom(prim: GeometricPrimitive) -> float:
    return float(prim.centroid()[2]) - 0.5 * vertical_extent(prim)


# Simulator


class Simulator:
    """Single-threaded state machine over a world and a robot."""

    def __init__(self, world: SceneWorld, robot: RobotState, profile: RobotProfile = RobotProfile()):
        self.world = world
        self.robot = robot
        self.profile = profile
        self.trace = ExecutionTrace()
        self.step_index = 0
        # objects the current subtask is meant to touch (its targets)
        self.exempt: set[str] = set()

    # collision

    def collision_obstacles(self) -> list[GeometricPrimitive]:
        skip = set(self.exempt)
        if self.robot.grasped:
            skip.add(self.robot.grasped[1])
        obs = [o.primitive for o in self.world.static_obstacles if o.object_id not in skip]
        for d in self.world.doors:
            if d.object_id not in skip:
                obs += [d.current_panel, d.current_handle]
        return obs

    def _clearance(self, centers: np.ndarray, radius: float) -> tuple[float, int]:
        best, which = math.inf, -1
        for i, o in enumerate(self.collision_obstacles()):
            c = float(o.signed_distance(centers).min()) - radius
            if c < best:
                best, which = c, i
        return best, which

    def _check_base(self, events: list[Event]) -> None:
        s = base_sphere(self.robot, self.profile)
        c, _ = self._clearance(np.asarray([s.center]), s.radius)
        if c < 0:
            events.append(Event(self.step_index, "collision", "base sphere interpenetrates an obstacle", c))

    def _check_wrist(self, events: list[Event]) -> None:
        if self.robot.ee_pose is not None:
            c, _ = self._clearance(wrist_center(self.robot.ee_pose).reshape(1, 3), EE_SPHERE_RADIUS)
            if c < 0:
                events.append(Event(self.step_index, "collision", "wrist sphere interpenetrates an obstacle", c))

    def move_base(self, x: float, y: float, heading: float) -> None:
        """Translate the base; the arm keeps its pose relative to the base."""
        dx, dy = x - self.robot.base[0], y - self.robot.base[1]
        self.robot.base = (x, y, heading)
        if self.robot.ee_pose is not None:
            p = np.asarray(self.robot.ee_pose.position) + [dx, dy, 0.0]
            self.robot.ee_pose = Pose(tuple(p), self.robot.ee_pose.orientation)
            self._follow([])

    # stepping

    def step_to_waypoint(self, wp: Waypoint, prev: Pose | None = None) -> list[Event]:
        events: list[Event] = []
        target = np.asarray(wp.pose.position)
        dist = float(np.linalg.norm(target - self.robot.mount))
        if dist > self.profile.arm_reach_radius + 1e-9:
            events.append(Event(self.step_index, "reach-violation", f"waypoint {dist:.3f} m from the arm mount", dist))
            return events
        a = wrist_center(prev) if prev is not None else wrist_center(wp.pose)
        b = wrist_center(wp.pose)
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / SWEEP_STEP)))
        centers = a + np.outer(np.linspace(0.0, 1.0, n + 1), b - a)
        c, _ = self._clearance(centers, EE_SPHERE_RADIUS)
        if c < 0:
            events.append(Event(self.step_index, "collision", "wrist sphere interpenetrates an obstacle", c))
        self.robot.ee_pose = wp.pose
        self._follow(events)
        self._apply_gripper(wp.gripper, events)
        return events

    def _follow(self, events: list[Event]) -> None:
        ee = self.robot.ee_pose
        if self.robot.grasped:
            kind, oid = self.robot.grasped
            rec = self.world.get(oid)
            if kind == "door":
                new, slip = update_door(rec, ee.position)
                rec.angle = new.angle
            else:
                new, slip = update_drawer(rec, ee.position)
                rec.extension = new.extension
            if slip:
                self.robot.grasped = None
                events.append(Event(self.step_index, "slip", f"tool left the {kind} handle of {oid}"))
        if self.robot.held:
            h = self.robot.held
            delta = ee.as_transform() @ h.grasp_ee.inverse()
            self.world.get(h.object_id).primitive = h.grasp_primitive.transformed(delta)

    def _apply_gripper(self, cmd: Any, events: list[Event]) -> None:
        state = cmd if isinstance(cmd, str) else ("closed" if cmd < 1e-3 else "open")
        if state == self.robot.gripper:
            return
        self.robot.gripper = state
        if state == "closed":
            self._grasp(events)
        else:
            self._release()

    def _grasp(self, events: list[Event]) -> None:
        p = np.asarray(self.robot.ee_pose.position).reshape(1, 3)
        best = None
        candidates = [("free", o.object_id, o.primitive) for o in self.world.free_objects]
        candidates += [("door", d.object_id, d.current_handle) for d in self.world.doors]
        candidates += [("drawer", d.object_id, d.current_handle) for d in self.world.drawers]
        for kind, oid, prim in candidates:
            d = float(prim.signed_distance(p)[0])
            if d <= GRASP_TOL and grasp_dimension(prim) <= self.profile.gripper_aperture_max:
                if best is None or d < best[0]:
                    best = (d, kind, oid, prim)
        if best is None:
            events.append(Event(self.step_index, "grasp-miss", "no graspable part within 2 cm"))
            return
        _, kind, oid, prim = best
        if kind == "free":
            mouth = top_opening(prim).center if isinstance(prim, Cylinder) else None
            self.robot.held = Held(oid, self.robot.ee_pose.as_transform(), prim, mouth)
            self.world.get(oid).resting_on = None
        else:
            self.robot.grasped = (kind, oid)

    def _release(self) -> None:
        self.robot.grasped = None
        if self.robot.held:
            oid = self.robot.held.object_id
            self.robot.held = None
            self.settle(oid)

    def supports_below(self, prim: GeometricPrimitive) -> list[tuple[float, str | None]]:
        """Candidate resting heights under an object's centroid, with the support id."""
        x, y = prim.centroid()[:2]
        out: list[tuple[float, str | None]] = [(0.0, None)]
        for s in self.world.static_obstacles:
            iv = _vertical_interval(s.primitive, x, y)
            if iv is not None:
                out.append((iv[0] + CONTAINER_FLOOR if s.container else iv[1], s.object_id))
        for d in self.world.drawers:
            iv = _vertical_interval(d.current_body, x, y)
            if iv is not None:
                out.append((iv[0] + CONTAINER_FLOOR, d.object_id))
        for d in self.world.doors:
            iv = _vertical_interval(d.current_panel, x, y)
            if iv is not None:
                out.append((iv[1], d.object_id))
        return out

    def settle(self, object_id: str) -> None:
        """Drop a released object straight down onto the highest support beneath it."""
        obj = self.world.get(object_id)
        bottom = _bottom(obj.primitive)
        below = [(z, sid) for z, sid in self.supports_below(obj.primitive) if z <= bottom + 1e-6]
        z, sid = max(below, key=lambda t: t[0])
        obj.primitive = obj.primitive.transformed(RigidTransform.from_translation((0.0, 0.0, z - bottom)))
        obj.resting_on = sid

    def execute_waypoints(self, index: int, waypoints: list[Waypoint]) -> list[Event]:
        events: list[Event] = []
        prev = None
        for wp in waypoints:
            evs = self.step_to_waypoint(wp, prev)
            self.trace.record(index, self.robot, "waypoint")
            self.step_index += 1
            events += evs
            if any(e.kind in ("collision", "reach-violation", "slip") for e in evs):
                break
            prev = wp.pose
        return events


# Plan execution


TrajectorySource = Sequence[TrajectorySpec | None] | Callable[[int, Subtask, "Simulator"], tuple[TrajectorySpec, str]]


def _pose_tilt(a: Any, b: Any) -> float:
    q = quat_multiply(b, quat_conjugate(a))
    return 2.0 * math.acos(min(1.0, abs(q[0])))


def _required_open_sweep(door: Door, subtask: Subtask, profile: RobotProfile) -> float:
    from .trajectory import required_sweep

    obj = ParamObject(door.object_id, door.class_label, (("panel", door.panel),))
    return required_sweep(door.width, required_passage(obj, subtask.params, profile))


def check_success(sim: Simulator, st: Subtask, before: dict, spec: TrajectorySpec | None) -> tuple[bool, str]:
    """Per-verb success criteria evaluated on the simulator's true state."""
    world, robot = sim.world, sim.robot
    if st.verb == "navigate":
        cell = world.map.cell_of(robot.base[0], robot.base[1])
        ok = tuple(cell) == tuple(st.params["goal"])
        return ok, "" if ok else f"base in cell {list(cell)}"
    rec = world.get(st.targets[0])
    if st.verb in ("open", "close") and isinstance(rec, Door):
        if st.verb == "open":
            need = _required_open_sweep(rec, st, sim.profile)
            ok = rec.angle >= need - 1e-9
            return ok, "" if ok else f"door angle {rec.angle:.4f} below required {need:.4f}"
        goal = rec.hinge.swing_range[0] + 0.02
        ok = rec.angle <= goal
        return ok, "" if ok else f"door angle {rec.angle:.4f} not closed"
    if st.verb in ("open", "close") and isinstance(rec, Drawer):
        length = 0.0
        if spec is not None:
            length = float(np.linalg.norm(np.asarray(spec.curve.end_point) - np.asarray(spec.curve.start_point)))
        if st.verb == "open":
            depth = 2.0 * float(min(rec.body.half_extents))
            want = float(st.params.get("pull_distance", depth))
            need = min(before["drawers"][rec.object_id] + want, rec.max_extension)
            ok = rec.extension >= need - 1e-9
        else:
            want = float(st.params.get("distance", length))
            need = max(before["drawers"][rec.object_id] - want, 0.0)
            ok = rec.extension <= need + 1e-9
        return ok, "" if ok else f"drawer extension {rec.extension:.4f} vs required {need:.4f}"
    if st.verb == "pick":
        ok = robot.held_id == st.targets[0]
        return ok, "" if ok else f"holding {robot.held_id!r}"
    if st.verb == "place":
        if robot.held_id == rec.object_id:
            return False, "object still held"
        dest = st.params["destination"]
        point = top_opening(_current_primitive(world.get(dest))).center if isinstance(dest, str) else np.asarray(dest)
        off = float(np.linalg.norm(rec.primitive.centroid()[:2] - point[:2]))
        if off > PLACE_TOL:
            return False, f"placed {off:.3f} m from the destination"
        if isinstance(dest, str) and rec.resting_on != dest:
            return False, f"resting on {rec.resting_on!r}, not {dest!r}"
        others = [o for o in sim.collision_obstacles() if not (isinstance(dest, str) and o is _current_primitive(world.get(dest)))]
        pts = rec.primitive.sample_surface(0.01)
        clear = min((float(o.signed_distance(pts).min()) for o in others), default=math.inf)
        if clear < -1e-9:
            return False, f"placed object interpenetrates an obstacle ({clear:.4f} m)"
        return True, ""
    if st.verb == "pour":
        h = robot.held
        if h is None or h.object_id != rec.object_id:
            return False, "vessel not held"
        tilt = _pose_tilt(h.grasp_ee.rotation, robot.ee_pose.orientation)
        if tilt < MIN_POUR_TILT - 1e-9:
            return False, f"tilt {tilt:.3f} rad below {MIN_POUR_TILT}"
        if h.mouth is None:
            return False, "vessel has no mouth"
        delta = robot.ee_pose.as_transform() @ h.grasp_ee.inverse()
        mouth = delta.apply(h.mouth)
        opening = top_opening(_current_primitive(world.get(st.params["into"])))
        off = float(np.linalg.norm(mouth[:2] - opening.center[:2]))
        if off > opening.radius or mouth[2] < opening.center[2]:
            return False, f"mouth {off:.3f} m off the opening center (radius {opening.radius:.3f} m)"
        return True, ""
    if st.verb == "wipe":
        cov = rec.coverage
        ok = cov >= WIPE_COVERAGE_GOAL
        return ok, "" if ok else f"coverage {cov:.3f} below {WIPE_COVERAGE_GOAL}"
    return False, f"no success criterion for {st.verb}"


def _current_primitive(rec: Any) -> GeometricPrimitive:
    if isinstance(rec, Door):
        return rec.current_panel
    if isinstance(rec, Drawer):
        return rec.current_body
    if isinstance(rec, Stain):
        return rec.patch
    return rec.primitive


def execute_plan(
    world: SceneWorld,
    robot: RobotState,
    plan: Plan,
    trajectories: TrajectorySource,
    profile: RobotProfile = RobotProfile(),
) -> tuple[list[SubtaskResult], ExecutionTrace, Simulator]:
    """Run subtasks in order, aborting at the first failure.

    ``trajectories`` is either a per-subtask list (None for navigate) or a
    callable ``(index, subtask, simulator) -> (spec, provenance)`` invoked
    just before each manipulation subtask, so specs can be synthesized from
    the state left by earlier subtasks. World and robot are copied.
    """
    sim = Simulator(world.copy(), copy.deepcopy(robot), profile)
    results: list[SubtaskResult] = []
    sim.trace.snapshots.append(sim.world.state_dict())
    sim.trace.outlines.append(_snapshot_outlines(sim.world, sim.robot, profile))
    for i, st in enumerate(plan.subtasks):
        result = _run_subtask(sim, i, st, trajectories)
        results.append(result)
        sim.trace.snapshots.append(sim.world.state_dict())
        sim.trace.outlines.append(_snapshot_outlines(sim.world, sim.robot, profile))
        if not result.success:
            break
    sim.trace.success = bool(plan.subtasks) and len(results) == len(plan.subtasks) and all(r.success for r in results)
    return results, sim.trace, sim


def _run_subtask(sim: Simulator, i: int, st: Subtask, trajectories: TrajectorySource) -> SubtaskResult:
    if st.verb == "navigate":
        try:
            path, moved = navigate(sim.world, sim.robot, tuple(st.params["goal"]), sim.profile)
        except Unreachable as exc:
            return SubtaskResult(i, st.verb, False, f"Unreachable: {exc}")
        events: list[Event] = []
        grid = sim.world.map
        heading = moved.base[2]
        for cell in path[1:]:
            x, y = grid.cell_center(cell)
            sim.move_base(x, y, heading)
            sim._check_base(events)
            sim._check_wrist(events)
            sim.trace.record(i, sim.robot, "navigate")
            sim.step_index += 1
        ok, why = check_success(sim, st, {}, None)
        if events:
            ok, why = False, events[0].detail
        return SubtaskResult(i, st.verb, ok, why, events)

    before = sim.world.state_dict()
    provenance = None
    try:
        if callable(trajectories):
            spec, provenance = trajectories(i, st, sim)
        else:
            spec = trajectories[i]
        if spec is None:
            return SubtaskResult(i, st.verb, False, "no trajectory for manipulation subtask")
        waypoints = sample_waypoints(spec, None, sim.robot.gripper)
    except DomainError as exc:
        return SubtaskResult(i, st.verb, False, f"{type(exc).__name__}: {exc}")
    events = []
    sim._check_base(events)
    sim.exempt = set(st.targets)
    try:
        events += sim.execute_waypoints(i, waypoints)
    finally:
        sim.exempt = set()
    if sim.robot.gripper == "open" and sim.robot.held is None and sim.robot.grasped is None:
        sim.robot.ee_pose = None  # empty hand: the arm stows between subtasks
    if st.verb == "wipe" and sim.robot.held_id == st.params.get("with"):
        path = densify([w.pose.position for w in waypoints])
        radius = float(st.params.get("wipe_radius", DEFAULT_WIPE_RADIUS))
        wipe_sweep(sim.world, st.targets[0], path, radius)
    blocking = [e for e in events if e.kind in ("collision", "reach-violation", "slip", "grasp-miss")]
    if blocking:
        return SubtaskResult(i, st.verb, False, f"{blocking[0].kind}: {blocking[0].detail}", events, provenance)
    ok, why = check_success(sim, st, before, spec)
    return SubtaskResult(i, st.verb, ok, why, events, provenance)


# Perception


def _fit_like(prim: GeometricPrimitive, points: np.ndarray) -> GeometricPrimitive:
    if isinstance(prim, Sphere):
        return fit_sphere(points).primitive
    if isinstance(prim, Cylinder):
        return fit_cylinder(points).primitive
    if isinstance(prim, Cuboid):
        return fit_cuboid(points).primitive
    if isinstance(prim, ConvexEnvelope):
        return fit_envelope(points).primitive
    return prim


def _sample_resolution(prim: GeometricPrimitive) -> float:
    if isinstance(prim, Sphere):
        size = prim.radius
    elif isinstance(prim, Cylinder):
        size = min(prim.radius, prim.height)
    elif isinstance(prim, Cuboid):
        size = float(np.sort(prim.half_extents)[1])
    else:
        size = float(np.ptp(prim.points, axis=0).max()) / 2
    return float(np.clip(size / 4, 0.004, 0.02))


def observe(prim: GeometricPrimitive, rng: np.random.Generator | None, sigma: float) -> GeometricPrimitive:
    """Re-fit a primitive from its surface samples perturbed by Gaussian noise."""
    if rng is None:
        return prim
    pts = prim.sample_surface(_sample_resolution(prim))
    if sigma > 0:
        pts = pts + rng.normal(0.0, sigma, pts.shape)
    return _fit_like(prim, pts)


def perceive(
    world: SceneWorld,
    noisy_ids: set[str] | frozenset = frozenset(),
    rng: np.random.Generator | None = None,
    sigma: float = DEFAULT_PERCEPTION_NOISE,
) -> list[ParamObject]:
    """Parameterized objects for the current world state.

    Objects in ``noisy_ids`` are re-fitted from noisy surface samples; door
    hinges are then derived from the fitted panel and handle. Their swing
    range is expressed relative to the current opening angle.
    """
    out: list[ParamObject] = []

    def obs(oid: str, prim: GeometricPrimitive) -> GeometricPrimitive:
        return observe(prim, rng, sigma) if oid in noisy_ids else prim

    for s in world.static_obstacles:
        out.append(ParamObject(s.object_id, s.class_label, (("body", obs(s.object_id, s.primitive)),), None, s.map_label))
    for d in world.doors:
        lo, hi = d.hinge.swing_range
        rel = (lo - d.angle, hi - d.angle)
        if d.object_id in noisy_ids:
            panel, handle = obs(d.object_id, d.current_panel), obs(d.object_id, d.current_handle)
            hinge = derive_hinge(panel, handle, d.hinge.direction, rel)
        else:
            panel, handle = d.current_panel, d.current_handle
            hinge = HingeAxis(d.hinge.point, d.hinge.direction, rel)
        parts = (("panel", panel), ("handle", handle), ("hinge", hinge))
        out.append(ParamObject(d.object_id, d.class_label, parts, "handle", d.map_label))
    for d in world.drawers:
        parts = (("body", obs(d.object_id, d.current_body)), ("handle", obs(d.object_id, d.current_handle)))
        out.append(ParamObject(d.object_id, d.class_label, parts, "handle", d.map_label))
    for o in world.free_objects:
        out.append(ParamObject(o.object_id, o.class_label, (("body", obs(o.object_id, o.primitive)),)))
    for s in world.stains:
        out.append(ParamObject(s.object_id, s.class_label, (("patch", obs(s.object_id, s.patch)),)))
    return out
