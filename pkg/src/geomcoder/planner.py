"""Plans, plan validation, the skill cache and trajectory synthesis providers.

A subtask is turned into a :class:`TrajectorySpec` by a provider. The built-in
:class:`TemplateProvider` picks a parametric recipe (template) by verb and by
the parts the target object exposes. Validated recipes are cached per
(object class, verb) and re-instantiated from current geometry on later hits.
"""

from __future__ import annotations

import json
import math
import subprocess
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np

from .errors import (
    DomainError,
    GeomCoderError,
    MissingPrimitive,
    ParseError,
    SchemaError,
    SweepOutOfRange,
    SynthesisFailed,
)
from .geometry import (
    ConvexEnvelope,
    Cuboid,
    Cylinder,
    GeometricPrimitive,
    HingeAxis,
    ParamObject,
    Plane,
    Pose,
    RobotProfile,
    Sphere,
    matrix_to_quat,
    primitive_clearance,
    vec3,
)
from .grid import bfs_path
from .jsonio import canonical, loads, read_json, write_json
from .scene import BirdsEyeMap
from .trajectory import (
    DEFAULT_WAYPOINTS,
    Arc,
    Composite,
    ConstraintReport,
    ConstraintSet,
    Fixed,
    LineSegment,
    RadialFacing,
    TrajectorySpec,
    check_constraints,
    required_sweep,
    synth_bezier_avoid,
    synth_door_arc,
    synth_drawer_pull,
    synth_pour,
    top_opening,
    vertical_extent,
)

VERBS = ("navigate", "open", "close", "pick", "place", "pour", "wipe")
REQUIRED_PARAMS = {
    "navigate": ("goal",),
    "open": (),
    "close": (),
    "pick": (),
    "place": ("destination",),
    "pour": ("into",),
    "wipe": ("with",),
}
# Objects within this distance of a subtask target count as its supports.
CONTACT_TOL = 0.01
PICK_WAYPOINTS = 17


# Plans


@dataclass(frozen=True)
class Instruction:
    text: str

    def __post_init__(self) -> None:
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("instruction text must be a non-empty string")


@dataclass(frozen=True)
class Subtask:
    verb: str
    targets: tuple[str, ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.verb not in VERBS:
            raise ValueError(f"unknown verb {self.verb!r}")
        object.__setattr__(self, "targets", tuple(str(t) for t in self.targets))
        object.__setattr__(self, "params", dict(self.params))

    def to_dict(self) -> dict:
        return {"verb": self.verb, "targets": list(self.targets), "params": canonical(self.params)}


@dataclass(frozen=True)
class Plan:
    instruction: Instruction
    subtasks: tuple[Subtask, ...]

    def to_dict(self) -> dict:
        return {"instruction": self.instruction.text, "subtasks": [s.to_dict() for s in self.subtasks]}


def _parse_subtask(i: int, d: Any) -> Subtask:
    where = f"subtasks[{i}]"
    if not isinstance(d, dict):
        raise SchemaError(where, "expected an object")
    unknown = set(d) - {"verb", "targets", "params"}
    if unknown:
        raise SchemaError(f"{where}.{sorted(unknown)[0]}", "unknown field")
    verb = d.get("verb")
    if verb not in VERBS:
        raise SchemaError("verb", f"{where}: unknown verb {verb!r}; expected one of {', '.join(VERBS)}")
    targets = d.get("targets", [])
    if not isinstance(targets, list) or not all(isinstance(t, str) and t for t in targets):
        raise SchemaError("targets", f"{where}: targets must be a list of object ids")
    if verb != "navigate" and not targets:
        raise SchemaError("targets", f"{where}: {verb} needs at least one target")
    params = d.get("params", {})
    if not isinstance(params, dict):
        raise SchemaError("params", f"{where}: params must be an object")
    for key in REQUIRED_PARAMS[verb]:
        if key not in params:
            raise SchemaError(f"params.{key}", f"{where}: {verb} requires {key}")
    if verb == "navigate":
        goal = params["goal"]
        if not (isinstance(goal, list) and len(goal) == 2 and all(isinstance(v, int) and not isinstance(v, bool) for v in goal)):
            raise SchemaError("params.goal", f"{where}: goal must be [row, col] integers")
    return Subtask(verb, tuple(targets), params)


def subtask_from_dict(d: Any) -> Subtask:
    """Schema-check a single subtask document."""
    return _parse_subtask(0, d)


def plan_from_dict(doc: Any) -> Plan:
    if not isinstance(doc, dict):
        raise SchemaError("plan", "expected a JSON object")
    unknown = set(doc) - {"instruction", "subtasks"}
    if unknown:
        raise SchemaError(sorted(unknown)[0], "unknown field")
    text = doc.get("instruction")
    if not isinstance(text, str) or not text.strip():
        raise SchemaError("instruction", "must be a non-empty string")
    subtasks = doc.get("subtasks")
    if not isinstance(subtasks, list):
        raise SchemaError("subtasks", "must be a list")
    return Plan(Instruction(text), tuple(_parse_subtask(i, s) for i, s in enumerate(subtasks)))


def load_plan(data: bytes | str, source: str = "<plan>") -> Plan:
    """Parse and schema-check a plan document.

    An empty subtask list loads fine; :func:`validate_plan` reports it.
    """
    return plan_from_dict(loads(data, source))


def save_plan(plan: Plan) -> dict:
    return canonical(plan.to_dict())


# Plan validation


@dataclass(frozen=True)
class PlanIssue:
    kind: str
    subtask_index: int | None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "subtask_index": self.subtask_index, "detail": self.detail}


def _door_objects(objects: list[ParamObject]) -> dict[int, ParamObject]:
    return {o.map_label: o for o in objects if o.has("hinge") and o.map_label}


def _free_mask(grid: BirdsEyeMap, open_labels: set[int]) -> np.ndarray:
    cells = grid.cells
    free = cells == 0
    for lab in open_labels:
        free |= cells == lab
    return free


def _resolve_destination(value: Any, by_id: dict[str, ParamObject]) -> str | None:
    """Return an error detail, or None when the destination is usable."""
    if isinstance(value, str):
        return None if value in by_id else value
    if isinstance(value, list) and len(value) == 3 and all(isinstance(v, (int, float)) for v in value):
        return None
    return repr(value)


def validate_plan(
    plan: Plan,
    scene_objects: list[ParamObject],
    grid: BirdsEyeMap,
    start_cell: tuple[int, int] | None = None,
    open_doors: tuple[str, ...] = (),
) -> list[PlanIssue]:
    """Static checks of a plan against the scene; issues are returned, not raised.

    Checked: the plan is non-empty; every target and referenced object
    resolves; verb parameters are present; navigation goals are in bounds and
    reachable given which doors earlier subtasks opened (a route that needs a
    closed door yields ``missing-prerequisite: open(<door>)``); objects are
    picked before they are placed, poured or wiped with.
    """
    issues: list[PlanIssue] = []
    if not plan.subtasks:
        return [PlanIssue("empty-plan", None, "plan has no subtasks")]
    by_id = {o.object_id: o for o in scene_objects}
    doors = _door_objects(scene_objects)
    open_labels = {o.map_label for o in scene_objects if o.object_id in open_doors and o.map_label}
    door_label_of = {o.object_id: lab for lab, o in doors.items()}
    cell = tuple(start_cell) if start_cell is not None else None
    held: set[str] = set()
    for i, st in enumerate(plan.subtasks):
        for t in st.targets:
            if t not in by_id:
                issues.append(PlanIssue("unresolved-object", i, t))
        for key in REQUIRED_PARAMS[st.verb]:
            if key not in st.params:
                issues.append(PlanIssue("missing-param", i, f"{st.verb} requires {key}"))
        for key in ("into", "with"):
            if key in st.params and st.params[key] not in by_id:
                issues.append(PlanIssue("unresolved-object", i, str(st.params[key])))
        if "destination" in st.params:
            bad = _resolve_destination(st.params["destination"], by_id)
            if bad is not None:
                issues.append(PlanIssue("unresolved-object", i, bad))

        if st.verb == "navigate" and "goal" in st.params:
            goal = tuple(st.params["goal"])
            if not grid.in_bounds(goal):
                issues.append(PlanIssue("out-of-bounds", i, f"goal {list(goal)} outside {grid.height}x{grid.width} map"))
                continue
            if cell is not None:
                if bfs_path(_free_mask(grid, open_labels), cell, goal) is None:
                    issues.append(_blocked_issue(i, grid, cell, goal, open_labels, doors))
            cell = goal
        elif st.verb == "open":
            for t in st.targets:
                if t in door_label_of:
                    open_labels.add(door_label_of[t])
        elif st.verb == "close":
            for t in st.targets:
                open_labels.discard(door_label_of.get(t, -1))
        elif st.verb == "pick":
            held.update(st.targets)
        elif st.verb in ("place", "pour"):
            for t in st.targets:
                if t in by_id and t not in held:
                    issues.append(PlanIssue(f"missing-prerequisite: pick({t})", i, f"{st.verb} before pick"))
            if st.verb == "place":
                held.difference_update(st.targets)
        elif st.verb == "wipe":
            tool = st.params.get("with")
            if tool in by_id and tool not in held:
                issues.append(PlanIssue(f"missing-prerequisite: pick({tool})", i, "wipe without holding the tool"))
    return sorted(issues, key=lambda p: (p.subtask_index if p.subtask_index is not None else -1, p.kind, p.detail))


def _blocked_issue(
    i: int,
    grid: BirdsEyeMap,
    start: tuple[int, int],
    goal: tuple[int, int],
    open_labels: set[int],
    doors: dict[int, ParamObject],
) -> PlanIssue:
    all_open = open_labels | set(doors)
    path = bfs_path(_free_mask(grid, all_open), start, goal)
    if path is None:
        return PlanIssue("unreachable", i, f"no route from {list(start)} to {list(goal)}")
    crossed = sorted({int(grid.cells[c]) for c in path} & (set(doors) - open_labels))
    names = ", ".join(f"open({doors[lab].object_id})" for lab in crossed)
    return PlanIssue(f"missing-prerequisite: {names}", i, f"route to {list(goal)} crosses a closed door")


# Skill cache


@dataclass(frozen=True, order=True)
class SkillKey:
    class_label: str
    verb: str

    def __post_init__(self) -> None:
        if not self.class_label or not self.verb:
            raise ValueError("skill key fields must be non-empty")


@dataclass(frozen=True)
class SkillRecord:
    key: SkillKey
    template_id: str
    default_params: dict = field(default_factory=dict)
    successes: int = 0
    failures: int = 0
    created_seq: int = -1

    def __post_init__(self) -> None:
        if self.successes < 0 or self.failures < 0:
            raise ValueError("validation counts must be >= 0")

    def to_dict(self) -> dict:
        return {
            "key": {"class_label": self.key.class_label, "verb": self.key.verb},
            "template_id": self.template_id,
            "default_params": canonical(self.default_params),
            "validation_stats": {"successes": self.successes, "failures": self.failures},
            "created_seq": self.created_seq,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SkillRecord:
        try:
            stats = d.get("validation_stats", {})
            return cls(
                SkillKey(str(d["key"]["class_label"]), str(d["key"]["verb"])),
                str(d["template_id"]),
                dict(d.get("default_params", {})),
                int(stats.get("successes", 0)),
                int(stats.get("failures", 0)),
                int(d.get("created_seq", -1)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SchemaError("records", f"malformed skill record: {exc}") from exc


class SkillCache:
    """Unbounded (class, verb) -> recipe store with hit/miss counters.

    Mutations are serialized by an internal lock, so one cache may be shared
    between threads as long as a single writer drives synthesis.
    """

    def __init__(self) -> None:
        self._records: dict[SkillKey, SkillRecord] = {}
        self.hits = 0
        self.misses = 0
        self._next_seq = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> dict[SkillKey, SkillRecord]:
        return dict(self._records)

    def get(self, key: SkillKey) -> SkillRecord | None:
        with self._lock:
            rec = self._records.get(key)
            if rec is None:
                self.misses += 1
            else:
                self.hits += 1
            return rec

    def put(self, record: SkillRecord) -> SkillRecord:
        with self._lock:
            old = self._records.get(record.key)
            if old is not None:
                seq = old.created_seq
            else:
                seq = self._next_seq
                self._next_seq += 1
            stored = replace(record, created_seq=seq)
            self._records[record.key] = stored
            return stored

    def stats(self) -> dict:
        return {"records": len(self._records), "hits": self.hits, "misses": self.misses}

    def to_dict(self) -> dict:
        recs = sorted(self._records.values(), key=lambda r: r.created_seq)
        return {
            "records": [r.to_dict() for r in recs],
            "hits": self.hits,
            "misses": self.misses,
            "next_seq": self._next_seq,
        }

    @classmethod
    def from_dict(cls, d: Any) -> SkillCache:
        if not isinstance(d, dict) or not isinstance(d.get("records", []), list):
            raise SchemaError("cache", "expected {records, hits, misses, next_seq}")
        cache = cls()
        for item in d.get("records", []):
            rec = SkillRecord.from_dict(item)
            cache._records[rec.key] = rec
        try:
            cache.hits = int(d.get("hits", 0))
            cache.misses = int(d.get("misses", 0))
            seqs = [r.created_seq for r in cache._records.values()]
            cache._next_seq = max(int(d.get("next_seq", 0)), max(seqs, default=-1) + 1)
        except (TypeError, ValueError) as exc:
            raise SchemaError("cache", str(exc)) from exc
        if cache.hits < 0 or cache.misses < 0:
            raise SchemaError("cache", "counters must be >= 0")
        return cache

    @classmethod
    def load(cls, path: str | Path) -> SkillCache:
        """Load from disk; a missing file is an empty cache."""
        p = Path(path)
        if not p.exists():
            return cls()
        return cls.from_dict(read_json(p))

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_dict())


def cache_get(cache: SkillCache, key: SkillKey) -> SkillRecord | None:
    return cache.get(key)


def cache_put(cache: SkillCache, record: SkillRecord) -> SkillCache:
    cache.put(record)
    return cache


# Obstacles per subtask


def primitive_aabb(prim: GeometricPrimitive) -> tuple[np.ndarray, np.ndarray] | None:
    """Axis-aligned bounds, or None for unbounded primitives."""
    if isinstance(prim, Sphere):
        c = np.asarray(prim.center)
        return c - prim.radius, c + prim.radius
    if isinstance(prim, Cuboid):
        corners = prim.corners()
        return corners.min(axis=0), corners.max(axis=0)
    if isinstance(prim, Cylinder):
        d = np.asarray(prim.axis_dir)
        ext = prim.radius * np.sqrt(np.clip(1.0 - d * d, 0.0, None))
        ends = np.array([prim.axis_point, prim.top_center])
        return ends.min(axis=0) - ext, ends.max(axis=0) + ext
    if isinstance(prim, ConvexEnvelope):
        return prim.points.min(axis=0), prim.points.max(axis=0)
    return None


def _touching(a: GeometricPrimitive, b: GeometricPrimitive, tol: float = CONTACT_TOL) -> bool:
    box_a, box_b = primitive_aabb(a), primitive_aabb(b)
    if box_a is None or box_b is None:
        return False
    gap = np.maximum(box_a[0] - box_b[1], box_b[0] - box_a[1])
    if float(np.linalg.norm(np.maximum(gap, 0.0))) > tol:
        return False
    if isinstance(a, Sphere) or isinstance(b, Sphere):
        return primitive_clearance(a, b) <= tol
    small, big = (a, b) if np.prod(box_a[1] - box_a[0]) <= np.prod(box_b[1] - box_b[0]) else (b, a)
    return float(big.signed_distance(small.sample_surface(0.005)).min()) <= tol + 0.005


def exempt_ids(subtask: Subtask, objects: list[ParamObject], held: tuple[str, ...] = ()) -> set[str]:
    """Objects a subtask may touch: targets, referenced objects, held objects and the targets' supports."""
    by_id = {o.object_id: o for o in objects}
    ids = set(subtask.targets) | set(held)
    for key in ("destination", "into", "with"):
        v = subtask.params.get(key)
        if isinstance(v, str):
            ids.add(v)
    for t in subtask.targets:
        if t not in by_id or t in held:
            continue
        tparts = [p for _, p in by_id[t].parts if not isinstance(p, (HingeAxis, Plane))]
        for o in objects:
            if o.object_id in ids:
                continue
            if any(_touching(tp, op) for tp in tparts for _, op in o.parts if not isinstance(op, (HingeAxis, Plane))):
                ids.add(o.object_id)
    return ids


def subtask_obstacles(subtask: Subtask, objects: list[ParamObject], held: tuple[str, ...] = ()) -> tuple:
    skip = exempt_ids(subtask, objects, held)
    return tuple(
        p for o in objects if o.object_id not in skip for _, p in o.parts if not isinstance(p, HingeAxis)
    )


# Templates


def _quat_with_z(z: np.ndarray, x_hint: np.ndarray = np.array([0.0, 0.0, -1.0])) -> tuple:
    z = z / np.linalg.norm(z)
    x = x_hint - (x_hint @ z) * z
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0]) - z[0] * z
    x = x / np.linalg.norm(x)
    return matrix_to_quat(np.column_stack([x, np.cross(z, x), z]))


def _obj(objects: list[ParamObject], oid: str) -> ParamObject:
    for o in objects:
        if o.object_id == oid:
            return o
    raise MissingPrimitive(f"object {oid!r} is not among the parameterized objects")


def _need(obj: ParamObject, name: str, verb: str) -> GeometricPrimitive:
    p = obj.part(name)
    if p is None:
        raise MissingPrimitive(f"{verb}({obj.object_id}) needs a {name!r} part; parts are {[n for n, _ in obj.parts]}")
    return p


def _grasp_part(obj: ParamObject) -> GeometricPrimitive:
    if obj.functional_part is not None:
        return obj.part(obj.functional_part)
    return obj.primary


def panel_width(panel: Cuboid, hinge: HingeAxis) -> float:
    """Hinge-to-free-edge width: the face extent least aligned with the hinge."""
    half = np.asarray(panel.half_extents)
    face = sorted(range(3), key=lambda k: (-half[k], k))[:2]
    d = np.asarray(hinge.direction)
    k = min(face, key=lambda i: (abs(float(panel.axes[:, i] @ d)), i))
    return 2.0 * float(half[k])


def required_passage(obj: ParamObject, params: dict, robot: RobotProfile) -> float:
    if "passage" in params:
        return float(params["passage"])
    return robot.passage_width if obj.class_label == "door" else robot.gripper_aperture_max


def _door_sweep(obj: ParamObject, params: dict, robot: RobotProfile) -> float:
    hinge = _need(obj, "hinge", "open")
    panel = _need(obj, "panel", "open")
    if "sweep" in params:
        return float(params["sweep"])
    need = required_sweep(panel_width(panel, hinge), required_passage(obj, params, robot))
    hi = hinge.swing_range[1]
    if need > hi + 1e-12:
        raise SweepOutOfRange(f"required sweep {need:.4f} rad exceeds the remaining swing {hi:.4f} rad")
    return min(max(need, math.pi / 2), hi)


def t_door_arc(st: Subtask, objects: list, cs: ConstraintSet, robot: RobotProfile, params: dict) -> TrajectorySpec:
    obj = _obj(objects, st.targets[0])
    hinge = _need(obj, "hinge", "open")
    handle = _need(obj, "handle", "open")
    _need(obj, "panel", "open")
    arc = synth_door_arc(hinge, handle.centroid(), _door_sweep(obj, params, robot))
    n = int(params.get("waypoint_count", DEFAULT_WAYPOINTS))
    return TrajectorySpec(arc, RadialFacing(), n, ((0, "closed"), (n - 1, "open")))


def t_door_close(st: Subtask, objects: list, cs: ConstraintSet, robot: RobotProfile, params: dict) -> TrajectorySpec:
    obj = _obj(objects, st.targets[0])
    hinge = _need(obj, "hinge", "close")
    handle = _need(obj, "handle", "close")
    back = float(params.get("sweep", -hinge.swing_range[0]))
    if back <= 1e-9:
        raise SynthesisFailed(f"close({obj.object_id}): already closed")
    arc = Arc(hinge.point, hinge.direction, tuple(handle.centroid()), -back)
    n = int(params.get("waypoint_count", DEFAULT_WAYPOINTS))
    return TrajectorySpec(arc, RadialFacing(), n, ((0, "closed"), (n - 1, "open")))


def default_pull(body: Cuboid) -> float:
    return 2.0 * float(min(body.half_extents))


def t_drawer_pull(st: Subtask, objects: list, cs: ConstraintSet, robot: RobotProfile, params: dict) -> TrajectorySpec:
    obj = _obj(objects, st.targets[0])
    body = _need(obj, "body", "open")
    handle = _need(obj, "handle", "open")
    pull = float(params.get("pull_distance", default_pull(body)))
    seg = synth_drawer_pull(body, handle, pull)
    out = np.asarray(seg.end) - np.asarray(seg.start)
    n = int(params.get("waypoint_count", DEFAULT_WAYPOINTS))
    return TrajectorySpec(seg, Fixed(_quat_with_z(out)), n, ((0, "closed"), (n - 1, "open")))


def t_drawer_push(st: Subtask, objects: list, cs: ConstraintSet, robot: RobotProfile, params: dict) -> TrajectorySpec:
    obj = _obj(objects, st.targets[0])
    body = _need(obj, "body", "close")
    handle = _need(obj, "handle", "close")
    if "distance" not in params:
        raise SynthesisFailed(f"close({obj.object_id}) needs params.distance for a drawer")
    seg = synth_drawer_pull(body, handle, float(params["distance"]))
    out = np.asarray(seg.end) - np.asarray(seg.start)
    back = LineSegment(seg.start, tuple(np.asarray(seg.start) - out))
    n = int(params.get("waypoint_count", DEFAULT_WAYPOINTS))
    return TrajectorySpec(back, Fixed(_quat_with_z(out)), n, ((0, "closed"), (n - 1, "open")))


def t_pick(st: Subtask, objects: list, cs: ConstraintSet, robot: RobotProfile, params: dict) -> TrajectorySpec:
    obj = _obj(objects, st.targets[0])
    c = _grasp_part(obj).centroid()
    top = c + np.array([0.0, 0.0, float(params.get("lift", 0.12))])
    curve = Composite((LineSegment(tuple(top), tuple(c)), LineSegment(tuple(c), tuple(top))))
    n = int(params.get("waypoint_count", PICK_WAYPOINTS))
    if n % 2 == 0:
        n += 1
    return TrajectorySpec(curve, Fixed(), n, ((0, "open"), (n // 2, "closed")))


def destination_point(value: Any, objects: list[ParamObject]) -> np.ndarray:
    """Surface point an object is placed onto: top-face center of an object, or an explicit point."""
    if isinstance(value, str):
        return top_opening(_obj(objects, value).primary).center
    return np.asarray(vec3(value))


def t_place(st: Subtask, objects: list, cs: ConstraintSet, robot: RobotProfile, params: dict) -> TrajectorySpec:
    obj = _obj(objects, st.targets[0])
    prim = obj.primary
    start = prim.centroid()
    dest = destination_point(params["destination"], objects)
    lift = 0.5 * vertical_extent(prim) + float(params.get("drop_height", 0.03))
    release = dest + np.array([0.0, 0.0, lift])
    curve = synth_bezier_avoid(start, release, cs)
    n = int(params.get("waypoint_count", DEFAULT_WAYPOINTS))
    return TrajectorySpec(curve, Fixed(), n, ((0, "closed"), (n - 1, "open")))


def t_pour(st: Subtask, objects: list, cs: ConstraintSet, robot: RobotProfile, params: dict) -> TrajectorySpec:
    vessel = _obj(objects, st.targets[0]).primary
    target = _obj(objects, params["into"]).primary
    grasp = Pose(tuple(vessel.centroid()))
    return synth_pour(grasp, vessel, target, cs)


def t_wipe(st: Subtask, objects: list, cs: ConstraintSet, robot: RobotProfile, params: dict) -> TrajectorySpec:
    """Boustrophedon over the patch's top face, rows along its longer side."""
    obj = _obj(objects, st.targets[0])
    patch = obj.part("patch") or obj.primary
    if not isinstance(patch, Cuboid):
        raise MissingPrimitive(f"wipe({obj.object_id}) needs a cuboid patch")
    axes, half = patch.axes, np.asarray(patch.half_extents)
    k = int(np.argmax(np.abs(axes[2])))
    up = axes[:, k] * (1.0 if axes[2, k] > 0 else -1.0)
    i, j = sorted((a for a in range(3) if a != k), key=lambda a: (-half[a], a))
    radius = float(params.get("wipe_radius", 0.03))
    hover = float(params.get("hover", 0.005))
    reach = math.sqrt(max(radius * radius - hover * hover, 1e-12))
    stride = 1.5 * reach
    rows = max(2, math.ceil(2 * half[j] / stride) + 1)
    top = np.asarray(patch.center) + (half[k] + hover) * up
    segs = []
    prev = None
    for r, off in enumerate(np.linspace(-half[j], half[j], rows)):
        sgn = 1.0 if r % 2 == 0 else -1.0
        a = top + off * axes[:, j] - sgn * half[i] * axes[:, i]
        b = top + off * axes[:, j] + sgn * half[i] * axes[:, i]
        if prev is not None:
            segs.append(LineSegment(tuple(prev), tuple(a)))
        segs.append(LineSegment(tuple(a), tuple(b)))
        prev = b
    curve = Composite(tuple(segs))
    length = float(sum(np.linalg.norm(np.asarray(s.end) - np.asarray(s.start)) for s in segs))
    n = int(params.get("waypoint_count", max(DEFAULT_WAYPOINTS, math.ceil(length / (0.5 * reach)) + 1)))
    return TrajectorySpec(curve, Fixed(), n, ((0, "closed"),))


Template = Callable[[Subtask, list, ConstraintSet, RobotProfile, dict], TrajectorySpec]
TEMPLATES: dict[str, Template] = {
    "door_arc": t_door_arc,
    "door_close": t_door_close,
    "drawer_pull": t_drawer_pull,
    "drawer_push": t_drawer_push,
    "pick": t_pick,
    "place": t_place,
    "pour": t_pour,
    "wipe": t_wipe,
}
TEMPLATE_DEFAULTS: dict[str, dict] = {
    "door_arc": {"waypoint_count": DEFAULT_WAYPOINTS},
    "door_close": {"waypoint_count": DEFAULT_WAYPOINTS},
    "drawer_pull": {"waypoint_count": DEFAULT_WAYPOINTS},
    "drawer_push": {"waypoint_count": DEFAULT_WAYPOINTS},
    "pick": {"lift": 0.12, "waypoint_count": PICK_WAYPOINTS},
    "place": {"drop_height": 0.03, "waypoint_count": DEFAULT_WAYPOINTS},
    "pour": {},
    "wipe": {"wipe_radius": 0.03, "hover": 0.005},
}


def choose_template(subtask: Subtask, objects: list[ParamObject]) -> str:
    if subtask.verb == "navigate":
        raise SynthesisFailed("navigate subtasks have no manipulation trajectory")
    obj = _obj(objects, subtask.targets[0])
    if subtask.verb in ("open", "close"):
        if obj.has("hinge") or obj.class_label == "door":
            _need(obj, "hinge", subtask.verb)
            return "door_arc" if subtask.verb == "open" else "door_close"
        if obj.has("body"):
            return "drawer_pull" if subtask.verb == "open" else "drawer_push"
        raise MissingPrimitive(f"{subtask.verb}({obj.object_id}) needs a hinge or a drawer body part")
    return subtask.verb


def instantiate(
    template_id: str, subtask: Subtask, objects: list, constraints: ConstraintSet, robot: RobotProfile, params: dict
) -> TrajectorySpec:
    if template_id not in TEMPLATES:
        raise SynthesisFailed(f"unknown template {template_id!r}")
    merged = {**TEMPLATE_DEFAULTS.get(template_id, {}), **params, **subtask.params}
    return TEMPLATES[template_id](subtask, objects, constraints, robot, merged)


# Providers


class SynthesisProvider(Protocol):
    def generate(
        self, subtask: Subtask, objects: list[ParamObject], constraints: ConstraintSet, robot: RobotProfile
    ) -> tuple[TrajectorySpec, str, dict]:
        """Return (spec, template_id, default_params) or raise a DomainError."""
        ...


class TemplateProvider:
    """Deterministic built-in synthesizer backed by :data:`TEMPLATES`."""

    def generate(
        self, subtask: Subtask, objects: list[ParamObject], constraints: ConstraintSet, robot: RobotProfile
    ) -> tuple[TrajectorySpec, str, dict]:
        tid = choose_template(subtask, objects)
        params = dict(TEMPLATE_DEFAULTS.get(tid, {}))
        return instantiate(tid, subtask, objects, constraints, robot, params), tid, params


class ExternalProcessProvider:
    """Runs a command per request, exchanging JSON on stdin/stdout.

    Request: ``{"subtask", "objects", "constraints", "robot"}``.
    Response: ``{"spec", "template_id", "params"}`` or ``{"error": message}``.
    """

    def __init__(self, command: list[str], timeout: float = 30.0):
        self.command = list(command)
        self.timeout = timeout

    def generate(
        self, subtask: Subtask, objects: list[ParamObject], constraints: ConstraintSet, robot: RobotProfile
    ) -> tuple[TrajectorySpec, str, dict]:
        request = {
            "subtask": subtask.to_dict(),
            "objects": [o.to_dict() for o in objects],
            "constraints": constraints.to_dict(),
            "robot": robot.to_dict(),
        }
        try:
            proc = subprocess.run(
                self.command,
                input=json.dumps(canonical(request)),
                capture_output=True,
                text=True,
                timeout=self.timeout,
                check=False,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise SynthesisFailed(f"provider process failed: {exc}") from exc
        if proc.returncode != 0:
            raise SynthesisFailed(f"provider exited with {proc.returncode}: {proc.stderr.strip()[:200]}")
        try:
            reply = json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise SynthesisFailed(f"provider reply is not JSON: {exc}") from exc
        if not isinstance(reply, dict):
            raise SynthesisFailed("provider reply must be an object")
        if "error" in reply:
            raise SynthesisFailed(f"provider error: {reply['error']}")
        try:
            return TrajectorySpec.from_dict(reply["spec"]), str(reply["template_id"]), dict(reply.get("params", {}))
        except (KeyError, SchemaError) as exc:
            raise SynthesisFailed(f"malformed provider reply: {exc}") from exc


# Synthesis


@dataclass(frozen=True)
class Validation:
    accepted: bool
    reasons: tuple[str, ...]
    report: ConstraintReport


def validate_generated(spec: TrajectorySpec, constraints: ConstraintSet) -> Validation:
    report = check_constraints(spec, constraints)
    return Validation(report.ok, tuple(report.reasons), report)


def skill_key(subtask: Subtask, objects: list[ParamObject]) -> SkillKey:
    return SkillKey(_obj(objects, subtask.targets[0]).class_label, subtask.verb)


def synthesize_subtask(
    subtask: Subtask,
    objects: list[ParamObject],
    constraints: ConstraintSet,
    robot: RobotProfile,
    cache: SkillCache,
    provider: SynthesisProvider | None = None,
    retries: int = 1,
) -> tuple[TrajectorySpec, str]:
    """Cache lookup, then provider synthesis; every returned spec passed validation.

    Returns ``(spec, "cached" | "generated")``. A cached recipe that fails on
    the current geometry counts as a validation failure on its record and the
    provider is consulted instead.
    """
    provider = provider or TemplateProvider()
    key = skill_key(subtask, objects)
    record = cache.get(key)
    if record is not None:
        try:
            spec = instantiate(record.template_id, subtask, objects, constraints, robot, record.default_params)
            verdict = validate_generated(spec, constraints)
        except MissingPrimitive:
            raise
        except DomainError:
            verdict = None
        if verdict is not None and verdict.accepted:
            cache.put(replace(record, successes=record.successes + 1))
            return spec, "cached"
        cache.put(replace(record, failures=record.failures + 1))

    last = "no attempt made"
    for _ in range(1 + max(0, retries)):
        try:
            spec, tid, params = provider.generate(subtask, objects, constraints, robot)
        except MissingPrimitive:
            raise
        except SynthesisFailed as exc:
            last = str(exc)
            continue
        except DomainError as exc:
            last = str(exc)
            continue
        verdict = validate_generated(spec, constraints)
        if verdict.accepted:
            prev = cache.records.get(key)
            successes = (prev.successes if prev else 0) + 1
            failures = prev.failures if prev else 0
            cache.put(SkillRecord(key, tid, params, successes, failures))
            return spec, "generated"
        last = "validation rejected: " + "; ".join(v.detail for v in verdict.report.violations)
    raise SynthesisFailed(f"{subtask.verb}({', '.join(subtask.targets)}): {last}")
