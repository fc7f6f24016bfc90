"""Parametric curves, orientation policies, waypoint sampling and constraint checks.

Curves are immutable values. Waypoints are placed at arc-length-uniform
parameters so consecutive end-effector targets are equidistant along the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, ClassVar, Union

import numpy as np

from .errors import (
    DegenerateRadius,
    EndpointInCollision,
    Infeasible,
    NoFeasibleCurve,
    PolicyViolation,
    PullTooLong,
    AmbiguousNormal,
    SchemaError,
    SweepOutOfRange,
    UnreachableHover,
)
from .geometry import (
    IDENTITY_QUAT,
    ConvexEnvelope,
    Cuboid,
    Cylinder,
    GeometricPrimitive,
    HingeAxis,
    Pose,
    Quat,
    RigidTransform,
    RobotProfile,
    Sphere,
    Vec3,
    matrix_to_quat,
    norm_quat,
    orthonormal_basis,
    primitive_from_dict,
    quat_from_axis_angle,
    quat_multiply,
    quat_to_matrix,
    rotate_about_axis,
    rotate_points_about_axis,
    transform_point,
    unit3,
    vec3,
)

DEFAULT_WAYPOINTS = 16
DEFAULT_ARC_TOL = 1e-5
POUR_TILT_LIMIT = 2.0
MIN_POUR_TILT = 0.5
POUR_RAMP_STEPS = 8
MIN_GRASP_RADIUS = 0.01
MAX_LIFT = 2.0
FIRST_LIFT = 0.01
# Lift refinement stops once the bracket is this narrow.
LIFT_RESOLUTION = 1e-3
# Arc-length spacing of clearance samples used by the synthesizers.
CLEARANCE_STEP = 0.002
BEZIER_TABLE_SIZE = 4096


# Curves


@dataclass(frozen=True)
class LineSegment:
    """Straight segment; zero length is allowed and acts as a dwell."""

    start: Vec3
    end: Vec3
    kind: ClassVar[str] = "line"

    def __post_init__(self) -> None:
        object.__setattr__(self, "start", vec3(self.start))
        object.__setattr__(self, "end", vec3(self.end))

    @property
    def start_point(self) -> Vec3:
        return self.start

    @property
    def end_point(self) -> Vec3:
        return self.end

    def transformed(self, T: RigidTransform) -> LineSegment:
        return LineSegment(transform_point(self.start, T), transform_point(self.end, T))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "start": list(self.start), "end": list(self.end)}


@dataclass(frozen=True)
class Arc:
    """Rotation of ``start_point`` by up to ``sweep`` radians about an axis line."""

    axis_point: Vec3
    axis_dir: Vec3
    start_point: Vec3
    sweep: float
    kind: ClassVar[str] = "arc"

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis_point", vec3(self.axis_point))
        object.__setattr__(self, "axis_dir", unit3(self.axis_dir))
        object.__setattr__(self, "start_point", vec3(self.start_point))
        sweep = float(self.sweep)
        if not 0 < abs(sweep) <= 2 * math.pi:
            raise ValueError(f"arc sweep must satisfy 0 < |sweep| <= 2*pi, got {sweep}")
        object.__setattr__(self, "sweep", sweep)
        if self.radius <= 1e-12:
            raise ValueError("arc start point lies on its axis")

    @cached_property
    def radius(self) -> float:
        d = np.asarray(self.axis_dir)
        v = np.asarray(self.start_point) - np.asarray(self.axis_point)
        return float(np.linalg.norm(v - (v @ d) * d))

    @property
    def end_point(self) -> Vec3:
        return rotate_about_axis(self.start_point, self.axis_point, self.axis_dir, self.sweep)

    def transformed(self, T: RigidTransform) -> Arc:
        return Arc(
            transform_point(self.axis_point, T),
            unit3(T.apply_vector(self.axis_dir)),
            transform_point(self.start_point, T),
            self.sweep,
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "axis_point": list(self.axis_point),
            "axis_dir": list(self.axis_dir),
            "start_point": list(self.start_point),
            "sweep": self.sweep,
        }


@dataclass(frozen=True)
class CubicBezier:
    p0: Vec3
    p1: Vec3
    p2: Vec3
    p3: Vec3
    kind: ClassVar[str] = "bezier"

    def __post_init__(self) -> None:
        for name in ("p0", "p1", "p2", "p3"):
            object.__setattr__(self, name, vec3(getattr(self, name)))

    @property
    def control(self) -> np.ndarray:
        return np.array([self.p0, self.p1, self.p2, self.p3])

    @property
    def start_point(self) -> Vec3:
        return self.p0

    @property
    def end_point(self) -> Vec3:
        return self.p3

    @cached_property
    def _table(self) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative chord length over a uniform parameter grid."""
        t = np.linspace(0.0, 1.0, BEZIER_TABLE_SIZE + 1)
        pts = _bezier_points(self.control, t)
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        return t, cum

    def param_at_fraction(self, f: np.ndarray) -> np.ndarray:
        t, cum = self._table
        if cum[-1] <= 0:
            return np.asarray(f, dtype=float)
        return np.interp(np.asarray(f, dtype=float) * cum[-1], cum, t)

    def transformed(self, T: RigidTransform) -> CubicBezier:
        return CubicBezier(*(transform_point(p, T) for p in (self.p0, self.p1, self.p2, self.p3)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: list(getattr(self, k)) for k in ("p0", "p1", "p2", "p3")}}


@dataclass(frozen=True)
class Composite:
    segments: tuple

    kind: ClassVar[str] = "composite"

    def __post_init__(self) -> None:
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("composite curve needs at least one segment")
        for a, b in zip(segs, segs[1:]):
            gap = np.linalg.norm(np.asarray(a.end_point) - np.asarray(b.start_point))
            if gap > 1e-6:
                raise ValueError(f"composite segments are not C0-continuous (gap {gap:.3g} m)")
        object.__setattr__(self, "segments", segs)

    @property
    def start_point(self) -> Vec3:
        return self.segments[0].start_point

    @property
    def end_point(self) -> Vec3:
        return self.segments[-1].end_point

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([arc_length(s) for s in self.segments])

    def transformed(self, T: RigidTransform) -> Composite:
        return Composite(tuple(s.transformed(T) for s in self.segments))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "segments": [s.to_dict() for s in self.segments]}


Curve = Union[LineSegment, Arc, CubicBezier, Composite]


def curve_from_dict(d: dict) -> Curve:
    if not isinstance(d, dict) or "kind" not in d:
        raise SchemaError("curve", "expected an object with a kind")
    kind = d["kind"]
    try:
        if kind == "line":
            return LineSegment(tuple(d["start"]), tuple(d["end"]))
        if kind == "arc":
            return Arc(tuple(d["axis_point"]), tuple(d["axis_dir"]), tuple(d["start_point"]), float(d["sweep"]))
        if kind == "bezier":
            return CubicBezier(*(tuple(d[k]) for k in ("p0", "p1", "p2", "p3")))
        if kind == "composite":
            return Composite(tuple(curve_from_dict(s) for s in d["segments"]))
    except KeyError as exc:
        raise SchemaError(str(exc.args[0]), "missing curve field") from exc
    except (TypeError, ValueError) as exc:
        raise SchemaError("curve", str(exc)) from exc
    raise SchemaError("kind", f"unknown curve kind {kind!r}")


def transform_curve(curve: Curve, T: RigidTransform) -> Curve:
    return curve.transformed(T)


def _bezier_points(ctrl: np.ndarray, t: np.ndarray) -> np.ndarray:
    """De Casteljau evaluation at an array of parameters."""
    t = np.asarray(t, dtype=float).reshape(-1, 1, 1)
    pts = np.broadcast_to(ctrl, (t.shape[0], 4, 3)).copy()
    for level in range(3, 0, -1):
        pts = (1 - t[:, :, :]) * pts[:, :level] + t[:, :, :] * pts[:, 1 : level + 1]
    return pts[:, 0]


def _check_t(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"curve parameter must lie in [0, 1], got {t}")
    return t


def _composite_locate(curve: Composite, f: float) -> tuple[int, float]:
    """Segment index and local arc-length fraction for a global fraction."""
    lengths = curve.lengths
    total = float(lengths.sum())
    if total <= 0:
        return 0, f
    s = f * total
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    for i, seg_len in enumerate(lengths):
        if seg_len > 0 and (s <= cum[i + 1] or i == len(lengths) - 1):
            return i, min(1.0, max(0.0, (s - cum[i]) / seg_len))
    # only trailing zero-length segments remain
    last = max(i for i, seg_len in enumerate(lengths) if seg_len > 0)
    return last, 1.0


def eval_curve(curve: Curve, t: float) -> Vec3:
    """Point at parameter ``t``; composites dispatch by arc-length share."""
    t = _check_t(t)
    if isinstance(curve, LineSegment):
        a, b = np.asarray(curve.start), np.asarray(curve.end)
        return vec3(a + t * (b - a))
    if isinstance(curve, Arc):
        return rotate_about_axis(curve.start_point, curve.axis_point, curve.axis_dir, t * curve.sweep)
    if isinstance(curve, CubicBezier):
        return vec3(_bezier_points(curve.control, np.array([t]))[0])
    if isinstance(curve, Composite):
        i, local = _composite_locate(curve, t)
        return eval_curve(curve.segments[i], local)
    raise TypeError(f"not a curve: {curve!r}")


def _bezier_length(ctrl: np.ndarray, tol: float, depth: int = 0) -> float:
    chord = float(np.linalg.norm(ctrl[3] - ctrl[0]))
    poly = float(np.linalg.norm(np.diff(ctrl, axis=0), axis=1).sum())
    if poly - chord < tol or depth >= 40:
        # Gravesen's estimate for a cubic: (2 * chord + 2 * polygon) / 4
        return 0.5 * (chord + poly)
    left, right = _split_bezier(ctrl)
    return _bezier_length(left, tol, depth + 1) + _bezier_length(right, tol, depth + 1)


def _split_bezier(ctrl: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p01 = 0.5 * (ctrl[0] + ctrl[1])
    p12 = 0.5 * (ctrl[1] + ctrl[2])
    p23 = 0.5 * (ctrl[2] + ctrl[3])
    a = 0.5 * (p01 + p12)
    b = 0.5 * (p12 + p23)
    m = 0.5 * (a + b)
    return np.array([ctrl[0], p01, a, m]), np.array([m, b, p23, ctrl[3]])


def arc_length(curve: Curve, tol: float = DEFAULT_ARC_TOL) -> float:
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if isinstance(curve, LineSegment):
        return float(np.linalg.norm(np.asarray(curve.end) - np.asarray(curve.start)))
    if isinstance(curve, Arc):
        return curve.radius * abs(curve.sweep)
    if isinstance(curve, CubicBezier):
        return _bezier_length(curve.control, tol)
    if isinstance(curve, Composite):
        return float(sum(arc_length(s, tol) for s in curve.segments))
    raise TypeError(f"not a curve: {curve!r}")


def points_at_fractions(curve: Curve, fractions: Any) -> np.ndarray:
    """Points at the given fractions of total arc length."""
    f = np.clip(np.asarray(fractions, dtype=float).reshape(-1), 0.0, 1.0)
    if isinstance(curve, LineSegment):
        a, b = np.asarray(curve.start), np.asarray(curve.end)
        return a + np.outer(f, b - a)
    if isinstance(curve, Arc):
        start = np.asarray(curve.start_point).reshape(1, 3).repeat(len(f), axis=0)
        return rotate_points_about_axis(start, curve.axis_point, curve.axis_dir, f * curve.sweep)
    if isinstance(curve, CubicBezier):
        return _bezier_points(curve.control, curve.param_at_fraction(f))
    if isinstance(curve, Composite):
        out = np.empty((len(f), 3))
        for k, fk in enumerate(f):
            i, local = _composite_locate(curve, float(fk))
            out[k] = points_at_fractions(curve.segments[i], [local])[0]
        return out
    raise TypeError(f"not a curve: {curve!r}")


def _tangent_at_fraction(curve: Curve, f: float) -> np.ndarray:
    """Unnormalized direction of travel (zero for dwell segments)."""
    if isinstance(curve, LineSegment):
        return np.asarray(curve.end) - np.asarray(curve.start)
    if isinstance(curve, Arc):
        p = points_at_fractions(curve, [f])[0]
        k = np.asarray(curve.axis_dir)
        return np.sign(curve.sweep) * np.cross(k, p - np.asarray(curve.axis_point))
    if isinstance(curve, CubicBezier):
        t = float(curve.param_at_fraction(np.array([f]))[0])
        c = curve.control
        return 3 * ((1 - t) ** 2 * (c[1] - c[0]) + 2 * (1 - t) * t * (c[2] - c[1]) + t * t * (c[3] - c[2]))
    if isinstance(curve, Composite):
        i, local = _composite_locate(curve, f)
        return _tangent_at_fraction(curve.segments[i], local)
    raise TypeError(f"not a curve: {curve!r}")


def _swept_angle(curve: Curve, f: float) -> tuple[float, Arc | None]:
    """Rotation accumulated over arc segments up to fraction ``f``."""
    if isinstance(curve, Arc):
        return f * curve.sweep, curve
    if isinstance(curve, Composite):
        i, local = _composite_locate(curve, f)
        angle, last = 0.0, None
        for seg in curve.segments[:i]:
            if isinstance(seg, Arc):
                angle, last = angle + seg.sweep, seg
        cur = curve.segments[i]
        if isinstance(cur, Arc):
            angle, last = angle + local * cur.sweep, cur
        return angle, last
    return 0.0, None


# Orientation policies


@dataclass(frozen=True)
class Fixed:
    quaternion: Quat = IDENTITY_QUAT
    kind: ClassVar[str] = "fixed"

    def __post_init__(self) -> None:
        object.__setattr__(self, "quaternion", norm_quat(self.quaternion))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "quaternion": list(self.quaternion)}


@dataclass(frozen=True)
class TangentAligned:
    """Tool x-axis along the direction of travel, z-axis as close to ``up_hint`` as possible."""

    up_hint: Vec3 = (0.0, 0.0, 1.0)
    kind: ClassVar[str] = "tangent"

    def __post_init__(self) -> None:
        object.__setattr__(self, "up_hint", unit3(self.up_hint))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "up_hint": list(self.up_hint)}


@dataclass(frozen=True)
class RadialFacing:
    """Tool x-axis points at the arc axis, z-axis along the axis direction.

    The frame turns with the arc, so a gripper holding a handle keeps the
    same grip on it as the panel swings.
    """

    kind: ClassVar[str] = "radial"

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class TiltRamp:
    """Hold ``base`` rotated by ``start`` along the curve, then tilt to ``end``.

    The tilt happens over ``steps`` extra dwell waypoints at the curve's end
    (rotation about the world-frame ``axis`` through the tool point).
    """

    axis: Vec3
    start: float
    end: float
    base: Quat = IDENTITY_QUAT
    steps: int = POUR_RAMP_STEPS
    kind: ClassVar[str] = "tilt"

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis", unit3(self.axis))
        object.__setattr__(self, "base", norm_quat(self.base))
        if self.steps < 1:
            raise ValueError("tilt ramp needs at least one step")

    def orientation(self, angle: float) -> Quat:
        return quat_multiply(quat_from_axis_angle(self.axis, angle), self.base)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "axis": list(self.axis),
            "start": self.start,
            "end": self.end,
            "base": list(self.base),
            "steps": self.steps,
        }


OrientationPolicy = Union[Fixed, TangentAligned, RadialFacing, TiltRamp]


def policy_from_dict(d: dict) -> OrientationPolicy:
    kind = d.get("kind") if isinstance(d, dict) else None
    try:
        if kind == "fixed":
            return Fixed(tuple(d.get("quaternion", IDENTITY_QUAT)))
        if kind == "tangent":
            return TangentAligned(tuple(d.get("up_hint", (0, 0, 1))))
        if kind == "radial":
            return RadialFacing()
        if kind == "tilt":
            return TiltRamp(
                tuple(d["axis"]),
                float(d["start"]),
                float(d["end"]),
                tuple(d.get("base", IDENTITY_QUAT)),
                int(d.get("steps", POUR_RAMP_STEPS)),
            )
    except KeyError as exc:
        raise SchemaError(str(exc.args[0]), "missing orientation field") from exc
    except (TypeError, ValueError) as exc:
        raise SchemaError("orientation", str(exc)) from exc
    raise SchemaError("orientation", f"unknown orientation policy {kind!r}")


def _frame_quat(x: np.ndarray, z_hint: np.ndarray) -> Quat | None:
    nx = float(np.linalg.norm(x))
    if nx < 1e-12:
        return None
    x = x / nx
    z = z_hint - (z_hint @ x) * x
    nz = float(np.linalg.norm(z))
    if nz < 1e-9:
        return None
    z = z / nz
    y = np.cross(z, x)
    return matrix_to_quat(np.column_stack([x, y, z]))


def _transform_policy(policy: OrientationPolicy, T: RigidTransform) -> OrientationPolicy:
    if isinstance(policy, Fixed):
        return Fixed(quat_multiply(T.rotation, policy.quaternion))
    if isinstance(policy, TangentAligned):
        return TangentAligned(unit3(T.apply_vector(policy.up_hint)))
    if isinstance(policy, TiltRamp):
        return TiltRamp(
            unit3(T.apply_vector(policy.axis)),
            policy.start,
            policy.end,
            quat_multiply(T.rotation, policy.base),
            policy.steps,
        )
    return policy


# Specs and constraints

GripperCommand = Union[str, float]


def _check_gripper(cmd: Any) -> GripperCommand:
    if cmd in ("open", "closed"):
        return cmd
    if isinstance(cmd, (int, float)) and not isinstance(cmd, bool) and math.isfinite(cmd) and cmd >= 0:
        return float(cmd)
    raise ValueError(f"gripper command must be 'open', 'closed' or a width >= 0, got {cmd!r}")


@dataclass(frozen=True)
class Waypoint:
    pose: Pose
    gripper: GripperCommand = "open"
    dwell: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "gripper", _check_gripper(self.gripper))
        if not self.dwell >= 0:
            raise ValueError("dwell must be >= 0")

    def to_dict(self) -> dict:
        return {"pose": self.pose.to_dict(), "gripper": self.gripper, "dwell": self.dwell}

    @classmethod
    def from_dict(cls, d: dict) -> Waypoint:
        return cls(Pose.from_dict(d["pose"]), d.get("gripper", "open"), float(d.get("dwell", 0.0)))


@dataclass(frozen=True)
class TrajectorySpec:
    curve: Curve
    orientation: OrientationPolicy
    waypoint_count: int = DEFAULT_WAYPOINTS
    gripper_program: tuple[tuple[int, GripperCommand], ...] = ()

    def __post_init__(self) -> None:
        if int(self.waypoint_count) != self.waypoint_count or self.waypoint_count < 2:
            raise ValueError("waypoint_count must be an integer >= 2")
        object.__setattr__(self, "waypoint_count", int(self.waypoint_count))
        if isinstance(self.orientation, TiltRamp) and self.curve_waypoints < 2:
            raise ValueError("waypoint_count must leave >= 2 waypoints on the curve besides the tilt ramp")
        program = tuple((int(i), _check_gripper(c)) for i, c in self.gripper_program)
        for i, _ in program:
            if not 0 <= i < self.waypoint_count:
                raise ValueError(f"gripper_program index {i} outside [0, {self.waypoint_count})")
        object.__setattr__(self, "gripper_program", tuple(sorted(program, key=lambda e: e[0])))

    @property
    def curve_waypoints(self) -> int:
        if isinstance(self.orientation, TiltRamp):
            return self.waypoint_count - self.orientation.steps
        return self.waypoint_count

    def transformed(self, T: RigidTransform) -> TrajectorySpec:
        return TrajectorySpec(
            self.curve.transformed(T),
            _transform_policy(self.orientation, T),
            self.waypoint_count,
            self.gripper_program,
        )

    def to_dict(self) -> dict:
        return {
            "curve": self.curve.to_dict(),
            "orientation": self.orientation.to_dict(),
            "waypoint_count": self.waypoint_count,
            "gripper_program": [[i, c] for i, c in self.gripper_program],
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrajectorySpec:
        if not isinstance(d, dict):
            raise SchemaError("spec", "expected an object")
        try:
            return cls(
                curve_from_dict(d["curve"]),
                policy_from_dict(d["orientation"]),
                int(d.get("waypoint_count", DEFAULT_WAYPOINTS)),
                tuple((int(i), c) for i, c in d.get("gripper_program", [])),
            )
        except KeyError as exc:
            raise SchemaError(str(exc.args[0]), "missing spec field") from exc
        except (TypeError, ValueError) as exc:
            raise SchemaError("spec", str(exc)) from exc


@dataclass(frozen=True)
class ConstraintSet:
    clearance_margin: float = 0.02
    obstacles: tuple = ()
    robot: RobotProfile = field(default_factory=RobotProfile)
    base_pose: Pose = field(default_factory=lambda: Pose((0.0, 0.0, 0.0)))

    def __post_init__(self) -> None:
        if not self.clearance_margin >= 0:
            raise ValueError("clearance_margin must be >= 0")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def base(self) -> np.ndarray:
        return np.asarray(self.base_pose.position)

    def transformed(self, T: RigidTransform) -> ConstraintSet:
        base = Pose(transform_point(self.base_pose.position, T), quat_multiply(T.rotation, self.base_pose.orientation))
        return ConstraintSet(
            self.clearance_margin, tuple(o.transformed(T) for o in self.obstacles), self.robot, base
        )

    def to_dict(self) -> dict:
        return {
            "clearance_margin": self.clearance_margin,
            "obstacles": [o.to_dict() for o in self.obstacles],
            "robot": self.robot.to_dict(),
            "base_pose": self.base_pose.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ConstraintSet:
        if not isinstance(d, dict):
            raise SchemaError("constraints", "expected an object")
        try:
            return cls(
                float(d.get("clearance_margin", 0.02)),
                tuple(primitive_from_dict(o) for o in d.get("obstacles", [])),
                RobotProfile.from_dict(d.get("robot", {})),
                Pose.from_dict(d.get("base_pose", {"position": [0, 0, 0]})),
            )
        except KeyError as exc:
            raise SchemaError(str(exc.args[0]), "missing constraint field") from exc
        except (TypeError, ValueError) as exc:
            raise SchemaError("constraints", str(exc)) from exc


def _orientations(spec: TrajectorySpec, fractions: np.ndarray) -> list[Quat]:
    policy = spec.orientation
    if isinstance(policy, Fixed):
        return [policy.quaternion] * len(fractions)
    if isinstance(policy, TiltRamp):
        return [policy.orientation(policy.start)] * len(fractions)
    out: list[Quat] = []
    prev: Quat = IDENTITY_QUAT
    for f in fractions:
        q = None
        if isinstance(policy, TangentAligned):
            q = _frame_quat(_tangent_at_fraction(spec.curve, float(f)), np.asarray(policy.up_hint))
            if q is None and not out:
                # dwell or vertical start: look ahead for a usable tangent
                for g in np.linspace(f, 1.0, 9)[1:]:
                    q = _frame_quat(_tangent_at_fraction(spec.curve, float(g)), np.asarray(policy.up_hint))
                    if q is not None:
                        break
        elif isinstance(policy, RadialFacing):
            angle, arc = _swept_angle(spec.curve, float(f))
            if arc is not None:
                p = points_at_fractions(spec.curve, [f])[0]
                k = np.asarray(arc.axis_dir)
                rel = np.asarray(arc.axis_point) - p
                inward = rel - (rel @ k) * k
                q = _frame_quat(inward, k)
        if q is None:
            q = prev
        out.append(q)
        prev = q
    return out


def sample_waypoints(
    spec: TrajectorySpec, constraints: ConstraintSet | None = None, initial_gripper: GripperCommand = "open"
) -> list[Waypoint]:
    """Arc-length-uniform waypoints (first at t=0, last at t=1).

    Gripper state at each index is the latest ``gripper_program`` command at
    or before it. A :class:`TiltRamp` appends its ramp as dwell waypoints at
    the curve's end point.
    """
    policy = spec.orientation
    if isinstance(policy, TiltRamp) and constraints is not None:
        worst = max(abs(policy.start), abs(policy.end))
        if worst > constraints.robot.max_tilt + 1e-12:
            raise PolicyViolation(
                f"tilt {worst:.4f} rad exceeds robot max_tilt {constraints.robot.max_tilt:.4f} rad"
            )
    n = spec.curve_waypoints
    fractions = np.linspace(0.0, 1.0, n)
    positions = points_at_fractions(spec.curve, fractions)
    positions[0] = spec.curve.start_point
    positions[-1] = spec.curve.end_point
    quats = _orientations(spec, fractions)
    poses = [Pose(tuple(p), q) for p, q in zip(positions, quats)]
    if isinstance(policy, TiltRamp):
        end = tuple(positions[-1])
        for k in range(1, policy.steps + 1):
            angle = policy.start + (policy.end - policy.start) * k / policy.steps
            poses.append(Pose(end, policy.orientation(angle)))
    commands = dict(spec.gripper_program)
    state = _check_gripper(initial_gripper)
    out = []
    for i, pose in enumerate(poses):
        state = commands.get(i, state)
        out.append(Waypoint(pose, state, 0.0))
    return out


# Constraint queries


def _clearance_points(points: np.ndarray, obstacles: Any) -> np.ndarray:
    """Per-point signed distance to the nearest obstacle (+inf without obstacles)."""
    best = np.full(len(points), math.inf)
    for obs in obstacles:
        best = np.minimum(best, obs.signed_distance(points))
    return best


def min_clearance(curve: Curve, obstacles: Any, samples: int = 256) -> float:
    """Smallest obstacle distance over arc-length-uniform curve samples."""
    if samples < 2:
        raise ValueError("samples must be >= 2")
    obstacles = list(obstacles)
    if not obstacles:
        return math.inf
    pts = points_at_fractions(curve, np.linspace(0.0, 1.0, int(samples)))
    return float(_clearance_points(pts, obstacles).min())


def _clearance_samples(curve: Curve) -> int:
    return int(min(8000, max(64, math.ceil(arc_length(curve) / CLEARANCE_STEP) + 1)))


@dataclass(frozen=True)
class Violation:
    check: str
    detail: str
    value: float | None = None
    limit: float | None = None

    def to_dict(self) -> dict:
        return {"check": self.check, "detail": self.detail, "value": self.value, "limit": self.limit}


@dataclass(frozen=True)
class ConstraintReport:
    min_clearance: float
    reach_ok: bool
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def reasons(self) -> list[str]:
        return [v.check for v in self.violations]

    def to_dict(self) -> dict:
        mc = self.min_clearance if math.isfinite(self.min_clearance) else None
        return {"min_clearance": mc, "reach_ok": self.reach_ok, "violations": [v.to_dict() for v in self.violations]}


def check_constraints(spec: TrajectorySpec, constraints: ConstraintSet) -> ConstraintReport:
    """Clearance, reach, tilt and aperture checks; never raises."""
    violations: list[Violation] = []
    clearance = min_clearance(spec.curve, constraints.obstacles, _clearance_samples(spec.curve))
    if clearance < constraints.clearance_margin:
        violations.append(
            Violation(
                "clearance",
                f"min clearance {clearance:.4f} m below margin {constraints.clearance_margin:.4f} m",
                clearance,
                constraints.clearance_margin,
            )
        )
    robot = constraints.robot
    policy = spec.orientation
    try:
        waypoints = sample_waypoints(spec, None)
    except ValueError as exc:
        violations.append(Violation("sampling", str(exc)))
        return ConstraintReport(clearance, False, tuple(violations))
    pos = np.array([w.pose.position for w in waypoints])
    dist = np.linalg.norm(pos - constraints.base, axis=1)
    worst = float(dist.max())
    reach_ok = worst <= robot.arm_reach_radius + 1e-9
    if not reach_ok:
        violations.append(
            Violation(
                "reach",
                f"waypoint {int(dist.argmax())} is {worst:.4f} m from the arm base (reach {robot.arm_reach_radius:.4f} m)",
                worst,
                robot.arm_reach_radius,
            )
        )
    if isinstance(policy, TiltRamp):
        tilt = max(abs(policy.start), abs(policy.end))
        if tilt > robot.max_tilt + 1e-12:
            violations.append(
                Violation("tilt", f"tilt {tilt:.4f} rad exceeds max_tilt {robot.max_tilt:.4f} rad", tilt, robot.max_tilt)
            )
    widths = [c for _, c in spec.gripper_program if isinstance(c, float)]
    if widths and max(widths) > robot.gripper_aperture_max + 1e-12:
        violations.append(
            Violation(
                "aperture",
                f"gripper width {max(widths):.4f} m exceeds aperture {robot.gripper_aperture_max:.4f} m",
                max(widths),
                robot.gripper_aperture_max,
            )
        )
    return ConstraintReport(clearance, reach_ok, tuple(violations))


# Synthesizers


def required_sweep(panel_width: float, passage_width: float) -> float:
    """Smallest opening angle with ``panel_width * sin(angle) >= passage_width``."""
    if not (panel_width > 0 and passage_width > 0):
        raise ValueError("panel_width and passage_width must be > 0")
    if passage_width > panel_width:
        raise Infeasible(
            f"Infeasible required_sweep: passage {passage_width:g} m exceeds panel width {panel_width:g} m"
        )
    # atan2 form of asin(p / w); exact at the common 1:2 ratio
    return math.atan2(passage_width, math.sqrt((panel_width - passage_width) * (panel_width + passage_width)))


def synth_door_arc(hinge: HingeAxis, grasp: Any, sweep: float) -> Arc:
    """Circular arc of the grasp point about the hinge line."""
    g = np.asarray(vec3(grasp))
    radius = float(hinge.signed_distance(g)[0])
    if radius < MIN_GRASP_RADIUS:
        raise DegenerateRadius(f"grasp is {radius:.4f} m from the hinge axis (< {MIN_GRASP_RADIUS} m)")
    hi = hinge.swing_range[1]
    if not (0 < sweep <= hi + 1e-12):
        raise SweepOutOfRange(f"sweep {sweep:.6f} rad outside (0, {hi:.6f}]")
    return Arc(hinge.point, hinge.direction, tuple(g), float(sweep))


def synth_drawer_pull(drawer: Cuboid, handle: Cylinder, pull_distance: float) -> LineSegment:
    """Straight pull from the handle's axis midpoint along the drawer's front normal.

    The normal is the cuboid axis of smallest extent, signed toward the handle.
    """
    half = np.asarray(drawer.half_extents)
    depth = 2.0 * float(half.min())
    if not (0 < pull_distance <= depth + 1e-12):
        raise PullTooLong(f"pull_distance {pull_distance:g} m outside (0, {depth:g}] m")
    k = int(np.argmin(half))
    n = drawer.axes[:, k]
    start = np.asarray(handle.center)
    offset = float((start - np.asarray(drawer.center)) @ n)
    if abs(offset) < 0.01:
        raise AmbiguousNormal(f"handle is {abs(offset):.4f} m from the drawer center plane")
    n = n if offset > 0 else -n
    return LineSegment(tuple(start), tuple(start + pull_distance * n))


def _escape_direction(start: np.ndarray, end: np.ndarray, blocking: list) -> np.ndarray:
    seg = end - start
    seg_len = float(np.linalg.norm(seg))
    mid = 0.5 * (start + end)
    acc = np.zeros(3)
    for obs in blocking:
        v = mid - obs.centroid()
        n = float(np.linalg.norm(v))
        if n > 1e-12:
            acc += v / n
    candidates = [acc, np.array([0.0, 0.0, 1.0])]
    for c in candidates:
        if seg_len > 1e-12:
            u = seg / seg_len
            c = c - (c @ u) * u
        n = float(np.linalg.norm(c))
        if n > 1e-9:
            return c / n
    return orthonormal_basis(seg)[0]


def _lifted(start: np.ndarray, end: np.ndarray, direction: np.ndarray, h: float) -> CubicBezier:
    p1 = start + (end - start) / 3.0 + h * direction
    p2 = start + 2.0 * (end - start) / 3.0 + h * direction
    return CubicBezier(tuple(start), tuple(p1), tuple(p2), tuple(end))


def _conservative_clearance(curve: Curve, obstacles: list) -> float:
    """Sampled minimum minus half the sample spacing: a lower bound on the true minimum."""
    if not obstacles:
        return math.inf
    n = _clearance_samples(curve)
    pts = points_at_fractions(curve, np.linspace(0.0, 1.0, n))
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    # chords under-estimate the arc between samples slightly; pad by 1%
    slack = 0.5 * 1.01 * float(gaps.max()) if len(gaps) else 0.0
    return float(_clearance_points(pts, obstacles).min()) - slack


def synth_bezier_avoid(start: Any, end: Any, constraints: ConstraintSet) -> CubicBezier:
    """Cubic Bezier from ``start`` to ``end`` that keeps ``clearance_margin`` from obstacles.

    Interior control points sit at 1/3 and 2/3 of the segment, lifted along an
    escape direction (the mean of obstacle-center to midpoint directions over
    obstacles that block the straight segment, or +z). Lifts 0, 1 cm, 2 cm, 4 cm
    and so on up to 2 m are tried; the first feasible one is refined by
    bisection down to 1 mm. Feasible means the conservative clearance bound
    meets the margin and every control point is within arm reach, so the
    whole curve is.
    """
    a, b = np.asarray(vec3(start)), np.asarray(vec3(end))
    obstacles = [o for o in constraints.obstacles if not isinstance(o, HingeAxis)]
    margin = constraints.clearance_margin
    for name, p in (("start", a), ("end", b)):
        c = float(_clearance_points(p.reshape(1, 3), obstacles).min()) if obstacles else math.inf
        if c < margin:
            raise EndpointInCollision(f"{name} point clearance {c:.4f} m is below margin {margin:.4f} m")
    base = constraints.base
    reach = constraints.robot.arm_reach_radius + 1e-9

    def feasible(curve: CubicBezier) -> bool:
        if np.linalg.norm(curve.control - base, axis=1).max() > reach:
            return False
        return _conservative_clearance(curve, obstacles) >= margin

    straight = _lifted(a, b, np.zeros(3), 0.0)
    if feasible(straight):
        return straight
    if max(np.linalg.norm(a - base), np.linalg.norm(b - base)) > reach:
        raise NoFeasibleCurve("an endpoint lies outside the arm reach")
    blocking = []
    if obstacles:
        pts = points_at_fractions(straight, np.linspace(0.0, 1.0, _clearance_samples(straight)))
        blocking = [o for o in obstacles if float(o.signed_distance(pts).min()) < margin + CLEARANCE_STEP]
    direction = _escape_direction(a, b, blocking)
    lo, h = 0.0, FIRST_LIFT
    while True:
        if feasible(_lifted(a, b, direction, h)):
            break
        if h >= MAX_LIFT:
            raise NoFeasibleCurve(f"no lift up to {MAX_LIFT:g} m achieves clearance {margin:g} m")
        lo, h = h, min(2.0 * h, MAX_LIFT)
    while h - lo > LIFT_RESOLUTION:
        mid = 0.5 * (lo + h)
        if feasible(_lifted(a, b, direction, mid)):
            h = mid
        else:
            lo = mid
    return _lifted(a, b, direction, h)


@dataclass(frozen=True)
class Opening:
    center: np.ndarray
    radius: float


def top_opening(prim: GeometricPrimitive) -> Opening:
    """Opening of a container-like primitive: the highest face center and its inscribed radius."""
    if isinstance(prim, Sphere):
        return Opening(np.asarray(prim.center) + [0.0, 0.0, prim.radius], prim.radius)
    if isinstance(prim, Cylinder):
        ends = [np.asarray(prim.axis_point), np.asarray(prim.top_center)]
        return Opening(max(ends, key=lambda p: p[2]), prim.radius)
    if isinstance(prim, Cuboid):
        axes, half = prim.axes, np.asarray(prim.half_extents)
        k = int(np.argmax(np.abs(axes[2])))
        sign = 1.0 if axes[2, k] > 0 else -1.0
        others = [half[i] for i in range(3) if i != k]
        return Opening(np.asarray(prim.center) + sign * half[k] * axes[:, k], float(min(others)))
    if isinstance(prim, ConvexEnvelope):
        pts = prim.points
        top = float(pts[:, 2].max())
        xy = pts[:, :2].mean(axis=0)
        r = float(np.linalg.norm(pts[:, :2] - xy, axis=1).min())
        return Opening(np.array([xy[0], xy[1], top]), max(r, 1e-6))
    raise PolicyViolation(f"{prim.kind} has no well-defined opening")


def vertical_extent(prim: GeometricPrimitive) -> float:
    if isinstance(prim, Sphere):
        return 2.0 * prim.radius
    if isinstance(prim, Cylinder):
        return prim.height
    if isinstance(prim, Cuboid):
        k = int(np.argmax(np.abs(prim.axes[2])))
        return 2.0 * float(prim.half_extents[k])
    if isinstance(prim, ConvexEnvelope):
        return float(np.ptp(prim.points[:, 2]))
    raise PolicyViolation(f"{prim.kind} has no height")


def pour_tilt_axis(base: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Horizontal tilt axis that tips the vessel away from the robot base."""
    u = np.asarray(target, dtype=float)[:2] - np.asarray(base, dtype=float)[:2]
    n = float(np.linalg.norm(u))
    u = np.array([1.0, 0.0]) if n < 1e-9 else u / n
    return np.array([-u[1], u[0], 0.0])


def synth_pour(grasp: Pose, vessel: GeometricPrimitive, target: GeometricPrimitive, constraints: ConstraintSet) -> TrajectorySpec:
    """Transit to a hover point above the target, then tilt in place.

    The hover height puts the vessel's underside ``clearance_margin`` above
    the target's opening (vessel held at mid-height). The hover is shifted
    horizontally so the path traced by the vessel's mouth during the tilt is
    centered on the opening; pouring is refused when that path cannot fit.
    """
    robot = constraints.robot
    if robot.max_tilt <= MIN_POUR_TILT:
        raise PolicyViolation(f"max_tilt {robot.max_tilt:.3f} rad is too small to pour (needs > {MIN_POUR_TILT})")
    tilt = min(POUR_TILT_LIMIT, robot.max_tilt)
    target_open = top_opening(target)
    mouth = top_opening(vessel).center
    g = np.asarray(grasp.position)
    axis = pour_tilt_axis(constraints.base, target_open.center)
    angles = np.linspace(0.0, tilt, 65)
    rel = np.repeat((mouth - g).reshape(1, 3), len(angles), axis=0)
    swept = rotate_points_about_axis(rel, (0.0, 0.0, 0.0), axis, angles)[:, :2]
    center = 0.5 * (swept.min(axis=0) + swept.max(axis=0))
    spread = float(np.linalg.norm(swept - center, axis=1).max())
    if spread > target_open.radius:
        raise PolicyViolation(
            f"vessel mouth sweeps {spread:.3f} m from center; target opening radius is {target_open.radius:.3f} m"
        )
    hover = np.array(
        [
            target_open.center[0] - center[0],
            target_open.center[1] - center[1],
            target_open.center[2] + 0.5 * vertical_extent(vessel) + constraints.clearance_margin,
        ]
    )
    dist = float(np.linalg.norm(hover - constraints.base))
    if dist > robot.arm_reach_radius:
        raise UnreachableHover(f"hover point is {dist:.3f} m from the arm base (reach {robot.arm_reach_radius:.3f} m)")
    transit: Curve = LineSegment(tuple(g), tuple(hover))
    obstacles = [o for o in constraints.obstacles if not isinstance(o, HingeAxis)]
    if obstacles and min_clearance(transit, obstacles, _clearance_samples(transit)) < constraints.clearance_margin:
        transit = synth_bezier_avoid(g, hover, constraints)
    curve = Composite((transit, LineSegment(tuple(hover), tuple(hover))))
    policy = TiltRamp(tuple(axis), 0.0, tilt, grasp.orientation, POUR_RAMP_STEPS)
    return TrajectorySpec(curve, policy, DEFAULT_WAYPOINTS + POUR_RAMP_STEPS, ((0, "closed"),))


# Export


def waypoints_csv(waypoints: list[Waypoint]) -> str:
    rows = ["index,x,y,z,qw,qx,qy,qz,gripper,dwell"]
    for i, w in enumerate(waypoints):
        vals = list(w.pose.position) + list(w.pose.orientation)
        g = w.gripper if isinstance(w.gripper, str) else format(w.gripper, ".9g")
        rows.append(",".join([str(i)] + [format(float(v), ".9g") for v in vals] + [g, format(w.dwell, ".9g")]))
    return "\n".join(rows) + "\n"


def _outline_xy(prim: GeometricPrimitive) -> np.ndarray | None:
    if isinstance(prim, Sphere):
        th = np.linspace(0, 2 * np.pi, 33)
        return np.asarray(prim.center)[:2] + prim.radius * np.c_[np.cos(th), np.sin(th)]
    if isinstance(prim, Cuboid):
        c = prim.corners()[:, :2]
    elif isinstance(prim, Cylinder):
        c = prim.sample_surface(max(prim.radius, prim.height) / 8)[:, :2]
    elif isinstance(prim, ConvexEnvelope):
        c = prim.points[:, :2]
    else:
        return None
    from scipy.spatial import ConvexHull, QhullError

    try:
        hull = ConvexHull(c)
    except QhullError:
        return None
    return c[np.append(hull.vertices, hull.vertices[0])]


def render_svg(curve: Curve, obstacles: Any = (), waypoints: list[Waypoint] | None = None, px_per_m: float = 400.0) -> str:
    """Top-down (x right, y up) drawing of a curve with obstacle outlines."""
    path = points_at_fractions(curve, np.linspace(0.0, 1.0, 200))[:, :2]
    outlines = [o for o in (_outline_xy(p) for p in obstacles) if o is not None]
    allpts = np.vstack([path] + outlines)
    lo = allpts.min(axis=0) - 0.05
    hi = allpts.max(axis=0) + 0.05
    w, h = (hi - lo) * px_per_m

    def xy(p: np.ndarray) -> str:
        return f"{(p[0] - lo[0]) * px_per_m:.2f},{(hi[1] - p[1]) * px_per_m:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" viewBox="0 0 {w:.2f} {h:.2f}">',
        f'<rect width="{w:.2f}" height="{h:.2f}" fill="white"/>',
    ]
    for o in outlines:
        parts.append(f'<polygon points="{" ".join(xy(p) for p in o)}" fill="#ddd" stroke="#555" stroke-width="1"/>')
    parts.append(f'<polyline points="{" ".join(xy(p) for p in path)}" fill="none" stroke="#c22" stroke-width="2"/>')
    for wp in waypoints or []:
        cx, cy = xy(np.asarray(wp.pose.position)).split(",")
        parts.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="#226"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
