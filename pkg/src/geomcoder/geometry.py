"""Geometric value types and the exact queries every other module builds on.

Conventions: world frame is right-handed, z-up, meters, radians. Quaternions
are stored scalar-first as ``(w, x, y, z)``. Signed distances are negative
inside a solid and positive outside, so constraint checks read uniformly as
``clearance >= margin``.

All value types are frozen dataclasses over plain float tuples. Array-valued
work (clouds, batches of query points) uses ``numpy`` arrays of shape (N, 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, ClassVar, Iterable, Sequence, Union

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.transform import Rotation

from .errors import DegenerateInput, SchemaError

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]

UNIT_TOL = 1e-9
# Default surface sampling step for primitive pairs without a closed form.
SURFACE_RESOLUTION = 0.005


def vec3(v: Iterable[float]) -> Vec3:
    x, y, z = (float(c) for c in v)
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise ValueError(f"non-finite point {(x, y, z)}")
    return (x, y, z)


def unit3(v: Iterable[float]) -> Vec3:
    a = np.asarray(tuple(v), dtype=float)
    n = float(np.linalg.norm(a))
    if not math.isfinite(n) or n < 1e-12:
        raise ValueError(f"cannot normalize vector {tuple(a)}")
    if abs(n - 1.0) <= UNIT_TOL:
        return vec3(a)
    return vec3(a / n)


def as_points(points: Any) -> np.ndarray:
    """View anything point-like as a float array of shape (N, 3)."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {arr.shape}")
    return arr


def norm_quat(q: Iterable[float]) -> Quat:
    a = np.asarray(tuple(q), dtype=float)
    n = float(np.linalg.norm(a))
    if a.shape != (4,) or not math.isfinite(n) or n < 1e-12:
        raise ValueError(f"invalid quaternion {tuple(a)}")
    if abs(n - 1.0) > UNIT_TOL:
        a = a / n
    return (float(a[0]), float(a[1]), float(a[2]), float(a[3]))


def quat_to_matrix(q: Quat) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> Quat:
    x, y, z, w = Rotation.from_matrix(np.asarray(m, dtype=float)).as_quat()
    if w < 0:
        w, x, y, z = -w, -x, -y, -z
    return norm_quat((w, x, y, z))


def quat_multiply(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return norm_quat(
        (
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
    )


def quat_conjugate(q: Quat) -> Quat:
    return (q[0], -q[1], -q[2], -q[3])


def quat_from_axis_angle(axis: Iterable[float], angle: float) -> Quat:
    ax = unit3(axis)
    s = math.sin(angle / 2.0)
    return norm_quat((math.cos(angle / 2.0), ax[0] * s, ax[1] * s, ax[2] * s))


IDENTITY_QUAT: Quat = (1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation followed by translation: ``x -> R x + t``."""

    rotation: Quat = IDENTITY_QUAT
    translation: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", norm_quat(self.rotation))
        object.__setattr__(self, "translation", vec3(self.translation))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_translation(cls, t: Iterable[float]) -> RigidTransform:
        return cls(IDENTITY_QUAT, vec3(t))

    @classmethod
    def from_axis_angle(
        cls, axis: Iterable[float], angle: float, about: Iterable[float] | None = None
    ) -> RigidTransform:
        """Rotation by ``angle`` about a line through ``about`` (origin by default)."""
        q = quat_from_axis_angle(axis, angle)
        if about is None:
            return cls(q)
        c = np.asarray(tuple(about), dtype=float)
        return cls(q, vec3(c - quat_to_matrix(q) @ c))

    @classmethod
    def from_matrix(cls, rot: np.ndarray, t: Iterable[float] = (0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(matrix_to_quat(rot), vec3(t))

    @cached_property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @cached_property
    def _t(self) -> np.ndarray:
        return np.asarray(self.translation)

    def apply(self, points: Any) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.matrix.T + self._t

    def apply_vector(self, v: Any) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.matrix.T

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first."""
        rot = quat_multiply(self.rotation, other.rotation)
        return RigidTransform(rot, vec3(self.apply(other.translation)))

    __matmul__ = compose

    def inverse(self) -> RigidTransform:
        qi = quat_conjugate(self.rotation)
        return RigidTransform(qi, vec3(-(quat_to_matrix(qi) @ self._t)))

    def to_dict(self) -> dict:
        return {"rotation": list(self.rotation), "translation": list(self.translation)}

    @classmethod
    def from_dict(cls, d: dict) -> RigidTransform:
        return cls(tuple(d.get("rotation", IDENTITY_QUAT)), tuple(d.get("translation", (0, 0, 0))))


@dataclass(frozen=True)
class Pose:
    position: Vec3
    orientation: Quat = IDENTITY_QUAT

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", vec3(self.position))
        object.__setattr__(self, "orientation", norm_quat(self.orientation))

    def as_transform(self) -> RigidTransform:
        return RigidTransform(self.orientation, self.position)

    def to_dict(self) -> dict:
        return {"position": list(self.position), "orientation": list(self.orientation)}

    @classmethod
    def from_dict(cls, d: dict) -> Pose:
        return cls(tuple(d["position"]), tuple(d.get("orientation", IDENTITY_QUAT)))


def transform_point(p: Iterable[float], T: RigidTransform) -> Vec3:
    return vec3(T.apply(tuple(p)))


def rotate_about_axis(
    p: Iterable[float], axis_point: Iterable[float], axis_dir: Iterable[float], angle: float
) -> Vec3:
    """Rotate ``p`` by ``angle`` about the line through ``axis_point`` along ``axis_dir``.

    Rodrigues' formula; the distance to the axis is preserved to rounding.
    """
    k = np.asarray(unit3(axis_dir))
    v = np.asarray(tuple(p), dtype=float) - np.asarray(tuple(axis_point), dtype=float)
    c, s = math.cos(angle), math.sin(angle)
    along = k * float(k @ v)
    perp = v - along
    rotated = along + perp * c + np.cross(k, perp) * s
    return vec3(rotated + np.asarray(tuple(axis_point), dtype=float))


def rotate_points_about_axis(
    points: np.ndarray, axis_point: Iterable[float], axis_dir: Iterable[float], angles: np.ndarray
) -> np.ndarray:
    """Vectorized :func:`rotate_about_axis`; one angle per point (broadcastable)."""
    k = np.asarray(unit3(axis_dir))
    a = np.asarray(tuple(axis_point), dtype=float)
    v = as_points(points) - a
    ang = np.asarray(angles, dtype=float).reshape(-1, 1)
    along = np.outer(v @ k, k)
    perp = v - along
    return a + along + perp * np.cos(ang) + np.cross(k, perp) * np.sin(ang)


def _point_line_distance(points: np.ndarray, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
    rel = points - origin
    along = rel @ direction
    return np.linalg.norm(rel - np.outer(along, direction), axis=1)


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point (N,3) to each segment (F,3)-(F,3); returns (N, F)."""
    ab = b - a
    denom = np.einsum("fk,fk->f", ab, ab)
    denom = np.where(denom > 0, denom, 1.0)
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nfk,fk->nf", rel, ab) / denom, 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=2)


def _triangle_distance(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Unsigned distance from each point to the nearest of the triangles ``tri`` (F,3,3)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    rel = points[:, None, :] - a[None]
    h = np.einsum("nfk,fk->nf", rel, n)
    proj = points[:, None, :] - h[..., None] * n[None]
    inside = np.ones(h.shape, dtype=bool)
    for p0, p1 in ((a, b), (b, c), (c, a)):
        edge = np.cross((p1 - p0)[None], proj - p0[None])
        inside &= np.einsum("nfk,fk->nf", edge, n) >= 0.0
    edges = np.minimum(
        np.minimum(_segment_distance(points, a, b), _segment_distance(points, b, c)),
        _segment_distance(points, c, a),
    )
    dist = np.where(inside, np.abs(h), edges)
    return dist.min(axis=1)


def _fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(2, int(math.ceil((hi - lo) / step)) + 1)
    return np.linspace(lo, hi, n)


def orthonormal_basis(d: Iterable[float]) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``d`` to a right-handed frame (u, v, d)."""
    k = np.asarray(unit3(d))
    helper = np.array([1.0, 0.0, 0.0]) if abs(k[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(helper, k)
    u /= np.linalg.norm(u)
    v = np.cross(k, u)
    return u, v


@dataclass(frozen=True)
class Sphere:
    center: Vec3
    radius: float
    kind: ClassVar[str] = "sphere"

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", vec3(self.center))
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError(f"sphere radius must be > 0, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))

    def signed_distance(self, points: Any) -> np.ndarray:
        return np.linalg.norm(as_points(points) - np.asarray(self.center), axis=1) - self.radius

    def transformed(self, T: RigidTransform) -> Sphere:
        return Sphere(transform_point(self.center, T), self.radius)

    def sample_surface(self, resolution: float = SURFACE_RESOLUTION) -> np.ndarray:
        count = max(16, int(math.ceil(4 * math.pi * self.radius**2 / resolution**2)))
        return np.asarray(self.center) + self.radius * _fibonacci_sphere(count)

    def centroid(self) -> np.ndarray:
        return np.asarray(self.center)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Cylinder:
    """Finite solid cylinder; ``axis_point`` is the center of the base disk."""

    axis_point: Vec3
    axis_dir: Vec3
    radius: float
    height: float
    kind: ClassVar[str] = "cylinder"

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis_point", vec3(self.axis_point))
        object.__setattr__(self, "axis_dir", unit3(self.axis_dir))
        if not (self.radius > 0 and self.height > 0):
            raise ValueError(f"cylinder needs radius, height > 0, got {self.radius}, {self.height}")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "height", float(self.height))

    @property
    def center(self) -> Vec3:
        return vec3(np.asarray(self.axis_point) + 0.5 * self.height * np.asarray(self.axis_dir))

    @property
    def top_center(self) -> Vec3:
        return vec3(np.asarray(self.axis_point) + self.height * np.asarray(self.axis_dir))

    def signed_distance(self, points: Any) -> np.ndarray:
        d = np.asarray(self.axis_dir)
        rel = as_points(points) - np.asarray(self.center)
        axial = rel @ d
        radial = np.linalg.norm(rel - np.outer(axial, d), axis=1)
        qx = radial - self.radius
        qy = np.abs(axial) - 0.5 * self.height
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        return outside + np.minimum(np.maximum(qx, qy), 0.0)

    def transformed(self, T: RigidTransform) -> Cylinder:
        return Cylinder(
            transform_point(self.axis_point, T),
            unit3(T.apply_vector(self.axis_dir)),
            self.radius,
            self.height,
        )

    def sample_surface(self, resolution: float = SURFACE_RESOLUTION) -> np.ndarray:
        d = np.asarray(self.axis_dir)
        u, v = orthonormal_basis(d)
        base = np.asarray(self.axis_point)
        n_theta = max(12, int(math.ceil(2 * math.pi * self.radius / resolution)))
        theta = np.arange(n_theta) * (2 * math.pi / n_theta)
        ring = np.outer(np.cos(theta), u) + np.outer(np.sin(theta), v)
        heights = _grid(0.0, self.height, resolution)
        lateral = (base + np.outer(heights, d))[:, None, :] + self.radius * ring[None]
        parts = [lateral.reshape(-1, 3)]
        for h in (0.0, self.height):
            for rr in _grid(0.0, self.radius, resolution)[:-1]:
                parts.append(base + h * d + rr * ring)
        return np.vstack(parts)

    def centroid(self) -> np.ndarray:
        return np.asarray(self.center)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "axis_point": list(self.axis_point),
            "axis_dir": list(self.axis_dir),
            "radius": self.radius,
            "height": self.height,
        }


@dataclass(frozen=True)
class Cuboid:
    """Oriented box: columns of the orientation matrix are the local axes."""

    center: Vec3
    half_extents: Vec3
    orientation: Quat = IDENTITY_QUAT
    kind: ClassVar[str] = "cuboid"

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "half_extents", vec3(self.half_extents))
        if min(self.half_extents) <= 0:
            raise ValueError(f"cuboid half_extents must be > 0, got {self.half_extents}")
        object.__setattr__(self, "orientation", norm_quat(self.orientation))

    @cached_property
    def axes(self) -> np.ndarray:
        """3x3 matrix whose columns are the local x, y, z axes in world frame."""
        return quat_to_matrix(self.orientation)

    def local(self, points: Any) -> np.ndarray:
        return (as_points(points) - np.asarray(self.center)) @ self.axes

    def signed_distance(self, points: Any) -> np.ndarray:
        q = np.abs(self.local(points)) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return outside + np.minimum(q.max(axis=1), 0.0)

    def transformed(self, T: RigidTransform) -> Cuboid:
        return Cuboid(
            transform_point(self.center, T),
            self.half_extents,
            quat_multiply(T.rotation, self.orientation),
        )

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
        return np.asarray(self.center) + (signs * np.asarray(self.half_extents)) @ self.axes.T

    def sample_surface(self, resolution: float = SURFACE_RESOLUTION) -> np.ndarray:
        h = np.asarray(self.half_extents)
        pts = []
        for axis in range(3):
            a, b = [i for i in range(3) if i != axis]
            ga, gb = _grid(-h[a], h[a], resolution), _grid(-h[b], h[b], resolution)
            A, B = np.meshgrid(ga, gb, indexing="ij")
            for sign in (-1.0, 1.0):
                local = np.zeros((A.size, 3))
                local[:, a] = A.ravel()
                local[:, b] = B.ravel()
                local[:, axis] = sign * h[axis]
                pts.append(local)
        return np.asarray(self.center) + np.vstack(pts) @ self.axes.T

    def centroid(self) -> np.ndarray:
        return np.asarray(self.center)

    def volume(self) -> float:
        return 8.0 * float(np.prod(self.half_extents))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "center": list(self.center),
            "half_extents": list(self.half_extents),
            "orientation": list(self.orientation),
        }


@dataclass(frozen=True)
class Plane:
    """Half-space ``normal . x <= offset``; the boundary is the plane itself."""

    normal: Vec3
    offset: float
    kind: ClassVar[str] = "plane"

    def __post_init__(self) -> None:
        object.__setattr__(self, "normal", unit3(self.normal))
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, points: Any) -> np.ndarray:
        return as_points(points) @ np.asarray(self.normal) - self.offset

    def transformed(self, T: RigidTransform) -> Plane:
        n = unit3(T.apply_vector(self.normal))
        return Plane(n, self.offset + float(np.dot(n, T.translation)))

    def centroid(self) -> np.ndarray:
        return self.offset * np.asarray(self.normal)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "normal": list(self.normal), "offset": self.offset}


@dataclass(frozen=True)
class HingeAxis:
    point: Vec3
    direction: Vec3
    swing_range: tuple[float, float] = (0.0, math.pi / 2)
    kind: ClassVar[str] = "hinge"

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", vec3(self.point))
        object.__setattr__(self, "direction", unit3(self.direction))
        lo, hi = (float(a) for a in self.swing_range)
        if lo > hi:
            raise ValueError(f"swing_range lo > hi: {(lo, hi)}")
        object.__setattr__(self, "swing_range", (lo, hi))

    def signed_distance(self, points: Any) -> np.ndarray:
        return _point_line_distance(as_points(points), np.asarray(self.point), np.asarray(self.direction))

    def transformed(self, T: RigidTransform) -> HingeAxis:
        return HingeAxis(
            transform_point(self.point, T), unit3(T.apply_vector(self.direction)), self.swing_range
        )

    def centroid(self) -> np.ndarray:
        return np.asarray(self.point)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "point": list(self.point),
            "direction": list(self.direction),
            "swing_range": list(self.swing_range),
        }


@dataclass(frozen=True)
class ConvexEnvelope:
    """Convex hull given by its vertex set (every vertex must be extreme)."""

    vertices: tuple[Vec3, ...]
    kind: ClassVar[str] = "envelope"
    _hull: Any = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        verts = tuple(vec3(v) for v in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 4:
            raise DegenerateInput(f"envelope needs >= 4 vertices, got {len(verts)}")
        try:
            hull = ConvexHull(np.asarray(verts))
        except QhullError as exc:
            raise DegenerateInput("envelope vertices are coplanar") from exc
        if len(hull.vertices) != len(verts):
            raise ValueError("envelope has vertices that are not extreme points")
        object.__setattr__(self, "_hull", hull)

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.vertices)

    @cached_property
    def triangles(self) -> np.ndarray:
        return self.points[self._hull.simplices]

    @cached_property
    def equations(self) -> np.ndarray:
        """Facet half-spaces ``n . x + b <= 0`` with unit outward ``n``."""
        return self._hull.equations

    def signed_distance(self, points: Any) -> np.ndarray:
        p = as_points(points)
        eq = self.equations
        plane = p @ eq[:, :3].T + eq[:, 3]
        inside_depth = plane.max(axis=1)
        out = np.empty(len(p))
        inside = inside_depth <= 0.0
        out[inside] = inside_depth[inside]
        if (~inside).any():
            out[~inside] = _triangle_distance(p[~inside], self.triangles)
        return out

    def transformed(self, T: RigidTransform) -> ConvexEnvelope:
        return ConvexEnvelope(tuple(vec3(v) for v in T.apply(self.points)))

    def sample_surface(self, resolution: float = SURFACE_RESOLUTION) -> np.ndarray:
        pts = [self.points]
        for a, b, c in self.triangles:
            longest = max(np.linalg.norm(b - a), np.linalg.norm(c - a), np.linalg.norm(c - b))
            n = max(1, int(math.ceil(longest / resolution)))
            i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
            keep = (i + j) <= n
            wi, wj = i[keep] / n, j[keep] / n
            pts.append(a + np.outer(wi, b - a) + np.outer(wj, c - a))
        return np.vstack(pts)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def volume(self) -> float:
        return float(self._hull.volume)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "vertices": [list(v) for v in self.vertices]}


GeometricPrimitive = Union[Sphere, Cylinder, Cuboid, Plane, HingeAxis, ConvexEnvelope]
PRIMITIVE_KINDS = ("sphere", "cylinder", "cuboid", "plane", "hinge", "envelope")


def distance_to_primitive(p: Iterable[float], prim: GeometricPrimitive) -> float:
    """Signed distance from a point to a primitive (negative inside).

    Hinge axes are lines, not solids: their distance is unsigned.
    """
    return float(prim.signed_distance(np.asarray(tuple(p), dtype=float))[0])


def transform_primitive(prim: GeometricPrimitive, T: RigidTransform) -> GeometricPrimitive:
    return prim.transformed(T)


def _support_min(prim: GeometricPrimitive, n: np.ndarray) -> float:
    """min over the solid of ``n . x`` for a unit direction ``n``."""
    if isinstance(prim, Sphere):
        return float(n @ np.asarray(prim.center)) - prim.radius
    if isinstance(prim, Cuboid):
        spread = np.abs(n @ prim.axes) @ np.asarray(prim.half_extents)
        return float(n @ np.asarray(prim.center) - spread)
    if isinstance(prim, Cylinder):
        d = np.asarray(prim.axis_dir)
        c = float(n @ d)
        lateral = prim.radius * math.sqrt(max(0.0, 1.0 - c * c))
        return float(n @ np.asarray(prim.center)) - 0.5 * prim.height * abs(c) - lateral
    if isinstance(prim, ConvexEnvelope):
        return float((prim.points @ n).min())
    raise TypeError(f"no support function for {prim.kind}")


def _plane_clearance(plane: Plane, other: GeometricPrimitive) -> float:
    n = np.asarray(plane.normal)
    if isinstance(other, Plane):
        if float(n @ np.asarray(other.normal)) <= -1.0 + 1e-12:
            return -(plane.offset + other.offset)
        return -math.inf
    if isinstance(other, HingeAxis):
        if abs(float(n @ np.asarray(other.direction))) > 1e-12:
            return -math.inf
        return float(n @ np.asarray(other.point)) - plane.offset
    return _support_min(other, n) - plane.offset


def _line_window(hinge: HingeAxis, other: GeometricPrimitive, resolution: float) -> np.ndarray:
    d = np.asarray(hinge.direction)
    p0 = np.asarray(hinge.point)
    c = other.centroid()
    if isinstance(other, ConvexEnvelope):
        reach = float(np.linalg.norm(other.points - c, axis=1).max())
    elif isinstance(other, Cuboid):
        reach = float(np.linalg.norm(other.half_extents))
    elif isinstance(other, Cylinder):
        reach = math.hypot(other.radius, 0.5 * other.height)
    else:
        reach = 0.0
    mid = float((c - p0) @ d)
    s = _grid(mid - reach - resolution, mid + reach + resolution, resolution)
    return p0 + np.outer(s, d)


def primitive_clearance(
    a: GeometricPrimitive, b: GeometricPrimitive, resolution: float = SURFACE_RESOLUTION
) -> float:
    """Signed clearance between two primitives; negative iff they interpenetrate.

    Pairs involving a sphere or a plane are analytic. Other pairs are estimated
    by sampling both surfaces at ``resolution``; the estimate is exact to
    within that resolution and symmetric by construction.
    """
    if isinstance(b, Sphere) and not isinstance(a, Sphere):
        a, b = b, a
    if isinstance(a, Sphere):
        if isinstance(b, Sphere):
            gap = float(np.linalg.norm(np.asarray(a.center) - np.asarray(b.center)))
            return gap - a.radius - b.radius
        return distance_to_primitive(a.center, b) - a.radius
    if isinstance(b, Plane):
        a, b = b, a
    if isinstance(a, Plane):
        return _plane_clearance(a, b)
    if isinstance(b, HingeAxis):
        a, b = b, a
    if isinstance(a, HingeAxis):
        if isinstance(b, HingeAxis):
            d1, d2 = np.asarray(a.direction), np.asarray(b.direction)
            w = np.asarray(b.point) - np.asarray(a.point)
            cross = np.cross(d1, d2)
            cn = float(np.linalg.norm(cross))
            if cn < 1e-12:
                return float(np.linalg.norm(w - (w @ d1) * d1))
            return abs(float(w @ cross)) / cn
        return float(b.signed_distance(_line_window(a, b, resolution)).min())
    d_ab = float(b.signed_distance(a.sample_surface(resolution)).min())
    d_ba = float(a.signed_distance(b.sample_surface(resolution)).min())
    return min(d_ab, d_ba)


def primitive_to_dict(prim: GeometricPrimitive) -> dict:
    return prim.to_dict()


def _req(d: dict, key: str) -> Any:
    if key not in d:
        raise SchemaError(key, "missing field")
    return d[key]


def primitive_from_dict(d: dict) -> GeometricPrimitive:
    """Inverse of :func:`primitive_to_dict` (tagged union on ``kind``)."""
    if not isinstance(d, dict):
        raise SchemaError("primitive", "expected an object")
    kind = _req(d, "kind")
    try:
        if kind == "sphere":
            return Sphere(tuple(_req(d, "center")), float(_req(d, "radius")))
        if kind == "cylinder":
            return Cylinder(
                tuple(_req(d, "axis_point")),
                tuple(_req(d, "axis_dir")),
                float(_req(d, "radius")),
                float(_req(d, "height")),
            )
        if kind == "cuboid":
            return Cuboid(
                tuple(_req(d, "center")),
                tuple(_req(d, "half_extents")),
                tuple(d.get("orientation", IDENTITY_QUAT)),
            )
        if kind == "plane":
            return Plane(tuple(_req(d, "normal")), float(_req(d, "offset")))
        if kind == "hinge":
            return HingeAxis(
                tuple(_req(d, "point")),
                tuple(_req(d, "direction")),
                tuple(d.get("swing_range", (0.0, math.pi / 2))),
            )
        if kind == "envelope":
            return ConvexEnvelope(tuple(tuple(v) for v in _req(d, "vertices")))
    except (TypeError, ValueError) as exc:
        raise SchemaError(kind, str(exc)) from exc
    raise SchemaError("kind", f"unknown primitive kind {kind!r}")


@dataclass(frozen=True)
class ParamObject:
    """A scene object reduced to named primitive parts.

    ``map_label`` ties the object to its cells in a bird's-eye map (0 when the
    object has no map footprint).
    """

    object_id: str
    class_label: str
    parts: tuple[tuple[str, GeometricPrimitive], ...]
    functional_part: str | None = None
    map_label: int = 0

    def __post_init__(self) -> None:
        parts = tuple((str(n), p) for n, p in self.parts)
        names = [n for n, _ in parts]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate part names in {self.object_id}: {names}")
        if self.functional_part is not None and self.functional_part not in names:
            raise ValueError(f"functional part {self.functional_part!r} not among {names}")
        object.__setattr__(self, "parts", parts)

    def part(self, name: str) -> GeometricPrimitive | None:
        for n, p in self.parts:
            if n == name:
                return p
        return None

    def has(self, name: str) -> bool:
        return self.part(name) is not None

    @property
    def primary(self) -> GeometricPrimitive:
        """The first part; single-part objects are just this primitive."""
        return self.parts[0][1]

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "class_label": self.class_label,
            "parts": [{"name": n, "primitive": p.to_dict()} for n, p in self.parts],
            "functional_part": self.functional_part,
            "map_label": self.map_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ParamObject:
        try:
            parts = tuple((p["name"], primitive_from_dict(p["primitive"])) for p in _req(d, "parts"))
            return cls(
                str(_req(d, "object_id")),
                str(_req(d, "class_label")),
                parts,
                d.get("functional_part"),
                int(d.get("map_label", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError("object", str(exc)) from exc


@dataclass(frozen=True)
class RobotProfile:
    base_footprint_radius: float = 0.25
    arm_reach_radius: float = 1.0
    gripper_aperture_max: float = 0.1
    passage_width: float = 0.6
    max_tilt: float = 2.2

    def __post_init__(self) -> None:
        for name in (
            "base_footprint_radius",
            "arm_reach_radius",
            "gripper_aperture_max",
            "passage_width",
            "max_tilt",
        ):
            value = float(getattr(self, name))
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"robot profile {name} must be > 0, got {value}")
            object.__setattr__(self, name, value)

    def to_dict(self) -> dict:
        return {
            "base_footprint_radius": self.base_footprint_radius,
            "arm_reach_radius": self.arm_reach_radius,
            "gripper_aperture_max": self.gripper_aperture_max,
            "passage_width": self.passage_width,
            "max_tilt": self.max_tilt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RobotProfile:
        known = {k: d[k] for k in cls().to_dict() if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise SchemaError(sorted(unknown)[0], "unknown robot profile field")
        try:
            return cls(**known)
        except (TypeError, ValueError) as exc:
            raise SchemaError("profile", str(exc)) from exc
