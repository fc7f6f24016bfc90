"""Fit point clouds to geometric primitives.

Every fitter takes an (N, 3) cloud and returns a :class:`FitResult`. Plain
fitters use all points (``inlier_fraction == 1``); :func:`robust_fit` wraps
them in a seeded RANSAC loop for clouds with outliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial import ConvexHull, QhullError

from .clouds import cloud_points
from .errors import AmbiguousHinge, DegenerateInput, InsufficientConsensus
from .geometry import (
    ConvexEnvelope,
    Cuboid,
    Cylinder,
    GeometricPrimitive,
    HingeAxis,
    Plane,
    Sphere,
    matrix_to_quat,
    orthonormal_basis,
    primitive_from_dict,
    unit3,
)

FIT_KINDS = ("plane", "sphere", "cylinder", "cuboid", "envelope")
MIN_POINTS = {"plane": 3, "sphere": 4, "cylinder": 6, "cuboid": 8, "envelope": 4}
DEFAULT_INLIER_THRESHOLD = 0.005
# Relative singular-value floor below which a cloud counts as rank deficient.
RANK_TOL = 1e-9
# Relative eigenvalue gap under which PCA box axes are considered arbitrary.
EIGEN_GAP_TOL = 0.05


@dataclass(frozen=True)
class FitResult:
    primitive: GeometricPrimitive
    rmse: float
    inlier_fraction: float = 1.0

    def __post_init__(self) -> None:
        if not self.rmse >= 0:
            raise ValueError(f"rmse must be >= 0, got {self.rmse}")
        if not 0.0 <= self.inlier_fraction <= 1.0:
            raise ValueError(f"inlier_fraction outside [0, 1]: {self.inlier_fraction}")

    def to_dict(self) -> dict:
        return {
            "primitive": self.primitive.to_dict(),
            "rmse": float(self.rmse),
            "inlier_fraction": float(self.inlier_fraction),
        }

    @classmethod
    def from_dict(cls, d: dict) -> FitResult:
        return cls(primitive_from_dict(d["primitive"]), float(d["rmse"]), float(d["inlier_fraction"]))


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 512
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD
    min_inlier_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be > 0")
        if not 0.0 <= self.min_inlier_fraction <= 1.0:
            raise ValueError("min_inlier_fraction must be in [0, 1]")


def point_residuals(points: Any, prim: GeometricPrimitive) -> np.ndarray:
    """Unsigned distance of every point to the primitive's surface."""
    return np.abs(prim.signed_distance(cloud_points(points)))


def fit_residual(points: Any, prim: GeometricPrimitive) -> float:
    pts = cloud_points(points)
    if len(pts) == 0:
        raise ValueError("fit_residual needs a non-empty cloud")
    r = point_residuals(pts, prim)
    return float(math.sqrt(np.mean(r * r)))


def _require(pts: np.ndarray, kind: str) -> None:
    need = MIN_POINTS[kind]
    if len(pts) < need:
        raise DegenerateInput(f"fit_{kind} requires at least {need} points, got {len(pts)}")


def _singular_values(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    centroid = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    if len(s) < 3:
        s = np.concatenate([s, np.zeros(3 - len(s))])
    return centroid, s, vt


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so it points into the +z hemisphere (ties: +y, then +x)."""
    for axis in (2, 1, 0):
        if abs(v[axis]) > 1e-12:
            return v if v[axis] > 0 else -v
    return v


def fit_plane(points: Any) -> FitResult:
    """Total-least-squares plane through the centroid.

    The normal points toward the side holding fewer points, or toward +z when
    both sides hold the same number.
    """
    pts = cloud_points(points)
    _require(pts, "plane")
    centroid, s, vt = _singular_values(pts)
    if s[1] <= RANK_TOL * max(s[0], 1e-300):
        raise DegenerateInput("fit_plane: points are collinear")
    normal = vt[2] if len(vt) == 3 else np.cross(vt[0], vt[1])
    d = (pts - centroid) @ normal
    eps = RANK_TOL * max(s[0], 1e-12)
    above, below = int((d > eps).sum()), int((d < -eps).sum())
    if above > below:
        normal = -normal
    elif above == below:
        normal = _canonical_sign(normal)
    normal = normal / np.linalg.norm(normal)
    plane = Plane(tuple(normal), float(normal @ centroid))
    return FitResult(plane, fit_residual(pts, plane))


def _sphere_lstsq(pts: np.ndarray) -> Sphere:
    c0 = pts.mean(axis=0)
    q = pts - c0
    A = np.column_stack([2.0 * q, np.ones(len(q))])
    b = np.einsum("ij,ij->i", q, q)
    x, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < 4:
        raise DegenerateInput("fit_sphere: normal matrix is singular (coplanar points)")
    r2 = float(x[3] + x[:3] @ x[:3])
    if not r2 > 0:
        raise DegenerateInput("fit_sphere: non-positive squared radius")
    return Sphere(tuple(c0 + x[:3]), math.sqrt(r2))


def fit_sphere(points: Any) -> FitResult:
    """Algebraic least-squares sphere (linear in center and r^2 - |c|^2)."""
    pts = cloud_points(points)
    _require(pts, "sphere")
    _, s, _ = _singular_values(pts)
    if s[2] <= RANK_TOL * max(s[0], 1e-300):
        raise DegenerateInput("fit_sphere: points are coplanar")
    sphere = _sphere_lstsq(pts)
    return FitResult(sphere, fit_residual(pts, sphere))


def _refine_axis(pts: np.ndarray, origin: np.ndarray, direction: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimize radial residuals over axis point, axis direction and radius."""
    u, v = orthonormal_basis(direction)

    def frame(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = direction + x[0] * u + x[1] * v
        d = d / np.linalg.norm(d)
        return origin + x[2] * u + x[3] * v, d

    def parts(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        p0, d = frame(x)
        rel = pts - p0
        along = rel @ d
        radial = np.linalg.norm(rel - np.outer(along, d), axis=1)
        return along, radial, rel - np.outer(along, d)

    def residual(x: np.ndarray) -> np.ndarray:
        return parts(x)[1] - x[4]

    def jacobian(x: np.ndarray) -> np.ndarray:
        along, radial, w = parts(x)
        n = w / np.maximum(radial, 1e-300)[:, None]
        scale = np.linalg.norm(direction + x[0] * u + x[1] * v)
        nu, nv = n @ u, n @ v
        return np.column_stack([-along * nu / scale, -along * nv / scale, -nu, -nv, -np.ones(len(pts))])

    rel = pts - origin
    r0 = float(np.linalg.norm(rel - np.outer(rel @ direction, direction), axis=1).mean())
    sol = least_squares(
        residual, np.array([0.0, 0.0, 0.0, 0.0, r0]), jac=jacobian, method="lm", xtol=1e-12, ftol=1e-12, gtol=1e-12
    )
    p0, d = frame(sol.x)
    return p0, d, float(np.mean(sol.fun ** 2))


def _closed_cylinder_sd(pts: np.ndarray, base: np.ndarray, d: np.ndarray, r: float, h: float) -> np.ndarray:
    rel = pts - (base + 0.5 * h * d)
    axial = rel @ d
    radial = np.linalg.norm(rel - np.outer(axial, d), axis=1)
    qx, qy = radial - r, np.abs(axial) - 0.5 * h
    return np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0)) + np.minimum(np.maximum(qx, qy), 0.0)


def _refine_closed(
    pts: np.ndarray, base: np.ndarray, direction: np.ndarray, radius: float, height: float
) -> tuple[np.ndarray, np.ndarray, float, float, float]:
    """Minimize distances to the closed surface (side wall and caps)."""
    u, v = orthonormal_basis(direction)

    def unpack(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, float]:
        d = direction + x[0] * u + x[1] * v
        d = d / np.linalg.norm(d)
        return base + x[2] * u + x[3] * v + x[6] * d, d, radius + x[4], height + x[5]

    def residual(x: np.ndarray) -> np.ndarray:
        return _closed_cylinder_sd(pts, *unpack(x))

    # LM needs at least as many residuals as unknowns; minimal samples use TRF
    method = "lm" if len(pts) >= 7 else "trf"
    sol = least_squares(residual, np.zeros(7), method=method, xtol=1e-12, ftol=1e-12, gtol=1e-12)
    b, d, r, h = unpack(sol.x)
    return b, d, r, h, float(np.mean(sol.fun**2))


def fit_cylinder(points: Any, inlier_threshold: float = DEFAULT_INLIER_THRESHOLD) -> FitResult:
    """Cylinder from surface samples (side wall, optionally with caps).

    The axis starts from a principal direction of the cloud and is refined by
    least squares on distances to the closed surface, so cap samples are
    explained rather than dragging the radius. When no cap samples constrain
    the height (an open side wall), height and base come from the extent of
    the axial projections instead. When neither start fits within
    ``inlier_threshold`` RMS, both are retried after a radial-only pre-fit;
    otherwise, unless the fit is already exact, the better axis is retried
    that way, which escapes the shallow minimum where end samples of an open
    wall are explained by a shortened cap.
    The largest-variance direction is the natural start for elongated
    parts such as handles; the smallest-variance direction is tried as well so
    squat cylinders (bowls, cups) converge too, and the better of the two is
    kept.
    """
    pts = cloud_points(points)
    _require(pts, "cylinder")
    centroid, s, vt = _singular_values(pts)
    if s[1] <= RANK_TOL * max(s[0], 1e-300):
        raise DegenerateInput("fit_cylinder: points are collinear")
    candidates = [vt[0]] + ([vt[2]] if len(vt) == 3 else [])
    candidates = [d0 for d0 in candidates if float(np.ptp((pts - centroid) @ d0)) >= 2.0 * inlier_threshold]
    best = None

    def consider(origin: np.ndarray, axis: np.ndarray) -> None:
        nonlocal best
        along = (pts - origin) @ axis
        radius = float(np.linalg.norm(pts - origin - np.outer(along, axis), axis=1).mean())
        base = origin + float(along.min()) * axis
        b, d, r, h, _ = _refine_closed(pts, base, axis, radius, float(np.ptp(along)))
        along = (pts - b) @ d
        # the axial extent competes with the refined height: it wins whenever
        # no cap samples hold the height (an open side wall)
        for b_, h_ in ((b, h), (b + float(along.min()) * d, float(np.ptp(along)))):
            if not (r > 0 and h_ > 0) or h_ > float(np.ptp(along)) + 1e-12:
                continue
            cost = float(np.mean(_closed_cylinder_sd(pts, b_, d, r, h_) ** 2))
            if best is None or cost < best[4] - 1e-18:
                best = (b_, d, r, h_, cost)

    for d0 in candidates:
        consider(centroid, d0)
    if best is None or best[4] > inlier_threshold**2:
        for d0 in candidates:
            consider(*_refine_axis(pts, centroid, d0)[:2])
    elif best[4] > 0.0:
        consider(*_refine_axis(pts, centroid, best[1])[:2])
    if best is None:
        raise DegenerateInput(
            f"fit_cylinder: axial extent below {2.0 * inlier_threshold:g} m (disk-like cloud)"
        )
    base, d, radius, height, _ = best
    if d @ _canonical_sign(d) < 0:
        base, d = base + height * d, -d
    if height < 2.0 * inlier_threshold:
        raise DegenerateInput(
            f"fit_cylinder: axial extent below {2.0 * inlier_threshold:g} m (disk-like cloud)"
        )
    cyl = Cylinder(tuple(base), tuple(d), float(radius), float(height))
    return FitResult(cyl, fit_residual(pts, cyl))


def _box_from_axes(pts: np.ndarray, axes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    proj = pts @ axes
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    center = axes @ ((lo + hi) / 2.0)
    return axes, center, (hi - lo) / 2.0


def _min_area_rect(xy: np.ndarray) -> tuple[float, np.ndarray]:
    """Smallest-area enclosing rectangle of 2D points; returns (area, unit edge direction)."""
    try:
        hull = xy[ConvexHull(xy).vertices]
    except QhullError:
        hull = xy
    best = (math.inf, np.array([1.0, 0.0]))
    for k in range(len(hull)):
        e = hull[(k + 1) % len(hull)] - hull[k]
        n = float(np.linalg.norm(e))
        if n < 1e-12:
            continue
        e = e / n
        f = np.array([-e[1], e[0]])
        area = float(np.ptp(hull @ e) * np.ptp(hull @ f))
        if area < best[0] - 1e-15:
            best = (area, e)
    return best


def _hull_face_frames(pts: np.ndarray, limit: int = 64) -> list[np.ndarray]:
    """Candidate box frames: one axis along a hull facet normal, the others from a min-area rectangle."""
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return []
    verts = pts[hull.vertices]
    normals = hull.equations[:, :3]
    tri = pts[hull.simplices]
    areas = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    grouped: dict[tuple, float] = {}
    for n, a in zip(normals, areas):
        key = tuple(np.round(_canonical_sign(n), 6))
        grouped[key] = grouped.get(key, 0.0) + float(a)
    ordered = sorted(grouped.items(), key=lambda kv: (-kv[1], kv[0]))[:limit]
    frames = []
    for key, _ in ordered:
        n = np.asarray(key) / np.linalg.norm(key)
        u, v = orthonormal_basis(n)
        _, e = _min_area_rect(np.column_stack([verts @ u, verts @ v]))
        a1 = e[0] * u + e[1] * v
        a2 = np.cross(n, a1)
        frames.append(np.column_stack([a1, a2, n]))
    return frames


def _order_axes(pts: np.ndarray, axes: np.ndarray) -> np.ndarray:
    """Sort columns by descending variance, fix signs, make right-handed."""
    var = ((pts - pts.mean(axis=0)) @ axes).var(axis=0)
    order = sorted(range(3), key=lambda k: (-round(float(var[k]), 15), k))
    axes = axes[:, order]
    cols = []
    for k in range(2):
        c = axes[:, k]
        big = int(np.argmax(np.abs(c)))
        cols.append(c if c[big] > 0 else -c)
    cols.append(np.cross(cols[0], cols[1]))
    return np.column_stack(cols)


def fit_cuboid(points: Any) -> FitResult:
    """PCA oriented bounding box.

    Axes are the covariance eigenvectors by descending eigenvalue (right-handed,
    first two with their largest component positive). When two eigenvalues are
    nearly equal the PCA axes are arbitrary within that subspace; in that case
    hull-facet-aligned frames are also tried and the smallest-volume box wins.
    """
    pts = cloud_points(points)
    _require(pts, "cuboid")
    centroid = pts.mean(axis=0)
    cov = np.cov((pts - centroid).T, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    if evals[2] <= RANK_TOL * max(evals[0], 1e-300):
        raise DegenerateInput("fit_cuboid: cloud does not span three dimensions")
    axes = _order_axes(pts, evecs)
    _, center, half = _box_from_axes(pts, axes)
    gaps = (evals[0] - evals[1], evals[1] - evals[2])
    if min(gaps) < EIGEN_GAP_TOL * evals[0]:
        best_vol = float(np.prod(half))
        for frame in _hull_face_frames(pts):
            _, c, h = _box_from_axes(pts, frame)
            vol = float(np.prod(h))
            if vol < best_vol * (1.0 - 1e-9):
                best_vol = vol
                axes = _order_axes(pts, frame)
        _, center, half = _box_from_axes(pts, axes)
    if half.min() <= 0:
        raise DegenerateInput("fit_cuboid: zero extent along an axis")
    box = Cuboid(tuple(center), tuple(half), matrix_to_quat(axes))
    return FitResult(box, fit_residual(pts, box))


def fit_envelope(points: Any) -> FitResult:
    """Convex hull of the cloud as a bounding envelope for deformable objects."""
    pts = cloud_points(points)
    _require(pts, "envelope")
    _, s, _ = _singular_values(pts)
    if s[2] <= RANK_TOL * max(s[0], 1e-300):
        raise DegenerateInput("fit_envelope: points are coplanar")
    verts = pts
    while True:
        try:
            idx = np.sort(ConvexHull(verts).vertices)
        except QhullError as exc:
            raise DegenerateInput("fit_envelope: hull construction failed") from exc
        if len(idx) == len(verts):
            break
        verts = verts[idx]
    return FitResult(ConvexEnvelope(tuple(map(tuple, verts))), 0.0, 1.0)


def fit(points: Any, kind: str, inlier_threshold: float = DEFAULT_INLIER_THRESHOLD) -> FitResult:
    if kind == "plane":
        return fit_plane(points)
    if kind == "sphere":
        return fit_sphere(points)
    if kind == "cylinder":
        return fit_cylinder(points, inlier_threshold)
    if kind == "cuboid":
        return fit_cuboid(points)
    if kind == "envelope":
        return fit_envelope(points)
    raise ValueError(f"unknown primitive kind {kind!r}; expected one of {FIT_KINDS}")


def _cylinder_hypothesis(sample: np.ndarray) -> Cylinder:
    """Infinite-cylinder guess from a minimal sample: one radial refinement
    starting from the sample's principal axis."""
    centroid, s, vt = _singular_values(sample)
    if s[1] <= RANK_TOL * max(s[0], 1e-300):
        raise DegenerateInput("cylinder hypothesis: collinear sample")
    p0, d, _ = _refine_axis(sample, centroid, vt[0])
    rel = sample - p0
    along = rel @ d
    radius = float(np.linalg.norm(rel - np.outer(along, d), axis=1).mean())
    return Cylinder(tuple(p0 + along.min() * d), tuple(d), radius, max(float(np.ptp(along)), 1e-9))


def _hypothesis(kind: str, threshold: float) -> Callable[[np.ndarray], GeometricPrimitive]:
    if kind == "sphere":
        return _sphere_lstsq
    if kind == "cylinder":
        return _cylinder_hypothesis
    return lambda sample: fit(sample, kind, threshold).primitive


def _hypothesis_residuals(pts: np.ndarray, model: GeometricPrimitive) -> np.ndarray:
    """Consensus residuals; a cylinder hypothesis from a minimal sample has
    unreliable caps, so it is scored as an infinite cylinder."""
    if isinstance(model, Cylinder):
        d = np.asarray(model.axis_dir)
        rel = pts - np.asarray(model.axis_point)
        return np.abs(np.linalg.norm(rel - np.outer(rel @ d, d), axis=1) - model.radius)
    return point_residuals(pts, model)


def robust_fit(points: Any, kind: str, cfg: RansacConfig = RansacConfig()) -> tuple[FitResult, np.ndarray]:
    """RANSAC around the plain fitters; returns the fit and a boolean inlier mask.

    Each of ``cfg.max_iterations`` rounds fits a minimal random sample and
    counts points within ``cfg.inlier_threshold``; the best hypothesis (first
    one wins ties) is refit on its inliers. Randomness comes only from
    ``cfg.seed``.
    """
    pts = cloud_points(points)
    if kind not in FIT_KINDS:
        raise ValueError(f"unknown primitive kind {kind!r}; expected one of {FIT_KINDS}")
    _require(pts, kind)
    if kind == "envelope":
        res = fit_envelope(pts)
        return res, np.ones(len(pts), dtype=bool)

    rng = np.random.default_rng(cfg.seed)
    m = MIN_POINTS[kind]
    make = _hypothesis(kind, cfg.inlier_threshold)
    best_count, best_mask = -1, None
    for _ in range(cfg.max_iterations):
        sample = pts[rng.choice(len(pts), size=m, replace=False)]
        try:
            model = make(sample)
        except (DegenerateInput, ValueError, np.linalg.LinAlgError):
            continue
        mask = _hypothesis_residuals(pts, model) <= cfg.inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
    if best_mask is None or best_count < m:
        raise InsufficientConsensus(f"robust_fit({kind}): no hypothesis gathered {m} inliers")

    try:
        refit = fit(pts[best_mask], kind, cfg.inlier_threshold).primitive
    except DegenerateInput as exc:
        raise InsufficientConsensus(f"robust_fit({kind}): inlier set is degenerate: {exc}") from exc
    mask = point_residuals(pts, refit) <= cfg.inlier_threshold
    fraction = float(mask.mean())
    if fraction < cfg.min_inlier_fraction:
        raise InsufficientConsensus(
            f"robust_fit({kind}): inlier fraction {fraction:.3f} below {cfg.min_inlier_fraction:.3f}"
        )
    return FitResult(refit, fit_residual(pts[mask], refit), fraction), mask


def derive_hinge(
    panel: Cuboid,
    handle: Cylinder,
    vertical: Any,
    swing_range: tuple[float, float] = (0.0, math.pi / 2),
) -> HingeAxis:
    """Hinge line of a revolute panel from the panel box and its handle.

    The panel face is spanned by its two largest extents; the face axis closest
    to ``vertical`` gives the hinge direction and the other is the width axis.
    The hinge sits on the face edge (along the width axis) farther from the
    handle. The direction's sign is chosen so that positive rotation swings
    the handle toward the side it protrudes on, i.e. the panel opens by pulling.
    """
    vert = np.asarray(unit3(vertical))
    axes = panel.axes
    half = np.asarray(panel.half_extents)
    order = sorted(range(3), key=lambda k: (-half[k], k))
    face, thick = order[:2], order[2]
    height_ax = max(face, key=lambda k: (abs(float(axes[:, k] @ vert)), -k))
    width_ax = face[0] if face[1] == height_ax else face[1]

    hc = np.asarray(handle.center)
    c = np.asarray(panel.center)
    local = (hc - c) @ axes
    # handles protrude from thin panels, so only the face extents bound the handle
    if np.any(np.abs(local[face]) > 1.5 * half[face] + 1e-12):
        raise DegenerateInput("derive_hinge: handle center lies outside 1.5x the panel face")
    w = axes[:, width_ax]
    s = float(local[width_ax])
    hw = float(half[width_ax])
    to_plus, to_minus = abs(s - hw), abs(s + hw)
    if abs(to_plus - to_minus) < 0.01:
        raise AmbiguousHinge(
            f"derive_hinge: handle is {to_plus:.3f} m and {to_minus:.3f} m from the two edges"
        )
    side = 1.0 if to_plus > to_minus else -1.0
    point = c + side * hw * w

    direction = axes[:, height_ax].copy()
    if direction @ vert < 0:
        direction = -direction
    protrude = float(local[thick])
    if abs(protrude) > 1e-6:
        outward = np.sign(protrude) * axes[:, thick]
        if np.cross(direction, hc - point) @ outward < 0:
            direction = -direction
    return HingeAxis(tuple(point), tuple(direction), swing_range)
