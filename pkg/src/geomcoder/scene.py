"""Metric labeled clouds and bird's-eye maps from depth frames and masks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .clouds import LabeledPointCloud, PointCloud, cloud_points
from .errors import (
    DegenerateInput,
    DimensionMismatch,
    EmptyBand,
    EmptyFrame,
    InputError,
    LabelNotFound,
    ParseError,
    SchemaError,
)
from .geometry import RigidTransform, matrix_to_quat
from .jsonio import read_json

DEFAULT_Z_BAND = (0.02, 1.8)


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """Depth image in meters (0 marks invalid pixels) with pinhole intrinsics.

    ``depth`` has shape (height, width); ``camera_pose`` maps camera to world.
    """

    depth: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    camera_pose: RigidTransform = field(default_factory=RigidTransform)

    def __post_init__(self) -> None:
        depth = np.asarray(self.depth, dtype=float)
        if depth.ndim != 2:
            raise ValueError(f"depth must be 2D, got shape {depth.shape}")
        object.__setattr__(self, "depth", depth)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be > 0")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise ValueError("depth values must be finite and >= 0")

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    def header(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "camera_pose": self.camera_pose.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class SemanticMask:
    label: np.ndarray

    def __post_init__(self) -> None:
        lab = np.asarray(self.label)
        if lab.ndim != 2:
            raise ValueError("mask must be 2D")
        if np.any(lab < 0):
            raise ValueError("mask labels must be non-negative")
        object.__setattr__(self, "label", lab.astype(np.int64))

    @property
    def width(self) -> int:
        return self.label.shape[1]

    @property
    def height(self) -> int:
        return self.label.shape[0]


@dataclass(frozen=True, eq=False)
class BirdsEyeMap:
    """Top-down label grid. Row index follows +y, column index follows +x.

    ``counts`` (points binned per cell) is kept when the map is built from a
    cloud and is not serialized.
    """

    origin: tuple[float, float]
    cell_size: float
    cells: np.ndarray
    counts: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be > 0, got {self.cell_size}")
        cells = np.asarray(self.cells, dtype=np.int64)
        if cells.ndim != 2:
            raise ValueError("cells must be a 2D grid")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(math.floor((y - self.origin[1]) / self.cell_size)),
            int(math.floor((x - self.origin[0]) / self.cell_size)),
        )

    def cell_center(self, cell: tuple[int, int]) -> tuple[float, float]:
        r, c = cell
        return (
            self.origin[0] + (c + 0.5) * self.cell_size,
            self.origin[1] + (r + 0.5) * self.cell_size,
        )

    def with_cells(self, cells: np.ndarray) -> BirdsEyeMap:
        return BirdsEyeMap(self.origin, self.cell_size, cells)

    def to_dict(self) -> dict:
        return {
            "origin": list(self.origin),
            "cell_size": self.cell_size,
            "width": self.width,
            "height": self.height,
            "cells": self.cells.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> BirdsEyeMap:
        try:
            w, h = int(d["width"]), int(d["height"])
            cells = np.asarray(d["cells"], dtype=np.int64)
            if cells.size != w * h:
                raise SchemaError("cells", f"expected {w * h} entries, got {cells.size}")
            return cls(tuple(d["origin"]), float(d["cell_size"]), cells.reshape(h, w))
        except KeyError as exc:
            raise SchemaError(str(exc.args[0]), "missing field") from exc
        except (TypeError, ValueError) as exc:
            raise SchemaError("map", str(exc)) from exc

    def to_svg(self, palette_seed: int = 0) -> str:
        """Render cells as colored squares; label 0 stays white."""
        px = 8
        rows = []
        for r in range(self.height):
            for c in range(self.width):
                lab = int(self.cells[r, c])
                if lab == 0:
                    continue
                hue = (lab * 137 + palette_seed) % 360
                y = (self.height - 1 - r) * px
                rows.append(
                    f'<rect x="{c * px}" y="{y}" width="{px}" height="{px}" '
                    f'fill="hsl({hue},60%,55%)"/>'
                )
        w, h = self.width * px, self.height * px
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}">\n<rect width="{w}" height="{h}" fill="white"/>\n'
            + "\n".join(rows)
            + "\n</svg>\n"
        )


def _valid_pixels(frame: DepthFrame) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    v, u = np.nonzero(frame.depth > 0)
    return u, v, frame.depth[v, u]


def unproject_depth(frame: DepthFrame) -> PointCloud:
    """World-frame points for every valid pixel, in row-major pixel order."""
    u, v, d = _valid_pixels(frame)
    if len(d) == 0:
        raise EmptyFrame("depth frame has no valid (non-zero) pixels")
    cam = np.column_stack([(u - frame.cx) * d / frame.fx, (v - frame.cy) * d / frame.fy, d])
    return PointCloud(frame.camera_pose.apply(cam))


def project_points(frame: DepthFrame, points: Any) -> np.ndarray:
    """Pixel coordinates (u, v) of world points; inverse of :func:`unproject_depth`."""
    cam = frame.camera_pose.inverse().apply(cloud_points(points))
    return np.column_stack(
        [frame.fx * cam[:, 0] / cam[:, 2] + frame.cx, frame.fy * cam[:, 1] / cam[:, 2] + frame.cy]
    )


def valid_pixel_coords(frame: DepthFrame) -> np.ndarray:
    """(u, v) of valid pixels in the same order :func:`unproject_depth` emits points."""
    u, v, _ = _valid_pixels(frame)
    return np.column_stack([u, v]).astype(float)


def project_mask(mask: SemanticMask, frame: DepthFrame) -> LabeledPointCloud:
    if (mask.width, mask.height) != (frame.width, frame.height):
        raise DimensionMismatch(
            f"mask is {mask.width}x{mask.height} but depth frame is {frame.width}x{frame.height}"
        )
    cloud = unproject_depth(frame)
    u, v, _ = _valid_pixels(frame)
    return LabeledPointCloud(cloud.points, mask.label[v, u])


def align_similarity(src: Any, dst: Any) -> tuple[float, RigidTransform]:
    """Closed-form least-squares similarity with ``dst ~ s * R @ src + t`` (Umeyama)."""
    a, b = cloud_points(src), cloud_points(dst)
    if len(a) != len(b):
        raise DimensionMismatch(f"{len(a)} source points but {len(b)} destination points")
    if len(a) < 3:
        raise DegenerateInput("align_similarity needs at least 3 correspondences")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    qa, qb = a - mu_a, b - mu_b
    sv = np.linalg.svd(qa, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateInput("align_similarity: source correspondences are collinear")
    cov = qb.T @ qa / len(a)
    U, S, Vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        sign[2] = -1.0
    R = U @ np.diag(sign) @ Vt
    var_a = float((qa * qa).sum() / len(a))
    scale = float((S * sign).sum() / var_a)
    t = mu_b - scale * R @ mu_a
    return scale, RigidTransform(matrix_to_quat(R), tuple(t))


def build_birdseye(
    cloud: LabeledPointCloud, cell_size: float, z_band: tuple[float, float] = DEFAULT_Z_BAND
) -> BirdsEyeMap:
    """Bin in-band points by (x, y); each cell takes its majority label.

    Ties go to the smallest label id. The grid is the tight bounding
    rectangle of the binned points.
    """
    if not cell_size > 0:
        raise ValueError(f"cell_size must be > 0, got {cell_size}")
    lo, hi = z_band
    if not lo < hi:
        raise ValueError(f"z_band must satisfy lo < hi, got {z_band}")
    pts, labels = cloud.points, cloud.labels
    keep = (pts[:, 2] >= lo) & (pts[:, 2] <= hi)
    if not keep.any():
        raise EmptyBand(f"no points with z in [{lo}, {hi}]")
    pts, labels = pts[keep], labels[keep]
    ox, oy = float(pts[:, 0].min()), float(pts[:, 1].min())
    cols = np.floor((pts[:, 0] - ox) / cell_size).astype(np.int64)
    rows = np.floor((pts[:, 1] - oy) / cell_size).astype(np.int64)
    width, height = int(cols.max()) + 1, int(rows.max()) + 1
    flat = rows * width + cols
    uniq_labels, label_idx = np.unique(labels, return_inverse=True)
    votes = np.zeros((height * width, len(uniq_labels)), dtype=np.int64)
    np.add.at(votes, (flat, label_idx), 1)
    counts = votes.sum(axis=1)
    # argmax returns the first maximum, i.e. the smallest label (np.unique sorts).
    cells = np.where(counts > 0, uniq_labels[votes.argmax(axis=1)], 0)
    return BirdsEyeMap((ox, oy), cell_size, cells.reshape(height, width), counts.reshape(height, width))


def crop_by_label(cloud: LabeledPointCloud, label: int) -> PointCloud:
    keep = cloud.labels == label
    if not keep.any():
        raise LabelNotFound(f"no points carry label {label}")
    colors = cloud.colors[keep] if cloud.colors is not None else None
    return PointCloud(cloud.points[keep], colors)


# File formats


def read_depth(raster_path: str | Path, header_path: str | Path) -> DepthFrame:
    """Little-endian float32 raster plus a JSON header with size, intrinsics and pose."""
    header = read_json(header_path)
    try:
        w, h = int(header["width"]), int(header["height"])
        fx, fy = float(header["fx"]), float(header["fy"])
        cx, cy = float(header["cx"]), float(header["cy"])
        pose = RigidTransform.from_dict(header.get("camera_pose", RigidTransform().to_dict()))
    except KeyError as exc:
        raise SchemaError(str(exc.args[0]), "missing header field") from exc
    except (TypeError, ValueError) as exc:
        raise SchemaError("header", str(exc)) from exc
    try:
        raw = Path(raster_path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read depth raster {raster_path}: {exc.strerror}") from exc
    if len(raw) != 4 * w * h:
        raise DimensionMismatch(f"depth raster has {len(raw)} bytes, header implies {4 * w * h}")
    depth = np.frombuffer(raw, dtype="<f4").astype(float).reshape(h, w)
    try:
        return DepthFrame(depth, fx, fy, cx, cy, pose)
    except ValueError as exc:
        raise SchemaError("header", str(exc)) from exc


def write_depth(frame: DepthFrame, raster_path: str | Path) -> None:
    Path(raster_path).write_bytes(frame.depth.astype("<f4").tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) PGM; 16-bit samples are big-endian."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read PGM {path}: {exc.strerror}") from exc
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    magic = tokens[0]
    if magic not in (b"P5", b"P2"):
        raise ParseError(f"{path}: not a PGM file (magic {magic!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"{path}: malformed PGM header") from exc
    if not 0 < maxval < 65536:
        raise ParseError(f"{path}: invalid maxval {maxval}")
    if magic == b"P2":
        vals = data[pos:].split()
        if len(vals) != w * h:
            raise ParseError(f"{path}: expected {w * h} samples, got {len(vals)}")
        return np.asarray([int(v) for v in vals], dtype=np.int64).reshape(h, w)
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    size = w * h * np.dtype(dtype).itemsize
    body = data[pos : pos + size]
    if len(body) != size:
        raise ParseError(f"{path}: expected {size} bytes of samples, got {len(body)}")
    return np.frombuffer(body, dtype=dtype).astype(np.int64).reshape(h, w)


def write_pgm(path: str | Path, labels: np.ndarray) -> None:
    lab = np.asarray(labels)
    if lab.min(initial=0) < 0 or lab.max(initial=0) > 65535:
        raise ValueError("labels must fit in 16 bits")
    h, w = lab.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + lab.astype(">u2").tobytes())


def read_mask(path: str | Path) -> SemanticMask:
    return SemanticMask(read_pgm(path))
