"""Point-cloud containers and ASCII PLY reading/writing."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import InputError, SchemaError
from .geometry import as_points


class PlyError(InputError):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = as_points(self.points)
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(colors) != len(pts):
                raise ValueError("colors must match points")
            object.__setattr__(self, "colors", colors)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class LabeledPointCloud:
    points: np.ndarray
    labels: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(pts) != len(labels):
            raise ValueError(f"{len(pts)} points but {len(labels)} labels")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.points)


def cloud_points(cloud: Any) -> np.ndarray:
    """Accept a PointCloud, LabeledPointCloud or any (N, 3) array-like."""
    if isinstance(cloud, (PointCloud, LabeledPointCloud)):
        return cloud.points
    return as_points(cloud)


_PLY_TYPES = {
    "char": int, "uchar": int, "short": int, "ushort": int, "int": int, "uint": int,
    "int8": int, "uint8": int, "int16": int, "uint16": int, "int32": int, "uint32": int,
    "float": float, "double": float, "float32": float, "float64": float,
}


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Read an ASCII PLY file; returns ``(points, colors_or_None, labels_or_None)``."""
    try:
        lines = Path(path).read_text(encoding="ascii").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise PlyError(f"cannot read PLY {path}: {exc}") from exc
    if not lines or lines[0].strip() != "ply":
        raise PlyError(f"{path}: missing 'ply' magic on line 1")
    elements: list[tuple[str, int, list[str]]] = []
    i = 1
    fmt_seen = False
    while True:
        if i >= len(lines):
            raise PlyError(f"{path}: header has no end_header")
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise PlyError(f"{path}: line {i}: only ascii PLY is supported")
            fmt_seen = True
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyError(f"{path}: line {i}: malformed element line")
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise PlyError(f"{path}: line {i}: property before any element")
            if tok[1] == "list":
                elements[-1][2].append("__list__")
            else:
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise PlyError(f"{path}: line {i}: malformed property line")
                elements[-1][2].append(tok[2])
        elif tok[0] == "end_header":
            break
        else:
            raise PlyError(f"{path}: line {i}: unexpected header keyword {tok[0]!r}")
    if not fmt_seen:
        raise PlyError(f"{path}: missing format line")

    points = colors = labels = None
    for name, count, props in elements:
        if name != "vertex":
            i += count
            continue
        if "__list__" in props:
            raise PlyError(f"{path}: list properties on vertex are not supported")
        for axis in ("x", "y", "z"):
            if axis not in props:
                raise PlyError(f"{path}: vertex element lacks property {axis}")
        rows = []
        for k in range(count):
            if i + k >= len(lines):
                raise PlyError(f"{path}: expected {count} vertices, file ends at {len(rows)}")
            fields = lines[i + k].split()
            if len(fields) != len(props):
                raise PlyError(f"{path}: line {i + k + 1}: expected {len(props)} values")
            try:
                rows.append([float(v) for v in fields])
            except ValueError as exc:
                raise PlyError(f"{path}: line {i + k + 1}: {exc}") from exc
        i += count
        data = np.asarray(rows, dtype=float).reshape(count, len(props))
        col = {p: j for j, p in enumerate(props)}
        points = data[:, [col["x"], col["y"], col["z"]]]
        if not np.isfinite(points).all():
            raise PlyError(f"{path}: non-finite vertex coordinates")
        if all(c in col for c in ("red", "green", "blue")):
            colors = data[:, [col["red"], col["green"], col["blue"]]].astype(np.uint8)
        if "label" in col:
            labels = data[:, col["label"]].astype(np.int64)
    if points is None:
        raise PlyError(f"{path}: no vertex element")
    return points, colors, labels


def write_ply(
    path: str | Path,
    points: np.ndarray,
    colors: np.ndarray | None = None,
    labels: np.ndarray | None = None,
) -> None:
    pts = as_points(points) if len(points) else np.zeros((0, 3))
    header = ["ply", "format ascii 1.0", f"element vertex {len(pts)}"]
    header += [f"property float {a}" for a in "xyz"]
    if colors is not None:
        header += [f"property uchar {c}" for c in ("red", "green", "blue")]
    if labels is not None:
        header.append("property int label")
    header.append("end_header")
    rows = []
    for k, p in enumerate(pts):
        fields = [format(float(v), ".9g") for v in p]
        if colors is not None:
            fields += [str(int(c)) for c in colors[k]]
        if labels is not None:
            fields.append(str(int(labels[k])))
        rows.append(" ".join(fields))
    Path(path).write_text("\n".join(header + rows) + "\n", encoding="ascii")


def load_point_cloud(path: str | Path) -> PointCloud:
    points, colors, _ = read_ply(path)
    return PointCloud(points, colors)


def load_labeled_cloud(path: str | Path, sidecar: str | Path | None = None) -> LabeledPointCloud:
    """Load a PLY plus labels from its ``label`` property or a JSON sidecar.

    The sidecar maps point index (as a string key) to an integer label;
    unlisted points get label 0.
    """
    points, colors, labels = read_ply(path)
    if sidecar is not None:
        try:
            mapping = json.loads(Path(sidecar).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read label sidecar {sidecar}: {exc}") from exc
        if not isinstance(mapping, dict):
            raise SchemaError("labels", "sidecar must be an object of index -> label")
        labels = np.zeros(len(points), dtype=np.int64)
        for key, value in mapping.items():
            try:
                idx = int(key)
                labels[idx] = int(value)
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"labels[{key}]", str(exc)) from exc
    if labels is None:
        labels = np.zeros(len(points), dtype=np.int64)
    return LabeledPointCloud(points, labels, colors)
