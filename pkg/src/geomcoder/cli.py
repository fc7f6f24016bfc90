"""Command-line entry point: ``geomcoder {fit,scene,synth,run,cache,render}``.

Exit status: 0 on success, 1 on a domain failure (degenerate input, failed
synthesis, a failed subtask), 2 on usage, parse or schema errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Sequence

from .clouds import load_point_cloud, write_ply
from .errors import DomainError, InputError, SchemaError
from .fitting import DEFAULT_INLIER_THRESHOLD, FIT_KINDS, RansacConfig, fit, robust_fit
from .geometry import ParamObject, RobotProfile
from .jsonio import dumps, read_json, write_json
from .pipeline import run_plan
from .planner import SkillCache, load_plan, subtask_from_dict, synthesize_subtask
from .scene import DEFAULT_Z_BAND, BirdsEyeMap, build_birdseye, project_mask, read_depth, read_mask
from .sim import DEFAULT_PERCEPTION_NOISE, RobotState, SceneWorld
from .trajectory import ConstraintSet, TrajectorySpec, render_svg, sample_waypoints, waypoints_csv

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
DEFAULT_CACHE = "geomcoder_cache.json"


class UsageError(InputError):
    pass


def default_cache_path() -> str:
    return os.environ.get("GEOMCODER_CACHE", DEFAULT_CACHE)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_profile(path: str | None, fallback: RobotProfile = RobotProfile()) -> RobotProfile:
    if path is None:
        return fallback
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise SchemaError("profile", "expected a JSON object")
    return RobotProfile.from_dict(doc)


def _load_objects(path: str) -> list[ParamObject]:
    doc = read_json(path)
    if isinstance(doc, dict):
        doc = doc.get("objects")
    if not isinstance(doc, list):
        raise SchemaError("objects", "expected a list of objects or {objects: [...]}")
    return [ParamObject.from_dict(o) for o in doc]


# Subcommands


def cmd_fit(args: argparse.Namespace) -> int:
    cloud = load_point_cloud(args.cloud)
    threshold = args.tolerance if args.tolerance is not None else DEFAULT_INLIER_THRESHOLD
    if args.ransac or args.inliers:
        cfg = RansacConfig(args.iterations, threshold, args.min_inlier_fraction, args.seed)
        result, mask = robust_fit(cloud.points, args.kind, cfg)
        if args.inliers:
            write_json(args.inliers, {"inliers": [bool(m) for m in mask]})
    else:
        result = fit(cloud.points, args.kind, threshold)
    sys.stdout.write(dumps(result.to_dict()))
    return EXIT_OK


def cmd_scene(args: argparse.Namespace) -> int:
    if not args.birdseye > 0:
        raise UsageError(f"--birdseye cell size must be > 0, got {args.birdseye}")
    frame = read_depth(args.depth, args.intrinsics)
    mask = read_mask(args.mask)
    cloud = project_mask(mask, frame)
    out = _out_dir(args.out)
    write_ply(out / "labeled.ply", cloud.points, labels=cloud.labels)
    bev = build_birdseye(cloud, args.birdseye, tuple(args.z_band))
    write_json(out / "map.json", bev.to_dict())
    (out / "map.svg").write_text(bev.to_svg(), encoding="utf-8")
    sys.stdout.write(dumps({"points": len(cloud.points), "map": {"width": bev.width, "height": bev.height}}))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    subtask = subtask_from_dict(read_json(args.subtask))
    objects = _load_objects(args.objects)
    doc = read_json(args.constraints)
    constraints = ConstraintSet.from_dict(doc)
    if args.profile:
        constraints = ConstraintSet(
            constraints.clearance_margin, constraints.obstacles, _load_profile(args.profile), constraints.base_pose
        )
    if args.tolerance is not None:
        constraints = ConstraintSet(args.tolerance, constraints.obstacles, constraints.robot, constraints.base_pose)
    cache_path = args.cache or default_cache_path()
    cache = SkillCache.load(cache_path)
    try:
        spec, provenance = synthesize_subtask(subtask, objects, constraints, constraints.robot, cache)
    finally:
        cache.save(cache_path)
    waypoints = sample_waypoints(spec, constraints)
    out = _out_dir(args.out)
    write_json(out / "spec.json", spec.to_dict())
    (out / "waypoints.csv").write_text(waypoints_csv(waypoints), encoding="utf-8")
    svg = render_svg(spec.curve, constraints.obstacles, waypoints)
    (out / "trajectory.svg").write_text(svg, encoding="utf-8")
    if args.svg:
        Path(args.svg).write_text(svg, encoding="utf-8")
    print(provenance)
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    world = SceneWorld.from_dict(read_json(args.scene))
    plan = load_plan(_read_bytes(args.plan), args.plan)
    profile = _load_profile(args.profile)
    cache = SkillCache.load(args.cache) if args.cache else SkillCache()
    margin = args.tolerance if args.tolerance is not None else 0.02
    report, sim = run_plan(
        world, RobotState(world.robot_start), plan, profile, cache, seed=args.seed, noise=args.noise, margin=margin
    )
    if args.cache:
        cache.save(args.cache)
    doc = report.to_dict()
    out = _out_dir(args.out)
    write_json(out / "results.json", doc)
    if report.trace is not None:
        report.trace.write(args.trace or out / "trace")
    sys.stdout.write(dumps(doc))
    if report.issues:
        for issue in report.issues:
            print(f"plan issue: {issue.kind} at subtask {issue.subtask_index}: {issue.detail}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if report.success else EXIT_DOMAIN


def cmd_cache(args: argparse.Namespace) -> int:
    path = args.cache or default_cache_path()
    if args.action == "clear":
        SkillCache().save(path)
        return EXIT_OK
    cache = SkillCache.load(path)
    if args.action == "stats":
        sys.stdout.write(dumps(cache.stats()))
    elif args.out:
        write_json(args.out, cache.to_dict())
    else:
        sys.stdout.write(dumps(cache.to_dict()))
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    doc = read_json(args.input)
    if not isinstance(doc, dict):
        raise SchemaError("render", "expected a JSON object")
    if "curve" in doc:
        spec = TrajectorySpec.from_dict(doc)
        constraints = ConstraintSet.from_dict(read_json(args.constraints)) if args.constraints else None
        obstacles = constraints.obstacles if constraints else ()
        svg = render_svg(spec.curve, obstacles, sample_waypoints(spec, constraints))
    elif "cells" in doc:
        svg = BirdsEyeMap.from_dict(doc).to_svg()
    elif "map" in doc:
        svg = SceneWorld.from_dict(doc).map.to_svg()
    else:
        raise SchemaError("render", "expected a trajectory spec, bird's-eye map or scene document")
    if args.svg:
        Path(args.svg).write_text(svg, encoding="utf-8")
    else:
        sys.stdout.write(svg)
    return EXIT_OK


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geomcoder", description="Geometry-grounded trajectory synthesis toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a primitive to a PLY point cloud")
    p.add_argument("cloud")
    p.add_argument("--kind", required=True, choices=FIT_KINDS)
    p.add_argument("--ransac", action="store_true", help="robust fit with random sample consensus")
    p.add_argument("--iterations", type=int, default=RansacConfig().max_iterations)
    p.add_argument("--min-inlier-fraction", type=float, default=RansacConfig().min_inlier_fraction)
    p.add_argument("--tolerance", type=float, help="inlier threshold in meters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inliers", help="write the inlier mask to this JSON path (implies --ransac)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("scene", help="labeled cloud and bird's-eye map from depth, mask and intrinsics")
    p.add_argument("--depth", required=True, help="float32 little-endian depth raster")
    p.add_argument("--intrinsics", required=True, help="JSON header with size, intrinsics and camera pose")
    p.add_argument("--mask", required=True, help="16-bit PGM label mask")
    p.add_argument("--birdseye", type=float, default=0.05, help="bird's-eye cell size in meters")
    p.add_argument("--z-band", type=float, nargs=2, default=list(DEFAULT_Z_BAND), metavar=("LO", "HI"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scene)

    p = sub.add_parser("synth", help="synthesize one subtask trajectory")
    p.add_argument("subtask")
    p.add_argument("objects")
    p.add_argument("constraints")
    p.add_argument("--out", required=True)
    p.add_argument("--cache", help="skill cache file (default: $GEOMCODER_CACHE or ./geomcoder_cache.json)")
    p.add_argument("--profile", help="robot profile JSON overriding the one in the constraints")
    p.add_argument("--tolerance", type=float, help="clearance margin override in meters")
    p.add_argument("--svg", help="extra copy of the trajectory drawing")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="validate, synthesize and simulate a plan")
    p.add_argument("scene")
    p.add_argument("plan")
    p.add_argument("--profile", help="robot profile JSON (defaults if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="trace directory (default: OUT/trace)")
    p.add_argument("--cache", help="persist the skill cache to this file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=DEFAULT_PERCEPTION_NOISE, help="perception noise sigma in meters")
    p.add_argument("--tolerance", type=float, help="clearance margin override in meters")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("cache", help="inspect or reset the skill cache")
    p.add_argument("action", choices=("stats", "clear", "export"))
    p.add_argument("--cache", help="cache file (default: $GEOMCODER_CACHE or ./geomcoder_cache.json)")
    p.add_argument("--out", help="export destination (stdout if omitted)")
    p.set_defaults(func=cmd_cache)

    p = sub.add_parser("render", help="SVG of a trajectory spec, map or scene")
    p.add_argument("input")
    p.add_argument("--constraints", help="constraints JSON whose obstacles are drawn with a trajectory")
    p.add_argument("--svg", help="output path (stdout if omitted)")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (ValueError, TypeError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
