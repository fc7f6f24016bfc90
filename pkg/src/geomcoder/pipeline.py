"""End-to-end runner: validate a plan, then perceive, synthesize and execute each subtask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ConvexEnvelope, GeometricPrimitive, Pose, RobotProfile
from .planner import (
    Plan,
    PlanIssue,
    SkillCache,
    Subtask,
    SynthesisProvider,
    subtask_obstacles,
    synthesize_subtask,
    validate_plan,
)
from .sim import (
    DEFAULT_PERCEPTION_NOISE,
    ExecutionTrace,
    RobotState,
    SceneWorld,
    Simulator,
    SubtaskResult,
    execute_plan,
    perceive,
)
from .trajectory import ConstraintSet, TrajectorySpec

DEFAULT_MARGIN = 0.02


@dataclass
class RunReport:
    issues: list[PlanIssue]
    results: list[SubtaskResult] = field(default_factory=list)
    trace: ExecutionTrace | None = None
    specs: list[dict | None] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return not self.issues and self.trace is not None and bool(self.trace.success)

    def to_dict(self) -> dict:
        return {
            "issues": [p.to_dict() for p in self.issues],
            "subtasks": [r.to_dict() for r in self.results],
            "long_term_success": self.success,
        }


def bounding_radius(prim: GeometricPrimitive) -> float:
    """Radius of the smallest centroid-centered ball containing the primitive."""
    pts = prim.points if isinstance(prim, ConvexEnvelope) else prim.sample_surface(0.01)
    return float(np.linalg.norm(pts - prim.centroid(), axis=1).max())


def referenced_ids(st: Subtask) -> set[str]:
    ids = set(st.targets)
    for key in ("destination", "into", "with"):
        if isinstance(st.params.get(key), str):
            ids.add(st.params[key])
    return ids


def run_plan(
    world: SceneWorld,
    robot: RobotState,
    plan: Plan,
    profile: RobotProfile = RobotProfile(),
    cache: SkillCache | None = None,
    provider: SynthesisProvider | None = None,
    seed: int = 0,
    noise: float = DEFAULT_PERCEPTION_NOISE,
    margin: float = DEFAULT_MARGIN,
) -> tuple[RunReport, Simulator | None]:
    """Validate, then execute subtask by subtask with just-in-time synthesis.

    Before each manipulation subtask the objects it references are observed
    with Gaussian noise ``noise`` (seeded) and re-fitted; everything else is
    taken from the scene description. While an object is held, the clearance
    margin grows by its bounding radius so the carried object clears too.
    """
    objects = perceive(world)
    start = world.map.cell_of(robot.base[0], robot.base[1])
    open_ids = tuple(d.object_id for d in world.doors if d.passage() >= profile.passage_width - 1e-9)
    issues = validate_plan(plan, objects, world.map, start, open_ids)
    if issues:
        return RunReport(issues), None
    cache = cache if cache is not None else SkillCache()
    rng = np.random.default_rng(seed)
    specs: list[dict | None] = [None] * len(plan.subtasks)

    def synth(i: int, st: Subtask, sim: Simulator) -> tuple[TrajectorySpec, str]:
        seen = perceive(sim.world, referenced_ids(st), rng, noise)
        held = (sim.robot.held_id,) if sim.robot.held_id else ()
        pad = bounding_radius(next(o for o in seen if o.object_id == held[0]).primary) if held else 0.0
        obstacles = subtask_obstacles(st, seen, held)
        cs = ConstraintSet(margin + pad, obstacles, profile, Pose(tuple(sim.robot.mount)))
        spec, provenance = synthesize_subtask(st, seen, cs, profile, cache, provider)
        specs[i] = spec.to_dict()
        return spec, provenance

    results, trace, sim = execute_plan(world, robot, plan, synth, profile)
    return RunReport([], results, trace, specs), sim

