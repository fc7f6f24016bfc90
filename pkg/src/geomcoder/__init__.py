"""Geometry-grounded trajectory synthesis for mobile manipulation.

Fit geometric primitives to point clouds, build bird's-eye maps, synthesize
constraint-checked end-effector trajectories from templates with a skill
cache, and execute long-horizon plans in a kinematic simulator.
"""

__version__ = "0.1.0"
