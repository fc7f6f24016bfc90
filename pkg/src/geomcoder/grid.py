"""4-connected breadth-first search on occupancy grids."""

from __future__ import annotations

from collections import deque

import numpy as np

Cell = tuple[int, int]


def neighbors(cell: Cell, shape: tuple[int, int]) -> list[Cell]:
    """In-bounds 4-neighbors in (row, col) lexicographic order."""
    r, c = cell
    out = []
    for nr, nc in ((r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)):
        if 0 <= nr < shape[0] and 0 <= nc < shape[1]:
            out.append((nr, nc))
    return out


def bfs_path(free: np.ndarray, start: Cell, goal: Cell) -> list[Cell] | None:
    """Shortest path of cells from ``start`` to ``goal`` (both included), or None.

    Ties between equally short paths resolve deterministically because
    neighbors are expanded in (row, col) order.
    """
    free = np.asarray(free, dtype=bool)
    shape = free.shape
    start, goal = (int(start[0]), int(start[1])), (int(goal[0]), int(goal[1]))
    for cell in (start, goal):
        if not (0 <= cell[0] < shape[0] and 0 <= cell[1] < shape[1]) or not free[cell]:
            return None
    parent: dict[Cell, Cell | None] = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if cur == goal:
            path = [cur]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        for nb in neighbors(cur, shape):
            if nb not in parent and free[nb]:
                parent[nb] = cur
                queue.append(nb)
    return None
