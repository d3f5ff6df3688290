"""Flexible aggregation of fine hexagonal cells into order-volume groups.

Cells live on an abstract axial hex lattice (``q``, ``r``). Starting from
the busiest cell, each unaggregated seed absorbs connected neighbours until
its monthly order volume reaches a fraction of the total, or until its
footprint would exceed the coarsest allowed resolution.
"""

from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

FINEST_RESOLUTION = 10
COARSEST_RESOLUTION = 4
DEFAULT_THRESHOLD = 0.02

# Axial unit steps in clockwise order starting from +q (east); r grows downwards.
CLOCKWISE_DIRECTIONS = ((1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1))


@dataclass(frozen=True, order=True)
class HexCell:
    q: int
    r: int
    resolution: int = FINEST_RESOLUTION

    def __post_init__(self):
        if not COARSEST_RESOLUTION <= self.resolution <= FINEST_RESOLUTION:
            raise ValueError(
                f"resolution must lie in [{COARSEST_RESOLUTION}, {FINEST_RESOLUTION}], got {self.resolution}"
            )

    def neighbors(self) -> List["HexCell"]:
        return [HexCell(self.q + dq, self.r + dr, self.resolution) for dq, dr in CLOCKWISE_DIRECTIONS]


@dataclass(frozen=True)
class GridInventory:
    cells: Mapping[HexCell, int]

    def __post_init__(self):
        cells = dict(self.cells)
        for cell, vol in cells.items():
            if vol < 0 or int(vol) != vol:
                raise ValueError(f"order volume of {cell} must be a non-negative integer, got {vol}")
        object.__setattr__(self, "cells", {c: int(v) for c, v in cells.items()})

    @property
    def total_orders(self) -> int:
        return sum(self.cells.values())

    def __len__(self):
        return len(self.cells)


@dataclass(frozen=True)
class FlexibleGrid:
    member_cells: frozenset
    aggregate_volume: int
    effective_resolution: int
    under_threshold: bool = False


@dataclass(frozen=True)
class FlexiblePartition:
    grids: tuple
    assignment: Mapping[HexCell, int]
    threshold_fraction: float
    threshold_volume: float

    @property
    def flagged(self) -> List[int]:
        return [g for g, grid in enumerate(self.grids) if grid.under_threshold]


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    grid: int = -1

    def to_dict(self) -> dict:
        return {"kind": self.kind, "grid": self.grid, "message": self.message}


def hex_distance(a: HexCell, b: HexCell) -> int:
    if a.resolution != b.resolution:
        raise ValueError(f"cells at different resolutions: {a.resolution} vs {b.resolution}")
    dq = a.q - b.q
    dr = a.r - b.r
    return (abs(dq) + abs(dr) + abs(dq + dr)) // 2


def clockwise_rank(center: HexCell, neighbor: HexCell) -> int:
    """Position 0..5 of an adjacent cell, clockwise from the +q direction."""
    if hex_distance(center, neighbor) != 1:
        raise ValueError(f"{neighbor} is not adjacent to {center}")
    return CLOCKWISE_DIRECTIONS.index((neighbor.q - center.q, neighbor.r - center.r))


def clockwise_sector(center: HexCell, cell: HexCell) -> int:
    """Clockwise sextant 0..5 of ``cell`` around ``center``.

    Equals :func:`clockwise_rank` on the first ring. On ring ``R`` sector
    ``k`` holds the ``R`` cells walked from corner ``k`` towards corner
    ``k + 1``.
    """
    radius = hex_distance(center, cell)
    if radius == 0:
        return 0
    dq, dr = cell.q - center.q, cell.r - center.r
    for k, (cq, cr) in enumerate(CLOCKWISE_DIRECTIONS):
        nq, nr = CLOCKWISE_DIRECTIONS[(k + 2) % 6]
        # corner k of ring R is R * dir_k; the side walks along dir_{k+2}
        for step in range(radius):
            if (radius * cq + step * nq, radius * cr + step * nr) == (dq, dr):
                return k
    raise AssertionError("unreachable: every ring cell lies on one side")


def disk_cell_count(radius: int) -> int:
    return 3 * radius * (radius + 1) + 1


def effective_resolution(cells: Iterable[HexCell]) -> int:
    """Coarsest level whose cell area matches the aggregate's hex diameter.

    The footprint is the hex disk of radius ``ceil(d / 2)`` around a
    diameter-``d`` aggregate; each coarser level holds ~7x more fine cells.
    """
    cells = list(cells)
    diameter = 0
    for i, a in enumerate(cells):
        for b in cells[i + 1:]:
            diameter = max(diameter, hex_distance(a, b))
    return max(COARSEST_RESOLUTION, _resolution_for_diameter(diameter, cells[0].resolution))


def _diameter_with(cells: List[HexCell], current: int, new: HexCell) -> int:
    return max([current] + [hex_distance(c, new) for c in cells])


def _resolution_for_diameter(diameter: int, base: int) -> int:
    count = disk_cell_count(math.ceil(diameter / 2))
    # integer log7 avoids float rounding at exact powers of 7
    levels = 0
    while 7 ** (levels + 1) <= count:
        levels += 1
    return min(FINEST_RESOLUTION, base - levels)


def flexible_partition(
    inv: GridInventory, threshold_fraction: float = DEFAULT_THRESHOLD, seed: int = 0
) -> FlexiblePartition:
    """Greedy flexible grid division.

    Seeds are visited by volume, descending. A seed that is not yet part of
    a grid grows by absorbing unaggregated cells adjacent to the growing
    group; among those, the cell nearest the seed wins, then the earliest
    clockwise sector around the seed, then the larger volume, then a seeded
    random draw. Growth stops once the group holds at least
    ``threshold_fraction`` of all orders, when no unaggregated neighbour is
    left, or when the next cell would push the footprint past resolution 4.
    Groups that stop short are kept and flagged ``under_threshold``.
    """
    if not 0.0 < threshold_fraction < 1.0:
        raise ValueError(f"threshold_fraction must lie in (0, 1), got {threshold_fraction}")
    if len(inv) == 0:
        raise ValueError("inventory is empty")
    resolutions = {c.resolution for c in inv.cells}
    if len(resolutions) != 1:
        raise ValueError(f"inventory mixes resolutions {sorted(resolutions)}")
    base = resolutions.pop()

    rng = np.random.default_rng(seed)
    cells = sorted(inv.cells)
    tiebreak = dict(zip(cells, rng.permutation(len(cells)).tolist()))
    volume = inv.cells
    threshold = threshold_fraction * inv.total_orders
    order = sorted(cells, key=lambda c: (-volume[c], tiebreak[c]))

    neighbours = _adjacency(cells)
    assignment: Dict[HexCell, int] = {}
    grids: List[FlexibleGrid] = []
    for seed_cell in order:
        if seed_cell in assignment:
            continue
        gid = len(grids)
        members = [seed_cell]
        assignment[seed_cell] = gid
        total = volume[seed_cell]
        diameter = 0
        # a cell's priority depends only on the seed, so the frontier is a heap
        frontier: list = []
        queued = set()

        def push(cell):
            for nb in neighbours[cell]:
                if nb not in assignment and nb not in queued:
                    queued.add(nb)
                    key = (hex_distance(seed_cell, nb), clockwise_sector(seed_cell, nb), -volume[nb], tiebreak[nb])
                    heapq.heappush(frontier, (key, nb))

        push(seed_cell)
        while total < threshold and frontier:
            _, best = heapq.heappop(frontier)
            new_diameter = _diameter_with(members, diameter, best)
            if _resolution_for_diameter(new_diameter, base) < COARSEST_RESOLUTION:
                break
            members.append(best)
            assignment[best] = gid
            total += volume[best]
            diameter = new_diameter
            push(best)
        grids.append(
            FlexibleGrid(
                member_cells=frozenset(members),
                aggregate_volume=total,
                effective_resolution=max(COARSEST_RESOLUTION, _resolution_for_diameter(diameter, base)),
                under_threshold=total < threshold,
            )
        )
    return FlexiblePartition(tuple(grids), assignment, threshold_fraction, threshold)


def _adjacency(cells: Iterable[HexCell]) -> Dict[HexCell, List[HexCell]]:
    """Neighbours of each cell within the given set (coordinate lookups only)."""
    by_coord = {(c.q, c.r): c for c in cells}
    return {
        c: [by_coord[q, r] for q, r in ((c.q + dq, c.r + dr) for dq, dr in CLOCKWISE_DIRECTIONS) if (q, r) in by_coord]
        for c in by_coord.values()
    }


def _connected(cells: frozenset) -> bool:
    adjacency = _adjacency(cells)
    start = next(iter(cells))
    seen = {start}
    queue = deque([start])
    while queue:
        for nb in adjacency[queue.popleft()]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(cells)


def validate_partition(
    part: FlexiblePartition, inv: GridInventory, threshold_fraction: float = DEFAULT_THRESHOLD
) -> List[Violation]:
    """Check disjointness, coverage, connectivity, threshold and resolution."""
    out: List[Violation] = []
    threshold = threshold_fraction * inv.total_orders
    owner: Dict[HexCell, int] = {}
    for g, grid in enumerate(part.grids):
        if not grid.member_cells:
            out.append(Violation("empty", "grid has no cells", g))
            continue
        for cell in grid.member_cells:
            if cell in owner:
                out.append(Violation("overlap", f"{cell} belongs to grids {owner[cell]} and {g}", g))
            else:
                owner[cell] = g
            if cell not in inv.cells:
                out.append(Violation("unknown_cell", f"{cell} is not in the inventory", g))
            if part.assignment.get(cell) != g:
                out.append(Violation("assignment", f"{cell} assigned to {part.assignment.get(cell)}", g))
        if not _connected(grid.member_cells):
            out.append(Violation("connectivity", "grid is not connected under hex adjacency", g))
        vol = sum(inv.cells.get(c, 0) for c in grid.member_cells)
        if vol != grid.aggregate_volume:
            out.append(Violation("volume", f"recorded volume {grid.aggregate_volume}, actual {vol}", g))
        if vol < threshold and not grid.under_threshold:
            out.append(Violation("threshold", f"volume {vol} below threshold {threshold:g}", g))
        if grid.effective_resolution < COARSEST_RESOLUTION or effective_resolution(grid.member_cells) < COARSEST_RESOLUTION:
            out.append(Violation("resolution", f"resolution {grid.effective_resolution} coarser than 4", g))
    for cell in inv.cells:
        if cell not in owner:
            out.append(Violation("coverage", f"{cell} is not assigned to any grid"))
    return out


def read_inventory(path) -> GridInventory:
    """Inventory CSV with columns q, r, volume (optional resolution)."""
    cells: Dict[HexCell, int] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = {"q", "r", "volume"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"inventory is missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=1):
            try:
                res = int(row["resolution"]) if row.get("resolution") else FINEST_RESOLUTION
                cell = HexCell(int(row["q"]), int(row["r"]), res)
                vol = float(row["volume"])
            except ValueError as exc:
                raise ValueError(f"inventory row {lineno}: {exc}") from None
            if cell in cells:
                raise ValueError(f"inventory row {lineno}: duplicate cell ({cell.q}, {cell.r})")
            if vol < 0 or not vol.is_integer():
                raise ValueError(f"inventory row {lineno}: volume must be a non-negative integer")
            cells[cell] = int(vol)
    if not cells:
        raise ValueError("inventory is empty")
    return GridInventory(cells)


def write_partition(part: FlexiblePartition, path, comment: Optional[str] = None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["q", "r", "grid_id"])
        for cell in sorted(part.assignment):
            writer.writerow([cell.q, cell.r, part.assignment[cell]])


def line_inventory(labels: Sequence) -> tuple:
    """Lay the sorted distinct labels along the +q axis, volume = row count.

    Returns the inventory and the label -> cell map. Adjacent labels become
    adjacent cells, which suits ordinal spatial ids such as binomial draws.
    """
    values, counts = np.unique(np.asarray(labels), return_counts=True)
    cell_of = {v: HexCell(i, 0) for i, v in enumerate(values.tolist())}
    inv = GridInventory({cell_of[v]: int(c) for v, c in zip(values.tolist(), counts.tolist())})
    return inv, cell_of


def absorb_leftovers(part: FlexiblePartition, inv: GridInventory) -> Dict[HexCell, int]:
    """Cell -> group map in which flagged groups join an adjacent full group.

    Each under-threshold group is merged into the heaviest adjacent group
    that meets the threshold (ties: lowest grid index). Groups with no such
    neighbour stay on their own. Group ids are renumbered densely.
    """
    parent = {g: g for g in range(len(part.grids))}
    volume = {g: grid.aggregate_volume for g, grid in enumerate(part.grids)}
    for g in part.flagged:
        touching = {
            part.assignment[nb]
            for cell in part.grids[g].member_cells
            for nb in cell.neighbors()
            if nb in part.assignment and part.assignment[nb] != g
        }
        full = [h for h in touching if not part.grids[h].under_threshold]
        if full:
            target = min(full, key=lambda h: (-volume[h], h))
            parent[g] = target
            volume[target] += volume[g]
    roots = sorted({parent[g] for g in parent})
    dense = {root: i for i, root in enumerate(roots)}
    return {cell: dense[parent[g]] for cell, g in part.assignment.items()}


def flexible_labels(labels: Sequence, threshold_fraction: float = DEFAULT_THRESHOLD, seed: int = 0) -> np.ndarray:
    """Replace ordinal spatial labels by flexible-grid group ids (one per row)."""
    labels = np.asarray(labels)
    inv, cell_of = line_inventory(labels)
    part = flexible_partition(inv, threshold_fraction, seed)
    group = absorb_leftovers(part, inv)
    lookup = {v: group[c] for v, c in cell_of.items()}
    return np.array([lookup[v] for v in labels.tolist()], dtype=np.int64)
