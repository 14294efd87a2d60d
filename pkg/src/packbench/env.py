"""Episodic packing environment.

An episode presents a task (shapes deconstructed from a pack) and cycles
through phases. Vanilla mode: pick a shape, pick one of the 24 rotations,
then pick a location among the feasible anchors for that rotated shape; if
the chosen rotation fits nowhere the episode ends. Easy mode swaps the last
two phases: after the shape is chosen the environment offers the union of
feasible anchors over all rotations, and after an anchor is chosen it offers
the rotations feasible there (never empty).

Rewards are the placed shape's voxel volume over the task's total volume,
tracked as exact rationals, so a finished task accumulates exactly 1.

States are immutable: `step` returns a new state and never touches its
input, and `clone` gives an independent deep copy for search. The trajectory
log format (one line per step) is:

    <step> <phase> <action> <reward:.12f> <done:0|1>
"""

import hashlib
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .packing import (Anchor, BoxOccupancy, Pack, Placement, ShapeCache, anchor_key,
                      candidate_locations, place)
from .voxels import VoxelGrid, pooled_occupancy

MODE_VANILLA = "vanilla"
MODE_EASY = "easy"
MODES = (MODE_VANILLA, MODE_EASY)

PHASE_SHAPE = "shape"
PHASE_ROTATION = "rotation"
PHASE_LOCATION = "location"
PHASE_DONE = "done"


class EmptyPack(Exception):
    pass


class InvalidAction(Exception):
    pass


class EpisodeFinished(Exception):
    pass


@dataclass(frozen=True, eq=False)
class Task:
    """Shapes of a deconstructed pack, in canonical orientation, at the pack's
    scales. The source pack is the proof that the task is solvable."""

    shapes: tuple[tuple[int, VoxelGrid], ...]  # (pool shape index, canonical grid)
    total_volume: int
    source: Pack
    _cache: ShapeCache = field(repr=False, hash=False, compare=False)

    def grid(self, i: int) -> VoxelGrid:
        return self.shapes[i][1]

    def count(self, i: int) -> int:
        return self.shapes[i][1].count

    def rotated(self, i: int, rotation: int) -> VoxelGrid:
        shape_idx = self.shapes[i][0]
        g = self._cache.rotated(shape_idx, self.source.placements[i].scale, rotation)
        assert g is not None  # the pack placed it, so it fits the box
        return g

    def unique_rotations(self, i: int) -> list[tuple[int, VoxelGrid]]:
        shape_idx = self.shapes[i][0]
        return self._cache.unique_rotations(shape_idx, self.source.placements[i].scale)


def new_task(pack: Pack, cache: ShapeCache | None = None) -> Task:
    """Deconstruct a pack: its placed shapes, unrotated, become the task."""
    if not pack.placements:
        raise EmptyPack("pack has no placements")
    if cache is None:
        cache = ShapeCache(pack.pool)
    shapes = []
    total = 0
    for p in pack.placements:
        g = cache.grid(p.shape_idx, p.scale)
        if g is None:
            raise EmptyPack(f"pack placement {p.shape_idx} does not voxelize at {p.scale}")
        shapes.append((p.shape_idx, g))
        total += g.count
    return Task(shapes=tuple(shapes), total_volume=total, source=pack, _cache=cache)


@dataclass(frozen=True, eq=False)
class Observation:
    phase: str
    mode: str
    box_cells: np.ndarray                        # read-only 100^3 view
    remaining: tuple[int, ...]                   # task shape indices still out
    remaining_grids: tuple[VoxelGrid, ...]
    action_count: int
    chosen_grid: VoxelGrid | None = None
    candidates: tuple[Anchor, ...] = ()
    feasible_rotations: tuple[int, ...] = ()

    def pooled_box(self, cell: int) -> np.ndarray:
        return pooled_occupancy(self.box_cells, cell)

    def pooled_shape(self, k: int, cell: int) -> np.ndarray:
        return pooled_occupancy(self.remaining_grids[k], cell)


@dataclass(frozen=True, eq=False)
class EpisodeState:
    task: Task
    mode: str
    phase: str
    remaining: tuple[int, ...]
    box: BoxOccupancy
    reward: Fraction
    steps: int
    pending_shape: int | None = None       # task shape index being handled
    pending_rotation: int | None = None
    pending_anchor: Anchor | None = None
    candidates: tuple[Anchor, ...] = ()
    feasible_rotations: tuple[int, ...] = ()

    @property
    def done(self) -> bool:
        return self.phase == PHASE_DONE

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.mode.encode())
        h.update(self.phase.encode())
        h.update(repr(self.remaining).encode())
        h.update(repr((self.pending_shape, self.pending_rotation, self.pending_anchor)).encode())
        h.update(str(self.reward).encode())
        h.update(np.packbits(self.box.cells).tobytes())
        return h.hexdigest()


def action_count(state: EpisodeState) -> int:
    if state.phase == PHASE_DONE:
        raise EpisodeFinished("episode is over")
    if state.phase == PHASE_SHAPE:
        return len(state.remaining)
    if state.phase == PHASE_ROTATION:
        return 24 if state.mode == MODE_VANILLA else len(state.feasible_rotations)
    return len(state.candidates)


def observe(state: EpisodeState) -> Observation:
    chosen = None
    if state.pending_shape is not None:
        if state.mode == MODE_VANILLA and state.pending_rotation is not None:
            chosen = state.task.rotated(state.pending_shape, state.pending_rotation)
        else:
            chosen = state.task.grid(state.pending_shape)
    return Observation(
        phase=state.phase,
        mode=state.mode,
        box_cells=state.box.cells,
        remaining=state.remaining,
        remaining_grids=tuple(state.task.grid(i) for i in state.remaining),
        action_count=0 if state.done else action_count(state),
        chosen_grid=chosen,
        candidates=state.candidates,
        feasible_rotations=state.feasible_rotations,
    )


def reset(task: Task, mode: str = MODE_VANILLA) -> tuple[EpisodeState, Observation]:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    state = EpisodeState(
        task=task,
        mode=mode,
        phase=PHASE_SHAPE,
        remaining=tuple(range(len(task.shapes))),
        box=BoxOccupancy.empty(),
        reward=Fraction(0),
        steps=0,
    )
    return state, observe(state)


def _union_candidates(state: EpisodeState, shape: int) -> tuple[Anchor, ...]:
    anchors: set[Anchor] = set()
    for _, grid in state.task.unique_rotations(shape):
        anchors.update(candidate_locations(state.box, grid))
    return tuple(sorted(anchors, key=anchor_key))


def _rotations_at(state: EpisodeState, shape: int, a: Anchor) -> tuple[int, ...]:
    from .packing import feasible  # local import to keep module top uncluttered
    out = []
    for r in range(24):
        if feasible(state.box, state.task.rotated(shape, r), a):
            out.append(r)
    return tuple(out)


def _place_pending(state: EpisodeState, rotation: int, a: Anchor) -> tuple[EpisodeState, Fraction, bool]:
    shape = state.pending_shape
    g = state.task.rotated(shape, rotation)
    info = Placement(shape, state.task.source.placements[shape].scale, rotation, a)
    box = place(state.box, g, a, info)
    gained = Fraction(g.count, state.task.total_volume)
    remaining = tuple(i for i in state.remaining if i != shape)
    done = not remaining
    nxt = replace(
        state,
        phase=PHASE_DONE if done else PHASE_SHAPE,
        remaining=remaining,
        box=box,
        reward=state.reward + gained,
        steps=state.steps + 1,
        pending_shape=None,
        pending_rotation=None,
        pending_anchor=None,
        candidates=(),
        feasible_rotations=(),
    )
    return nxt, gained, done


def step(state: EpisodeState, action: int) -> tuple[EpisodeState, Observation, float, bool]:
    """Advance one phase. Returns (state', observation, reward, done); the
    input state is never modified."""
    if state.phase == PHASE_DONE:
        raise EpisodeFinished("episode is over")
    n = action_count(state)
    if not 0 <= action < n:
        raise InvalidAction(f"action {action} out of range 0..{n - 1} at phase {state.phase}")

    if state.phase == PHASE_SHAPE:
        shape = state.remaining[action]
        if state.mode == MODE_VANILLA:
            nxt = replace(state, phase=PHASE_ROTATION, steps=state.steps + 1, pending_shape=shape)
        else:
            cands = _union_candidates(state, shape)
            if not cands:
                nxt = replace(state, phase=PHASE_DONE, steps=state.steps + 1)
                return nxt, observe(nxt), 0.0, True
            nxt = replace(state, phase=PHASE_LOCATION, steps=state.steps + 1,
                          pending_shape=shape, candidates=cands)
        return nxt, observe(nxt), 0.0, False

    if state.phase == PHASE_ROTATION:
        if state.mode == MODE_VANILLA:
            g = state.task.rotated(state.pending_shape, action)
            cands = tuple(candidate_locations(state.box, g))
            if not cands:
                # terminal rule: the chosen rotation fits nowhere
                nxt = replace(state, phase=PHASE_DONE, steps=state.steps + 1,
                              pending_rotation=action)
                return nxt, observe(nxt), 0.0, True
            nxt = replace(state, phase=PHASE_LOCATION, steps=state.steps + 1,
                          pending_rotation=action, candidates=cands)
            return nxt, observe(nxt), 0.0, False
        rotation = state.feasible_rotations[action]
        nxt, gained, done = _place_pending(state, rotation, state.pending_anchor)
        return nxt, observe(nxt), float(gained), done

    # PHASE_LOCATION
    a = state.candidates[action]
    if state.mode == MODE_VANILLA:
        nxt, gained, done = _place_pending(state, state.pending_rotation, a)
        return nxt, observe(nxt), float(gained), done
    rots = _rotations_at(state, state.pending_shape, a)
    nxt = replace(state, phase=PHASE_ROTATION, steps=state.steps + 1,
                  pending_anchor=a, feasible_rotations=rots, candidates=())
    return nxt, observe(nxt), 0.0, False


def clone(state: EpisodeState) -> EpisodeState:
    """Independent deep copy; stepping the clone never affects the original."""
    box = BoxOccupancy(state.box.cells.copy(), state.box.placed,
                       state.box._block_counts.copy(), state.box._zwords.copy())
    return replace(state, box=box)


def format_log_line(step_index: int, phase: str, action: int, reward: Fraction | float, done: bool) -> str:
    return f"{step_index} {phase} {action} {float(reward):.12f} {1 if done else 0}"


def ground_truth_actions(task: Task) -> list[int]:
    """Action sequence replaying the source pack in vanilla mode."""
    actions: list[int] = []
    state, _ = reset(task, MODE_VANILLA)
    for i, p in enumerate(task.source.placements):
        shape_action = state.remaining.index(i)
        actions.append(shape_action)
        state, _, _, _ = step(state, shape_action)
        actions.append(p.rotation)
        state, _, _, _ = step(state, p.rotation)
        loc_action = state.candidates.index(p.anchor)
        actions.append(loc_action)
        state, _, _, _ = step(state, loc_action)
    return actions


def run_actions(task: Task, mode: str, actions: Sequence[int]) -> list[str]:
    """Apply an action sequence, returning trajectory log lines (the phase
    logged is the one the action was taken in). Stops at the end of the
    episode even if more actions were supplied."""
    state, _ = reset(task, mode)
    lines = []
    for k, a in enumerate(actions):
        if state.done:
            break
        phase = state.phase
        state, _, reward, done = step(state, int(a))
        lines.append(format_log_line(k, phase, int(a), reward, done))
    return lines
