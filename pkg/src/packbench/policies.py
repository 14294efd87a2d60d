"""Heuristic policies and model-based search on top of the environment.

A policy is three per-phase rules. The shape rule exposes a full preference
ranking (search expands shape choices in that order); rotation and location
rules return single actions. Built-in rule names:

    shape:    random | largest_first (alias lf)
    rotation: random | aligned
    location: random | blbf | lowest

Vanilla policies are written `shape:rotation:location`; easy-mode policies
are `shape:location` pairs, where the location rule also fixes the paired
rotation choice (`lowest` takes the first offered anchor and the first
feasible rotation there).

Search solvers treat the environment as a perfect model: they clone states
and explore shape choices only, with rotation and location filled in by the
policy. Exploration order is deterministic, and the set of nodes visited
under a backtrack budget b is a prefix of that under b+1, which makes
best-found reward monotone in the budget by construction.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .env import (MODE_EASY, MODE_VANILLA, PHASE_LOCATION, PHASE_ROTATION, PHASE_SHAPE,
                  EpisodeState, Observation, Task, observe, reset, step)
from .rotations import permuted_dims
from .seeds import stream


@dataclass(frozen=True)
class SearchConfig:
    beams: int = 1
    backtracks: int = 0
    node_budget: int = 1_000_000  # environment steps a solver may spend per task

    def __post_init__(self):
        if self.beams < 1 or (self.beams & (self.beams - 1)) != 0:
            raise ValueError("beams must be a power of two")
        if self.backtracks < 0 or self.node_budget < 1:
            raise ValueError("budgets must be non-negative and finite")


@dataclass(frozen=True)
class TrajectoryStep:
    digest: str
    phase: str
    action: int
    reward: Fraction


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[TrajectoryStep, ...]
    cumulative_reward: Fraction
    nodes_expanded: int

    @property
    def actions(self) -> list[int]:
        return [s.action for s in self.steps]

    def log_text(self) -> str:
        lines = []
        for k, s in enumerate(self.steps):
            done = k == len(self.steps) - 1
            lines.append(f"{k} {s.phase} {s.action} {float(s.reward):.12f} {1 if done else 0}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# per-phase rules

class _Rng:
    """Counter-keyed randomness: draw k is a pure function of (seed, k), so a
    policy replays identically however its host trajectories are cloned."""

    def __init__(self, seed: int):
        self.seed = seed
        self.counter = 0

    def draw(self) -> np.random.Generator:
        g = stream(self.seed, self.counter)
        self.counter += 1
        return g


def largest_first(obs: Observation) -> int:
    """Index (into remaining) of the largest shape by voxel volume."""
    if obs.phase != PHASE_SHAPE:
        raise ValueError("largest_first applies to the shape phase")
    counts = [g.count for g in obs.remaining_grids]
    return max(range(len(counts)), key=lambda k: (counts[k], -k))


def aligned_rotation(obs: Observation) -> int:
    """Rotation putting the smallest bbox dimension vertical, the second
    smallest across the width, so the largest runs along the depth."""
    if obs.phase != PHASE_ROTATION or obs.mode != MODE_VANILLA:
        raise ValueError("aligned_rotation applies to the vanilla rotation phase")
    dims = obs.chosen_grid.dims
    best_r = 0
    best_key = None
    for r in range(24):
        dx, dy, dz = permuted_dims(r, dims)
        key = (dy, dx)
        if best_key is None or key < best_key:
            best_key, best_r = key, r
    return best_r


def blbf_policy(obs: Observation) -> int:
    """Candidates come pre-sorted bottom-left-back, so take the first."""
    if obs.phase != PHASE_LOCATION:
        raise ValueError("blbf applies to the location phase")
    return 0


def lowest_location(obs: Observation) -> int:
    """Easy mode: lowest anchor of the all-rotations union."""
    if obs.phase != PHASE_LOCATION or obs.mode != MODE_EASY:
        raise ValueError("lowest applies to the easy location phase")
    return 0


class Policy:
    """Composite of shape/rotation/location rules by name."""

    def __init__(self, shape: str, rotation: str, location: str, seed: int = 0):
        for name, allowed in (
            (shape, ("random", "largest_first")),
            (rotation, ("random", "aligned", "first_feasible")),
            (location, ("random", "blbf", "lowest")),
        ):
            if name not in allowed:
                raise ValueError(f"unknown rule {name!r}; expected one of {allowed}")
        self.shape_rule = shape
        self.rotation_rule = rotation
        self.location_rule = location
        self._rng = _Rng(seed)

    def shape_ranking(self, obs: Observation) -> list[int]:
        n = obs.action_count
        if self.shape_rule == "largest_first":
            counts = [g.count for g in obs.remaining_grids]
            return sorted(range(n), key=lambda k: (-counts[k], k))
        return [int(i) for i in self._rng.draw().permutation(n)]

    def rotation_action(self, obs: Observation) -> int:
        if obs.mode == MODE_EASY:
            # feasible-rotation list at the chosen anchor, ascending by index
            if self.rotation_rule == "random":
                return int(self._rng.draw().integers(obs.action_count))
            return 0
        if self.rotation_rule == "aligned":
            return aligned_rotation(obs)
        return int(self._rng.draw().integers(24))

    def location_action(self, obs: Observation) -> int:
        if self.location_rule == "random":
            return int(self._rng.draw().integers(obs.action_count))
        return 0


_SHAPE_ALIASES = {"lf": "largest_first", "largest_first": "largest_first", "random": "random"}


def parse_policy(spec: str, mode: str, seed: int = 0) -> Policy:
    """Parse `shape:rotation:location` (vanilla) or `shape:location` (easy)."""
    parts = spec.split(":")
    if mode == MODE_VANILLA:
        if len(parts) != 3:
            raise ValueError("vanilla policies are shape:rotation:location")
        shape, rotation, location = parts
        if location == "lowest":
            raise ValueError("the lowest location rule only exists in easy mode")
        return Policy(_SHAPE_ALIASES.get(shape, shape), rotation, location, seed)
    if len(parts) != 2:
        raise ValueError("easy policies are shape:location")
    shape, location = parts
    if location not in ("lowest", "random"):
        raise ValueError("easy location rule must be lowest or random")
    rotation = "first_feasible" if location == "lowest" else "random"
    return Policy(_SHAPE_ALIASES.get(shape, shape), rotation, location, seed)


def random_policy(seed: int) -> Policy:
    return Policy("random", "random", "random", seed)


# ---------------------------------------------------------------------------
# rollouts and search

def _advance_through_shape(state: EpisodeState, shape_action: int, policy: Policy):
    """Take one shape choice and let the policy finish the rotation and
    location phases. Returns (steps, new_state, env_steps_used)."""
    steps: list[TrajectoryStep] = []
    used = 0
    s = state
    a = shape_action
    while True:
        digest = s.digest()
        phase = s.phase
        before = s.reward
        s, obs, _, done = step(s, a)
        used += 1
        steps.append(TrajectoryStep(digest, phase, a, s.reward - before))
        if done or s.phase == PHASE_SHAPE:
            return steps, s, used
        if s.phase == PHASE_ROTATION:
            a = policy.rotation_action(obs)
        else:
            a = policy.location_action(obs)


def greedy_rollout(task: Task, mode: str, policy: Policy) -> Trajectory:
    """Reset, then repeatedly apply the policy until the episode ends."""
    state, obs = reset(task, mode)
    steps: list[TrajectoryStep] = []
    nodes = 0
    while not state.done:
        ranking = policy.shape_ranking(obs)
        sub, state, used = _advance_through_shape(state, ranking[0], policy)
        steps.extend(sub)
        nodes += used
        obs = observe(state)
    return Trajectory(tuple(steps), state.reward, nodes)


def backtrack_search(task: Task, mode: str, policy: Policy, cfg: SearchConfig) -> Trajectory:
    """Depth-first search over shape choices in policy-ranking order.

    After a terminal with unplaced shapes, revert to the most recent shape
    choice with untried alternatives and take the next one; each revert
    consumes one unit of `backtracks`. Budget 0 reproduces the greedy rollout
    exactly.
    """
    root, _ = reset(task, mode)

    class Frame:
        __slots__ = ("state", "ranking", "next_child", "prefix")

        def __init__(self, state, prefix):
            self.state = state
            self.ranking = policy.shape_ranking(observe(state))
            self.next_child = 0
            self.prefix = prefix

    nodes = 0
    budget = cfg.backtracks
    best: Trajectory | None = None
    frames = [Frame(root, ())]

    while frames:
        frame = frames[-1]
        if frame.next_child >= len(frame.ranking):
            frames.pop()
            continue
        if frame.next_child > 0:
            # taking a sibling is a revert event
            if budget == 0:
                break
            budget -= 1
        choice = frame.ranking[frame.next_child]
        frame.next_child += 1
        sub, nxt, used = _advance_through_shape(frame.state, choice, policy)
        nodes += used
        path = frame.prefix + tuple(sub)
        if nxt.done:
            cand = Trajectory(path, nxt.reward, nodes)
            if best is None or cand.cumulative_reward > best.cumulative_reward:
                best = cand
            if nxt.reward == 1:
                break
        else:
            frames.append(Frame(nxt, path))
        if nodes >= cfg.node_budget:
            break

    if best is None:
        # budget ran out before any terminal; finish the current line greedily
        frame = frames[-1]
        state = frame.state
        steps = list(frame.prefix)
        while not state.done:
            ranking = policy.shape_ranking(observe(state))
            sub, state, used = _advance_through_shape(state, ranking[0], policy)
            steps.extend(sub)
            nodes += used
        best = Trajectory(tuple(steps), state.reward, nodes)
    return Trajectory(best.steps, best.cumulative_reward, nodes)


def beam_search(task: Task, mode: str, policy: Policy, cfg: SearchConfig) -> Trajectory:
    """Beam search over shape choices; each beam expands its top-k ranked
    shapes (k = beam count), children are completed through rotation and
    location by the policy and scored by cumulative reward. The top-ranked
    child of the current best beam is always retained, so beams=1 reproduces
    the greedy rollout exactly."""
    k = cfg.beams
    root, _ = reset(task, mode)
    frontier: list[tuple[EpisodeState, tuple[TrajectoryStep, ...]]] = [(root, ())]
    completed: list[tuple[Fraction, int, tuple[TrajectoryStep, ...]]] = []
    nodes = 0
    order = 0

    while frontier and nodes < cfg.node_budget:
        children = []  # (reward, gen_order, state, path, is_first_of_best)
        for b_idx, (state, path) in enumerate(frontier):
            ranking = policy.shape_ranking(observe(state))
            for rank_pos, choice in enumerate(ranking[:k]):
                sub, nxt, used = _advance_through_shape(state, choice, policy)
                nodes += used
                new_path = path + tuple(sub)
                if nxt.done:
                    completed.append((nxt.reward, order, new_path))
                else:
                    children.append((nxt.reward, order, nxt, new_path, b_idx == 0 and rank_pos == 0))
                order += 1
        if not children:
            break
        keep = []
        forced = next((c for c in children if c[4]), None)
        if forced is not None:
            keep.append(forced)
        rest = sorted((c for c in children if c is not forced), key=lambda c: (-c[0], c[1]))
        keep.extend(rest[: k - len(keep)])
        keep.sort(key=lambda c: (-c[0], c[1]))
        frontier = [(c[2], c[3]) for c in keep]

    if not completed:
        # node budget exhausted: finish the best surviving beam greedily
        state, path = frontier[0]
        steps = list(path)
        while not state.done:
            ranking = policy.shape_ranking(observe(state))
            sub, state, used = _advance_through_shape(state, ranking[0], policy)
            steps.extend(sub)
            nodes += used
        completed.append((state.reward, order, tuple(steps)))
    reward, _, path = max(completed, key=lambda c: (c[0], -c[1]))
    return Trajectory(tuple(path), reward, nodes)
