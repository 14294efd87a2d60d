import re
from fractions import Fraction

import numpy as np
import pytest

from packbench.env import (EmptyPack, EpisodeFinished, InvalidAction, MODE_EASY,
                           MODE_VANILLA, PHASE_DONE, PHASE_LOCATION, PHASE_ROTATION,
                           PHASE_SHAPE, action_count, clone, ground_truth_actions,
                           new_task, reset, run_actions, step)
from packbench.evolution import EvolutionConfig, PoolSpec, evolve, sample_pool
from packbench.meshes import make_spec
from packbench.packing import (Anchor, Chromosome, Pack, ShapeCache, anchor_key,
                               candidate_locations, create_pack)


def pack_of(pool, **kwargs):
    n = len(pool)
    c = Chromosome(tuple(range(n)), (Fraction(1),) * n, (0,) * n)
    return create_pack(pool, c, **kwargs)


def two_shape_pack():
    # voxel volumes 3000 and 1000
    pool = [make_spec("a", "cuboid", w=0.1, h=0.15, d=0.2),
            make_spec("b", "cuboid", w=0.1, h=0.1, d=0.1)]
    return pack_of(pool)


@pytest.fixture(scope="module")
def evolved_task():
    pool = sample_pool(PoolSpec(pool_size=8, seed=3))
    pack, _ = evolve(pool, EvolutionConfig(population=12, elite=3, lucky=3,
                                           max_generations=15, patience=100, seed=5))
    return new_task(pack)


def test_new_task_fields():
    pack = two_shape_pack()
    task = new_task(pack)
    assert len(task.shapes) == 2
    assert task.total_volume == 4000
    assert task.source is pack


def test_new_task_rejects_empty_pack():
    pool = [make_spec("big", "cuboid", w=0.9, h=0.9, d=0.9)]
    empty = create_pack(pool, Chromosome((0,), (Fraction(4),), (0,)))
    with pytest.raises(EmptyPack):
        new_task(empty)


def test_task_grids_are_canonical():
    # grids equal the pack grids rotated back to canonical orientation
    pool = [make_spec("a", "cuboid", w=0.1, h=0.2, d=0.3)]
    c = Chromosome((0,), (Fraction(1),), (7,))
    pack = create_pack(pool, c)
    task = new_task(pack)
    cache = ShapeCache(pool)
    from packbench.rotations import inverse_index
    from packbench.voxels import rotate_voxels
    placed_grid = cache.rotated(0, Fraction(1), 7)
    back = rotate_voxels(placed_grid, inverse_index(7))
    assert np.array_equal(task.grid(0).occupancy, back.occupancy)


def test_reset_state():
    task = new_task(two_shape_pack())
    state, obs = reset(task)
    assert state.reward == 0
    assert state.remaining == (0, 1)
    assert obs.phase == PHASE_SHAPE
    assert len(obs.remaining_grids) == 2
    assert obs.action_count == 2


def test_vanilla_step_sequence_and_reward():
    task = new_task(two_shape_pack())
    state, obs = reset(task)
    state, obs, r, done = step(state, 0)
    assert (obs.phase, r, done) == (PHASE_ROTATION, 0.0, False)
    assert action_count(state) == 24
    state, obs, r, done = step(state, 0)
    assert (obs.phase, r, done) == (PHASE_LOCATION, 0.0, False)
    assert obs.candidates[0] == Anchor(0, 0, 0)
    state, obs, r, done = step(state, 0)
    assert r == pytest.approx(0.75)  # 3000 / 4000
    assert not done and obs.phase == PHASE_SHAPE
    assert state.remaining == (1,)


def test_terminal_when_rotation_fits_nowhere():
    pool = [make_spec("a", "cuboid", w=0.4, h=0.4, d=0.4),
            make_spec("b", "cuboid", w=0.4, h=0.4, d=0.4)]
    task = new_task(pack_of(pool))
    state, _ = reset(task)
    state, _, _, _ = step(state, 0)
    state, obs, _, _ = step(state, 0)
    # put the first cube mid-box so no 40-voxel run survives on any axis
    mid = obs.candidates.index(Anchor(8, 8, 8))
    state, _, r, done = step(state, mid)
    assert not done
    state, _, _, _ = step(state, 0)           # choose second cube
    state, obs, r, done = step(state, 0)      # any rotation: cube grid identical
    assert done and r == 0.0
    assert state.phase == PHASE_DONE
    assert state.remaining == (1,)


def test_easy_mode_empty_union_ends_episode():
    pool = [make_spec("a", "cuboid", w=0.4, h=0.4, d=0.4),
            make_spec("b", "cuboid", w=0.4, h=0.4, d=0.4)]
    task = new_task(pack_of(pool))
    state, _ = reset(task, MODE_EASY)
    state, obs, _, _ = step(state, 0)
    mid = obs.candidates.index(Anchor(8, 8, 8))
    state, _, _, _ = step(state, mid)
    state, _, _, _ = step(state, 0)  # a cube: any feasible rotation places it
    assert state.phase == PHASE_SHAPE
    state, _, r, done = step(state, 0)  # second cube: no anchor in any rotation
    assert done and r == 0.0 and state.remaining == (1,)


def test_ground_truth_replay_reaches_exactly_one(evolved_task):
    actions = ground_truth_actions(evolved_task)
    state, _ = reset(evolved_task)
    for a in actions:
        state, _, _, done = step(state, a)
    assert state.reward == Fraction(1)
    assert done and state.done


def test_invalid_action_and_finished_errors():
    task = new_task(two_shape_pack())
    state, _ = reset(task)
    with pytest.raises(InvalidAction):
        step(state, 2)
    for a in ground_truth_actions(task):
        state, _, _, _ = step(state, a)
    assert state.done
    with pytest.raises(EpisodeFinished):
        step(state, 0)
    with pytest.raises(EpisodeFinished):
        action_count(state)


def test_step_is_functional_and_clone_independent():
    task = new_task(two_shape_pack())
    s0, _ = reset(task)
    c0 = clone(s0)
    d_before = s0.digest()
    step(s0, 0)
    assert s0.digest() == d_before == c0.digest()
    # stepping the clone leaves the original untouched
    c1, _, _, _ = step(c0, 0)
    assert c0.digest() == d_before
    assert c1.digest() != d_before


def test_clone_fanout_determinism(evolved_task):
    actions = ground_truth_actions(evolved_task)[:6]
    states = [clone(reset(evolved_task)[0]) for _ in range(4)]
    digests = set()
    for s in states:
        for a in actions:
            s, _, _, _ = step(s, a)
        digests.add(s.digest())
    assert len(digests) == 1


def test_easy_union_candidates_match_per_rotation_union(evolved_task):
    state, _ = reset(evolved_task, MODE_EASY)
    state, obs, _, done = step(state, 0)
    assert not done and obs.phase == PHASE_LOCATION
    union = set()
    shape = state.pending_shape
    for r in range(24):
        union.update(candidate_locations(state.box, evolved_task.rotated(shape, r)))
    assert set(obs.candidates) == union
    assert list(obs.candidates) == sorted(obs.candidates, key=anchor_key)


def test_easy_rotation_list_nonempty_and_places(evolved_task):
    state, _ = reset(evolved_task, MODE_EASY)
    while not state.done:
        if state.phase == PHASE_ROTATION:
            assert len(state.feasible_rotations) >= 1
            before = state.reward
            state, _, r, _ = step(state, 0)
            assert Fraction(state.reward - before) > 0
        else:
            state, _, _, _ = step(state, 0)
    assert state.reward <= 1


def test_episode_length_bound(evolved_task):
    n = len(evolved_task.shapes)
    for mode in (MODE_VANILLA, MODE_EASY):
        state, _ = reset(evolved_task, mode)
        steps = 0
        while not state.done:
            state, _, _, _ = step(state, 0)
            steps += 1
        assert steps <= 3 * n


def test_vanilla_candidates_equal_candidate_locations(evolved_task):
    state, _ = reset(evolved_task)
    state, _, _, _ = step(state, 0)
    state, obs, _, done = step(state, 5)
    if not done:
        g = evolved_task.rotated(state.pending_shape, 5)
        assert list(obs.candidates) == candidate_locations(state.box, g)


def test_trajectory_log_format(evolved_task):
    actions = ground_truth_actions(evolved_task)
    lines = run_actions(evolved_task, MODE_VANILLA, actions)
    pat = re.compile(r"^\d+ (shape|rotation|location) \d+ [01]\.\d{12} [01]$")
    for line in lines:
        assert pat.match(line), line
    assert lines[-1].endswith(" 1")
    total = sum(float(line.split()[3]) for line in lines)
    assert abs(total - 1.0) < 1e-9


def test_observation_pooled_views(evolved_task):
    _, obs = reset(evolved_task)
    p = obs.pooled_box(25)
    assert p.shape == (4, 4, 4)
    assert np.allclose(p, 0.0)
    q = obs.pooled_shape(0, 20)
    assert q.shape == (5, 5, 5)
    assert q.sum() > 0
