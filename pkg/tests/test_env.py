"""Multi-agent editing environment: budgets, stepping, observations, traces."""

from __future__ import annotations

import numpy as np
import pytest

from pcgswarm.agents import RandomPolicy
from pcgswarm.env import (
    FULL_WINDOW,
    MOVE_EAST,
    MOVE_NORTH,
    MOVE_SOUTH,
    MOVE_WEST,
    RENDER_LAST,
    EnvConfig,
    EnvState,
    episode_budget,
    load_trace,
    n_actions,
    observe,
    observe_all,
    place_code,
    replay_trace,
    reset,
    rollout,
    save_trace,
    step,
)
from pcgswarm.grid import Domain, Grid, MapShape, Tile
from pcgswarm.rewards import (
    compute_metrics,
    default_targets,
    default_weights,
    loss,
)
from pcgswarm.rng import RngStream

from conftest import grid_of


def make_state(grid: Grid, positions, config: EnvConfig) -> EnvState:
    """Hand-built episode state so tests control the board and agents."""
    targets = config.targets or default_targets(config.domain, grid.shape)
    weights = config.weights or default_weights(config.domain)
    metrics = compute_metrics(grid)
    return EnvState(
        grid=grid,
        positions=tuple(positions),
        step_count=0,
        budget=episode_budget(config, grid.shape),
        last_metrics=metrics,
        last_loss=loss(metrics, targets, weights),
        targets=targets,
        weights=weights,
        rng=RngStream(0),
    )


def cfg(**kw) -> EnvConfig:
    base = dict(domain=Domain.BINARY, n_agents=1, max_width=8)
    base.update(kw)
    return EnvConfig(**base)


# -- action space ----------------------------------------------------------------


def test_action_space_sizes():
    assert n_actions(Domain.BINARY) == 6
    assert n_actions(Domain.DUNGEON) == 10


def test_place_codes_follow_tile_order():
    assert place_code(Domain.BINARY, MOVE_NORTH) is None
    assert place_code(Domain.BINARY, 4) == Tile.AIR
    assert place_code(Domain.BINARY, 5) == Tile.WALL
    assert place_code(Domain.DUNGEON, 4) == Tile.AIR
    assert place_code(Domain.DUNGEON, 9) == Tile.ENEMY


# -- episode budget ----------------------------------------------------------------


@pytest.mark.parametrize(
    "scans,h,w,expected",
    [
        (1.0, 16, 16, 512),
        (2.0, 16, 16, 1024),
        (1.0, 8, 6, 96),
        (0.5, 16, 16, 256),
        (0.75, 10, 10, 150),
    ],
)
def test_episode_budget(scans, h, w, expected):
    c = cfg(max_board_scans=scans, max_width=max(h, w))
    assert episode_budget(c, MapShape(h, w, max(h, w))) == expected


def test_episode_budget_rejects_zero():
    c = cfg(max_board_scans=0.01, max_width=3)
    with pytest.raises(ValueError):
        episode_budget(c, MapShape(3, 3, 3))


# -- reset ----------------------------------------------------------------------


def test_reset_is_deterministic():
    c = cfg(n_agents=3, seed=99)
    s1, o1 = reset(c)
    s2, o2 = reset(c)
    assert s1.grid.digest() == s2.grid.digest()
    assert s1.positions == s2.positions
    assert all(np.array_equal(a.patch, b.patch) for a, b in zip(o1, o2))


def test_reset_fixed_shape_and_agent_count():
    c = cfg(n_agents=4, max_width=8, seed=7)
    state, obs = reset(c)
    assert state.grid.shape.height == 8
    assert state.grid.shape.width == 8
    assert len(state.positions) == 4
    assert len(obs) == 4
    assert state.step_count == 0
    assert state.budget == 128
    for r, cpos in state.positions:
        assert 0 <= r < 8 and 0 <= cpos < 8


def test_reset_randomized_shapes_stay_in_bounds():
    seen = set()
    for seed in range(40):
        state, _ = reset(cfg(randomize_shape=True, max_width=5, seed=seed))
        h, w = state.grid.shape.height, state.grid.shape.width
        assert 3 <= h <= 5 and 3 <= w <= 5
        seen.add((h, w))
    assert len(seen) > 4


def test_reset_continues_a_passed_stream():
    c = cfg(seed=5)
    stream = RngStream(5)
    s1, _ = reset(c, stream)
    s2, _ = reset(c, stream)
    assert s1.grid.digest() != s2.grid.digest()


def test_reset_seed_changes_grid():
    s1, _ = reset(cfg(seed=1))
    s2, _ = reset(cfg(seed=2))
    assert s1.grid.digest() != s2.grid.digest()


# -- stepping ----------------------------------------------------------------------


def test_moves_and_edge_clamping():
    g = grid_of("...\n...\n...")
    c = cfg(max_width=3)
    state = make_state(g, [(0, 0)], c)

    state, _, _, _ = step(state, [MOVE_NORTH], c)  # clamped at top edge
    assert state.positions == ((0, 0),)
    state, _, _, _ = step(state, [MOVE_WEST], c)  # clamped at left edge
    assert state.positions == ((0, 0),)
    state, _, _, _ = step(state, [MOVE_SOUTH], c)
    assert state.positions == ((1, 0),)
    state, _, _, _ = step(state, [MOVE_EAST], c)
    assert state.positions == ((1, 1),)
    state, _, _, _ = step(state, [MOVE_NORTH], c)
    assert state.positions == ((0, 1),)


def test_placement_edits_own_cell_only():
    g = grid_of("...\n...\n...")
    c = cfg(max_width=3)
    state = make_state(g, [(1, 1)], c)
    new, _, _, _ = step(state, [5], c)  # place Wall
    assert new.grid.get_tile(1, 1) == Tile.WALL
    assert state.grid.get_tile(1, 1) == Tile.AIR  # input state untouched
    assert int(np.sum(new.grid.cells != state.grid.cells)) == 1


def test_same_cell_conflict_last_agent_wins():
    g = grid_of("...\n...\n...")
    c = cfg(n_agents=2, max_width=3)
    state = make_state(g, [(1, 1), (1, 1)], c)
    new, _, _, _ = step(state, [5, 4], c)  # agent 0 Wall, agent 1 Air
    assert new.grid.get_tile(1, 1) == Tile.AIR
    new, _, _, _ = step(state, [4, 5], c)  # reversed order: Wall sticks
    assert new.grid.get_tile(1, 1) == Tile.WALL


def test_agents_apply_in_index_order():
    # agent 0 places Wall then agent 1 walks; both outcomes visible at once
    g = grid_of("...\n...\n...")
    c = cfg(n_agents=2, max_width=3)
    state = make_state(g, [(0, 0), (2, 2)], c)
    new, _, _, _ = step(state, [5, MOVE_NORTH], c)
    assert new.grid.get_tile(0, 0) == Tile.WALL
    assert new.positions == ((0, 0), (1, 2))


def test_step_rejects_bad_inputs():
    g = grid_of("...\n...\n...")
    c = cfg(max_width=3)
    state = make_state(g, [(0, 0)], c)
    with pytest.raises(ValueError):
        step(state, [], c)
    with pytest.raises(ValueError):
        step(state, [0, 0], c)
    with pytest.raises(ValueError):
        step(state, [6], c)  # binary has 6 actions, 0..5
    with pytest.raises(ValueError):
        step(state, [-1], c)
    with pytest.raises(ValueError):
        step(state, [1.5], c)


def test_step_after_done_raises():
    g = grid_of("...\n...\n...")
    c = cfg(max_width=3)
    state = make_state(g, [(0, 0)], c)
    for _ in range(state.budget):
        state, _, _, done = step(state, [MOVE_EAST], c)
    assert done and state.done
    with pytest.raises(ValueError):
        step(state, [MOVE_EAST], c)


def test_numpy_actions_accepted():
    g = grid_of("...\n...\n...")
    c = cfg(max_width=3)
    state = make_state(g, [(0, 0)], c)
    new, _, _, _ = step(state, np.array([5], dtype=np.int64), c)
    assert new.grid.get_tile(0, 0) == Tile.WALL


# -- reward gating -----------------------------------------------------------------


def drive(state: EnvState, actions_per_step, config: EnvConfig):
    """Apply a fixed action script; returns rewards and grids after each step."""
    rewards, grids = [], [state.grid]
    for acts in actions_per_step:
        state, _, r, done = step(state, acts, config)
        rewards.append(r)
        grids.append(state.grid)
    return state, rewards, grids


def script(seed: int, n_steps: int, n_agents: int, domain: Domain) -> list[list[int]]:
    rng = RngStream(seed)
    limit = n_actions(domain)
    return [[rng.below(limit) for _ in range(n_agents)] for _ in range(n_steps)]


def test_reward_every_step_matches_loss_deltas():
    c = cfg(max_width=4, seed=3)
    state, _ = reset(c)
    acts = script(11, state.budget, 1, Domain.BINARY)
    state, rewards, grids = drive(state, acts, c)
    for prev, curr, r in zip(grids, grids[1:], rewards):
        lp = loss(compute_metrics(prev), state.targets, state.weights)
        lc = loss(compute_metrics(curr), state.targets, state.weights)
        assert r == lp - lc


def test_reward_freq_gates_intermediate_steps():
    c = cfg(max_width=4, seed=3, reward_freq=3)
    state, _ = reset(c)
    budget = state.budget  # 32, not a multiple of 3
    acts = script(11, budget, 1, Domain.BINARY)
    state, rewards, grids = drive(state, acts, c)

    for i, r in enumerate(rewards, start=1):
        if i % 3 == 0 or i == budget:
            continue
        assert r == 0.0
    # each reward step pays out the loss delta since the previous reward step
    marks = [0] + [i for i in range(1, budget + 1) if i % 3 == 0 or i == budget]
    for a, b in zip(marks, marks[1:]):
        la = loss(compute_metrics(grids[a]), state.targets, state.weights)
        lb = loss(compute_metrics(grids[b]), state.targets, state.weights)
        assert rewards[b - 1] == la - lb


@pytest.mark.parametrize("freq", [1, 2, 5, 7])
def test_total_reward_telescopes_for_any_freq(freq):
    base = cfg(max_width=4, seed=21)
    state0, _ = reset(base)
    acts = script(17, state0.budget, 1, Domain.BINARY)

    c = cfg(max_width=4, seed=21, reward_freq=freq)
    state, _ = reset(c)
    state, rewards, grids = drive(state, acts, c)
    l0 = loss(compute_metrics(grids[0]), state.targets, state.weights)
    lf = loss(compute_metrics(grids[-1]), state.targets, state.weights)
    assert sum(rewards) == l0 - lf
    assert grids[-1].digest() == state.grid.digest()


def test_final_step_flushes_reward_even_off_cycle():
    c = cfg(max_width=4, seed=21, reward_freq=10)
    state, _ = reset(c)
    assert state.budget % 10 != 0
    acts = script(17, state.budget, 1, Domain.BINARY)
    _, rewards, grids = drive(state, acts, c)
    l30 = loss(compute_metrics(grids[30]), state.targets, state.weights)
    l32 = loss(compute_metrics(grids[32]), state.targets, state.weights)
    assert rewards[-1] == l30 - l32
    assert rewards[-2] == 0.0


def test_shared_reward_with_multiple_agents():
    g = grid_of("#..\n...\n...")
    c = cfg(n_agents=2, max_width=3)
    state = make_state(g, [(0, 0), (2, 2)], c)
    l0 = state.last_loss
    new, _, r, _ = step(state, [4, 5], c)  # 0 opens the corner, 1 walls its cell
    l1 = loss(compute_metrics(new.grid), state.targets, state.weights)
    assert r == l0 - l1


# -- observations ------------------------------------------------------------------


def test_observation_shape_and_center():
    c = cfg(n_agents=2, obs_window=5, max_width=8, seed=13)
    state, obs = reset(c)
    for i, ob in enumerate(obs):
        assert ob.patch.shape == (5, 5, 3)
        assert ob.patch.dtype == np.uint8
        r, col = state.positions[i]
        assert ob.tile_channel()[2, 2] == state.grid.cells[r, col]
        assert ob.mask_channel(0)[2, 2] == 1
        assert int(ob.mask_channel(0).sum()) == 1


def test_corner_observation_pads_with_border():
    g = grid_of("...\n...\n...")
    c = cfg(max_width=3, obs_window=3)
    state = make_state(g, [(0, 0)], c)
    tiles = observe(state, 0, c).tile_channel()
    border = tiles == int(Tile.BORDER)
    assert int(border.sum()) == 5  # top row and left column of the window
    assert border[0].all() and border[:, 0].all()
    assert tiles[1, 1] == Tile.AIR


def test_full_window_sees_whole_map_from_any_corner():
    g = grid_of("#..\n.#.\n..#")
    c = cfg(max_width=3, obs_window=FULL_WINDOW)
    assert c.resolved_obs_window() == 5
    for pos in [(0, 0), (0, 2), (2, 0), (2, 2), (1, 1)]:
        state = make_state(g, [pos], c)
        tiles = observe(state, 0, c).tile_channel()
        inside = tiles[tiles != int(Tile.BORDER)]
        assert inside.size == 9
        assert sorted(inside.tolist()) == sorted(g.cells.flatten().tolist())


def test_even_window_center_sits_top_left_of_middle():
    g = grid_of("....\n....\n....\n....")
    c = cfg(max_width=4, obs_window=4)
    state = make_state(g, [(1, 1)], c)
    ob = observe(state, 0, c)
    assert ob.patch.shape == (4, 4, 2)
    assert ob.mask_channel(0)[1, 1] == 1
    # window spans rows 0..3 of the map, so no border appears on any side
    assert not (ob.tile_channel() == int(Tile.BORDER)).any()
    state = make_state(g, [(0, 0)], c)
    tiles = observe(state, 0, c).tile_channel()
    assert (tiles[0] == int(Tile.BORDER)).all()
    assert (tiles[:, 0] == int(Tile.BORDER)).all()
    assert not (tiles[1:, 1:] == int(Tile.BORDER)).any()


def test_mask_channels_rotate_per_observer():
    g = grid_of("...\n...\n...")
    c = cfg(n_agents=3, max_width=3, obs_window=FULL_WINDOW)
    positions = [(0, 0), (1, 1), (2, 2)]
    state = make_state(g, positions, c)
    for observer in range(3):
        ob = observe(state, observer, c)
        orow, ocol = positions[observer]
        off = (c.resolved_obs_window() - 1) // 2
        for k in range(3):
            who = (observer + k) % 3
            pr = positions[who][0] - orow + off
            pc = positions[who][1] - ocol + off
            mask = ob.mask_channel(k)
            assert mask[pr, pc] == 1
            assert int(mask.sum()) == 1


def test_overlapping_agents_mark_same_cell():
    g = grid_of("...\n...\n...")
    c = cfg(n_agents=2, max_width=3, obs_window=3)
    state = make_state(g, [(1, 1), (1, 1)], c)
    ob = observe(state, 0, c)
    assert ob.mask_channel(0)[1, 1] == 1
    assert ob.mask_channel(1)[1, 1] == 1


def test_observe_rejects_unknown_agent():
    g = grid_of("...\n...\n...")
    c = cfg(max_width=3)
    state = make_state(g, [(0, 0)], c)
    with pytest.raises(IndexError):
        observe(state, 1, c)
    assert len(observe_all(state, c)) == 1


# -- traces and replay -------------------------------------------------------------


def test_rollout_trace_replay_round_trip(tmp_path):
    c = cfg(n_agents=2, max_width=6, seed=77, reward_freq=2)
    result = rollout(c, RandomPolicy(), frames_at=(0, RENDER_LAST))
    assert len(result.steps) == 72
    assert 0 in result.frames and 72 in result.frames

    path = tmp_path / "episode.jsonl"
    save_trace(path, result)
    header, steps = load_trace(path)
    replay = replay_trace(header, steps)
    assert replay.n_steps == len(result.steps)
    assert replay.total_reward == result.total_reward
    assert replay.final_state.grid.digest() == result.final_state.grid.digest()


def test_replay_detects_tampered_reward(tmp_path):
    c = cfg(max_width=4, seed=9)
    result = rollout(c, RandomPolicy())
    path = tmp_path / "episode.jsonl"
    save_trace(path, result)
    header, steps = load_trace(path)
    victim = next(rec for rec in steps if rec["reward"] != 0.0)
    victim["reward"] += 1.0
    with pytest.raises(ValueError, match="reward"):
        replay_trace(header, steps)


def test_replay_detects_truncated_trace(tmp_path):
    c = cfg(max_width=4, seed=9)
    result = rollout(c, RandomPolicy())
    path = tmp_path / "episode.jsonl"
    save_trace(path, result)
    header, steps = load_trace(path)
    with pytest.raises(ValueError, match="budget"):
        replay_trace(header, steps[:-1])


def test_replay_detects_reordered_steps(tmp_path):
    c = cfg(max_width=4, seed=9)
    result = rollout(c, RandomPolicy())
    path = tmp_path / "episode.jsonl"
    save_trace(path, result)
    header, steps = load_trace(path)
    steps[3], steps[4] = steps[4], steps[3]
    with pytest.raises(ValueError, match="step"):
        replay_trace(header, steps)


def test_trace_floats_survive_json_exactly(tmp_path):
    c = cfg(n_agents=2, max_width=6, seed=31)
    result = rollout(c, RandomPolicy())
    path = tmp_path / "episode.jsonl"
    save_trace(path, result)
    _, steps = load_trace(path)
    assert [rec["reward"] for rec in steps] == [rec["reward"] for rec in result.steps]


def test_config_dict_round_trip():
    t = default_targets(Domain.DUNGEON, MapShape(8, 8, 8))
    w = default_weights(Domain.DUNGEON)
    c = EnvConfig(
        domain=Domain.DUNGEON, n_agents=3, obs_window=FULL_WINDOW,
        max_board_scans=2.5, reward_freq=4, max_width=8, randomize_shape=True,
        wall_prob=0.3, targets=t, weights=w, seed=123,
    )
    back = EnvConfig.from_dict(c.to_dict())
    assert back == c


def test_config_validation_failures():
    with pytest.raises(ValueError):
        cfg(n_agents=0).validate()
    with pytest.raises(ValueError):
        cfg(n_agents=9).validate()
    with pytest.raises(ValueError):
        cfg(obs_window=2).validate()
    with pytest.raises(ValueError):
        cfg(obs_window="wide").validate()
    with pytest.raises(ValueError):
        cfg(reward_freq=0).validate()
    with pytest.raises(ValueError):
        cfg(max_board_scans=0.0).validate()
    with pytest.raises(ValueError):
        cfg(seed=-1).validate()
