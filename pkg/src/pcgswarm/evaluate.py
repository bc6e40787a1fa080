"""Evaluation protocol: seeded episode batteries, width/shape sweeps, and
the three agent-scaling regimes.

Every episode derives its streams from (eval seed, width, mode, seed index)
only, so arms that differ in agent count or reward frequency see identical
initial maps for the same seed index, and results are bit-reproducible.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .agents import PolicyTag, make_scripted_policy
from .env import EnvConfig, EnvState, Policy, reset, step
from .ppo import Checkpoint, load_checkpoint
from .rng import RngStream

SCRIPTED_TAGS = tuple(tag.value for tag in PolicyTag)


class TrendRegime(Enum):
    """Budget-matching schemes for comparing agent counts."""

    FIXED_ENV_STEPS = "fixed_env_steps"            # (a) same joint-step budget
    FIXED_TOTAL_ACTIONS = "fixed_total_actions"    # (b) scans shrink as 1/n
    FIXED_ACTIONS_AND_REWARDS = "fixed_actions_and_rewards"  # (c) freq shrinks too


REGIME_LETTERS = {
    "a": TrendRegime.FIXED_ENV_STEPS,
    "b": TrendRegime.FIXED_TOTAL_ACTIONS,
    "c": TrendRegime.FIXED_ACTIONS_AND_REWARDS,
}


@dataclass(frozen=True)
class Arm:
    """One experimental condition: agent count plus its matched budget."""

    n_agents: int
    scans: float
    reward_freq: int


def regime_arms(
    regime: TrendRegime,
    n_agents_list: Sequence[int],
    base_scans: float,
    base_reward_freq: int = 1,
) -> list[Arm]:
    """Derive per-arm (scans, reward_freq) under a budget-matching regime.

    Budgets anchor at the largest agent count: arm n gets multiplier
    k = n_max / n where the regime scales, so the max-agent arm always runs
    exactly (base_scans, base_reward_freq).
    """
    if not n_agents_list:
        raise ValueError("n_agents_list must be non-empty")
    if base_scans <= 0:
        raise ValueError(f"base_scans must be positive, got {base_scans}")
    if not (isinstance(base_reward_freq, int) and base_reward_freq >= 1):
        raise ValueError(f"base_reward_freq must be an int >= 1, got {base_reward_freq}")
    arms = []
    n_max = max(n_agents_list)
    for n in n_agents_list:
        if n < 1:
            raise ValueError(f"agent counts must be >= 1, got {n}")
        if regime is TrendRegime.FIXED_ENV_STEPS:
            arms.append(Arm(n, base_scans, base_reward_freq))
        elif regime is TrendRegime.FIXED_TOTAL_ACTIONS:
            arms.append(Arm(n, base_scans / n, base_reward_freq))
        else:
            k = n_max / n
            freq_exact = base_reward_freq * k
            freq = round(freq_exact)
            if abs(freq_exact - freq) > 1e-9 or freq < 1:
                raise ValueError(
                    f"regime {regime.value}: arm n_agents={n} needs "
                    f"reward_freq={freq_exact}, not a positive integer"
                )
            arms.append(Arm(n, base_scans * k, freq))
    return arms


@dataclass
class EvalSpec:
    """A battery of seeded episodes over width and shape-mode cells."""

    policy_source: str
    base_env: EnvConfig
    n_seeds: int = 50
    widths: tuple[int, ...] = (8, 16, 24, 32)
    modes: tuple[str, ...] = ("fixed", "random")
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        self.base_env.validate()
        if self.n_seeds < 1:
            raise ValueError(f"n_seeds must be >= 1, got {self.n_seeds}")
        if not self.widths or any(w < 3 for w in self.widths):
            raise ValueError(f"widths must all be >= 3, got {self.widths}")
        if not self.modes or any(m not in ("fixed", "random") for m in self.modes):
            raise ValueError(
                f'modes must be drawn from {{"fixed", "random"}}, got {self.modes}'
            )
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")


@dataclass(frozen=True)
class EvalCell:
    n_agents: int
    scans: float
    reward_freq: int
    width: int
    shape_mode: str
    mean: float
    std: float
    n_episodes: int


@dataclass
class EvalTable:
    rows: list[EvalCell]

    def to_csv(self, path: str | Path) -> None:
        # std is population std (ddof=0) across the seed battery
        with open(path, "w", encoding="utf-8") as f:
            f.write("n_agents,scans,reward_freq,width,shape_mode,mean,std,n_episodes\n")
            for r in self.rows:
                f.write(
                    f"{r.n_agents},{r.scans!r},{r.reward_freq},{r.width},"
                    f"{r.shape_mode},{r.mean!r},{r.std!r},{r.n_episodes}\n"
                )

    def to_markdown(self) -> str:
        """One row per (agents, scans, freq) arm, one column per cell."""
        cells = sorted(
            {(r.width, r.shape_mode) for r in self.rows},
            key=lambda c: (c[0], c[1]),
        )
        arms = []
        for r in self.rows:
            key = (r.n_agents, r.scans, r.reward_freq)
            if key not in arms:
                arms.append(key)
        by_key = {
            (r.n_agents, r.scans, r.reward_freq, r.width, r.shape_mode): r
            for r in self.rows
        }
        header = ["agents", "scans", "freq"] + [f"{w} {m}" for w, m in cells]
        lines = [
            "| " + " | ".join(header) + " |",
            "|" + "|".join("---" for _ in header) + "|",
        ]
        for n, scans, freq in arms:
            row = [str(n), f"{scans:g}", str(freq)]
            for w, m in cells:
                r = by_key.get((n, scans, freq, w, m))
                row.append("" if r is None else f"{r.mean:.2f} +/- {r.std:.2f}")
            lines.append("| " + " | ".join(row) + " |")
        return "\n".join(lines)


# -- running episodes ---------------------------------------------------------


def make_policy(source: str, env_config: EnvConfig) -> tuple[Policy, Checkpoint | None]:
    """Resolve a policy tag or checkpoint path, checking checkpoint
    compatibility against the target env config."""
    if source in SCRIPTED_TAGS:
        return make_scripted_policy(source), None
    ckpt = load_checkpoint(source)
    if ckpt.env_config.domain is not env_config.domain:
        raise ValueError(
            f"checkpoint domain {ckpt.env_config.domain.value} does not match "
            f"configured domain {env_config.domain.value}"
        )
    if ckpt.env_config.n_agents != env_config.n_agents:
        raise ValueError(
            f"checkpoint was trained with n_agents={ckpt.env_config.n_agents}, "
            f"config asks for {env_config.n_agents}; observation mask channels "
            f"would change shape"
        )
    return ckpt.policy(), ckpt


def cell_stream(eval_seed: int, width: int, mode: str, seed_idx: int) -> RngStream:
    """Per-episode stream. Deliberately independent of agent count and
    reward frequency so matched arms share initial maps seed by seed."""
    return RngStream(eval_seed).split(f"eval/{width}/{mode}/{seed_idx}")


def run_episode(
    config: EnvConfig, policy: Policy, stream: RngStream
) -> tuple[float, EnvState]:
    """Play one full episode; returns (total reward, final state)."""
    env_rng = stream.split("env")
    policy_rng = stream.split("policy")
    state, obs = reset(config, rng=env_rng)
    total = 0.0
    done = False
    while not done:
        acts = policy.actions(state, obs, config, policy_rng)
        state, obs, r, done = step(state, acts, config)
        total += r
    return total, state


def _cell_config(
    base: EnvConfig, width: int, mode: str, arm: Arm, pinned_window: int | None
) -> EnvConfig:
    cfg = replace(
        base,
        max_width=width,
        randomize_shape=(mode == "random"),
        n_agents=arm.n_agents,
        max_board_scans=arm.scans,
        reward_freq=arm.reward_freq,
    )
    if pinned_window is not None:
        cfg.obs_window = pinned_window
    return cfg


def _run_cell(
    policy: Policy, config: EnvConfig, arm: Arm, width: int, mode: str,
    n_seeds: int, eval_seed: int, threads: int,
) -> EvalCell:
    def one(idx: int) -> float:
        total, _ = run_episode(config, policy, cell_stream(eval_seed, width, mode, idx))
        return total

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rewards = list(pool.map(one, range(n_seeds)))
    else:
        rewards = [one(i) for i in range(n_seeds)]
    mean = sum(rewards) / n_seeds
    std = math.sqrt(sum((x - mean) ** 2 for x in rewards) / n_seeds)
    return EvalCell(
        n_agents=arm.n_agents, scans=arm.scans, reward_freq=arm.reward_freq,
        width=width, shape_mode=mode, mean=mean, std=std, n_episodes=n_seeds,
    )


def _arm_table(spec: EvalSpec, arms: Sequence[Arm]) -> EvalTable:
    policy, ckpt = make_policy(spec.policy_source, spec.base_env)
    pinned = ckpt.obs_window if ckpt is not None else None
    rows = []
    for arm in arms:
        for width in spec.widths:
            for mode in spec.modes:
                config = _cell_config(spec.base_env, width, mode, arm, pinned)
                config.validate()
                rows.append(
                    _run_cell(policy, config, arm, width, mode,
                              spec.n_seeds, spec.seed, spec.threads)
                )
    return EvalTable(rows)


def evaluate(spec: EvalSpec) -> EvalTable:
    """Run the battery for the base config's own (agents, scans, freq)."""
    spec.validate()
    base = spec.base_env
    arm = Arm(base.n_agents, base.max_board_scans, base.reward_freq)
    return _arm_table(spec, [arm])


def trend_experiment(
    n_agents_list: Sequence[int],
    regime: TrendRegime | str,
    spec: EvalSpec,
    base_scans: float | None = None,
    base_reward_freq: int | None = None,
) -> EvalTable:
    """Compare agent counts under one budget-matching regime.

    Checkpoint policies are rejected when the agent list disagrees with the
    trained agent count (mask channels fix the input width); scripted
    policies scale freely.
    """
    spec.validate()
    regime = TrendRegime(regime) if isinstance(regime, str) else regime
    scans = spec.base_env.max_board_scans if base_scans is None else base_scans
    freq = spec.base_env.reward_freq if base_reward_freq is None else base_reward_freq
    arms = regime_arms(regime, n_agents_list, scans, freq)
    if spec.policy_source not in SCRIPTED_TAGS:
        bad = [a.n_agents for a in arms if a.n_agents != spec.base_env.n_agents]
        if bad:
            raise ValueError(
                f"checkpoint policies support only their trained agent count "
                f"({spec.base_env.n_agents}); arms {bad} would change the "
                f"observation shape"
            )
    return _arm_table(spec, arms)
