"""Command-line entry point: train, eval, rollout, replay, bench.

Exit codes are a stable scripting contract: 0 success, 1 runtime failure,
2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, load_run_config
from .env import EnvConfig, RENDER_LAST, load_trace, replay_trace, rollout, save_trace
from .evaluate import (
    EvalSpec,
    REGIME_LETTERS,
    SCRIPTED_TAGS,
    evaluate,
    make_policy,
    trend_experiment,
)
from .ppo import save_checkpoint, train, write_curve_csv

THREADS_ENV_VAR = "PCG_SWARM_THREADS"


def _resolve_threads(flag: int | None) -> int:
    if flag is not None:
        value = flag
    else:
        raw = os.environ.get(THREADS_ENV_VAR)
        if raw is None:
            return 1
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(
                f"{THREADS_ENV_VAR} must be an integer, got {raw!r}"
            ) from None
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.env.seed = args.seed
        cfg.eval.seed = args.seed
    return cfg


def _parse_int_list(raw: str, flag: str) -> list[int]:
    try:
        values = [int(part) for part in raw.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated integers, got {raw!r}") from None
    if not values:
        raise ConfigError(f"{flag} must name at least one value")
    return values


def _policy_source(args: argparse.Namespace) -> str:
    if getattr(args, "checkpoint", None):
        return args.checkpoint
    return args.policy


# -- commands -----------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    result = train(cfg.env, cfg.ppo, seed=cfg.env.seed, log_interval=cfg.log_interval)

    ckpt_dir = Path(cfg.io.checkpoint_dir)
    results_dir = Path(cfg.io.results_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    results_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = ckpt_dir / "checkpoint.npz"
    curve_path = results_dir / "curve.csv"
    save_checkpoint(ckpt_path, result.params, cfg.env, cfg.ppo, result.rng_state)
    write_curve_csv(curve_path, result.curve)

    final_mean = result.curve[-1].mean_ep_reward if result.curve else float("nan")
    print(f"trained {result.env_steps} env steps over {result.episodes} episodes")
    print(f"final mean episode reward: {final_mean:.4f}")
    print(f"checkpoint: {ckpt_path}")
    print(f"curve: {curve_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    threads = _resolve_threads(args.threads)
    if args.reward_freq is not None:
        cfg.env.reward_freq = args.reward_freq
    widths = (
        tuple(_parse_int_list(args.widths, "--widths"))
        if args.widths is not None
        else cfg.eval.widths
    )
    spec = EvalSpec(
        policy_source=_policy_source(args),
        base_env=cfg.env,
        n_seeds=cfg.eval.n_seeds,
        widths=widths,
        modes=cfg.eval.modes,
        seed=cfg.eval.seed,
        threads=threads,
    )
    if args.regime is not None:
        agents = _parse_int_list(args.agents, "--agents") if args.agents else [1, 2, 3]
        table = trend_experiment(
            agents,
            REGIME_LETTERS[args.regime],
            spec,
            base_scans=args.base_scans,
            base_reward_freq=args.reward_freq,
        )
    else:
        if args.base_scans is not None:
            cfg.env.max_board_scans = args.base_scans
        table = evaluate(spec)

    results_dir = Path(cfg.io.results_dir)
    results_dir.mkdir(parents=True, exist_ok=True)
    csv_path = results_dir / "eval.csv"
    md_path = results_dir / "eval.md"
    table.to_csv(csv_path)
    markdown = table.to_markdown()
    md_path.write_text(markdown + "\n", encoding="utf-8")
    print(markdown)
    print(f"csv: {csv_path}")
    print(f"markdown: {md_path}")
    return 0


def _parse_render_at(raw: str) -> set[int]:
    frames: set[int] = set()
    for part in raw.split(","):
        part = part.strip()
        if part == "last":
            frames.add(RENDER_LAST)
        elif part.isdigit():
            frames.add(int(part))
        else:
            raise ConfigError(
                f'--render-at expects comma-separated step numbers or "last", got {part!r}'
            )
    return frames


def cmd_rollout(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    policy, _ = make_policy(_policy_source(args), cfg.env)
    frames_at: set[int] = set()
    if args.render is not None:
        frames_at = _parse_render_at(args.render_at)
    result = rollout(cfg.env, policy, frames_at=frames_at)

    for step_idx in sorted(result.frames):
        print(f"step {step_idx}:")
        print(result.frames[step_idx])
        print()
    if args.trace is not None:
        trace_path = Path(args.trace)
        if trace_path.parent != Path("."):
            trace_path.parent.mkdir(parents=True, exist_ok=True)
        save_trace(trace_path, result)
        print(f"trace: {trace_path} ({len(result.steps)} steps)")
    print(f"total reward: {result.total_reward!r}")
    print(f"final grid: {result.final_state.grid.digest()}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    header, steps = load_trace(args.trace)
    result = replay_trace(header, steps)
    print(f"replayed {result.n_steps} steps, total reward {result.total_reward!r}")
    print(f"final grid: {result.final_state.grid.digest()}")
    if args.render is not None:
        print(result.final_state.grid.to_ascii())
    print("replay ok")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    from .agents import RandomPolicy
    from .env import reset, step
    from .rng import RngStream

    n_steps = args.steps
    if n_steps < 1:
        raise ConfigError(f"--steps must be >= 1, got {n_steps}")
    policy = RandomPolicy()
    report = {
        "domain": cfg.env.domain.value,
        "n_agents": cfg.env.n_agents,
        "max_width": cfg.env.max_width,
        "steps": n_steps,
        "results": [],
    }
    for freq in (1, 10):
        env_cfg = replace(cfg.env, reward_freq=freq)
        # same labels across freqs: identical maps and action draws
        env_rng = RngStream(cfg.env.seed).split("bench/env")
        policy_rng = RngStream(cfg.env.seed).split("bench/policy")
        state, obs = reset(env_cfg, rng=env_rng)
        joint_steps = 0
        reward_computations = 0
        start = time.perf_counter()
        while joint_steps < n_steps:
            acts = policy.actions(state, obs, env_cfg, policy_rng)
            state, obs, _, done = step(state, acts, env_cfg)
            joint_steps += 1
            if state.step_count % freq == 0 or done:
                reward_computations += 1
            if done and joint_steps < n_steps:
                state, obs = reset(env_cfg, rng=state.rng)
        elapsed = time.perf_counter() - start
        report["results"].append(
            {
                "reward_freq": freq,
                "joint_steps": joint_steps,
                "elapsed_s": elapsed,
                "joint_steps_per_s": joint_steps / elapsed,
                "reward_computations": reward_computations,
                "reward_computations_per_s": reward_computations / elapsed,
            }
        )

    results_dir = Path(cfg.io.results_dir)
    results_dir.mkdir(parents=True, exist_ok=True)
    out_path = results_dir / "bench.json"
    out_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(f"{'freq':>5} {'joint steps':>12} {'steps/s':>12} {'rewards/s':>12}")
    for row in report["results"]:
        print(
            f"{row['reward_freq']:>5} {row['joint_steps']:>12} "
            f"{row['joint_steps_per_s']:>12.1f} {row['reward_computations_per_s']:>12.1f}"
        )
    print(f"report: {out_path}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcgswarm",
        description="Multi-agent grid level design: train, evaluate, roll out, "
        "replay, and benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        if config_required:
            p.add_argument("--config", required=True, help="TOML run config path")
        p.add_argument("--seed", type=int, default=None,
                       help="override env and eval seeds")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default: ${THREADS_ENV_VAR} or 1)")

    def add_policy(p: argparse.ArgumentParser) -> None:
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--policy", choices=SCRIPTED_TAGS, help="scripted policy")
        group.add_argument("--checkpoint", help="trained policy checkpoint (.npz)")

    p_train = sub.add_parser("train", help="run the PPO trainer")
    add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="run the seeded evaluation battery")
    add_common(p_eval)
    add_policy(p_eval)
    p_eval.add_argument("--regime", choices=sorted(REGIME_LETTERS),
                        help="agent-scaling regime (a: fixed steps, b: fixed "
                        "actions, c: fixed actions and rewards)")
    p_eval.add_argument("--agents", default=None,
                        help="comma-separated agent counts for --regime (default 1,2,3)")
    p_eval.add_argument("--base-scans", type=float, default=None,
                        help="board scans for the anchor arm")
    p_eval.add_argument("--reward-freq", type=int, default=None,
                        help="reward frequency (anchor arm under --regime c)")
    p_eval.add_argument("--widths", default=None,
                        help="comma-separated map widths (default from config)")
    p_eval.set_defaults(func=cmd_eval)

    p_roll = sub.add_parser("rollout", help="play one episode and write a trace")
    add_common(p_roll)
    add_policy(p_roll)
    p_roll.add_argument("--trace", default=None, help="write a JSONL trace here")
    p_roll.add_argument("--render", choices=("ascii",), default=None,
                        help="print ASCII frames")
    p_roll.add_argument("--render-at", default="0,last",
                        help='frame steps, e.g. "0,100,last" (with --render)')
    p_roll.set_defaults(func=cmd_rollout)

    p_replay = sub.add_parser("replay", help="verify a trace bit-exactly")
    p_replay.add_argument("--trace", required=True, help="JSONL trace to replay")
    p_replay.add_argument("--render", choices=("ascii",), default=None,
                          help="print the final grid")
    p_replay.set_defaults(func=cmd_replay)

    p_bench = sub.add_parser("bench", help="measure stepping throughput")
    add_common(p_bench)
    p_bench.add_argument("--steps", type=int, default=2000,
                         help="joint steps to time per reward_freq")
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
