"""Run configuration: a TOML file with env, ppo, eval, and io sections.

Parsing is strict: unknown keys, wrong types, and invalid values are all
rejected with the full dotted field path before any work starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .env import EnvConfig, FULL_WINDOW
from .grid import Domain
from .ppo import PPOConfig
from .rewards import targets_from_jsonable, weights_from_jsonable


class ConfigError(Exception):
    """Invalid run configuration; message names the offending field."""


@dataclass
class EvalSettings:
    """Eval-battery shape; the policy and arms come from CLI flags."""

    n_seeds: int = 50
    widths: tuple[int, ...] = (8, 16, 24, 32)
    modes: tuple[str, ...] = ("fixed", "random")
    seed: int = 0


@dataclass
class IOSettings:
    checkpoint_dir: str = "runs/checkpoints"
    trace_dir: str = "runs/traces"
    results_dir: str = "runs/results"


@dataclass
class RunConfig:
    env: EnvConfig
    ppo: PPOConfig = field(default_factory=PPOConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    io: IOSettings = field(default_factory=IOSettings)
    log_interval: int = 10_000

    def validate(self) -> None:
        try:
            self.env.validate()
            self.ppo.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.log_interval < 1:
            raise ConfigError(f"log_interval must be >= 1, got {self.log_interval}")
        if self.eval.n_seeds < 1:
            raise ConfigError(f"eval.n_seeds must be >= 1, got {self.eval.n_seeds}")
        if not self.eval.widths or any(w < 3 for w in self.eval.widths):
            raise ConfigError(f"eval.widths must all be >= 3, got {self.eval.widths}")
        if not self.eval.modes or any(m not in ("fixed", "random") for m in self.eval.modes):
            raise ConfigError(
                f'eval.modes entries must be "fixed" or "random", got {self.eval.modes}'
            )


def _require_table(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path} must be a table, got {type(value).__name__}")
    return dict(value)


def _take(table: dict, key: str, path: str, kind: type, default: Any) -> Any:
    if key not in table:
        return default
    value = table.pop(key)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{path}.{key} must be an integer, got a boolean")
    if not isinstance(value, kind):
        raise ConfigError(
            f"{path}.{key} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _reject_unknown(table: dict, path: str) -> None:
    if table:
        names = ", ".join(f"{path}.{k}" for k in sorted(table))
        raise ConfigError(f"unknown field(s): {names}")


def _parse_env(raw: Any) -> EnvConfig:
    table = _require_table(raw, "env")
    if "domain" not in table:
        raise ConfigError('missing required field "env.domain"')
    domain_raw = table.pop("domain")
    try:
        domain = Domain(domain_raw)
    except ValueError:
        raise ConfigError(
            f'env.domain must be one of {[d.value for d in Domain]}, got {domain_raw!r}'
        ) from None
    if "n_agents" not in table:
        raise ConfigError('missing required field "env.n_agents"')
    n_agents = table.pop("n_agents")
    if not isinstance(n_agents, int) or isinstance(n_agents, bool):
        raise ConfigError(f"env.n_agents must be an integer, got {n_agents!r}")

    window: Any = table.pop("obs_window", 3)
    if isinstance(window, str) and window != FULL_WINDOW:
        raise ConfigError(f'env.obs_window must be an integer or "full", got {window!r}')
    if isinstance(window, bool) or not isinstance(window, (int, str)):
        raise ConfigError(f'env.obs_window must be an integer or "full", got {window!r}')

    targets = None
    if "targets" in table:
        try:
            targets = targets_from_jsonable(_require_table(table.pop("targets"), "env.targets"))
        except ValueError as e:
            raise ConfigError(f"env.targets: {e}") from None
    weights = None
    if "weights" in table:
        try:
            weights = weights_from_jsonable(_require_table(table.pop("weights"), "env.weights"))
        except ValueError as e:
            raise ConfigError(f"env.weights: {e}") from None

    cfg = EnvConfig(
        domain=domain,
        n_agents=n_agents,
        obs_window=window,
        max_board_scans=_take(table, "max_board_scans", "env", float, 1.0),
        reward_freq=_take(table, "reward_freq", "env", int, 1),
        max_width=_take(table, "max_width", "env", int, 16),
        randomize_shape=_take(table, "randomize_shape", "env", bool, False),
        wall_prob=_take(table, "wall_prob", "env", float, 0.5),
        targets=targets,
        weights=weights,
        seed=_take(table, "seed", "env", int, 0),
    )
    _reject_unknown(table, "env")
    return cfg


def _parse_ppo(raw: Any) -> PPOConfig:
    table = _require_table(raw, "ppo")
    defaults = PPOConfig()
    cfg = PPOConfig(
        gamma=_take(table, "gamma", "ppo", float, defaults.gamma),
        lam=_take(table, "lam", "ppo", float, defaults.lam),
        clip_eps=_take(table, "clip_eps", "ppo", float, defaults.clip_eps),
        lr=_take(table, "lr", "ppo", float, defaults.lr),
        epochs=_take(table, "epochs", "ppo", int, defaults.epochs),
        minibatches=_take(table, "minibatches", "ppo", int, defaults.minibatches),
        entropy_coef=_take(table, "entropy_coef", "ppo", float, defaults.entropy_coef),
        value_coef=_take(table, "value_coef", "ppo", float, defaults.value_coef),
        total_steps=_take(table, "total_steps", "ppo", int, defaults.total_steps),
        n_envs=_take(table, "n_envs", "ppo", int, defaults.n_envs),
        rollout_steps=_take(table, "rollout_steps", "ppo", int, defaults.rollout_steps),
        hidden=_take(table, "hidden", "ppo", int, defaults.hidden),
    )
    _reject_unknown(table, "ppo")
    return cfg


def _parse_eval(raw: Any) -> EvalSettings:
    table = _require_table(raw, "eval")
    widths_raw = table.pop("widths", list(EvalSettings().widths))
    if not isinstance(widths_raw, list) or not all(
        isinstance(w, int) and not isinstance(w, bool) for w in widths_raw
    ):
        raise ConfigError(f"eval.widths must be a list of integers, got {widths_raw!r}")
    modes_raw = table.pop("modes", list(EvalSettings().modes))
    if not isinstance(modes_raw, list) or not all(isinstance(m, str) for m in modes_raw):
        raise ConfigError(f"eval.modes must be a list of strings, got {modes_raw!r}")
    settings = EvalSettings(
        n_seeds=_take(table, "n_seeds", "eval", int, EvalSettings().n_seeds),
        widths=tuple(widths_raw),
        modes=tuple(modes_raw),
        seed=_take(table, "seed", "eval", int, EvalSettings().seed),
    )
    _reject_unknown(table, "eval")
    return settings


def _parse_io(raw: Any) -> IOSettings:
    table = _require_table(raw, "io")
    defaults = IOSettings()
    settings = IOSettings(
        checkpoint_dir=_take(table, "checkpoint_dir", "io", str, defaults.checkpoint_dir),
        trace_dir=_take(table, "trace_dir", "io", str, defaults.trace_dir),
        results_dir=_take(table, "results_dir", "io", str, defaults.results_dir),
    )
    _reject_unknown(table, "io")
    return settings


def parse_run_config(data: Mapping[str, Any]) -> RunConfig:
    table = dict(data)
    if "env" not in table:
        raise ConfigError('missing required section "env" (with "env.domain" and "env.n_agents")')
    cfg = RunConfig(
        env=_parse_env(table.pop("env")),
        ppo=_parse_ppo(table.pop("ppo", {})),
        eval=_parse_eval(table.pop("eval", {})),
        io=_parse_io(table.pop("io", {})),
        log_interval=_take(table, "log_interval", "<root>", int, 10_000),
    )
    _reject_unknown(table, "<root>")
    cfg.validate()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and fully validate a TOML run config."""
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: TOML parse error: {e}") from None
    return parse_run_config(data)
