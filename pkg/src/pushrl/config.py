"""Run configuration: flat key-value text with [section] headers."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

from .env import EnsembleConfig, EnvConfig
from .errors import ConfigError
from .model import ModelParams, params_from_dict


@dataclass
class NpgConfig:
    step_size: float = 0.02
    gamma: float = 0.95
    lam: float = 0.9
    fisher_damping: float = 1e-6


@dataclass
class DistConfig:
    workers: int = 4
    rollouts_per_worker: int = 10
    iterations: int = 200
    base_seed: int = 0
    listen: str = "127.0.0.1:0"
    hello_timeout: float = 30.0
    round_timeout: float = 120.0


@dataclass
class EvalConfig:
    rollouts: int = 10
    every: int = 10
    mean_action: bool = False


@dataclass
class RunConfig:
    model: ModelParams = field(default_factory=ModelParams)
    env: EnvConfig = field(default_factory=EnvConfig)
    npg: NpgConfig = field(default_factory=NpgConfig)
    dist: DistConfig = field(default_factory=DistConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    log_std_init: float = -1.0
    log_std_min: float = -2.3
    whitening: bool = True
    value_ridge: float = 10.0

    def config_hash(self) -> float:
        """Stable 52-bit hash of the canonical key/value listing, as a float."""
        lines = []
        for sec, kv in sorted(self.to_dict().items()):
            for k, v in sorted(kv.items()):
                lines.append(f"{sec}.{k}={v}")
        h = hashlib.sha256("\n".join(lines).encode()).digest()
        return float(int.from_bytes(h[:8], "little") & ((1 << 52) - 1))

    def to_dict(self) -> dict[str, dict[str, str]]:
        from .model import params_to_dict

        e = self.env
        return {
            "sim": {"dt": repr(e.dt), "substeps": str(e.substeps)},
            "model": {k: repr(v) for k, v in params_to_dict(self.model).items()},
            "env": {
                "horizon": str(e.horizon),
                "restart_prob": repr(e.restart_prob),
                "torque_limit": repr(e.torque_limit),
                "goal_radius": repr(e.goal_radius),
                "init_q1_range": f"{e.init_q1_range[0]!r} {e.init_q1_range[1]!r}",
                "init_q2_range": f"{e.init_q2_range[0]!r} {e.init_q2_range[1]!r}",
                "mass_mean": repr(e.ensemble.mass_mean),
                "mass_std": repr(e.ensemble.mass_std),
                "base_pos_std": repr(e.ensemble.base_pos_std),
            },
            "policy": {
                "log_std_init": repr(self.log_std_init),
                "log_std_min": repr(self.log_std_min),
                "whitening": str(self.whitening).lower(),
            },
            "npg": {
                "step_size": repr(self.npg.step_size),
                "gamma": repr(self.npg.gamma),
                "lam": repr(self.npg.lam),
                "fisher_damping": repr(self.npg.fisher_damping),
            },
            "value": {"ridge": repr(self.value_ridge)},
            "distributed": {
                "workers": str(self.dist.workers),
                "rollouts_per_worker": str(self.dist.rollouts_per_worker),
                "iterations": str(self.dist.iterations),
                "base_seed": str(self.dist.base_seed),
                "listen": self.dist.listen,
                "hello_timeout": repr(self.dist.hello_timeout),
                "round_timeout": repr(self.dist.round_timeout),
            },
            "eval": {
                "rollouts": str(self.eval.rollouts),
                "every": str(self.eval.every),
                "mean_action": str(self.eval.mean_action).lower(),
            },
        }


def save_config(cfg: RunConfig, path: str) -> None:
    cp = configparser.ConfigParser()
    for sec, kv in cfg.to_dict().items():
        cp[sec] = kv
    with open(path, "w") as fh:
        cp.write(fh)


_KNOWN_SECTIONS = {"sim", "model", "env", "policy", "npg", "value", "distributed", "eval"}


def _getfloat(cp, sec, key, default):
    try:
        return cp.getfloat(sec, key, fallback=default)
    except ValueError as e:
        raise ConfigError(f"[{sec}] {key}: {e}") from e


def _getint(cp, sec, key, default):
    try:
        return cp.getint(sec, key, fallback=default)
    except ValueError as e:
        raise ConfigError(f"[{sec}] {key}: {e}") from e


def _getbool(cp, sec, key, default):
    try:
        return cp.getboolean(sec, key, fallback=default)
    except ValueError as e:
        raise ConfigError(f"[{sec}] {key}: {e}") from e


def _getrange(cp, sec, key, default):
    raw = cp.get(sec, key, fallback=None)
    if raw is None:
        return default
    parts = raw.split()
    if len(parts) != 2:
        raise ConfigError(f"[{sec}] {key}: expected two floats, got {raw!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError as e:
        raise ConfigError(f"[{sec}] {key}: {e}") from e
    return (lo, hi)


def load_config(path: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        read = cp.read(path)
    except configparser.Error as e:
        # configparser errors carry line numbers in their message
        raise ConfigError(str(e)) from e
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for sec in cp.sections():
        if sec not in _KNOWN_SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")

    model_kv = {k: _getfloat(cp, "model", k, None) for k in cp["model"]} if cp.has_section("model") else {}
    try:
        model = params_from_dict({k: v for k, v in model_kv.items() if v is not None})
    except (KeyError, ValueError) as e:
        raise ConfigError(f"[model]: {e}") from e

    ens = EnsembleConfig(
        mass_mean=_getfloat(cp, "env", "mass_mean", model.object_mass),
        mass_std=_getfloat(cp, "env", "mass_std", 0.0),
        base_pos_std=_getfloat(cp, "env", "base_pos_std", 0.0),
    )
    env = EnvConfig(
        horizon=_getint(cp, "env", "horizon", 500),
        restart_prob=_getfloat(cp, "env", "restart_prob", 0.3),
        torque_limit=_getfloat(cp, "env", "torque_limit", 1.0),
        goal_radius=_getfloat(cp, "env", "goal_radius", 0.06),
        dt=_getfloat(cp, "sim", "dt", 0.0005),
        substeps=_getint(cp, "sim", "substeps", 20),
        init_q1_range=_getrange(cp, "env", "init_q1_range", (-1.2, 1.2)),
        init_q2_range=_getrange(cp, "env", "init_q2_range", (0.6, 2.9)),
        ensemble=ens,
    )
    if env.restart_prob < 0 or env.restart_prob > 1:
        raise ConfigError("[env] restart_prob must be in [0, 1]")
    if not (0 < env.dt <= 0.002):
        raise ConfigError("[sim] dt must be in (0, 0.002]")

    npg = NpgConfig(
        step_size=_getfloat(cp, "npg", "step_size", 0.02),
        gamma=_getfloat(cp, "npg", "gamma", 0.95),
        lam=_getfloat(cp, "npg", "lam", 0.9),
        fisher_damping=_getfloat(cp, "npg", "fisher_damping", 1e-6),
    )
    dist = DistConfig(
        workers=_getint(cp, "distributed", "workers", 4),
        rollouts_per_worker=_getint(cp, "distributed", "rollouts_per_worker", 10),
        iterations=_getint(cp, "distributed", "iterations", 200),
        base_seed=_getint(cp, "distributed", "base_seed", 0),
        listen=cp.get("distributed", "listen", fallback="127.0.0.1:0"),
        hello_timeout=_getfloat(cp, "distributed", "hello_timeout", 30.0),
        round_timeout=_getfloat(cp, "distributed", "round_timeout", 120.0),
    )
    ev = EvalConfig(
        rollouts=_getint(cp, "eval", "rollouts", 10),
        every=_getint(cp, "eval", "every", 10),
        mean_action=_getbool(cp, "eval", "mean_action", False),
    )
    return RunConfig(
        model=model,
        env=env,
        npg=npg,
        dist=dist,
        eval=ev,
        log_std_init=_getfloat(cp, "policy", "log_std_init", -1.0),
        log_std_min=_getfloat(cp, "policy", "log_std_min", -2.3),
        whitening=_getbool(cp, "policy", "whitening", True),
        value_ridge=_getfloat(cp, "value", "ridge", 10.0),
    )
