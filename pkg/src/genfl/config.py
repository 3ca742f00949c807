"""Experiment configuration: a single TOML file of nested tables.

Unknown keys are errors so typos fail loudly.  The config hash covers the
fully resolved configuration including the root seed; every artifact file
carries it, and subcommands refuse inputs produced under a different hash.
"""

from __future__ import annotations

import hashlib
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .collectors import COLLECTORS
from .core import Budget
from .errors import ConfigError
from .flsim import PartitionConfig, SimConfig
from .latentopt import OptConfig
from .neural import TrainConfig

_SCHEMA = {
    None: {"seed"},
    "pool": {"devices", "profile_seed"},
    "partition": {"mode", "beta"},
    "sim": {"rounds", "participants", "local_epochs", "local_lr", "prox_mu"},
    "budget": {"latency_s", "energy_j", "latency_exp", "energy_exp"},
    "collect": {"collectors", "sessions", "shuffles", "vary_size"},
    "train": {"batch_size", "learning_rate", "alpha", "epochs", "patience"},
    "opt": {"top_k", "step_size", "max_steps", "shrink", "beam_width", "max_length",
            "restart_scale"},
    "run": {"target_accuracy"},
}


@dataclass(frozen=True)
class CollectConfig:
    collectors: tuple[str, ...] = COLLECTORS
    sessions: int = 20
    shuffles: int = 25
    vary_size: bool = True

    def __post_init__(self):
        known = set(COLLECTORS) | {"random"}
        for c in self.collectors:
            if c not in known:
                raise ConfigError(f"unknown collector {c!r}")
        if self.sessions < 1 or self.shuffles < 0:
            raise ConfigError("need sessions >= 1 and shuffles >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    devices: int = 30
    profile_seed: int | None = None
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    sim: SimConfig = field(default_factory=lambda: SimConfig(clients=30, participants=6, rounds=20))
    budget: Budget = field(default_factory=lambda: Budget(latency_budget_s=10.0, energy_budget_j=60.0))
    collect: CollectConfig = field(default_factory=CollectConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    opt: OptConfig = field(default_factory=OptConfig)
    target_accuracy: float = 0.0

    def __post_init__(self):
        if self.sim.clients != self.devices:
            raise ConfigError("sim clients must equal pool devices")

    @property
    def pool_seed(self) -> int:
        return self.seed if self.profile_seed is None else self.profile_seed

    def as_dict(self) -> dict:
        d = asdict(self)
        d["collect"]["collectors"] = list(d["collect"]["collectors"])
        return d

    def hash(self) -> str:
        payload = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _check_keys(table: dict, section: str | None) -> None:
    allowed = _SCHEMA[section]
    where = f"section [{section}]" if section else "top level"
    for key, value in table.items():
        if section is None and isinstance(value, dict):
            if key not in _SCHEMA:
                raise ConfigError(f"unknown section [{key}]")
            _check_keys(value, key)
        elif key not in allowed:
            raise ConfigError(f"unknown key {key!r} at {where}")


def _build(doc: dict, seed_override: int | None) -> ExperimentConfig:
    _check_keys(doc, None)
    seed = seed_override if seed_override is not None else doc.get("seed", 0)
    pool = doc.get("pool", {})
    devices = pool.get("devices", 30)
    part = doc.get("partition", {})
    sim = doc.get("sim", {})
    bud = doc.get("budget", {})
    col = doc.get("collect", {})
    trn = doc.get("train", {})
    opt = doc.get("opt", {})
    run = doc.get("run", {})
    try:
        return ExperimentConfig(
            seed=int(seed),
            devices=devices,
            profile_seed=pool.get("profile_seed"),
            partition=PartitionConfig(mode=part.get("mode", "iid"),
                                      beta=float(part.get("beta", 0.5))),
            sim=SimConfig(clients=devices,
                          participants=sim.get("participants", 6),
                          rounds=sim.get("rounds", 20),
                          local_epochs=sim.get("local_epochs", 5),
                          local_lr=float(sim.get("local_lr", 0.1)),
                          prox_mu=float(sim.get("prox_mu", 0.0))),
            budget=Budget(latency_budget_s=float(bud.get("latency_s", 10.0)),
                          energy_budget_j=float(bud.get("energy_j", 60.0)),
                          latency_penalty_exp=float(bud.get("latency_exp", 2.0)),
                          energy_penalty_exp=float(bud.get("energy_exp", 2.0))),
            collect=CollectConfig(collectors=tuple(col.get("collectors", list(COLLECTORS))),
                                  sessions=col.get("sessions", 20),
                                  shuffles=col.get("shuffles", 25),
                                  vary_size=col.get("vary_size", True)),
            train=TrainConfig(batch_size=trn.get("batch_size", 1024),
                              learning_rate=float(trn.get("learning_rate", 0.001)),
                              alpha=float(trn.get("alpha", 0.8)),
                              epochs=trn.get("epochs", 200),
                              patience=trn.get("patience", 20),
                              seed=int(seed)),
            opt=OptConfig(top_k=opt.get("top_k", 25),
                          step_size=float(opt.get("step_size", 0.1)),
                          max_steps=opt.get("max_steps", 20),
                          shrink=float(opt.get("shrink", 0.5)),
                          beam_width=opt.get("beam_width", 5),
                          max_length=opt.get("max_length", 12),
                          restart_scale=float(opt.get("restart_scale", 0.3))),
            target_accuracy=float(run.get("target_accuracy", 0.0)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return _build(doc, seed_override)


def default_config(seed: int = 0, **overrides) -> ExperimentConfig:
    """Programmatic config for tests and library use."""
    return _build(dict(overrides), seed_override=seed)
