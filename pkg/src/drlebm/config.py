"""Flat key-value run configuration: one `key = value` per line, `#` comments.

Unknown keys are rejected; parse(serialize(cfg)) round-trips exactly.  Every
key is documented in docs/config.md.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .samplers import SamplerConfig
from .schedule import DESK_SIGMA2_MAX, DESK_SIGMA2_MIN, DESK_T, make_schedule
from .trainer import TrainConfig

__all__ = ["RunConfig", "ConfigError", "parse_config", "serialize_config", "load_config", "save_config"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # run
    dataset: str = "checkerboard"
    seed: int = 0
    outdir: str = "out"
    threads: int = 0  # 0 = hardware parallelism
    # schedule
    T: int = DESK_T
    sigma2_min: float = DESK_SIGMA2_MIN
    sigma2_max: float = DESK_SIGMA2_MAX
    # sampler
    K: int = 30
    b: float = 0.1
    c: str = ""  # comma-separated per-level multipliers; empty = all ones
    hmc_leapfrog: int = 2
    target_accept_low: float = 0.6
    target_accept_high: float = 0.9
    adapt_chains: int = 1000
    adapt_steps: int = 100
    # model
    hidden_width: int = 64
    n_hidden: int = 2
    temb_dim: int = 32
    # trainer
    objective: str = "recovery"
    batch_size: int = 128
    n_iters: int = 4000
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 100.0
    log_every: int = 100
    eval_every: int = 0
    eval_samples: int = 4000
    early_stop_patience: int = 20
    checkpoint_every: int = 0
    # marginal baseline variant (baseline-compare command)
    baseline_K: int = 0       # 0 = match the total budget T * K
    baseline_sigma2: float = 0.25
    baseline_c0: float = 1.0

    def schedule(self):
        return make_schedule(self.T, self.sigma2_min, self.sigma2_max)

    def sampler_config(self) -> SamplerConfig:
        c = None
        if self.c.strip():
            c = np.array([float(v) for v in self.c.split(",")], dtype=np.float64)
            if c.shape != (self.T,):
                raise ConfigError(f"c needs {self.T} per-level values, got {c.shape[0]}")
        return SamplerConfig(
            K=self.K,
            b=self.b,
            c=c,
            hmc_leapfrog=self.hmc_leapfrog,
            target_accept=(self.target_accept_low, self.target_accept_high),
            adapt_chains=self.adapt_chains,
            adapt_steps=self.adapt_steps,
        )

    def train_config(self, checkpoint_path: str = "") -> TrainConfig:
        return TrainConfig(
            objective=self.objective,
            batch_size=self.batch_size,
            n_iters=self.n_iters,
            lr=self.lr,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            grad_clip_norm=self.grad_clip_norm,
            seed=self.seed,
            log_every=self.log_every,
            eval_every=self.eval_every,
            eval_samples=self.eval_samples,
            early_stop_patience=self.early_stop_patience,
            checkpoint_every=self.checkpoint_every,
            checkpoint_path=checkpoint_path,
        )


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    ftype = _FIELDS[key]
    raw = raw.strip()
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"duplicate config key {key!r}")
        values[key] = _parse_value(key, raw)
    return RunConfig(**values)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {value!r}" if f.type == "float" else f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: RunConfig, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_config(cfg))
