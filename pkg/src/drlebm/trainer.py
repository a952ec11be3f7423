"""Recovery-likelihood training with Adam.

The recovery objective contrasts observed scaled states y_t against
Langevin-synthesized negatives initialized at x_{t+1}; the marginal baseline
(T = 1) drops the coupling term and initializes negatives from noise; the
normal-approximation objective minimizes the Gaussian-surrogate regression
loss by differentiating through the input score (tape-over-tape).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .energy import MlpEnergy, init_energy_params, save_checkpoint
from .samplers import (
    SamplerConfig,
    SamplerDivergenceError,
    langevin_step_batch,
    marginal_langevin_step_batch,
)
from .schedule import NoiseSchedule, derive_rng, sample_training_batch

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainingDivergedError",
    "adam_update",
    "clip_gradients",
    "recovery_grad",
    "normal_approx_grad",
    "train",
]

OBJECTIVES = ("recovery", "marginal_baseline", "normal_approx_dsm")


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration, checkpoint_path, cause):
        super().__init__(
            f"training diverged at iteration {iteration}"
            + (f"; last state saved to {checkpoint_path}" if checkpoint_path else "")
        )
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path
        self.__cause__ = cause


@dataclass
class TrainConfig:
    objective: str = "recovery"
    batch_size: int = 128
    n_iters: int = 1000
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 100.0  # 0 disables clipping
    seed: int = 0
    log_every: int = 100
    eval_every: int = 0      # grid-KL evaluation interval; 0 disables
    eval_samples: int = 4000
    early_stop_patience: int = 20  # evals without KL improvement; 0 disables
    checkpoint_every: int = 0
    checkpoint_path: str = ""

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def init_like(cls, param_items) -> "AdamState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in param_items},
            v={name: np.zeros_like(arr) for name, arr in param_items},
        )


def adam_update(params: dict, state: AdamState, grads: dict, cfg: TrainConfig) -> dict:
    """One bias-corrected Adam ascent step: params[k] += lr * update.

    For descent objectives pass the negated gradient.  Arrays are updated in
    place so models holding the same buffers see the new values.
    """
    if set(params) != set(grads):
        raise ValueError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params)}")
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p += cfg.lr * (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_eps)
    return params


def clip_gradients(grads: dict, max_norm: float) -> tuple:
    """Global-norm clipping; returns (grads, pre-clip norm)."""
    total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    if max_norm and max_norm > 0 and total > max_norm:
        scale = max_norm / total
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


def recovery_grad(model, batch, schedule: NoiseSchedule, sampler_cfg: SamplerConfig, rng,
                  negative_sampler=None):
    """Contrastive ascent gradient, mean over the batch of
    d f(y_t)/d theta - d f(y_t^-)/d theta.

    ``batch`` is (t, y, x_next, x0) as produced by sample_training_batch.
    Negatives start at x_{t+1} and take K Langevin steps; an explicit
    ``negative_sampler(x_next, t, rng)`` (e.g. an exact conditional draw)
    replaces the Langevin loop when given.  Returns (grads, info).
    """
    t, y, x_next, _ = batch
    n = y.shape[0]
    if negative_sampler is not None:
        y_minus = np.asarray(negative_sampler(x_next, t, rng), dtype=np.float64)
    else:
        if sampler_cfg.K < 1:
            raise ValueError("recovery objective requires K >= 1 Langevin steps")
        bound = model.bind_level(t, y.shape[0])
        y_minus = x_next.copy()
        for _ in range(sampler_cfg.K):
            y_minus = langevin_step_batch(bound, y_minus, x_next, t, schedule, sampler_cfg, rng)
    g_pos = model.param_grad_batch(y, t)
    g_neg = model.param_grad_batch(y_minus, t)
    grads = {k: (g_pos[k] - g_neg[k]) / n for k in g_pos}
    gap = float(model.energy_batch(y, t).mean() - model.energy_batch(y_minus, t).mean())
    return grads, {"gap": gap, "y_minus": y_minus}


def marginal_baseline_grad(model, batch, schedule: NoiseSchedule, sampler_cfg: SamplerConfig, rng):
    """Contrastive gradient of the T = 1 marginal objective: negatives are
    noise-initialized Langevin chains on the bare energy (no coupling)."""
    if schedule.T != 1:
        raise ValueError("marginal baseline requires a single-level schedule (T = 1)")
    if sampler_cfg.K < 1:
        raise ValueError("marginal baseline requires K >= 1 Langevin steps")
    t, y, _, _ = batch
    n = y.shape[0]
    delta = sampler_cfg.b * float(sampler_cfg.c_at(0)[0]) * float(np.sqrt(schedule.sigma2[0]))
    y_minus = rng.standard_normal(y.shape)
    bound = model.bind_level(np.zeros(n, dtype=np.int64), n)
    for _ in range(sampler_cfg.K):
        y_minus = marginal_langevin_step_batch(bound, y_minus, 0, delta, rng)
    g_pos = model.param_grad_batch(y, t)
    g_neg = model.param_grad_batch(y_minus, np.zeros(n, dtype=np.int64))
    grads = {k: (g_pos[k] - g_neg[k]) / n for k in g_pos}
    gap = float(model.energy_batch(y, t).mean() - model.energy_batch(y_minus, 0).mean())
    return grads, {"gap": gap, "y_minus": y_minus}


def normal_approx_grad(model, batch, schedule: NoiseSchedule):
    """Descent gradient of the Gaussian-surrogate regression loss

        mean ||y_t - (x_next + sigma2 grad_x f(x_next, t))||^2 / (2 sigma2).

    The input score is recomputed under an outer tape (the inner backward
    pass is recorded), so the returned gradient is exact second-order
    autodiff, not a detached approximation.  Returns (grads, info).
    """
    t, y, x_next, _ = batch
    n = y.shape[0]
    sigma2 = schedule.sigma2[np.atleast_1d(t)]
    leaves = {name: ad.Tensor(arr, requires_grad=True) for name, arr in model.param_items()}
    xt = ad.Tensor(x_next, requires_grad=True)
    with ad.Tape() as outer:
        with ad.Tape() as inner:
            total = ad.sum_reduce(model.build_energy(xt, t, leaves=leaves))
        score = inner.grad(total, xt)  # (n, d), recorded on the outer tape
        resid = ad.sub(
            ad.constant(y - x_next),
            ad.mul(score, ad.constant(np.broadcast_to(sigma2[:, None], y.shape))),
        )
        weights = np.broadcast_to((1.0 / (2.0 * sigma2 * n))[:, None], y.shape)
        loss = ad.sum_reduce(ad.mul(ad.mul(resid, resid), ad.constant(weights)))
    grad_list = outer.gradients(loss, list(leaves.values()))
    grads = {name: g.data for name, g in zip(leaves, grad_list)}
    return grads, {"loss": loss.item()}


def train(dataset, schedule: NoiseSchedule, train_cfg: TrainConfig, sampler_cfg: SamplerConfig,
          rng=None, model=None, negative_sampler=None, eval_fn=None):
    """Run the configured objective for n_iters Adam steps.

    Returns (model, log) where log is a list of dict records
    {iter, objective_gap, grad_norm, grid_kl?, wall_ms}.  ``eval_fn(model)``
    computes grid-KL when eval_every > 0; early stopping fires after
    early_stop_patience evaluations without improvement.  On sampler
    divergence the last parameters are checkpointed and
    TrainingDivergedError is raised.
    """
    rng = rng if rng is not None else derive_rng(train_cfg.seed)
    if model is None:
        model = MlpEnergy(
            init_energy_params(d=dataset.d, rng=derive_rng(train_cfg.seed, 1)),
            n_levels=schedule.T,
        )
    if train_cfg.objective == "marginal_baseline" and schedule.T != 1:
        raise ValueError("objective 'marginal_baseline' requires T = 1")
    params = dict(model.param_items())
    adam = AdamState.init_like(params.items())
    log = []
    best_kl = np.inf
    stale_evals = 0
    t_start = time.monotonic()

    def checkpoint(path):
        if isinstance(model, MlpEnergy) and path:
            std = getattr(dataset, "standardization", None)
            save_checkpoint(model.params, schedule, path, standardization=std)

    for it in range(train_cfg.n_iters):
        batch = sample_training_batch(dataset, schedule, train_cfg.batch_size, rng)
        try:
            if train_cfg.objective == "recovery":
                grads, info = recovery_grad(model, batch, schedule, sampler_cfg, rng,
                                            negative_sampler=negative_sampler)
            elif train_cfg.objective == "marginal_baseline":
                grads, info = marginal_baseline_grad(model, batch, schedule, sampler_cfg, rng)
            else:
                grads, info = normal_approx_grad(model, batch, schedule)
                grads = {k: -g for k, g in grads.items()}
                info["gap"] = -info["loss"]
            grads, grad_norm = clip_gradients(grads, train_cfg.grad_clip_norm)
            adam_update(params, adam, grads, train_cfg)
        except (SamplerDivergenceError, ad.NonFiniteError) as exc:
            crash_path = (train_cfg.checkpoint_path or "crash") + ".diverged"
            checkpoint(crash_path)
            raise TrainingDivergedError(it, crash_path, exc)

        is_last = it == train_cfg.n_iters - 1
        if train_cfg.log_every and (it % train_cfg.log_every == 0 or is_last):
            record = {
                "iter": it,
                "objective_gap": info["gap"],
                "grad_norm": grad_norm,
                "wall_ms": (time.monotonic() - t_start) * 1e3,
            }
            if train_cfg.eval_every and eval_fn is not None and (
                it % train_cfg.eval_every == 0 or is_last
            ):
                kl = float(eval_fn(model))
                record["grid_kl"] = kl
                if kl < best_kl - 1e-6:
                    best_kl = kl
                    stale_evals = 0
                else:
                    stale_evals += 1
            log.append(record)
        if train_cfg.checkpoint_every and train_cfg.checkpoint_path and (
            (it + 1) % train_cfg.checkpoint_every == 0
        ):
            checkpoint(train_cfg.checkpoint_path)
        if (
            train_cfg.early_stop_patience
            and train_cfg.eval_every
            and stale_evals >= train_cfg.early_stop_patience
        ):
            break
    if train_cfg.checkpoint_path:
        checkpoint(train_cfg.checkpoint_path)
    return model, log
