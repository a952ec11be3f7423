"""Progressive sampling from white noise, plus inpainting, interpolation,
and the long-run exact-sampler driver.

Noise-draw order is part of the contract: progressive sampling consumes
x_T first, then one (n, d) Gaussian block per sampler step per level, from
T-1 down to 0.  Interpolation pre-draws that plan for two seeds, slerps every
block, and replays the sampler deterministically, so the endpoints reproduce
the plain runs bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .samplers import (
    ConditionalTarget,
    SamplerConfig,
    hmc_transition_batch,
    langevin_step_batch,
    marginal_langevin_step_batch,
    normal_approx_sample_batch,
    NutsSampler,
)
from .schedule import NoiseSchedule

__all__ = [
    "GenerationTrace",
    "LongRunDiagnostics",
    "MaskError",
    "NoisePlan",
    "draw_noise_plan",
    "slerp",
    "slerp_plans",
    "progressive_sample",
    "short_run_marginal_sample",
    "inpaint",
    "inpaint_batch",
    "interpolate",
    "long_run_chain",
]


class MaskError(ValueError):
    pass


@dataclass
class GenerationTrace:
    sampler: str
    steps_per_level: int
    snapshots: list = field(default_factory=list)  # x_T ... x_0, length T+1


@dataclass
class NoisePlan:
    """Every stochastic input of one progressive run, pre-drawn."""

    x_T: np.ndarray           # (n, d)
    eps: list                 # per level t = T-1..0: (steps, n, d)

    def tensors(self):
        yield self.x_T
        for block in self.eps:
            yield block


def draw_noise_plan(schedule: NoiseSchedule, steps_per_level: int, n: int, d: int, rng) -> NoisePlan:
    steps = max(1, int(steps_per_level))
    x_T = rng.standard_normal((n, d))
    eps = [rng.standard_normal((steps, n, d)) for _ in range(schedule.T)]
    return NoisePlan(x_T=x_T, eps=eps)


def slerp(u: np.ndarray, v: np.ndarray, lam: float) -> np.ndarray:
    """Spherical interpolation of flattened noise tensors.

    Endpoints are returned verbatim so lam = 0 / 1 are bit-exact.  Degenerate
    geometry (zero-norm or antipodal vectors) falls back to linear
    interpolation.
    """
    if lam == 0.0:
        return u.copy()
    if lam == 1.0:
        return v.copy()
    shape = u.shape
    uf, vf = u.ravel(), v.ravel()
    nu, nv = np.linalg.norm(uf), np.linalg.norm(vf)
    if nu == 0.0 or nv == 0.0:
        return ((1.0 - lam) * u + lam * v).reshape(shape)
    cos_om = float(np.clip(uf @ vf / (nu * nv), -1.0, 1.0))
    omega = math.acos(cos_om)
    sin_om = math.sin(omega)
    if sin_om < 1e-9:
        return ((1.0 - lam) * u + lam * v).reshape(shape)
    a = math.sin((1.0 - lam) * omega) / sin_om
    b = math.sin(lam * omega) / sin_om
    return (a * uf + b * vf).reshape(shape)


def slerp_plans(plan_a: NoisePlan, plan_b: NoisePlan, lam: float) -> NoisePlan:
    return NoisePlan(
        x_T=slerp(plan_a.x_T, plan_b.x_T, lam),
        eps=[slerp(ea, eb, lam) for ea, eb in zip(plan_a.eps, plan_b.eps)],
    )


def progressive_sample(model, schedule: NoiseSchedule, cfg: SamplerConfig, n: int, rng,
                       trace: bool = False, noise_plan: NoisePlan | None = None):
    """Ancestral sampling down the level sequence.

    Each level initializes y_t = x_{t+1}, runs cfg.K Langevin steps (one
    normal-approximation draw when K = 0), then rescales x_t = y_t / alpha[t].
    Returns an (n, d) batch, or (batch, GenerationTrace) when tracing.
    """
    d = model.d
    plan = noise_plan
    x = plan.x_T.copy() if plan is not None else rng.standard_normal((n, d))
    tr = GenerationTrace(sampler="langevin" if cfg.K > 0 else "normal_approx",
                         steps_per_level=max(cfg.K, 1))
    if trace:
        tr.snapshots.append(x.copy())
    for t in range(schedule.T - 1, -1, -1):
        blocks = plan.eps[schedule.T - 1 - t] if plan is not None else None
        if cfg.K == 0:
            eps = blocks[0] if blocks is not None else None
            y = normal_approx_sample_batch(model, x, t, schedule, rng, eps=eps)
        else:
            bound = model.bind_level(t, n)
            y = x
            for tau in range(cfg.K):
                eps = blocks[tau] if blocks is not None else None
                y = langevin_step_batch(bound, y, x, t, schedule, cfg, rng, eps=eps)
        x = y / schedule.alpha[t]
        if trace:
            tr.snapshots.append(x.copy())
    return (x, tr) if trace else x


def short_run_marginal_sample(model, schedule: NoiseSchedule, cfg: SamplerConfig, n: int,
                              rng, n_steps: int | None = None):
    """Noise-initialized Langevin on the bare level-0 energy (the T = 1
    marginal baseline's generator), rescaled back to data coordinates."""
    steps = cfg.K if n_steps is None else int(n_steps)
    delta = cfg.b * float(cfg.c_at(0)[0]) * float(np.sqrt(schedule.sigma2[0]))
    y = rng.standard_normal((n, model.d))
    bound = model.bind_level(0, n)
    for _ in range(steps):
        y = marginal_langevin_step_batch(bound, y, 0, delta, rng)
    return y / schedule.alpha[0]


def inpaint_batch(model, schedule: NoiseSchedule, cfg: SamplerConfig, x_obs, mask, n: int, rng):
    """Complete the free coordinates of x_obs, n independent times.

    mask[i] = True marks coordinate i as observed.  At each level the observed
    coordinates are re-pinned to an independently refreshed forward diffusion
    of x_obs; free coordinates evolve by Langevin.  At t = 0 the observed
    coordinates equal x_obs exactly.
    """
    x_obs = np.asarray(x_obs, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x_obs.shape:
        raise MaskError(f"mask shape {mask.shape} does not match x_obs {x_obs.shape}")
    if mask.all() or not mask.any():
        raise MaskError("mask must leave at least one coordinate free and one fixed")
    d = model.d
    x = rng.standard_normal((n, d))
    for t in range(schedule.T - 1, -1, -1):
        cum = schedule.cum_signal[t]
        x_t_obs = cum * x_obs + np.sqrt(1.0 - cum * cum) * rng.standard_normal((n, d))
        y_obs = schedule.alpha[t] * x_t_obs
        bound = model.bind_level(t, n)
        y = x.copy()
        y[:, mask] = y_obs[:, mask]
        for _ in range(max(cfg.K, 1)):
            y = langevin_step_batch(bound, y, x, t, schedule, cfg, rng)
            y[:, mask] = y_obs[:, mask]
        x = y / schedule.alpha[t]
    x[:, mask] = x_obs[mask]
    return x


def inpaint(model, schedule, cfg, x_obs, mask, rng) -> np.ndarray:
    return inpaint_batch(model, schedule, cfg, x_obs, mask, 1, rng)[0]


def interpolate(model, schedule: NoiseSchedule, cfg: SamplerConfig, seed_a: int, seed_b: int,
                n_points: int):
    """Deterministic path between the generations of two seeds.

    All noise tensors of both runs are pre-drawn and spherically interpolated
    per mixing weight; endpoints reproduce progressive_sample(seed) bit-exactly.
    """
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    steps = max(cfg.K, 1)
    plan_a = draw_noise_plan(schedule, steps, 1, model.d, np.random.default_rng(seed_a))
    plan_b = draw_noise_plan(schedule, steps, 1, model.d, np.random.default_rng(seed_b))
    out = np.empty((n_points, model.d))
    for i, lam in enumerate(np.linspace(0.0, 1.0, n_points)):
        plan = slerp_plans(plan_a, plan_b, float(lam))
        out[i] = progressive_sample(model, schedule, cfg, 1, rng=None, noise_plan=plan)[0]
    return out


@dataclass
class LongRunDiagnostics:
    steps_per_level: int
    sampler: str
    acceptance: np.ndarray  # (T,) mean acceptance; NaN where no MH steps ran
    warnings: list = field(default_factory=list)  # (level, acceptance) below 0.1


class _RowTarget:
    """Single-chain view of a batched conditional target (fixed row i)."""

    def __init__(self, target: ConditionalTarget, i: int):
        self.target = target
        self.i = i

    def logp(self, Y):
        t = self.target
        quad = ((t.x_next[self.i] - Y) ** 2).sum(axis=1) / (2.0 * t.sigma2[self.i])
        return t.model.energy_batch(Y, int(t.t[self.i])) - quad

    def score(self, Y):
        t = self.target
        return t.model.score_batch(Y, int(t.t[self.i])) + (t.x_next[self.i] - Y) / t.sigma2[self.i]


def long_run_chain(model, schedule: NoiseSchedule, step_sizes, sampler: str,
                   steps_per_level: int, n: int, rng, hmc_leapfrog: int = 2,
                   max_tree_depth: int = 10):
    """Progressive sampling with exact per-level chains.

    Each level takes one normal-approximation draw (counted as the first
    sampling step) followed by steps_per_level - 1 HMC or NUTS transitions at
    the adapted step size.  Acceptance below 0.1 at a level is recorded as a
    warning; the run continues.
    """
    if sampler not in ("hmc", "nuts"):
        raise ValueError(f"sampler must be 'hmc' or 'nuts', got {sampler!r}")
    step_sizes = np.asarray(step_sizes, dtype=np.float64)
    if step_sizes.shape != (schedule.T,):
        raise ValueError(f"need one step size per level, got shape {step_sizes.shape}")
    d = model.d
    x = rng.standard_normal((n, d))
    acc = np.full(schedule.T, np.nan)
    diag = LongRunDiagnostics(steps_per_level=steps_per_level, sampler=sampler, acceptance=acc)
    for t in range(schedule.T - 1, -1, -1):
        y = normal_approx_sample_batch(model, x, t, schedule, rng)
        n_mh = steps_per_level - 1
        if n_mh > 0:
            target = ConditionalTarget(model, x, t, schedule)
            if sampler == "hmc":
                total = 0.0
                for _ in range(n_mh):
                    y, accepted = hmc_transition_batch(target, y, step_sizes[t], hmc_leapfrog, rng)
                    total += accepted.mean()
                acc[t] = total / n_mh
            else:
                moved = 0
                kernel = NutsSampler(_RowTarget(target, 0), step_sizes[t], d,
                                     max_depth=max_tree_depth, check_proper=False)
                for i in range(n):
                    kernel.target = _RowTarget(target, i)
                    yi = y[i]
                    for _ in range(n_mh):
                        yi, info = kernel.step(yi, rng)
                        moved += info["moved"]
                    y[i] = yi
                acc[t] = moved / (n * n_mh)
            if acc[t] < 0.1:
                diag.warnings.append((t, float(acc[t])))
        x = y / schedule.alpha[t]
    return x, diag
