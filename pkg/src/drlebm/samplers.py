"""Conditional-distribution MCMC: Langevin, one-shot normal approximation,
HMC with leapfrog, NUTS, and acceptance-targeted step-size adaptation.

Every sampler targets the level-t conditional
    log p(y | x_next) = f(y, t) - ||x_next - y||^2 / (2 sigma2[t]) + const,
whose Langevin step size is delta_t = b * c_t * sigma_t with the sigma of the
same level.  Langevin is unadjusted (used in training and generation); HMC and
NUTS are Metropolis-exact and used for long-run analysis.  Batched variants
operate on (n, d) chain blocks; the single-chain functions wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schedule import NoiseSchedule

__all__ = [
    "SamplerConfig",
    "ChainState",
    "SamplerDivergenceError",
    "StepSizeAdaptationError",
    "ImproperTargetError",
    "ConditionalTarget",
    "MarginalTarget",
    "CallableTarget",
    "conditional_neg_energy",
    "conditional_logp_batch",
    "conditional_score_batch",
    "langevin_step",
    "langevin_step_batch",
    "marginal_langevin_step_batch",
    "normal_approx_sample",
    "normal_approx_sample_batch",
    "hmc_step",
    "hmc_transition_batch",
    "nuts_step",
    "NutsSampler",
    "adapt_step_size",
    "measure_hmc_acceptance",
    "AdaptResult",
]

# Chain coordinates beyond this magnitude are treated as diverged proposals
# (rejected in exact samplers, fatal in unadjusted Langevin).
_DIVERGENCE_BOUND = 1e10


class SamplerDivergenceError(RuntimeError):
    def __init__(self, msg, **diagnostics):
        super().__init__(msg + (f" [{diagnostics}]" if diagnostics else ""))
        self.diagnostics = diagnostics


class StepSizeAdaptationError(RuntimeError):
    pass


class ImproperTargetError(ValueError):
    pass


@dataclass
class SamplerConfig:
    K: int = 30
    b: float = 0.1
    c: np.ndarray | None = None  # per-level step multipliers, default all ones
    hmc_leapfrog: int = 2
    target_accept: tuple = (0.6, 0.9)
    adapt_chains: int = 1000
    adapt_steps: int = 100
    max_tree_depth: int = 10

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError(f"step-size factor b must be > 0, got {self.b}")
        if self.K < 0:
            raise ValueError(f"K must be >= 0, got {self.K}")
        lo, hi = self.target_accept
        if not (0.0 < lo < hi < 1.0):
            raise ValueError(f"target_accept must satisfy 0 < low < high < 1, got {self.target_accept}")
        if self.c is not None:
            self.c = np.asarray(self.c, dtype=np.float64)
            if (self.c <= 0).any():
                raise ValueError("per-level multipliers c_t must be > 0")

    def c_at(self, t) -> np.ndarray:
        if self.c is None:
            return np.ones(np.shape(np.atleast_1d(t)))
        return self.c[np.atleast_1d(t)]


@dataclass
class ChainState:
    y: np.ndarray
    t: int
    n_steps_taken: int = 0
    last_accept: float = float("nan")


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------


class ConditionalTarget:
    """Level-t conditional given a fixed batch of conditioning points.

    The energy backend is bound to the level vector once, so repeated
    transitions reuse any per-level precomputation.
    """

    def __init__(self, model, x_next: np.ndarray, t, schedule: NoiseSchedule):
        self.model = model
        self.x_next = np.atleast_2d(np.asarray(x_next, dtype=np.float64))
        tarr = np.atleast_1d(np.asarray(t, dtype=np.int64))
        for ti in np.unique(tarr):
            schedule.check_level(ti)
        if tarr.shape == (1,) and self.x_next.shape[0] != 1:
            tarr = np.full(self.x_next.shape[0], tarr[0])
        self.t = tarr
        self.sigma2 = schedule.sigma2[tarr]
        self._bound = model.bind_level(tarr, self.x_next.shape[0])

    def logp(self, Y: np.ndarray) -> np.ndarray:
        quad = ((self.x_next - Y) ** 2).sum(axis=1) / (2.0 * self.sigma2)
        return self._bound.energy_batch(Y, self.t) - quad

    def score(self, Y: np.ndarray) -> np.ndarray:
        return self._bound.score_batch(Y, self.t) + (self.x_next - Y) / self.sigma2[:, None]


class MarginalTarget:
    """Unconditioned level-t energy (the T=1 marginal-likelihood baseline)."""

    def __init__(self, model, t: int):
        self.model = model
        self.t = int(t)

    def logp(self, Y):
        return self.model.energy_batch(Y, self.t)

    def score(self, Y):
        return self.model.score_batch(Y, self.t)


class CallableTarget:
    """Adapter for plain (logp, score) functions over (n, d) batches."""

    def __init__(self, logp, score):
        self._logp = logp
        self._score = score

    def logp(self, Y):
        return self._logp(Y)

    def score(self, Y):
        return self._score(Y)


def conditional_neg_energy(model, y, x_next, t: int, schedule: NoiseSchedule) -> float:
    """f(y, t) - ||x_next - y||^2 / (2 sigma2[t]) for a single point."""
    y = np.asarray(y, dtype=np.float64)
    out = ConditionalTarget(model, np.asarray(x_next)[None, :], t, schedule).logp(y[None, :])[0]
    if not np.isfinite(out):
        raise SamplerDivergenceError("non-finite conditional energy", t=t)
    return float(out)


def conditional_logp_batch(model, Y, X_next, t, schedule) -> np.ndarray:
    return ConditionalTarget(model, X_next, t, schedule).logp(np.asarray(Y, dtype=np.float64))


def conditional_score_batch(model, Y, X_next, t, schedule) -> np.ndarray:
    return ConditionalTarget(model, X_next, t, schedule).score(np.asarray(Y, dtype=np.float64))


# ---------------------------------------------------------------------------
# Langevin
# ---------------------------------------------------------------------------


def langevin_step_batch(model, Y, X_next, t, schedule, cfg: SamplerConfig, rng, eps=None):
    """One unadjusted Langevin update of every chain; per-row levels allowed."""
    Y = np.asarray(Y, dtype=np.float64)
    tarr = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if tarr.shape == (1,) and Y.shape[0] != 1:
        tarr = np.full(Y.shape[0], tarr[0])
    sigma2 = schedule.sigma2[tarr]
    delta = cfg.b * cfg.c_at(tarr) * np.sqrt(sigma2)
    grad_f = model.score_batch(Y, tarr)
    drift = grad_f + (np.asarray(X_next) - Y) / sigma2[:, None]
    noise = rng.standard_normal(Y.shape) if eps is None else eps
    Y_new = Y + 0.5 * delta[:, None] ** 2 * drift + delta[:, None] * noise
    bad = ~np.isfinite(Y_new).all(axis=1) | (np.abs(Y_new) > _DIVERGENCE_BOUND).any(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SamplerDivergenceError(
            "Langevin chain diverged",
            chain=i,
            level=int(tarr[i]),
            grad_norm=float(np.linalg.norm(grad_f[i])),
            delta=float(delta[i]),
        )
    return Y_new


def langevin_step(model, state: ChainState, x_next, schedule, cfg: SamplerConfig, rng) -> ChainState:
    y_new = langevin_step_batch(
        model, state.y[None, :], np.asarray(x_next)[None, :], state.t, schedule, cfg, rng
    )[0]
    return ChainState(y=y_new, t=state.t, n_steps_taken=state.n_steps_taken + 1)


def marginal_langevin_step_batch(model, Y, t: int, delta: float, rng, eps=None):
    """Unadjusted Langevin on the bare level-t energy (no coupling term)."""
    Y = np.asarray(Y, dtype=np.float64)
    grad_f = model.score_batch(Y, int(t))
    noise = rng.standard_normal(Y.shape) if eps is None else eps
    Y_new = Y + 0.5 * delta**2 * grad_f + delta * noise
    bad = ~np.isfinite(Y_new).all(axis=1) | (np.abs(Y_new) > _DIVERGENCE_BOUND).any(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SamplerDivergenceError(
            "marginal Langevin chain diverged",
            chain=i,
            level=int(t),
            grad_norm=float(np.linalg.norm(grad_f[i])),
            delta=float(delta),
        )
    return Y_new


# ---------------------------------------------------------------------------
# Normal approximation (one-shot Gaussian draw around the conditioning point)
# ---------------------------------------------------------------------------


def normal_approx_sample_batch(model, X_next, t, schedule, rng, eps=None):
    """Draw from N(x_next + sigma2 * grad f(x_next, t), sigma2 I) per row."""
    X_next = np.asarray(X_next, dtype=np.float64)
    tarr = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if tarr.shape == (1,) and X_next.shape[0] != 1:
        tarr = np.full(X_next.shape[0], tarr[0])
    sigma2 = schedule.sigma2[tarr]
    mean = X_next + sigma2[:, None] * model.score_batch(X_next, tarr)
    noise = rng.standard_normal(X_next.shape) if eps is None else eps
    out = mean + np.sqrt(sigma2)[:, None] * noise
    if not np.isfinite(out).all():
        raise SamplerDivergenceError("non-finite normal-approximation draw", level=int(tarr[0]))
    return out


def normal_approx_sample(model, x_next, t: int, schedule, rng) -> np.ndarray:
    return normal_approx_sample_batch(model, np.asarray(x_next)[None, :], t, schedule, rng)[0]


# ---------------------------------------------------------------------------
# HMC
# ---------------------------------------------------------------------------


def _safe_logp(target, Y):
    """Target log-density with divergent rows mapped to -inf instead of raising."""
    bad = ~np.isfinite(Y).all(axis=1) | (np.abs(Y) > _DIVERGENCE_BOUND).any(axis=1)
    if not bad.any():
        out = target.logp(Y)
        return np.where(np.isfinite(out), out, -np.inf)
    safe = np.where(bad[:, None], 0.0, Y)
    out = np.asarray(target.logp(safe), dtype=np.float64)
    out[bad] = -np.inf
    return np.where(np.isfinite(out), out, -np.inf)


def _safe_score(target, Y):
    bad = ~np.isfinite(Y).all(axis=1) | (np.abs(Y) > _DIVERGENCE_BOUND).any(axis=1)
    if not bad.any():
        g = np.asarray(target.score(Y), dtype=np.float64)
    else:
        g = np.asarray(target.score(np.where(bad[:, None], 0.0, Y)), dtype=np.float64)
        g[bad] = 0.0
    return np.nan_to_num(g, nan=0.0, posinf=0.0, neginf=0.0), bad


def hmc_transition_batch(target, Y, step_size, n_leapfrog: int, rng, return_info: bool = False):
    """One Metropolis-adjusted leapfrog trajectory per chain.

    Unit mass matrix; momenta are resampled every call.  Non-finite
    Hamiltonians reject.  Returns (Y_new, accepted bool mask), plus an info
    dict with per-chain energy errors when return_info is set.
    """
    Y = np.asarray(Y, dtype=np.float64)
    n = Y.shape[0]
    eps = np.broadcast_to(np.asarray(step_size, dtype=np.float64), (n,))[:, None]
    P0 = rng.standard_normal(Y.shape)
    H0 = -_safe_logp(target, Y) + 0.5 * (P0**2).sum(axis=1)

    q = Y.copy()
    g, _ = _safe_score(target, q)
    p = P0 + 0.5 * eps * g
    diverged = np.zeros(n, dtype=bool)
    for step in range(n_leapfrog):
        q = q + eps * p
        g, bad = _safe_score(target, q)
        diverged |= bad
        p = p + (eps if step < n_leapfrog - 1 else 0.5 * eps) * g
    H1 = -_safe_logp(target, q) + 0.5 * (p**2).sum(axis=1)
    H1 = np.where(diverged | ~np.isfinite(H1), np.inf, H1)

    log_alpha = H0 - H1
    accept = np.log(rng.random(n)) < log_alpha
    Y_new = np.where(accept[:, None], q, Y)
    if return_info:
        return Y_new, accept, {"delta_h": H1 - H0, "diverged": diverged}
    return Y_new, accept


def hmc_step(model, state: ChainState, x_next, schedule, cfg: SamplerConfig, rng,
             step_size: float | None = None) -> ChainState:
    """Single-chain HMC transition on the level-t conditional."""
    t = schedule.check_level(state.t)
    eps = step_size if step_size is not None else cfg.b * float(cfg.c_at(t)[0]) * np.sqrt(schedule.sigma2[t])
    target = ConditionalTarget(model, np.asarray(x_next)[None, :], t, schedule)
    if eps == 0.0:
        # Degenerate proposal equals the current state and is always accepted.
        return ChainState(y=state.y.copy(), t=t, n_steps_taken=state.n_steps_taken + 1, last_accept=1.0)
    Y_new, accept = hmc_transition_batch(target, state.y[None, :], eps, cfg.hmc_leapfrog, rng)
    return ChainState(
        y=Y_new[0],
        t=t,
        n_steps_taken=state.n_steps_taken + 1,
        last_accept=1.0 if accept[0] else 0.0,
    )


# ---------------------------------------------------------------------------
# NUTS (slice-variable doubling with the U-turn rule; unit metric)
# ---------------------------------------------------------------------------

_DELTA_MAX = 1000.0


class NutsSampler:
    """No-U-Turn transitions for a fixed target and step size.

    The constructor rejects targets that look improper (identical density and
    zero gradient at a spread of probe points): a flat energy has no
    stationary distribution to sample.
    """

    def __init__(self, target, step_size: float, d: int, max_depth: int = 10, check_proper: bool = True):
        if step_size <= 0:
            raise ValueError(f"NUTS step size must be > 0, got {step_size}")
        self.target = target
        self.eps = float(step_size)
        self.d = int(d)
        self.max_depth = int(max_depth)
        if check_proper:
            probes = np.concatenate(
                [np.zeros((1, d)), np.eye(d), -3.0 * np.eye(d), 7.0 * np.ones((1, d))]
            )
            lp = _safe_logp(target, probes)
            sc, _ = _safe_score(target, probes)
            if np.allclose(lp, lp[0]) and np.allclose(sc, 0.0):
                raise ImproperTargetError(
                    "target has constant energy and zero gradient at all probes; "
                    "a flat energy is not normalizable"
                )

    def _logp(self, y):
        try:
            v = float(self.target.logp(y[None, :])[0])
        except Exception:
            return -np.inf
        return v if np.isfinite(v) else -np.inf

    def _score(self, y):
        try:
            g = self.target.score(y[None, :])[0]
        except Exception:
            return np.zeros_like(y)
        return g if np.isfinite(g).all() else np.zeros_like(y)

    def _leapfrog(self, y, p, direction):
        eps = direction * self.eps
        p1 = p + 0.5 * eps * self._score(y)
        y1 = y + eps * p1
        p2 = p1 + 0.5 * eps * self._score(y1)
        return y1, p2

    @staticmethod
    def _no_uturn(y_minus, y_plus, p_minus, p_plus) -> bool:
        dq = y_plus - y_minus
        return (dq @ p_minus) >= 0.0 and (dq @ p_plus) >= 0.0

    def _build_tree(self, y, p, log_u, direction, depth, rng):
        # Returns (y-, p-, y+, p+, y_prop, n_valid, keep_going)
        if depth == 0:
            y1, p1 = self._leapfrog(y, p, direction)
            h1 = -self._logp(y1) + 0.5 * (p1 @ p1)
            n_valid = 1 if log_u <= -h1 else 0
            keep_going = log_u < _DELTA_MAX - h1
            return y1, p1, y1, p1, y1, n_valid, keep_going
        ym, pm, yp, pp, y_prop, n1, going = self._build_tree(y, p, log_u, direction, depth - 1, rng)
        if going:
            if direction < 0:
                ym, pm, _, _, y_prop2, n2, going2 = self._build_tree(ym, pm, log_u, direction, depth - 1, rng)
            else:
                _, _, yp, pp, y_prop2, n2, going2 = self._build_tree(yp, pp, log_u, direction, depth - 1, rng)
            if n1 + n2 > 0 and rng.random() < n2 / (n1 + n2):
                y_prop = y_prop2
            n1 += n2
            going = going2 and self._no_uturn(ym, yp, pm, pp)
        return ym, pm, yp, pp, y_prop, n1, going

    def step(self, y: np.ndarray, rng):
        """One transition. Returns (y_new, info dict with depth/maxed/moved)."""
        y = np.asarray(y, dtype=np.float64)
        p0 = rng.standard_normal(self.d)
        h0 = -self._logp(y) + 0.5 * (p0 @ p0)
        log_u = -h0 + np.log(rng.random())
        ym, pm, yp, pp = y.copy(), p0.copy(), y.copy(), p0.copy()
        y_cur = y
        n = 1
        depth = 0
        going = True
        while going and depth < self.max_depth:
            direction = -1 if rng.random() < 0.5 else 1
            if direction < 0:
                ym, pm, _, _, y_prop, n2, going2 = self._build_tree(ym, pm, log_u, direction, depth, rng)
            else:
                _, _, yp, pp, y_prop, n2, going2 = self._build_tree(yp, pp, log_u, direction, depth, rng)
            if going2 and n2 > 0 and rng.random() < min(1.0, n2 / n):
                y_cur = y_prop
            n += n2
            going = going2 and self._no_uturn(ym, yp, pm, pp)
            depth += 1
        maxed = going and depth >= self.max_depth
        return y_cur, {"depth": depth, "maxed": maxed, "moved": not np.array_equal(y_cur, y)}


def nuts_step(model, state: ChainState, x_next, schedule, step_size: float, rng,
              max_depth: int = 10) -> ChainState:
    """One NUTS transition on the level-t conditional (single chain)."""
    t = schedule.check_level(state.t)
    target = ConditionalTarget(model, np.asarray(x_next)[None, :], t, schedule)
    sampler = NutsSampler(target, step_size, d=state.y.shape[0], max_depth=max_depth, check_proper=False)
    y_new, info = sampler.step(state.y, rng)
    return ChainState(
        y=y_new,
        t=t,
        n_steps_taken=state.n_steps_taken + 1,
        last_accept=1.0 if info["moved"] else 0.0,
    )


# ---------------------------------------------------------------------------
# Step-size adaptation
# ---------------------------------------------------------------------------


@dataclass
class AdaptResult:
    step_sizes: np.ndarray   # (T,)
    acceptance: np.ndarray   # (T,) measured mean acceptance at the final size
    history: list = field(default_factory=list)  # (level, eps, acc) probes


def measure_hmc_acceptance(target, Y0, eps, n_steps, n_leapfrog, rng):
    """Mean acceptance of n_steps HMC transitions started from Y0.

    Returns (mean acceptance over all chains and steps, final chain states).
    """
    Y = np.asarray(Y0, dtype=np.float64).copy()
    total = 0.0
    for _ in range(n_steps):
        Y, accept = hmc_transition_batch(target, Y, eps, n_leapfrog, rng)
        total += accept.mean()
    return total / n_steps, Y


def adapt_step_size(model, schedule: NoiseSchedule, cfg: SamplerConfig, rng,
                    max_probes: int = 30) -> AdaptResult:
    """Per-level HMC step sizes with mean acceptance inside cfg.target_accept.

    Conditioning points come from a progressive pass: chains adapted at level
    t feed level t-1.  The search brackets multiplicatively (x2 / x0.5) and
    then bisects in log space; acceptance is measured over adapt_chains
    chains run for adapt_steps transitions.
    """
    lo, hi = cfg.target_accept
    d = model.d
    n = cfg.adapt_chains
    X = rng.standard_normal((n, d))
    eps_out = np.zeros(schedule.T)
    acc_out = np.zeros(schedule.T)
    history = []
    for t in range(schedule.T - 1, -1, -1):
        target = ConditionalTarget(model, X, t, schedule)
        Y0 = X.copy()  # progressive-sampling seed; robust at every noise level
        eps = float(np.sqrt(schedule.sigma2[t]))
        eps_small = eps_big = None  # eps_small: acc > hi, eps_big: acc < lo
        accepted = None
        for _ in range(max_probes):
            acc, Y_end = measure_hmc_acceptance(target, Y0, eps, cfg.adapt_steps, cfg.hmc_leapfrog, rng)
            history.append((t, eps, acc))
            if lo <= acc <= hi:
                accepted = (eps, acc, Y_end)
                break
            if acc > hi:
                eps_small = eps
                eps = np.sqrt(eps_small * eps_big) if eps_big is not None else eps * 2.0
            else:
                eps_big = eps
                eps = np.sqrt(eps_small * eps_big) if eps_small is not None else eps * 0.5
        if accepted is None:
            raise StepSizeAdaptationError(
                f"level {t}: no step size reached acceptance in [{lo}, {hi}] "
                f"after {max_probes} probes (last acceptance {acc:.3f} at eps {eps:.3g})"
            )
        eps_out[t], acc_out[t], Y = accepted
        X = Y / schedule.alpha[t]
    return AdaptResult(step_sizes=eps_out, acceptance=acc_out, history=history)
