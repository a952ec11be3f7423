"""Forward Gaussian diffusion: noise schedule and training-pair generation.

Index convention: arrays are 0-based over levels t = 0..T-1.  ``sigma2[t]``
is the variance of the noise injected between level t and level t+1, i.e.
x_{t+1} = alpha[t] * x_t + sqrt(sigma2[t]) * eps.  The conditional model at
level t therefore uses sigma2[t] everywhere (coupling term, step sizes,
normal approximation).  ``cum_signal`` has length T+1 with cum_signal[0] = 1;
cum_signal[t] is the surviving signal amplitude of x_t given x_0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseSchedule",
    "DiffusionPair",
    "Standardization",
    "ScheduleError",
    "make_schedule",
    "forward_step",
    "diffuse_to_level",
    "diffuse_sequential",
    "sample_training_pair",
    "sample_training_batch",
    "derive_rng",
]

# Desk-scale default: few levels, aggressive noise so x_T is close to white
# noise (cum_signal[T] < 0.15).
DESK_T = 6
DESK_SIGMA2_MIN = 0.01
DESK_SIGMA2_MAX = 0.80

# Many-level default mirroring small-noise diffusion training.
FINE_T = 1000
FINE_SIGMA2_MIN = 1e-4
FINE_SIGMA2_MAX = 0.02


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    sigma2: np.ndarray      # (T,) noise variances, non-decreasing, in (0, 1)
    alpha: np.ndarray       # (T,) sqrt(1 - sigma2)
    cum_signal: np.ndarray  # (T+1,) prefix products of alpha, [0] = 1

    def __post_init__(self):
        if self.T < 1:
            raise ScheduleError(f"T must be >= 1, got {self.T}")
        s2 = np.asarray(self.sigma2, dtype=np.float64)
        if s2.shape != (self.T,):
            raise ScheduleError(f"sigma2 must have shape ({self.T},), got {s2.shape}")
        if not ((s2 > 0).all() and (s2 < 1).all()):
            raise ScheduleError("sigma2 values must lie strictly in (0, 1)")
        if (np.diff(s2) < -1e-15).any():
            raise ScheduleError("sigma2 must be non-decreasing in t")
        if not np.allclose(self.alpha**2 + s2, 1.0, atol=1e-12):
            raise ScheduleError("alpha**2 + sigma2 must equal 1 (spherical property)")

    def check_level(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.T:
            raise ScheduleError(f"level {t} out of range [0, {self.T - 1}]")
        return t


def make_schedule(T: int, sigma2_min: float, sigma2_max: float) -> NoiseSchedule:
    """Linearly spaced noise variances from sigma2_min to sigma2_max inclusive."""
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not (0.0 < sigma2_min <= sigma2_max < 1.0):
        raise ScheduleError(
            f"need 0 < sigma2_min <= sigma2_max < 1, got ({sigma2_min}, {sigma2_max})"
        )
    sigma2 = np.linspace(sigma2_min, sigma2_max, T)
    alpha = np.sqrt(1.0 - sigma2)
    cum_signal = np.concatenate([[1.0], np.cumprod(alpha)])
    return NoiseSchedule(T=T, sigma2=sigma2, alpha=alpha, cum_signal=cum_signal)


@dataclass(frozen=True)
class DiffusionPair:
    """One training draw: level, scaled clean state, its noisy successor."""

    t: int
    y_t: np.ndarray
    x_next: np.ndarray
    x0: np.ndarray


@dataclass(frozen=True)
class Standardization:
    """Affine map applied to data before diffusion: z = (x - mean) / scale."""

    mean: np.ndarray
    scale: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale + self.mean

    def log_jacobian(self) -> float:
        """log |d z / d x| = -sum(log scale)."""
        return float(-np.log(self.scale).sum())

    @staticmethod
    def identity(d: int) -> "Standardization":
        return Standardization(mean=np.zeros(d), scale=np.ones(d))


def derive_rng(base_seed: int, *stream_ids: int) -> np.random.Generator:
    """Independent stream derived by hashing (base_seed, ids...)."""
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), *map(int, stream_ids)]))


def forward_step(x_t: np.ndarray, t: int, schedule: NoiseSchedule, rng) -> tuple:
    """One forward-diffusion move: returns (y_t, x_next)."""
    t = schedule.check_level(t)
    y_t = schedule.alpha[t] * x_t
    eps = rng.standard_normal(np.shape(x_t))
    x_next = y_t + np.sqrt(schedule.sigma2[t]) * eps
    return y_t, x_next

def diffuse_to_level(x0: np.ndarray, t: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    """Direct draw of x_t | x_0 from the closed-form marginal."""
    if not 0 <= int(t) <= schedule.T:
        raise ScheduleError(f"marginal level {t} out of range [0, {schedule.T}]")
    c = schedule.cum_signal[int(t)]
    return c * x0 + np.sqrt(1.0 - c * c) * rng.standard_normal(np.shape(x0))


def diffuse_sequential(x0: np.ndarray, t: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    """x_t reached by composing single forward steps (O(t); kept to test
    equivalence with the direct marginal)."""
    x = np.asarray(x0, dtype=np.float64)
    for s in range(int(t)):
        _, x = forward_step(x, s, schedule, rng)
    return x


def sample_training_pair(dataset, schedule: NoiseSchedule, rng) -> DiffusionPair:
    """Draw one (y_t, x_{t+1}, t) triple: uniform level, fresh data sample."""
    t, y, x_next, x0 = sample_training_batch(dataset, schedule, 1, rng)
    return DiffusionPair(t=int(t[0]), y_t=y[0], x_next=x_next[0], x0=x0[0])


def sample_training_batch(dataset, schedule: NoiseSchedule, n: int, rng):
    """Vectorized training pairs with independent per-element levels.

    Returns (t (n,), y_t (n,d), x_next (n,d), x0 (n,d)). ``dataset`` is either
    an (m,d) array of standardized points or an object with sample(n, rng).
    """
    if hasattr(dataset, "sample_standardized"):
        x0 = dataset.sample_standardized(n, rng)
    elif hasattr(dataset, "sample"):
        x0 = np.asarray(dataset.sample(n, rng), dtype=np.float64)
    else:
        bank = np.asarray(dataset, dtype=np.float64)
        if bank.ndim != 2 or bank.shape[0] == 0:
            raise ScheduleError("dataset must be a non-empty (n, d) array")
        x0 = bank[rng.integers(0, bank.shape[0], size=n)]
    if x0.shape[0] == 0:
        raise ScheduleError("empty dataset")
    t = rng.integers(0, schedule.T, size=n)
    c = schedule.cum_signal[t]
    x_t = c[:, None] * x0 + np.sqrt(1.0 - c * c)[:, None] * rng.standard_normal(x0.shape)
    y = schedule.alpha[t][:, None] * x_t
    x_next = y + np.sqrt(schedule.sigma2[t])[:, None] * rng.standard_normal(x0.shape)
    return t, y, x_next, x0
