"""Time-conditioned scalar energy networks and analytic energy backends.

The trainable backend is an MLP f(x, t): d -> width -> (n_hidden x width) -> 1
with leaky-ReLU activations and a sinusoidal time embedding passed through two
dense layers and added after the first hidden layer.  Analytic backends
(quadratic, Gaussian mixture, diffused Gaussian family, linear) satisfy the
same energy/score interface and give exact oracles for samplers and partition
estimates.

All backends evaluate batches: X is (n, d), t is a level index or an (n,)
array of per-row levels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .schedule import NoiseSchedule, Standardization

__all__ = [
    "EnergyParams",
    "EnergyModel",
    "MlpEnergy",
    "QuadraticEnergy",
    "MixtureEnergy",
    "ScaleFamilyEnergy",
    "DiffusedGaussianFamily",
    "LinearEnergy",
    "LevelError",
    "CheckpointError",
    "BadMagicError",
    "BadVersionError",
    "TruncatedCheckpointError",
    "CheckpointShapeError",
    "sinusoidal_embedding",
    "init_energy_params",
    "unit_quadratic",
    "save_checkpoint",
    "load_checkpoint",
]


class LevelError(ValueError):
    def __init__(self, t, n_levels):
        super().__init__(f"time level {t} outside [0, {n_levels - 1}]")


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """Transformer-style position embedding of integer levels.

    Pairs share a frequency: out[..., 2i] = sin(t / 10000^(2i/dim)) and
    out[..., 2i+1] = cos of the same argument.  ``t`` may be a scalar or an
    (n,) array; the result is (dim,) or (n, dim).
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    tarr = np.asarray(t, dtype=np.float64)
    i = np.arange(dim // 2, dtype=np.float64)
    freq = np.power(10000.0, -2.0 * i / dim)
    angles = tarr[..., None] * freq
    out = np.empty(tarr.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


@dataclass
class EnergyParams:
    """All trainable arrays of the MLP backend.

    ``layers`` runs input -> hidden... -> output with weights stored (fan_in,
    fan_out); ``temb_layers`` holds the two dense layers applied to the
    sinusoidal embedding.  n_hidden counts the width -> width layers after the
    first projection.
    """

    layers: list  # [(name, W, b)]
    temb_layers: list  # [(name, W, b)] exactly two
    d: int
    hidden_width: int
    n_hidden: int
    temb_dim: int

    def __post_init__(self):
        if self.layers[0][1].shape[0] != self.d:
            raise ValueError("first layer input width must equal d")
        if self.layers[-1][1].shape[1] != 1:
            raise ValueError("last layer output width must be 1")
        if len(self.temb_layers) != 2:
            raise ValueError("exactly two time-embedding layers expected")
        if self.temb_layers[-1][1].shape[1] != self.hidden_width:
            raise ValueError("time embedding output width must equal hidden_width")
        for name, w, b in self.layers + self.temb_layers:
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"non-finite parameter tensor {name}")

    def items(self):
        """Deterministic (name, array) order used by Adam and checkpoints."""
        out = []
        for name, w, b in self.layers:
            out.append((f"{name}.w", w))
            out.append((f"{name}.b", b))
        for name, w, b in self.temb_layers:
            out.append((f"{name}.w", w))
            out.append((f"{name}.b", b))
        return out

    def copy(self) -> "EnergyParams":
        return EnergyParams(
            layers=[(n, w.copy(), b.copy()) for n, w, b in self.layers],
            temb_layers=[(n, w.copy(), b.copy()) for n, w, b in self.temb_layers],
            d=self.d,
            hidden_width=self.hidden_width,
            n_hidden=self.n_hidden,
            temb_dim=self.temb_dim,
        )


def init_energy_params(
    d: int,
    hidden_width: int = 64,
    n_hidden: int = 2,
    temb_dim: int = 32,
    rng=None,
) -> EnergyParams:
    """He-style init for leaky-ReLU layers; the output layer starts at zero so
    the initial energy surface is identically flat."""
    rng = rng if rng is not None else np.random.default_rng(0)

    def dense(fan_in, fan_out):
        w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        return w, np.zeros(fan_out)

    layers = [("mlp.in", *dense(d, hidden_width))]
    for i in range(n_hidden):
        layers.append((f"mlp.h{i}", *dense(hidden_width, hidden_width)))
    layers.append(("mlp.out", np.zeros((hidden_width, 1)), np.zeros(1)))
    temb_layers = [
        ("temb.0", *dense(temb_dim, hidden_width)),
        ("temb.1", *dense(hidden_width, hidden_width)),
    ]
    return EnergyParams(
        layers=layers,
        temb_layers=temb_layers,
        d=d,
        hidden_width=hidden_width,
        n_hidden=n_hidden,
        temb_dim=temb_dim,
    )


class EnergyModel:
    """Common surface: batched energy/score plus single-point conveniences."""

    d: int
    n_levels = None  # None accepts any level index

    def _check_levels(self, t):
        tarr = np.atleast_1d(np.asarray(t, dtype=np.int64))
        if self.n_levels is not None and ((tarr < 0).any() or (tarr >= self.n_levels).any()):
            raise LevelError(int(tarr.min()) if (tarr < 0).any() else int(tarr.max()), self.n_levels)
        return tarr

    def energy_batch(self, X: np.ndarray, t) -> np.ndarray:
        raise NotImplementedError

    def score_batch(self, X: np.ndarray, t) -> np.ndarray:
        raise NotImplementedError

    def energy(self, x: np.ndarray, t) -> float:
        return float(self.energy_batch(np.asarray(x, dtype=np.float64)[None, :], t)[0])

    def score(self, x: np.ndarray, t) -> np.ndarray:
        return self.score_batch(np.asarray(x, dtype=np.float64)[None, :], t)[0]

    def bind_level(self, t, n: int) -> "EnergyModel":
        """A read-only view usable while iterating at a fixed level vector.

        Backends with per-level precomputation (the MLP's time-embedding
        path) override this; parameters must not change while the view is
        in use.
        """
        return self


class _TapeModel(EnergyModel):
    """Backend whose energy is built from autodiff primitives."""

    def param_items(self):
        raise NotImplementedError

    def build_energy(self, X: ad.Tensor, t, leaves=None) -> ad.Tensor:
        """Return the (n, 1) energy tensor; ``leaves`` overrides parameter
        tensors (used to differentiate w.r.t. parameters)."""
        raise NotImplementedError

    def energy_batch(self, X, t):
        X = np.ascontiguousarray(X, dtype=np.float64)
        e = self.build_energy(ad.constant(X), t)
        return e.data[:, 0].copy()

    def score_batch(self, X, t):
        X = np.ascontiguousarray(X, dtype=np.float64)
        xt = ad.Tensor(X, requires_grad=True)
        with ad.Tape() as tape:
            total = ad.sum_reduce(self.build_energy(xt, t))
        return tape.grad(total, xt).data

    def param_grad_batch(self, X, t, weights=None) -> dict:
        """Gradient of sum_i w_i f(x_i, t_i) w.r.t. every parameter."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        leaves = {name: ad.Tensor(arr, requires_grad=True) for name, arr in self.param_items()}
        with ad.Tape() as tape:
            e = self.build_energy(ad.constant(X), t, leaves=leaves)
            if weights is not None:
                e = ad.mul(e, ad.constant(np.asarray(weights, dtype=np.float64)[:, None]))
            total = ad.sum_reduce(e)
        grads = tape.gradients(total, list(leaves.values()))
        return {name: g.data for name, g in zip(leaves, grads)}


class MlpEnergy(_TapeModel):
    def __init__(self, params: EnergyParams, n_levels: int):
        self.params = params
        self.d = params.d
        self.n_levels = int(n_levels)

    def param_items(self):
        return self.params.items()

    def _tensors(self, leaves):
        if leaves is None:
            return {name: ad.constant(arr) for name, arr in self.params.items()}
        return leaves

    def _level_vector(self, t, n):
        tarr = self._check_levels(t)
        if tarr.shape == (1,) and n != 1:
            tarr = np.full(n, tarr[0])
        if tarr.shape != (n,):
            raise ValueError(f"level vector shape {tarr.shape} does not match batch {n}")
        return tarr

    def temb_forward(self, tarr) -> np.ndarray:
        """Time-embedding path with parameters as plain constants."""
        p = dict(self.params.items())
        emb = sinusoidal_embedding(np.asarray(tarr, dtype=np.float64), self.params.temb_dim)
        h = emb @ p["temb.0.w"] + p["temb.0.b"]
        h = np.maximum(h, 0.2 * h)
        return h @ p["temb.1.w"] + p["temb.1.b"]

    def bind_level(self, t, n: int) -> "_BoundMlp":
        return _BoundMlp(self, self._level_vector(t, n))

    def build_energy(self, X: ad.Tensor, t, leaves=None, temb_out=None) -> ad.Tensor:
        """(n, 1) energies; ``temb_out`` short-circuits the embedding path
        with a precomputed constant (sampling only: it carries no parameter
        gradients)."""
        n = X.data.shape[0]
        p = self._tensors(leaves)
        pm = self.params
        if temb_out is not None:
            e = ad.constant(temb_out)
        else:
            tarr = self._level_vector(t, n)
            emb = ad.constant(sinusoidal_embedding(tarr, pm.temb_dim))
            e = ad.leaky_relu(ad.add_bias(ad.matmul(emb, p["temb.0.w"]), p["temb.0.b"]))
            e = ad.add_bias(ad.matmul(e, p["temb.1.w"]), p["temb.1.b"])
        h = ad.leaky_relu(ad.add_bias(ad.matmul(X, p["mlp.in.w"]), p["mlp.in.b"]))
        h = ad.add(h, e)
        for i in range(pm.n_hidden):
            h = ad.leaky_relu(ad.add_bias(ad.matmul(h, p[f"mlp.h{i}.w"]), p[f"mlp.h{i}.b"]))
        return ad.add_bias(ad.matmul(h, p["mlp.out.w"]), p["mlp.out.b"])


class _BoundMlp(_TapeModel):
    """Fixed-level MLP view reusing the time-embedding output across calls."""

    def __init__(self, base: MlpEnergy, tarr):
        self.base = base
        self.d = base.d
        self.n_levels = base.n_levels
        self.tarr = tarr
        self.temb_out = base.temb_forward(tarr)

    def build_energy(self, X: ad.Tensor, t=None, leaves=None) -> ad.Tensor:
        if X.data.shape[0] != self.temb_out.shape[0]:
            raise ValueError(
                f"bound level holds {self.temb_out.shape[0]} rows, got {X.data.shape[0]}"
            )
        return self.base.build_energy(X, self.tarr, leaves=leaves, temb_out=self.temb_out)


class LinearEnergy(_TapeModel):
    """f(x, t) = theta . x, the simplest trainable family (d-dimensional)."""

    def __init__(self, theta):
        self.theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        self.d = self.theta.shape[0]

    def param_items(self):
        return [("theta", self.theta)]

    def build_energy(self, X: ad.Tensor, t, leaves=None) -> ad.Tensor:
        th = leaves["theta"] if leaves is not None else ad.constant(self.theta)
        col = ad.transpose(ad.tile_rows(th, 1))  # (d, 1)
        return ad.matmul(X, col)

    def score_batch(self, X, t):
        return np.tile(self.theta, (np.shape(X)[0], 1))


class QuadraticEnergy(EnergyModel):
    """f(x, t) = -0.5 (x - mu)^T Lam (x - mu); ignores t.

    The conditional given a Gaussian coupling is itself Gaussian, so this
    backend serves as the exact oracle for every sampler.
    """

    def __init__(self, mu, lam):
        self.mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        self.d = self.mu.shape[0]
        lam = np.asarray(lam, dtype=np.float64)
        if lam.ndim == 0:
            lam = np.eye(self.d) * float(lam)
        self.lam = lam

    def energy_batch(self, X, t):
        diff = np.asarray(X, dtype=np.float64) - self.mu
        return -0.5 * np.einsum("ni,ij,nj->n", diff, self.lam, diff)

    def score_batch(self, X, t):
        return -(np.asarray(X, dtype=np.float64) - self.mu) @ self.lam

    def log_z(self) -> float:
        """log of integral exp(f): Gaussian normalizer for precision Lam."""
        sign, logdet = np.linalg.slogdet(self.lam)
        if sign <= 0:
            raise ValueError("precision matrix must be positive definite")
        return 0.5 * self.d * np.log(2.0 * np.pi) - 0.5 * logdet

    def conditional_moments(self, x_next, sigma2: float):
        """Exact mean and covariance of p(y | x_next) with coupling variance
        sigma2: precision Lam + I/sigma2."""
        prec = self.lam + np.eye(self.d) / sigma2
        cov = np.linalg.inv(prec)
        rhs = self.lam @ self.mu + np.asarray(x_next, dtype=np.float64) / sigma2
        return rhs @ cov.T, cov


def unit_quadratic(d: int = 2) -> QuadraticEnergy:
    return QuadraticEnergy(np.zeros(d), np.eye(d))


class MixtureEnergy(EnergyModel):
    """Normalized isotropic Gaussian-mixture log-density as the energy.

    exp(f) integrates to one, so log Z = 0; handy for density and BPD oracles.
    """

    def __init__(self, weights, means, variances):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.variances = np.asarray(variances, dtype=np.float64)
        if not np.isclose(self.weights.sum(), 1.0):
            raise ValueError("mixture weights must sum to 1")
        self.d = self.means.shape[1]

    def _log_components(self, X):
        X = np.asarray(X, dtype=np.float64)
        sq = ((X[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=2)
        return (
            np.log(self.weights)[None, :]
            - 0.5 * sq / self.variances[None, :]
            - 0.5 * self.d * np.log(2.0 * np.pi * self.variances)[None, :]
        )

    def energy_batch(self, X, t):
        lc = self._log_components(X)
        m = lc.max(axis=1)
        return m + np.log(np.exp(lc - m[:, None]).sum(axis=1))

    def score_batch(self, X, t):
        X = np.asarray(X, dtype=np.float64)
        lc = self._log_components(X)
        w = np.exp(lc - lc.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        comp_scores = -(X[:, None, :] - self.means[None, :, :]) / self.variances[None, :, None]
        return (w[:, :, None] * comp_scores).sum(axis=1)


class ScaleFamilyEnergy(EnergyModel):
    """f(y, t) = -||y||^2 / (2 s_t^2): per-level isotropic Gaussian energies
    with known partition functions, for partition-estimator oracles."""

    def __init__(self, scales, d: int = 2):
        self.scales = np.asarray(scales, dtype=np.float64)
        self.d = d
        self.n_levels = self.scales.shape[0]

    def _s2(self, t):
        tarr = self._check_levels(t)
        return self.scales[tarr] ** 2

    def energy_batch(self, X, t):
        X = np.asarray(X, dtype=np.float64)
        s2 = self._s2(t)
        return -0.5 * (X**2).sum(axis=1) / s2

    def score_batch(self, X, t):
        X = np.asarray(X, dtype=np.float64)
        s2 = self._s2(t)
        return -X / s2[:, None] if s2.shape != () else -X / s2

    def log_z(self, t) -> float:
        s = float(self.scales[int(t)])
        return 0.5 * self.d * np.log(2.0 * np.pi) + self.d * np.log(s)


class DiffusedGaussianFamily(EnergyModel):
    """Trainable analytic family: the data model x0 ~ N(mu, diag(v)) with the
    level-t energies derived in closed form from the forward process.

    Parameters are (mu, log_v) shared across levels; the per-level mean and
    variance follow the signal/noise bookkeeping of the schedule, so the true
    data parameters are a stationary point of recovery training at every
    level simultaneously.
    """

    def __init__(self, schedule: NoiseSchedule, mu, log_v):
        self.schedule = schedule
        self.mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        self.log_v = np.atleast_1d(np.asarray(log_v, dtype=np.float64))
        self.d = self.mu.shape[0]
        self.n_levels = schedule.T

    def param_items(self):
        return [("mu", self.mu), ("log_v", self.log_v)]

    def _level_stats(self, t):
        tarr = self._check_levels(t)
        sch = self.schedule
        cum = sch.cum_signal[tarr]
        a = sch.alpha[tarr]
        v = np.exp(self.log_v)
        s = (a * cum)[:, None]  # signal amplitude reaching y_t
        w = (a**2)[:, None] * (cum[:, None] ** 2 * v[None, :] + (1.0 - cum[:, None] ** 2))
        return s, w, v

    def energy_batch(self, X, t):
        X = np.asarray(X, dtype=np.float64)
        s, w, _ = self._level_stats(t)
        return (-0.5 * (X - s * self.mu) ** 2 / w).sum(axis=1)

    def score_batch(self, X, t):
        X = np.asarray(X, dtype=np.float64)
        s, w, _ = self._level_stats(t)
        return -(X - s * self.mu) / w

    def param_grad_batch(self, X, t, weights=None) -> dict:
        X = np.asarray(X, dtype=np.float64)
        s, w, v = self._level_stats(t)
        res = X - s * self.mu
        wts = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        g_mu = (wts[:, None] * s * res / w).sum(axis=0)
        q = s**2  # d w / d v
        g_logv = (wts[:, None] * 0.5 * res**2 * q * v[None, :] / w**2).sum(axis=0)
        return {"mu": g_mu, "log_v": g_logv}

    def conditional_moments(self, x_next, t: int):
        """Exact Gaussian conditional at level t given x_next (per-coordinate)."""
        s, w, _ = self._level_stats(int(t))
        sigma2 = self.schedule.sigma2[int(t)]
        prec = 1.0 / w[0] + 1.0 / sigma2
        mean = (s[0] * self.mu / w[0] + np.asarray(x_next, dtype=np.float64) / sigma2) / prec
        return mean, 1.0 / prec

    def sample_conditional(self, X_next, t, rng):
        """Exact conditional draws, vectorized over rows of X_next."""
        X_next = np.asarray(X_next, dtype=np.float64)
        s, w, _ = self._level_stats(t)
        tarr = self._check_levels(t)
        if tarr.shape == (1,) and X_next.shape[0] != 1:
            tarr = np.full(X_next.shape[0], tarr[0])
        sigma2 = self.schedule.sigma2[tarr][:, None]
        prec = 1.0 / w + 1.0 / sigma2
        mean = (s * self.mu / w + X_next / sigma2) / prec
        return mean + rng.standard_normal(X_next.shape) / np.sqrt(prec)


# ---------------------------------------------------------------------------
# Checkpoints: magic "DRLEBM\0", u32 version, schedule block, named parameter
# blocks (little-endian f64 payloads), read until EOF.
# ---------------------------------------------------------------------------

MAGIC = b"DRLEBM\x00"
VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class BadVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def _write_block(fh, name: str, arr: np.ndarray):
    nb = name.encode("utf-8")
    fh.write(struct.pack("<I", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(params: EnergyParams, schedule: NoiseSchedule, path, standardization=None):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", schedule.T))
        fh.write(np.ascontiguousarray(schedule.sigma2, dtype="<f8").tobytes())
        for name, arr in params.items():
            _write_block(fh, name, arr)
        if standardization is not None:
            _write_block(fh, "std.mean", standardization.mean)
            _write_block(fh, "std.scale", standardization.scale)


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedCheckpointError(f"expected {n} bytes, got {len(buf)}")
    return buf


def load_checkpoint(path):
    """Returns (EnergyParams, NoiseSchedule, Standardization or None)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        version = struct.unpack("<I", _read_exact(fh, 4))[0]
        if version != VERSION:
            raise BadVersionError(f"unsupported checkpoint version {version}")
        T = struct.unpack("<I", _read_exact(fh, 4))[0]
        sigma2 = np.frombuffer(_read_exact(fh, 8 * T), dtype="<f8").astype(np.float64)
        blocks = {}
        order = []
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise TruncatedCheckpointError("partial block header")
            name = _read_exact(fh, struct.unpack("<I", head)[0]).decode("utf-8")
            rank = struct.unpack("<I", _read_exact(fh, 4))[0]
            dims = [struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(rank)]
            count = int(np.prod(dims)) if dims else 1
            payload = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
            blocks[name] = payload.reshape(dims).astype(np.float64)
            order.append(name)

    schedule = NoiseSchedule(
        T=T,
        sigma2=sigma2,
        alpha=np.sqrt(1.0 - sigma2),
        cum_signal=np.concatenate([[1.0], np.cumprod(np.sqrt(1.0 - sigma2))]),
    )
    standardization = None
    if "std.mean" in blocks:
        standardization = Standardization(mean=blocks.pop("std.mean"), scale=blocks.pop("std.scale"))

    def take(name, rank):
        if name not in blocks:
            raise CheckpointShapeError(f"missing parameter block {name}")
        arr = blocks.pop(name)
        if arr.ndim != rank:
            raise CheckpointShapeError(f"{name}: expected rank {rank}, got {arr.ndim}")
        return arr

    w_in = take("mlp.in.w", 2)
    d, width = w_in.shape
    layers = [("mlp.in", w_in, take("mlp.in.b", 1))]
    n_hidden = 0
    while f"mlp.h{n_hidden}.w" in blocks:
        w = take(f"mlp.h{n_hidden}.w", 2)
        if w.shape != (width, width):
            raise CheckpointShapeError(f"mlp.h{n_hidden}.w: expected {(width, width)}, got {w.shape}")
        layers.append((f"mlp.h{n_hidden}", w, take(f"mlp.h{n_hidden}.b", 1)))
        n_hidden += 1
    layers.append(("mlp.out", take("mlp.out.w", 2), take("mlp.out.b", 1)))
    temb0_w = take("temb.0.w", 2)
    temb_layers = [
        ("temb.0", temb0_w, take("temb.0.b", 1)),
        ("temb.1", take("temb.1.w", 2), take("temb.1.b", 1)),
    ]
    if blocks:
        raise CheckpointShapeError(f"unrecognized parameter blocks: {sorted(blocks)}")
    try:
        params = EnergyParams(
            layers=layers,
            temb_layers=temb_layers,
            d=d,
            hidden_width=width,
            n_hidden=n_hidden,
            temb_dim=temb0_w.shape[0],
        )
    except ValueError as exc:
        raise CheckpointShapeError(str(exc)) from exc
    return params, schedule, standardization
