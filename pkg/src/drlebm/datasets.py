"""Tractable 2-D toy densities with ground truth where it exists.

Every dataset samples in its original coordinates and carries the analytic
standardization used before diffusion.  Ground-truth log-densities are
available in closed form for the Gaussian mixture and the rings, and as a
piecewise constant for the checkerboard; the spiral is sample-only.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from .schedule import Standardization, derive_rng

__all__ = [
    "ToyDataset",
    "Checkerboard",
    "GaussianMixture",
    "Rings",
    "Spiral",
    "make_dataset",
    "DATASET_KINDS",
]

DATASET_KINDS = ("checkerboard", "gaussian_mixture", "rings", "spiral")


class ToyDataset:
    kind: str
    d: int = 2
    standardization: Standardization
    support_box: np.ndarray  # (d, 2) box containing essentially all mass
    hist_box: np.ndarray     # (d, 2) box used for histogram metrics

    def sample(self, n: int, rng) -> np.ndarray:
        raise NotImplementedError

    def sample_standardized(self, n: int, rng) -> np.ndarray:
        return self.standardization.apply(self.sample(n, rng))

    def true_log_density(self, X: np.ndarray):
        """(n,) log densities in original coordinates, or None if unknown."""
        return None

    def exact_bin_masses(self, edges_x: np.ndarray, edges_y: np.ndarray):
        """Exact probability mass per histogram bin, or None if intractable."""
        return None


class Checkerboard(ToyDataset):
    """Uniform over the 8 even-parity cells of a 4x4 grid on [-2, 2]^2.

    A point in cell (i, j) with i = floor(x0 + 2), j = floor(x1 + 2) is in
    the support iff i + j is even; the density there is 1/8.
    """

    kind = "checkerboard"

    def __init__(self):
        cells = [(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0]
        self.cells = np.array(cells, dtype=np.float64) - 2.0  # lower-left corners
        # Per-coordinate marginals are uniform on [-2, 2]: variance 4/3.
        self.standardization = Standardization(
            mean=np.zeros(2), scale=np.full(2, np.sqrt(4.0 / 3.0))
        )
        self.support_box = np.array([[-2.0, 2.0], [-2.0, 2.0]])
        self.hist_box = np.array([[-2.2, 2.2], [-2.2, 2.2]])

    def sample(self, n, rng):
        idx = rng.integers(0, len(self.cells), size=n)
        return self.cells[idx] + rng.random((n, 2))

    def true_log_density(self, X):
        X = np.asarray(X, dtype=np.float64)
        ij = np.floor(X + 2.0).astype(int)
        inside = ((X >= -2.0) & (X < 2.0)).all(axis=1)
        black = (ij.sum(axis=1) % 2 == 0) & inside
        out = np.full(X.shape[0], -np.inf)
        out[black] = np.log(1.0 / 8.0)
        return out

    def exact_bin_masses(self, edges_x, edges_y):
        # Overlap of each bin interval with each of the 4 unit cells per axis,
        # combined over even-parity cell pairs.
        def overlaps(edges):
            lo, hi = edges[:-1], edges[1:]
            cell_lo = np.arange(-2.0, 2.0)
            return np.clip(
                np.minimum(hi[:, None], cell_lo[None, :] + 1.0)
                - np.maximum(lo[:, None], cell_lo[None, :]),
                0.0,
                None,
            )  # (bins, 4)

        ox = overlaps(np.asarray(edges_x, dtype=np.float64))
        oy = overlaps(np.asarray(edges_y, dtype=np.float64))
        parity = np.fromfunction(lambda i, j: (i + j) % 2 == 0, (4, 4))
        mass = np.einsum("xi,ij,yj->xy", ox, parity.astype(np.float64), oy) / 8.0
        return mass


class GaussianMixture(ToyDataset):
    """Two isotropic modes at (+/-separation, 0)."""

    kind = "gaussian_mixture"

    def __init__(self, separation: float = 1.5, sigma: float = 0.3, weights=(0.5, 0.5)):
        self.means = np.array([[separation, 0.0], [-separation, 0.0]])
        self.sigma = float(sigma)
        self.weights = np.asarray(weights, dtype=np.float64)
        var_x = float(self.weights @ (self.means[:, 0] ** 2)) + self.sigma**2 \
            - float(self.weights @ self.means[:, 0]) ** 2
        self.standardization = Standardization(
            mean=self.weights @ self.means,
            scale=np.array([np.sqrt(var_x), self.sigma]),
        )
        span = separation + 6 * sigma
        self.support_box = np.array([[-span, span], [-6 * sigma, 6 * sigma]])
        self.hist_box = np.array([[-span, span], [-span, span]])

    def sample(self, n, rng):
        comp = rng.random(n) < self.weights[0]
        out = self.means[np.where(comp, 0, 1)]
        return out + self.sigma * rng.standard_normal((n, 2))

    def true_log_density(self, X):
        X = np.asarray(X, dtype=np.float64)
        sq = ((X[:, None, :] - self.means[None]) ** 2).sum(axis=2)
        lc = np.log(self.weights) - sq / (2 * self.sigma**2) - np.log(2 * np.pi * self.sigma**2)
        m = lc.max(axis=1)
        return m + np.log(np.exp(lc - m[:, None]).sum(axis=1))

    def exact_bin_masses(self, edges_x, edges_y):
        def cdf_diffs(edges, mu):
            z = (np.asarray(edges) - mu) / self.sigma
            return np.diff(ndtr(z))

        mass = np.zeros((len(edges_x) - 1, len(edges_y) - 1))
        for w, mu in zip(self.weights, self.means):
            mass += w * np.outer(cdf_diffs(edges_x, mu[0]), cdf_diffs(edges_y, mu[1]))
        return mass


class Rings(ToyDataset):
    """Concentric rings: uniform angle, Gaussian radial profile per ring."""

    kind = "rings"

    def __init__(self, radii=(0.8, 1.6), width: float = 0.1, weights=None):
        self.radii = np.asarray(radii, dtype=np.float64)
        self.width = float(width)
        k = len(self.radii)
        self.weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
        var = float(self.weights @ (self.radii**2 + self.width**2)) / 2.0
        self.standardization = Standardization(mean=np.zeros(2), scale=np.full(2, np.sqrt(var)))
        r_max = self.radii.max() + 6 * self.width
        self.support_box = np.array([[-r_max, r_max], [-r_max, r_max]])
        self.hist_box = self.support_box.copy()

    def sample(self, n, rng):
        comp = rng.choice(len(self.radii), size=n, p=self.weights)
        r = self.radii[comp] + self.width * rng.standard_normal(n)
        theta = rng.random(n) * 2 * np.pi
        return np.column_stack([r * np.cos(theta), r * np.sin(theta)])

    def true_log_density(self, X):
        # p(x) = sum_k w_k Normal(||x||; R_k, width^2) / (2 pi ||x||); the
        # negative-radius tail is negligible at radius/width >= 8.
        X = np.asarray(X, dtype=np.float64)
        r = np.sqrt((X**2).sum(axis=1))
        r = np.maximum(r, 1e-12)
        lc = (
            np.log(self.weights)[None, :]
            - 0.5 * ((r[:, None] - self.radii[None, :]) / self.width) ** 2
            - 0.5 * np.log(2 * np.pi * self.width**2)
        )
        m = lc.max(axis=1)
        return m + np.log(np.exp(lc - m[:, None]).sum(axis=1)) - np.log(2 * np.pi * r)


class Spiral(ToyDataset):
    """Single spiral arm with isotropic jitter; no closed-form density."""

    kind = "spiral"

    def __init__(self, turns: float = 1.25, scale: float = 2.0, noise: float = 0.05):
        self.turns = float(turns)
        self.scale = float(scale)
        self.noise = float(noise)
        ref = self._raw_sample(200_000, derive_rng(90210))
        self.standardization = Standardization(mean=ref.mean(axis=0), scale=ref.std(axis=0))
        lim = self.scale + 6 * self.noise
        self.support_box = np.array([[-lim, lim], [-lim, lim]])
        self.hist_box = self.support_box.copy()

    def _raw_sample(self, n, rng):
        u = rng.random(n)
        theta = 2 * np.pi * self.turns * np.sqrt(u)
        r = self.scale * np.sqrt(u)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        return pts + self.noise * rng.standard_normal((n, 2))

    def sample(self, n, rng):
        return self._raw_sample(n, rng)


def make_dataset(kind: str, **params) -> ToyDataset:
    kinds = {
        "checkerboard": Checkerboard,
        "gaussian_mixture": GaussianMixture,
        "rings": Rings,
        "spiral": Spiral,
    }
    if kind not in kinds:
        raise ValueError(f"unknown dataset kind {kind!r}; choose from {DATASET_KINDS}")
    return kinds[kind](**params)
