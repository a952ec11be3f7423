"""Histogram divergences against ground truth and density rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import derive_rng

__all__ = ["GridDivergence", "grid_kl", "histogram_probs", "render_density"]


@dataclass
class GridDivergence:
    kl: float  # KL(data || model) over smoothed bin histograms
    tv: float  # total-variation distance between the same histograms


def _edges(box, bins):
    box = np.asarray(box, dtype=np.float64).reshape(2, 2)
    return (
        np.linspace(box[0, 0], box[0, 1], bins + 1),
        np.linspace(box[1, 0], box[1, 1], bins + 1),
    )


def histogram_probs(samples: np.ndarray, edges_x, edges_y) -> np.ndarray:
    h, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=[edges_x, edges_y])
    total = h.sum()
    if total == 0:
        raise ValueError("no samples fall inside the histogram box")
    return h / total


def grid_kl(model_samples: np.ndarray, dataset, bins: int = 64, box=None,
            data_samples=None, n_data: int = 1_000_000, rng=None) -> GridDivergence:
    """KL(data-hist || model-hist) plus TV over a 2-D binned grid.

    The data side uses exact bin masses when the dataset provides them,
    an explicit (n, d) sample array if given, and otherwise n_data fresh
    draws.  Both histograms get 1e-8 additive smoothing and renormalization.
    """
    if bins < 16:
        raise ValueError(f"bins must be >= 16, got {bins}")
    model_samples = np.asarray(model_samples, dtype=np.float64)
    if model_samples.ndim != 2 or model_samples.shape[0] == 0:
        raise ValueError("model samples must be a non-empty (n, 2) array")
    box = np.asarray(box if box is not None else dataset.hist_box, dtype=np.float64)
    ex, ey = _edges(box, bins)

    if data_samples is not None:
        p = histogram_probs(np.asarray(data_samples, dtype=np.float64), ex, ey)
    else:
        exact = dataset.exact_bin_masses(ex, ey)
        if exact is not None:
            p = exact / exact.sum()
        else:
            rng = rng if rng is not None else derive_rng(424242)
            p = histogram_probs(dataset.sample(n_data, rng), ex, ey)
    q = histogram_probs(model_samples, ex, ey)

    p = p + 1e-8
    q = q + 1e-8
    p /= p.sum()
    q /= q.sum()
    kl = float((p * np.log(p / q)).sum())
    tv = 0.5 * float(np.abs(p - q).sum())
    return GridDivergence(kl=kl, tv=tv)


def render_density(model, schedule, t: int, box, n_grid: int, path) -> np.ndarray:
    """Normalized exp(f(y, t)) on a grid, written as 8-bit PGM plus raw CSV.

    The box is in the model's input coordinates at that level.  Returns the
    normalized density grid (n_grid, n_grid) indexed [ix, iy].
    """
    box = np.asarray(box, dtype=np.float64).reshape(2, 2)
    xs = np.linspace(box[0, 0], box[0, 1], n_grid)
    ys = np.linspace(box[1, 0], box[1, 1], n_grid)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    f = model.energy_batch(pts, t).reshape(n_grid, n_grid)
    dens = np.exp(f - f.max())
    cell = (xs[1] - xs[0]) * (ys[1] - ys[0])
    dens /= dens.sum() * cell

    path = str(path)
    gray = np.rint(dens / dens.max() * 255.0).astype(np.uint8)
    with open(path if path.endswith(".pgm") else path + ".pgm", "wb") as fh:
        fh.write(f"P5\n{n_grid} {n_grid}\n255\n".encode("ascii"))
        # Image rows run top to bottom: y decreasing, x increasing.
        fh.write(np.ascontiguousarray(gray.T[::-1]).tobytes())
    csv_path = (path[:-4] if path.endswith(".pgm") else path) + ".csv"
    with open(csv_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("x0,x1,density\n")
        for i in range(n_grid):
            for j in range(n_grid):
                fh.write(f"{xs[i]!r},{ys[j]!r},{dens[i, j]!r}\n")
    return dens
