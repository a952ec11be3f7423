"""Session-scoped trained models shared by the acceptance suite and the
trained-model example tests.  Training configurations live here so every
consumer sees the same artifacts."""

import time

import numpy as np
import pytest

FIXTURE_SECONDS = {}


def _timed(name):
    class _Timer:
        def __enter__(self):
            self.t0 = time.monotonic()

        def __exit__(self, *exc):
            FIXTURE_SECONDS[name] = time.monotonic() - self.t0

    return _Timer()

from drlebm.datasets import Checkerboard, GaussianMixture
from drlebm.energy import MlpEnergy, init_energy_params
from drlebm.samplers import SamplerConfig, normal_approx_sample_batch
from drlebm.schedule import derive_rng, make_schedule
from drlebm.trainer import TrainConfig, train

# Desk-scale checkerboard run: T = 6 levels, K = 30 Langevin steps.
DESK = dict(
    T=6, sigma2_min=0.0025, sigma2_max=0.8,
    width=64, n_hidden=2, temb_dim=32,
    K=30, b=0.25, lr=2e-3, batch=192, n_iters=14000, seed=0,
)

# Many-level analog (small per-level noise, one-shot negatives).
FINE = dict(
    T=30, sigma2_min=0.001, sigma2_max=0.28,
    width=48, n_hidden=2, temb_dim=32,
    lr=2e-3, batch=256, n_iters=6000, seed=0,
)


@pytest.fixture(scope="session")
def checkerboard_run():
    """(model, schedule, dataset, sampler_cfg) for the desk T6 setting."""
    ds = Checkerboard()
    sch = make_schedule(DESK["T"], DESK["sigma2_min"], DESK["sigma2_max"])
    model = MlpEnergy(
        init_energy_params(2, DESK["width"], DESK["n_hidden"], DESK["temb_dim"],
                           rng=derive_rng(DESK["seed"], 1)),
        n_levels=sch.T,
    )
    scfg = SamplerConfig(K=DESK["K"], b=DESK["b"])
    tcfg = TrainConfig(n_iters=DESK["n_iters"], lr=DESK["lr"], batch_size=DESK["batch"],
                       log_every=0, seed=DESK["seed"])
    with _timed("checkerboard_run"):
        model, _ = train(ds, sch, tcfg, scfg, derive_rng(DESK["seed"]), model=model)
    return model, sch, ds, scfg


@pytest.fixture(scope="session")
def baseline_run(checkerboard_run):
    """T = 1 marginal baseline at the matched per-generation budget."""
    _, sch6, ds, scfg6 = checkerboard_run
    sch = make_schedule(1, 0.25, 0.25)
    scfg = SamplerConfig(K=DESK["T"] * DESK["K"], b=DESK["b"], c=np.array([4.0]))
    model = MlpEnergy(
        init_energy_params(2, DESK["width"], DESK["n_hidden"], DESK["temb_dim"],
                           rng=derive_rng(DESK["seed"], 2)),
        n_levels=1,
    )
    tcfg = TrainConfig(objective="marginal_baseline", n_iters=DESK["n_iters"],
                       lr=DESK["lr"], batch_size=DESK["batch"], log_every=0,
                       seed=DESK["seed"])
    with _timed("baseline_run"):
        model, _ = train(ds, sch, tcfg, scfg, derive_rng(DESK["seed"], 3), model=model)
    return model, sch, ds, scfg


@pytest.fixture(scope="session")
def fine_checkerboard_run():
    """Many-level checkerboard model trained with one-shot Gaussian
    negatives (the K = 0 recovery setting), for long-run chain analysis."""
    ds = Checkerboard()
    sch = make_schedule(FINE["T"], FINE["sigma2_min"], FINE["sigma2_max"])
    model = MlpEnergy(
        init_energy_params(2, FINE["width"], FINE["n_hidden"], FINE["temb_dim"],
                           rng=derive_rng(FINE["seed"], 4)),
        n_levels=sch.T,
    )
    tcfg = TrainConfig(n_iters=FINE["n_iters"], lr=FINE["lr"], batch_size=FINE["batch"],
                       log_every=0, seed=FINE["seed"])

    def na_negatives(x_next, t, rng):
        return normal_approx_sample_batch(model, x_next, t, sch, rng)

    with _timed("fine_checkerboard_run"):
        model, _ = train(ds, sch, tcfg, SamplerConfig(K=1), derive_rng(FINE["seed"], 5),
                         model=model, negative_sampler=na_negatives)
    return model, sch, ds


@pytest.fixture(scope="session")
def mixture_run():
    """Trained two-mode Gaussian mixture (modes at (+/-1.5, 0))."""
    ds = GaussianMixture()
    sch = make_schedule(6, 0.0025, 0.8)
    model = MlpEnergy(
        init_energy_params(2, 48, 2, 32, rng=derive_rng(11, 1)), n_levels=sch.T
    )
    scfg = SamplerConfig(K=30, b=0.25)
    tcfg = TrainConfig(n_iters=4000, lr=2e-3, batch_size=192, log_every=0, seed=11)
    model, _ = train(ds, sch, tcfg, scfg, derive_rng(11), model=model)
    return model, sch, ds, scfg
