"""Partition estimator tests: exact ratios, Gaussian scale-family oracles,
quadrature self-checks, density normalization, bits-per-dimension identities."""

import numpy as np
import pytest

from drlebm.energy import MixtureEnergy, QuadraticEnergy, ScaleFamilyEnergy, unit_quadratic
from drlebm.partition import (
    AisEstimate,
    AisSamplerSpec,
    bits_per_dim,
    estimate_log_z0,
    level_log_ratio,
    log_density,
    log_density_batch,
    quadrature_log_z,
)
from drlebm.schedule import Standardization, derive_rng, make_schedule


def test_equal_energies_give_exact_zero_ratio():
    fam = ScaleFamilyEnergy([1.0, 1.0], d=2)
    samples = derive_rng(0).standard_normal((100, 2))
    assert level_log_ratio(fam, samples, 0) == 0.0


def test_single_sample_ratio_is_energy_difference():
    fam = ScaleFamilyEnergy([0.7, 1.3], d=2)
    y = np.array([[0.4, -0.9]])
    want = float(fam.energy_batch(y, 0)[0] - fam.energy_batch(y, 1)[0])
    assert level_log_ratio(fam, y, 0) == pytest.approx(want, rel=1e-15)


def test_empty_sample_block_rejected():
    fam = ScaleFamilyEnergy([1.0, 1.0], d=2)
    with pytest.raises(ValueError, match="non-empty"):
        level_log_ratio(fam, np.zeros((0, 2)), 0)


def test_scale_family_ratio_converges_to_closed_form():
    # exact samples from p(y) at the wider level; truth 2 log(s_t / s_{t+1})
    s_t, s_next = 1.0, 1.2
    fam = ScaleFamilyEnergy([s_t, s_next], d=2)
    rng = derive_rng(1)
    samples = s_next * rng.standard_normal((100_000, 2))
    got = level_log_ratio(fam, samples, 0)
    want = 2 * np.log(s_t / s_next)
    assert want == pytest.approx(-0.36464, abs=1e-4)
    assert got == pytest.approx(want, abs=0.01)


def test_all_levels_standard_normal_gives_exact_top_constant():
    sch = make_schedule(4, 0.1, 0.4)
    model = unit_quadratic(2)  # matches the pinned boundary energy exactly
    spec = AisSamplerSpec(kind="langevin", steps_per_level=5)
    est = estimate_log_z0(model, sch, spec, M=2000, rng=derive_rng(2))
    # every importance weight is exp(0): the estimate is exact, not just close
    np.testing.assert_array_equal(est.log_ratios, 0.0)
    assert est.log_z0 == pytest.approx(np.log(2 * np.pi), rel=1e-12)
    assert est.log_z0 == pytest.approx(1.8379, abs=1e-4)


def test_bookkeeping_identity_enforced():
    with pytest.raises(ValueError, match="bookkeeping"):
        AisEstimate(
            log_ratios=np.array([0.5]), M=10, log_z_T=1.0, log_z0=2.0,
            curve=[], steps_per_level=1, sampler="hmc",
        )


def test_ais_curve_is_recorded_and_monotone_in_samples_used():
    sch = make_schedule(3, 0.1, 0.4)
    model = unit_quadratic(2)
    spec = AisSamplerSpec(kind="normal_approx", steps_per_level=1)
    est = estimate_log_z0(model, sch, spec, M=5000, rng=derive_rng(3))
    used = [m for m, _ in est.curve]
    assert used == sorted(set(used)) and used[-1] == 5000
    assert est.curve[-1][1] == pytest.approx(est.log_z0)


def test_ais_matches_diffusion_consistent_family_truth():
    # The diffused Gaussian family's conditionals are the exact posteriors of
    # its own marginals, so the progressive chain reproduces p(y_t) and the
    # chained ratios must land on the closed-form log Z_0 = 0.5 log(2 pi w_0).
    from drlebm.energy import DiffusedGaussianFamily
    from drlebm.samplers import SamplerConfig, adapt_step_size

    sch = make_schedule(6, 0.01, 0.8)
    v = 0.25
    fam = DiffusedGaussianFamily(sch, mu=[0.3], log_v=[np.log(v)])
    w0 = sch.alpha[0] ** 2 * v
    truth = 0.5 * np.log(2 * np.pi * w0)
    adapt = adapt_step_size(fam, sch, SamplerConfig(adapt_chains=300, adapt_steps=40),
                            derive_rng(40))
    spec = AisSamplerSpec(kind="hmc", steps_per_level=20, step_sizes=adapt.step_sizes)
    est = estimate_log_z0(fam, sch, spec, M=50_000, rng=derive_rng(4))
    assert est.log_z0 == pytest.approx(truth, abs=0.02)


def test_quadrature_standard_normal_2d():
    res = quadrature_log_z(unit_quadratic(2), 0, [[-8, 8], [-8, 8]], 400)
    assert res.log_z == pytest.approx(np.log(2 * np.pi), abs=1e-4)
    assert res.log_z == pytest.approx(1.8379, abs=1e-4)
    assert res.warning is None


def test_quadrature_constant_energy_is_log_area_plus_c():
    c = -1.25
    model = QuadraticEnergy(np.zeros(2), np.zeros((2, 2)))
    model.energy_batch = lambda X, t: np.full(np.shape(X)[0], c)  # constant c
    res = quadrature_log_z(model, 0, [[0, 2], [0, 3]], 101)
    assert res.log_z == pytest.approx(c + np.log(6.0), rel=1e-12)
    assert res.warning is not None  # constant density touches the boundary


def test_quadrature_truncated_box_warns():
    res = quadrature_log_z(unit_quadratic(2), 0, [[-1, 1], [-1, 1]], 101)
    assert res.warning is not None and "support" in res.warning


def test_quadrature_1d_and_dimension_guard():
    res = quadrature_log_z(unit_quadratic(1), 0, [[-8, 8]], 400)
    assert res.log_z == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-6)

    class _D3:
        d = 3

    with pytest.raises(ValueError, match="d <= 2"):
        quadrature_log_z(_D3(), 0, [[-1, 1]] * 3, 10)


def test_log_density_change_of_variable_identities():
    # tiny sigma_1: log g -> f(x, 0) - log Z_0
    sch = make_schedule(1, 1e-12, 1e-12)
    model = unit_quadratic(2)
    x = np.array([0.5, -0.5])
    log_z0 = np.log(2 * np.pi)
    got = log_density(model, sch, x, log_z0)
    assert got == pytest.approx(model.energy(x, 0) - log_z0, abs=1e-9)


def test_log_density_unit_quadratic_closed_form():
    # with the exact log Z the change-of-variable density IS the Gaussian
    # N(0, I / (1 - sigma_1^2)) density, checked against the direct formula
    s2 = 0.19
    sch = make_schedule(1, s2, s2)
    model = unit_quadratic(2)
    log_z0 = np.log(2 * np.pi)
    a = np.sqrt(1 - s2)
    rng = derive_rng(77)
    X = rng.standard_normal((64, 2)) * 1.4
    got = log_density_batch(model, sch, X, log_z0)
    var = 1.0 / (1 - s2)
    want = -0.5 * (X**2).sum(axis=1) / var - np.log(2 * np.pi * var)
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_log_density_integrates_to_one_for_analytic_model():
    # mixture backend is normalized (log Z = 0); integrate the change-of-
    # variable density over a wide box by quadrature
    sch = make_schedule(2, 0.09, 0.25)
    mix = MixtureEnergy([0.5, 0.5], [[1.0, 0.0], [-1.0, 0.0]], [0.2, 0.2])
    n = 401
    xs = np.linspace(-7, 7, n)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    logg = log_density_batch(mix, sch, pts, 0.0)
    h = xs[1] - xs[0]
    integral = np.exp(logg).sum() * h * h
    assert integral == pytest.approx(1.0, abs=0.02)


def test_bpd_gaussian_entropy_identity():
    # standard normal data under its own analytic density: BPD equals the
    # differential entropy per dimension in bits
    sch = make_schedule(1, 1e-12, 1e-12)
    model = unit_quadratic(1)
    log_z0 = 0.5 * np.log(2 * np.pi)
    data = derive_rng(5).standard_normal((400_000, 1))
    got = bits_per_dim(data, model, sch, log_z0)
    want = 0.5 * np.log(2 * np.pi * np.e) / np.log(2.0)
    assert want == pytest.approx(2.0471, abs=1e-4)
    assert got == pytest.approx(want, abs=0.01)


def test_bpd_translation_invariance():
    # A common shift of data and model cancels.  Absorbed by the
    # standardization it cancels before the model sees it, hence bit-exactly;
    # shifting the model mean instead leaves only the sigma_1-scaling
    # rounding of the shifted coordinates.
    sch = make_schedule(1, 1e-12, 1e-12)
    data = np.array([[0.5], [-1.25], [0.75]])
    shift = 4.0
    model = QuadraticEnergy([0.25], np.eye(1))
    base = bits_per_dim(data, model, sch, 0.9189)
    via_std = bits_per_dim(
        data + shift, model, sch, 0.9189,
        standardization=Standardization(mean=np.array([shift]), scale=np.ones(1)),
    )
    assert base == via_std
    moved = bits_per_dim(data + shift, QuadraticEnergy([0.25 + shift], np.eye(1)), sch, 0.9189)
    assert moved == pytest.approx(base, abs=1e-9)


def test_bpd_includes_standardization_jacobian():
    sch = make_schedule(1, 1e-12, 1e-12)
    model = unit_quadratic(1)
    log_z0 = 0.5 * np.log(2 * np.pi)
    rng = derive_rng(6)
    scale = 2.0
    data = scale * rng.standard_normal((200_000, 1))
    std = Standardization(mean=np.zeros(1), scale=np.array([scale]))
    got = bits_per_dim(data, model, sch, log_z0, standardization=std)
    want = (0.5 * np.log(2 * np.pi * np.e) + np.log(scale)) / np.log(2.0)
    assert got == pytest.approx(want, abs=0.01)


def test_bpd_empty_test_set_rejected():
    sch = make_schedule(1, 0.1, 0.1)
    with pytest.raises(ValueError, match="empty"):
        bits_per_dim(np.zeros((0, 1)), unit_quadratic(1), sch, 0.0)
