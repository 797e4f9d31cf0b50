import math

import numpy as np
import pytest

from latentctrl import energy as en
from latentctrl import samplers as sp
from latentctrl.ndmath import Rng

PAPER_SCHEDULE = sp.DiffusionSchedule(beta_min=0.1, beta_max=20.0, t_end=1.0)
CONTRACTION = math.exp(-5.025)  # exp(-0.5 * integral of beta over [0, 1])


def _random_model(d=4, attrs=(2, 3), seed=5):
    rng = Rng(seed)
    return en.EnergyModel([
        en.LatentClassifier(d, a, hidden_dim=8, rng=rng.spawn(i))
        for i, a in enumerate(attrs)])


def test_beta_endpoints_paper_constants():
    assert PAPER_SCHEDULE.beta(0.0) == pytest.approx(0.1)
    assert PAPER_SCHEDULE.beta(1.0) == pytest.approx(20.0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        sp.DiffusionSchedule(beta_min=2.0, beta_max=1.0)
    with pytest.raises(ValueError):
        sp.DiffusionSchedule(t_end=0.0)


def test_rhs_zero_gradient_everywhere():
    zero = lambda z: np.zeros_like(z)
    for t in (0.0, 0.3, 1.0):
        out = sp.ode_rhs(zero, None, np.ones(4), t, PAPER_SCHEDULE)
        np.testing.assert_array_equal(out, np.zeros(4))


def test_rhs_simplified_equals_unsimplified():
    # the prior score -z cancels the state term exactly
    model = _random_model(seed=9)
    target = en.AttributeTarget.of([(0, 1), (1, 2)], weights=[1.0, 0.5])
    rng = Rng(33)
    for _ in range(100):
        z = rng.normal(size=4, dtype=np.float64) * 2.0
        t = float(rng.uniform())
        a = sp.ode_rhs(model, target, z, t, PAPER_SCHEDULE)
        b = sp.ode_rhs_unsimplified(model, target, z, t, PAPER_SCHEDULE)
        assert np.max(np.abs(a - b)) < 1e-6


def test_constant_energy_flow_is_identity():
    zero = lambda z: np.zeros_like(z)
    z_start = np.array([0.5, -1.5, 2.0])
    for method in ("rk4", "rk45"):
        config = sp.OdeConfig(method=method, steps=50, init_mode="gaussian")
        z_end = sp.integrate_flow(zero, z_start, PAPER_SCHEDULE, config)
        np.testing.assert_array_equal(z_end, z_start)


def test_quadratic_flow_matches_closed_form():
    # dz/dt = 0.5 beta(t) (z - mu) contracts by exp(-5.025) from t=1 to 0
    mu = np.array([0.7, -0.3, 1.1, 0.0])
    z1 = np.array([2.0, 1.0, -1.0, 0.5])
    config = sp.OdeConfig(method="rk4", steps=200, init_mode="gaussian")
    z0 = sp.integrate_flow(lambda z: z - mu, z1, PAPER_SCHEDULE, config)
    expected = mu + (z1 - mu) * CONTRACTION
    rel = np.linalg.norm(z0 - expected) / np.linalg.norm(expected - mu)
    assert rel < 1e-3


def test_quadratic_flow_convergence_order():
    mu = np.zeros(3)
    z1 = np.array([1.0, -2.0, 0.5])
    exact = z1 * CONTRACTION
    errs = []
    for steps in (25, 50, 100, 200):
        config = sp.OdeConfig(method="rk4", steps=steps, init_mode="gaussian")
        z0 = sp.integrate_flow(lambda z: z - mu, z1, PAPER_SCHEDULE, config)
        errs.append(np.linalg.norm(z0 - exact))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    assert sum(orders) / len(orders) >= 3.5


def test_rk45_matches_rk4_on_quadratic():
    mu = np.array([0.2, -0.4])
    z1 = np.array([1.5, 0.5])
    a = sp.integrate_flow(lambda z: z - mu, z1, PAPER_SCHEDULE,
                          sp.OdeConfig(method="rk45", rtol=1e-5, atol=1e-5,
                                       init_mode="gaussian"))
    b = sp.integrate_flow(lambda z: z - mu, z1, PAPER_SCHEDULE,
                          sp.OdeConfig(method="rk4", steps=1000,
                                       init_mode="gaussian"))
    assert np.linalg.norm(a - b) < 1e-3


def test_rk45_step_budget_enforced():
    config = sp.OdeConfig(method="rk45", rtol=1e-12, atol=1e-12,
                          init_mode="gaussian", max_steps=2)
    with pytest.raises(sp.SamplerError, match="exceeded"):
        sp.integrate_flow(lambda z: z - 1.0, np.ones(3), PAPER_SCHEDULE, config)


def test_sample_ode_deterministic_per_seed():
    model = _random_model(seed=12)
    target = en.AttributeTarget.of([(0, 0)])
    config = sp.OdeConfig(method="rk4", steps=20, init_mode="gaussian")
    a = sp.sample_ode(model, target, config, PAPER_SCHEDULE, n_samples=4,
                      rng=Rng(77))
    b = sp.sample_ode(model, target, config, PAPER_SCHEDULE, n_samples=4,
                      rng=Rng(77))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (4, 4)


def test_sample_ode_gan_init_requires_prior():
    model = _random_model()
    with pytest.raises(ValueError, match="requires a fitted prior"):
        sp.sample_ode(model, en.AttributeTarget.of([]), sp.OdeConfig(),
                      PAPER_SCHEDULE, gan=None, n_samples=1, rng=Rng(0))


def test_ld_zero_step_size_never_moves():
    config = sp.LdConfig(step_size=0.0, n_steps=50, noise_scale=1.0)
    grad = lambda z: np.ones_like(z)
    out = sp.sample_ld(grad, None, config, n_samples=3, rng=Rng(5), dim=4)
    start = sp.sample_ld(grad, None, sp.LdConfig(step_size=0.0, n_steps=0),
                         n_samples=3, rng=Rng(5), dim=4)
    np.testing.assert_array_equal(out, start)


def test_ld_gradient_descent_converges_to_joint_minimizer():
    # E = 0.5 ||z - mu||^2, joint adds the prior 0.5 ||z||^2: minimizer mu/2
    mu = np.array([1.0, -2.0, 0.6])
    config = sp.LdConfig(step_size=0.01, n_steps=2000, noise_scale=0.0)
    out = sp.sample_ld(lambda z: z - mu, None, config, n_samples=2,
                       rng=Rng(3), dim=3)
    for row in out:
        assert np.linalg.norm(row - mu / 2.0) < 1e-3


def test_ld_prior_only_statistics():
    # empty target: chains should sample close to the standard normal
    zero = lambda z: np.zeros_like(z)
    config = sp.LdConfig(step_size=0.01, n_steps=200, noise_scale=1.0)
    out = sp.sample_ld(zero, None, config, n_samples=10_000, rng=Rng(11),
                       dim=2).astype(np.float64)
    mean = out.mean(axis=0)
    cov = np.cov(out.T)
    assert np.max(np.abs(mean)) < 0.05
    assert np.max(np.abs(cov - np.eye(2))) < 0.1


def test_ld_divergence_detected():
    config = sp.LdConfig(step_size=1.0, n_steps=400, noise_scale=0.0)
    exploding = lambda z: -10.0 * z  # anti-restoring force
    with pytest.raises(sp.SamplerError, match="smaller step_size"):
        sp.sample_ld(exploding, None, config, n_samples=1, rng=Rng(1), dim=3)


def test_random_sampler_gaussian_moments():
    out = sp.sample_random(dim=16, n_samples=10_000, rng=Rng(19))
    assert out.shape == (10_000, 16)
    assert np.max(np.abs(out.mean(axis=0))) < 0.05


def test_random_sampler_deterministic():
    a = sp.sample_random(dim=8, n_samples=5, rng=Rng(23))
    b = sp.sample_random(dim=8, n_samples=5, rng=Rng(23))
    np.testing.assert_array_equal(a, b)


def test_random_sampler_zero_weight_gan_yields_bias():
    gan = sp.GanPrior(latent_dim=3, rng=Rng(2))
    gan.gen_w.data[:] = 0.0
    gan.gen_b.data[:] = np.array([0.5, -1.0, 2.0], dtype=np.float32)
    out = sp.sample_random(gan=gan, n_samples=6, rng=Rng(4))
    np.testing.assert_allclose(out, np.tile([0.5, -1.0, 2.0], (6, 1)),
                               atol=1e-6)


def test_ld_config_validation():
    with pytest.raises(ValueError):
        sp.LdConfig(step_size=-0.1)
    with pytest.raises(ValueError):
        sp.LdConfig(noise_scale=0.5)


def test_ode_config_validation():
    with pytest.raises(ValueError):
        sp.OdeConfig(method="euler")
    with pytest.raises(ValueError):
        sp.OdeConfig(init_mode="cauchy")
    assert sp.OdeConfig(steps=150).step_budget == 1500
