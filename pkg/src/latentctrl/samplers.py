"""Latent samplers targeting a composed attribute energy.

The flow sampler integrates dz/dt = 0.5 * beta(t) * grad_z E(a|z) from
t = T down to t = 0 (the drift obtained after the standard-normal prior
score cancels the linear term of the reverse-time dynamics). beta is linear
in t. Integration runs in float64 with either a fixed-step classic
Runge-Kutta scheme or an adaptive Dormand-Prince 5(4) pair.

Baselines: Langevin dynamics on the joint (prior + energy), and direct
draws from either the standard normal or a fitted single-layer GAN prior.
Chains are independent; each chain's randomness derives deterministically
from (seed, chain index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndmath as nd
from .energy import AttributeTarget, EnergyModel, energy_gradient
from .ndmath import Rng, Tensor
from .vae import VaeModel, encode_mean_batch


class SamplerError(RuntimeError):
    """Integration or sampling failed (divergence, step budget exceeded)."""


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear diffusion coefficient beta(t) on t in [0, t_end]."""

    beta_min: float = 0.1
    beta_max: float = 20.0
    t_end: float = 1.0

    def __post_init__(self):
        if not (self.beta_max > self.beta_min > 0):
            raise ValueError("need beta_max > beta_min > 0")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")

    def beta(self, t: float) -> float:
        return self.beta_min + (self.beta_max - self.beta_min) * t


@dataclass(frozen=True)
class OdeConfig:
    method: str = "rk45"          # "rk45" adaptive or "rk4" fixed-step
    steps: int = 200              # fixed-step count for rk4
    rtol: float = 1e-4
    atol: float = 1e-4
    init_mode: str = "gan"        # "gaussian" or "gan"
    max_steps: int = 0            # 0 means 10 * steps

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown ode method {self.method!r}")
        if self.init_mode not in ("gaussian", "gan"):
            raise ValueError(f"unknown init mode {self.init_mode!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")

    @property
    def step_budget(self) -> int:
        return self.max_steps if self.max_steps > 0 else 10 * self.steps


@dataclass(frozen=True)
class LdConfig:
    step_size: float = 0.01
    n_steps: int = 200
    noise_scale: float = 1.0      # 0 turns the chain into gradient descent

    def __post_init__(self):
        # step_size 0 is allowed as a degenerate no-motion diagnostic
        if self.step_size < 0:
            raise ValueError("step_size must be non-negative")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.noise_scale not in (0.0, 1.0):
            raise ValueError("noise_scale must be 0 or 1")


def _resolve_grad_fn(energy, target):
    """Batched gradient source: EnergyModel + target, or a raw callable."""
    if isinstance(energy, EnergyModel):
        target = target if target is not None else AttributeTarget.of([])
        return (lambda z: np.atleast_2d(
            energy_gradient(energy, np.asarray(z, dtype=np.float32), target)))
    if callable(energy):
        return lambda z: np.asarray(energy(z), dtype=np.float64)
    raise TypeError("energy must be an EnergyModel or a gradient callable")


# ---------------------------------------------------------------------------
# right-hand sides


def ode_rhs(energy, target, z, t: float, schedule: DiffusionSchedule):
    """Simplified drift: 0.5 * beta(t) * grad_z E(a|z)."""
    grad_fn = _resolve_grad_fn(energy, target)
    z = np.asarray(z, dtype=np.float64)
    g = grad_fn(z.reshape(1, -1))[0]
    return 0.5 * schedule.beta(t) * g


def ode_rhs_unsimplified(energy, target, z, t: float,
                         schedule: DiffusionSchedule):
    """Literal reverse-time drift before the prior score cancels the state:
    -0.5 * beta(t) * [z - grad_z E + grad_z log N(z; 0, I)]."""
    grad_fn = _resolve_grad_fn(energy, target)
    z = np.asarray(z, dtype=np.float64)
    g = grad_fn(z.reshape(1, -1))[0]
    prior_score = -z
    return -0.5 * schedule.beta(t) * (z - g + prior_score)


# ---------------------------------------------------------------------------
# integrators (solve s = t_end - t forward, so t runs t_end -> 0)


def _field(grad_fn, schedule):
    def f(s, z):
        t = schedule.t_end - s
        out = -0.5 * schedule.beta(t) * grad_fn(z)
        if not np.all(np.isfinite(out)):
            raise nd.NumericsError("ode drift non-finite")
        return out
    return f


def _integrate_rk4(f, z0, t_end, steps):
    z = z0.astype(np.float64).copy()
    h = t_end / steps
    s = 0.0
    for _ in range(steps):
        k1 = f(s, z)
        k2 = f(s + 0.5 * h, z + 0.5 * h * k1)
        k3 = f(s + 0.5 * h, z + 0.5 * h * k2)
        k4 = f(s + h, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s += h
    return z

# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
          187 / 2100, 1 / 40)


def _integrate_rk45(f, z0, t_end, rtol, atol, max_steps):
    z = z0.astype(np.float64).copy()
    s = 0.0
    h = t_end / 100.0
    n_steps = 0
    while s < t_end:
        if n_steps >= max_steps:
            raise SamplerError(
                f"adaptive solver exceeded {max_steps} steps; tighten "
                f"tolerances or raise the step budget")
        n_steps += 1
        h = min(h, t_end - s)
        ks = []
        for i in range(7):
            zi = z.copy()
            for j, a in enumerate(_DP_A[i]):
                if a != 0.0:
                    zi += h * a * ks[j]
            ks.append(f(s + _DP_C[i] * h, zi))
        z5 = z + h * sum(b * k for b, k in zip(_DP_B5, ks) if b != 0.0)
        z4 = z + h * sum(b * k for b, k in zip(_DP_B4, ks) if b != 0.0)
        scale = atol + rtol * np.maximum(np.abs(z), np.abs(z5))
        err = float(np.sqrt(np.mean(((z5 - z4) / scale) ** 2)))
        if err <= 1.0:
            s += h
            z = z5
        factor = 0.9 * (err ** -0.2) if err > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
    return z


def integrate_flow(grad_fn, z_start, schedule: DiffusionSchedule,
                   config: OdeConfig) -> np.ndarray:
    """Carry z from t = t_end to t = 0 along the energy-descent flow."""
    f = _field(grad_fn, schedule)
    z0 = np.asarray(z_start, dtype=np.float64)
    if config.method == "rk4":
        return _integrate_rk4(f, z0, schedule.t_end, config.steps)
    return _integrate_rk45(f, z0, schedule.t_end, config.rtol, config.atol,
                           config.step_budget)


# ---------------------------------------------------------------------------
# samplers


def _latent_dim(energy, gan, dim):
    if dim is not None:
        return int(dim)
    if isinstance(energy, EnergyModel):
        return energy.latent_dim
    if gan is not None:
        return gan.latent_dim
    raise ValueError("latent dimension cannot be inferred; pass dim=")


def sample_ode(energy, target, config: OdeConfig, schedule: DiffusionSchedule,
               gan=None, n_samples: int = 1, rng: Rng | None = None,
               dim=None) -> np.ndarray:
    """Integrate independent chains from prior (or GAN) draws; [n, d] f32."""
    if rng is None:
        rng = Rng(0)
    if config.init_mode == "gan" and gan is None:
        raise ValueError("init_mode 'gan' requires a fitted prior")
    d = _latent_dim(energy, gan, dim)
    grad_fn = _resolve_grad_fn(energy, target)
    out = np.empty((n_samples, d), dtype=np.float32)
    for i in range(n_samples):
        chain_rng = rng.spawn(i)
        if config.init_mode == "gan":
            z_start = gan.sample(chain_rng, 1)[0].astype(np.float64)
        else:
            z_start = chain_rng.normal(size=d, dtype=np.float64)
        single = lambda z: grad_fn(z.reshape(1, -1))[0]
        out[i] = integrate_flow(single, z_start, schedule, config).astype(
            np.float32)
    return out


def sample_ld(energy, target, config: LdConfig, n_samples: int = 1,
              rng: Rng | None = None, dim=None) -> np.ndarray:
    """Langevin chains on the joint density (standard-normal prior times
    exp(-E)): z <- z - (eta/2) * (grad E + z) + sqrt(eta) * noise."""
    if rng is None:
        rng = Rng(0)
    d = _latent_dim(energy, None, dim)
    grad_fn = _resolve_grad_fn(energy, target)
    z = np.empty((n_samples, d), dtype=np.float64)
    noise = np.zeros((n_samples, config.n_steps, d), dtype=np.float64)
    for i in range(n_samples):
        chain_rng = rng.spawn(i)
        z[i] = chain_rng.normal(size=d, dtype=np.float64)
        if config.n_steps and config.noise_scale:
            noise[i] = chain_rng.normal(size=(config.n_steps, d),
                                        dtype=np.float64)
    eta = config.step_size
    root = math.sqrt(eta) * config.noise_scale
    for step in range(config.n_steps):
        g = grad_fn(z) + z     # joint gradient: energy plus prior term
        z = z - 0.5 * eta * g + root * noise[:, step, :]
        norms = np.linalg.norm(z, axis=1)
        if np.any(norms > 1e4) or not np.all(np.isfinite(z)):
            raise SamplerError(
                "langevin chain diverged; try a smaller step_size")
    return z.astype(np.float32)


def sample_random(gan=None, dim=None, n_samples: int = 1,
                  rng: Rng | None = None) -> np.ndarray:
    """Plain prior draws; attribute targets are ignored by construction."""
    if rng is None:
        rng = Rng(0)
    d = _latent_dim(None, gan, dim)
    out = np.empty((n_samples, d), dtype=np.float32)
    for i in range(n_samples):
        chain_rng = rng.spawn(i)
        if gan is not None:
            out[i] = gan.sample(chain_rng, 1)[0]
        else:
            out[i] = chain_rng.normal(size=d)
    return out


# ---------------------------------------------------------------------------
# GAN prior


class GanPrior:
    """Single linear-layer generator with a small MLP discriminator."""

    def __init__(self, latent_dim: int, noise_dim=None, hidden_dim: int = 32,
                 rng: Rng | None = None):
        if rng is None:
            rng = Rng(0)
        self.latent_dim = int(latent_dim)
        self.noise_dim = int(noise_dim) if noise_dim else int(latent_dim)
        self.hidden_dim = int(hidden_dim)
        self.gen_w = nd.glorot_uniform(rng, self.noise_dim, self.latent_dim)
        self.gen_b = nd.zeros(self.latent_dim)
        self.disc_w1 = nd.glorot_uniform(rng, self.latent_dim, hidden_dim)
        self.disc_b1 = nd.zeros(hidden_dim)
        self.disc_w2 = nd.glorot_uniform(rng, hidden_dim, 1)
        self.disc_b2 = nd.zeros(1)

    def generator_params(self):
        return [self.gen_w, self.gen_b]

    def discriminator_params(self):
        return [self.disc_w1, self.disc_b1, self.disc_w2, self.disc_b2]

    def generate(self, eps: Tensor) -> Tensor:
        return nd.add_bias(nd.matmul(eps, self.gen_w), self.gen_b)

    def discriminate(self, z: Tensor) -> Tensor:
        h = nd.tanh(nd.add_bias(nd.matmul(z, self.disc_w1), self.disc_b1))
        return nd.add_bias(nd.matmul(h, self.disc_w2), self.disc_b2)

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        eps = rng.normal(size=(n, self.noise_dim), dtype=np.float64)
        w = self.gen_w.data.astype(np.float64)
        b = self.gen_b.data.astype(np.float64)
        return (eps @ w + b).astype(np.float32)


def fit_gan_prior(vae_model: VaeModel, sequences, epochs: int, rng: Rng,
                  lr: float = 1e-3, batch_size: int = 64,
                  hidden_dim: int = 32, holdout_fraction: float = 0.1):
    """Non-saturating GAN on deterministic encodings of the corpus.

    Returns (prior, trace); the trace records per-epoch discriminator
    accuracy on a held-out real-versus-generated split.
    """
    reals = encode_mean_batch(vae_model, sequences)
    n_hold = max(1, int(len(reals) * holdout_fraction))
    perm = rng.spawn(1).permutation(len(reals))
    held = reals[perm[:n_hold]]
    train = reals[perm[n_hold:]]

    gan = GanPrior(vae_model.latent_dim, hidden_dim=hidden_dim,
                   rng=rng.spawn(2))
    opt_d = nd.AdamW(gan.discriminator_params(), lr=lr)
    opt_g = nd.AdamW(gan.generator_params(), lr=lr)
    noise_rng = rng.spawn(3)
    order_rng = rng.spawn(4)
    trace = []
    for epoch in range(epochs):
        order = order_rng.permutation(len(train))
        for s in range(max(1, len(train) // batch_size)):
            rows = order[s * batch_size:(s + 1) * batch_size]
            if rows.size == 0:
                continue
            real = Tensor(train[rows])
            eps = Tensor(noise_rng.normal(size=(rows.size, gan.noise_dim)))
            fake = gan.generate(eps)
            d_loss = nd.add(
                nd.sum_all(nd.softplus(nd.scale(gan.discriminate(real), -1.0))),
                nd.sum_all(nd.softplus(gan.discriminate(
                    Tensor(fake.data.copy())))))
            opt_d.step(nd.backward(d_loss, gan.discriminator_params()))

            eps = Tensor(noise_rng.normal(size=(rows.size, gan.noise_dim)))
            fake = gan.generate(eps)
            g_loss = nd.sum_all(nd.softplus(nd.scale(gan.discriminate(fake),
                                                     -1.0)))
            opt_g.step(nd.backward(g_loss, gan.generator_params()))
        trace.append({"epoch": epoch,
                      "disc_accuracy": _disc_accuracy(gan, held, noise_rng)})
    if epochs == 0:
        trace.append({"epoch": -1,
                      "disc_accuracy": _disc_accuracy(gan, held, noise_rng)})
    return gan, trace


def _disc_accuracy(gan: GanPrior, held_real: np.ndarray, rng: Rng) -> float:
    fake = gan.sample(rng, len(held_real))
    score_real = gan.discriminate(Tensor(held_real)).data.reshape(-1)
    score_fake = gan.discriminate(Tensor(fake)).data.reshape(-1)
    correct = float(np.sum(score_real > 0) + np.sum(score_fake <= 0))
    return correct / (2.0 * len(held_real))
