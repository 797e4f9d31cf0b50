"""Multi-attribute control of token sequences: a compact latent space
learned by a VAE, composable per-aspect classifier energies on that space,
and ODE/Langevin/random latent samplers with decoding and evaluation."""

from .corpus import (CorpusIndex, OracleClassifier, SyntheticSpec,
                     TokenSequence, generate_synthetic, load_corpus,
                     load_oracle, oracle_classify, save_corpus, save_oracle)
from .energy import (AttributeTarget, EnergyModel, LatentClassifier,
                     aspect_energy, energy_gradient, log_joint_unnormalized,
                     total_energy, train_latent_classifiers)
from .evaluation import (EvalReport, center_distance_ratio, correctness,
                         distinct_n, evaluate_samples, nll_proxy,
                         project_latents)
from .ndmath import AdamW, Rng, Tensor, backward
from .samplers import (DiffusionSchedule, GanPrior, LdConfig, OdeConfig,
                       fit_gan_prior, integrate_flow, ode_rhs, sample_ld,
                       sample_ode, sample_random)
from .vae import (KlSchedule, VaeModel, decode, decode_batch, encode,
                  encode_mean, encode_mean_batch, train_vae)

__version__ = "0.1.0"
