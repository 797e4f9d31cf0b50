"""Flat dotted-key run configuration.

Config files are UTF-8 ``key = value`` lines with ``#`` comments. Every key
has a documented default below; unknown keys are rejected. ``--set k=v``
entries override file values. The fully-resolved config is echoed into
every output directory so any run can be reproduced from its artifacts.
"""

from __future__ import annotations

import hashlib


class ConfigError(ValueError):
    """Unknown key, malformed line, or ill-typed value."""


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected boolean, got {s!r}")


# key -> (default, parser, help)
DEFAULTS = {
    "seed": (42, int, "root random seed for every stage"),

    "corpus.n_aspects": (2, int, "number of labeled aspects"),
    "corpus.attrs": ("2,4", str, "attributes per aspect, comma-separated"),
    "corpus.vocab_size": (64, int, "token vocabulary size (token 0 is pad)"),
    "corpus.max_len": (16, int, "sequence length cap"),
    "corpus.skew": (0.8, float,
                    "probability a token comes from its attribute block"),
    "corpus.sequences_per_attribute": (2000, int,
                                       "generated sequences per attribute"),

    "vae.latent_dim": (64, int, "latent dimensionality"),
    "vae.embed_dim": (32, int, "token embedding width"),
    "vae.hidden_dim": (128, int, "encoder/decoder hidden width"),
    "vae.epochs": (30, int, "training epochs"),
    "vae.batch_size": (64, int, "aspect-stratified batch size"),
    "vae.lr": (3e-3, float, "AdamW learning rate"),
    "vae.weight_decay": (0.01, float, "AdamW decoupled weight decay"),
    "vae.kl_cycle_epochs": (4, int, "cyclical KL schedule period, in epochs"),
    "vae.kl_ramp_fraction": (0.5, float,
                             "fraction of each cycle spent ramping 0 to 1"),
    "vae.free_bits": (1.2, float, "per-dimension KL floor"),
    "vae.logvar_bias_init": (-4.0, float,
                             "initial posterior log-variance bias"),
    "vae.use_classification_loss": (True, _bool,
                                    "include the attribute classification "
                                    "term in training"),
    "vae.use_discrepancy_loss": (True, _bool,
                                 "include the aspect center-distance term "
                                 "in training"),

    "energy.hidden_dim": (32, int, "latent classifier hidden width"),
    "energy.linear": (False, _bool, "use linear classifier heads"),
    "energy.epochs": (10, int, "classifier training epochs"),
    "energy.batch_size": (64, int, "classifier batch size"),
    "energy.lr": (1e-3, float, "classifier AdamW learning rate"),
    "energy.val_fraction": (0.1, float, "held-out fraction per attribute"),

    "gan.epochs": (10, int, "latent prior GAN epochs"),
    "gan.batch_size": (64, int, "GAN batch size"),
    "gan.lr": (1e-3, float, "GAN AdamW learning rate"),
    "gan.hidden_dim": (32, int, "discriminator hidden width"),

    "sampler.method": ("rk45", str, "ode integrator: rk45 or rk4"),
    "sampler.steps": (200, int, "fixed-step count for rk4"),
    "sampler.rtol": (1e-4, float, "adaptive relative tolerance"),
    "sampler.atol": (1e-4, float, "adaptive absolute tolerance"),
    "sampler.init": ("gan", str, "chain start: gan or gaussian"),
    "sampler.beta_min": (0.1, float, "diffusion coefficient at t = 0"),
    "sampler.beta_max": (20.0, float, "diffusion coefficient at t = 1"),
    "sampler.t_end": (1.0, float, "integration start time T"),
    "sampler.lambda": ("1,1", str,
                       "per-aspect energy weights, comma-separated"),
    "sampler.ld_step_size": (0.01, float, "langevin step size"),
    "sampler.ld_steps": (200, int, "langevin step count"),
    "sampler.ld_noise": (1.0, float, "langevin noise scale, 0 or 1"),
    "sampler.temperature": (0.0, float,
                            "decode temperature; 0 decodes by argmax"),

    "ablate.samples_per_combination": (25, int,
                                       "samples per attribute combination"),
}


def default_config() -> dict:
    return {k: v for k, (v, _, _) in DEFAULTS.items()}


def parse_value(key: str, raw: str):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    _, parser, _ = DEFAULTS[key]
    try:
        return parser(raw.strip())
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(
            f"bad value {raw.strip()!r} for key {key!r}") from None


def load_config_file(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip()] = parse_value(key.strip(), value)
    return out


def resolve_config(file_values: dict | None = None, set_values=(),
                   seed=None) -> dict:
    """Defaults, overridden by file values, then --set pairs, then --seed."""
    cfg = default_config()
    for key, value in (file_values or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value
    for item in set_values:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg[key.strip()] = parse_value(key.strip(), value)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def format_config(cfg: dict) -> str:
    lines = ["# effective configuration (all defaults resolved)"]
    for key in sorted(cfg):
        lines.append(f"{key} = {_fmt(cfg[key])}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_hash(cfg: dict) -> str:
    digest = hashlib.sha256(format_config(cfg).encode("utf-8")).hexdigest()
    return digest[:16]


def parse_int_list(s: str):
    return tuple(int(x) for x in str(s).split(","))


def parse_float_list(s: str):
    return tuple(float(x) for x in str(s).split(","))
