"""Per-aspect attribute classifiers on the frozen latent space, composed
into a joint energy over target attribute combinations.

Each aspect gets an independent classifier f_n mapping z to unnormalized
attribute logits. The energy of attribute j under aspect n is the negative
log-softmax of f_n(z) at j, so exp(-E_n) sums to one over the aspect's
attributes. A target (one attribute per controlled aspect, each with a
positive weight) yields the joint energy as the weighted sum of per-aspect
energies; the prior-normalizer of the underlying joint density never needs
to be computed because sampling only consumes the gradient of the energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndmath as nd
from .ndmath import Rng, Tensor
from .vae import VaeModel, encode_mean_batch


@dataclass(frozen=True)
class AttributeTarget:
    """Desired attribute per controlled aspect, with per-aspect weights."""

    targets: tuple = ()    # ((aspect_id, attribute_id), ...)
    weights: tuple = ()    # weight per entry, defaults to 1.0

    @staticmethod
    def of(pairs, weights=None) -> "AttributeTarget":
        pairs = tuple((int(n), int(j)) for n, j in pairs)
        if weights is None:
            weights = tuple(1.0 for _ in pairs)
        else:
            weights = tuple(float(w) for w in weights)
        if len(weights) != len(pairs):
            raise ValueError("one weight per targeted aspect required")
        aspects = [n for n, _ in pairs]
        if len(set(aspects)) != len(aspects):
            raise ValueError("at most one attribute per aspect")
        if any(w <= 0 for w in weights):
            raise ValueError("weights must be positive")
        return AttributeTarget(pairs, weights)

    def __len__(self):
        return len(self.targets)


class LatentClassifier:
    """One-hidden-layer (or linear) attribute classifier over z."""

    def __init__(self, latent_dim: int, n_attributes: int, hidden_dim: int = 32,
                 linear: bool = False, rng: Rng | None = None):
        if n_attributes < 2:
            raise ValueError("classifier needs at least two attributes")
        if rng is None:
            rng = Rng(0)
        self.latent_dim = int(latent_dim)
        self.n_attributes = int(n_attributes)
        self.hidden_dim = int(hidden_dim)
        self.linear = bool(linear)
        if linear:
            self.w1 = nd.glorot_uniform(rng, latent_dim, n_attributes)
            self.b1 = nd.zeros(n_attributes)
            self.w2 = None
            self.b2 = None
        else:
            self.w1 = nd.glorot_uniform(rng, latent_dim, hidden_dim)
            self.b1 = nd.zeros(hidden_dim)
            self.w2 = nd.glorot_uniform(rng, hidden_dim, n_attributes)
            self.b2 = nd.zeros(n_attributes)

    def logits(self, z: Tensor) -> Tensor:
        h = nd.add_bias(nd.matmul(z, self.w1), self.b1)
        if self.linear:
            return h
        return nd.add_bias(nd.matmul(nd.tanh(h), self.w2), self.b2)

    def params(self):
        ps = [self.w1, self.b1]
        if not self.linear:
            ps += [self.w2, self.b2]
        return ps


@dataclass
class EnergyModel:
    """One frozen classifier per aspect."""

    classifiers: list = field(default_factory=list)

    @property
    def n_aspects(self) -> int:
        return len(self.classifiers)

    @property
    def latent_dim(self) -> int:
        return self.classifiers[0].latent_dim

    def validate_target(self, target: AttributeTarget) -> None:
        for n, j in target.targets:
            if not (0 <= n < self.n_aspects):
                raise ValueError(f"aspect {n} out of range (N = {self.n_aspects})")
            if not (0 <= j < self.classifiers[n].n_attributes):
                raise ValueError(
                    f"attribute {j} out of range for aspect {n} "
                    f"(|A| = {self.classifiers[n].n_attributes})")


def _as_batch(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float32)
    return z.reshape(1, -1) if z.ndim == 1 else z


def aspect_energy_batch(model: EnergyModel, z, aspect_id: int,
                        attribute_id: int) -> Tensor:
    """E_n(a | z) rows: log-sum-exp of logits minus the target logit."""
    model.validate_target(AttributeTarget.of([(aspect_id, attribute_id)]))
    zt = z if isinstance(z, Tensor) else Tensor(_as_batch(z))
    logits = model.classifiers[aspect_id].logits(zt)
    idx = np.full(zt.dims[0], attribute_id, dtype=np.int64)
    return nd.sub(nd.logsumexp(logits), nd.pick(logits, idx))


def aspect_energy(model: EnergyModel, z, aspect_id: int,
                  attribute_id: int) -> float:
    return float(aspect_energy_batch(model, z, aspect_id, attribute_id).data[0])


def total_energy_batch(model: EnergyModel, z, target: AttributeTarget) -> Tensor:
    """Weighted sum of per-aspect energies; empty targets contribute 0."""
    model.validate_target(target)
    zt = z if isinstance(z, Tensor) else Tensor(_as_batch(z))
    total = None
    for (n, j), w in zip(target.targets, target.weights):
        term = nd.scale(aspect_energy_batch(model, zt, n, j), w)
        total = term if total is None else nd.add(total, term)
    if total is None:
        total = nd.scale(nd.sum_all(nd.mul(zt, zt)), 0.0)  # graph-attached zero
    return total


def total_energy(model: EnergyModel, z, target: AttributeTarget) -> float:
    values = total_energy_batch(model, z, target).data
    return float(np.sum(values))


def energy_gradient(model: EnergyModel, z, target: AttributeTarget) -> np.ndarray:
    """d E(a|z) / d z via reverse-mode AD; rows independent for batched z."""
    z_arr = _as_batch(z)
    zt = Tensor(z_arr)
    e = total_energy_batch(model, zt, target)
    loss = e if e.data.ndim == 0 else nd.sum_all(e)
    (grad,) = nd.backward(loss, [zt])
    if not np.all(np.isfinite(grad)):
        raise nd.NumericsError("energy gradient non-finite")
    grad = grad.astype(np.float64)
    return grad[0] if np.asarray(z).ndim == 1 else grad


def log_joint_unnormalized(model: EnergyModel, z, target: AttributeTarget) -> float:
    """log of prior * exp(-E), dropping the attribute normalizer."""
    z_arr = np.asarray(z, dtype=np.float64).reshape(-1)
    d = z_arr.size
    prior = -0.5 * float(z_arr @ z_arr) - 0.5 * d * np.log(2.0 * np.pi)
    return prior - total_energy(model, z_arr.astype(np.float32), target)


# ---------------------------------------------------------------------------
# training on the frozen latent space


def train_latent_classifiers(vae_model: VaeModel, sequences, index,
                             epochs: int, rng: Rng, hidden_dim: int = 32,
                             linear: bool = False, lr: float = 1e-3,
                             batch_size: int = 64, val_fraction: float = 0.1):
    """Fit per-aspect classifiers on deterministic encodings.

    The VAE is read-only here: inputs are encode_mean(x) of labeled
    sequences from the classifier's own aspect, split into train/validation
    per attribute. Returns (EnergyModel, per-aspect validation accuracy).
    """
    aspects = sorted({n for n, _ in index.by_attribute})
    classifiers = []
    val_accuracy = []
    for n in aspects:
        attrs = sorted(j for (an, j) in index.by_attribute if an == n)
        if len(attrs) < 2:
            raise ValueError(f"aspect {n} has fewer than two attributes")
        train_idx, val_idx = [], []
        for j in attrs:
            idxs = list(index.by_attribute[(n, j)])
            n_val = max(1, int(round(len(idxs) * val_fraction)))
            order = rng.spawn(n * 1000 + j).permutation(len(idxs))
            shuffled = [idxs[k] for k in order]
            val_idx.extend(shuffled[:n_val])
            train_idx.extend(shuffled[n_val:])

        z_train = encode_mean_batch(vae_model, [sequences[i] for i in train_idx])
        y_train = np.array([sequences[i].attribute_id for i in train_idx])
        z_val = encode_mean_batch(vae_model, [sequences[i] for i in val_idx])
        y_val = np.array([sequences[i].attribute_id for i in val_idx])

        clf = LatentClassifier(vae_model.latent_dim, len(attrs), hidden_dim,
                               linear, rng.spawn(500 + n))
        opt = nd.AdamW(clf.params(), lr=lr)
        order_rng = rng.spawn(900 + n)
        steps_per_epoch = max(1, len(train_idx) // batch_size)
        for epoch in range(epochs):
            perm = order_rng.permutation(len(train_idx))
            for s in range(steps_per_epoch):
                rows = perm[s * batch_size:(s + 1) * batch_size]
                if rows.size == 0:
                    continue
                zt = Tensor(z_train[rows])
                logits = clf.logits(zt)
                nll = nd.sub(nd.logsumexp(logits), nd.pick(logits, y_train[rows]))
                grads = nd.backward(nd.sum_all(nll), clf.params())
                opt.step(grads)
        pred = clf.logits(Tensor(z_val)).data.argmax(axis=1)
        val_accuracy.append(float(np.mean(pred == y_val)))
        classifiers.append(clf)
    return EnergyModel(classifiers), val_accuracy
