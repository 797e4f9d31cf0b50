"""Sequence VAE over token corpora: compact latent space with three losses.

The encoder embeds tokens, concatenates positions (order-preserving), and
maps through a tanh MLP to a Gaussian posterior (mu, log sigma^2). The
decoder is factorized: one MLP maps z to independent per-position token
logits, which keeps the reconstruction term exact and decoding trivial.

Training minimizes the sum of three terms on every batch: the weighted
ELBO surrogate (reconstruction NLL plus free-bits KL against the standard
normal prior), a per-aspect attribute classification loss on z, and the
aspect discrepancy loss that pulls per-aspect batch centers together. The
KL weight follows a cyclical schedule with a per-dimension free-bits floor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import ndmath as nd
from .corpus import PAD_TOKEN, TokenSequence
from .ndmath import Rng, Tensor

LOGVAR_CLAMP = 8.0  # |log sigma^2| bound, avoids KL blow-up


@dataclass
class KlSchedule:
    """Cyclical KL weight: linear ramp 0 -> 1 over ramp_fraction, then hold."""

    cycle_steps: int
    ramp_fraction: float = 0.5
    free_bits: float = 0.05

    def __post_init__(self):
        if self.cycle_steps < 1:
            raise ValueError("cycle_steps must be positive")
        if not (0.0 < self.ramp_fraction <= 1.0):
            raise ValueError("ramp_fraction must lie in (0, 1]")
        if self.free_bits < 0:
            raise ValueError("free_bits must be non-negative")

    def weight(self, step: int) -> float:
        pos = step % self.cycle_steps
        ramp = self.ramp_fraction * self.cycle_steps
        return min(1.0, pos / ramp)


class VaeModel:
    """Encoder / decoder / per-aspect classifier heads."""

    def __init__(self, vocab_size, attrs_per_aspect, max_len, latent_dim=16,
                 embed_dim=32, hidden_dim=64, rng: Rng | None = None):
        if rng is None:
            rng = Rng(0)
        self.vocab_size = int(vocab_size)
        self.attrs_per_aspect = tuple(int(a) for a in attrs_per_aspect)
        self.max_len = int(max_len)
        self.latent_dim = int(latent_dim)
        self.embed_dim = int(embed_dim)
        self.hidden_dim = int(hidden_dim)

        v, e, L, h, d = (self.vocab_size, self.embed_dim, self.max_len,
                         self.hidden_dim, self.latent_dim)
        self.embed = nd.glorot_uniform(rng, v, e)
        self.enc_w1 = nd.glorot_uniform(rng, L * e, h)
        self.enc_b1 = nd.zeros(h)
        self.enc_mu_w = nd.glorot_uniform(rng, h, d)
        self.enc_mu_b = nd.zeros(d)
        self.enc_lv_w = nd.glorot_uniform(rng, h, d)
        self.enc_lv_b = nd.zeros(d)
        self.dec_w1 = nd.glorot_uniform(rng, d, h)
        self.dec_b1 = nd.zeros(h)
        self.dec_w2 = nd.glorot_uniform(rng, h, L * v)
        self.dec_b2 = nd.zeros(L * v)
        self.head_w = [nd.glorot_uniform(rng, d, a) for a in self.attrs_per_aspect]
        self.head_b = [nd.zeros(a) for a in self.attrs_per_aspect]

    @property
    def n_aspects(self) -> int:
        return len(self.attrs_per_aspect)

    def named_params(self):
        items = [
            ("embed", self.embed),
            ("enc_w1", self.enc_w1), ("enc_b1", self.enc_b1),
            ("enc_mu_w", self.enc_mu_w), ("enc_mu_b", self.enc_mu_b),
            ("enc_lv_w", self.enc_lv_w), ("enc_lv_b", self.enc_lv_b),
            ("dec_w1", self.dec_w1), ("dec_b1", self.dec_b1),
            ("dec_w2", self.dec_w2), ("dec_b2", self.dec_b2),
        ]
        for n in range(self.n_aspects):
            items.append((f"head_w{n}", self.head_w[n]))
            items.append((f"head_b{n}", self.head_b[n]))
        return items

    def params(self):
        return [t for _, t in self.named_params()]


def pad_tokens(seqs, max_len: int) -> np.ndarray:
    """Token matrix [batch, max_len], right-padded with the pad token."""
    out = np.full((len(seqs), max_len), PAD_TOKEN, dtype=np.int64)
    for i, seq in enumerate(seqs):
        toks = getattr(seq, "tokens", seq)
        if len(toks) > max_len:
            raise ValueError(f"sequence longer than max_len {max_len}")
        out[i, :len(toks)] = toks
    return out


def _posterior(model: VaeModel, tokens: np.ndarray):
    """(mu, logvar) tensors for a padded token matrix [B, L]."""
    b, L = tokens.shape
    emb = nd.gather_rows(model.embed, tokens.reshape(-1))      # [B*L, e]
    flat = nd.reshape(emb, (b, L * model.embed_dim))
    h = nd.tanh(nd.add_bias(nd.matmul(flat, model.enc_w1), model.enc_b1))
    mu = nd.add_bias(nd.matmul(h, model.enc_mu_w), model.enc_mu_b)
    logvar = nd.clip(nd.add_bias(nd.matmul(h, model.enc_lv_w), model.enc_lv_b),
                     -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return mu, logvar


def encode_batch(model: VaeModel, seqs, rng: Rng):
    """Reparameterized draw for a batch: (mu, logvar, z) tensors [B, d]."""
    tokens = pad_tokens(seqs, model.max_len)
    mu, logvar = _posterior(model, tokens)
    eps = Tensor(rng.normal(size=mu.dims))
    sigma = nd.exp(nd.scale(logvar, 0.5))
    z = nd.add(mu, nd.mul(sigma, eps))
    return mu, logvar, z


def encode(model: VaeModel, seq, rng: Rng):
    """Single-sequence reparameterized encoding: (mu, logvar, z) as vectors."""
    mu, logvar, z = encode_batch(model, [seq], rng)
    return mu.data[0], logvar.data[0], z.data[0]


def encode_mean(model: VaeModel, seq) -> np.ndarray:
    """Deterministic encoding (posterior mean); independent of any rng."""
    return encode_mean_batch(model, [seq])[0]


def encode_mean_batch(model: VaeModel, seqs) -> np.ndarray:
    tokens = pad_tokens(seqs, model.max_len)
    mu, _ = _posterior(model, tokens)
    return mu.data.copy()


def decoder_logits(model: VaeModel, z: Tensor) -> Tensor:
    """Per-position token logits, flattened to [B, max_len * vocab]."""
    h = nd.tanh(nd.add_bias(nd.matmul(z, model.dec_w1), model.dec_b1))
    return nd.add_bias(nd.matmul(h, model.dec_w2), model.dec_b2)


# ---------------------------------------------------------------------------
# losses


def gaussian_kl_per_dim(mu: Tensor, logvar: Tensor) -> Tensor:
    """Closed-form KL(N(mu, sigma^2) || N(0, 1)) per dimension."""
    inner = nd.sub(nd.sub(nd.add(nd.square(mu), nd.exp(logvar)), 1.0), logvar)
    return nd.scale(inner, 0.5)


def elbo_loss_batch(model: VaeModel, tokens: np.ndarray, z: Tensor,
                    mu: Tensor, logvar: Tensor, kl_weight: float,
                    free_bits: float = 0.0) -> Tensor:
    """Reconstruction NLL plus weighted free-bits KL, summed over the batch."""
    if not (0.0 <= kl_weight <= 1.0):
        raise ValueError("kl_weight must lie in [0, 1]")
    b, L = tokens.shape
    logits = nd.reshape(decoder_logits(model, z), (b * L, model.vocab_size))
    targets = tokens.reshape(-1)
    recon = nd.sub(nd.logsumexp(logits), nd.pick(logits, targets))  # [B*L]
    kl = gaussian_kl_per_dim(mu, logvar)
    if free_bits > 0.0:
        kl = nd.clip(kl, free_bits, math.inf)
    return nd.add(nd.sum_all(recon), nd.scale(nd.sum_all(kl), kl_weight))


def elbo_loss(model: VaeModel, seq, z, mu, logvar, kl_weight: float,
              free_bits: float = 0.0) -> float:
    """Single-sequence ELBO surrogate from numpy posterior values."""
    tokens = pad_tokens([seq], model.max_len)
    loss = elbo_loss_batch(
        model, tokens, Tensor(np.asarray(z, dtype=np.float32).reshape(1, -1)),
        Tensor(np.asarray(mu, dtype=np.float32).reshape(1, -1)),
        Tensor(np.asarray(logvar, dtype=np.float32).reshape(1, -1)),
        kl_weight, free_bits)
    return loss.item()


def classification_loss(model: VaeModel, z: Tensor, aspect_ids,
                        attribute_ids) -> Tensor:
    """Summed NLL of each item's attribute under its aspect's head."""
    aspect_ids = np.asarray(aspect_ids, dtype=np.int64)
    attribute_ids = np.asarray(attribute_ids, dtype=np.int64)
    total = None
    for n in range(model.n_aspects):
        rows = np.flatnonzero(aspect_ids == n)
        if rows.size == 0:
            continue
        zn = nd.gather_rows(z, rows)
        logits = nd.add_bias(nd.matmul(zn, model.head_w[n]), model.head_b[n])
        nll = nd.sub(nd.logsumexp(logits), nd.pick(logits, attribute_ids[rows]))
        term = nd.sum_all(nll)
        total = term if total is None else nd.add(total, term)
    if total is None:
        raise ValueError("classification loss needs at least one labeled item")
    return total


def aspect_discrepancy_loss(z: Tensor, aspect_ids) -> Tensor:
    """Sum of pairwise distances between per-aspect batch centers."""
    aspect_ids = np.asarray(aspect_ids, dtype=np.int64)
    centers = []
    for n in sorted(set(int(a) for a in aspect_ids)):
        rows = np.flatnonzero(aspect_ids == n)
        zn = nd.gather_rows(z, rows)
        centers.append(nd.scale(nd.sum_rows(zn), 1.0 / rows.size))
    if len(centers) < 2:
        warnings.warn("aspect discrepancy loss needs two aspects in the batch; "
                      "returning 0", RuntimeWarning)
        return nd.sum_all(nd.scale(z, 0.0))
    total = None
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            term = nd.l2_norm(nd.sub(centers[i], centers[j]))
            total = term if total is None else nd.add(total, term)
    return total


def total_loss(elbo: Tensor, classification: Tensor,
               discrepancy: Tensor) -> Tensor:
    """Plain unit-weight sum of the three objectives."""
    return nd.add(nd.add(elbo, classification), discrepancy)


# ---------------------------------------------------------------------------
# training


def _stratified_batches(index, batch_size, steps, rng: Rng):
    """Yield index batches drawing evenly from every aspect each step."""
    aspects = sorted({n for n, _ in index.by_attribute})
    pools = {n: np.array(index.aspect_indices(n), dtype=np.int64)
             for n in aspects}
    per_aspect = max(1, batch_size // len(aspects))
    cursors = {n: 0 for n in aspects}
    shuffled = {n: pools[n][rng.permutation(pools[n].size)] for n in aspects}
    for _ in range(steps):
        batch = []
        for n in aspects:
            take = per_aspect
            while take > 0:
                avail = shuffled[n].size - cursors[n]
                if avail == 0:
                    shuffled[n] = pools[n][rng.permutation(pools[n].size)]
                    cursors[n] = 0
                    avail = shuffled[n].size
                k = min(take, avail)
                batch.extend(shuffled[n][cursors[n]:cursors[n] + k])
                cursors[n] += k
                take -= k
        yield np.array(batch, dtype=np.int64)


def train_vae(model: VaeModel, sequences, index, epochs: int, batch_size: int,
              rng: Rng, lr: float = 8e-5, weight_decay: float = 0.01,
              kl_cycle_epochs: int = 4, kl_ramp_fraction: float = 0.5,
              free_bits: float = 0.05, use_classification: bool = True,
              use_discrepancy: bool = True, discrepancy_weight: float = 1.0):
    """AdamW training over the summed objective; returns per-epoch trace.

    Ablation switches drop the classification or discrepancy term from the
    update (their traced values are still reported for inspection).
    discrepancy_weight rescales the center-distance term relative to the
    per-item sums; at batch size B a weight w gives it w/B of the influence
    a per-item term has.
    """
    trace = []
    if epochs == 0:
        return trace
    steps_per_epoch = max(1, len(sequences) // batch_size)
    schedule = KlSchedule(cycle_steps=max(1, kl_cycle_epochs * steps_per_epoch),
                          ramp_fraction=kl_ramp_fraction, free_bits=free_bits)
    opt = nd.AdamW(model.params(), lr=lr, weight_decay=weight_decay)
    params = model.params()
    step = 0
    for epoch in range(epochs):
        sums = {"L_E": 0.0, "L_C": 0.0, "L_D": 0.0}
        seen = 0
        batches = _stratified_batches(index, batch_size, steps_per_epoch,
                                      rng.spawn(epoch))
        for batch_idx in batches:
            batch = [sequences[i] for i in batch_idx]
            tokens = pad_tokens(batch, model.max_len)
            aspect_ids = np.array([s.aspect_id for s in batch])
            attribute_ids = np.array([s.attribute_id for s in batch])
            kl_weight = schedule.weight(step)
            try:
                mu, logvar, z = encode_batch(model, batch, rng.spawn(10_000 + step))
                l_e = elbo_loss_batch(model, tokens, z, mu, logvar, kl_weight,
                                      schedule.free_bits)
            except nd.NumericsError as e:
                raise nd.NumericsError(
                    f"ELBO loss non-finite at epoch {epoch} step {step}: {e}")
            try:
                l_c = classification_loss(model, z, aspect_ids, attribute_ids)
            except nd.NumericsError as e:
                raise nd.NumericsError(
                    f"classification loss non-finite at epoch {epoch} "
                    f"step {step}: {e}")
            try:
                l_d = aspect_discrepancy_loss(z, aspect_ids)
            except nd.NumericsError as e:
                raise nd.NumericsError(
                    f"aspect discrepancy loss non-finite at epoch {epoch} "
                    f"step {step}: {e}")

            # Eq.-style unit-weight sum: per-item terms enter as batch sums,
            # the center-distance term as its batch-level estimate
            loss = l_e
            if use_classification:
                loss = nd.add(loss, l_c)
            if use_discrepancy:
                loss = nd.add(loss, l_d)
            grads = nd.backward(loss, params)
            opt.step(grads)

            sums["L_E"] += l_e.item()
            sums["L_C"] += l_c.item()
            sums["L_D"] += l_d.item() * len(batch)  # batch-level quantity
            seen += len(batch)
            step += 1
        trace.append({
            "epoch": epoch,
            "L_E": sums["L_E"] / seen,
            "L_C": sums["L_C"] / seen,
            "L_D": sums["L_D"] / seen,
        })
    return trace


# ---------------------------------------------------------------------------
# decoding


def decode_batch(model: VaeModel, zs: np.ndarray, temperature: float = 0.0,
                 rng: Rng | None = None):
    """Decode latent rows to token tuples; argmax when temperature == 0."""
    zs = np.asarray(zs, dtype=np.float32)
    if zs.ndim == 1:
        zs = zs.reshape(1, -1)
    logits = decoder_logits(model, Tensor(zs)).data.reshape(
        zs.shape[0], model.max_len, model.vocab_size)
    out = []
    for b in range(zs.shape[0]):
        if temperature > 0.0:
            if rng is None:
                raise ValueError("temperature sampling needs an rng")
            row_tokens = []
            scaled = logits[b].astype(np.float64) / temperature
            scaled -= scaled.max(axis=-1, keepdims=True)
            probs = np.exp(scaled)
            probs /= probs.sum(axis=-1, keepdims=True)
            for t in range(model.max_len):
                row_tokens.append(int(rng.categorical(probs[t], size=1)[0]))
            tokens = np.array(row_tokens)
        else:
            tokens = logits[b].argmax(axis=-1)
        end = len(tokens)
        while end > 1 and tokens[end - 1] == PAD_TOKEN:
            end -= 1
        out.append(tuple(int(t) for t in tokens[:end]))
    return out


def decode(model: VaeModel, z, temperature: float = 0.0,
           rng: Rng | None = None):
    """Decode one latent vector to a token tuple."""
    return decode_batch(model, np.asarray(z).reshape(1, -1), temperature, rng)[0]


def token_recovery(original, decoded) -> float:
    """Fraction of positions where the decoded token matches the original."""
    a = list(getattr(original, "tokens", original))
    b = list(decoded)
    length = max(len(a), len(b))
    if length == 0:
        return 1.0
    hits = sum(1 for x, y in zip(a, b) if x == y)
    return hits / length
