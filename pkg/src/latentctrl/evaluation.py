"""Automatic metrics over generated sequences and latent-space geometry.

Correctness is joint: a sample counts only if the oracle agrees with the
intended attribute on every targeted aspect. Distinct-n is corpus-level
(unique n-grams over total n-grams, n-grams taken within each sequence).
The fluency stand-in is the mean per-token negative log-likelihood under
the exact generating oracle conditioned on the intended attributes,
reported as ``nll_proxy`` (not comparable to model-based perplexities).

Latent projections use 2-component PCA computed by power iteration with
deflation on the centered covariance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .corpus import EPS_SMOOTH, OracleClassifier


def combination_label(targets) -> str:
    """Canonical 'n:j;n:j' label for a target combination."""
    return ";".join(f"{n}:{j}" for n, j in sorted(targets))


def parse_combination(label: str):
    out = []
    for part in label.split(";"):
        n, _, j = part.partition(":")
        out.append((int(n), int(j)))
    return tuple(sorted(out))


def correctness(samples, oracle: OracleClassifier):
    """Joint per-combination accuracy.

    ``samples`` is an iterable of (targets, tokens) where targets is a
    sequence of (aspect, attribute) pairs. Returns (per-combination dict,
    average over combinations present).
    """
    hits: dict = {}
    totals: dict = {}
    for targets, tokens in samples:
        key = combination_label(targets)
        totals[key] = totals.get(key, 0) + 1
        ok = all(oracle.classify(tokens, n) == j for n, j in targets)
        hits[key] = hits.get(key, 0) + (1 if ok else 0)
    per_combo = {k: hits.get(k, 0) / totals[k] for k in sorted(totals)}
    average = (sum(per_combo.values()) / len(per_combo)) if per_combo else 0.0
    return per_combo, average


def marginal_correctness(samples, oracle: OracleClassifier, aspect_id: int):
    """Single-aspect accuracy over samples that target the given aspect."""
    total = 0
    hit = 0
    for targets, tokens in samples:
        for n, j in targets:
            if n == aspect_id:
                total += 1
                hit += 1 if oracle.classify(tokens, n) == j else 0
    return hit / total if total else 0.0


def distinct_n(sequences, n: int) -> float:
    """Unique n-grams across the corpus divided by total n-grams."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total = 0
    uniq = set()
    for seq in sequences:
        tokens = tuple(getattr(seq, "tokens", seq))
        grams = [tokens[i:i + n] for i in range(len(tokens) - n + 1)]
        total += len(grams)
        uniq.update(grams)
    return len(uniq) / total if total else 0.0


def nll_proxy(samples, oracle: OracleClassifier) -> float:
    """Mean per-token NLL under the oracle conditioned on intended targets.

    For a multi-aspect target the token distribution is the equal mixture
    of the targeted attributes' distributions; probabilities are floored by
    the oracle smoothing constant so off-support tokens stay finite.
    """
    total_tokens = 0
    total_nll = 0.0
    for targets, tokens in samples:
        targets = list(targets)
        if not targets:
            raise ValueError("nll_proxy needs at least one targeted aspect")
        toks = np.asarray(tuple(getattr(tokens, "tokens", tokens)),
                          dtype=np.int64)
        mix = np.zeros(oracle.vocab_size, dtype=np.float64)
        for n, j in targets:
            mix += oracle.probs[n][j]
        mix /= len(targets)
        total_nll += float(-np.log(mix[toks] + EPS_SMOOTH).sum())
        total_tokens += toks.size
    return total_nll / total_tokens if total_tokens else 0.0


# ---------------------------------------------------------------------------
# latent projections


def _power_iteration(cov: np.ndarray, iters: int = 500, tol: float = 1e-12):
    d = cov.shape[0]
    v = np.full(d, 1.0 / np.sqrt(d))
    lam = 0.0
    for _ in range(iters):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return np.zeros(d), 0.0
        w /= norm
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            v = w
            break
        v = w
    lam = float(v @ cov @ v)
    return v, lam


def project_latents(latents, n_components: int = 2):
    """Top principal-component scores via power iteration with deflation.

    Returns (scores [m, k], explained_variance_ratios [k]) with k <= 2;
    k shrinks (with a warning) when the covariance is rank-deficient.
    Component signs are fixed so each component's largest entry is positive.
    """
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two latent vectors")
    centered = x - x.mean(axis=0)
    cov = (centered.T @ centered) / (x.shape[0] - 1)
    total_var = float(np.trace(cov))
    if total_var <= 0.0:
        warnings.warn("all latents identical; projection is 0-dimensional",
                      RuntimeWarning)
        return np.zeros((x.shape[0], 0)), np.zeros(0)

    comps = []
    ratios = []
    deflated = cov.copy()
    for _ in range(n_components):
        v, lam = _power_iteration(deflated)
        if lam <= total_var * 1e-10:
            break
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        ratios.append(lam / total_var)
        deflated = deflated - lam * np.outer(v, v)
    if len(comps) < n_components:
        warnings.warn(
            f"covariance rank {len(comps)} < {n_components}; emitting "
            f"{len(comps)}-dimensional coordinates", RuntimeWarning)
    basis = np.stack(comps, axis=1) if comps else np.zeros((x.shape[1], 0))
    return centered @ basis, np.array(ratios)


def center_distance_ratio(latents, aspect_ids, attribute_ids) -> float:
    """(mean inter-aspect center distance) / (mean intra-aspect
    attribute-center distance) on labeled encodings."""
    x = np.asarray(latents, dtype=np.float64)
    aspect_ids = np.asarray(aspect_ids)
    attribute_ids = np.asarray(attribute_ids)
    aspects = sorted(set(aspect_ids.tolist()))
    aspect_centers = {n: x[aspect_ids == n].mean(axis=0) for n in aspects}
    inter = [np.linalg.norm(aspect_centers[a] - aspect_centers[b])
             for i, a in enumerate(aspects) for b in aspects[i + 1:]]
    intra = []
    for n in aspects:
        attrs = sorted(set(attribute_ids[aspect_ids == n].tolist()))
        centers = [x[(aspect_ids == n) & (attribute_ids == j)].mean(axis=0)
                   for j in attrs]
        intra.extend(np.linalg.norm(centers[i] - centers[k])
                     for i in range(len(centers))
                     for k in range(i + 1, len(centers)))
    if not inter or not intra:
        raise ValueError("need >= 2 aspects and >= 2 attributes per aspect")
    return float(np.mean(inter) / np.mean(intra))


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    """Per-combination metric rows plus their mean."""

    rows: list = field(default_factory=list)  # dicts keyed by column
    seconds_per_sample: float = 0.0
    n_samples: int = 0

    COLUMNS = ("combination", "correctness", "distinct1", "distinct2",
               "nll_proxy", "seconds_per_sample")

    def average_row(self) -> dict:
        if not self.rows:
            return {"combination": "average", "correctness": 0.0,
                    "distinct1": 0.0, "distinct2": 0.0, "nll_proxy": 0.0,
                    "seconds_per_sample": self.seconds_per_sample}
        avg = {"combination": "average"}
        for col in self.COLUMNS[1:-1]:
            avg[col] = sum(r[col] for r in self.rows) / len(self.rows)
        avg["seconds_per_sample"] = self.seconds_per_sample
        return avg

    def to_csv(self) -> str:
        lines = []
        if self.n_samples == 0:
            lines.append("# n=0")
        lines.append(",".join(self.COLUMNS))
        for r in self.rows + [self.average_row()]:
            lines.append(",".join(_fmt(r[c]) for c in self.COLUMNS))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        header = ["combination", "correctness", "distinct-1", "distinct-2",
                  "nll_proxy", "s/sample"]
        rows = [[r["combination"], f"{r['correctness']:.4f}",
                 f"{r['distinct1']:.4f}", f"{r['distinct2']:.4f}",
                 f"{r['nll_proxy']:.4f}", f"{r['seconds_per_sample']:.6f}"]
                for r in self.rows + [self.average_row()]]
        widths = [max(len(header[i]), *(len(row[i]) for row in rows))
                  for i in range(len(header))]
        def fmt_line(cells):
            return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        out = [fmt_line(header), fmt_line(["-" * w for w in widths])]
        out.extend(fmt_line(row) for row in rows)
        if self.n_samples == 0:
            out.append("(n=0: no samples evaluated)")
        return "\n".join(out) + "\n"


def _fmt(v) -> str:
    return v if isinstance(v, str) else repr(float(v))


def evaluate_samples(samples, oracle: OracleClassifier,
                     seconds_per_sample: float = 0.0) -> EvalReport:
    """Full metric report over (targets, tokens) samples, grouped by
    combination; distinct/nll are computed within each combination."""
    samples = list(samples)
    by_combo: dict = {}
    for targets, tokens in samples:
        by_combo.setdefault(combination_label(targets), []).append(
            (targets, tokens))
    report = EvalReport(seconds_per_sample=seconds_per_sample,
                        n_samples=len(samples))
    for label in sorted(by_combo):
        group = by_combo[label]
        _, acc = correctness(group, oracle)
        toks = [t for _, t in group]
        report.rows.append({
            "combination": label,
            "correctness": acc,
            "distinct1": distinct_n(toks, 1),
            "distinct2": distinct_n(toks, 2),
            "nll_proxy": nll_proxy(group, oracle),
            "seconds_per_sample": seconds_per_sample,
        })
    return report
