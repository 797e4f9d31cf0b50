"""Synthetic multi-aspect token corpora and the exact scoring oracle.

Sequences carry exactly one (aspect, attribute) label. The generator gives
every attribute its own disjoint token block inside the vocabulary (token 0
is reserved as padding and never belongs to a block); each token comes from
the block with probability ``skew`` and is uniform over the whole vocabulary
otherwise. Because the generating distributions are known exactly, the
Bayes-optimal attribute classifier is available in closed form and serves
as the evaluation oracle.

Corpus files are line-oriented TSV:
``<aspect_id>\\t<attribute_id>\\t<space-separated token ids>``, with ``#``
comment lines; a header comment records vocab_size / aspect count /
attribute counts and is validated on load.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ndmath import Rng

PAD_TOKEN = 0
EPS_SMOOTH = 1e-9  # floor on oracle token probabilities; keeps NLL finite


class CorpusError(ValueError):
    """Invalid corpus configuration or malformed corpus file."""


@dataclass(frozen=True)
class TokenSequence:
    """One labeled sequence: integer tokens plus a single-aspect label."""

    tokens: tuple
    aspect_id: int
    attribute_id: int

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise CorpusError("sequence must hold at least one token")


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated corpus; defaults mirror the 2-aspect desk setup."""

    n_aspects: int = 2
    attrs_per_aspect: tuple = (2, 4)
    vocab_size: int = 64
    max_len: int = 16
    skew: float = 0.8
    sequences_per_attribute: int = 2000
    seed: int = 42

    def validate(self) -> None:
        if self.n_aspects < 1:
            raise CorpusError("need at least one aspect")
        if len(self.attrs_per_aspect) != self.n_aspects:
            raise CorpusError("attrs_per_aspect length must equal n_aspects")
        if any(a < 2 for a in self.attrs_per_aspect):
            raise CorpusError("every aspect needs at least two attributes")
        if not (0.0 <= self.skew <= 1.0):
            raise CorpusError("skew must lie in [0, 1]")
        if self.max_len < 1 or self.sequences_per_attribute < 1:
            raise CorpusError("max_len and sequences_per_attribute must be >= 1")
        floor = self.n_aspects * max(self.attrs_per_aspect) * 2
        if self.vocab_size < floor:
            raise CorpusError(
                f"vocab_size {self.vocab_size} below required minimum {floor} "
                f"(n_aspects * max attributes * 2)")
        if block_size(self.vocab_size, self.attrs_per_aspect) < 1:
            total = sum(self.attrs_per_aspect)
            raise CorpusError(
                f"vocab_size {self.vocab_size} cannot host {total} disjoint "
                f"attribute token blocks plus the pad token")


def block_size(vocab_size: int, attrs_per_aspect) -> int:
    """Tokens per attribute block; token 0 (pad) is excluded from blocks."""
    return (vocab_size - 1) // sum(attrs_per_aspect)


def attribute_block(vocab_size, attrs_per_aspect, aspect_id, attribute_id):
    """Half-open token range [lo, hi) owned by one attribute."""
    size = block_size(vocab_size, attrs_per_aspect)
    flat = sum(attrs_per_aspect[:aspect_id]) + attribute_id
    lo = 1 + flat * size
    return lo, lo + size


@dataclass
class CorpusIndex:
    """Index sets: per-attribute, per-aspect, and the full corpus."""

    by_attribute: dict = field(default_factory=dict)  # (n, j) -> list[int]

    def aspect_indices(self, n: int) -> list:
        out: list = []
        for (an, _), idxs in sorted(self.by_attribute.items()):
            if an == n:
                out.extend(idxs)
        return sorted(out)

    def all_indices(self) -> list:
        out: list = []
        for idxs in self.by_attribute.values():
            out.extend(idxs)
        return sorted(out)

    def check_partition(self, n_sequences: int) -> None:
        seen: set = set()
        for idxs in self.by_attribute.values():
            s = set(idxs)
            if s & seen:
                raise CorpusError("attribute index sets overlap")
            seen |= s
        if seen != set(range(n_sequences)):
            raise CorpusError("index sets do not cover the corpus exactly")


def index_corpus(sequences) -> CorpusIndex:
    idx = CorpusIndex()
    for i, seq in enumerate(sequences):
        idx.by_attribute.setdefault((seq.aspect_id, seq.attribute_id), []).append(i)
    idx.check_partition(len(sequences))
    return idx


@dataclass
class OracleClassifier:
    """Exact per-attribute token distributions of the generator.

    ``probs[n]`` is an array [|A_n|, vocab_size] of P(token | attribute).
    This is the Bayes classifier for the generating process, the strongest
    stand-in for a finetuned discriminator.
    """

    vocab_size: int
    attrs_per_aspect: tuple
    probs: list  # list of float64 arrays, one per aspect

    def validate(self) -> None:
        for n, table in enumerate(self.probs):
            if table.shape != (self.attrs_per_aspect[n], self.vocab_size):
                raise CorpusError(f"oracle table {n} has wrong shape")
            if np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-9):
                raise CorpusError(f"oracle table {n} rows must sum to 1")

    def log_likelihoods(self, tokens, aspect_id: int) -> np.ndarray:
        """Per-attribute sum of log P(token | attribute) over the sequence."""
        toks = np.asarray(tokens, dtype=np.int64)
        if toks.size and (toks.min() < 0 or toks.max() >= self.vocab_size):
            raise CorpusError("token id out of vocabulary range")
        logp = np.log(self.probs[aspect_id] + EPS_SMOOTH)
        return logp[:, toks].sum(axis=1)

    def classify(self, seq_or_tokens, aspect_id: int) -> int:
        tokens = getattr(seq_or_tokens, "tokens", seq_or_tokens)
        ll = self.log_likelihoods(tokens, aspect_id)
        return int(np.argmax(ll))  # argmax breaks ties toward smaller index


def oracle_for_spec(spec: SyntheticSpec) -> OracleClassifier:
    spec.validate()
    size = block_size(spec.vocab_size, spec.attrs_per_aspect)
    tables = []
    for n in range(spec.n_aspects):
        table = np.full((spec.attrs_per_aspect[n], spec.vocab_size),
                        (1.0 - spec.skew) / spec.vocab_size, dtype=np.float64)
        for j in range(spec.attrs_per_aspect[n]):
            lo, hi = attribute_block(spec.vocab_size, spec.attrs_per_aspect, n, j)
            table[j, lo:hi] += spec.skew / size
        tables.append(table)
    oracle = OracleClassifier(spec.vocab_size, tuple(spec.attrs_per_aspect), tables)
    oracle.validate()
    return oracle


def generate_synthetic(spec: SyntheticSpec):
    """Deterministic corpus draw: (sequences, index, oracle)."""
    spec.validate()
    oracle = oracle_for_spec(spec)
    rng = Rng(spec.seed)
    sequences = []
    for n in range(spec.n_aspects):
        for j in range(spec.attrs_per_aspect[n]):
            probs = oracle.probs[n][j]
            draws = rng.categorical(
                probs, size=(spec.sequences_per_attribute, spec.max_len))
            for row in draws:
                sequences.append(TokenSequence(tuple(int(t) for t in row), n, j))
    return sequences, index_corpus(sequences), oracle


def oracle_classify(oracle: OracleClassifier, seq, aspect_id: int) -> int:
    return oracle.classify(seq, aspect_id)


# ---------------------------------------------------------------------------
# file I/O


def _header_lines(vocab_size, n_aspects, attrs_per_aspect, extra=()):
    lines = [
        f"# vocab_size = {vocab_size}",
        f"# n_aspects = {n_aspects}",
        f"# attrs = {','.join(str(a) for a in attrs_per_aspect)}",
    ]
    lines.extend(extra)
    return lines


def _parse_header(lines, path):
    meta = {}
    for lineno, line in lines:
        body = line[1:].strip()
        if "=" not in body:
            continue
        key, _, value = body.partition("=")
        meta[key.strip()] = value.strip()
    for key in ("vocab_size", "n_aspects", "attrs"):
        if key not in meta:
            raise CorpusError(f"{path}: header comment missing '{key}'")
    vocab = int(meta["vocab_size"])
    n_aspects = int(meta["n_aspects"])
    attrs = tuple(int(a) for a in meta["attrs"].split(","))
    if len(attrs) != n_aspects:
        raise CorpusError(f"{path}: header attrs do not match n_aspects")
    return vocab, n_aspects, attrs, meta


def save_corpus(path, sequences, vocab_size, attrs_per_aspect) -> None:
    n_aspects = len(attrs_per_aspect)
    with open(path, "w", encoding="utf-8") as f:
        for line in _header_lines(vocab_size, n_aspects, attrs_per_aspect):
            f.write(line + "\n")
        for seq in sequences:
            toks = " ".join(str(t) for t in seq.tokens)
            f.write(f"{seq.aspect_id}\t{seq.attribute_id}\t{toks}\n")


def load_corpus(path):
    """Parse a corpus TSV; returns (sequences, index, vocab, attrs)."""
    header = []
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                header.append((lineno, line))
                continue
            rows.append((lineno, line))
    vocab, n_aspects, attrs, _ = _parse_header(header, path)

    sequences = []
    for lineno, line in rows:
        parts = line.split("\t")
        if len(parts) != 3:
            raise CorpusError(
                f"{path}:{lineno}: expected 3 tab-separated fields, "
                f"got {len(parts)}")
        try:
            aspect = int(parts[0])
            attribute = int(parts[1])
            tokens = tuple(int(t) for t in parts[2].split())
        except ValueError as e:
            raise CorpusError(f"{path}:{lineno}: {e}") from None
        if not (0 <= aspect < n_aspects):
            raise CorpusError(f"{path}:{lineno}: aspect {aspect} out of range")
        if not (0 <= attribute < attrs[aspect]):
            raise CorpusError(
                f"{path}:{lineno}: attribute {attribute} out of range for "
                f"aspect {aspect} (|A| = {attrs[aspect]})")
        if not tokens:
            raise CorpusError(f"{path}:{lineno}: empty token list")
        if any(t < 0 or t >= vocab for t in tokens):
            raise CorpusError(f"{path}:{lineno}: token id out of range")
        sequences.append(TokenSequence(tokens, aspect, attribute))
    return sequences, index_corpus(sequences), vocab, attrs


def save_oracle(path, oracle: OracleClassifier) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for line in _header_lines(oracle.vocab_size, len(oracle.attrs_per_aspect),
                                  oracle.attrs_per_aspect, ["# kind = oracle"]):
            f.write(line + "\n")
        for n, table in enumerate(oracle.probs):
            for j in range(table.shape[0]):
                probs = " ".join(repr(float(p)) for p in table[j])
                f.write(f"{n}\t{j}\t{probs}\n")


def load_oracle(path) -> OracleClassifier:
    header = []
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                header.append((lineno, line))
                continue
            rows.append((lineno, line))
    vocab, n_aspects, attrs, _ = _parse_header(header, path)
    tables = [np.zeros((attrs[n], vocab), dtype=np.float64)
              for n in range(n_aspects)]
    filled = set()
    for lineno, line in rows:
        parts = line.split("\t")
        if len(parts) != 3:
            raise CorpusError(f"{path}:{lineno}: expected 3 fields")
        n, j = int(parts[0]), int(parts[1])
        if not (0 <= n < n_aspects and 0 <= j < attrs[n]):
            raise CorpusError(f"{path}:{lineno}: attribute ({n},{j}) out of range")
        vals = np.array([float(v) for v in parts[2].split()], dtype=np.float64)
        if vals.size != vocab:
            raise CorpusError(
                f"{path}:{lineno}: expected {vocab} probabilities, got {vals.size}")
        tables[n][j] = vals
        filled.add((n, j))
    expected = {(n, j) for n in range(n_aspects) for j in range(attrs[n])}
    if filled != expected:
        raise CorpusError(f"{path}: missing attribute rows {expected - filled}")
    oracle = OracleClassifier(vocab, attrs, tables)
    oracle.validate()
    return oracle
