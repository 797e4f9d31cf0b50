"""Binary checkpoint container for model parameters.

Layout (all integers little-endian):
  magic   4 bytes  b"MLSA"
  version u16
  m_len   u32      metadata byte length
  meta    m_len    UTF-8 "key=value" lines (kind, dims, config hash, ...)
  count   u32      number of named tensors
  entry*  name_len u16, name UTF-8, rank u8, dims u32 each,
          row-major float32 little-endian data

Round-trips are bit-exact. Corruption (bad magic, truncated data) is
reported with the byte offset where reading failed.
"""

from __future__ import annotations

import struct

import numpy as np

from .energy import EnergyModel, LatentClassifier
from .ndmath import Rng, Tensor
from .samplers import GanPrior
from .vae import VaeModel

MAGIC = b"MLSA"
VERSION = 1
KINDS = ("vae", "energy", "gan")


class CheckpointError(ValueError):
    """Malformed, truncated, or mismatched checkpoint file."""


def save_checkpoint(path, kind: str, metadata: dict, tensors) -> None:
    if kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    meta = dict(metadata)
    meta["kind"] = kind
    meta_bytes = "\n".join(f"{k}={meta[k]}" for k in sorted(meta)).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        tensors = list(tensors)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            data = np.ascontiguousarray(
                arr.data if isinstance(arr, Tensor) else arr, dtype="<f4")
            name_b = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                f.write(struct.pack("<I", dim))
            f.write(data.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(
            f"truncated checkpoint: needed {n} bytes for {what} at byte "
            f"offset {f.tell() - len(data)}")
    return data


def load_checkpoint(path, expect_kind: str | None = None):
    """Returns (kind, metadata dict, {name: float32 array})."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise CheckpointError(
                f"bad magic {magic!r} at byte offset 0 (expected {MAGIC!r})")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (m_len,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        meta_raw = _read_exact(f, m_len, "metadata").decode("utf-8")
        metadata = {}
        for line in meta_raw.splitlines():
            key, _, value = line.partition("=")
            metadata[key] = value
        kind = metadata.get("kind", "")
        if kind not in KINDS:
            raise CheckpointError(f"checkpoint kind {kind!r} not recognized")
        if expect_kind is not None and kind != expect_kind:
            raise CheckpointError(
                f"checkpoint kind mismatch: expected {expect_kind!r}, "
                f"found {kind!r}")
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1, "tensor rank"))
            dims = tuple(
                struct.unpack("<I", _read_exact(f, 4, f"dim of {name}"))[0]
                for _ in range(rank))
            n_bytes = int(np.prod(dims, dtype=np.int64)) * 4 if dims else 4
            raw = _read_exact(f, n_bytes, f"data of {name}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(
                np.float32)
            tensors[name] = arr
        trailing = f.read(1)
        if trailing:
            raise CheckpointError(
                f"unexpected trailing bytes at byte offset {f.tell() - 1}")
    return kind, metadata, tensors


# ---------------------------------------------------------------------------
# model adapters


def _attrs_str(attrs) -> str:
    return ",".join(str(a) for a in attrs)


def _parse_attrs(s: str):
    return tuple(int(a) for a in s.split(","))


def save_vae(path, model: VaeModel, config_hash: str = "") -> None:
    meta = {
        "latent_dim": model.latent_dim,
        "vocab_size": model.vocab_size,
        "n_aspects": model.n_aspects,
        "attrs": _attrs_str(model.attrs_per_aspect),
        "max_len": model.max_len,
        "embed_dim": model.embed_dim,
        "hidden_dim": model.hidden_dim,
        "config_hash": config_hash,
    }
    save_checkpoint(path, "vae", meta, model.named_params())


def load_vae(path) -> VaeModel:
    _, meta, tensors = load_checkpoint(path, expect_kind="vae")
    model = VaeModel(
        vocab_size=int(meta["vocab_size"]),
        attrs_per_aspect=_parse_attrs(meta["attrs"]),
        max_len=int(meta["max_len"]),
        latent_dim=int(meta["latent_dim"]),
        embed_dim=int(meta["embed_dim"]),
        hidden_dim=int(meta["hidden_dim"]),
        rng=Rng(0))
    for name, param in model.named_params():
        if name not in tensors:
            raise CheckpointError(f"vae checkpoint missing tensor {name!r}")
        if tensors[name].shape != param.dims:
            raise CheckpointError(f"vae tensor {name!r} has wrong dims")
        param.data = tensors[name]
    return model


def save_energy(path, model: EnergyModel, config_hash: str = "") -> None:
    attrs = [clf.n_attributes for clf in model.classifiers]
    meta = {
        "latent_dim": model.latent_dim,
        "n_aspects": model.n_aspects,
        "attrs": _attrs_str(attrs),
        "hidden_dim": model.classifiers[0].hidden_dim,
        "linear": int(model.classifiers[0].linear),
        "config_hash": config_hash,
    }
    tensors = []
    for n, clf in enumerate(model.classifiers):
        tensors.append((f"clf{n}_w1", clf.w1))
        tensors.append((f"clf{n}_b1", clf.b1))
        if not clf.linear:
            tensors.append((f"clf{n}_w2", clf.w2))
            tensors.append((f"clf{n}_b2", clf.b2))
    save_checkpoint(path, "energy", meta, tensors)


def load_energy(path) -> EnergyModel:
    _, meta, tensors = load_checkpoint(path, expect_kind="energy")
    attrs = _parse_attrs(meta["attrs"])
    linear = bool(int(meta["linear"]))
    classifiers = []
    for n, k in enumerate(attrs):
        clf = LatentClassifier(int(meta["latent_dim"]), k,
                               hidden_dim=int(meta["hidden_dim"]),
                               linear=linear, rng=Rng(0))
        clf.w1.data = tensors[f"clf{n}_w1"]
        clf.b1.data = tensors[f"clf{n}_b1"]
        if not linear:
            clf.w2.data = tensors[f"clf{n}_w2"]
            clf.b2.data = tensors[f"clf{n}_b2"]
        classifiers.append(clf)
    return EnergyModel(classifiers)


def save_gan(path, gan: GanPrior, config_hash: str = "") -> None:
    meta = {
        "latent_dim": gan.latent_dim,
        "noise_dim": gan.noise_dim,
        "hidden_dim": gan.hidden_dim,
        "config_hash": config_hash,
    }
    tensors = [("gen_w", gan.gen_w), ("gen_b", gan.gen_b),
               ("disc_w1", gan.disc_w1), ("disc_b1", gan.disc_b1),
               ("disc_w2", gan.disc_w2), ("disc_b2", gan.disc_b2)]
    save_checkpoint(path, "gan", meta, tensors)


def load_gan(path) -> GanPrior:
    _, meta, tensors = load_checkpoint(path, expect_kind="gan")
    gan = GanPrior(int(meta["latent_dim"]), noise_dim=int(meta["noise_dim"]),
                   hidden_dim=int(meta["hidden_dim"]), rng=Rng(0))
    for name in ("gen_w", "gen_b", "disc_w1", "disc_b1", "disc_w2", "disc_b2"):
        getattr(gan, name).data = tensors[name]
    return gan
