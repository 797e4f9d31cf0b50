import numpy as np
import pytest

from latentctrl import checkpoint as ck
from latentctrl.energy import EnergyModel, LatentClassifier
from latentctrl.ndmath import Rng
from latentctrl.samplers import GanPrior
from latentctrl.vae import VaeModel


def test_roundtrip_bit_exact(tmp_path):
    rng = Rng(1)
    tensors = [("a", rng.normal(size=(3, 4))),
               ("b", rng.normal(size=(7,))),
               ("scalar", np.array(2.5, dtype=np.float32))]
    path = tmp_path / "t.ckpt"
    ck.save_checkpoint(path, "vae", {"latent_dim": 4}, tensors)
    kind, meta, loaded = ck.load_checkpoint(path)
    assert kind == "vae"
    assert meta["latent_dim"] == "4"
    for name, arr in tensors:
        assert loaded[name].dtype == np.float32
        np.testing.assert_array_equal(loaded[name],
                                      np.asarray(arr, dtype=np.float32))


def test_save_is_deterministic(tmp_path):
    arr = Rng(2).normal(size=(5, 5))
    for name in ("a.ckpt", "b.ckpt"):
        ck.save_checkpoint(tmp_path / name, "gan", {"x": 1}, [("w", arr)])
    assert (tmp_path / "a.ckpt").read_bytes() == \
        (tmp_path / "b.ckpt").read_bytes()


def test_bad_magic_reports_offset(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ck.CheckpointError, match="byte offset 0"):
        ck.load_checkpoint(path)


def test_truncated_tensor_reports_offset(tmp_path):
    path = tmp_path / "t.ckpt"
    ck.save_checkpoint(path, "vae", {}, [("w", Rng(3).normal(size=(8, 8)))])
    blob = path.read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(blob[:-17])
    with pytest.raises(ck.CheckpointError, match="byte offset"):
        ck.load_checkpoint(tmp_path / "cut.ckpt")


def test_trailing_garbage_detected(tmp_path):
    path = tmp_path / "t.ckpt"
    ck.save_checkpoint(path, "vae", {}, [("w", np.zeros(3, dtype=np.float32))])
    (tmp_path / "pad.ckpt").write_bytes(path.read_bytes() + b"x")
    with pytest.raises(ck.CheckpointError, match="trailing"):
        ck.load_checkpoint(tmp_path / "pad.ckpt")


def test_kind_mismatch_names_both(tmp_path):
    path = tmp_path / "t.ckpt"
    ck.save_checkpoint(path, "gan", {}, [])
    with pytest.raises(ck.CheckpointError,
                       match="expected 'vae', found 'gan'"):
        ck.load_checkpoint(path, expect_kind="vae")


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(ck.CheckpointError):
        ck.save_checkpoint(tmp_path / "x.ckpt", "optimizer", {}, [])


def test_vae_model_roundtrip(tmp_path):
    model = VaeModel(vocab_size=12, attrs_per_aspect=(2, 3), max_len=4,
                     latent_dim=6, embed_dim=5, hidden_dim=7, rng=Rng(4))
    path = tmp_path / "vae.ckpt"
    ck.save_vae(path, model, config_hash="abc123")
    loaded = ck.load_vae(path)
    assert loaded.attrs_per_aspect == (2, 3)
    assert loaded.max_len == 4
    for (name_a, pa), (name_b, pb) in zip(model.named_params(),
                                          loaded.named_params()):
        assert name_a == name_b
        np.testing.assert_array_equal(pa.data, pb.data)


def test_energy_model_roundtrip(tmp_path):
    rng = Rng(5)
    model = EnergyModel([
        LatentClassifier(6, 2, hidden_dim=9, rng=rng.spawn(0)),
        LatentClassifier(6, 4, hidden_dim=9, rng=rng.spawn(1))])
    path = tmp_path / "energy.ckpt"
    ck.save_energy(path, model)
    loaded = ck.load_energy(path)
    assert loaded.n_aspects == 2
    z = Rng(6).normal(size=(3, 6))
    for n in range(2):
        a = model.classifiers[n].logits(
            __import__("latentctrl.ndmath", fromlist=["Tensor"]).Tensor(z)).data
        b = loaded.classifiers[n].logits(
            __import__("latentctrl.ndmath", fromlist=["Tensor"]).Tensor(z)).data
        np.testing.assert_array_equal(a, b)


def test_gan_roundtrip(tmp_path):
    gan = GanPrior(latent_dim=5, hidden_dim=11, rng=Rng(7))
    path = tmp_path / "gan.ckpt"
    ck.save_gan(path, gan)
    loaded = ck.load_gan(path)
    np.testing.assert_array_equal(gan.sample(Rng(8), 10),
                                  loaded.sample(Rng(8), 10))
