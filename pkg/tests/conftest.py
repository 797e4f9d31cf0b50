import time
from types import SimpleNamespace

import pytest

from latentctrl import checkpoint as ck
from latentctrl import corpus as cp
from latentctrl import vae as V
from latentctrl.cli import main
from latentctrl.energy import train_latent_classifiers
from latentctrl.ndmath import Rng

# settings used to demonstrate high-fidelity reconstruction at skew = 1.0;
# larger code capacity than the pipeline defaults (see decode tests)
RECON_SETTINGS = dict(latent_dim=64, embed_dim=32, hidden_dim=128,
                      free_bits=1.2, lr=3e-3, epochs=30, batch_size=64,
                      logvar_bias_init=-4.0)


def _parse_ablation_csv(path):
    rows = {}
    lines = path.read_text().splitlines()
    for line in lines[1:]:
        cond, sampler, corr, d1, d2, nll = line.split(",")
        rows[(cond, sampler)] = SimpleNamespace(
            correctness=None if corr == "failed" else float(corr),
            distinct1=float(d1) if d1 else None,
            distinct2=float(d2) if d2 else None,
            nll_proxy=float(nll) if nll else None)
    return rows


@pytest.fixture(scope="session")
def ablate_run(tmp_path_factory):
    """One default-config ablation grid over the default synthetic corpus.

    Supplies the comparative numbers for the sampler ordering, the loss
    ablations, the latent geometry ratios, and the trained checkpoints of
    every condition.
    """
    root = tmp_path_factory.mktemp("ablate")
    data = root / "data"
    assert main(["gen-data", "--out", str(data)]) == 0
    run = root / "run"
    start = time.perf_counter()
    assert main(["ablate", "--out", str(run), "--corpus",
                 str(data / "corpus.tsv"), "--oracle",
                 str(data / "oracle.tsv")]) == 0
    elapsed = time.perf_counter() - start

    geometry = {}
    for line in (run / "geometry.csv").read_text().splitlines()[1:]:
        cond, ratio = line.split(",")
        geometry[cond] = float(ratio)
    timings = {}
    for line in (run / "timings.txt").read_text().splitlines():
        cond, seconds = line.split()
        timings[cond] = float(seconds)
    return SimpleNamespace(
        dir=run,
        data_dir=data,
        rows=_parse_ablation_csv(run / "ablation.csv"),
        geometry=geometry,
        timings=timings,
        elapsed=elapsed)


@pytest.fixture(scope="session")
def full_models(ablate_run):
    """Trained models of the ablation's un-ablated condition."""
    cond = ablate_run.dir / "cond_full"
    return SimpleNamespace(
        vae=ck.load_vae(cond / "vae.ckpt"),
        energy=ck.load_energy(cond / "energy.ckpt"),
        gan=ck.load_gan(cond / "gan.ckpt"))


@pytest.fixture(scope="session")
def skew1_pipeline():
    """Fully separable corpus (skew = 1.0) with a high-capacity VAE.

    Used by the reconstruction oracle and the separable-blocks classifier
    checks; 90/10 train/held-out split.
    """
    spec = cp.SyntheticSpec(skew=1.0, sequences_per_attribute=2000, seed=42)
    sequences, _, oracle = cp.generate_synthetic(spec)
    train = [s for i, s in enumerate(sequences) if i % 10 != 0]
    held = [s for i, s in enumerate(sequences) if i % 10 == 0]
    index = cp.index_corpus(train)

    rng = Rng(42)
    model = V.VaeModel(spec.vocab_size, spec.attrs_per_aspect, spec.max_len,
                       latent_dim=RECON_SETTINGS["latent_dim"],
                       embed_dim=RECON_SETTINGS["embed_dim"],
                       hidden_dim=RECON_SETTINGS["hidden_dim"],
                       rng=rng.spawn(1))
    model.enc_lv_b.data[:] = RECON_SETTINGS["logvar_bias_init"]
    V.train_vae(model, train, index,
                epochs=RECON_SETTINGS["epochs"],
                batch_size=RECON_SETTINGS["batch_size"],
                rng=rng.spawn(2), lr=RECON_SETTINGS["lr"],
                free_bits=RECON_SETTINGS["free_bits"])
    energy, val_acc = train_latent_classifiers(model, train, index,
                                               epochs=10, rng=rng.spawn(3))
    return SimpleNamespace(spec=spec, train=train, held=held, index=index,
                           oracle=oracle, vae=model, energy=energy,
                           val_accuracy=val_acc)
