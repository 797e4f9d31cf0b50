"""Drive the whole pipeline through the command-line interface.

Runs gen-data, train, train-clf, fit-gan, sample, and eval into a
temporary directory with reduced settings, then prints the metric table.
Equivalent shell usage:

    latentctrl gen-data --out runs/data
    latentctrl train     --out runs/vae  --corpus runs/data/corpus.tsv
    latentctrl train-clf --out runs/clf  --corpus runs/data/corpus.tsv --vae runs/vae/vae.ckpt
    latentctrl fit-gan   --out runs/gan  --corpus runs/data/corpus.tsv --vae runs/vae/vae.ckpt
    latentctrl sample    --out runs/s    --vae runs/vae/vae.ckpt \
                         --energy runs/clf/energy.ckpt --gan runs/gan/gan.ckpt -n 25
    latentctrl eval      --out runs/e    --samples runs/s/samples.tsv --oracle runs/data/oracle.tsv
"""

import tempfile
from pathlib import Path

from latentctrl.cli import main

small = ["--set", "corpus.sequences_per_attribute=300",
         "--set", "vae.epochs=12"]

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)

    def run(argv):
        code = main(argv)
        assert code == 0, f"command failed with exit code {code}: {argv}"

    run(["gen-data", "--out", str(root / "data")] + small)
    run(["train", "--out", str(root / "vae"),
         "--corpus", str(root / "data/corpus.tsv")] + small)
    run(["train-clf", "--out", str(root / "clf"),
         "--corpus", str(root / "data/corpus.tsv"),
         "--vae", str(root / "vae/vae.ckpt")] + small)
    run(["fit-gan", "--out", str(root / "gan"),
         "--corpus", str(root / "data/corpus.tsv"),
         "--vae", str(root / "vae/vae.ckpt")] + small)
    run(["sample", "--out", str(root / "samples"),
         "--vae", str(root / "vae/vae.ckpt"),
         "--energy", str(root / "clf/energy.ckpt"),
         "--gan", str(root / "gan/gan.ckpt"), "-n", "25"] + small)
    print("\nmetrics over the 8-combination grid:\n")
    run(["eval", "--out", str(root / "eval"),
         "--samples", str(root / "samples/samples.tsv"),
         "--oracle", str(root / "data/oracle.tsv")])
