"""Command-line pipeline: gen-data, train, train-clf, fit-gan, sample,
eval, project, ablate.

Every command resolves its configuration (defaults < --config file <
--set overrides < --seed), echoes the effective config into the output
directory, and exits 0 on success, 1 on validation/config errors, and 2 on
numerical failures.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from . import config as cf
from . import corpus as cp
from . import evaluation as ev
from . import ndmath as nd
from . import samplers as sp
from . import vae as V
from .energy import AttributeTarget, train_latent_classifiers
from .ndmath import Rng


class ValidationError(ValueError):
    """User-facing input problem; maps to exit code 1."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentctrl",
        description="multi-attribute latent-space control pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="config file of 'key = value' lines")
        p.add_argument("--set", dest="sets", action="append", default=[],
                       metavar="K=V", help="override one config key")
        p.add_argument("--out", type=Path, required=True,
                       help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the root seed")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    common(p)

    p = sub.add_parser("train", help="train the sequence VAE")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)

    p = sub.add_parser("train-clf",
                       help="train latent attribute classifiers")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--vae", type=Path, required=True)

    p = sub.add_parser("fit-gan", help="fit the latent prior GAN")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--vae", type=Path, required=True)

    p = sub.add_parser("sample", help="draw and decode latent samples")
    common(p)
    p.add_argument("--vae", type=Path, required=True)
    p.add_argument("--energy", type=Path, required=True)
    p.add_argument("--gan", type=Path, default=None)
    p.add_argument("--sampler", choices=("ode", "ld", "random"),
                   default="ode")
    p.add_argument("--targets", action="append", default=None,
                   metavar="N:J[,N:J...]",
                   help="attribute combination; repeatable; default: grid")
    p.add_argument("-n", "--samples", type=int, default=50,
                   help="samples per combination")

    p = sub.add_parser("eval", help="score a samples file with the oracle")
    common(p)
    p.add_argument("--samples", type=Path, required=True)
    p.add_argument("--oracle", type=Path, required=True)

    p = sub.add_parser("project",
                       help="2-d projection of corpus encodings")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--vae", type=Path, required=True)

    p = sub.add_parser("ablate",
                       help="loss-ablation x sampler comparison grid")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--oracle", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        cfg = cf.resolve_config(
            cf.load_config_file(args.config) if args.config else None,
            args.sets, args.seed)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        handler = _COMMANDS[args.command]
        handler(args, cfg, out_dir)
        return 0
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    except (cf.ConfigError, cp.CorpusError, ck.CheckpointError,
            ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (nd.NumericsError, sp.SamplerError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


def _check_outputs(paths, force: bool) -> None:
    for p in paths:
        if p.exists() and not force:
            raise ValidationError(
                f"output {p} exists; pass --force to overwrite")


def _echo_config(cfg, out_dir: Path) -> None:
    (out_dir / "config.txt").write_text(cf.format_config(cfg),
                                        encoding="utf-8")


def _spec_from_config(cfg) -> cp.SyntheticSpec:
    return cp.SyntheticSpec(
        n_aspects=cfg["corpus.n_aspects"],
        attrs_per_aspect=cf.parse_int_list(cfg["corpus.attrs"]),
        vocab_size=cfg["corpus.vocab_size"],
        max_len=cfg["corpus.max_len"],
        skew=cfg["corpus.skew"],
        sequences_per_attribute=cfg["corpus.sequences_per_attribute"],
        seed=cfg["seed"])


def _build_vae(cfg, vocab, attrs, max_len, rng) -> V.VaeModel:
    model = V.VaeModel(vocab, attrs, max_len,
                       latent_dim=cfg["vae.latent_dim"],
                       embed_dim=cfg["vae.embed_dim"],
                       hidden_dim=cfg["vae.hidden_dim"], rng=rng)
    model.enc_lv_b.data[:] = np.float32(cfg["vae.logvar_bias_init"])
    return model


def _train_vae_from_config(cfg, sequences, index, vocab, attrs, max_len,
                           use_lc=None, use_ld=None):
    rng = Rng(cfg["seed"])
    model = _build_vae(cfg, vocab, attrs, max_len, rng.spawn(1))
    trace = V.train_vae(
        model, sequences, index,
        epochs=cfg["vae.epochs"], batch_size=cfg["vae.batch_size"],
        rng=rng.spawn(2), lr=cfg["vae.lr"],
        weight_decay=cfg["vae.weight_decay"],
        kl_cycle_epochs=cfg["vae.kl_cycle_epochs"],
        kl_ramp_fraction=cfg["vae.kl_ramp_fraction"],
        free_bits=cfg["vae.free_bits"],
        use_classification=(cfg["vae.use_classification_loss"]
                            if use_lc is None else use_lc),
        use_discrepancy=(cfg["vae.use_discrepancy_loss"]
                         if use_ld is None else use_ld))
    return model, trace


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, cfg, out_dir: Path) -> None:
    corpus_path = out_dir / "corpus.tsv"
    oracle_path = out_dir / "oracle.tsv"
    _check_outputs([corpus_path, oracle_path], args.force)
    spec = _spec_from_config(cfg)
    sequences, _, oracle = cp.generate_synthetic(spec)
    cp.save_corpus(corpus_path, sequences, spec.vocab_size,
                   spec.attrs_per_aspect)
    cp.save_oracle(oracle_path, oracle)
    _echo_config(cfg, out_dir)
    print(f"wrote {len(sequences)} sequences to {corpus_path}")


def _write_trace(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            repr(float(v)) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_train(args, cfg, out_dir: Path) -> None:
    ckpt = out_dir / "vae.ckpt"
    _check_outputs([ckpt], args.force)
    sequences, index, vocab, attrs = cp.load_corpus(args.corpus)
    model, trace = _train_vae_from_config(cfg, sequences, index, vocab, attrs,
                                          cfg["corpus.max_len"])
    ck.save_vae(ckpt, model, cf.config_hash(cfg))
    _write_trace(out_dir / "vae_trace.csv", ("epoch", "L_E", "L_C", "L_D"),
                 [(r["epoch"], r["L_E"], r["L_C"], r["L_D"]) for r in trace])
    _echo_config(cfg, out_dir)
    print(f"wrote {ckpt}")


def cmd_train_clf(args, cfg, out_dir: Path) -> None:
    ckpt = out_dir / "energy.ckpt"
    _check_outputs([ckpt], args.force)
    sequences, index, _, _ = cp.load_corpus(args.corpus)
    model = ck.load_vae(args.vae)
    energy, val_acc = train_latent_classifiers(
        model, sequences, index, epochs=cfg["energy.epochs"],
        rng=Rng(cfg["seed"]).spawn(3), hidden_dim=cfg["energy.hidden_dim"],
        linear=cfg["energy.linear"], lr=cfg["energy.lr"],
        batch_size=cfg["energy.batch_size"],
        val_fraction=cfg["energy.val_fraction"])
    ck.save_energy(ckpt, energy, cf.config_hash(cfg))
    _write_trace(out_dir / "clf_trace.csv", ("aspect", "val_accuracy"),
                 list(enumerate(val_acc)))
    _echo_config(cfg, out_dir)
    print(f"wrote {ckpt}; validation accuracy {val_acc}")


def cmd_fit_gan(args, cfg, out_dir: Path) -> None:
    ckpt = out_dir / "gan.ckpt"
    _check_outputs([ckpt], args.force)
    sequences, _, _, _ = cp.load_corpus(args.corpus)
    model = ck.load_vae(args.vae)
    gan, trace = sp.fit_gan_prior(
        model, sequences, epochs=cfg["gan.epochs"],
        rng=Rng(cfg["seed"]).spawn(4), lr=cfg["gan.lr"],
        batch_size=cfg["gan.batch_size"], hidden_dim=cfg["gan.hidden_dim"])
    ck.save_gan(ckpt, gan, cf.config_hash(cfg))
    _write_trace(out_dir / "gan_trace.csv", ("epoch", "disc_accuracy"),
                 [(r["epoch"], r["disc_accuracy"]) for r in trace])
    _echo_config(cfg, out_dir)
    print(f"wrote {ckpt}")


def _grid_combinations(attrs):
    combos = [()]
    for n, k in enumerate(attrs):
        combos = [c + ((n, j),) for c in combos for j in range(k)]
    return combos


def _parse_targets(specs, attrs):
    if specs is None:
        return _grid_combinations(attrs)
    combos = []
    for spec in specs:
        if spec.strip() == "grid":
            combos.extend(_grid_combinations(attrs))
            continue
        pairs = []
        for part in spec.replace(";", ",").split(","):
            n_s, sep, j_s = part.strip().partition(":")
            if not sep:
                raise ValidationError(
                    f"bad target {part!r}; expected ASPECT:ATTRIBUTE")
            try:
                n, j = int(n_s), int(j_s)
            except ValueError:
                raise ValidationError(
                    f"bad target {part!r}; expected integers") from None
            if not (0 <= n < len(attrs)):
                raise ValidationError(
                    f"aspect {n} unknown; valid aspects: "
                    f"{list(range(len(attrs)))}")
            if not (0 <= j < attrs[n]):
                raise ValidationError(
                    f"attribute {j} unknown for aspect {n}; valid: "
                    f"{list(range(attrs[n]))}")
            pairs.append((n, j))
        combos.append(tuple(pairs))
    return combos


def _lambda_for(cfg, combo):
    lams = cf.parse_float_list(cfg["sampler.lambda"])
    weights = []
    for n, _ in combo:
        if n >= len(lams):
            raise ValidationError(
                f"sampler.lambda has {len(lams)} entries; aspect {n} needs one")
        weights.append(lams[n])
    return weights


def _draw_for_combo(cfg, energy, gan, combo, n, rng):
    target = AttributeTarget.of(combo, _lambda_for(cfg, combo))
    schedule = sp.DiffusionSchedule(cfg["sampler.beta_min"],
                                    cfg["sampler.beta_max"],
                                    cfg["sampler.t_end"])
    sampler = cfg["_sampler"]
    if sampler == "ode":
        ode_cfg = sp.OdeConfig(method=cfg["sampler.method"],
                               steps=cfg["sampler.steps"],
                               rtol=cfg["sampler.rtol"],
                               atol=cfg["sampler.atol"],
                               init_mode=cfg["sampler.init"])
        return sp.sample_ode(energy, target, ode_cfg, schedule, gan=gan,
                             n_samples=n, rng=rng)
    if sampler == "ld":
        ld_cfg = sp.LdConfig(step_size=cfg["sampler.ld_step_size"],
                             n_steps=cfg["sampler.ld_steps"],
                             noise_scale=cfg["sampler.ld_noise"])
        return sp.sample_ld(energy, target, ld_cfg, n_samples=n, rng=rng)
    if sampler == "random":
        return sp.sample_random(gan=gan, dim=energy.latent_dim, n_samples=n,
                                rng=rng)
    raise ValidationError(f"unknown sampler {sampler!r}")


def _write_samples(path: Path, rows, vocab, attrs, sampler,
                   seconds_per_sample) -> None:
    lines = [
        f"# vocab_size = {vocab}",
        f"# n_aspects = {len(attrs)}",
        f"# attrs = {','.join(str(a) for a in attrs)}",
        f"# sampler = {sampler}",
        f"# seconds_per_sample = {seconds_per_sample!r}",
    ]
    for label, tokens in rows:
        lines.append(f"{label}\t{' '.join(str(t) for t in tokens)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_samples(path):
    """Parse a samples TSV into ([(targets, tokens)], seconds_per_sample)."""
    rows = []
    seconds = 0.0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("seconds_per_sample"):
                    seconds = float(body.partition("=")[2])
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValidationError(
                    f"{path}:{lineno}: expected 'targets<TAB>tokens'")
            targets = ev.parse_combination(parts[0])
            tokens = tuple(int(t) for t in parts[1].split())
            rows.append((targets, tokens))
    return rows, seconds


def _sample_rows(cfg, vae_model, energy, gan, combos, n, seed):
    """Draw, decode, and label n samples per combination."""
    rng = Rng(seed)
    rows = []
    for idx, combo in enumerate(sorted(combos)):
        if n == 0:
            continue
        zs = _draw_for_combo(cfg, energy, gan, combo, n, rng.spawn(idx))
        decoded = V.decode_batch(
            vae_model, zs, temperature=cfg["sampler.temperature"],
            rng=rng.spawn(50_000 + idx))
        label = ev.combination_label(combo)
        rows.extend((label, toks) for toks in decoded)
    return rows


def cmd_sample(args, cfg, out_dir: Path) -> None:
    out_path = out_dir / "samples.tsv"
    _check_outputs([out_path], args.force)
    vae_model = ck.load_vae(args.vae)
    energy = ck.load_energy(args.energy)
    gan = ck.load_gan(args.gan) if args.gan else None
    if args.sampler == "ode" and cfg["sampler.init"] == "gan" and gan is None:
        raise ValidationError(
            "sampler.init = gan requires --gan CHECKPOINT "
            "(or --set sampler.init=gaussian)")
    combos = _parse_targets(args.targets, vae_model.attrs_per_aspect)
    cfg = dict(cfg)
    cfg["_sampler"] = args.sampler
    start = time.perf_counter()
    rows = _sample_rows(cfg, vae_model, energy, gan, combos, args.samples,
                        cfg["seed"])
    elapsed = time.perf_counter() - start
    per_sample = elapsed / len(rows) if rows else 0.0
    _write_samples(out_path, rows, vae_model.vocab_size,
                   vae_model.attrs_per_aspect, args.sampler, per_sample)
    _echo_config({k: v for k, v in cfg.items() if not k.startswith("_")},
                 out_dir)
    print(f"wrote {len(rows)} samples to {out_path}")


def cmd_eval(args, cfg, out_dir: Path) -> None:
    report_csv = out_dir / "report.csv"
    _check_outputs([report_csv], args.force)
    if not Path(args.oracle).exists():
        raise ValidationError(f"oracle file {args.oracle} not found")
    oracle = cp.load_oracle(args.oracle)
    samples, seconds = load_samples(args.samples)
    report = ev.evaluate_samples(samples, oracle,
                                 seconds_per_sample=seconds)
    report_csv.write_text(report.to_csv(), encoding="utf-8")
    (out_dir / "report.txt").write_text(report.to_table(), encoding="utf-8")
    _echo_config(cfg, out_dir)
    print(report.to_table(), end="")


def cmd_project(args, cfg, out_dir: Path) -> None:
    out_path = out_dir / "projection.csv"
    _check_outputs([out_path], args.force)
    sequences, _, _, _ = cp.load_corpus(args.corpus)
    model = ck.load_vae(args.vae)
    latents = V.encode_mean_batch(model, sequences)
    scores, ratios = ev.project_latents(latents)
    lines = [f"# explained_variance_ratios = "
             f"{','.join(repr(float(r)) for r in ratios)}",
             "aspect,attribute," +
             ",".join(f"pc{i + 1}" for i in range(scores.shape[1]))]
    for seq, row in zip(sequences, scores):
        coords = ",".join(repr(float(v)) for v in row)
        lines.append(f"{seq.aspect_id},{seq.attribute_id},{coords}")
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _echo_config(cfg, out_dir)
    print(f"wrote {out_path}; explained variance ratios {ratios}")


ABLATE_CONDITIONS = ("full", "no_LC", "no_LD")
ABLATE_SAMPLERS = ("ode", "ld", "random", "ode-no-gan")


def cmd_ablate(args, cfg, out_dir: Path) -> None:
    csv_path = out_dir / "ablation.csv"
    _check_outputs([csv_path], args.force)
    sequences, index, vocab, attrs = cp.load_corpus(args.corpus)
    oracle = cp.load_oracle(args.oracle)
    n_per = cfg["ablate.samples_per_combination"]
    combos = _grid_combinations(attrs)

    held_spec = cp.SyntheticSpec(
        n_aspects=cfg["corpus.n_aspects"],
        attrs_per_aspect=cf.parse_int_list(cfg["corpus.attrs"]),
        vocab_size=cfg["corpus.vocab_size"],
        max_len=cfg["corpus.max_len"],
        skew=cfg["corpus.skew"],
        sequences_per_attribute=min(
            200, cfg["corpus.sequences_per_attribute"]),
        seed=cfg["seed"] + 1)
    held_seqs, _, _ = cp.generate_synthetic(held_spec)

    rows = []
    geometry = []
    timings = []
    for condition in ABLATE_CONDITIONS:
        cond_start = time.perf_counter()
        cond_dir = out_dir / f"cond_{condition}"
        cond_dir.mkdir(parents=True, exist_ok=True)
        try:
            vae_model, trace = _train_vae_from_config(
                cfg, sequences, index, vocab, attrs, cfg["corpus.max_len"],
                use_lc=(condition != "no_LC"),
                use_ld=(condition != "no_LD"))
            ck.save_vae(cond_dir / "vae.ckpt", vae_model, cf.config_hash(cfg))
            _write_trace(cond_dir / "vae_trace.csv",
                         ("epoch", "L_E", "L_C", "L_D"),
                         [(r["epoch"], r["L_E"], r["L_C"], r["L_D"])
                          for r in trace])
            energy, val_acc = train_latent_classifiers(
                vae_model, sequences, index, epochs=cfg["energy.epochs"],
                rng=Rng(cfg["seed"]).spawn(3),
                hidden_dim=cfg["energy.hidden_dim"],
                linear=cfg["energy.linear"], lr=cfg["energy.lr"],
                batch_size=cfg["energy.batch_size"],
                val_fraction=cfg["energy.val_fraction"])
            ck.save_energy(cond_dir / "energy.ckpt", energy,
                           cf.config_hash(cfg))
            gan, _ = sp.fit_gan_prior(
                vae_model, sequences, epochs=cfg["gan.epochs"],
                rng=Rng(cfg["seed"]).spawn(4), lr=cfg["gan.lr"],
                batch_size=cfg["gan.batch_size"],
                hidden_dim=cfg["gan.hidden_dim"])
            ck.save_gan(cond_dir / "gan.ckpt", gan, cf.config_hash(cfg))

            held_latents = V.encode_mean_batch(vae_model, held_seqs)
            geometry.append((condition, ev.center_distance_ratio(
                held_latents,
                [s.aspect_id for s in held_seqs],
                [s.attribute_id for s in held_seqs])))
        except (nd.NumericsError, sp.SamplerError, ValueError) as e:
            print(f"condition {condition} failed during training: {e}",
                  file=sys.stderr)
            for sampler in ABLATE_SAMPLERS:
                rows.append((condition, sampler, "failed", "", "", ""))
            continue

        for sampler in ABLATE_SAMPLERS:
            run_cfg = dict(cfg)
            run_cfg["_sampler"] = "ode" if sampler == "ode-no-gan" else sampler
            if sampler == "ode-no-gan":
                run_cfg["sampler.init"] = "gaussian"
            try:
                sample_rows = _sample_rows(
                    run_cfg, vae_model, energy,
                    None if sampler == "ode-no-gan" else gan,
                    combos, n_per, cfg["seed"])
                samples = [(ev.parse_combination(label), toks)
                           for label, toks in sample_rows]
                report = ev.evaluate_samples(samples, oracle)
                avg = report.average_row()
                rows.append((condition, sampler,
                             repr(float(avg["correctness"])),
                             repr(float(avg["distinct1"])),
                             repr(float(avg["distinct2"])),
                             repr(float(avg["nll_proxy"]))))
            except (nd.NumericsError, sp.SamplerError, ValueError) as e:
                print(f"condition {condition}/{sampler} failed: {e}",
                      file=sys.stderr)
                rows.append((condition, sampler, "failed", "", "", ""))
        timings.append((condition, time.perf_counter() - cond_start))

    lines = ["condition,sampler,correctness,distinct1,distinct2,nll_proxy"]
    lines.extend(",".join(r) for r in rows)
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_trace(out_dir / "geometry.csv", ("condition", "center_ratio"),
                 geometry)
    # wall-clock lives outside the .csv artifacts, which stay reproducible
    (out_dir / "timings.txt").write_text(
        "".join(f"{c} {t:.3f}\n" for c, t in timings), encoding="utf-8")
    _echo_config(cfg, out_dir)
    print(f"wrote {csv_path} ({len(rows)} condition rows)")


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "train-clf": cmd_train_clf,
    "fit-gan": cmd_fit_gan,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "project": cmd_project,
    "ablate": cmd_ablate,
}


if __name__ == "__main__":
    sys.exit(main())
