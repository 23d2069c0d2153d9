"""Operator front end for the whole pipeline.

One ``lexalign`` command covers data generation, latent pretraining,
training, evaluation, consensus fusion, vocabulary-reduction baselines, a
lambda2 sweep, and plot emission. Every subcommand writes a ``run.json``
manifest (config, seed, artifact hashes) beside its outputs, so any
artifact is reproducible from the manifest alone. Config values come from
defaults, then an optional JSON config file, then explicit flags.
"""

import argparse
import hashlib
import json
import subprocess
import sys
from dataclasses import asdict, dataclass, fields, replace
from html import escape
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import ensemble, hybrid, losses, metrics
from . import model as model_mod
from . import vocab as vocab_mod

PAPER_DIMS = {"d_u": 512, "reduced_dim": 50, "v_latent": 40000, "k": 5000,
              "d_img": 2048, "feature_dim": 2048}

SWEEP_GRID = "1e-6,1e-5,1e-4,1e-3,1e-2,1e-1"


@dataclass
class RunConfig:
    """Every knob of every stage, flat and JSON-serializable."""

    seed: int = 7
    # synthetic corpus
    images: int = 200
    languages: int = 4
    concepts: int = 60
    vocab: int = 300
    synonym_rate: float = 0.8
    sentence_min: int = 4
    sentence_max: int = 8
    sentences_per_image: int = 2
    word_dim: int = 30
    feature_dim: int = 128
    split_train: float = 0.5
    split_val: float = 0.2
    split_test: float = 0.3
    zipf_exponent: float = 1.1
    # embedding network
    d_img: int = 128
    d_j: int = 64
    d_u: int = 64
    reduced_dim: int = 10
    v_latent: int = 200
    k: int = 30
    vocab_mode: str = "hybrid"
    adv_hidden: int = 64
    model_languages: list = None
    # optimization
    epochs: int = 30
    batch_size: int = 32
    lr: float = 5e-3
    pretrain_epochs: int = 5
    pretrain_lr: float = 1e-3
    # loss weights
    lambda1: float = 1.5
    lambda2: float = 1e-4
    lambda3: float = 1e-6
    lambda4: float = 5e-2
    margin: float = 0.05
    top_n: int = 10
    mask_ratio: float = 0.2
    # latent pretraining exploration
    explore_p: float = 0.2
    explore_m: int = 20
    # consensus classifier
    clc_iterations: int = 30
    clc_lr: float = 1e-2
    clc_trainable_output: bool = False
    # simulated translation
    trans_seed: int = 0
    trans_noise: float = 0.0
    # vocabulary-reduction baselines
    threshold: int = 2
    pca_dim: int = 10


def config_hash(cfg):
    blob = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def corpus_config(cfg):
    return corpus_mod.CorpusConfig(
        seed=cfg.seed, num_images=cfg.images, num_languages=cfg.languages,
        concepts=cfg.concepts, vocab_per_lang=cfg.vocab,
        synonym_rate=cfg.synonym_rate,
        sentence_len=(cfg.sentence_min, cfg.sentence_max),
        sentences_per_image=cfg.sentences_per_image, word_dim=cfg.word_dim,
        feature_dim=cfg.feature_dim, zipf_exponent=cfg.zipf_exponent,
        split_fractions=(cfg.split_train, cfg.split_val, cfg.split_test))


def loss_weights(cfg):
    return losses.LossWeights(
        lambda1=cfg.lambda1, lambda2=cfg.lambda2, lambda3=cfg.lambda3,
        lambda4=cfg.lambda4, margin=cfg.margin, top_n=cfg.top_n,
        mask_ratio=cfg.mask_ratio)


def model_config(cfg, **over):
    kw = dict(languages=cfg.model_languages, d_img=cfg.d_img, d_j=cfg.d_j,
              d_u=cfg.d_u, reduced_dim=cfg.reduced_dim,
              v_latent=cfg.v_latent, k=cfg.k, vocab_mode=cfg.vocab_mode,
              weights=loss_weights(cfg),
              explore=hybrid.ExplorationConfig(p=cfg.explore_p,
                                               M=cfg.explore_m),
              adv_hidden=cfg.adv_hidden, epochs=cfg.epochs,
              batch_size=cfg.batch_size, lr=cfg.lr,
              pretrain_epochs=cfg.pretrain_epochs,
              pretrain_lr=cfg.pretrain_lr, seed=cfg.seed)
    kw.update(over)
    return model_mod.ModelConfig(**kw)


# ------------------------------------------------------------ config loading

def _csv_list(text):
    return [t for t in text.split(",") if t]


def add_config_flags(parser):
    g = parser.add_argument_group(
        "config", "defaults < --config file < explicit flags")
    g.add_argument("--config", metavar="FILE",
                   help="JSON file of config fields; flags override it")
    g.add_argument("--paper-dims", action="store_true", default=None,
                   help="paper-scale dims (D_u 512, reduced 50, V_latent "
                        "40000, K 5000, image features 2048)")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "model_languages":
            g.add_argument(flag, type=_csv_list, default=None,
                           metavar="L0,L1,...", help="restrict training "
                           "languages (default: all in the corpus)")
        elif f.name == "clc_trainable_output":
            g.add_argument(flag, action="store_true", default=None,
                           help="learn the consensus output layer too "
                                "(adds 33 parameters)")
        elif f.name == "vocab_mode":
            g.add_argument(flag, choices=("hybrid", "per-word"),
                           default=None)
        else:
            g.add_argument(flag, type=f.type, default=None,
                           metavar=f.type.__name__.upper())


def load_run_config(args):
    cfg = asdict(RunConfig())
    path = getattr(args, "config", None)
    if path:
        with open(path) as fh:
            file_cfg = json.load(fh)
        unknown = sorted(set(file_cfg) - set(cfg))
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        cfg.update(file_cfg)
    if getattr(args, "paper_dims", None):
        cfg.update(PAPER_DIMS)
    for name in cfg:
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    return RunConfig(**cfg)


# ------------------------------------------------------------- run manifests

def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _git_describe():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, cwd=Path(__file__).parent,
            timeout=10)
        return out.stdout.strip() or "unavailable"
    except OSError:
        return "unavailable"


def write_run_json(out_dir, label, cfg, paths, artifacts, extra=None):
    manifest = {
        "label": label,
        "config": asdict(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "git": _git_describe(),
        "paths": {k: str(v) for k, v in paths.items()},
        "artifacts": {name: sha256_file(Path(out_dir) / name)
                      for name in artifacts},
    }
    manifest.update(extra or {})
    target = Path(out_dir) / "run.json"
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return target


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(data_dir):
    data = Path(data_dir)
    corpus = corpus_mod.load_corpus_jsonl(data / "corpus.jsonl")
    embeddings = corpus_mod.load_vectors_tsv(data / "vectors.tsv")
    return corpus, embeddings


def _translator(cfg, corpus):
    return corpus_mod.Translator(corpus, seed=cfg.trans_seed,
                                 noise_rate=cfg.trans_noise)


def _print_report(report):
    for lang, m in report.per_language.items():
        print(f"{lang}: mR {m.mr:.1f}")
    print(f"HA {report.ha:.1f}  A {report.a:.1f}")


def _evaluate_and_write(model, corpus, cfg, args, out, mode, clc=None):
    translator = None
    if mode != metrics.DIRECT:
        translator = _translator(cfg, corpus)
    report = metrics.evaluate_model(model, corpus, args.split, mode=mode,
                                    translator=translator, clc=clc)
    metrics.write_metrics_csv(report, out / "metrics.csv")
    _print_report(report)
    return report


# -------------------------------------------------------------- subcommands

def cmd_gen_data(args):
    cfg = load_run_config(args)
    out = _out_dir(args)
    corpus, embeddings = corpus_mod.generate_synthetic(corpus_config(cfg))
    corpus_mod.save_corpus_jsonl(corpus, out / "corpus.jsonl")
    corpus_mod.save_vectors_tsv(embeddings, out / "vectors.tsv")
    write_run_json(out, "gen-data", cfg, {"out": out},
                   ["corpus.jsonl", "vectors.tsv"])
    print(f"{out / 'corpus.jsonl'}: {len(corpus.images)} images, "
          f"{len(corpus.sentences)} sentences, "
          f"{len(corpus.languages)} languages")
    return 0


def cmd_pretrain_latent(args):
    cfg = load_run_config(args)
    out = _out_dir(args)
    corpus, embeddings = _load_data(args.data)
    stats = vocab_mod.count_frequencies(corpus)
    split = vocab_mod.split_top_k(stats, cfg.k)
    emb = {l: embeddings[l] for l in corpus.languages}
    reduced, _ = vocab_mod.reduce_embeddings(emb, cfg.reduced_dim)
    pcfg = hybrid.PretrainConfig(
        v_latent=cfg.v_latent, d_u=cfg.d_u, margin=cfg.margin,
        top_n=cfg.top_n,
        explore=hybrid.ExplorationConfig(p=cfg.explore_p, M=cfg.explore_m),
        epochs=cfg.pretrain_epochs, batch_size=cfg.batch_size,
        lr=cfg.pretrain_lr, seed=cfg.seed)
    result = hybrid.pretrain_latent(corpus, reduced, split, pcfg)
    hybrid.save_pretrained(result, out / "latent.ckpt")
    used = int(result.latent.used_mask.sum())
    write_run_json(out, "pretrain-latent", cfg,
                   {"data": args.data, "out": out}, ["latent.ckpt"],
                   extra={"latent_rows_used": used,
                          "epoch_losses": [float(v)
                                           for v in result.epoch_losses]})
    print(f"{out / 'latent.ckpt'}: {used}/{result.latent.rows} latent rows "
          f"in use")
    return 0


def cmd_train(args):
    cfg = load_run_config(args)
    out = _out_dir(args)
    corpus, embeddings = _load_data(args.data)
    pretrained = None
    if args.pretrained:
        pretrained = hybrid.load_pretrained(args.pretrained)
    model, rows = model_mod.train(corpus, embeddings, model_config(cfg),
                                  pretrained=pretrained)
    model_mod.save_model(model, out / "model.ckpt")
    model_mod.write_train_log(rows, out / "train_log.csv")
    report = _evaluate_and_write(model, corpus, cfg, args, out,
                                 metrics.DIRECT)
    write_run_json(out, "train", cfg, {"data": args.data, "out": out},
                   ["model.ckpt", "train_log.csv", "metrics.csv"],
                   extra={"parameter_count":
                          hybrid.parameter_count(model.embedder),
                          "best_epoch": model.metadata["best_epoch"],
                          "split": args.split, "A": report.a})
    return 0


_EVAL_MODES = {"direct": metrics.DIRECT,
               "trans-to-pivot": metrics.TRANS_TO_PIVOT,
               "clc-a": metrics.CLC_A, "clc-c": metrics.CLC_C}


def cmd_eval(args):
    cfg = load_run_config(args)
    out = _out_dir(args)
    corpus, _ = _load_data(args.data)
    model = model_mod.load_model(args.model)
    mode = _EVAL_MODES[args.mode]
    clc = ensemble.load_clc(args.clc) if args.clc else None
    report = _evaluate_and_write(model, corpus, cfg, args, out, mode,
                                 clc=clc)
    write_run_json(out, f"eval-{args.mode}", cfg,
                   {"data": args.data, "model": args.model, "out": out},
                   ["metrics.csv"],
                   extra={"parameter_count":
                          hybrid.parameter_count(model.embedder),
                          "mode": args.mode, "split": args.split,
                          "A": report.a})
    return 0


def cmd_clc_train(args):
    cfg = load_run_config(args)
    out = _out_dir(args)
    corpus, _ = _load_data(args.data)
    model = model_mod.load_model(args.model)
    translator = _translator(cfg, corpus)
    human = [l for l in corpus.human_languages() if l in model.languages]
    if not human:
        raise ValueError("model covers no human-annotated language")
    tables = [ensemble.split_score_vectors(model, corpus, args.split, lang,
                                           translator)
              for lang in human]
    clc = ensemble.init_clc(model.languages, seed=cfg.seed,
                            trainable_output=bool(cfg.clc_trainable_output))
    clc, history = ensemble.train_clc(clc, tables,
                                      iterations=cfg.clc_iterations,
                                      weights=loss_weights(cfg),
                                      lr=cfg.clc_lr)
    ensemble.save_clc(clc, out / "clc.tsv")
    log = ["iteration,loss"]
    log += [f"{i},{repr(v)}" for i, v in enumerate(history)]
    (out / "clc_log.csv").write_text("\n".join(log) + "\n")
    write_run_json(out, "clc-train", cfg,
                   {"data": args.data, "model": args.model, "out": out},
                   ["clc.tsv", "clc_log.csv"],
                   extra={"clc_parameters": ensemble.parameter_count(clc),
                          "split": args.split,
                          "query_languages": human})
    first = f"{history[0]:.4f}" if history else "n/a"
    last = f"{history[-1]:.4f}" if history else "n/a"
    print(f"{out / 'clc.tsv'}: {ensemble.parameter_count(clc)} learnable "
          f"parameters, loss {first} -> {last}")
    return 0


def cmd_clc_eval(args):
    cfg = load_run_config(args)
    out = _out_dir(args)
    corpus, _ = _load_data(args.data)
    model = model_mod.load_model(args.model)
    if args.mode == "classifier":
        if not args.clc:
            raise ValueError("--clc FILE is required for classifier fusion")
        mode, clc = metrics.CLC_C, ensemble.load_clc(args.clc)
    else:
        mode, clc = metrics.CLC_A, None
    report = _evaluate_and_write(model, corpus, cfg, args, out, mode,
                                 clc=clc)
    write_run_json(out, f"clc-eval-{args.mode}", cfg,
                   {"data": args.data, "model": args.model, "out": out},
                   ["metrics.csv"],
                   extra={"mode": args.mode, "split": args.split,
                          "A": report.a})
    return 0


def _baseline_model(cfg, corpus, embeddings, variant, out):
    """Baseline embedder variants wrapped into untrained models."""
    stats = vocab_mod.count_frequencies(corpus)
    if variant == "pca":
        emb = {l: embeddings[l] for l in corpus.languages}
        tables, _ = vocab_mod.reduce_embeddings(emb, cfg.pca_dim)
        vmap = None
    else:
        if variant == "freq":
            red = vocab_mod.frequency_threshold(stats, cfg.threshold)
        else:
            pivot = corpus.languages[0]
            dictionary = vocab_mod.build_concept_dictionary(corpus, pivot,
                                                            stats)
            vocab_mod.save_dict_tsv(dictionary, out / "dict.tsv")
            red = vocab_mod.dictionary_map(stats, cfg.threshold, dictionary,
                                           pivot)
        vmap, kept = vocab_mod.compact_vocab(red)
        empty = [l for l in corpus.languages if not kept.get(l)]
        if empty:
            raise ValueError(f"threshold {cfg.threshold} keeps no words "
                             f"for {empty}")
        rng = np.random.default_rng((cfg.seed, 15))
        tables = {l: rng.normal(0, 1 / np.sqrt(cfg.d_u),
                                (len(kept[l]), cfg.d_u))
                  for l in corpus.languages}
    embedder = hybrid.build_free_embedder(corpus.languages, tables, cfg.d_u,
                                          cfg.seed, vocab_map=vmap)
    mcfg = model_config(cfg, vocab_mode="per-word")
    return model_mod.model_from_embedder(embedder, mcfg), mcfg


def cmd_baseline(args):
    cfg = load_run_config(args)
    out = _out_dir(args)
    corpus, embeddings = _load_data(args.data)
    variant = args.variant
    artifacts = ["model.ckpt", "train_log.csv", "metrics.csv"]
    eval_mode = metrics.DIRECT
    prebuilt = None
    if variant == "la":
        mcfg = model_config(cfg, k=0)
    elif variant == "trans-pivot":
        mcfg = model_config(cfg, languages=[corpus.languages[0]])
        eval_mode = metrics.TRANS_TO_PIVOT
    else:
        prebuilt, mcfg = _baseline_model(cfg, corpus, embeddings, variant,
                                         out)
        if variant == "dict":
            artifacts.append("dict.tsv")
    model, rows = model_mod.train(corpus, embeddings, mcfg, model=prebuilt)
    model_mod.save_model(model, out / "model.ckpt")
    model_mod.write_train_log(rows, out / "train_log.csv")
    report = _evaluate_and_write(model, corpus, cfg, args, out, eval_mode)
    write_run_json(out, f"baseline-{variant}", cfg,
                   {"data": args.data, "out": out}, artifacts,
                   extra={"parameter_count":
                          hybrid.parameter_count(model.embedder),
                          "variant": variant, "split": args.split,
                          "A": report.a})
    return 0


def cmd_sweep(args):
    cfg = load_run_config(args)
    out = _out_dir(args)
    corpus, embeddings = _load_data(args.data)
    tokens = _csv_list(args.grid)
    if not tokens:
        raise ValueError("empty sweep grid")
    rows = []
    for token in tokens:
        point = replace(cfg, lambda2=float(token))
        model, _ = model_mod.train(corpus, embeddings, model_config(point))
        report = metrics.evaluate_model(model, corpus, args.split)
        rows.append((token, report.a))
        print(f"lambda2 {token}: A {report.a:.1f}")
    lines = ["lambda2,A"] + [f"{t},{a:.1f}" for t, a in rows]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    write_run_json(out, "sweep-lambda2", cfg,
                   {"data": args.data, "out": out}, ["sweep.csv"],
                   extra={"grid": tokens, "split": args.split})
    return 0


# ------------------------------------------------------------------ plotting

def _svg_scatter(points, title):
    """Parameter-count vs score scatter, emitted directly as SVG text."""
    w, h, ml, mr, mt, mb = 640, 400, 80, 30, 40, 60
    xs = [p[1] for p in points]
    ys = [p[2] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_pad = (x_hi - x_lo) * 0.08 or max(x_hi, 1) * 0.08
    y_pad = (y_hi - y_lo) * 0.12 or 1.0
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def px(v):
        return ml + (v - x_lo) / (x_hi - x_lo) * (w - ml - mr)

    def py(v):
        return h - mb - (v - y_lo) / (y_hi - y_lo) * (h - mt - mb)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" '
             f'height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" '
             f'font-size="12">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<text x="{w / 2:.0f}" y="20" text-anchor="middle" '
             f'font-size="14">{escape(title)}</text>']
    axis = 'stroke="black" stroke-width="1"'
    parts.append(f'<line x1="{ml}" y1="{h - mb}" x2="{w - mr}" '
                 f'y2="{h - mb}" {axis}/>')
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{h - mb}" '
                 f'{axis}/>')
    for i in range(5):
        xv = x_lo + (x_hi - x_lo) * i / 4
        yv = y_lo + (y_hi - y_lo) * i / 4
        parts.append(f'<line x1="{px(xv):.1f}" y1="{h - mb}" '
                     f'x2="{px(xv):.1f}" y2="{h - mb + 5}" {axis}/>')
        parts.append(f'<text x="{px(xv):.1f}" y="{h - mb + 20}" '
                     f'text-anchor="middle">{int(round(xv)):,}</text>')
        parts.append(f'<line x1="{ml - 5}" y1="{py(yv):.1f}" x2="{ml}" '
                     f'y2="{py(yv):.1f}" {axis}/>')
        parts.append(f'<text x="{ml - 8}" y="{py(yv) + 4:.1f}" '
                     f'text-anchor="end">{yv:.1f}</text>')
    parts.append(f'<text x="{(ml + w - mr) / 2:.0f}" y="{h - 15}" '
                 f'text-anchor="middle">embedding parameters</text>')
    parts.append(f'<text x="20" y="{(mt + h - mb) / 2:.0f}" '
                 f'text-anchor="middle" transform="rotate(-90 20 '
                 f'{(mt + h - mb) / 2:.0f})">A (average mR)</text>')
    for label, x, y in points:
        parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="5" '
                     f'fill="#27648f"/>')
        parts.append(f'<text x="{px(x) + 8:.1f}" y="{py(y) - 6:.1f}">'
                     f'{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args):
    cfg = load_run_config(args)
    out = _out_dir(args)
    points = []
    for run_dir in _csv_list(args.runs):
        run = Path(run_dir)
        manifest = json.loads((run / "run.json").read_text())
        if "parameter_count" not in manifest:
            raise ValueError(f"{run / 'run.json'} records no "
                             "parameter_count; point it at a train or "
                             "baseline run")
        _, _, a = metrics.read_metrics_csv(run / "metrics.csv")
        points.append((manifest["label"], manifest["parameter_count"], a))
    if not points:
        raise ValueError("no runs to plot")
    points.sort(key=lambda p: p[1])
    lines = ["label,parameters,A"]
    lines += [f"{label},{n},{a:.1f}" for label, n, a in points]
    (out / "plot.csv").write_text("\n".join(lines) + "\n")
    svg = _svg_scatter(points, "Retrieval quality vs embedding size")
    (out / "plot.svg").write_text(svg)
    write_run_json(out, "plot", cfg, {"out": out},
                   ["plot.csv", "plot.svg"],
                   extra={"runs": _csv_list(args.runs)})
    print(f"{out / 'plot.svg'}: {len(points)} runs")
    return 0


# ------------------------------------------------------------------- parser

def _add_split_flag(p, default):
    p.add_argument("--split", default=default,
                   choices=("train", "val", "test"))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lexalign",
        description="Multilingual image-sentence retrieval with a shared "
                    "latent vocabulary, at desk scale.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain-latent",
                       help="pretrain the shared latent vocabulary")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_pretrain_latent)

    p = sub.add_parser("train", help="train the retrieval model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pretrained", metavar="LATENT.CKPT",
                   help="reuse a pretrained latent package")
    _add_split_flag(p, "test")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="direct", choices=sorted(_EVAL_MODES))
    p.add_argument("--clc", metavar="CLC.TSV",
                   help="trained consensus weights (clc-c mode)")
    _add_split_flag(p, "test")
    add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("clc", help="consensus fusion over translations")
    clc_sub = p.add_subparsers(dest="clc_cmd", required=True)
    q = clc_sub.add_parser("train", help="fit the consensus classifier")
    q.add_argument("--data", required=True)
    q.add_argument("--model", required=True)
    q.add_argument("--out", required=True)
    _add_split_flag(q, "val")
    add_config_flags(q)
    q.set_defaults(func=cmd_clc_train)
    q = clc_sub.add_parser("eval", help="evaluate consensus fusion")
    q.add_argument("--data", required=True)
    q.add_argument("--model", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--mode", default="average",
                   choices=("average", "classifier"))
    q.add_argument("--clc", metavar="CLC.TSV")
    _add_split_flag(q, "test")
    add_config_flags(q)
    q.set_defaults(func=cmd_clc_eval)

    p = sub.add_parser("baseline",
                       help="train and evaluate a baseline variant")
    p.add_argument("variant",
                   choices=("freq", "pca", "dict", "la", "trans-pivot"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_split_flag(p, "test")
    add_config_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", help="grid-sweep one hyperparameter")
    p.add_argument("target", choices=("lambda2",))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", default=SWEEP_GRID,
                   metavar="V1,V2,...")
    _add_split_flag(p, "test")
    add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot",
                       help="parameter-count vs quality scatter (SVG)")
    p.add_argument("--runs", required=True, metavar="DIR1,DIR2,...",
                   help="train/baseline run directories to plot")
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # structured diagnostic, nonzero exit
        print(json.dumps({"error": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
