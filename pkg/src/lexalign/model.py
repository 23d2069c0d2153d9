"""Two-branch multimodal embedding network and its training driver.

Images pass through two fully connected layers; sentences pass through the
hybrid token embedder, a GRU, and a fully connected layer. Both branches
l2-normalize into a shared joint space where similarity is the dot product.
Training optimizes the combined objective: mined bidirectional triplets,
masked cross-language matching, the adversarial language confusion term,
and neighborhood constraints.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict, replace
from statistics import fmean

import numpy as np

from . import autodiff as ad
from . import corpus as corpus_mod
from . import hybrid
from . import losses
from . import vocab as vocab_mod
from .hybrid import (ExplorationConfig, PretrainConfig, LatentVocabulary,
                     AssignmentMap)
from .losses import LossWeights, MaskedPair, make_masked_half
from .metrics import ScoreMatrix, recall_at_k, DIRECTIONS

GRU_KEYS = ("w_r", "u_r", "b_r", "w_z", "u_z", "b_z", "w_h", "u_h", "b_h")

TRAIN_LOG_HEADER = ["step", "L_mm", "L_mask", "L_adv", "L_nc", "total",
                    "g_mm", "g_mask", "g_adv", "g_nc"]

HYBRID = "hybrid"
PER_WORD = "per-word"


# ------------------------------------------------------------------- config


@dataclass
class ModelConfig:
    languages: list = None        # None = every corpus language
    d_img: int = 128
    d_j: int = 64
    d_u: int = 64
    reduced_dim: int = 10
    v_latent: int = 200
    k: int = 30
    vocab_mode: str = HYBRID
    weights: LossWeights = field(default_factory=LossWeights)
    explore: ExplorationConfig = field(default_factory=ExplorationConfig)
    adv_hidden: int = 64
    epochs: int = 30
    batch_size: int = 32
    lr: float = 5e-3
    pretrain_epochs: int = 5
    pretrain_lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("d_img", "d_j", "d_u", "reduced_dim", "v_latent",
                     "adv_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.vocab_mode not in (HYBRID, PER_WORD):
            raise ValueError(f"unknown vocab_mode {self.vocab_mode!r}")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (mining needs "
                             "in-batch negatives)")


def config_fingerprint(config):
    """Stable hex digest of the full configuration."""
    blob = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


# ------------------------------------------------------------------ branches


@dataclass
class ImageBranch:
    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]


def init_image_branch(d_img, d_j, seed):
    """Two FC layers d_img -> 2*d_j -> d_j."""
    rng = np.random.default_rng((seed, 31))
    hid = 2 * d_j
    return ImageBranch(
        w1=ad.parameter(rng.normal(0, 1 / np.sqrt(d_img), (d_img, hid)),
                        name="img_w1"),
        b1=ad.parameter(np.zeros(hid), name="img_b1"),
        w2=ad.parameter(rng.normal(0, 1 / np.sqrt(hid), (hid, d_j)),
                        name="img_w2"),
        b2=ad.parameter(np.zeros(d_j), name="img_b2"),
    )


def image_forward(branch, x):
    """(B, d_img) tensor -> unit rows in the joint space."""
    hid = ad.relu(ad.affine(x, branch.w1, branch.b1))
    return ad.l2_normalize(ad.affine(hid, branch.w2, branch.b2))


@dataclass
class LanguageBranch:
    cell: dict
    fc_w: ad.Tensor
    fc_b: ad.Tensor

    def params(self):
        out = [self.cell[k] for k in GRU_KEYS]
        out.extend([self.fc_w, self.fc_b])
        return out

    @property
    def hidden(self):
        return self.cell["u_r"].data.shape[0]


def init_language_branch(d_u, d_j, seed, hidden=None):
    rng = np.random.default_rng((seed, 32))
    hid = d_u if hidden is None else hidden
    cell = losses._gru_params(d_u, hid, rng, "lang_cell")
    return LanguageBranch(
        cell=cell,
        fc_w=ad.parameter(rng.normal(0, 1 / np.sqrt(hid), (hid, d_j)),
                          name="lang_fc_w"),
        fc_b=ad.parameter(np.zeros(d_j), name="lang_fc_b"),
    )


def language_forward(branch, mats):
    """Batch of (T_k, d_u) token tensors -> (B, d_j) unit rows."""
    h = ad.gru_scan(mats, branch.cell)
    return ad.l2_normalize(ad.affine(h, branch.fc_w, branch.fc_b))


def embed_image(branch, feature):
    """One raw feature vector -> unit joint vector (numpy)."""
    feature = np.asarray(feature, dtype=np.float64)
    d_img = branch.w1.data.shape[0]
    if feature.shape != (d_img,):
        raise ValueError(f"feature must have dim {d_img}, got {feature.shape}")
    out = image_forward(branch, ad.constant(feature[None, :]))
    return out.data[0].copy()


def embed_query(branch, token_vectors):
    """One (T, d_u) token matrix -> unit joint vector (numpy)."""
    if isinstance(token_vectors, ad.Tensor):
        mat = token_vectors
    else:
        mat = ad.constant(np.asarray(token_vectors, dtype=np.float64))
    if mat.data.ndim != 2 or mat.data.shape[0] < 1:
        raise ValueError("query needs at least one token vector")
    return language_forward(branch, [mat]).data[0].copy()


def score(image_vec, query_vec):
    """Similarity of two unit joint vectors: 1 - cosine distance."""
    return float(np.dot(np.asarray(image_vec), np.asarray(query_vec)))


# ---------------------------------------------------------------- the model


@dataclass
class TrainedModel:
    embedder: hybrid.HybridEmbedder
    image_branch: ImageBranch
    language_branch: LanguageBranch
    mclm: losses.MclmModule
    adversary: losses.LanguageClassifier
    weights: LossWeights
    pivot: str
    metadata: dict

    @property
    def languages(self):
        return self.embedder.languages


def named_parameters(model):
    """All trainable tensors by unique name, embedder first."""
    tensors = (hybrid.trainable_params(model.embedder)
               + model.image_branch.params()
               + model.language_branch.params()
               + model.mclm.params()
               + model.adversary.params())
    out = {}
    for t in tensors:
        if t.name in out:
            raise ValueError(f"duplicate parameter name {t.name!r}")
        out[t.name] = t
    return out


def _restrict_corpus(corpus, languages):
    languages = list(languages)
    missing = [l for l in languages if l not in corpus.languages]
    if missing:
        raise ValueError(f"corpus has no languages {missing}")
    if not languages:
        raise ValueError("need at least one language")
    if languages == corpus.languages:
        return corpus
    sents = [s for s in corpus.sentences if s.lang in languages]
    dbg = corpus.debug_word_concepts
    return corpus_mod.Corpus(
        languages, corpus.feature_dim, corpus.word_dim, corpus.num_concepts,
        {l: corpus.vocab_sizes[l] for l in languages}, corpus.images, sents,
        {k: list(v) for k, v in corpus.splits.items()},
        debug_word_concepts=None if dbg is None else
        {l: dbg[l] for l in languages if l in dbg})


def build_model(corpus, embeddings, config, pretrained=None):
    """Assemble an untrained model; runs latent pretraining unless a
    previously trained latent package is supplied."""
    languages = list(config.languages or corpus.languages)
    corpus = _restrict_corpus(corpus, languages)
    if corpus.feature_dim != config.d_img:
        raise ValueError(f"corpus features have dim {corpus.feature_dim}, "
                         f"config.d_img is {config.d_img}")
    if config.vocab_mode == PER_WORD:
        rng = np.random.default_rng((config.seed, 15))
        tables = {l: rng.normal(0, 1 / np.sqrt(config.d_u),
                                (corpus.vocab_sizes[l], config.d_u))
                  for l in languages}
        embedder = hybrid.build_free_embedder(languages, tables, config.d_u,
                                              config.seed)
    else:
        emb = {l: embeddings[l] for l in languages}
        stats = vocab_mod.count_frequencies(corpus)
        split = vocab_mod.split_top_k(stats, config.k)
        reduced, _ = vocab_mod.reduce_embeddings(emb, config.reduced_dim)
        if pretrained is None:
            pcfg = PretrainConfig(
                v_latent=config.v_latent, d_u=config.d_u,
                margin=config.weights.margin, top_n=config.weights.top_n,
                explore=config.explore, epochs=config.pretrain_epochs,
                batch_size=config.batch_size, lr=config.pretrain_lr,
                seed=config.seed)
            pretrained = hybrid.pretrain_latent(corpus, reduced, split, pcfg)
        latent, amap = hybrid.prune_unused(pretrained.latent, pretrained.amap)
        embedder = hybrid.build_hybrid_embedder(languages, reduced, split,
                                                latent, amap, pretrained.fc,
                                                config.d_u)

    return model_from_embedder(embedder, config, mode=config.vocab_mode)


def model_from_embedder(embedder, config, mode=None):
    """Wrap an embedder (a baseline variant, say) with fresh branches."""
    languages = list(embedder.languages)
    meta = {"seed": config.seed, "config_hash": config_fingerprint(config),
            "mode": mode or embedder.mode, "languages": languages,
            "best_epoch": None, "val_mr": []}
    return TrainedModel(
        embedder=embedder,
        image_branch=init_image_branch(config.d_img, config.d_j, config.seed),
        language_branch=init_language_branch(config.d_u, config.d_j,
                                             config.seed),
        mclm=losses.init_mclm(config.d_u, config.seed),
        adversary=losses.init_adversary(config.d_u, len(languages),
                                        config.adv_hidden, config.seed),
        weights=config.weights,
        pivot=languages[0],
        metadata=meta,
    )


# ------------------------------------------------------------- batch loss


def batch_loss(model, items, rng):
    """The full training objective for one minibatch.

    Queries are the 2B sentences (both halves of every cross-language
    pair); images are duplicated to align with them. Returns the total
    loss tensor, the per-term tensors, and the float breakdown.
    """
    w = model.weights
    b = len(items)
    if b < 2:
        raise ValueError("batch must contain at least 2 items")
    emb = model.embedder
    sents = [it.sent_a for it in items] + [it.sent_b for it in items]
    mats = [hybrid.embed_matrix(emb, s.lang, s.tokens) for s in sents]
    halves = [make_masked_half(m, w.mask_ratio, rng) for m in mats]
    surv = [ad.take_rows(m, list(h.survivors)) for m, h in zip(mats, halves)]

    joint_all = language_forward(model.language_branch, mats + surv)
    queries, masked_queries = ad.split(joint_all, [2 * b, 2 * b])

    feats = np.stack([it.image.feature for it in items])
    img_joint = image_forward(model.image_branch, ad.constant(feats))
    img_dup = ad.take_rows(img_joint, list(range(b)) * 2)
    groups = [it.image.image_id for it in items] * 2

    mm = losses.multimodal_loss(img_dup, queries, w, groups=groups,
                                masked_query=masked_queries)
    pairs = [MaskedPair(halves[k], halves[b + k]) for k in range(b)]
    mask_term = losses.mclm_batch_loss(pairs, model.mclm)

    univ = ad.stack_rows([ad.mean(m, axis=0) for m in mats])
    lang_index = {l: i for i, l in enumerate(model.languages)}
    labels = [lang_index[s.lang] for s in sents]
    adv = losses.adversarial_loss(univ, labels, model.adversary)

    univ_a, univ_b = ad.split(univ, [b, b])
    joint_a, joint_b = ad.split(queries, [b, b])
    nc = losses.neighborhood_loss(univ_a, univ_b, joint_a, joint_b, w,
                                  groups=groups[:b])

    terms = {"mm": mm, "mask": mask_term, "adv": adv, "nc": nc}
    total, breakdown = losses.total_loss(terms, w)
    return total, terms, breakdown


# ------------------------------------------------------------- evaluation


def _encode_sentence_batch(model, lang_tokens, chunk=256):
    """[(lang, tokens)] -> (N, d_j) numpy matrix of unit query vectors."""
    out = []
    for start in range(0, len(lang_tokens), chunk):
        part = lang_tokens[start:start + chunk]
        mats = [hybrid.embed_matrix(model.embedder, lang, toks)
                for lang, toks in part]
        out.append(language_forward(model.language_branch, mats).data)
    return np.vstack(out)


def score_split(model, corpus, split, lang, translator=None, target=None):
    """ScoreMatrix of one language's sentences against one split's images."""
    images = corpus.split_images(split)
    sents = corpus.split_sentences(split, lang)
    if not images or not sents:
        raise ValueError(f"split {split!r} has no data for language {lang!r}")
    if translator is not None:
        if target is None:
            raise ValueError("translation needs a target language")
        sents = [translator.translate(s, target) for s in sents]
        use = [(target, s.tokens) for s in sents]
    else:
        use = [(s.lang, s.tokens) for s in sents]
    feats = np.stack([im.feature for im in images])
    img_mat = image_forward(model.image_branch, ad.constant(feats)).data
    sent_mat = _encode_sentence_batch(model, use)
    row_of = {im.image_id: i for i, im in enumerate(images)}
    gt_rows = np.array([row_of[s.image_id] for s in sents])
    return ScoreMatrix(img_mat @ sent_mat.T, gt_rows)


def split_mean_recall(model, corpus, split, ks=(1, 5, 10)):
    """Full-precision mR averaged over languages (model selection metric)."""
    vals = []
    for lang in corpus.languages:
        m = score_split(model, corpus, split, lang)
        six = [recall_at_k(m, k, d) for d in DIRECTIONS for k in ks]
        vals.append(fmean(six))
    return fmean(vals)


# ---------------------------------------------------------------- training


def _grad_norm(params):
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float((p.grad ** 2).sum())
    return math.sqrt(sq)


def train(corpus, embeddings, config, pretrained=None, model=None):
    """Seeded end-to-end training. Returns (model, train_log_rows).

    One log row per optimizer step: the four raw term values, the weighted
    total, and each term's own gradient norm over all trainable parameters
    (raw, before its lambda). Validation mR is computed after every epoch
    and the best-epoch parameters are restored at the end. A prebuilt model
    (a baseline embedder variant, say) can be passed in to be trained under
    the same schedule instead of the assembled default.
    """
    if model is not None:
        languages = list(model.languages)
    else:
        languages = list(config.languages or corpus.languages)
    corpus = _restrict_corpus(corpus, languages)
    if model is None:
        model = build_model(corpus, embeddings, config, pretrained=pretrained)
    params = named_parameters(model)
    opt = ad.Adam(params, lr=config.lr)

    rows = []
    val_history = []
    best_val, best_state, best_epoch = -np.inf, None, None
    rng = corpus_mod._child_rng(config.seed, 6)
    step = 0
    for epoch in range(config.epochs):
        for items in corpus_mod.epoch_batches(corpus, "train",
                                              config.batch_size, rng):
            mask_rng = np.random.default_rng((config.seed, 41, step))
            total, terms, breakdown = batch_loss(model, items, mask_rng)
            if not all(math.isfinite(v) for v in breakdown.values()):
                raise ad.NonFiniteError(
                    f"non-finite loss at step {step}: {breakdown}")
            norms = {}
            for key in ("mm", "mask", "adv", "nc"):
                opt.zero_grad()
                ad.backward(terms[key])
                norms[key] = _grad_norm(params.values())
            opt.zero_grad()
            ad.backward(total)
            opt.step()
            rows.append({"step": step, "L_mm": breakdown["mm"],
                         "L_mask": breakdown["mask"],
                         "L_adv": breakdown["adv"], "L_nc": breakdown["nc"],
                         "total": breakdown["total"], "g_mm": norms["mm"],
                         "g_mask": norms["mask"], "g_adv": norms["adv"],
                         "g_nc": norms["nc"]})
            step += 1
        val = split_mean_recall(model, corpus, "val")
        val_history.append(val)
        if val > best_val:
            best_val = val
            best_epoch = epoch
            best_state = {k: p.data.copy() for k, p in params.items()}
    if best_state is not None:
        for k, p in params.items():
            p.data = best_state[k]
    model.metadata["best_epoch"] = best_epoch
    model.metadata["val_mr"] = val_history
    model.metadata["epochs"] = config.epochs
    return model, rows


def write_train_log(rows, path):
    """CSV with repr-exact floats; identical runs produce identical bytes."""
    lines = [",".join(TRAIN_LOG_HEADER)]
    for r in rows:
        cells = [str(r["step"])]
        cells += [repr(float(r[k])) for k in TRAIN_LOG_HEADER[1:]]
        lines.append(",".join(cells))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


# ------------------------------------------------------------ serialization


def _split_to_meta(split):
    return {l: sorted(int(w) for w in ws) for l, ws in split.specific.items()}


def _amap_to_meta(amap):
    by_lang = {}
    for (lang, word), row in amap.items():
        by_lang.setdefault(lang, []).append([int(word), int(row)])
    for entries in by_lang.values():
        entries.sort()
    return by_lang


def save_model(model, path):
    """Checkpoint the whole model: every tensor plus the structural state
    (vocabulary split, latent assignments, weights, metadata) as JSON meta.
    Round trip is bit-exact."""
    emb = model.embedder
    tensors = dict(named_parameters(model))
    meta = {
        "mode": emb.mode,
        "languages": list(emb.languages),
        "d_u": emb.d_u,
        "pivot": model.pivot,
        "weights": asdict(model.weights),
        "metadata": model.metadata,
    }
    if emb.mode == HYBRID:
        meta["k"] = emb.split.K
        meta["vocab_sizes"] = {l: len(emb.split.specific[l])
                               + len(emb.split.agnostic[l])
                               for l in emb.languages}
        meta["specific"] = _split_to_meta(emb.split)
        meta["assignments"] = _amap_to_meta(emb.amap)
        tensors["latent_used"] = ad.constant(
            emb.latent.used_mask.astype(np.float64))
        for lang in emb.languages:
            tensors[f"reduced_{lang}"] = ad.constant(emb.reduced[lang])
        if emb.split.K > 0:
            for lang in emb.languages:
                wt, bt = emb.fc[lang]
                tensors[wt.name] = wt
                tensors[bt.name] = bt
    if emb.mode == "free" and emb.vocab_map is not None:
        meta["vocab_map"] = [[l, int(w), l2, int(w2)]
                             for (l, w), (l2, w2)
                             in sorted(emb.vocab_map.mapping.items())]
        meta["vocab_map_languages"] = list(emb.vocab_map.languages)
    ad.save_checkpoint(path, tensors, meta=meta)


def _branches_from(tensors):
    image = ImageBranch(*(ad.parameter(tensors[f"img_{k}"], name=f"img_{k}")
                          for k in ("w1", "b1", "w2", "b2")))
    cell = {k: ad.parameter(tensors[f"lang_cell_{k}"], name=f"lang_cell_{k}")
            for k in GRU_KEYS}
    lang = LanguageBranch(cell=cell,
                          fc_w=ad.parameter(tensors["lang_fc_w"],
                                            name="lang_fc_w"),
                          fc_b=ad.parameter(tensors["lang_fc_b"],
                                            name="lang_fc_b"))
    mclm = losses.MclmModule(
        mask_vec=ad.parameter(tensors["mclm_mask_vec"], name="mclm_mask_vec"),
        cell={k: ad.parameter(tensors[f"mclm_cell_{k}"],
                              name=f"mclm_cell_{k}") for k in GRU_KEYS},
        out_w=ad.parameter(tensors["mclm_out_w"], name="mclm_out_w"),
        out_b=ad.parameter(tensors["mclm_out_b"], name="mclm_out_b"),
        pred_avg_w=ad.parameter(tensors["mclm_pred_avg_w"],
                                name="mclm_pred_avg_w"),
        pred_avg_b=ad.parameter(tensors["mclm_pred_avg_b"],
                                name="mclm_pred_avg_b"),
        pred_seq_w=ad.parameter(tensors["mclm_pred_seq_w"],
                                name="mclm_pred_seq_w"),
        pred_seq_b=ad.parameter(tensors["mclm_pred_seq_b"],
                                name="mclm_pred_seq_b"))
    adversary = losses.LanguageClassifier(
        *(ad.parameter(tensors[f"adv_{k}"], name=f"adv_{k}")
          for k in ("w1", "b1", "w2", "b2")))
    return image, lang, mclm, adversary


def load_model(path):
    tensors, meta = ad.load_checkpoint(path)
    if meta is None or "mode" not in meta:
        raise ValueError(f"{path} is not a model checkpoint")
    languages = meta["languages"]
    d_u = meta["d_u"]
    if meta["mode"] == HYBRID:
        k = meta["k"]
        vocab_sizes = meta["vocab_sizes"]
        specific = {l: tuple(meta["specific"][l]) for l in languages}
        agnostic = {l: tuple(w for w in range(vocab_sizes[l])
                             if w not in set(specific[l]))
                    for l in languages}
        split = vocab_mod.VocabSplit(specific, agnostic, k)
        latent = LatentVocabulary(
            table=ad.parameter(tensors["latent_table"], name="latent_table"),
            used_mask=tensors["latent_used"].astype(bool))
        amap = AssignmentMap()
        for lang, entries in meta["assignments"].items():
            for word, row in entries:
                amap.set(lang, int(word), int(row))
        amap.freeze()
        reduced = {l: tensors[f"reduced_{l}"] for l in languages}
        fc = None
        if k > 0:
            fc = {l: (ad.parameter(tensors[f"fc_w_{l}"], name=f"fc_w_{l}"),
                      ad.parameter(tensors[f"fc_b_{l}"], name=f"fc_b_{l}"))
                  for l in languages}
        embedder = hybrid.build_hybrid_embedder(languages, reduced, split,
                                                latent, amap, fc, d_u)
    else:
        fc = None
        if f"fc_w_{languages[0]}" in tensors:
            fc = {l: (ad.parameter(tensors[f"fc_w_{l}"], name=f"fc_w_{l}"),
                      ad.parameter(tensors[f"fc_b_{l}"], name=f"fc_b_{l}"))
                  for l in languages}
        vocab_map = None
        if "vocab_map" in meta:
            mapping = {(l, int(w)): (l2, int(w2))
                       for l, w, l2, w2 in meta["vocab_map"]}
            vocab_map = vocab_mod.ReducedVocab(
                mapping, list(meta["vocab_map_languages"]))
        # tables rebuilt directly so the stored UNK row survives bit-exact
        embedder = hybrid.HybridEmbedder(
            languages=list(languages), d_u=d_u, mode="free",
            free_tables={l: ad.parameter(tensors[f"free_{l}"],
                                         name=f"free_{l}")
                         for l in languages},
            fc=fc, vocab_map=vocab_map)
    image, lang_branch, mclm, adversary = _branches_from(tensors)
    return TrainedModel(
        embedder=embedder, image_branch=image, language_branch=lang_branch,
        mclm=mclm, adversary=adversary,
        weights=LossWeights(**meta["weights"]), pivot=meta["pivot"],
        metadata=meta["metadata"])


# ------------------------------------------------------------ feature files


def save_features_tsv(features, path):
    """``image_id<TAB>f0<TAB>...<TAB>fD`` rows, repr-exact floats."""
    with open(path, "w") as f:
        for image_id in sorted(features):
            vec = np.asarray(features[image_id], dtype=np.float64)
            cells = [str(int(image_id))] + [repr(float(v)) for v in vec]
            f.write("\t".join(cells) + "\n")


def load_features_tsv(path):
    features = {}
    dim = None
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split("\t")
            if len(cells) < 2:
                raise ValueError(f"{path}:{ln}: need an id and a vector")
            vec = np.array([float(v) for v in cells[1:]])
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(f"{path}:{ln}: inconsistent feature dim")
            features[int(cells[0])] = vec
    if not features:
        raise ValueError(f"{path} contains no features")
    return features


def with_features(corpus, features):
    """Corpus with image features replaced by an externally supplied map."""
    missing = [im.image_id for im in corpus.images
               if im.image_id not in features]
    if missing:
        raise ValueError(f"features missing for images {missing[:5]}")
    dim = len(next(iter(features.values())))
    images = [replace(im, feature=np.asarray(features[im.image_id],
                                             dtype=np.float64))
              for im in corpus.images]
    return corpus_mod.Corpus(
        list(corpus.languages), dim, corpus.word_dim, corpus.num_concepts,
        dict(corpus.vocab_sizes), images, list(corpus.sentences),
        {k: list(v) for k, v in corpus.splits.items()},
        debug_word_concepts=corpus.debug_word_concepts)
