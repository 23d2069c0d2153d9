"""Cross-lingual consensus ensembling at test time.

A query is machine-translated into every other supported language, each
version is scored with its own pipeline, and the per-language scores are
fused into one ranking. The average variant (CLC-A) needs no parameters;
the classifier variant (CLC-C) learns a tiny one-hidden-layer fuser on
the validation split while the retrieval model itself stays frozen.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses
from . import metrics
from . import model as model_mod

HIDDEN = 32


# ------------------------------------------------------------- score vectors

@dataclass
class ScoreVectorTable:
    """Per-language scores for one split and one query language.

    vectors[i, s, c] is the score of split image i against sentence s
    rendered in language slot c. Slots follow the model's language list;
    the query language's own slot holds the untranslated sentences.
    """

    vectors: np.ndarray
    gt_rows: np.ndarray
    lang: str
    languages: tuple


def build_score_vectors(model, query, candidates, translator):
    """(num_candidates, |L|) score vectors for a single sentence query."""
    if not candidates:
        raise ValueError("no candidates to score")
    if query.lang not in model.languages:
        raise ValueError(f"model does not cover language {query.lang!r}")
    feats = np.stack([np.asarray(c.feature, dtype=np.float64)
                      for c in candidates])
    img = model_mod.image_forward(model.image_branch, ad.constant(feats)).data
    cols = []
    for slot in model.languages:
        s = query if slot == query.lang else translator.translate(query, slot)
        q = model_mod._encode_sentence_batch(model, [(slot, s.tokens)])[0]
        cols.append(img @ q)
    return np.stack(cols, axis=-1)


def split_score_vectors(model, corpus, split, lang, translator):
    """ScoreVectorTable for every sentence of one language in a split."""
    if lang not in model.languages:
        raise ValueError(f"model does not cover language {lang!r}")
    images = corpus.split_images(split)
    sents = corpus.split_sentences(split, lang)
    if not images or not sents:
        raise ValueError(f"split {split!r} has no data for language {lang!r}")
    feats = np.stack([im.feature for im in images])
    img_mat = model_mod.image_forward(model.image_branch,
                                      ad.constant(feats)).data
    channels = []
    for slot in model.languages:
        if slot == lang:
            use = [(lang, s.tokens) for s in sents]
        else:
            use = [(slot, translator.translate(s, slot).tokens)
                   for s in sents]
        sent_mat = model_mod._encode_sentence_batch(model, use)
        channels.append(img_mat @ sent_mat.T)
    row_of = {im.image_id: i for i, im in enumerate(images)}
    gt_rows = np.array([row_of[s.image_id] for s in sents])
    return ScoreVectorTable(np.stack(channels, axis=-1), gt_rows, lang,
                            tuple(model.languages))


# ------------------------------------------------------------------- fusion

def clc_average(vec):
    """Arithmetic mean over the trailing language axis (CLC-A)."""
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] == 0:
        raise ValueError("empty score vector")
    out = v.mean(axis=-1)
    return float(out) if out.ndim == 0 else out


@dataclass
class ClcClassifier:
    """One hidden layer over a language-score vector.

    The output stage is a fixed unweighted sum of the hidden units, so the
    learnable budget is exactly (|L| + 1) * hidden. A trainable output
    stage (w_out, b_out) is kept behind an option for the alternative
    parameter-count reading.
    """

    languages: tuple
    w1: ad.Tensor
    b1: ad.Tensor
    w_out: ad.Tensor = None
    b_out: ad.Tensor = None

    @property
    def hidden(self):
        return self.w1.data.shape[1]

    def params(self):
        out = [self.w1, self.b1]
        if self.w_out is not None:
            out += [self.w_out, self.b_out]
        return out


def init_clc(languages, seed=0, hidden=HIDDEN, trainable_output=False):
    """Uniform-initialized classifier; ranges follow layer fan-in."""
    languages = tuple(languages)
    if not languages:
        raise ValueError("classifier needs at least one language")
    if len(set(languages)) != len(languages):
        raise ValueError("duplicate language in slot order")
    rng = np.random.default_rng((seed, 51))
    n = len(languages)
    a = 1.0 / np.sqrt(n)
    w1 = ad.parameter(rng.uniform(-a, a, size=(n, hidden)), name="clc_w1")
    b1 = ad.parameter(rng.uniform(-a, a, size=hidden), name="clc_b1")
    w_out = b_out = None
    if trainable_output:
        a2 = 1.0 / np.sqrt(hidden)
        w_out = ad.parameter(rng.uniform(-a2, a2, size=(hidden, 1)),
                             name="clc_w2")
        b_out = ad.parameter(rng.uniform(-a2, a2, size=1), name="clc_b2")
    return ClcClassifier(languages, w1, b1, w_out, b_out)


def parameter_count(clc):
    return int(sum(p.data.size for p in clc.params()))


def clc_classifier_fuse(vec, clc):
    """Fused score(s) for vectors whose trailing axis is the language axis."""
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] != len(clc.languages):
        raise ValueError(f"score vector wants {len(clc.languages)} slots")
    flat = v.reshape(-1, v.shape[-1])
    h = np.maximum(flat @ clc.w1.data + clc.b1.data, 0.0)
    if clc.w_out is None:
        out = h.sum(axis=1)
    else:
        out = (h @ clc.w_out.data + clc.b_out.data).sum(axis=1)
    return float(out[0]) if v.ndim == 1 else out.reshape(v.shape[:-1])


def _fuse_graph(flat, clc):
    """(N, |L|) score tensor -> (N,) fused scores, differentiable."""
    h = ad.relu(ad.affine(flat, clc.w1, clc.b1))
    if clc.w_out is None:
        return ad.tsum(h, axis=1)
    return ad.tsum(ad.add(ad.matmul(h, clc.w_out), clc.b_out), axis=1)


def fused_score_matrix(model, corpus, split, lang, translator, clc=None,
                       mode=metrics.CLC_A):
    """ScoreMatrix of consensus-fused scores for one query language."""
    table = split_score_vectors(model, corpus, split, lang, translator)
    if mode == metrics.CLC_A:
        fused = clc_average(table.vectors)
    elif mode == metrics.CLC_C:
        if clc is None:
            raise ValueError("clc-c fusion needs a trained classifier")
        if clc.languages != table.languages:
            raise ValueError("classifier language slots do not match model")
        fused = clc_classifier_fuse(table.vectors, clc)
    else:
        raise ValueError(f"unknown fusion mode {mode!r}")
    return metrics.ScoreMatrix(fused, table.gt_rows)


# ----------------------------------------------------------------- training

def pair_score_table(tables):
    """Pool query languages into one pair-level batch.

    Training pairs are (ground-truth image, sentence); entry [p, q, :] is
    the score vector of pair p's image against pair q's sentence, so the
    diagonal holds the positives. Returns (pairs (P, P, |L|), groups (P,))
    where groups marks pairs sharing an image.
    """
    if not tables:
        raise ValueError("no score tables")
    languages = tables[0].languages
    num_images = tables[0].vectors.shape[0]
    for t in tables[1:]:
        if t.languages != languages or t.vectors.shape[0] != num_images:
            raise ValueError("score tables disagree on languages or split")
    gt_all = np.concatenate([t.gt_rows for t in tables])
    cols = [t.vectors[gt_all] for t in tables]
    return np.concatenate(cols, axis=1), gt_all


def _flat_hinge(fused, n, chosen, margin, swap=False):
    """Hinge sum over mined (i, j) pairs against a flattened n*n matrix."""
    pos = [i * n + i for _, i, _ in chosen]
    neg = [(j * n + i) if swap else (i * n + j) for _, i, j in chosen]
    gap = ad.sub(ad.take_rows(fused, neg), ad.take_rows(fused, pos))
    return ad.tsum(ad.relu(ad.add_scalar(gap, margin)))


def _pair_loss(clc, flat, n, groups, weights):
    """Bidirectional mined triplet loss on fused pair scores."""
    fused = _fuse_graph(flat, clc)
    sim = fused.data.reshape(n, n)
    fwd = losses._mine_from_sim(sim, weights.margin, weights.top_n, groups)
    total = (_flat_hinge(fused, n, fwd, weights.margin) if fwd
             else losses._zero())
    rev = losses._mine_from_sim(sim.T, weights.margin, weights.top_n, groups)
    if rev:
        term = _flat_hinge(fused, n, rev, weights.margin, swap=True)
        total = ad.add(total, ad.scalar_mul(term, weights.lambda1))
    return total


def _as_tables(validation_scores):
    if isinstance(validation_scores, ScoreVectorTable):
        return [validation_scores]
    return list(validation_scores)


def clc_batch_loss(clc, validation_scores, weights=None):
    """Current full-batch loss value on precomputed validation scores."""
    weights = weights or losses.LossWeights()
    tables = _as_tables(validation_scores)
    pairs, groups = pair_score_table(tables)
    flat = ad.constant(pairs.reshape(-1, pairs.shape[-1]), name="clc_scores")
    return float(_pair_loss(clc, flat, pairs.shape[0], groups, weights).data)


def train_clc(classifier, validation_scores, iterations=30, weights=None,
              lr=1e-2):
    """Full-batch consensus training; the scored model is never touched.

    Every iteration re-mines hard negatives on the current fused scores and
    takes one optimizer step over the whole validation batch. Returns the
    classifier and the per-iteration loss history (value before each step).
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    weights = weights or losses.LossWeights()
    tables = _as_tables(validation_scores)
    for t in tables:
        if t.languages != classifier.languages:
            raise ValueError("classifier language slots do not match scores")
    pairs, groups = pair_score_table(tables)
    n = pairs.shape[0]
    if n < 2:
        raise ValueError("validation batch needs at least two pairs")
    flat = ad.constant(pairs.reshape(-1, pairs.shape[-1]), name="clc_scores")
    opt = ad.Adam({p.name: p for p in classifier.params()}, lr=lr)
    history = []
    for _ in range(int(iterations)):
        opt.zero_grad()
        loss = _pair_loss(classifier, flat, n, groups, weights)
        ad.backward(loss)
        opt.step()
        history.append(float(loss.data))
    return classifier, history


# ----------------------------------------------------------------- weight IO

_MAGIC = "clc-tsv v1"


def _fmt(x):
    return repr(float(x))


def save_clc(clc, path):
    """Write the classifier as a small TSV weight dump."""
    lines = [_MAGIC,
             "\t".join(["languages", *clc.languages]),
             f"hidden\t{clc.hidden}",
             "output\t" + ("fixed" if clc.w_out is None else "trainable")]
    for lang, row in zip(clc.languages, clc.w1.data):
        lines.append("\t".join(["w1", lang, *map(_fmt, row)]))
    lines.append("\t".join(["b1", *map(_fmt, clc.b1.data)]))
    if clc.w_out is not None:
        lines.append("\t".join(["w2", *map(_fmt, clc.w_out.data[:, 0])]))
        lines.append(f"b2\t{_fmt(clc.b_out.data[0])}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_clc(path):
    """Rebuild a classifier from save_clc output, bit-exact."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{path} is not a consensus weight dump")
    fields = {}
    w1_rows = {}
    for line in lines[1:]:
        parts = line.split("\t")
        if parts[0] == "w1":
            w1_rows[parts[1]] = [float(x) for x in parts[2:]]
        else:
            fields[parts[0]] = parts[1:]
    languages = tuple(fields["languages"])
    hidden = int(fields["hidden"][0])
    missing = [l for l in languages if l not in w1_rows]
    if missing:
        raise ValueError(f"weight rows missing for {missing}")
    w1 = np.array([w1_rows[l] for l in languages])
    b1 = np.array([float(x) for x in fields["b1"]])
    if w1.shape != (len(languages), hidden) or b1.shape != (hidden,):
        raise ValueError("weight shapes disagree with header")
    w_out = b_out = None
    if fields["output"][0] == "trainable":
        w_out = ad.parameter(
            np.array([float(x) for x in fields["w2"]])[:, None],
            name="clc_w2")
        b_out = ad.parameter(np.array([float(fields["b2"][0])]),
                             name="clc_b2")
    return ClcClassifier(languages, ad.parameter(w1, name="clc_w1"),
                         ad.parameter(b1, name="clc_b1"), w_out, b_out)
