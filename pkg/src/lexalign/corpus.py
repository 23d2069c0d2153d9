"""Synthetic multilingual image-caption corpora.

Each concept owns a latent ground-truth vector. Word vectors are noisy
copies of their concept vector (plus a per-language offset), image features
are lifted means of the image's concept vectors, and sentences realize an
image's concepts as concrete words with Zipf-distributed frequencies. The
hidden concept ids ride along under debug fields so verification tooling can
measure recovery; training code must never read them.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np

HUMAN = "human"
TRANSLATED = "mt"


@dataclass(frozen=True)
class Sentence:
    image_id: int
    lang: str
    tokens: tuple
    origin: str = HUMAN
    debug_concepts: tuple = ()
    sid: int = -1


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    feature: np.ndarray
    debug_concepts: tuple = ()


@dataclass
class CorpusConfig:
    seed: int = 7
    num_images: int = 200
    num_languages: int = 4
    concepts: int = 60
    vocab_per_lang: int = 300
    synonym_rate: float = 0.8
    sentence_len: tuple = (4, 8)
    sentences_per_image: int = 2
    word_dim: int = 30
    feature_dim: int = 128
    zipf_exponent: float = 1.1
    human_coverage: float = 1.0
    split_fractions: tuple = (0.5, 0.2, 0.3)
    lang_offset_scale: float = 0.25
    word_noise_scale: float = 0.1
    feature_noise_scale: float = 0.05
    concepts_per_image: tuple = (2, 4)


@dataclass
class Corpus:
    languages: list
    feature_dim: int
    word_dim: int
    num_concepts: int
    vocab_sizes: dict
    images: list
    sentences: list
    splits: dict
    debug_word_concepts: dict = field(default_factory=dict)
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        self._reindex()

    def _reindex(self):
        idx = {}
        for s in self.sentences:
            idx.setdefault((s.image_id, s.lang), []).append(s)
        self._index = idx
        self._by_id = {im.image_id: im for im in self.images}

    def image(self, image_id):
        return self._by_id[image_id]

    def sentences_for(self, image_id, lang):
        return self._index.get((image_id, lang), [])

    def split_images(self, split):
        return [self._by_id[i] for i in self.splits[split]]

    def split_sentences(self, split, lang=None):
        ids = set(self.splits[split])
        out = [s for s in self.sentences if s.image_id in ids]
        if lang is not None:
            out = [s for s in out if s.lang == lang]
        return out

    def human_languages(self):
        """Languages that carry at least one human-origin sentence."""
        seen = {s.lang for s in self.sentences if s.origin == HUMAN}
        return [l for l in self.languages if l in seen]

    def validate(self, require_full_coverage=False):
        """Structural invariants; raises ValueError on the first violation."""
        ids = {im.image_id for im in self.images}
        seen = set()
        for name, members in self.splits.items():
            for i in members:
                if i not in ids:
                    raise ValueError(f"split {name} references unknown image {i}")
                if i in seen:
                    raise ValueError(f"image {i} appears in more than one split")
                seen.add(i)
        for im in self.images:
            if im.feature.shape != (self.feature_dim,):
                raise ValueError(f"image {im.image_id} feature dim {im.feature.shape}")
        for s in self.sentences:
            if s.image_id not in ids:
                raise ValueError(f"sentence {s.sid} references unknown image")
            if s.lang not in self.languages:
                raise ValueError(f"sentence {s.sid} has unknown language {s.lang}")
            if len(s.tokens) < 3:
                raise ValueError(f"sentence {s.sid} shorter than 3 tokens")
            if s.origin not in (HUMAN, TRANSLATED):
                raise ValueError(f"sentence {s.sid} has origin {s.origin}")
            v = self.vocab_sizes[s.lang]
            if any(not (0 <= t < v) for t in s.tokens):
                raise ValueError(f"sentence {s.sid} has out-of-vocabulary token")
            if s.debug_concepts and len(s.debug_concepts) != len(s.tokens):
                raise ValueError(f"sentence {s.sid} debug length mismatch")
        if require_full_coverage:
            for im in self.images:
                for lang in self.languages:
                    if not self.sentences_for(im.image_id, lang):
                        raise ValueError(
                            f"image {im.image_id} has no {lang} sentence")
        return True


def _child_rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)))


def zipf_weights(n, exponent):
    ranks = np.arange(1, n + 1, dtype=np.float64)
    return ranks ** (-float(exponent))


def generate_synthetic(config):
    """Build a corpus plus per-language pretrained word vectors.

    Returns (corpus, embeddings) where embeddings maps language to a
    (vocab, word_dim) float64 array. Deterministic per config.seed.
    """
    cfg = config
    languages = [f"L{i}" for i in range(cfg.num_languages)]
    if cfg.vocab_per_lang < cfg.concepts:
        raise ValueError("vocab_per_lang must be at least the concept count")
    lo, hi = cfg.sentence_len
    if lo < 3:
        raise ValueError("sentence_len minimum must be at least 3")

    rng_c = _child_rng(cfg.seed, 0)
    concept_vecs = rng_c.normal(size=(cfg.concepts, cfg.word_dim))

    embeddings = {}
    word_concepts = {}
    for li, lang in enumerate(languages):
        r = _child_rng(cfg.seed, 1, li)
        offset = r.normal(size=cfg.word_dim) * cfg.lang_offset_scale
        # cover every concept once, park the leftovers anywhere
        assign = np.empty(cfg.vocab_per_lang, dtype=np.int64)
        slots = r.permutation(cfg.vocab_per_lang)
        order = r.permutation(cfg.concepts)
        assign[slots[:cfg.concepts]] = order
        assign[slots[cfg.concepts:]] = r.integers(0, cfg.concepts,
                                                  size=cfg.vocab_per_lang - cfg.concepts)
        aligned = r.random(cfg.vocab_per_lang) < cfg.synonym_rate
        emb = np.empty((cfg.vocab_per_lang, cfg.word_dim))
        noise = r.normal(size=emb.shape)
        for w in range(cfg.vocab_per_lang):
            if aligned[w]:
                emb[w] = concept_vecs[assign[w]] + offset + noise[w] * cfg.word_noise_scale
            else:
                emb[w] = noise[w]
        embeddings[lang] = emb
        word_concepts[lang] = assign

    # images: a handful of concepts each, feature = lifted mean + noise
    r_img = _child_rng(cfg.seed, 2)
    lift = r_img.normal(size=(cfg.feature_dim, cfg.word_dim)) / np.sqrt(cfg.word_dim)
    k_lo, k_hi = cfg.concepts_per_image
    images = []
    for i in range(cfg.num_images):
        k = int(r_img.integers(k_lo, k_hi + 1))
        cs = np.sort(r_img.choice(cfg.concepts, size=k, replace=False))
        raw = concept_vecs[cs].mean(axis=0) + r_img.normal(size=cfg.word_dim) * cfg.feature_noise_scale
        images.append(ImageRecord(i, lift @ raw, tuple(int(c) for c in cs)))

    # per-language word pools per concept, Zipf-weighted by word id
    pools = {}
    for lang in languages:
        zw = zipf_weights(cfg.vocab_per_lang, cfg.zipf_exponent)
        per_concept = {}
        for c in range(cfg.concepts):
            words = np.flatnonzero(word_concepts[lang] == c)
            w = zw[words]
            per_concept[c] = (words, w / w.sum())
        pools[lang] = per_concept

    r_sent = _child_rng(cfg.seed, 3)
    sentences = []
    for im in images:
        covered = [lang for lang in languages if r_sent.random() < cfg.human_coverage]
        if not covered:
            covered = [languages[int(r_sent.integers(0, len(languages)))]]
        for lang in languages:
            if lang not in covered:
                continue
            for _ in range(cfg.sentences_per_image):
                n = int(r_sent.integers(lo, hi + 1))
                toks, cons = [], []
                for _ in range(n):
                    c = int(im.debug_concepts[int(r_sent.integers(0, len(im.debug_concepts)))])
                    words, probs = pools[lang][c]
                    w = int(r_sent.choice(words, p=probs))
                    toks.append(w)
                    cons.append(c)
                sentences.append(Sentence(im.image_id, lang, tuple(toks),
                                          HUMAN, tuple(cons), sid=len(sentences)))

    r_split = _child_rng(cfg.seed, 4)
    perm = r_split.permutation(cfg.num_images)
    n_train = int(round(cfg.split_fractions[0] * cfg.num_images))
    n_val = int(round(cfg.split_fractions[1] * cfg.num_images))
    splits = {
        "train": sorted(int(i) for i in perm[:n_train]),
        "val": sorted(int(i) for i in perm[n_train:n_train + n_val]),
        "test": sorted(int(i) for i in perm[n_train + n_val:]),
    }

    corpus = Corpus(languages, cfg.feature_dim, cfg.word_dim, cfg.concepts,
                    {lang: cfg.vocab_per_lang for lang in languages},
                    images, sentences, splits,
                    debug_word_concepts=word_concepts)
    corpus.validate()
    return corpus, embeddings


# ------------------------------------------------------------------ translator

class Translator:
    """Concept-preserving simulated translation.

    Stands in for the external MT service, so it legitimately reads the
    corpus debug fields: each source token's concept is realized as a word
    of the target language, sampled by observed frequency. With probability
    noise_rate a token's concept is first swapped for a random other one.
    Deterministic given (seed, sentence sid, target language).
    """

    def __init__(self, corpus, seed=0, noise_rate=0.0):
        self.corpus = corpus
        self.seed = int(seed)
        self.noise_rate = float(noise_rate)
        self._lang_index = {l: i for i, l in enumerate(corpus.languages)}
        counts = {l: np.ones(corpus.vocab_sizes[l]) for l in corpus.languages}
        for s in corpus.sentences:
            for t in s.tokens:
                counts[s.lang][t] += 1.0
        self._pools = {}
        for lang in corpus.languages:
            wc = corpus.debug_word_concepts.get(lang)
            if wc is None:
                wc = self._recover_word_concepts(lang)
            per = {}
            for c in range(corpus.num_concepts):
                words = np.flatnonzero(wc == c)
                if words.size == 0:
                    continue
                w = counts[lang][words]
                per[c] = (words, w / w.sum())
            self._pools[lang] = per

    def _recover_word_concepts(self, lang):
        wc = np.full(self.corpus.vocab_sizes[lang], -1, dtype=np.int64)
        for s in self.corpus.sentences:
            if s.lang != lang or not s.debug_concepts:
                continue
            for t, c in zip(s.tokens, s.debug_concepts):
                wc[t] = c
        return wc

    def translate(self, sentence, target_lang):
        pools = self._pools[target_lang]
        known = sorted(pools)
        rng = _child_rng(self.seed, 5, sentence.sid, self._lang_index[target_lang])
        toks, cons = [], []
        for c in sentence.debug_concepts:
            c = int(c)
            if self.noise_rate > 0.0 and rng.random() < self.noise_rate:
                others = [k for k in known if k != c]
                c = int(others[int(rng.integers(0, len(others)))])
            if c not in pools:
                c = known[int(rng.integers(0, len(known)))]
            words, probs = pools[c]
            toks.append(int(rng.choice(words, p=probs)))
            cons.append(c)
        return Sentence(sentence.image_id, target_lang, tuple(toks),
                        TRANSLATED, tuple(cons), sid=-1)


def augment_to_full_coverage(corpus, seed=0, noise_rate=0.0):
    """Fill every (image, language) cell up to the image's best sentence count
    using simulated translations. A corpus that is already complete comes back
    unchanged (same object)."""
    needed = False
    for im in corpus.images:
        counts = [len(corpus.sentences_for(im.image_id, l)) for l in corpus.languages]
        if max(counts) == 0:
            raise ValueError(f"image {im.image_id} has no sentences in any language")
        if min(counts) < max(counts):
            needed = True
    if not needed:
        return corpus

    translator = Translator(corpus, seed=seed, noise_rate=noise_rate)
    new_sents = list(corpus.sentences)
    for im in corpus.images:
        counts = {l: len(corpus.sentences_for(im.image_id, l)) for l in corpus.languages}
        target = max(counts.values())
        donor = max(corpus.languages, key=lambda l: counts[l])
        donor_sents = corpus.sentences_for(im.image_id, donor)
        for lang in corpus.languages:
            for j in range(target - counts[lang]):
                src = donor_sents[j % len(donor_sents)]
                t = translator.translate(src, lang)
                new_sents.append(replace(t, sid=len(new_sents)))
    out = Corpus(corpus.languages, corpus.feature_dim, corpus.word_dim,
                 corpus.num_concepts, dict(corpus.vocab_sizes), corpus.images,
                 new_sents, {k: list(v) for k, v in corpus.splits.items()},
                 debug_word_concepts=corpus.debug_word_concepts)
    out.validate(require_full_coverage=True)
    return out


# ---------------------------------------------------------------- minibatches

@dataclass(frozen=True)
class BatchItem:
    image: ImageRecord
    sent_a: Sentence
    sent_b: Sentence


def epoch_batches(corpus, split, batch_size, rng):
    """One epoch of batches: images shuffled, chunked to exactly batch_size
    (remainder dropped), one cross-language sentence pair per image."""
    images = corpus.split_images(split)
    langs = corpus.languages
    pairs = list(itertools.combinations(range(len(langs)), 2))
    order = rng.permutation(len(images))
    batches = []
    for start in range(0, len(images) - batch_size + 1, batch_size):
        chunk = [images[order[k]] for k in range(start, start + batch_size)]
        items = []
        for im in chunk:
            have = [i for i, l in enumerate(langs)
                    if corpus.sentences_for(im.image_id, l)]
            if len(have) >= 2:
                usable = [p for p in pairs if p[0] in have and p[1] in have]
                ia, ib = usable[int(rng.integers(0, len(usable)))]
            else:
                ia = ib = have[0]
            sa = corpus.sentences_for(im.image_id, langs[ia])
            sb = corpus.sentences_for(im.image_id, langs[ib])
            items.append(BatchItem(im,
                                   sa[int(rng.integers(0, len(sa)))],
                                   sb[int(rng.integers(0, len(sb)))]))
        batches.append(items)
    return batches


def minibatch_iterator(corpus, split, batch_size, seed, epochs=1):
    """Yield epoch_batches for the requested number of epochs."""
    rng = _child_rng(seed, 6)
    for _ in range(epochs):
        yield from epoch_batches(corpus, split, batch_size, rng)


# ------------------------------------------------------------------------ IO

def save_corpus_jsonl(corpus, path):
    with open(path, "w") as f:
        header = {
            "kind": "header",
            "version": 1,
            "languages": corpus.languages,
            "feature_dim": corpus.feature_dim,
            "word_dim": corpus.word_dim,
            "num_concepts": corpus.num_concepts,
            "vocab_sizes": corpus.vocab_sizes,
            "splits": corpus.splits,
            "debug": {"word_concepts": {l: [int(c) for c in v]
                                        for l, v in corpus.debug_word_concepts.items()}},
        }
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for im in corpus.images:
            f.write(json.dumps({
                "kind": "image", "id": im.image_id,
                "feature": [float(v) for v in im.feature],
                "debug": {"concepts": list(im.debug_concepts)},
            }, sort_keys=True) + "\n")
        for s in corpus.sentences:
            f.write(json.dumps({
                "kind": "sentence", "image_id": s.image_id, "lang": s.lang,
                "tokens": list(s.tokens), "origin": s.origin,
                "debug": {"concepts": list(s.debug_concepts)},
            }, sort_keys=True) + "\n")


def load_corpus_jsonl(path):
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise ValueError(f"{path}: first line must be the corpus header")
    h = lines[0]
    images, sentences = [], []
    for rec in lines[1:]:
        kind = rec.get("kind")
        if kind == "image":
            images.append(ImageRecord(int(rec["id"]),
                                      np.asarray(rec["feature"], dtype=np.float64),
                                      tuple(rec.get("debug", {}).get("concepts", ()))))
        elif kind == "sentence":
            sentences.append(Sentence(int(rec["image_id"]), rec["lang"],
                                      tuple(int(t) for t in rec["tokens"]),
                                      rec["origin"],
                                      tuple(rec.get("debug", {}).get("concepts", ())),
                                      sid=len(sentences)))
        else:
            raise ValueError(f"unknown record kind: {kind}")
    wc = {l: np.asarray(v, dtype=np.int64)
          for l, v in h.get("debug", {}).get("word_concepts", {}).items()}
    corpus = Corpus(list(h["languages"]), int(h["feature_dim"]),
                    int(h.get("word_dim", 0)), int(h["num_concepts"]),
                    {l: int(v) for l, v in h["vocab_sizes"].items()},
                    images, sentences,
                    {k: [int(i) for i in v] for k, v in h["splits"].items()},
                    debug_word_concepts=wc)
    corpus.validate()
    return corpus


def save_vectors_tsv(embeddings, path):
    with open(path, "w") as f:
        for lang in sorted(embeddings):
            mat = embeddings[lang]
            for w in range(mat.shape[0]):
                vals = "\t".join(repr(float(v)) for v in mat[w])
                f.write(f"{lang}\t{w}\t{vals}\n")


def load_vectors_tsv(path):
    rows = {}
    with open(path) as f:
        for line in f:
            parts = line.rstrip("\n").split("\t")
            lang, w = parts[0], int(parts[1])
            rows.setdefault(lang, {})[w] = np.asarray([float(v) for v in parts[2:]])
    out = {}
    for lang, d in rows.items():
        mat = np.zeros((max(d) + 1, len(next(iter(d.values())))))
        for w, v in d.items():
            mat[w] = v
        out[lang] = mat
    return out
