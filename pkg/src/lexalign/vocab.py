"""Vocabulary statistics, the top-K frequency split, and reduction baselines.

Reductions operate on the observed training vocabulary: thresholding maps
rare words to a per-language UNK, dictionary mapping reroutes rare non-pivot
words onto a pivot language's ids. PCA is computed by cyclic Jacobi rotations
on the covariance matrix so it stays independently checkable against a dense
eigensolver.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

UNK = -1


@dataclass
class VocabStats:
    counts: dict              # lang -> {word id -> train frequency}
    vocab_sizes: dict         # lang -> full vocabulary size

    def freq(self, lang, word):
        return self.counts[lang].get(word, 0)

    def observed(self, lang):
        return sorted(self.counts[lang])

    def total_tokens(self, lang=None):
        if lang is not None:
            return sum(self.counts[lang].values())
        return sum(sum(c.values()) for c in self.counts.values())

    def total_types(self, lang=None):
        if lang is not None:
            return len(self.counts[lang])
        return sum(len(c) for c in self.counts.values())


def count_frequencies(corpus):
    """Exact token counts per language, from the train split only."""
    counts = {lang: Counter() for lang in corpus.languages}
    for s in corpus.split_sentences("train"):
        counts[s.lang].update(s.tokens)
    return VocabStats({l: dict(c) for l, c in counts.items()},
                      dict(corpus.vocab_sizes))


@dataclass
class VocabSplit:
    specific: dict            # lang -> tuple of word ids (top-K)
    agnostic: dict            # lang -> tuple of word ids (the rest)
    K: int

    def is_specific(self, lang, word):
        return word in self._spec_sets[lang]

    def __post_init__(self):
        self._spec_sets = {l: frozenset(v) for l, v in self.specific.items()}


def split_top_k(stats, K):
    """Per-language split of the full vocabulary into the top-K most frequent
    words (ties at the boundary broken by ascending word id) and the rest."""
    if K < 0:
        raise ValueError("K must be non-negative")
    specific, agnostic = {}, {}
    for lang, size in stats.vocab_sizes.items():
        order = sorted(range(size), key=lambda w: (-stats.freq(lang, w), w))
        k = min(K, size)
        specific[lang] = tuple(sorted(order[:k]))
        agnostic[lang] = tuple(sorted(order[k:]))
    return VocabSplit(specific, agnostic, K)


@dataclass
class ReducedVocab:
    """Mapping from observed (lang, word) keys to embedding keys.

    A target word of UNK stands for that language's unknown bucket; lookups
    of words never observed in training also land there.
    """
    mapping: dict             # (lang, word) -> (lang, word-or-UNK)
    languages: list

    def lookup(self, lang, word):
        return self.mapping.get((lang, word), (lang, UNK))

    def target_keys(self):
        return sorted(set(self.mapping.values()))

    def size(self):
        return len(set(self.mapping.values()))


def frequency_threshold(stats, t):
    """Keep observed words with train frequency >= t; the rest become UNK."""
    if t < 1:
        raise ValueError("threshold must be >= 1")
    mapping = {}
    for lang in stats.vocab_sizes:
        for w, f in sorted(stats.counts[lang].items()):
            mapping[(lang, w)] = (lang, w) if f >= t else (lang, UNK)
    return ReducedVocab(mapping, sorted(stats.vocab_sizes))


def dictionary_map(stats, t, dictionary, pivot):
    """Remap observed non-pivot words with frequency < t onto their pivot
    translation; rare words without an entry fall back to UNK. The pivot
    language is untouched."""
    if t < 1:
        raise ValueError("threshold must be >= 1")
    if pivot not in stats.vocab_sizes:
        raise ValueError(f"pivot language {pivot} not in corpus")
    for (lang, w), pw in dictionary.items():
        if lang not in stats.vocab_sizes or not (0 <= w < stats.vocab_sizes[lang]):
            raise ValueError(f"dictionary references unknown word ({lang}, {w})")
        if not (0 <= pw < stats.vocab_sizes[pivot]):
            raise ValueError(f"dictionary references unknown pivot word {pw}")
    mapping = {}
    for lang in stats.vocab_sizes:
        for w, f in sorted(stats.counts[lang].items()):
            if lang == pivot or f >= t:
                mapping[(lang, w)] = (lang, w)
            elif (lang, w) in dictionary:
                mapping[(lang, w)] = (pivot, dictionary[(lang, w)])
            else:
                mapping[(lang, w)] = (lang, UNK)
    return ReducedVocab(mapping, sorted(stats.vocab_sizes))


def build_concept_dictionary(corpus, pivot, stats=None):
    """Exact bilingual dictionary for synthetic corpora: every non-pivot word
    maps to the most train-frequent pivot word sharing its hidden concept
    (ties by ascending id). Uses generator debug data, standing in for an
    external lexicon."""
    if not corpus.debug_word_concepts:
        raise ValueError("corpus carries no word-concept debug data")
    if stats is None:
        stats = count_frequencies(corpus)
    pivot_wc = corpus.debug_word_concepts[pivot]
    best = {}
    for c in range(corpus.num_concepts):
        words = np.flatnonzero(pivot_wc == c)
        if words.size == 0:
            continue
        best[c] = int(max(words.tolist(),
                          key=lambda w: (stats.freq(pivot, w), -w)))
    out = {}
    for lang in corpus.languages:
        if lang == pivot:
            continue
        wc = corpus.debug_word_concepts[lang]
        for w in range(corpus.vocab_sizes[lang]):
            c = int(wc[w])
            if c in best:
                out[(lang, w)] = best[c]
    return out


def compact_vocab(reduced):
    """Renumber a reduction's surviving target ids densely per language.

    Free embedding tables index rows by target id, so a reduction only
    shrinks them after compaction. Returns (ReducedVocab with dense row
    targets, {lang: kept ids in row order}).
    """
    kept = {}
    for (lang, w) in sorted(set(reduced.mapping.values())):
        if w != UNK:
            kept.setdefault(lang, []).append(w)
    rows = {(lang, w): i for lang, ws in kept.items()
            for i, w in enumerate(ws)}
    mapping = {}
    for key, (l2, w2) in reduced.mapping.items():
        mapping[key] = (l2, UNK) if w2 == UNK else (l2, rows[(l2, w2)])
    return ReducedVocab(mapping, list(reduced.languages)), kept


def save_dict_tsv(dictionary, path):
    with open(path, "w") as f:
        for (lang, w), pw in sorted(dictionary.items()):
            f.write(f"{lang}\t{w}\t{pw}\n")


def load_dict_tsv(path):
    out = {}
    with open(path) as f:
        for line in f:
            lang, w, pw = line.rstrip("\n").split("\t")
            out[(lang, int(w))] = int(pw)
    return out


# ------------------------------------------------------------------------ PCA

def _jacobi_eigh(S, tol=1e-14, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
    Returns (eigenvalues, eigenvectors-as-columns), descending order."""
    A = np.array(S, dtype=np.float64)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(1.0, float(np.abs(np.diag(A)).max()))
    for _ in range(max_sweeps):
        off = np.sqrt(max(0.0, (A * A).sum() - (np.diag(A) ** 2).sum()))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    vals = np.diag(A).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], V[:, order]


def _fix_signs(components):
    # deterministic orientation: largest-magnitude entry of each row positive
    out = components.copy()
    for i in range(out.shape[0]):
        j = int(np.argmax(np.abs(out[i])))
        if out[i, j] < 0:
            out[i] = -out[i]
    return out


@dataclass
class PcaResult:
    projected: np.ndarray     # (N, d)
    components: np.ndarray    # (d, D) rows, orthonormal up to rank
    eigenvalues: np.ndarray   # all D, descending
    mean: np.ndarray          # (D,)

    def explained_variance_ratio(self):
        ev = np.maximum(self.eigenvalues, 0.0)
        total = ev.sum()
        return ev / total if total > 0 else ev

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T


def pca_reduce(matrix, d):
    """Project rows onto the top-d principal directions of the mean-centered
    covariance. Rank-deficient inputs below d warn and zero-pad the missing
    directions."""
    X = np.asarray(matrix, dtype=np.float64)
    n, dim = X.shape
    if d > dim:
        raise ValueError(f"d={d} exceeds input dim {dim}")
    if np.unique(X, axis=0).shape[0] < d + 1:
        raise ValueError("need at least d+1 distinct rows")
    mu = X.mean(axis=0)
    Xc = X - mu
    cov = Xc.T @ Xc / (n - 1)
    vals, vecs = _jacobi_eigh(cov)
    rank_tol = max(vals[0], 0.0) * 1e-12 if vals.size else 0.0
    rank = int((vals > rank_tol).sum())
    comps = vecs[:, :d].T
    if rank < d:
        warnings.warn(f"data rank {rank} below requested d={d}; zero-padding",
                      RuntimeWarning)
        comps = comps.copy()
        comps[rank:] = 0.0
    comps = _fix_signs(comps)
    return PcaResult(Xc @ comps.T, comps, vals, mu)


def reduce_embeddings(embeddings, d):
    """Joint PCA over all languages' pretrained vectors, applied per
    language. A single shared basis keeps cross-language geometry (synonym
    proximity) intact, which per-language bases would destroy."""
    langs = sorted(embeddings)
    stacked = np.vstack([embeddings[l] for l in langs])
    res = pca_reduce(stacked, d)
    return {l: res.transform(embeddings[l]) for l in langs}, res


# --------------------------------------------------------------------- report

REPORT_HEADER_NOTE = "# frequency thresholds applied per language"


def write_reduction_report(path, rows):
    """rows: iterable of (method, setting, vocab_size, param_count)."""
    with open(path, "w") as f:
        f.write(REPORT_HEADER_NOTE + "\n")
        f.write("method,setting,vocab_size,param_count\n")
        for method, setting, size, params in rows:
            f.write(f"{method},{setting},{size},{params}\n")


def read_reduction_report(path):
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("method,"):
                continue
            method, setting, size, params = line.split(",")
            rows.append((method, setting, int(size), int(params)))
    return rows
