"""Hybrid embedding model: per-language projections for frequent words plus a
shared latent vocabulary with hard token assignment for everything else.

Assignment is non-differentiable by design (one latent token per word); the
latent table itself trains by gradient. Pretraining alternates minibatch
triplet updates on sentence pairs with per-epoch reassignment under an
exploration policy, then freezes the map and prunes unused rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import epoch_batches
from .vocab import UNK


@dataclass
class ExplorationConfig:
    p: float = 0.2
    M: int = 20

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError("exploration p must lie in [0, 1]")
        if self.M < 1:
            raise ValueError("exploration M must be >= 1")


@dataclass
class LatentVocabulary:
    table: ad.Tensor          # (V_latent, D_u), trainable
    used_mask: np.ndarray     # bool per row

    @property
    def rows(self):
        return self.table.data.shape[0]

    @property
    def dim(self):
        return self.table.data.shape[1]


def init_latent(v_latent, d_u, seed):
    rng = np.random.default_rng((seed, 11))
    table = rng.normal(0.0, 1.0 / np.sqrt(d_u), size=(v_latent, d_u))
    return LatentVocabulary(ad.parameter(table, name="latent_table"),
                            np.zeros(v_latent, dtype=bool))


def _kmeans_rows(vectors, k, seed, iters=8):
    """Deterministic k-means over unit vectors, used to seat the latent
    table inside the projected word cloud. When the pool is smaller than k,
    the leftover rows stay at small noise."""
    rng = np.random.default_rng((seed, 16))
    n, d = vectors.shape
    if n >= k:
        pick = np.sort(rng.choice(n, size=k, replace=False))
        cents = vectors[pick].copy()
    else:
        noise = rng.normal(0.0, 1.0 / np.sqrt(d), size=(k - n, d))
        cents = np.vstack([vectors, noise])
    for _ in range(iters):
        d2 = ((vectors ** 2).sum(axis=1)[:, None]
              + (cents ** 2).sum(axis=1)[None, :]
              - 2.0 * vectors @ cents.T)
        owner = d2.argmin(axis=1)
        for c in range(min(k, n) if n < k else k):
            mask = owner == c
            if mask.any():
                cents[c] = vectors[mask].mean(axis=0)
    return cents


def seed_latent_from_words(latent, languages, reduced, split, unk_vecs, fc,
                           seed):
    """Overwrite the latent rows with k-means centroids of every projected
    agnostic word (plus the UNK buckets). Clustering happens on the raw
    projected vectors so latent rows live at the same scale as the
    specific-word path; a mixed sentence then feeds the recurrent encoder
    tokens from a single coherent cloud."""
    pool = []
    for lang in languages:
        w_fc, b_fc = fc[lang]
        words = list(split.agnostic[lang])
        vecs = [reduced[lang][words]] if words else []
        vecs.append(unk_vecs[lang][None, :])
        proj = np.vstack(vecs) @ w_fc.data + b_fc.data
        pool.append(proj)
    pool = np.vstack(pool)
    pool = pool[np.linalg.norm(pool, axis=1) > 0.0]
    if pool.shape[0] == 0:
        return
    latent.table.data[:] = _kmeans_rows(pool, latent.rows, seed)


class AssignmentMap:
    """Total map from agnostic (language, word) keys to latent row indices.
    Mutation after freeze() is an error."""

    def __init__(self):
        self._map = {}
        self.frozen = False

    def set(self, lang, word, idx):
        if self.frozen:
            raise RuntimeError("assignment map is frozen")
        self._map[(lang, word)] = int(idx)

    def get(self, lang, word):
        try:
            return self._map[(lang, word)]
        except KeyError:
            raise ValueError(f"no latent assignment for ({lang}, {word})")

    def freeze(self):
        self.frozen = True

    def items(self):
        return sorted(self._map.items())

    def indices(self):
        return sorted(set(self._map.values()))

    def __len__(self):
        return len(self._map)

    def __contains__(self, key):
        return key in self._map


def score_latent_tokens(vec, table):
    """Latent row indices ranked by descending cosine similarity to vec,
    ties broken by ascending index."""
    v = np.asarray(vec, dtype=np.float64)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ValueError("cannot score a zero vector")
    T = table.table.data if isinstance(table, LatentVocabulary) else \
        (table.data if isinstance(table, ad.Tensor) else np.asarray(table))
    if T.shape[0] == 0:
        raise ValueError("latent table is empty")
    norms = np.linalg.norm(T, axis=1)
    sims = (T @ v) / (np.maximum(norms, 1e-300) * nv)
    sims = np.where(norms == 0.0, -np.inf, sims)
    return np.lexsort((np.arange(T.shape[0]), -sims))


def assign_token(vec, table, explore=None, rng=None):
    """Argmax latent token for vec; with exploration on, probability p of
    drawing uniformly from the top-M instead."""
    ranked = score_latent_tokens(vec, table)
    if explore is None or explore.p == 0.0:
        return int(ranked[0])
    if rng is None:
        raise ValueError("exploration requires an rng")
    if rng.random() < explore.p:
        m = min(explore.M, len(ranked))
        return int(ranked[int(rng.integers(0, m))])
    return int(ranked[0])


def _project_np(vecs, w, b):
    return np.atleast_2d(vecs) @ w.data + b.data


def _agnostic_keys(languages, reduced, split, unk_vecs):
    """Deterministic iteration order of every key needing a latent token:
    each language's agnostic words ascending, then its UNK bucket."""
    for lang in languages:
        for w in split.agnostic[lang]:
            yield lang, w, reduced[lang][w]
        yield lang, UNK, unk_vecs[lang]


def assign_all(languages, reduced, split, unk_vecs, latent, fc, explore, rng,
               amap=None):
    """(Re)assign every agnostic word and per-language UNK bucket."""
    if amap is None:
        amap = AssignmentMap()
    T = latent.table.data
    tnorms = np.maximum(np.linalg.norm(T, axis=1), 1e-300)
    for lang in languages:
        w_fc, b_fc = fc[lang]
        words = list(split.agnostic[lang]) + [UNK]
        vecs = np.vstack([reduced[lang][[w for w in split.agnostic[lang]]],
                          unk_vecs[lang][None, :]]) \
            if split.agnostic[lang] else unk_vecs[lang][None, :]
        proj = _project_np(vecs, w_fc, b_fc)
        vnorms = np.linalg.norm(proj, axis=1)
        if np.any(vnorms == 0.0):
            raise ValueError("cannot score a zero vector")
        sims = (proj / vnorms[:, None]) @ (T / tnorms[:, None]).T
        ranked = np.argsort(-sims, axis=1, kind="stable")
        for i, w in enumerate(words):
            if explore is not None and explore.p > 0.0 \
                    and rng.random() < explore.p:
                m = min(explore.M, ranked.shape[1])
                amap.set(lang, w, ranked[i, int(rng.integers(0, m))])
            else:
                amap.set(lang, w, ranked[i, 0])
    return amap


def sentence_rep_for_pretrain(sentence, reduced, fc, split, latent, amap):
    """Mean of per-token vectors: specific words through the language FC,
    agnostic words substituted by their current latent rows."""
    mat = _pretrain_matrix([sentence], reduced, fc, split, latent, amap)[0]
    return ad.mean(mat, axis=0)


def _pretrain_matrix(sentences, reduced, fc, split, latent, amap):
    """Per-sentence (T, D_u) token matrices sharing one gather graph."""
    mats = []
    red_consts = {}
    for s in sentences:
        spec, agn = [], []
        for pos, w in enumerate(s.tokens):
            if not (0 <= w < reduced[s.lang].shape[0]):
                raise ValueError(f"unknown token {w} for language {s.lang}")
            if split.is_specific(s.lang, w):
                spec.append((pos, w))
            else:
                agn.append((pos, amap.get(s.lang, w)))
        pieces, order = [], []
        if spec:
            if s.lang not in red_consts:
                red_consts[s.lang] = ad.constant(reduced[s.lang],
                                                 name=f"reduced_{s.lang}")
            w_fc, b_fc = fc[s.lang]
            gathered = ad.take_rows(red_consts[s.lang], [w for _, w in spec])
            pieces.append(ad.affine(gathered, w_fc, b_fc))
            order.extend(pos for pos, _ in spec)
        if agn:
            pieces.append(ad.take_rows(latent.table, [i for _, i in agn]))
            order.extend(pos for pos, _ in agn)
        mat = pieces[0] if len(pieces) == 1 else ad.concat(pieces, axis=0)
        perm = np.argsort(np.asarray(order), kind="stable")
        if not np.array_equal(perm, np.arange(len(order))):
            mat = ad.take_rows(mat, perm)
        mats.append(mat)
    return mats


def _top_violations(sim, margin, top_n):
    """Mine the top-N violated triplets from a similarity matrix whose
    diagonal holds the positive pairs. Returns (rows, cols, direction)."""
    b = sim.shape[0]
    cands = []
    for i in range(b):
        for j in range(b):
            if i == j:
                continue
            v = margin - sim[i, i] + sim[i, j]
            if v > 0.0:
                cands.append((v, 0, i, j))
    for i in range(b):
        for j in range(b):
            if i == j:
                continue
            v = margin - sim[i, i] + sim[j, i]
            if v > 0.0:
                cands.append((v, 1, i, j))
    cands.sort(key=lambda t: -t[0])  # stable: ties keep enumeration order
    return cands[:top_n]


@dataclass
class PretrainConfig:
    v_latent: int = 200
    d_u: int = 64
    margin: float = 0.05
    top_n: int = 10
    explore: ExplorationConfig = field(default_factory=ExplorationConfig)
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


@dataclass
class PretrainResult:
    latent: LatentVocabulary
    amap: AssignmentMap
    fc: dict                  # lang -> (W, b) Tensors
    epoch_losses: list


def init_projections(languages, reduced_dim, d_u, seed):
    """Per-language FC from reduced pretrained space to the universal space.
    All languages start from the same draw so initial scores are comparable
    across languages."""
    rng = np.random.default_rng((seed, 12))
    w0 = rng.normal(0.0, 1.0 / np.sqrt(reduced_dim), size=(reduced_dim, d_u))
    fc = {}
    for lang in languages:
        fc[lang] = (ad.parameter(w0.copy(), name=f"fc_w_{lang}"),
                    ad.parameter(np.zeros(d_u), name=f"fc_b_{lang}"))
    return fc


def pretrain_latent(corpus, reduced, split, config):
    """Learn the latent table, the per-language projections, and the hard
    assignment map on train-split sentence pairs (cross-language positives
    included), with per-epoch reassignment and a frozen argmax map at the
    end."""
    langs = corpus.languages
    rdim = reduced[langs[0]].shape[1]
    latent = init_latent(config.v_latent, config.d_u, config.seed)
    fc = init_projections(langs, rdim, config.d_u, config.seed)
    unk_vecs = {l: reduced[l].mean(axis=0) for l in langs}
    seed_latent_from_words(latent, langs, reduced, split, unk_vecs, fc,
                           config.seed)
    explore_rng = np.random.default_rng((config.seed, 13))
    batch_rng = np.random.default_rng((config.seed, 14))

    amap = assign_all(langs, reduced, split, unk_vecs, latent, fc,
                      config.explore, explore_rng)
    params = [latent.table] + [t for l in langs for t in fc[l]]
    opt = ad.Adam({t.name: t for t in params}, lr=config.lr)
    epoch_losses = []
    for _ in range(config.epochs):
        total = 0.0
        for batch in epoch_batches(corpus, "train", config.batch_size,
                                   batch_rng):
            sents = [it.sent_a for it in batch] + [it.sent_b for it in batch]
            mats = _pretrain_matrix(sents, reduced, fc, split, latent, amap)
            reps = ad.stack_rows([ad.mean(m, axis=0) for m in mats])
            normed = ad.l2_normalize(reps)
            a_n, b_n = ad.split(normed, [len(batch), len(batch)], axis=0)
            sim = ad.matmul(a_n, ad.transpose(b_n))
            chosen = _top_violations(sim.data, config.margin, config.top_n)
            if not chosen:
                continue
            rows = [i if d == 0 else j for _, d, i, j in chosen]
            cols = [j if d == 0 else i for _, d, i, j in chosen]
            diag = [i for _, d, i, j in chosen]
            neg = ad.take_elements(sim, rows, cols)
            pos = ad.take_elements(sim, diag, diag)
            loss = ad.tsum(ad.relu(ad.add_scalar(ad.sub(neg, pos),
                                                 config.margin)))
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            total += float(loss.data)
        epoch_losses.append(total)
        amap = assign_all(langs, reduced, split, unk_vecs, latent, fc,
                          config.explore, explore_rng)
    amap = assign_all(langs, reduced, split, unk_vecs, latent, fc,
                      None, None)
    amap.freeze()
    latent.used_mask = np.zeros(latent.rows, dtype=bool)
    latent.used_mask[amap.indices()] = True
    return PretrainResult(latent, amap, fc, epoch_losses)


def prune_unused(latent, amap):
    """Drop latent rows no word is assigned to; remap indices. Every word's
    embedding vector is bit-identical before and after."""
    if not amap.frozen:
        raise ValueError("prune requires a frozen assignment map")
    used = amap.indices()
    if used == list(range(latent.rows)):
        return latent, amap
    remap = {old: new for new, old in enumerate(used)}
    table = ad.parameter(latent.table.data[used].copy(), name="latent_table")
    pruned = LatentVocabulary(table, np.ones(len(used), dtype=bool))
    amap2 = AssignmentMap()
    for (lang, w), idx in amap.items():
        amap2.set(lang, w, remap[idx])
    amap2.freeze()
    return pruned, amap2


# ------------------------------------------------------------------ embedder

@dataclass
class HybridEmbedder:
    """Resolves any (language, word) to one D_u vector.

    mode "hybrid": top-K words through the per-language FC over frozen
    reduced pretrained vectors; all other words (and UNK) through their
    assigned latent row. K=0 with no projections is the language-agnostic
    baseline. mode "free": per-word trainable tables (dim free_dim, last row
    the UNK bucket), through a shared per-language FC when free_dim != d_u.
    An optional vocabulary mapping rewrites keys before resolution.
    """
    languages: list
    d_u: int
    mode: str
    reduced: dict = None
    split: object = None
    latent: LatentVocabulary = None
    amap: AssignmentMap = None
    fc: dict = None
    free_tables: dict = None
    vocab_map: object = None

    def __post_init__(self):
        self._red_consts = {}
        if self.mode == "hybrid" and self.reduced is not None:
            self._red_consts = {
                l: ad.constant(self.reduced[l], name=f"reduced_{l}")
                for l in self.languages}

    def resolve(self, lang, word):
        if self.vocab_map is not None:
            lang, word = self.vocab_map.lookup(lang, word)
        if self.mode == "free":
            table = self.free_tables[lang]
            n_words = table.data.shape[0] - 1
            if word == UNK:
                return ("free", lang, n_words)
            if not (0 <= word < n_words):
                raise ValueError(f"unknown word {word} for language {lang}")
            return ("free", lang, word)
        if word == UNK:
            return ("lat", self.amap.get(lang, UNK), None)
        if not (0 <= word < self.reduced[lang].shape[0]):
            raise ValueError(f"unknown word {word} for language {lang}")
        if self.split.is_specific(lang, word):
            return ("spec", lang, word)
        return ("lat", self.amap.get(lang, word), None)


def build_hybrid_embedder(languages, reduced, split, latent, amap, fc, d_u,
                          vocab_map=None):
    if not amap.frozen:
        raise ValueError("embedder requires a frozen assignment map")
    for lang in languages:
        for w in split.agnostic[lang]:
            if (lang, w) not in amap:
                raise ValueError(f"assignment map misses ({lang}, {w})")
        if (lang, UNK) not in amap:
            raise ValueError(f"assignment map misses ({lang}, UNK)")
    if split.K > 0 and fc is None:
        raise ValueError("K > 0 requires per-language projections")
    return HybridEmbedder(languages=list(languages), d_u=d_u, mode="hybrid",
                          reduced=reduced, split=split, latent=latent,
                          amap=amap, fc=fc, vocab_map=vocab_map)


def build_free_embedder(languages, init_tables, d_u, seed, vocab_map=None):
    """Per-word trainable baseline. init_tables: lang -> (V, dim) start
    values; a UNK row (their mean) is appended per language."""
    tables, dim = {}, None
    for lang in languages:
        t = np.asarray(init_tables[lang], dtype=np.float64)
        dim = t.shape[1]
        full = np.vstack([t, t.mean(axis=0, keepdims=True)])
        tables[lang] = ad.parameter(full, name=f"free_{lang}")
    fc = None
    if dim != d_u:
        fc = init_projections(languages, dim, d_u, seed)
    return HybridEmbedder(languages=list(languages), d_u=d_u, mode="free",
                          free_tables=tables, fc=fc, vocab_map=vocab_map)


def embed_matrix(embedder, lang, tokens):
    """(T, d_u) tensor of token embeddings, batched by resolution path."""
    if len(tokens) == 0:
        raise ValueError("empty token sequence")
    resolved = [embedder.resolve(lang, w) for w in tokens]
    groups = {}
    for pos, r in enumerate(resolved):
        groups.setdefault(r[:2] if r[0] != "lat" else ("lat",), []).append(
            (pos, r))
    pieces, order = [], []
    for key in sorted(groups, key=str):
        entries = groups[key]
        order.extend(pos for pos, _ in entries)
        if key[0] == "lat":
            idxs = [r[1] for _, r in entries]
            pieces.append(ad.take_rows(embedder.latent.table, idxs))
        elif key[0] == "spec":
            l2 = key[1]
            words = [r[2] for _, r in entries]
            gathered = ad.take_rows(embedder._red_consts[l2], words)
            w_fc, b_fc = embedder.fc[l2]
            pieces.append(ad.affine(gathered, w_fc, b_fc))
        else:
            l2 = key[1]
            rows = [r[2] for _, r in entries]
            gathered = ad.take_rows(embedder.free_tables[l2], rows)
            if embedder.fc is not None:
                w_fc, b_fc = embedder.fc[l2]
                gathered = ad.affine(gathered, w_fc, b_fc)
            pieces.append(gathered)
    mat = pieces[0] if len(pieces) == 1 else ad.concat(pieces, axis=0)
    perm = np.argsort(np.asarray(order), kind="stable")
    if not np.array_equal(perm, np.arange(len(order))):
        mat = ad.take_rows(mat, perm)
    return mat


def embed_tokens(embedder, sentence):
    """Sequence of universal embeddings for a sentence, one row per token."""
    return embed_matrix(embedder, sentence.lang, sentence.tokens)


def trainable_params(embedder):
    params = []
    if embedder.mode == "hybrid":
        params.append(embedder.latent.table)
        if embedder.split.K > 0 and embedder.fc is not None:
            for lang in embedder.languages:
                params.extend(embedder.fc[lang])
    else:
        for lang in embedder.languages:
            params.append(embedder.free_tables[lang])
        if embedder.fc is not None:
            for lang in embedder.languages:
                params.extend(embedder.fc[lang])
    return params


def parameter_count(embedder):
    """Trainable floats reachable by the embedding paths.

    hybrid: V_latent·D_u, plus per-language (r+1)·D_u projections when K>0.
    free: per-language (V+1)·free_dim tables, plus projections when
    free_dim != d_u. Adding one specific word changes the count by 0 in
    hybrid mode (the projection is shared) and by free_dim in free mode.
    """
    return int(sum(t.data.size for t in trainable_params(embedder)))


# ------------------------------------------------------------------------- IO

def save_latent_tsv(latent, path):
    with open(path, "w") as f:
        f.write("lexalign-latent v1\n")
        for i, row in enumerate(latent.table.data):
            vals = "\t".join(repr(float(v)) for v in row)
            f.write(f"{i}\t{int(latent.used_mask[i])}\t{vals}\n")


def load_latent_tsv(path):
    with open(path) as f:
        if f.readline().rstrip("\n") != "lexalign-latent v1":
            raise ValueError(f"{path} is not a latent table file")
        rows, mask = [], []
        for line in f:
            parts = line.rstrip("\n").split("\t")
            mask.append(bool(int(parts[1])))
            rows.append([float(v) for v in parts[2:]])
    table = ad.parameter(np.array(rows, dtype=np.float64),
                         name="latent_table")
    return LatentVocabulary(table, np.array(mask, dtype=bool))


def save_pretrained(result, path):
    """Checkpoint a whole pretraining result (latent, assignments, FCs)."""
    tensors = {"latent_table": result.latent.table}
    for lang, (w, b) in result.fc.items():
        tensors[w.name] = w
        tensors[b.name] = b
    by_lang = {}
    for (lang, word), row in result.amap.items():
        by_lang.setdefault(lang, []).append([int(word), int(row)])
    for entries in by_lang.values():
        entries.sort()
    meta = {"kind": "latent-package",
            "languages": sorted(result.fc),
            "used": [int(v) for v in result.latent.used_mask],
            "assignments": by_lang,
            "epoch_losses": [float(v) for v in result.epoch_losses]}
    ad.save_checkpoint(path, tensors, meta=meta)


def load_pretrained(path):
    tensors, meta = ad.load_checkpoint(path)
    if meta is None or meta.get("kind") != "latent-package":
        raise ValueError(f"{path} is not a latent package")
    latent = LatentVocabulary(
        table=ad.parameter(tensors["latent_table"], name="latent_table"),
        used_mask=np.asarray(meta["used"], dtype=bool))
    amap = AssignmentMap()
    for lang, entries in meta["assignments"].items():
        for word, row in entries:
            amap.set(lang, int(word), int(row))
    amap.freeze()
    fc = {l: (ad.parameter(tensors[f"fc_w_{l}"], name=f"fc_w_{l}"),
              ad.parameter(tensors[f"fc_b_{l}"], name=f"fc_b_{l}"))
          for l in meta["languages"]}
    return PretrainResult(latent=latent, amap=amap, fc=fc,
                          epoch_losses=list(meta["epoch_losses"]))


def save_assign_tsv(amap, path):
    with open(path, "w") as f:
        f.write(f"lexalign-assign v1\tfrozen={int(amap.frozen)}\n")
        for (lang, w), idx in amap.items():
            f.write(f"{lang}\t{w}\t{idx}\n")


def load_assign_tsv(path):
    amap = AssignmentMap()
    with open(path) as f:
        head = f.readline().rstrip("\n").split("\t")
        if head[0] != "lexalign-assign v1":
            raise ValueError(f"{path} is not an assignment file")
        frozen = head[1] == "frozen=1"
        for line in f:
            lang, w, idx = line.rstrip("\n").split("\t")
            amap.set(lang, int(w), int(idx))
    if frozen:
        amap.freeze()
    return amap
