"""
Synthetic multilingual corpus playground
========================================

Generate a small image-caption corpus in four synthetic languages, poke at
its structure, then run the vocabulary pipeline: frequency counts, the
top-K specific/agnostic split, and PCA reduction of the pretrained word
vectors.

Run from the repository root:

    python demos/01_corpus_playground.py
"""

import numpy as np

from lexalign import corpus as cp
from lexalign import vocab

# ---------------------------------------------------------------------------
# Generate a corpus
# ---------------------------------------------------------------------------
# Every knob lives on CorpusConfig. The generator is deterministic per seed:
# the same config always yields byte-identical data.

config = cp.CorpusConfig(seed=11, num_images=80, num_languages=4,
                         concepts=30, vocab_per_lang=120,
                         sentences_per_image=2, word_dim=20, feature_dim=64)
corpus, embeddings = cp.generate_synthetic(config)

print("languages:       ", corpus.languages)
print("images:          ", len(corpus.images))
print("sentences:       ", len(corpus.sentences))
print("vocab per lang:  ", corpus.vocab_sizes)
print("splits:          ", {k: len(v) for k, v in corpus.splits.items()})

# Each image carries a feature vector; each sentence is a token-id sequence
# in one language, tied to its image.
im = corpus.images[0]
print("\nfirst image feature shape:", im.feature.shape)
for s in corpus.sentences[:4]:
    print(f"  sentence lang={s.lang} image={s.image_id} tokens={s.tokens}")

# ---------------------------------------------------------------------------
# Pretrained word vectors
# ---------------------------------------------------------------------------
# generate_synthetic also returns per-language word vectors. Words that share
# an underlying concept across languages sit near each other (up to a
# per-language offset), which is what the latent vocabulary later exploits.

for lang, table in embeddings.items():
    print(f"embeddings[{lang}] shape {table.shape}")

# ---------------------------------------------------------------------------
# Word frequencies follow a Zipf-like curve
# ---------------------------------------------------------------------------

stats = vocab.count_frequencies(corpus)
l0 = corpus.languages[0]
by_count = sorted(stats.counts[l0].values(), reverse=True)
print("\ntop-10 word counts in", l0, ":", by_count[:10])
print("bottom-10 word counts:", by_count[-10:])
print("unobserved words:", stats.vocab_sizes[l0] - stats.total_types(l0),
      "of", stats.vocab_sizes[l0])

# ---------------------------------------------------------------------------
# The specific/agnostic split
# ---------------------------------------------------------------------------
# The hybrid embedding keeps the K most frequent words of each language as
# language-specific rows and routes everything else through the shared
# latent vocabulary.

split = vocab.split_top_k(stats, K=15)
print("\nK =", split.K)
print("specific words in", l0, ":", len(split.specific[l0]))
print("agnostic words in", l0, ":", len(split.agnostic[l0]))
assert split.is_specific(l0, split.specific[l0][0])

# ---------------------------------------------------------------------------
# PCA reduction of the pretrained vectors
# ---------------------------------------------------------------------------
# All languages are stacked and reduced with one shared basis so that
# cross-language synonym geometry survives the projection.

reduced, pca = vocab.reduce_embeddings(embeddings, d=8)
for lang in corpus.languages[:2]:
    print(f"reduced[{lang}] shape {reduced[lang].shape}")

# The PCA result reports the full variance spectrum; the first d entries
# are what the projection keeps.
ratios = pca.explained_variance_ratio()
print("\nexplained variance, kept components:", np.round(ratios[:8], 3))
print("total kept by 8 of", config.word_dim, "dims:",
      round(float(ratios[:8].sum()), 3))

# ---------------------------------------------------------------------------
# Round trip through the on-disk formats
# ---------------------------------------------------------------------------

import tempfile, os, hashlib

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "corpus.jsonl")
    vecs = os.path.join(tmp, "vectors.tsv")
    cp.save_corpus_jsonl(corpus, path)
    cp.save_vectors_tsv(embeddings, vecs)
    again, emb_again = cp.load_corpus_jsonl(path), cp.load_vectors_tsv(vecs)

    path2 = os.path.join(tmp, "corpus2.jsonl")
    cp.save_corpus_jsonl(again, path2)
    h = lambda p: hashlib.sha256(open(p, "rb").read()).hexdigest()
    print("\nload->save byte identity:", h(path) == h(path2))
    print("vector round trip exact:",
          all(np.array_equal(embeddings[l], emb_again[l]) for l in corpus.languages))
