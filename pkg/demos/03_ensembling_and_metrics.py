"""
Cross-language ensembling and retrieval metrics
===============================================

At test time a query sentence does not have to travel alone: translating it
into the model's other languages yields one score vector per language, and
fusing those vectors usually beats any single query. This script compares
the four evaluation modes (direct, translate-to-pivot, average fusion,
trained classifier fusion) and then unpacks the metric arithmetic.

From the repository root:

    python demos/03_ensembling_and_metrics.py
"""

import numpy as np

from lexalign import corpus as cp
from lexalign import ensemble, metrics, model

# ---------------------------------------------------------------------------
# A trained model to evaluate
# ---------------------------------------------------------------------------

config = cp.CorpusConfig()
corpus, embeddings = cp.generate_synthetic(config)
trained, _ = model.train(corpus, embeddings, model.ModelConfig(seed=0))
print("model languages:", trained.languages)

# The simulated translator plays the external MT service: it maps a sentence
# into any other language of the corpus, word by word.
translator = cp.Translator(corpus, seed=0)
s = corpus.sentences[0]
t = translator.translate(s, corpus.languages[1])
print(f"translate {s.lang}->{t.lang}: {s.tokens} -> {t.tokens}")

# ---------------------------------------------------------------------------
# Mode 1 and 2: direct queries vs translate-to-pivot
# ---------------------------------------------------------------------------
# Direct scores each sentence in its own language. Translate-to-pivot news
# every query into the first language before scoring, the classic baseline
# for models that only understand one language.

direct = metrics.evaluate_model(trained, corpus, "test")
pivot = metrics.evaluate_model(trained, corpus, "test",
                               mode=metrics.TRANS_TO_PIVOT,
                               translator=translator)

# ---------------------------------------------------------------------------
# Mode 3: average fusion (CLC-A)
# ---------------------------------------------------------------------------
# Each query is augmented with its translations into all model languages;
# the per-language score vectors are averaged.

clc_a = metrics.evaluate_model(trained, corpus, "test",
                               mode=metrics.CLC_A, translator=translator)

# ---------------------------------------------------------------------------
# Mode 4: trained classifier fusion (CLC-C)
# ---------------------------------------------------------------------------
# A small relu network learns how much to trust each language's score. It
# trains on the validation split's score tables with the same mined triplet
# loss the retrieval model uses; the retrieval model itself stays frozen.
#
# The default classifier sums its hidden units with fixed unit weights
# (that is what makes the parameter count (|L|+1)*32). At desk scale that
# architecture struggles under triplet training: the fused score is a sum
# of relus, so when most mined hard negatives outrank their positives the
# cheapest descent direction shrinks the whole fused spread instead of
# reordering it. The optional trainable output layer restores a signed
# combination and trains cleanly, so this demo shows both.

tables = [ensemble.split_score_vectors(trained, corpus, "val", lang,
                                       translator)
          for lang in corpus.human_languages()]

fixed = ensemble.init_clc(trained.languages, seed=0)
fixed, hist_f = ensemble.train_clc(fixed, tables)
print("\nfixed-sum classifier: %d params, loss %.3f -> %.3f"
      % (ensemble.parameter_count(fixed), hist_f[0], hist_f[-1]))

learn = ensemble.init_clc(trained.languages, seed=0, trainable_output=True)
learn, hist_l = ensemble.train_clc(learn, tables)
print("trainable-output variant: %d params, loss %.3f -> %.3f"
      % (ensemble.parameter_count(learn), hist_l[0], hist_l[-1]))

clc_c_fixed = metrics.evaluate_model(trained, corpus, "test",
                                     mode=metrics.CLC_C,
                                     translator=translator, clc=fixed)
clc_c = metrics.evaluate_model(trained, corpus, "test", mode=metrics.CLC_C,
                               translator=translator, clc=learn)

# ---------------------------------------------------------------------------
# Side by side
# ---------------------------------------------------------------------------

print("\nA (average mR over languages) by evaluation mode:")
for name, rep in [("direct", direct), ("trans-to-pivot", pivot),
                  ("CLC-A", clc_a), ("CLC-C", clc_c)]:
    print(f"  {name:15s} {rep.a:5.1f}")

print("\nper-language mR, direct vs CLC-A:")
for lang in trained.languages:
    d, a = direct.per_language[lang], clc_a.per_language[lang]
    print(f"  {lang}: {d.mr:5.1f} -> {a.mr:5.1f}")

# ---------------------------------------------------------------------------
# The metric arithmetic
# ---------------------------------------------------------------------------
# mR is the mean of six recalls (R@1/5/10 in both directions), rounded half
# up to one decimal. A averages mR over every evaluated language; HA
# averages over the human-annotated ones only.

six = (62.9, 89.2, 95.8, 51.1, 84.0, 92.5)
print("\nmean_recall%s = %s" % (six, metrics.mean_recall(six)))

per_lang = {"L0": 79.3, "L1": 76.7, "L2": 77.2}
ha, a = metrics.aggregate(per_lang, human_languages=list(per_lang))
print("aggregate(%s) -> HA %s, A %s" % (per_lang, ha, a))

# recall_at_k itself: fraction of queries whose true item ranks in the top
# k, ties broken by candidate index.
scores = np.array([[0.9, 0.5, 0.1],
                   [0.2, 0.8, 0.7],
                   [0.3, 0.3, 0.3]])
gt = [0, 2, 2]
for k in (1, 2):
    r = metrics.recall_at_k(scores, gt, k)
    print(f"recall@{k} on the toy matrix: {r:.4f}")

# Chance level for this corpus: the analytic expectation of mR for random
# scoring, the yardstick the learning-signal acceptance check divides by.
chance = metrics.chance_mean_recall(len(corpus.splits["test"]),
                                    config.sentences_per_image)
print("\nchance mR at %d test images: %.2f" % (len(corpus.splits["test"]),
                                               chance))
print("direct A is %.1fx chance" % (direct.a / chance))
