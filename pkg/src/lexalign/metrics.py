"""Bidirectional image-sentence retrieval metrics.

Recall@K in both directions (image-to-sentence and sentence-to-image),
mean recall (mR), and the HA/A aggregates over per-language mRs. Ranking
uses descending score with ties broken by ascending index, which makes
every metric reproducible against a brute-force sort oracle. Rounding to
one decimal happens only at the report boundary, in exact decimal
arithmetic with ties rounding up.
"""

import csv
import math
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from fractions import Fraction

import numpy as np

I2S = "i2s"
S2I = "s2i"
DIRECTIONS = (I2S, S2I)

METRICS_HEADER = ["lang", "i2s_r1", "i2s_r5", "i2s_r10",
                  "s2i_r1", "s2i_r5", "s2i_r10", "mR"]


# ---------------------------------------------------------------- score matrix


@dataclass
class ScoreMatrix:
    """Scores for one language: rows are images, columns are sentences.

    ``gt_rows[j]`` is the row index of sentence j's ground-truth image; an
    image may own several sentences (co-captions), a sentence has exactly
    one image.
    """

    scores: np.ndarray
    gt_rows: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.gt_rows = np.asarray(self.gt_rows, dtype=np.int64)
        if self.scores.ndim != 2 or self.scores.size == 0:
            raise ValueError("score matrix must be a nonempty 2-d array")
        if not np.isfinite(self.scores).all():
            raise ValueError("score matrix contains non-finite entries")
        n_img, n_sent = self.scores.shape
        if self.gt_rows.shape != (n_sent,):
            raise ValueError("need one ground-truth row per sentence column")
        if self.gt_rows.min() < 0 or self.gt_rows.max() >= n_img:
            raise ValueError("ground-truth row index out of range")

    @property
    def num_images(self):
        return self.scores.shape[0]

    @property
    def num_sentences(self):
        return self.scores.shape[1]

    def gt_cols(self, row):
        """Sentence columns whose ground truth is image ``row``."""
        return np.flatnonzero(self.gt_rows == row)


def _rank(values, index):
    """1-based rank of ``values[index]`` under descending score,
    ties broken by ascending index."""
    v = values[index]
    greater = int(np.sum(values > v))
    tied_before = int(np.sum(values[:index] == v))
    return 1 + greater + tied_before


def recall_at_k(matrix, k, direction):
    """Percentage of queries with a ground-truth hit in the top-``k``.

    Image queries succeed when any of their sentences makes the cut;
    sentence queries have a single correct image.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    s = matrix.scores
    if direction == I2S:
        hits = 0
        for i in range(matrix.num_images):
            cols = matrix.gt_cols(i)
            if cols.size == 0:
                raise ValueError(f"image row {i} has no ground-truth sentence")
            row = s[i]
            if any(_rank(row, int(j)) <= k for j in cols):
                hits += 1
        return 100.0 * hits / matrix.num_images
    hits = 0
    for j in range(matrix.num_sentences):
        col = s[:, j]
        if _rank(col, int(matrix.gt_rows[j])) <= k:
            hits += 1
    return 100.0 * hits / matrix.num_sentences


def round_half_up(value, decimals=1):
    """Decimal rounding with ties away from zero, e.g. 79.25 -> 79.3."""
    q = Decimal(1).scaleb(-decimals)
    return float(Decimal(str(float(value))).quantize(q, rounding=ROUND_HALF_UP))


def _decimal_mean(values):
    vals = [Decimal(str(float(v))) for v in values]
    return float((sum(vals) / len(vals)).quantize(Decimal("0.1"),
                                                  rounding=ROUND_HALF_UP))


def mean_recall(recalls):
    """Mean of the six recalls, reported to one decimal (half up)."""
    recalls = list(recalls)
    if len(recalls) != 6:
        raise ValueError("mR is the mean of exactly six recalls")
    return _decimal_mean(recalls)


def aggregate(per_language_mr, human_languages):
    """(HA, A): mean mR over the human-annotated set and over all languages."""
    if not per_language_mr:
        raise ValueError("no languages to aggregate")
    human = list(human_languages)
    if not human:
        raise ValueError("human language set is empty")
    missing = [l for l in human if l not in per_language_mr]
    if missing:
        raise ValueError(f"human languages absent from report: {missing}")
    ha = _decimal_mean([per_language_mr[l] for l in human])
    a = _decimal_mean(list(per_language_mr.values()))
    return ha, a


# ---------------------------------------------------------------- reports


@dataclass
class LanguageMetrics:
    """One report row. Recalls are stored at report precision (one decimal)
    so that mR, the mean of the six, reproduces published-table arithmetic
    and survives a CSV round trip."""

    i2s_r1: float
    i2s_r5: float
    i2s_r10: float
    s2i_r1: float
    s2i_r5: float
    s2i_r10: float

    def recalls(self):
        return (self.i2s_r1, self.i2s_r5, self.i2s_r10,
                self.s2i_r1, self.s2i_r5, self.s2i_r10)

    @property
    def mr(self):
        return mean_recall(self.recalls())


def score_matrix_metrics(matrix, ks=(1, 5, 10)):
    vals = []
    for direction in DIRECTIONS:
        for k in ks:
            vals.append(round_half_up(recall_at_k(matrix, k, direction)))
    return LanguageMetrics(*vals)


@dataclass
class MetricsReport:
    per_language: dict
    human_languages: list
    ha: float = field(init=False)
    a: float = field(init=False)

    def __post_init__(self):
        mrs = {l: m.mr for l, m in self.per_language.items()}
        self.ha, self.a = aggregate(mrs, self.human_languages)

    @property
    def mean_mr(self):
        return self.a


def write_metrics_rows(per_language, ha, a, path):
    """Write the report CSV from already-computed rows and aggregates."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for lang, m in per_language.items():
            row = [lang] + [f"{round_half_up(r):.1f}" for r in m.recalls()]
            w.writerow(row + [f"{m.mr:.1f}"])
        w.writerow(["HA"] + [""] * 6 + [f"{ha:.1f}"])
        w.writerow(["A"] + [""] * 6 + [f"{a:.1f}"])


def write_metrics_csv(report, path):
    write_metrics_rows(report.per_language, report.ha, report.a, path)


def read_metrics_csv(path):
    """Parse a report CSV back into (per-language rows, HA, A).

    The human-annotated set behind HA is not stored in the file, so the
    result is row data rather than a MetricsReport; writing it back via
    write_metrics_rows reproduces the file byte for byte.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != METRICS_HEADER:
        raise ValueError(f"{path} is not a metrics report")
    per_language, trailer = {}, {}
    for row in rows[1:]:
        if len(row) != len(METRICS_HEADER):
            raise ValueError(f"{path}: malformed row {row!r}")
        if row[0] in ("HA", "A"):
            trailer[row[0]] = float(row[7])
            continue
        m = LanguageMetrics(*(float(x) for x in row[1:7]))
        if f"{m.mr:.1f}" != row[7]:
            raise ValueError(f"{path}: stored mR for {row[0]} does not match "
                             "its recalls")
        per_language[row[0]] = m
    if set(trailer) != {"HA", "A"}:
        raise ValueError(f"{path} is missing HA/A trailer rows")
    if not per_language:
        raise ValueError(f"{path} has no language rows")
    return per_language, trailer["HA"], trailer["A"]


# ---------------------------------------------------------------- chance level


def chance_mean_recall(num_images, captions_per_image, ks=(1, 5, 10)):
    """Analytic mR of a random ranker, exact hypergeometric arithmetic.

    Image-to-sentence: each image owns ``captions_per_image`` of the
    ``num_images * captions_per_image`` sentences, so the chance that a
    uniformly random top-K contains at least one is
    1 - C(S-g, K) / C(S, K). Sentence-to-image: the single correct image
    lands in the top-K with probability K / I.
    """
    if num_images < 1 or captions_per_image < 1:
        raise ValueError("need at least one image and one caption per image")
    g = captions_per_image
    s = num_images * g
    vals = []
    for k in ks:
        if k >= s:
            vals.append(Fraction(1))
        else:
            vals.append(1 - Fraction(math.comb(s - g, k), math.comb(s, k)))
    for k in ks:
        vals.append(min(Fraction(1), Fraction(k, num_images)))
    return float(100 * sum(vals) / len(vals))


# ---------------------------------------------------------------- model modes

DIRECT = "direct"
TRANS_TO_PIVOT = "trans-to-pivot"
CLC_A = "clc-a"
CLC_C = "clc-c"


def evaluate_model(model, corpus, split, mode=DIRECT, translator=None,
                   clc=None, ks=(1, 5, 10)):
    """Score a trained model on one corpus split.

    ``direct`` ranks each language with its own pipeline; ``trans-to-pivot``
    first rewrites every sentence into the model's pivot language;
    ``clc-a``/``clc-c`` fuse per-language scores for the human-annotated
    query sets (consensus rows are reported for those languages only).
    """
    from . import model as model_mod

    covered = [l for l in corpus.languages if l in model.languages]
    if not covered:
        raise ValueError("model covers none of the corpus languages")
    human = [l for l in corpus.human_languages() if l in model.languages]
    if mode == DIRECT:
        per_language = {}
        for lang in covered:
            m = model_mod.score_split(model, corpus, split, lang)
            per_language[lang] = score_matrix_metrics(m, ks)
        return MetricsReport(per_language, human)
    if mode == TRANS_TO_PIVOT:
        if translator is None:
            raise ValueError("trans-to-pivot evaluation needs a translator")
        pivot = model.pivot
        if pivot not in model.languages:
            raise ValueError(f"model has no pivot pipeline for {pivot!r}")
        per_language = {}
        for lang in corpus.languages:
            m = model_mod.score_split(model, corpus, split, lang,
                                      translator=translator, target=pivot)
            per_language[lang] = score_matrix_metrics(m, ks)
        return MetricsReport(per_language, corpus.human_languages())
    if mode in (CLC_A, CLC_C):
        from . import ensemble
        if mode == CLC_C and clc is None:
            raise ValueError("clc-c evaluation needs a trained consensus "
                             "classifier")
        if translator is None:
            raise ValueError("consensus evaluation needs a translator")
        per_language = {}
        for lang in human:
            m = ensemble.fused_score_matrix(model, corpus, split, lang,
                                            translator, clc=clc, mode=mode)
            per_language[lang] = score_matrix_metrics(m, ks)
        return MetricsReport(per_language, human)
    raise ValueError(f"unknown evaluation mode {mode!r}")
