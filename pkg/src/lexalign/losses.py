"""Training objectives: mined triplet losses over image-sentence and
sentence-sentence similarities, masked cross-language reconstruction (both an
averaging and a mask-token variant), an adversarial language classifier
behind a gradient-reversal node, and the weighted total.

Mining happens on recorded similarity values; the selected triplets then
index back into the similarity tensor, so the loss graph stays replayable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass
class LossWeights:
    lambda1: float = 1.5      # query-anchored multimodal direction
    lambda2: float = 1e-4     # masked reconstruction
    lambda3: float = 1e-6     # adversarial
    lambda4: float = 5e-2     # neighborhood
    margin: float = 0.05
    top_n: int = 10
    mask_ratio: float = 0.2

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (0.0 < self.mask_ratio < 1.0):
            raise ValueError("mask_ratio must lie in (0, 1)")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")


def triplet_loss(x, y_pos, y_neg, m):
    """max(0, m + d(x, y+) - d(x, y-)) with cosine distance."""
    d_pos = ad.cosine_distance(x, y_pos)
    d_neg = ad.cosine_distance(x, y_neg)
    return ad.relu(ad.add_scalar(ad.sub(d_pos, d_neg), m))


def _unit_rows(x):
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-300)


def mine_hard_negatives(anchors, positives, top_n, margin, groups=None):
    """Most-violated triplets (anchor i, positive i, negative j) by cosine
    distance, from recorded representations.

    Returns [(violation, i, j)] with the top_n largest positive violations,
    ties broken by enumeration order (i ascending, then j). groups marks
    rows sharing a ground-truth item; same-group columns are never
    negatives. Raises when no valid negative exists.
    """
    a = _unit_rows(np.atleast_2d(np.asarray(anchors, dtype=np.float64)))
    b = _unit_rows(np.atleast_2d(np.asarray(positives, dtype=np.float64)))
    n = a.shape[0]
    sim = a @ b.T
    cands = []
    valid = 0
    for i in range(n):
        for j in range(n):
            if j == i or (groups is not None and groups[j] == groups[i]):
                continue
            valid += 1
            v = margin - sim[i, i] + sim[i, j]
            if v > 0.0:
                cands.append((float(v), i, j))
    if valid == 0:
        raise ValueError("no valid negative in batch")
    cands.sort(key=lambda t: -t[0])  # stable: enumeration order on ties
    return cands[:top_n]


def _hinge_sum(sim, chosen, margin, swap=False):
    """Graph-side sum of hinge terms for mined (i, j) pairs against a
    similarity tensor whose diagonal holds the positives. swap reads the
    negative at [j, i] instead of [i, j]."""
    rows = [j if swap else i for _, i, j in chosen]
    cols = [i if swap else j for _, i, j in chosen]
    diag = [i for _, i, j in chosen]
    neg = ad.take_elements(sim, rows, cols)
    pos = ad.take_elements(sim, diag, diag)
    return ad.tsum(ad.relu(ad.add_scalar(ad.sub(neg, pos), margin)))


def _sim_matrix(a, b):
    return ad.matmul(ad.l2_normalize(a), ad.transpose(ad.l2_normalize(b)))


def _zero():
    return ad.constant(np.asarray(0.0), name="zero_loss")


def mined_triplet_term(a, b, weights, groups=None):
    """Top-N mined triplet sum with anchors a, positives b (one direction)."""
    sim = _sim_matrix(a, b)
    chosen = _mine_from_sim(sim.data, weights.margin, weights.top_n, groups)
    if not chosen:
        return _zero()
    return _hinge_sum(sim, chosen, weights.margin)


def _mine_from_sim(sim, margin, top_n, groups=None, swap=False):
    n = sim.shape[0]
    cands = []
    valid = 0
    for i in range(n):
        for j in range(n):
            if j == i or (groups is not None and groups[j] == groups[i]):
                continue
            valid += 1
            s_neg = sim[j, i] if swap else sim[i, j]
            v = margin - sim[i, i] + s_neg
            if v > 0.0:
                cands.append((float(v), i, j))
    if valid == 0:
        raise ValueError("no valid negative in batch")
    cands.sort(key=lambda t: -t[0])
    return cands[:top_n]


# ---------------------------------------------------------------- multimodal

def multimodal_loss(img, query, weights, groups=None, masked_query=None):
    """Bidirectional mined triplet loss in the joint space: image-anchored
    plus lambda1 times query-anchored, each with its own top-N mining; when
    masked sentence representations are given the same two terms are
    recomputed on them and added (same lambda1)."""
    total = _directional_pair(img, query, weights, groups)
    if masked_query is not None:
        total = ad.add(total, _directional_pair(img, masked_query, weights,
                                                groups))
    return total


def _directional_pair(img, query, weights, groups):
    sim_iq = _sim_matrix(img, query)      # rows images, cols queries
    fwd = _mine_from_sim(sim_iq.data, weights.margin, weights.top_n, groups)
    term = _hinge_sum(sim_iq, fwd, weights.margin) if fwd else _zero()
    rev = _mine_from_sim(sim_iq.data.T, weights.margin, weights.top_n, groups)
    if rev:
        rev_term = _hinge_sum(ad.transpose(sim_iq), rev, weights.margin)
        term = ad.add(term, ad.scalar_mul(rev_term, weights.lambda1))
    return term


# -------------------------------------------------------------------- masking

@dataclass
class MaskedHalf:
    mat: ad.Tensor            # original (T, D_u) token matrix
    masked: tuple             # masked positions
    survivors: tuple          # kept positions


@dataclass
class MaskedPair:
    i: MaskedHalf
    j: MaskedHalf


def choose_mask_indices(n_tokens, ratio, rng):
    """How many and which positions to mask: round(ratio*n) clamped to
    [1, n-1], drawn without replacement."""
    if n_tokens < 2:
        raise ValueError("masking needs at least 2 tokens")
    count = int(np.clip(round(ratio * n_tokens), 1, n_tokens - 1))
    masked = tuple(sorted(int(k) for k in
                          rng.choice(n_tokens, size=count, replace=False)))
    survivors = tuple(t for t in range(n_tokens) if t not in masked)
    return masked, survivors


def make_masked_half(mat, ratio, rng):
    masked, survivors = choose_mask_indices(mat.data.shape[0], ratio, rng)
    return MaskedHalf(mat, masked, survivors)


def mask_rep_average(half):
    """Mean of surviving token vectors."""
    return ad.mean(ad.take_rows(half.mat, list(half.survivors)), axis=0)


def masked_token_matrix(half, mask_vec):
    """Token matrix with masked rows replaced by the learned mask vector."""
    t = half.mat.data.shape[0]
    keep = np.ones(t)
    keep[list(half.masked)] = 0.0
    ind = (1.0 - keep)[:, None]
    kept = ad.mul(half.mat, ad.constant(keep[:, None]))
    fill = ad.matmul(ad.constant(ind), ad.stack_rows([mask_vec]))
    return ad.add(kept, fill)


def mask_sentence(mat, ratio, variant, rng, mclm=None):
    """One masked representation of a token matrix. variant "average": mean
    of survivors; "sequence": mask-token substitution through the shared
    recurrent cell and output layer."""
    half = make_masked_half(mat, ratio, rng)
    if variant == "average":
        return mask_rep_average(half), half
    if variant == "sequence":
        if mclm is None:
            raise ValueError("sequence variant needs the mclm module")
        seq = masked_token_matrix(half, mclm.mask_vec)
        h = ad.gru_scan([seq], mclm.cell)
        return ad.mean(ad.affine(h, mclm.out_w, mclm.out_b), axis=0), half
    raise ValueError(f"unknown masking variant {variant!r}")


# ----------------------------------------------------------------------- MCLM

@dataclass
class MclmModule:
    mask_vec: ad.Tensor
    cell: dict
    out_w: ad.Tensor
    out_b: ad.Tensor
    pred_avg_w: ad.Tensor
    pred_avg_b: ad.Tensor
    pred_seq_w: ad.Tensor
    pred_seq_b: ad.Tensor

    def params(self):
        out = [self.mask_vec]
        out.extend(self.cell[k] for k in sorted(self.cell))
        out.extend([self.out_w, self.out_b, self.pred_avg_w, self.pred_avg_b,
                    self.pred_seq_w, self.pred_seq_b])
        return out


def _gru_params(d_in, d_hid, rng, prefix):
    p = {}
    for gate in ("r", "z", "h"):
        p[f"w_{gate}"] = ad.parameter(
            rng.normal(0, 1 / np.sqrt(d_in), (d_in, d_hid)),
            name=f"{prefix}_w_{gate}")
        p[f"u_{gate}"] = ad.parameter(
            rng.normal(0, 1 / np.sqrt(d_hid), (d_hid, d_hid)),
            name=f"{prefix}_u_{gate}")
        p[f"b_{gate}"] = ad.parameter(np.zeros(d_hid),
                                      name=f"{prefix}_b_{gate}")
    return p


def init_mclm(d_u, seed):
    rng = np.random.default_rng((seed, 21))
    two = 2 * d_u
    return MclmModule(
        mask_vec=ad.parameter(rng.normal(0, 1 / np.sqrt(d_u), d_u),
                              name="mclm_mask_vec"),
        cell=_gru_params(d_u, d_u, rng, "mclm_cell"),
        out_w=ad.parameter(rng.normal(0, 1 / np.sqrt(d_u), (d_u, d_u)),
                           name="mclm_out_w"),
        out_b=ad.parameter(np.zeros(d_u), name="mclm_out_b"),
        pred_avg_w=ad.parameter(rng.normal(0, 1 / np.sqrt(two), (two, two)),
                                name="mclm_pred_avg_w"),
        pred_avg_b=ad.parameter(np.zeros(two), name="mclm_pred_avg_b"),
        pred_seq_w=ad.parameter(rng.normal(0, 1 / np.sqrt(two), (two, two)),
                                name="mclm_pred_seq_w"),
        pred_seq_b=ad.parameter(np.zeros(two), name="mclm_pred_seq_b"),
    )


def mclm_reconstruction(s_i, s_m_i, s_j, s_m_j, pred_w, pred_b):
    """Eq-style reconstruction for one pair and one variant: the predictor
    consumes both masked reps, its output splits into per-side corrections,
    and each side pays the Euclidean gap between the unit-normalized
    corrected rep and the unit-normalized original."""
    d = s_i.data.shape[0]
    if s_j.data.shape[0] != d or s_m_i.data.shape[0] != d:
        raise ValueError("dimension mismatch in reconstruction")
    out = ad.affine(ad.concat([s_m_i, s_m_j], axis=0), pred_w, pred_b)
    p_i, p_j = ad.split(out, [d, d], axis=0)
    t_i = ad.euclidean_norm(ad.sub(ad.l2_normalize(ad.add(s_m_i, p_i)),
                                   ad.l2_normalize(s_i)))
    t_j = ad.euclidean_norm(ad.sub(ad.l2_normalize(ad.add(s_m_j, p_j)),
                                   ad.l2_normalize(s_j)))
    return ad.add(t_i, t_j)


def mclm_loss(pair, mclm, variant="average"):
    """Reconstruction loss for one cross-language pair under one masking
    variant. Each side contributes at most 2 (unit-vector gap), so the value
    lies in [0, 4]. The batch-level mask term sums both variants."""
    if variant == "average":
        return mclm_reconstruction(
            ad.mean(pair.i.mat, axis=0), mask_rep_average(pair.i),
            ad.mean(pair.j.mat, axis=0), mask_rep_average(pair.j),
            mclm.pred_avg_w, mclm.pred_avg_b)
    if variant != "sequence":
        raise ValueError(f"unknown masking variant {variant!r}")
    seq_i_masked = masked_token_matrix(pair.i, mclm.mask_vec)
    seq_j_masked = masked_token_matrix(pair.j, mclm.mask_vec)
    h = ad.gru_scan([pair.i.mat, pair.j.mat, seq_i_masked, seq_j_masked],
                    mclm.cell)
    out = ad.affine(h, mclm.out_w, mclm.out_b)
    si, sj, smi, smj = ad.split(out, [1, 1, 1, 1], axis=0)
    return mclm_reconstruction(ad.mean(si, axis=0), ad.mean(smi, axis=0),
                               ad.mean(sj, axis=0), ad.mean(smj, axis=0),
                               mclm.pred_seq_w, mclm.pred_seq_b)


def mclm_batch_loss(pairs, mclm):
    """Batch mean of mclm_loss over pairs, with one shared recurrent scan."""
    if not pairs:
        return _zero()
    b = len(pairs)
    d = pairs[0].i.mat.data.shape[1]

    avg_s = ad.stack_rows([ad.mean(p.i.mat, axis=0) for p in pairs]
                          + [ad.mean(p.j.mat, axis=0) for p in pairs])
    avg_m = ad.stack_rows([mask_rep_average(p.i) for p in pairs]
                          + [mask_rep_average(p.j) for p in pairs])
    avg = _recon_rows(avg_s, avg_m, b, d, mclm.pred_avg_w, mclm.pred_avg_b)

    seqs = [p.i.mat for p in pairs] + [p.j.mat for p in pairs] \
        + [masked_token_matrix(p.i, mclm.mask_vec) for p in pairs] \
        + [masked_token_matrix(p.j, mclm.mask_vec) for p in pairs]
    h = ad.gru_scan(seqs, mclm.cell)
    out = ad.affine(h, mclm.out_w, mclm.out_b)
    full, masked = ad.split(out, [2 * b, 2 * b], axis=0)
    seq = _recon_rows(full, masked, b, d, mclm.pred_seq_w, mclm.pred_seq_b)

    return ad.scalar_mul(ad.add(avg, seq), 1.0 / b)


def _recon_rows(s_rows, m_rows, b, d, pred_w, pred_b):
    """Summed reconstruction terms where rows 0..b-1 are the i sides and
    rows b..2b-1 the j sides of b pairs."""
    i_m, j_m = ad.split(m_rows, [b, b], axis=0)
    out = ad.affine(ad.concat([i_m, j_m], axis=1), pred_w, pred_b)
    p_i, p_j = ad.split(out, [d, d], axis=1)
    corrected = ad.concat([ad.add(i_m, p_i), ad.add(j_m, p_j)], axis=0)
    gaps = ad.rownorm(ad.sub(ad.l2_normalize(corrected),
                             ad.l2_normalize(s_rows)))
    return ad.tsum(gaps)


# -------------------------------------------------------------- neighborhood

def neighborhood_loss(univ_a, univ_b, joint_a, joint_b, weights, groups=None):
    """Sentence-sentence triplet constraints applied at the universal level
    and at the joint level. Per level, violations are enumerated over both
    anchor directions and the top-N largest are summed."""
    total = None
    for a, b in ((univ_a, univ_b), (joint_a, joint_b)):
        sim = _sim_matrix(a, b)
        term = _bidirectional_top_n(sim, weights, groups)
        total = term if total is None else ad.add(total, term)
    return total


def _bidirectional_top_n(sim, weights, groups):
    cands = []
    s = sim.data
    n = s.shape[0]
    for i in range(n):
        for j in range(n):
            if j == i or (groups is not None and groups[j] == groups[i]):
                continue
            v = weights.margin - s[i, i] + s[i, j]
            if v > 0.0:
                cands.append((float(v), 0, i, j))
    for i in range(n):
        for j in range(n):
            if j == i or (groups is not None and groups[j] == groups[i]):
                continue
            v = weights.margin - s[i, i] + s[j, i]
            if v > 0.0:
                cands.append((float(v), 1, i, j))
    cands.sort(key=lambda t: -t[0])
    chosen = cands[:weights.top_n]
    if not chosen:
        return _zero()
    rows = [i if d == 0 else j for _, d, i, j in chosen]
    cols = [j if d == 0 else i for _, d, i, j in chosen]
    diag = [i for _, d, i, j in chosen]
    neg = ad.take_elements(sim, rows, cols)
    pos = ad.take_elements(sim, diag, diag)
    return ad.tsum(ad.relu(ad.add_scalar(ad.sub(neg, pos), weights.margin)))


# --------------------------------------------------------------- adversarial

@dataclass
class LanguageClassifier:
    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def logits(self, reps):
        hid = ad.relu(ad.affine(reps, self.w1, self.b1))
        return ad.affine(hid, self.w2, self.b2)


def init_adversary(d_u, n_langs, hidden, seed):
    rng = np.random.default_rng((seed, 22))
    return LanguageClassifier(
        w1=ad.parameter(rng.normal(0, 1 / np.sqrt(d_u), (d_u, hidden)),
                        name="adv_w1"),
        b1=ad.parameter(np.zeros(hidden), name="adv_b1"),
        w2=ad.parameter(rng.normal(0, 1 / np.sqrt(hidden), (hidden, n_langs)),
                        name="adv_w2"),
        b2=ad.parameter(np.zeros(n_langs), name="adv_b2"),
    )


def adversarial_loss(reps, labels, classifier):
    """Cross-entropy of the language classifier on sentence representations.
    The classifier minimizes it; a gradient-reversal node makes the embedder
    side maximize confusion."""
    labels = np.asarray(labels)
    n_langs = classifier.w2.data.shape[1]
    if labels.min() < 0 or labels.max() >= n_langs:
        raise ValueError("labels must be valid language ids")
    logits = classifier.logits(ad.grad_reverse(reps))
    return ad.softmax_cross_entropy(logits, labels)


# ---------------------------------------------------------------------- total

def total_loss(terms, weights):
    """Weighted objective from computed term tensors.

    terms: dict with keys mm, mask, adv, nc (tensors; missing treated as 0).
    Returns (total tensor, breakdown of raw per-term floats).
    """
    mm = terms.get("mm")
    total = mm if mm is not None else _zero()
    breakdown = {"mm": float(total.data)}
    for key, lam in (("mask", weights.lambda2), ("adv", weights.lambda3),
                     ("nc", weights.lambda4)):
        t = terms.get(key)
        breakdown[key] = float(t.data) if t is not None else 0.0
        if t is not None and lam != 0.0:
            total = ad.add(total, ad.scalar_mul(t, lam))
    breakdown["total"] = float(total.data)
    return total, breakdown
