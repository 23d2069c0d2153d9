import math

import numpy as np
import pytest

import lexalign.autodiff as ad
from lexalign import corpus as corpus_mod
from lexalign import hybrid, losses, metrics
from lexalign.corpus import CorpusConfig, Translator, generate_synthetic
from lexalign.model import (ModelConfig, TrainedModel, batch_loss,
                            build_model, config_fingerprint, embed_image,
                            embed_query, init_image_branch,
                            init_language_branch, language_forward,
                            load_features_tsv, load_model, named_parameters,
                            save_features_tsv, save_model, score, score_split,
                            split_mean_recall, train, with_features,
                            write_train_log)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_oracle(xs, p):
    """Pure-numpy left-to-right unroll from a zero state."""
    g = {k: t.data for k, t in p.items()}
    h = np.zeros(g["u_r"].shape[0])
    for x in xs:
        r = sigmoid(x @ g["w_r"] + h @ g["u_r"] + g["b_r"])
        z = sigmoid(x @ g["w_z"] + h @ g["u_z"] + g["b_z"])
        hh = np.tanh(x @ g["w_h"] + (r * h) @ g["u_h"] + g["b_h"])
        h = (1.0 - z) * h + z * hh
    return h


@pytest.fixture(scope="module")
def tiny_data():
    cfg = CorpusConfig(seed=3, num_images=24, num_languages=2, concepts=12,
                       vocab_per_lang=40, sentence_len=(3, 6),
                       word_dim=12, feature_dim=16,
                       split_fractions=(0.5, 0.25, 0.25))
    return generate_synthetic(cfg)


@pytest.fixture(scope="module")
def tiny_config():
    return ModelConfig(d_img=16, d_j=8, d_u=10, reduced_dim=6, v_latent=30,
                       k=8, adv_hidden=8, epochs=3, batch_size=4,
                       pretrain_epochs=2, seed=1)


@pytest.fixture(scope="module")
def trained(tiny_data, tiny_config):
    corpus, emb = tiny_data
    return train(corpus, emb, tiny_config)


class TestImageBranch:
    def test_unit_norm_and_determinism(self):
        br = init_image_branch(16, 8, seed=0)
        rng = np.random.default_rng(4)
        for _ in range(5):
            f = rng.normal(size=16)
            v = embed_image(br, f)
            assert v.shape == (8,)
            assert abs(np.linalg.norm(v) - 1.0) < 1e-12
            assert np.array_equal(v, embed_image(br, f))

    def test_dim_mismatch(self):
        br = init_image_branch(16, 8, seed=0)
        with pytest.raises(ValueError):
            embed_image(br, np.ones(5))

    def test_zero_weights_error(self):
        br = init_image_branch(6, 4, seed=0)
        br.w2.data[:] = 0.0
        br.b2.data[:] = 0.0
        with pytest.raises(ValueError):
            embed_image(br, np.ones(6))


class TestLanguageBranch:
    def test_unit_norm(self):
        br = init_language_branch(10, 8, seed=2)
        rng = np.random.default_rng(1)
        v = embed_query(br, rng.normal(size=(5, 10)))
        assert v.shape == (8,)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-12

    def test_single_token_is_one_step(self):
        br = init_language_branch(10, 8, seed=2)
        x = np.random.default_rng(2).normal(size=(1, 10))
        h = gru_oracle(x, br.cell)
        want = h @ br.fc_w.data + br.fc_b.data
        want /= np.linalg.norm(want)
        assert np.allclose(embed_query(br, x), want, atol=1e-12)

    def test_matches_hand_unrolled_recurrence(self):
        br = init_language_branch(10, 8, seed=5)
        rng = np.random.default_rng(3)
        for t in (2, 3, 5):
            x = rng.normal(size=(t, 10))
            h = gru_oracle(x, br.cell)
            want = h @ br.fc_w.data + br.fc_b.data
            want /= np.linalg.norm(want)
            assert np.allclose(embed_query(br, x), want, atol=1e-12)

    def test_token_order_matters(self):
        br = init_language_branch(10, 8, seed=2)
        x = np.random.default_rng(4).normal(size=(3, 10))
        assert not np.allclose(embed_query(br, x), embed_query(br, x[::-1]))

    def test_empty_query_rejected(self):
        br = init_language_branch(10, 8, seed=2)
        with pytest.raises(ValueError):
            embed_query(br, np.zeros((0, 10)))


class TestScore:
    def test_reference_values(self):
        v = np.zeros(4)
        v[0] = 1.0
        w = np.zeros(4)
        w[1] = 1.0
        assert score(v, v) == 1.0
        assert score(v, w) == 0.0
        assert score(v, -v) == -1.0

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=6)
        b = rng.normal(size=6)
        assert score(a, b) == score(b, a)


class TestBatchLoss:
    def test_terms_and_total(self, tiny_data, tiny_config):
        corpus, emb = tiny_data
        model = build_model(corpus, emb, tiny_config)
        rng = corpus_mod._child_rng(9, 6)
        items = corpus_mod.epoch_batches(corpus, "train", 4, rng)[0]
        total, terms, breakdown = batch_loss(
            model, items, np.random.default_rng(0))
        assert set(terms) == {"mm", "mask", "adv", "nc"}
        assert all(math.isfinite(v) for v in breakdown.values())
        w = model.weights
        want = (breakdown["mm"] + w.lambda2 * breakdown["mask"]
                + w.lambda3 * breakdown["adv"] + w.lambda4 * breakdown["nc"])
        assert breakdown["total"] == pytest.approx(want, rel=1e-12)
        assert float(total.data) == breakdown["total"]

    def test_deterministic_given_rng_seed(self, tiny_data, tiny_config):
        corpus, emb = tiny_data
        model = build_model(corpus, emb, tiny_config)
        rng = corpus_mod._child_rng(9, 6)
        items = corpus_mod.epoch_batches(corpus, "train", 4, rng)[0]
        _, _, b1 = batch_loss(model, items, np.random.default_rng(7))
        _, _, b2 = batch_loss(model, items, np.random.default_rng(7))
        assert b1 == b2

    def test_rejects_tiny_batch(self, tiny_data, tiny_config):
        corpus, emb = tiny_data
        model = build_model(corpus, emb, tiny_config)
        rng = corpus_mod._child_rng(9, 6)
        items = corpus_mod.epoch_batches(corpus, "train", 4, rng)[0]
        with pytest.raises(ValueError):
            batch_loss(model, items[:1], np.random.default_rng(0))


class TestTrain:
    def test_log_shape_and_metadata(self, trained, tiny_config):
        model, rows = trained
        # 12 train images, batch 4 -> 3 steps per epoch, 3 epochs
        assert len(rows) == 9
        assert [r["step"] for r in rows] == list(range(9))
        for r in rows:
            assert all(math.isfinite(r[k]) for k in
                       ("L_mm", "L_mask", "L_adv", "L_nc", "total",
                        "g_mm", "g_mask", "g_adv", "g_nc"))
        md = model.metadata
        assert len(md["val_mr"]) == 3
        assert md["best_epoch"] == int(np.argmax(md["val_mr"]))
        assert md["config_hash"] == config_fingerprint(tiny_config)
        assert md["mode"] == "hybrid"

    def test_deterministic_train_log(self, tiny_data, tiny_config, trained,
                                     tmp_path):
        corpus, emb = tiny_data
        model2, rows2 = train(corpus, emb, tiny_config)
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_train_log(trained[1], p1)
        write_train_log(rows2, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert trained[0].metadata["val_mr"] == model2.metadata["val_mr"]

    def test_single_language_runs(self, tiny_data):
        corpus, emb = tiny_data
        cfg = ModelConfig(languages=["L0"], d_img=16, d_j=8, d_u=10,
                          reduced_dim=6, v_latent=30, k=8, adv_hidden=8,
                          epochs=1, batch_size=4, pretrain_epochs=1, seed=2)
        model, rows = train(corpus, emb, cfg)
        assert model.languages == ["L0"]
        assert len(rows) == 3
        assert math.isfinite(model.metadata["val_mr"][0])

    def test_non_finite_loss_aborts(self, tiny_data, tiny_config):
        corpus, emb = tiny_data
        langs = corpus.languages
        stats_split_cfg = tiny_config
        # poison the latent table through the pretrained hook
        from lexalign.vocab import count_frequencies, split_top_k, \
            reduce_embeddings
        stats = count_frequencies(corpus)
        split = split_top_k(stats, stats_split_cfg.k)
        reduced, _ = reduce_embeddings(emb, stats_split_cfg.reduced_dim)
        pcfg = hybrid.PretrainConfig(
            v_latent=stats_split_cfg.v_latent, d_u=stats_split_cfg.d_u,
            epochs=1, batch_size=4, seed=1)
        pre = hybrid.pretrain_latent(corpus, reduced, split, pcfg)
        pre.latent.table.data[:] = np.nan
        with pytest.raises(ad.NonFiniteError):
            train(corpus, emb, stats_split_cfg, pretrained=pre)
        assert langs == corpus.languages

    def test_per_word_mode(self, tiny_data):
        corpus, emb = tiny_data
        cfg = ModelConfig(d_img=16, d_j=8, d_u=10, reduced_dim=6,
                          v_latent=30, k=8, adv_hidden=8, epochs=1,
                          batch_size=4, vocab_mode="per-word", seed=3)
        model, rows = train(corpus, emb, cfg)
        names = set(named_parameters(model))
        assert {"free_L0", "free_L1"} <= names
        assert "latent_table" not in names
        assert len(rows) == 3


class TestCheckpoint:
    def test_round_trip_bit_exact(self, trained, tmp_path):
        model, _ = trained
        p1 = tmp_path / "model.ckpt"
        p2 = tmp_path / "again.ckpt"
        save_model(model, p1)
        loaded = load_model(p1)
        save_model(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        a = named_parameters(model)
        b = named_parameters(loaded)
        assert set(a) == set(b)
        for k in a:
            assert np.array_equal(a[k].data, b[k].data)
        assert loaded.weights == model.weights
        assert loaded.metadata == model.metadata
        assert loaded.pivot == model.pivot

    def test_reload_reproduces_validation_mr(self, trained, tiny_data,
                                             tmp_path):
        model, _ = trained
        corpus, _ = tiny_data
        path = tmp_path / "model.ckpt"
        save_model(model, path)
        loaded = load_model(path)
        assert (split_mean_recall(loaded, corpus, "val")
                == split_mean_recall(model, corpus, "val"))

    def test_embeddings_identical_after_reload(self, trained, tiny_data,
                                               tmp_path):
        model, _ = trained
        corpus, _ = tiny_data
        path = tmp_path / "model.ckpt"
        save_model(model, path)
        loaded = load_model(path)
        s = corpus.split_sentences("val", "L0")[0]
        ma = hybrid.embed_tokens(model.embedder, s)
        mb = hybrid.embed_tokens(loaded.embedder, s)
        assert np.array_equal(ma.data, mb.data)

    def test_per_word_round_trip(self, tiny_data, tmp_path):
        corpus, emb = tiny_data
        cfg = ModelConfig(d_img=16, d_j=8, d_u=10, reduced_dim=6,
                          v_latent=30, k=8, adv_hidden=8, epochs=1,
                          batch_size=4, vocab_mode="per-word", seed=3)
        model, _ = train(corpus, emb, cfg)
        p1 = tmp_path / "free.ckpt"
        p2 = tmp_path / "free2.ckpt"
        save_model(model, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_text("not a checkpoint\n")
        with pytest.raises(ValueError):
            load_model(p)


class TestEvaluation:
    def test_direct_mode_report(self, trained, tiny_data):
        model, _ = trained
        corpus, _ = tiny_data
        rep = metrics.evaluate_model(model, corpus, "test", mode="direct")
        assert sorted(rep.per_language) == ["L0", "L1"]
        for m in rep.per_language.values():
            assert m.i2s_r1 <= m.i2s_r5 <= m.i2s_r10
            assert 0.0 <= m.mr <= 100.0

    def test_trans_to_pivot_mode(self, trained, tiny_data):
        model, _ = trained
        corpus, _ = tiny_data
        tr = Translator(corpus, seed=0)
        rep = metrics.evaluate_model(model, corpus, "test",
                                     mode="trans-to-pivot", translator=tr)
        assert sorted(rep.per_language) == ["L0", "L1"]

    def test_trans_to_pivot_needs_translator(self, trained, tiny_data):
        model, _ = trained
        corpus, _ = tiny_data
        with pytest.raises(ValueError):
            metrics.evaluate_model(model, corpus, "test",
                                   mode="trans-to-pivot")

    def test_score_split_empty_language(self, trained, tiny_data):
        model, _ = trained
        corpus, _ = tiny_data
        with pytest.raises(ValueError):
            score_split(model, corpus, "test", "L9")


class TestFeatureFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        feats = {i: rng.normal(size=7) for i in range(5)}
        path = tmp_path / "features.tsv"
        save_features_tsv(feats, path)
        loaded = load_features_tsv(path)
        assert sorted(loaded) == sorted(feats)
        for k in feats:
            assert np.array_equal(loaded[k], feats[k])

    def test_with_features(self, tiny_data, tmp_path):
        corpus, _ = tiny_data
        rng = np.random.default_rng(1)
        feats = {im.image_id: rng.normal(size=9) for im in corpus.images}
        c2 = with_features(corpus, feats)
        assert c2.feature_dim == 9
        assert np.array_equal(c2.images[0].feature,
                              feats[c2.images[0].image_id])
        with pytest.raises(ValueError):
            with_features(corpus, {0: np.ones(9)})

    def test_load_rejects_bad_rows(self, tmp_path):
        p = tmp_path / "f.tsv"
        p.write_text("3\t1.0\t2.0\n4\t1.0\n")
        with pytest.raises(ValueError):
            load_features_tsv(p)
        p.write_text("")
        with pytest.raises(ValueError):
            load_features_tsv(p)


class TestGenerativeIsolation:
    """The corpus carries its hidden generative state in debug fields so
    that oracles (the simulated translator, the exact dictionary) can read
    it. Training and evaluation must be blind to it."""

    def test_training_blind_to_debug_fields(self, tiny_data, tiny_config):
        from dataclasses import replace as dc_replace

        corpus, emb = tiny_data
        stripped = corpus_mod.Corpus(
            list(corpus.languages), corpus.feature_dim, corpus.word_dim,
            corpus.num_concepts, dict(corpus.vocab_sizes),
            [dc_replace(im, debug_concepts=()) for im in corpus.images],
            [dc_replace(s, debug_concepts=()) for s in corpus.sentences],
            {k: list(v) for k, v in corpus.splits.items()},
            debug_word_concepts={})
        m1, rows1 = train(corpus, emb, tiny_config)
        m2, rows2 = train(stripped, emb, tiny_config)
        p1, p2 = named_parameters(m1), named_parameters(m2)
        assert set(p1) == set(p2)
        for name in p1:
            assert np.array_equal(p1[name].data, p2[name].data)
        assert rows1 == rows2
        r1 = metrics.evaluate_model(m1, corpus, "test")
        r2 = metrics.evaluate_model(m2, stripped, "test")
        assert r1.a == r2.a

    def test_dictionary_oracle_needs_debug_fields(self, tiny_data):
        from lexalign import vocab as vocab_mod

        corpus, _ = tiny_data
        stripped = corpus_mod.Corpus(
            list(corpus.languages), corpus.feature_dim, corpus.word_dim,
            corpus.num_concepts, dict(corpus.vocab_sizes),
            list(corpus.images), list(corpus.sentences),
            {k: list(v) for k, v in corpus.splits.items()},
            debug_word_concepts={})
        with pytest.raises(ValueError):
            vocab_mod.build_concept_dictionary(stripped, "L0")
