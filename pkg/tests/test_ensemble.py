import numpy as np
import pytest

import lexalign.autodiff as ad
from lexalign import ensemble, losses, metrics
from lexalign.corpus import CorpusConfig, Translator, generate_synthetic
from lexalign.ensemble import (ClcClassifier, build_score_vectors,
                               clc_average, clc_batch_loss,
                               clc_classifier_fuse, fused_score_matrix,
                               init_clc, load_clc, pair_score_table,
                               parameter_count, save_clc,
                               split_score_vectors, train_clc)
from lexalign.model import (ModelConfig, named_parameters, score_split,
                            train)


@pytest.fixture(scope="module")
def tiny_data():
    cfg = CorpusConfig(seed=3, num_images=24, num_languages=2, concepts=12,
                       vocab_per_lang=40, sentence_len=(3, 6),
                       word_dim=12, feature_dim=16,
                       split_fractions=(0.5, 0.25, 0.25))
    return generate_synthetic(cfg)


@pytest.fixture(scope="module")
def trained(tiny_data):
    corpus, emb = tiny_data
    cfg = ModelConfig(d_img=16, d_j=8, d_u=10, reduced_dim=6, v_latent=30,
                      k=8, adv_hidden=8, epochs=2, batch_size=4,
                      pretrain_epochs=2, seed=1)
    model, _ = train(corpus, emb, cfg)
    return model


@pytest.fixture(scope="module")
def translator(tiny_data):
    corpus, _ = tiny_data
    return Translator(corpus, seed=0)


@pytest.fixture(scope="module")
def val_tables(tiny_data, trained, translator):
    corpus, _ = tiny_data
    return [split_score_vectors(trained, corpus, "val", lang, translator)
            for lang in corpus.languages]


# ----------------------------------------------------------------- averaging

class TestAverage:
    def test_mean_examples(self):
        assert clc_average([0.2, 0.4, 0.9]) == pytest.approx(0.5, abs=1e-12)
        assert clc_average([0.7, 0.7, 0.7, 0.7]) == 0.7
        assert clc_average([-0.3]) == -0.3

    def test_matrix_form_matches_elementwise(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(5, 7, 3))
        out = clc_average(v)
        assert out.shape == (5, 7)
        for i in range(5):
            for j in range(7):
                assert out[i, j] == clc_average(v[i, j])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            clc_average(np.zeros((4, 0)))
        with pytest.raises(ValueError):
            clc_average(1.0)

    def test_argmax_invariant_under_slot_permutation(self):
        rng = np.random.default_rng(7)
        v = rng.uniform(-1, 1, size=(12, 20, 4))
        base = clc_average(v)
        for perm in ([1, 0, 3, 2], [3, 2, 1, 0], [2, 0, 3, 1]):
            other = clc_average(v[:, :, perm])
            assert np.allclose(other, base, atol=1e-14)
            assert np.array_equal(other.argmax(axis=1), base.argmax(axis=1))
            assert np.array_equal(other.argmax(axis=0), base.argmax(axis=0))


# ---------------------------------------------------------------- classifier

class TestClassifier:
    def test_parameter_count_examples(self):
        ten = init_clc([f"l{i}" for i in range(10)], seed=0)
        assert parameter_count(ten) == 352
        three = init_clc(["a", "b", "c"], seed=0)
        assert parameter_count(three) == 128

    def test_parameter_count_formula(self):
        for n in range(1, 7):
            clc = init_clc([f"l{i}" for i in range(n)], seed=2)
            assert parameter_count(clc) == (n + 1) * 32

    def test_trainable_output_variant(self):
        clc = init_clc([f"l{i}" for i in range(10)], seed=0,
                       trainable_output=True)
        assert parameter_count(clc) == 352 + 33
        v = np.random.default_rng(1).normal(size=10)
        assert np.isfinite(clc_classifier_fuse(v, clc))

    def test_init_seeded(self):
        a = init_clc(["x", "y"], seed=5)
        b = init_clc(["x", "y"], seed=5)
        c = init_clc(["x", "y"], seed=6)
        assert np.array_equal(a.w1.data, b.w1.data)
        assert np.array_equal(a.b1.data, b.b1.data)
        assert not np.array_equal(a.w1.data, c.w1.data)

    def test_init_validation(self):
        with pytest.raises(ValueError):
            init_clc([])
        with pytest.raises(ValueError):
            init_clc(["a", "a"])

    def test_zero_weights_fuse_to_zero(self):
        clc = init_clc(["a", "b", "c"], seed=0)
        clc.w1.data[:] = 0.0
        clc.b1.data[:] = 0.0
        rng = np.random.default_rng(3)
        for _ in range(5):
            assert clc_classifier_fuse(rng.normal(size=3), clc) == 0.0

    def test_fuse_dim_mismatch(self):
        clc = init_clc(["a", "b", "c"], seed=0)
        with pytest.raises(ValueError):
            clc_classifier_fuse(np.ones(4), clc)

    def test_fuse_graph_matches_numpy(self):
        rng = np.random.default_rng(4)
        v = rng.normal(size=(9, 5))
        for trainable in (False, True):
            clc = init_clc([f"l{i}" for i in range(5)], seed=1,
                           trainable_output=trainable)
            graph = ensemble._fuse_graph(ad.constant(v), clc)
            assert np.array_equal(graph.data, clc_classifier_fuse(v, clc))

    def test_identity_mean_setting_reproduces_average(self):
        n, hidden = 4, 32
        langs = tuple(f"l{i}" for i in range(n))
        w1 = ad.parameter(np.full((n, hidden), 1.0 / (hidden * n)))
        b1 = ad.parameter(np.ones(hidden))
        clc = ClcClassifier(langs, w1, b1)
        rng = np.random.default_rng(9)
        v = rng.uniform(-1, 1, size=(15, 11, n))
        fused = clc_classifier_fuse(v, clc)
        avg = clc_average(v)
        assert np.allclose(fused, avg + hidden, atol=1e-12)
        assert np.array_equal(fused.argmax(axis=1), avg.argmax(axis=1))


# -------------------------------------------------------------- score vectors

class TestScoreVectors:
    def test_single_query_shape_and_raw_slot(self, tiny_data, trained,
                                             translator):
        corpus, _ = tiny_data
        images = corpus.split_images("val")
        lang = corpus.languages[0]
        sents = corpus.split_sentences("val", lang)
        vecs = build_score_vectors(trained, sents[2], images, translator)
        assert vecs.shape == (len(images), len(trained.languages))
        direct = score_split(trained, corpus, "val", lang)
        slot = trained.languages.index(lang)
        assert np.allclose(vecs[:, slot], direct.scores[:, 2], atol=1e-10)

    def test_candidate_permutation_is_pointwise(self, tiny_data, trained,
                                                translator):
        corpus, _ = tiny_data
        images = corpus.split_images("val")
        sent = corpus.split_sentences("val", corpus.languages[1])[0]
        fwd = build_score_vectors(trained, sent, images, translator)
        rev = build_score_vectors(trained, sent, images[::-1], translator)
        assert np.allclose(rev, fwd[::-1], atol=1e-12)

    def test_unknown_language_rejected(self, tiny_data, trained, translator):
        corpus, _ = tiny_data
        images = corpus.split_images("val")
        sent = corpus.split_sentences("val", corpus.languages[0])[0]
        alien = type(sent)(image_id=sent.image_id, lang="zz",
                           tokens=sent.tokens, sid=sent.sid)
        with pytest.raises(ValueError):
            build_score_vectors(trained, alien, images, translator)
        with pytest.raises(ValueError):
            build_score_vectors(trained, sent, [], translator)

    def test_split_table_matches_per_language_runs(self, tiny_data, trained,
                                                   translator, val_tables):
        corpus, _ = tiny_data
        lang = corpus.languages[0]
        table = val_tables[0]
        assert table.lang == lang
        assert table.languages == tuple(trained.languages)
        for slot, other in enumerate(trained.languages):
            if other == lang:
                ref = score_split(trained, corpus, "val", lang)
            else:
                ref = score_split(trained, corpus, "val", lang,
                                  translator=translator, target=other)
            assert np.array_equal(table.vectors[:, :, slot], ref.scores)
            assert np.array_equal(table.gt_rows, ref.gt_rows)

    def test_empty_split_language_rejected(self, tiny_data, trained,
                                           translator):
        corpus, _ = tiny_data
        with pytest.raises(ValueError):
            split_score_vectors(trained, corpus, "val", "zz", translator)


# ------------------------------------------------------------------- fusion

class TestFusedMatrix:
    def test_average_mode_is_exact_channel_mean(self, tiny_data, trained,
                                                translator, val_tables):
        corpus, _ = tiny_data
        lang = corpus.languages[1]
        fused = fused_score_matrix(trained, corpus, "val", lang, translator)
        assert np.array_equal(fused.scores,
                              val_tables[1].vectors.mean(axis=-1))
        assert np.array_equal(fused.gt_rows, val_tables[1].gt_rows)

    def test_classifier_mode(self, tiny_data, trained, translator):
        corpus, _ = tiny_data
        lang = corpus.languages[0]
        clc = init_clc(trained.languages, seed=3)
        fused = fused_score_matrix(trained, corpus, "val", lang, translator,
                                   clc=clc, mode=metrics.CLC_C)
        plain = fused_score_matrix(trained, corpus, "val", lang, translator)
        assert fused.scores.shape == plain.scores.shape
        assert not np.array_equal(fused.scores, plain.scores)

    def test_classifier_mode_validation(self, tiny_data, trained, translator):
        corpus, _ = tiny_data
        lang = corpus.languages[0]
        with pytest.raises(ValueError):
            fused_score_matrix(trained, corpus, "val", lang, translator,
                               mode=metrics.CLC_C)
        wrong = init_clc(("a", "b"), seed=0)
        with pytest.raises(ValueError):
            fused_score_matrix(trained, corpus, "val", lang, translator,
                               clc=wrong, mode=metrics.CLC_C)
        with pytest.raises(ValueError):
            fused_score_matrix(trained, corpus, "val", lang, translator,
                               mode="vote")

    def test_single_language_average_equals_direct(self, tiny_data):
        corpus, emb = tiny_data
        cfg = ModelConfig(languages=["L0"], d_img=16, d_j=8, d_u=10,
                          reduced_dim=6, v_latent=30, k=8, adv_hidden=8,
                          epochs=2, batch_size=4, pretrain_epochs=2, seed=2)
        model, _ = train(corpus, emb, cfg)
        tr = Translator(corpus, seed=0)
        direct = metrics.evaluate_model(model, corpus, "val")
        fused = metrics.evaluate_model(model, corpus, "val",
                                       mode=metrics.CLC_A, translator=tr)
        assert fused.per_language["L0"] == direct.per_language["L0"]

    def test_evaluate_model_clc_modes(self, tiny_data, trained, translator):
        corpus, _ = tiny_data
        rep = metrics.evaluate_model(trained, corpus, "val",
                                     mode=metrics.CLC_A,
                                     translator=translator)
        assert sorted(rep.per_language) == sorted(corpus.human_languages())
        clc = init_clc(trained.languages, seed=3)
        rep_c = metrics.evaluate_model(trained, corpus, "val",
                                       mode=metrics.CLC_C,
                                       translator=translator, clc=clc)
        assert sorted(rep_c.per_language) == sorted(corpus.human_languages())
        with pytest.raises(ValueError):
            metrics.evaluate_model(trained, corpus, "val",
                                   mode=metrics.CLC_C, translator=translator)
        with pytest.raises(ValueError):
            metrics.evaluate_model(trained, corpus, "val",
                                   mode=metrics.CLC_A)


# ------------------------------------------------------------------ training

class TestTraining:
    def test_pair_table_layout(self, val_tables):
        pairs, groups = pair_score_table(val_tables)
        sizes = [t.gt_rows.size for t in val_tables]
        total = sum(sizes)
        n_langs = len(val_tables[0].languages)
        assert pairs.shape == (total, total, n_langs)
        assert np.array_equal(groups,
                              np.concatenate([t.gt_rows for t in val_tables]))
        offset = sizes[0]
        t0, t1 = val_tables
        assert np.array_equal(pairs[2, 4], t0.vectors[t0.gt_rows[2], 4])
        assert np.array_equal(pairs[offset + 1, offset + 3],
                              t1.vectors[t1.gt_rows[offset + 1 - offset], 3])
        for p in range(0, total, 7):
            q_tab, q_col = (t0, p) if p < offset else (t1, p - offset)
            assert np.array_equal(pairs[p, p],
                                  q_tab.vectors[groups[p], q_col])

    def test_pair_table_validation(self, val_tables):
        with pytest.raises(ValueError):
            pair_score_table([])
        t0 = val_tables[0]
        alien = ensemble.ScoreVectorTable(t0.vectors, t0.gt_rows, t0.lang,
                                          ("a", "b"))
        with pytest.raises(ValueError):
            pair_score_table([t0, alien])

    def test_zero_iterations_unchanged(self, trained, val_tables):
        clc = init_clc(trained.languages, seed=4)
        before = [p.data.copy() for p in clc.params()]
        _, history = train_clc(clc, val_tables, iterations=0)
        assert history == []
        for p, b in zip(clc.params(), before):
            assert np.array_equal(p.data, b)

    def test_loss_decreases_over_thirty_iterations(self, trained, val_tables):
        clc = init_clc(trained.languages, seed=4)
        start = clc_batch_loss(clc, val_tables)
        _, history = train_clc(clc, val_tables, iterations=30)
        assert len(history) == 30
        assert history[0] == pytest.approx(start)
        assert start > 0
        assert clc_batch_loss(clc, val_tables) <= start

    def test_training_is_seeded_and_stepwise(self, trained, val_tables):
        a = init_clc(trained.languages, seed=4)
        b = init_clc(trained.languages, seed=4)
        _, hist_a = train_clc(a, val_tables, iterations=5)
        _, hist_b = train_clc(b, val_tables, iterations=5)
        assert hist_a == hist_b
        for pa, pb in zip(a.params(), b.params()):
            assert np.array_equal(pa.data, pb.data)
        c = init_clc(trained.languages, seed=4)
        _, _ = train_clc(c, val_tables, iterations=1)
        assert any(not np.array_equal(pc.data, pa.data)
                   for pc, pa in zip(c.params(), a.params()))

    def test_model_parameters_never_touched(self, tiny_data, trained,
                                            translator):
        corpus, _ = tiny_data
        params = named_parameters(trained)
        before = {k: p.data.copy() for k, p in params.items()}
        tables = [split_score_vectors(trained, corpus, "val", lang,
                                      translator)
                  for lang in corpus.languages]
        clc = init_clc(trained.languages, seed=8)
        train_clc(clc, tables, iterations=10)
        fused_score_matrix(trained, corpus, "val", corpus.languages[0],
                           translator, clc=clc, mode=metrics.CLC_C)
        for k, p in named_parameters(trained).items():
            assert np.array_equal(p.data, before[k]), k

    def test_training_validation_errors(self, trained, val_tables):
        clc = init_clc(trained.languages, seed=4)
        with pytest.raises(ValueError):
            train_clc(clc, val_tables, iterations=-1)
        with pytest.raises(ValueError):
            train_clc(clc, [], iterations=5)
        wrong = init_clc(("a", "b"), seed=0)
        with pytest.raises(ValueError):
            train_clc(wrong, val_tables, iterations=5)

    def test_trainable_output_also_trains(self, trained, val_tables):
        clc = init_clc(trained.languages, seed=4, trainable_output=True)
        start = clc_batch_loss(clc, val_tables)
        train_clc(clc, val_tables, iterations=10)
        assert clc_batch_loss(clc, val_tables) <= start


# ---------------------------------------------------------------- weight IO

class TestWeightIO:
    def test_round_trip_bit_exact(self, tmp_path):
        for trainable in (False, True):
            clc = init_clc(["L0", "L1", "L2"], seed=9,
                           trainable_output=trainable)
            path = tmp_path / f"clc_{trainable}.tsv"
            save_clc(clc, path)
            back = load_clc(path)
            assert back.languages == clc.languages
            assert np.array_equal(back.w1.data, clc.w1.data)
            assert np.array_equal(back.b1.data, clc.b1.data)
            if trainable:
                assert np.array_equal(back.w_out.data, clc.w_out.data)
                assert np.array_equal(back.b_out.data, clc.b_out.data)
            else:
                assert back.w_out is None
            again = tmp_path / f"clc_{trainable}_again.tsv"
            save_clc(back, again)
            assert path.read_bytes() == again.read_bytes()

    def test_loaded_classifier_fuses_identically(self, tmp_path, trained,
                                                 val_tables):
        clc = init_clc(trained.languages, seed=11)
        train_clc(clc, val_tables, iterations=5)
        save_clc(clc, tmp_path / "clc.tsv")
        back = load_clc(tmp_path / "clc.tsv")
        v = val_tables[0].vectors
        assert np.array_equal(clc_classifier_fuse(v, back),
                              clc_classifier_fuse(v, clc))

    def test_foreign_file_rejected(self, tmp_path):
        bad = tmp_path / "junk.tsv"
        bad.write_text("metrics,stuff\n1,2\n")
        with pytest.raises(ValueError):
            load_clc(bad)
