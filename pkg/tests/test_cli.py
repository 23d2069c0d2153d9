import hashlib
import json

import pytest

from lexalign import cli, hybrid, metrics
from lexalign import model as model_mod

TINY = {
    "seed": 3, "images": 24, "languages": 2, "concepts": 12, "vocab": 40,
    "sentence_min": 3, "sentence_max": 6, "word_dim": 12, "feature_dim": 16,
    "split_train": 0.5, "split_val": 0.25, "split_test": 0.25,
    "d_img": 16, "d_j": 8, "d_u": 10, "reduced_dim": 6, "v_latent": 30,
    "k": 8, "adv_hidden": 8, "epochs": 2, "batch_size": 4,
    "pretrain_epochs": 2, "clc_iterations": 5,
}


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="session")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.json").write_text(json.dumps(TINY))
    assert run("gen-data", "--out", root / "data",
               "--config", root / "tiny.json") == 0
    return root


@pytest.fixture(scope="session")
def cfg(work):
    return work / "tiny.json"


@pytest.fixture(scope="session")
def data(work):
    return work / "data"


@pytest.fixture(scope="session")
def trained(work, cfg, data):
    out = work / "train"
    assert run("train", "--data", data, "--out", out, "--config", cfg) == 0
    return out


class TestConfig:
    def parse(self, *argv):
        return cli.build_parser().parse_args([str(a) for a in argv])

    def test_defaults(self):
        args = self.parse("gen-data", "--out", "x")
        assert cli.load_run_config(args) == cli.RunConfig()

    def test_config_file_applies(self, cfg):
        args = self.parse("gen-data", "--out", "x", "--config", cfg)
        got = cli.load_run_config(args)
        assert got.images == 24
        assert got.d_u == 10
        assert got.lr == cli.RunConfig().lr

    def test_flag_beats_file(self, cfg):
        args = self.parse("gen-data", "--out", "x", "--config", cfg,
                          "--images", "50")
        assert cli.load_run_config(args).images == 50

    def test_paper_dims(self):
        args = self.parse("train", "--data", "d", "--out", "x",
                          "--paper-dims")
        got = cli.load_run_config(args)
        assert (got.d_u, got.reduced_dim, got.v_latent, got.k) == (
            512, 50, 40000, 5000)
        assert got.d_img == got.feature_dim == 2048

    def test_flag_beats_paper_dims(self):
        args = self.parse("train", "--data", "d", "--out", "x",
                          "--paper-dims", "--d-u", "7")
        assert cli.load_run_config(args).d_u == 7

    def test_model_languages_csv(self):
        args = self.parse("train", "--data", "d", "--out", "x",
                          "--model-languages", "L0,L2")
        assert cli.load_run_config(args).model_languages == ["L0", "L2"]

    def test_unknown_config_key(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"imagse": 5}))
        args = self.parse("gen-data", "--out", "x", "--config", bad)
        with pytest.raises(ValueError, match="imagse"):
            cli.load_run_config(args)

    def test_config_hash_tracks_fields(self):
        a = cli.config_hash(cli.RunConfig())
        b = cli.config_hash(cli.RunConfig())
        c = cli.config_hash(cli.RunConfig(seed=8))
        assert a == b != c


class TestGenData:
    def test_deterministic_bytes(self, work, cfg, data):
        again = work / "data_again"
        assert run("gen-data", "--out", again, "--config", cfg) == 0
        assert sha(again / "corpus.jsonl") == sha(data / "corpus.jsonl")
        assert sha(again / "vectors.tsv") == sha(data / "vectors.tsv")

    def test_manifest(self, data):
        manifest = json.loads((data / "run.json").read_text())
        assert manifest["label"] == "gen-data"
        assert manifest["seed"] == 3
        assert manifest["config"]["images"] == 24
        recomputed = cli.config_hash(cli.RunConfig(**manifest["config"]))
        assert manifest["config_hash"] == recomputed
        for name, digest in manifest["artifacts"].items():
            assert sha(data / name) == digest


class TestTrainEval:
    def test_train_outputs(self, trained):
        assert (trained / "model.ckpt").exists()
        assert (trained / "train_log.csv").exists()
        per_lang, ha, a = metrics.read_metrics_csv(trained / "metrics.csv")
        assert set(per_lang) == {"L0", "L1"}
        manifest = json.loads((trained / "run.json").read_text())
        model = model_mod.load_model(trained / "model.ckpt")
        assert manifest["parameter_count"] == hybrid.parameter_count(
            model.embedder)
        assert manifest["A"] == a

    def test_train_deterministic(self, work, cfg, data, trained):
        again = work / "train_again"
        assert run("train", "--data", data, "--out", again,
                   "--config", cfg) == 0
        assert sha(again / "model.ckpt") == sha(trained / "model.ckpt")
        assert sha(again / "metrics.csv") == sha(trained / "metrics.csv")

    def test_eval_reproduces_train_metrics(self, work, cfg, data, trained):
        out = work / "eval_direct"
        assert run("eval", "--data", data, "--model",
                   trained / "model.ckpt", "--out", out,
                   "--config", cfg) == 0
        assert sha(out / "metrics.csv") == sha(trained / "metrics.csv")

    def test_eval_trans_to_pivot(self, work, cfg, data, trained):
        out = work / "eval_pivot"
        assert run("eval", "--data", data, "--model",
                   trained / "model.ckpt", "--out", out, "--mode",
                   "trans-to-pivot", "--config", cfg) == 0
        per_lang, _, _ = metrics.read_metrics_csv(out / "metrics.csv")
        assert set(per_lang) == {"L0", "L1"}
        manifest = json.loads((out / "run.json").read_text())
        assert manifest["mode"] == "trans-to-pivot"

    def test_pretrained_latent_feeds_train(self, work, cfg, data):
        latent = work / "latent"
        out = work / "train_pre"
        assert run("pretrain-latent", "--data", data, "--out", latent,
                   "--config", cfg) == 0
        manifest = json.loads((latent / "run.json").read_text())
        assert manifest["latent_rows_used"] >= 1
        assert len(manifest["epoch_losses"]) == TINY["pretrain_epochs"]
        assert run("train", "--data", data, "--out", out, "--pretrained",
                   latent / "latent.ckpt", "--config", cfg) == 0
        assert (out / "metrics.csv").exists()

    def test_language_restriction_flag(self, work, cfg, data):
        out = work / "train_l0"
        assert run("train", "--data", data, "--out", out, "--config", cfg,
                   "--model-languages", "L0") == 0
        per_lang, _, _ = metrics.read_metrics_csv(out / "metrics.csv")
        assert set(per_lang) == {"L0"}


class TestBaselines:
    def test_la_equals_k0_train(self, work, cfg, data):
        la, k0 = work / "bl_la", work / "train_k0"
        assert run("baseline", "la", "--data", data, "--out", la,
                   "--config", cfg) == 0
        assert run("train", "--data", data, "--out", k0, "--config", cfg,
                   "--k", "0") == 0
        assert sha(la / "metrics.csv") == sha(k0 / "metrics.csv")
        assert sha(la / "train_log.csv") == sha(k0 / "train_log.csv")

    @pytest.mark.parametrize("variant", ["freq", "pca", "dict"])
    def test_free_variants(self, work, cfg, data, variant):
        out = work / f"bl_{variant}"
        assert run("baseline", variant, "--data", data, "--out", out,
                   "--config", cfg) == 0
        model = model_mod.load_model(out / "model.ckpt")
        assert model.metadata["mode"] == "free"
        manifest = json.loads((out / "run.json").read_text())
        assert manifest["parameter_count"] == hybrid.parameter_count(
            model.embedder)
        if variant == "dict":
            assert (out / "dict.tsv").exists()

    def test_trans_pivot_variant(self, work, cfg, data):
        out = work / "bl_pivot"
        assert run("baseline", "trans-pivot", "--data", data, "--out", out,
                   "--config", cfg) == 0
        model = model_mod.load_model(out / "model.ckpt")
        assert model.languages == ["L0"]
        per_lang, _, _ = metrics.read_metrics_csv(out / "metrics.csv")
        assert set(per_lang) == {"L0", "L1"}


@pytest.fixture(scope="session")
def clc_run(work, cfg, data, trained):
    out = work / "clc"
    assert run("clc", "train", "--data", data, "--model",
               trained / "model.ckpt", "--out", out, "--config", cfg) == 0
    return out


class TestClc:
    def test_train_outputs(self, clc_run):
        log = (clc_run / "clc_log.csv").read_text().splitlines()
        assert log[0] == "iteration,loss"
        assert len(log) == TINY["clc_iterations"] + 1
        manifest = json.loads((clc_run / "run.json").read_text())
        assert manifest["clc_parameters"] == 96
        assert manifest["query_languages"] == ["L0", "L1"]

    def test_eval_classifier(self, work, cfg, data, trained, clc_run):
        out = work / "clc_eval"
        assert run("clc", "eval", "--data", data, "--model",
                   trained / "model.ckpt", "--out", out, "--mode",
                   "classifier", "--clc", clc_run / "clc.tsv",
                   "--config", cfg) == 0
        per_lang, _, _ = metrics.read_metrics_csv(out / "metrics.csv")
        assert set(per_lang) == {"L0", "L1"}

    def test_average_matches_eval_mode(self, work, cfg, data, trained):
        a, b = work / "clc_avg", work / "eval_clca"
        assert run("clc", "eval", "--data", data, "--model",
                   trained / "model.ckpt", "--out", a, "--config", cfg) == 0
        assert run("eval", "--data", data, "--model",
                   trained / "model.ckpt", "--out", b, "--mode", "clc-a",
                   "--config", cfg) == 0
        assert sha(a / "metrics.csv") == sha(b / "metrics.csv")

    def test_classifier_requires_weights(self, data, trained, tmp_path,
                                         capsys):
        code = run("clc", "eval", "--data", data, "--model",
                   trained / "model.ckpt", "--out", tmp_path, "--mode",
                   "classifier")
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ValueError"
        assert "--clc" in err["message"]


class TestSweepPlot:
    def test_sweep_csv(self, work, cfg, data):
        out = work / "sweep"
        assert run("sweep", "lambda2", "--data", data, "--out", out,
                   "--config", cfg, "--grid", "1e-4,1e-2") == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "lambda2,A"
        assert len(lines) == 3
        assert lines[1].startswith("1e-4,")
        assert lines[2].startswith("1e-2,")
        for row in lines[1:]:
            float(row.split(",")[1])

    def test_plot_outputs(self, work, trained, data, cfg):
        la = work / "bl_la"
        if not (la / "run.json").exists():
            assert run("baseline", "la", "--data", data, "--out", la,
                       "--config", cfg) == 0
        out = work / "plot"
        assert run("plot", "--runs", f"{trained},{la}", "--out", out) == 0
        lines = (out / "plot.csv").read_text().splitlines()
        assert lines[0] == "label,parameters,A"
        params = [int(r.split(",")[1]) for r in lines[1:]]
        assert params == sorted(params)
        svg = (out / "plot.svg").read_text()
        assert svg.startswith("<svg")
        assert "train" in svg and "baseline-la" in svg

    def test_plot_rejects_run_without_parameters(self, data, tmp_path,
                                                 capsys):
        code = run("plot", "--runs", data, "--out", tmp_path)
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert "parameter_count" in err["message"]


class TestErrors:
    def test_missing_model_structured_stderr(self, data, tmp_path, capsys):
        code = run("eval", "--data", data, "--model", "missing.ckpt",
                   "--out", tmp_path)
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "FileNotFoundError"
        assert "missing.ckpt" in err["message"]

    def test_empty_sweep_grid(self, data, tmp_path, capsys):
        code = run("sweep", "lambda2", "--data", data, "--out", tmp_path,
                   "--grid", "")
        assert code == 1
        assert json.loads(capsys.readouterr().err)["error"] == "ValueError"
