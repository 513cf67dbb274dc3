"""End-to-end CLI pipeline tests on a small synthetic workdir."""

import copy
import json

import pytest

from conceptrank.cli import DEFAULTS, apply_override, dispatch, load_config, main
from conceptrank.lexindex import read_run


def small_cfg(workdir, **extra):
    cfg = copy.deepcopy(DEFAULTS)
    cfg["workdir"] = str(workdir)
    cfg["synth"] = dict(
        cfg["synth"], n_docs=60, n_queries=5, vocab_size=100, concepts_per_query=2
    )
    cfg["embeddings"] = dict(cfg["embeddings"], dim=12)
    cfg["model"] = dict(cfg["model"], kind="epool", hidden_dim=12, out_dim=12)
    cfg["train"] = dict(cfg["train"], epochs=2, triplets_per_query=4, margin=0.5, lr=0.01)
    cfg["stability"] = {"seeds": [1, 2], "models": ["npool", "epool"]}
    for key, value in extra.items():
        cfg[key] = value
    return cfg


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """A workdir with the full chain already run once."""
    workdir = tmp_path_factory.mktemp("pipeline")
    cfg = small_cfg(workdir)
    for command in ("synth", "build-graphs", "index", "retrieve", "train", "rerank", "evaluate"):
        assert dispatch(command, cfg) == 0, command
    return workdir, cfg


class TestPipeline:
    def test_full_chain_artifacts(self, pipeline_dir):
        workdir, _ = pipeline_dir
        for name in (
            "corpus.jsonl",
            "queries.jsonl",
            "qrels.txt",
            "graphs.jsonl",
            "index.json",
            "bm25_run.txt",
            "checkpoint.json",
            "history.csv",
            "rerank_run.txt",
            "metrics.csv",
        ):
            assert (workdir / name).exists(), name

    def test_assess_utility_and_stability(self, pipeline_dir):
        workdir, cfg = pipeline_dir
        assert dispatch("assess-utility", cfg) == 0
        utility = (workdir / "utility.csv").read_text().splitlines()
        assert utility[0].startswith("pair_type,")
        assert len(utility) == 4  # header + three pair types
        assert dispatch("stability", cfg) == 0
        summary = (workdir / "stability.csv").read_text().splitlines()
        models = {line.split(",")[0] for line in summary[1:]}
        assert models == {"npool", "epool"}

    def test_rerank_is_permutation_of_candidates(self, pipeline_dir):
        workdir, _ = pipeline_dir
        bm25 = read_run(workdir / "bm25_run.txt")
        reranked = read_run(workdir / "rerank_run.txt")
        for qid, items in reranked.items():
            assert sorted(d for d, _ in items) == sorted(d for d, _ in bm25[qid])

    def test_evaluate_idempotent_byte_identical(self, pipeline_dir):
        workdir, cfg = pipeline_dir
        first = (workdir / "metrics.csv").read_bytes()
        assert dispatch("evaluate", copy.deepcopy(cfg), force=True) == 0
        assert (workdir / "metrics.csv").read_bytes() == first

    def test_stage_skipping_via_manifest(self, pipeline_dir):
        workdir, cfg = pipeline_dir
        before = (workdir / "bm25_run.txt").stat().st_mtime_ns
        assert dispatch("retrieve", cfg) == 0
        assert (workdir / "bm25_run.txt").stat().st_mtime_ns == before


class TestErrors:
    def test_rerank_before_train_names_producer(self, tmp_path, capsys):
        cfg = small_cfg(tmp_path / "w1")
        assert dispatch("synth", cfg) == 0
        assert dispatch("build-graphs", cfg) == 0
        assert dispatch("index", cfg) == 0
        assert dispatch("retrieve", cfg) == 0
        assert dispatch("rerank", cfg) == 1
        err = capsys.readouterr().err
        assert "train" in err

    def test_build_graphs_before_synth(self, tmp_path, capsys):
        cfg = small_cfg(tmp_path / "w2")
        assert dispatch("build-graphs", cfg) == 1
        assert "synth" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"no_such_section": 1}))
        from conceptrank.cli import CliError

        with pytest.raises(CliError, match="no_such_section"):
            load_config(path)


class TestConfigHandling:
    def test_override_parses_json_values(self):
        cfg = copy.deepcopy(DEFAULTS)
        apply_override(cfg, "train.epochs=3")
        apply_override(cfg, "model.kind=rwpool")
        apply_override(cfg, "synth.adversarial=true")
        assert cfg["train"]["epochs"] == 3
        assert cfg["model"]["kind"] == "rwpool"
        assert cfg["synth"]["adversarial"] is True

    def test_unknown_override_rejected(self):
        from conceptrank.cli import CliError

        with pytest.raises(CliError):
            apply_override(copy.deepcopy(DEFAULTS), "model.nope=1")

    def test_config_file_merging(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"seed": 99, "model": {"kind": "gin"}}))
        cfg = load_config(path)
        assert cfg["seed"] == 99
        assert cfg["model"]["kind"] == "gin"
        assert cfg["model"]["layers"] == DEFAULTS["model"]["layers"]

    def test_main_help_lists_flags(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["evaluate", "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for flag in ("--config", "--workdir", "--seed", "--set", "--force"):
            assert flag in out

    def test_main_runs_synth(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        code = main(
            [
                "synth",
                "--workdir",
                str(tmp_path / "w"),
                "--set",
                "synth.n_docs=30",
                "--set",
                "synth.n_queries=3",
                "--set",
                "synth.vocab_size=60",
                "--set",
                "synth.concepts_per_query=2",
            ]
        )
        assert code == 0
        assert (tmp_path / "w" / "corpus.jsonl").exists()

    def test_external_paths_respected(self, tmp_path):
        # corpus/queries/qrels can live outside the workdir
        source = small_cfg(tmp_path / "source")
        assert dispatch("synth", source) == 0
        cfg = small_cfg(tmp_path / "external_wd")
        cfg["paths"] = dict(
            cfg["paths"],
            corpus=str(tmp_path / "source" / "corpus.jsonl"),
            queries=str(tmp_path / "source" / "queries.jsonl"),
            qrels=str(tmp_path / "source" / "qrels.txt"),
        )
        for command in ("build-graphs", "index", "retrieve"):
            assert dispatch(command, cfg) == 0, command
        assert (tmp_path / "external_wd" / "bm25_run.txt").exists()

    def test_pretagged_input_bypasses_tagger(self, tmp_path):
        pretagged = tmp_path / "tagged.jsonl"
        pretagged.write_text(
            json.dumps(
                {"doc_id": "d1", "tagged": [["violent", "ADJ", 0], ["crimes", "NOUN", 0]]}
            )
            + "\n"
        )
        cfg = small_cfg(tmp_path / "pre_wd")
        cfg["paths"] = dict(cfg["paths"], pretagged=str(pretagged))
        assert dispatch("build-graphs", cfg) == 0
        graphs = (tmp_path / "pre_wd" / "graphs.jsonl").read_text()
        assert "violent crime" in graphs

    def test_run_files_byte_identical_under_force(self, pipeline_dir):
        workdir, cfg = pipeline_dir
        before = (workdir / "bm25_run.txt").read_bytes()
        assert dispatch("retrieve", copy.deepcopy(cfg), force=True) == 0
        assert (workdir / "bm25_run.txt").read_bytes() == before

    def test_workdir_env_override(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv("CONCEPTRANK_WORKDIR", str(tmp_path / "env_wd"))
        code = main(
            [
                "synth",
                "--set",
                "synth.n_docs=30",
                "--set",
                "synth.n_queries=3",
                "--set",
                "synth.vocab_size=60",
                "--set",
                "synth.concepts_per_query=2",
            ]
        )
        assert code == 0
        assert (tmp_path / "env_wd" / "corpus.jsonl").exists()
