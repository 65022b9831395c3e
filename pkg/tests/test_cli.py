"""Tests for the command-line pipeline."""

import json

import pytest

from src.cli import RunContext, build_parser, flag_actions, flag_names, main, parse_list, parse_size
from src.core import Provenance
from src.data_io import read_checkpoint, read_dataset, read_pool
from src.errors import ConfigError
from tests.conftest import tiny_synth_spec

_COMPARE_ARGS = ["--real", "r.gmds", "--pool", "p.gmpl", "--lexicon", "l.tsv",
                 "--train", "t.gmds", "--test", "e.gmds"]


def _run_json(path):
    return json.loads(open(f"{path}.run.json", encoding="utf-8").read())


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run synth -> pool -> words -> mixup -> pretrain -> finetune -> eval once."""
    root = tmp_path_factory.mktemp("pipeline")
    spec = root / "spec.json"
    spec.write_text(json.dumps(tiny_synth_spec(n_utts=40).to_dict()))
    config = root / "config.json"
    config.write_text(json.dumps({"d_hidden": 8, "filters": 8, "batch_size": 16, "n": 999}))
    corpus = root / "corpus"
    paths = {
        "root": root, "corpus": corpus, "config": config,
        "pool": root / "pool.gmpl", "real": root / "real.gmds", "train": root / "train.gmds",
        "test": root / "test.gmds", "mixup": root / "mixup.gmds", "pre": root / "pre.gmck",
        "ft": root / "ft.gmck", "report": root / "pred.csv",
    }
    phone_map = str(corpus / "phone_map.tsv")
    lexicon = str(corpus / "lexicon.tsv")
    labels = str(corpus / "labels.tsv")
    steps = [
        ["synth", "--spec", str(spec), "--out", str(corpus)],
        ["build-pool", "--manifest", str(corpus / "unlabeled.jsonl"), "--phone-map", phone_map,
         "--out", str(paths["pool"])],
        ["extract-words", "--manifest", str(corpus / "unlabeled.jsonl"), "--phone-map", phone_map,
         "--lexicon", lexicon, "--out", str(paths["real"])],
        ["extract-words", "--manifest", str(corpus / "train.jsonl"), "--phone-map", phone_map,
         "--lexicon", lexicon, "--labels", labels, "--out", str(paths["train"])],
        ["extract-words", "--manifest", str(corpus / "test.jsonl"), "--phone-map", phone_map,
         "--lexicon", lexicon, "--labels", labels, "--out", str(paths["test"])],
        ["mixup", "--pool", str(paths["pool"]), "--lexicon", lexicon, "--n", "200", "--seed", "1",
         "--out", str(paths["mixup"])],
        ["--config", str(config), "pretrain", "--real", str(paths["real"]), "--mixup", str(paths["mixup"]),
         "--epochs", "1", "--out-ckpt", str(paths["pre"])],
        ["--config", str(config), "finetune", "--ckpt", str(paths["pre"]), "--train", str(paths["train"]),
         "--epochs", "2", "--out-ckpt", str(paths["ft"])],
        ["eval", "--ckpt", str(paths["ft"]), "--test", str(paths["test"]), "--report", str(paths["report"])],
    ]
    paths["codes"] = [main(step) for step in steps]
    return paths


class TestParsing:
    """Tests for argument helpers."""

    @pytest.mark.parametrize("text,expected", [("300", 300), ("50k", 50_000), ("1.5m", 1_500_000), ("2K", 2000)])
    def test_parse_size(self, text, expected):
        """Sizes accept k and m suffixes."""
        assert parse_size(text) == expected

    @pytest.mark.parametrize("text", ["abc", "1.5", "-3"])
    def test_parse_size_rejects(self, text):
        """Non-integral or negative sizes are rejected."""
        with pytest.raises(ConfigError):
            parse_size(text)

    def test_parse_list(self):
        """Comma lists skip empty items."""
        assert parse_list("0,1,,2", int) == [0, 1, 2]

    def test_flag_names_cover_subcommands(self):
        """Flag names include every subcommand's options."""
        names = flag_names(build_parser())
        assert {"n", "sizes", "out_ckpt", "ctm", "verbose"} <= names


class TestExitCodes:
    """Tests for usage and error exits."""

    def test_help(self, capsys):
        """--help exits 0."""
        assert main(["--help"]) == 0
        assert "phone-mixup" in capsys.readouterr().out

    def test_no_command(self):
        """A missing subcommand is a usage error."""
        assert main([]) == 2

    def test_bad_size(self, tmp_path):
        """An unparsable --n is a usage error."""
        assert main(["mixup", "--pool", "p", "--lexicon", "l", "--n", "lots", "--out", str(tmp_path / "m")]) == 2

    def test_missing_input(self, tmp_path, capsys):
        """A missing input file exits 3 with a categorized message."""
        code = main(["mixup", "--pool", str(tmp_path / "none.gmpl"), "--lexicon", "l", "--n", "5",
                     "--out", str(tmp_path / "m.gmds")])
        assert code == 3
        assert "❌" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        """Unknown config keys are a configuration error."""
        (tmp_path / "c.json").write_text(json.dumps({"colour": "red"}))
        code = main(["--config", str(tmp_path / "c.json"), "synth", "--out", str(tmp_path / "x")])
        assert code == 3
        assert "config" in capsys.readouterr().err

    @pytest.mark.parametrize("flag,value", [("--seeds", "0,x"), ("--real-sizes", "5,lots")])
    def test_bad_list_flag(self, tmp_path, flag, value):
        """Unparsable list flags are usage errors, not crashes."""
        assert main(["compare", *_COMPARE_ARGS, flag, value, "--out-csv", str(tmp_path / "c.csv")]) == 2

    @pytest.mark.parametrize("flag,value", [("--sizes", "2k,x"), ("--feature-sets", "mfcc,pitch")])
    def test_bad_sweep_flag(self, tmp_path, flag, value):
        """Sweep sizes and feature sets are checked at parse time."""
        args = ["--sizes", "2k"] if flag != "--sizes" else []
        assert main(["sweep", *_COMPARE_ARGS, *args, flag, value, "--out-csv", str(tmp_path / "s.csv")]) == 2

    @pytest.mark.parametrize("values,key", [({"n_mixup": "lots"}, "n_mixup"), ({"seeds": "0,x"}, "seeds"),
                                            ({"feature_set": "pitch"}, "feature_set")])
    def test_bad_config_value(self, tmp_path, capsys, values, key):
        """Config values go through the flag's own converter and exit 3 when invalid."""
        (tmp_path / "c.json").write_text(json.dumps(values))
        code = main(["--config", str(tmp_path / "c.json"), "compare", *_COMPARE_ARGS,
                     "--out-csv", str(tmp_path / "c.csv")])
        assert code == 3
        assert key in capsys.readouterr().err

    def test_config_values_converted(self, tmp_path):
        """Sizes and lists from a config file arrive typed like their flags."""
        parser = build_parser()
        (tmp_path / "c.json").write_text(json.dumps({"n_mixup": "2k", "seeds": "0", "real_sizes": [5, "1k"]}))
        argv = ["--config", str(tmp_path / "c.json"), "compare", *_COMPARE_ARGS, "--out-csv", "c.csv"]
        ctx = RunContext(parser.parse_args(argv), argv, flag_actions(parser))
        assert ctx.args.n_mixup == 2000
        assert ctx.args.seeds == [0]
        assert ctx.args.real_sizes == [5, 1000]

    def test_finetune_needs_data(self, tmp_path, capsys):
        """Fine-tuning without a dataset or manifest is a configuration error."""
        assert main(["finetune", "--out-ckpt", str(tmp_path / "f.gmck")]) == 3
        assert "--train" in capsys.readouterr().err


class TestPipeline:
    """End-to-end runs over a tiny synthetic corpus."""

    def test_all_steps_succeed(self, pipeline):
        """Every phase exits 0."""
        assert pipeline["codes"] == [0] * 9

    def test_synth_outputs(self, pipeline):
        """The corpus directory holds every standard file and a run manifest."""
        corpus = pipeline["corpus"]
        for name in ("manifest.jsonl", "unlabeled.jsonl", "train.jsonl", "test.jsonl", "labels.tsv",
                     "lexicon.tsv", "phone_map.tsv", "align.tsv", "synth_spec.json"):
            assert (corpus / name).is_file()
        run = _run_json(corpus)
        assert run["command"] == "synth"
        assert run["synth_seed"] == 7
        assert sum(run["split"].values()) == 40

    def test_datasets(self, pipeline):
        """Extracted datasets carry the provenance of their source."""
        real, _ = read_dataset(pipeline["real"])
        train, _ = read_dataset(pipeline["train"])
        assert {s.provenance for s in real} == {Provenance.REAL_UNLABELED}
        assert {s.provenance for s in train} == {Provenance.HUMAN_LABELED}

    def test_pool_and_inputs_hashed(self, pipeline):
        """The pool run records hashed inputs."""
        assert len(read_pool(pipeline["pool"])) > 0
        run = _run_json(pipeline["pool"])
        assert all(len(digest) == 64 for digest in run["inputs"].values())

    def test_mixup_outputs(self, pipeline):
        """Mixup writes the requested count and its generation manifest."""
        samples, _ = read_dataset(pipeline["mixup"])
        assert len(samples) == 200
        assert {s.provenance for s in samples} == {Provenance.MIXUP}
        run = _run_json(pipeline["mixup"])
        assert run["seed"] == 1
        assert run["generation"]["n_words"] == 200

    def test_mixup_rerun_identical(self, pipeline, tmp_path):
        """The same seed reproduces the mixup file byte for byte."""
        again = tmp_path / "again.gmds"
        code = main(["mixup", "--pool", str(pipeline["pool"]), "--lexicon", str(pipeline["corpus"] / "lexicon.tsv"),
                     "--n", "200", "--seed", "1", "--out", str(again)])
        assert code == 0
        assert again.read_bytes() == pipeline["mixup"].read_bytes()

    def test_config_layering(self, pipeline):
        """Config-file scorer settings reach the checkpoint; flags override the file."""
        cfg = read_checkpoint(pipeline["pre"]).config
        assert (cfg.d_hidden, cfg.filters, cfg.batch_size) == (8, 8, 16)
        assert cfg.pretrain_epochs == 1
        assert cfg.d_mfcc == 4 and cfg.d_deep == 6 and cfg.n_phones == 8

    def test_finetune_keeps_architecture(self, pipeline):
        """Fine-tuning updates training settings but not the architecture."""
        pre = read_checkpoint(pipeline["pre"]).config
        ft = read_checkpoint(pipeline["ft"]).config
        assert ft.finetune_epochs == 2
        assert (ft.d_hidden, ft.filters, ft.n_phones) == (pre.d_hidden, pre.filters, pre.n_phones)
        assert len(json.loads(open(f"{pipeline['ft']}.json").read())["loss_curve"]) == 2

    def test_eval_report(self, pipeline):
        """Eval writes one row per test word and records the PCC."""
        test, _ = read_dataset(pipeline["test"])
        lines = pipeline["report"].read_text().splitlines()
        assert len(lines) == len(test) + 1
        assert -1.0 <= _run_json(pipeline["report"])["pcc"] <= 1.0

    def test_finetune_from_manifest(self, pipeline, tmp_path):
        """Fine-tuning also reads a manifest with labels directly."""
        corpus = pipeline["corpus"]
        out = tmp_path / "nopre.gmck"
        code = main(["--config", str(pipeline["config"]), "finetune",
                     "--train-manifest", str(corpus / "train.jsonl"),
                     "--train-labels", str(corpus / "labels.tsv"),
                     "--phone-map", str(corpus / "phone_map.tsv"), "--lexicon", str(corpus / "lexicon.tsv"),
                     "--epochs", "1", "--out-ckpt", str(out)])
        assert code == 0
        assert read_checkpoint(out).config.n_phones == 8

    def test_gop_dump(self, pipeline, tmp_path):
        """The gop command writes one line per aligned segment and one per word."""
        corpus = pipeline["corpus"]
        out = tmp_path / "gop.tsv"
        code = main(["gop", "--manifest", str(corpus / "test.jsonl"), "--phone-map", str(corpus / "phone_map.tsv"),
                     "--lexicon", str(corpus / "lexicon.tsv"), "--out", str(out)])
        assert code == 0
        test, _ = read_dataset(pipeline["test"])
        word_lines = (tmp_path / "gop.tsv.words.tsv").read_text().splitlines()
        assert len(word_lines) == len(test)
        phone_lines = out.read_text().splitlines()
        assert len(phone_lines) == sum(len(s.segment_lengths) for s in test)
        assert all(0.0 <= float(line.split("\t")[5]) <= 1.0 for line in phone_lines)

    def test_convert_ctm(self, pipeline, tmp_path):
        """CTM alignments convert to frame-index TSV."""
        ctm = tmp_path / "a.ctm"
        ctm.write_text("u1 1 0.00 0.05 AA\nu1 1 0.05 0.02 B\n")
        out = tmp_path / "align.tsv"
        assert main(["convert-ctm", "--ctm", str(ctm), "--phone-map", str(pipeline["corpus"] / "phone_map.tsv"),
                     "--out", str(out)]) == 0
        assert out.read_text().splitlines() == ["u1\tAA\t0\t5", "u1\tB\t5\t7"]

    def test_config_seed_and_flag_override(self, pipeline, tmp_path):
        """A config seed applies unless the flag is given."""
        (tmp_path / "c.json").write_text(json.dumps({"seed": 5}))
        args = ["--pool", str(pipeline["pool"]), "--lexicon", str(pipeline["corpus"] / "lexicon.tsv"), "--n", "10"]
        assert main(["--config", str(tmp_path / "c.json"), "mixup", *args, "--out", str(tmp_path / "a.gmds")]) == 0
        assert main(["--config", str(tmp_path / "c.json"), "mixup", *args, "--seed", "7",
                     "--out", str(tmp_path / "b.gmds")]) == 0
        assert _run_json(tmp_path / "a.gmds")["seed"] == 5
        assert _run_json(tmp_path / "b.gmds")["seed"] == 7
