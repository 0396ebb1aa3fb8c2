import csv
import json

import pytest

from ranklm.cli import main
from conftest import make_markov_corpus


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    train = make_markov_corpus(root, seed=0, n_tokens=2000, name="train.txt")
    valid = make_markov_corpus(root, seed=1, n_tokens=500, name="valid.txt")
    return {"root": root, "train": str(train), "valid": str(valid)}


def run(args):
    return main(args)


class TestDataPrep:
    def test_build_vocab(self, pipeline, capsys):
        out = pipeline["root"] / "vocab.txt"
        assert run(["build-vocab", pipeline["train"], "--out", str(out)]) == 0
        assert out.exists()
        stanza = json.loads(capsys.readouterr().out.splitlines()[0])
        assert stanza["command"] == "build-vocab"
        assert "format_versions" in stanza

    def test_build_ranks_with_oracle(self, pipeline):
        out = pipeline["root"] / "ranks.rkgt"
        code = run([
            "build-ranks", pipeline["train"],
            "--vocab", str(pipeline["root"] / "vocab.txt"),
            "--max-past", "2", "--max-future", "1",
            "--cutoff", "10", "--k-max", "6",
            "--jobs", "2", "--check-oracle",
            "--out", str(out),
        ])
        assert code == 0
        assert out.exists()

    def test_inspect_renders(self, pipeline, capsys):
        code = run([
            "inspect", str(pipeline["root"] / "ranks.rkgt"),
            "--vocab", str(pipeline["root"] / "vocab.txt"),
            "--pos", "5", "--width", "3",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "t=5" in out

    def test_random_ranks_deterministic(self, pipeline):
        a = pipeline["root"] / "ra.rkgt"
        b = pipeline["root"] / "rb.rkgt"
        base = ["random-ranks", pipeline["train"],
                "--vocab", str(pipeline["root"] / "vocab.txt"),
                "--k", "4", "--seed", "11"]
        assert run(base + ["--out", str(a)]) == 0
        assert run(base + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_random_ranks_jsonl_records_prng(self, pipeline):
        out = pipeline["root"] / "rj.rkgt"
        jsonl = pipeline["root"] / "rj.jsonl"
        code = run(["random-ranks", pipeline["train"],
                    "--vocab", str(pipeline["root"] / "vocab.txt"),
                    "--k", "3", "--seed", "2",
                    "--out", str(out), "--jsonl-out", str(jsonl)])
        assert code == 0
        header = json.loads(jsonl.read_text().splitlines()[0])
        assert header["meta"]["prng"] == "numpy.random.PCG64"
        assert header["meta"]["seed"] == 2

    def test_stats_csv(self, pipeline):
        out = pipeline["root"] / "stats.csv"
        code = run([
            "stats", str(pipeline["root"] / "ranks.rkgt"),
            "--corpus", pipeline["train"],
            "--vocab", str(pipeline["root"] / "vocab.txt"),
            "--bins", "4", "--out", str(out),
        ])
        assert code == 0
        header = out.read_text().splitlines()[0]
        assert header == "word_rank,gt_freq,topk_freq,bin_avg"

    def test_float_gt_requires_logits(self, pipeline, capsys):
        code = run([
            "float-gt", str(pipeline["root"] / "ranks.rkgt"),
            "--corpus", pipeline["train"],
            "--vocab", str(pipeline["root"] / "vocab.txt"),
            "--out", str(pipeline["root"] / "floated.rkgt"),
        ])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_file_is_one_line_error(self, pipeline, capsys):
        code = run([
            "inspect", pipeline["train"],
            "--vocab", str(pipeline["root"] / "vocab.txt"),
            "--pos", "0",
        ])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert len(err.strip().splitlines()) == 1


class TestTrainEval:
    def write_config(self, pipeline, tag, seed=0):
        vocab_path = pipeline["root"] / "vocab.txt"
        n_vocab = len(vocab_path.read_text().splitlines())
        cfg = {
            "student": {
                "vocab_size": n_vocab,
                "context_len": 3,
                "embed_dim": 8,
                "hidden_dim": 10,
                "seed": seed,
            },
            "loss": {"variant": "wPL_s", "k": 5, "eta": 0.4,
                     "alpha_min": 0.5, "cycle_epochs": 2},
            "epochs": 2,
            "batch": {"batch_size": 8, "seq_len": 8},
            "train_path": pipeline["train"],
            "valid_path": pipeline["valid"],
            "vocab_path": str(vocab_path),
            "ranks_path": str(pipeline["root"] / "ranks.rkgt"),
            "checkpoint_dir": str(pipeline["root"] / tag),
        }
        path = pipeline["root"] / f"{tag}.json"
        path.write_text(json.dumps(cfg))
        return path

    def test_train_twice_identical_modulo_wall(self, pipeline, capsys):
        pa = self.write_config(pipeline, "runA")
        pb = self.write_config(pipeline, "runB")
        assert run(["train", "--config", str(pa)]) == 0
        assert run(["train", "--config", str(pb)]) == 0
        capsys.readouterr()

        def rows(tag):
            with open(pipeline["root"] / tag / "metrics.csv", newline="") as fh:
                out = list(csv.DictReader(fh))
            for r in out:
                r.pop("wall_ms")
            return out

        assert rows("runA") == rows("runB")

    def test_eval_checkpoint(self, pipeline, capsys):
        code = run([
            "eval", str(pipeline["root"] / "runA" / "final.ckpt"),
            "--corpus", pipeline["valid"],
            "--vocab", str(pipeline["root"] / "vocab.txt"),
            "--topk", "1,2,5",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "ppl=" in out and "acc@5=" in out

    def test_train_stanza_has_seed_and_config(self, pipeline, capsys):
        path = self.write_config(pipeline, "runC", seed=3)
        assert run(["train", "--config", str(path)]) == 0
        stanza = json.loads(capsys.readouterr().out.splitlines()[0])
        assert stanza["resolved"]["seed"] == 3
        assert stanza["resolved"]["config"]["loss"]["variant"] == "wPL_s"


class TestGradcheckCommand:
    def test_pass_report(self, capsys):
        assert run(["gradcheck", "--cases", "3", "--tol", "1e-4"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 7


class TestVersion:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["--version"])
        assert exc.value.code == 0
        assert "rkgt" in capsys.readouterr().out
