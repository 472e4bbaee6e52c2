"""Command-line behavior: config resolution, manifests, metrics files,
sweeps, the ablation harness, and exit codes.

Training runs here use a small corpus slice and tiny models so the whole
file stays fast. Full-scale behavior is exercised by the acceptance
tests.
"""

import csv
import json
import os

import numpy as np
import pytest

from blockprop import cli
from blockprop.config import ConfigError, DEFAULT_GRID


@pytest.fixture()
def tiny_corpus(tmp_path):
    res = cli._load_corpus(None)
    path = tmp_path / "tiny.txt"
    path.write_text(res[0][:3000], encoding="utf-8")
    return str(path)


def run_cli(*argv):
    return cli.main(list(argv))


# ------------------------------------------------------ config resolution


class TestResolution:
    def test_defaults_apply(self):
        args = cli.build_parser().parse_args(["train-bptt"])
        cfg = cli.resolve_config(args, cli.TRAIN_BPTT_SPEC)
        assert cfg["d_h"] == 64
        assert cfg["k"] == 10
        assert cfg["lr"] == 0.1
        assert cfg["mode"] == "char"

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment line\nd_h = 16  # trailing comment\nk=3\n")
        args = cli.build_parser().parse_args(
            ["train-bptt", "--config", str(path)])
        cfg = cli.resolve_config(args, cli.TRAIN_BPTT_SPEC)
        assert cfg["d_h"] == 16
        assert cfg["k"] == 3

    def test_env_overrides_file(self, tmp_path, monkeypatch):
        path = tmp_path / "run.cfg"
        path.write_text("d_h=16\n")
        monkeypatch.setenv("BLOCKPROP_D_H", "24")
        args = cli.build_parser().parse_args(
            ["train-bptt", "--config", str(path)])
        cfg = cli.resolve_config(args, cli.TRAIN_BPTT_SPEC)
        assert cfg["d_h"] == 24

    def test_flag_overrides_everything(self, tmp_path, monkeypatch):
        path = tmp_path / "run.cfg"
        path.write_text("d_h=16\n")
        monkeypatch.setenv("BLOCKPROP_D_H", "24")
        args = cli.build_parser().parse_args(
            ["train-bptt", "--config", str(path), "--d-h", "32"])
        cfg = cli.resolve_config(args, cli.TRAIN_BPTT_SPEC)
        assert cfg["d_h"] == 32

    def test_unknown_file_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("no_such_key=1\n")
        args = cli.build_parser().parse_args(
            ["train-bptt", "--config", str(path)])
        with pytest.raises(ConfigError):
            cli.resolve_config(args, cli.TRAIN_BPTT_SPEC)

    def test_malformed_file_line_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("just some words\n")
        args = cli.build_parser().parse_args(
            ["train-bptt", "--config", str(path)])
        with pytest.raises(ConfigError):
            cli.resolve_config(args, cli.TRAIN_BPTT_SPEC)

    def test_bad_env_value_rejected(self, monkeypatch):
        monkeypatch.setenv("BLOCKPROP_EPOCHS", "three")
        args = cli.build_parser().parse_args(["train-bptt"])
        with pytest.raises(ConfigError):
            cli.resolve_config(args, cli.TRAIN_BPTT_SPEC)

    def test_lambda_flag_spelling(self):
        args = cli.build_parser().parse_args(
            ["train-btprop", "--lambda", "0.5", "--B", "4"])
        cfg = cli.resolve_config(args, cli.TRAIN_BTPROP_SPEC)
        assert cfg["lam"] == 0.5
        assert cfg["b"] == 4


# ------------------------------------------------------- metrics records


class TestMetricsFormat:
    def test_key_order_is_fixed(self):
        line = cli.metrics_line({"valid_ppl": 2.0, "epoch": 1,
                                 "train_loss": 3.0, "train_nll": 0.5})
        assert line == ('{"epoch": 1, "train_loss": 3.0, '
                        '"train_nll": 0.5, "valid_ppl": 2.0}')

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            cli.metrics_line({"epoch": 0, "wall_clock": 1.0})

    def test_metrics_file_is_jsonl(self, tiny_corpus, tmp_path):
        out = str(tmp_path / "m.jsonl")
        code = run_cli("train-bptt", "--corpus", tiny_corpus, "--d-h", "4",
                       "--epochs", "2", "--metrics-out", out)
        assert code == 0
        records = [json.loads(line) for line in open(out, encoding="utf-8")]
        assert len(records) == 2
        assert [r["epoch"] for r in records] == [0, 1]
        for rec in records:
            assert set(rec) <= set(cli.METRIC_KEYS)
            assert "valid_ppl" in rec
            assert "wall_clock" not in rec


# ------------------------------------------------------------- manifests


class TestManifest:
    def test_written_before_training_with_checksum(self, tiny_corpus,
                                                   tmp_path):
        out = str(tmp_path / "m.jsonl")
        code = run_cli("train-bptt", "--corpus", tiny_corpus, "--d-h", "4",
                       "--epochs", "1", "--metrics-out", out)
        assert code == 0
        man = json.load(open(out + ".manifest.json", encoding="utf-8"))
        assert man["command"] == "train-bptt"
        assert man["config"]["d_h"] == 4
        assert man["seed"] == 0
        assert len(man["corpus_sha256"]) == 64
        assert man["version"]
        assert man["start_time"]

    def test_rerun_reproduces_metrics_byte_for_byte(self, tiny_corpus,
                                                    tmp_path):
        out = str(tmp_path / "m.jsonl")
        run_cli("train-btprop", "--corpus", tiny_corpus, "--d-h", "6",
                "--B", "5", "--epochs", "2", "--metrics-out", out)
        out2 = str(tmp_path / "m2.jsonl")
        code = run_cli("rerun", "--manifest", out + ".manifest.json",
                       "--metrics-out", out2)
        assert code == 0
        with open(out, "rb") as a, open(out2, "rb") as b:
            assert a.read() == b.read()

    def test_rerun_rejects_corpus_drift(self, tiny_corpus, tmp_path):
        out = str(tmp_path / "m.jsonl")
        run_cli("train-bptt", "--corpus", tiny_corpus, "--d-h", "4",
                "--epochs", "1", "--metrics-out", out)
        with open(tiny_corpus, "a", encoding="utf-8") as f:
            f.write("x")
        code = run_cli("rerun", "--manifest", out + ".manifest.json",
                       "--metrics-out", str(tmp_path / "m2.jsonl"))
        assert code == 2


# ------------------------------------------------------ train / eval


class TestTrainEval:
    def test_checkpoint_roundtrip_through_eval(self, tiny_corpus, tmp_path,
                                               capsys):
        ck = str(tmp_path / "ck.bin")
        code = run_cli("train-bptt", "--corpus", tiny_corpus, "--d-h", "6",
                       "--epochs", "1", "--checkpoint-out", ck)
        assert code == 0
        assert os.path.exists(ck)
        assert os.path.exists(ck + ".vocab.json")
        capsys.readouterr()
        code = run_cli("eval", "--checkpoint", ck, "--corpus", tiny_corpus)
        assert code == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["n_transitions"] == 2999
        assert rep["ppl"] == pytest.approx(np.exp(rep["nll"]))

    def test_eval_requires_checkpoint(self):
        assert run_cli("eval") == 2

    def test_threads_do_not_change_metrics(self, tiny_corpus, tmp_path):
        outs = []
        for threads in ("1", "4"):
            out = str(tmp_path / f"m{threads}.jsonl")
            run_cli("train-btprop", "--corpus", tiny_corpus, "--d-h", "6",
                    "--B", "5", "--epochs", "2", "--threads", threads,
                    "--metrics-out", out)
            outs.append(open(out, "rb").read())
        assert outs[0] == outs[1]

    def test_build_vocab(self, tiny_corpus, tmp_path, capsys):
        out = str(tmp_path / "v.json")
        code = run_cli("build-vocab", "--corpus", tiny_corpus, "--out", out)
        assert code == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["size"] == rep["n_known"] + 1
        assert os.path.exists(out)


# ----------------------------------------------------------------- sweep


class TestSweep:
    def base_cfg(self, **over):
        cfg = {key: default for key, (default, _) in cli.SWEEP_SPEC.items()}
        cfg.update(over)
        return cfg

    def test_hidden_axis_enumerates_nine_runs(self):
        tasks = cli.sweep_tasks(self.base_cfg())
        assert len(tasks) == 9
        labels = [label for label, _ in tasks]
        assert labels.count("bptt") == 3
        assert labels.count("btprop-h2") == 3
        assert labels.count("btprop-h5") == 3
        sizes = sorted({over["d_h"] for _, over in tasks})
        assert sizes == [16, 32, 64]

    def test_grid_enumerates_exactly_243(self):
        tasks = cli.sweep_tasks(self.base_cfg(axis="grid"))
        assert len(tasks) == 243
        seen = {tuple(sorted(over.items())) for _, over in tasks}
        assert len(seen) == 243
        for _, over in tasks:
            for key, values in DEFAULT_GRID.items():
                assert over[key] in values

    def test_empty_axis_is_a_config_error(self):
        with pytest.raises(ConfigError):
            cli.sweep_tasks(self.base_cfg(hidden_sizes=()))

    def test_limit_truncates(self):
        tasks = cli.sweep_tasks(self.base_cfg(axis="grid", limit=5))
        assert len(tasks) == 5

    def test_end_to_end_with_distinct_seeds(self, tiny_corpus, tmp_path,
                                            capsys):
        out_dir = str(tmp_path / "sweep")
        code = run_cli("sweep", "--corpus", tiny_corpus, "--axis",
                       "hidden-sizes", "--hidden-sizes", "4,6",
                       "--epochs", "1", "--out-dir", out_dir)
        assert code == 0
        rows = list(open(os.path.join(out_dir, "summary.csv"),
                         encoding="utf-8"))
        header = rows[0].strip().split(",")
        assert len(rows) == 1 + 6
        seed_col = header.index("seed")
        ppl_col = header.index("final_valid_ppl")
        status_col = header.index("status")
        seeds = set()
        for row in rows[1:]:
            cells = row.strip().split(",")
            assert cells[status_col] == "ok"
            assert float(cells[ppl_col]) > 1.0
            seeds.add(cells[seed_col])
        assert len(seeds) == 6
        for i in range(6):
            metrics = [name for name in os.listdir(out_dir)
                       if name.startswith(f"run_{i:03d}_")
                       and name.endswith(".jsonl")]
            assert len(metrics) == 1

    def test_child_failure_recorded_sweep_continues(self, tiny_corpus,
                                                    tmp_path, capsys):
        out_dir = str(tmp_path / "sweep")
        code = run_cli("sweep", "--corpus", tiny_corpus, "--axis",
                       "hidden-sizes", "--hidden-sizes=-4,4",
                       "--epochs", "1", "--out-dir", out_dir)
        assert code == 1
        with open(os.path.join(out_dir, "summary.csv"),
                  encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 6
        statuses = [row["status"] for row in rows]
        assert statuses.count("ok") == 3
        assert sum(s.startswith("error") for s in statuses) == 3


# ---------------------------------------------------------------- ablate


class TestAblate:
    def test_three_conditions_and_baseline_delta(self, tiny_corpus,
                                                 tmp_path, capsys):
        out = str(tmp_path / "ab.csv")
        code = run_cli("ablate", "--corpus", tiny_corpus, "--d-h", "6",
                       "--epochs", "1", "--oracle-every", "3",
                       "--out", out)
        assert code == 0
        rows = list(open(out, encoding="utf-8"))
        assert len(rows) == 1 + 3
        header = rows[0].strip().split(",")
        delta_col = header.index("delta_ppl")
        first = rows[1].strip().split(",")
        assert float(first[delta_col]) == 0.0

    def test_oracle_rejects_a_corrupted_gradient(self, tiny_corpus):
        auditor_factory = cli._bptt_oracle_auditor

        def poisoned(params, lam, every):
            audit = auditor_factory(params, lam, every)

            def wrapper(index, blocks, carry, hidden):
                hidden[0, 0] += 0.5
                audit(index, blocks, carry, hidden)

            return wrapper

        cli._bptt_oracle_auditor = poisoned
        try:
            code = run_cli("ablate", "--corpus", tiny_corpus, "--d-h", "4",
                           "--epochs", "1", "--oracle-every", "1")
        finally:
            cli._bptt_oracle_auditor = auditor_factory
        assert code == 1

    def test_oracle_every_must_be_positive(self, tiny_corpus):
        assert run_cli("ablate", "--corpus", tiny_corpus,
                       "--oracle-every", "0") == 2


# ------------------------------------------------------------ exit codes


class TestExitCodes:
    def test_success_is_zero(self, tiny_corpus):
        assert run_cli("train-bptt", "--corpus", tiny_corpus,
                       "--d-h", "4", "--epochs", "1") == 0

    def test_config_error_is_two(self, tiny_corpus):
        assert run_cli("train-btprop", "--corpus", tiny_corpus,
                       "--epochs", "0") == 2

    def test_missing_corpus_file_is_one(self, tmp_path):
        assert run_cli("train-bptt", "--corpus",
                       str(tmp_path / "no-such.txt")) == 1

    def test_bad_flag_value_is_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["train-bptt", "--epochs", "three"])
        assert exc.value.code == 2
