import subprocess
import sys

import numpy as np
import pytest

from ipll import io
from ipll.cli import main
from ipll.config import PGDRConfig, config_from_dict, dump_config, load_config, load_generation_spec, parse_kv
from ipll.datagen import DatasetSpec, StreamSpec, generate_stream
from ipll.errors import ConfigError, IPLLError
from ipll.model import Model
from ipll.prototypes import PrototypeBank

SPEC = """\
num_classes = 4
feature_dim = 5
samples_per_class = 16
test_per_class = 4
cluster_separation = 10
cluster_stddev = 0.5
tasks = 2
w = 90
q = 0.3
seed = 11
"""

CONFIG = """\
epochs = 3
batch_size = 16
hidden_dim = 8
memory_budget = 12
knn_k = 3
seed = 2
"""


@pytest.fixture
def files(tmp_path):
    (tmp_path / "spec.txt").write_text(SPEC)
    (tmp_path / "cfg.txt").write_text(CONFIG)
    return tmp_path


class TestStreamFile:
    def test_round_trip_bit_exact(self, tmp_path):
        s = generate_stream(DatasetSpec(num_classes=4, feature_dim=3, samples_per_class=8, test_per_class=3, seed=1),
                            StreamSpec(tasks=2, w=70, q=0.5, seed=1))
        io.write_stream(tmp_path / "s.txt", s)
        r = io.read_stream(tmp_path / "s.txt")
        assert (r.num_classes, r.feature_dim, r.num_tasks, r.q, r.w, r.seed) == (4, 3, 2, 0.5, 70, 1)
        assert r.meta == s.meta
        for a, b in zip(s.tasks, r.tasks):
            assert [x.id for x in a] == [x.id for x in b]
            for x, y in zip(a, b):
                assert x.candidates == y.candidates and x.true_label == y.true_label and x.task == y.task
                assert np.array_equal(x.features, y.features)
        assert np.array_equal(s.test_x, r.test_x) and np.array_equal(s.test_y, r.test_y)
        assert np.array_equal(s.test_ids, r.test_ids)

    def test_rewrite_identical(self, tmp_path):
        s = generate_stream(DatasetSpec(num_classes=2, feature_dim=2, samples_per_class=5, test_per_class=2),
                            StreamSpec(tasks=2, w=100, q=0.0))
        io.write_stream(tmp_path / "a.txt", s)
        io.write_stream(tmp_path / "b.txt", io.read_stream(tmp_path / "a.txt"))
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_missing_header(self, tmp_path):
        (tmp_path / "bad.txt").write_text("1\t0\t0\t0\t1.0\n")
        with pytest.raises(IPLLError):
            io.read_stream(tmp_path / "bad.txt")

    def test_wrong_width(self, tmp_path):
        (tmp_path / "bad.txt").write_text("# C=2 d=2 T=1 q=0 W=100 seed=0\n0\t0\t0\t0\t1.0\n")
        with pytest.raises(IPLLError):
            io.read_stream(tmp_path / "bad.txt")


def test_checkpoint_round_trip(tmp_path):
    m = Model(3, 4, 2, "tanh", np.random.default_rng(0))
    m.velocity["W1"] += 0.125
    bank = PrototypeBank(4, 0.3)
    bank.means[1] = np.array([0.1, 0.2, 0.3, 1 / 3])
    io.write_checkpoint(tmp_path / "c.txt", m, bank)
    m2, bank2 = io.read_checkpoint(tmp_path / "c.txt")
    assert m2.activation == "tanh" and bank2.gamma == 0.3
    for k in m.params:
        assert np.array_equal(m.params[k], m2.params[k])
        assert np.array_equal(m.velocity[k], m2.velocity[k])
    assert np.array_equal(bank2.means[1], bank.means[1])


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            config_from_dict({"learning_rate": "0.1"})

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            config_from_dict({"epochs": "many"})

    def test_duplicate_key(self):
        with pytest.raises(ConfigError):
            parse_kv("lr = 1\nlr = 2\n")

    def test_comments_and_nested(self):
        cfg = config_from_dict(parse_kv("# note\nalpha = 0.7  # inline\nw_kd = 0\nfreeze_memory_labels = yes\n"))
        assert cfg.separation.alpha == 0.7 and cfg.loss.w_kd == 0.0 and cfg.freeze_memory_labels

    def test_dump_round_trip(self):
        cfg = PGDRConfig(lr=0.01, variant="PP", freeze_memory_labels=True)
        assert config_from_dict(parse_kv(dump_config(cfg))) == cfg

    def test_seed_env_override(self, files):
        assert load_config(files / "cfg.txt", env={}).seed == 2
        assert load_config(files / "cfg.txt", env={"IPLL_SEED": "9"}).seed == 9
        d, s = load_generation_spec(files / "spec.txt", env={"IPLL_SEED": "5"})
        assert d.seed == s.seed == 5

    def test_unknown_generation_key(self, tmp_path):
        (tmp_path / "s.txt").write_text("colour = red\n")
        with pytest.raises(ConfigError):
            load_generation_spec(tmp_path / "s.txt", env={})


class TestCli:
    def test_gen_run_ablate_report(self, files, monkeypatch, capsys):
        monkeypatch.delenv("IPLL_SEED", raising=False)
        stream = files / "stream.txt"
        assert main(["gen", "--spec", str(files / "spec.txt"), "--out", str(stream)]) == 0
        assert main(["run", "--stream", str(stream), "--config", str(files / "cfg.txt"), "--out-dir", str(files / "run")]) == 0
        for name in ("metrics.csv", "memory.csv", "separation.csv", "losses.csv", "checkpoint.txt", "config.txt"):
            assert (files / "run" / name).exists()
        header = (files / "run" / "metrics.csv").read_text().splitlines()[0]
        assert header == "task,acc_all,acc_new,acc_old,sep_acc,loss_ce,loss_kd,loss_cr"
        args = ["ablate", "--stream", str(stream), "--config", str(files / "cfg.txt"),
                "--variants", "PGDR,NO_MEMORY", "--out-dir", str(files / "abl")]
        assert main(args) == 0
        capsys.readouterr()
        assert main(["report", "--in-dir", str(files / "abl")]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "variant,tasks,avg_incremental_acc,final_acc_all,final_acc_old"
        assert [l.split(",")[0] for l in lines[1:]] == ["NO_MEMORY", "PGDR"]
        assert (files / "abl" / "long.csv").exists()
        # the ablation's PGDR run equals the standalone run
        assert (files / "abl" / "PGDR" / "metrics.csv").read_bytes() == (files / "run" / "metrics.csv").read_bytes()

    def test_errors_return_one(self, files, capsys):
        assert main(["run", "--stream", str(files / "missing.txt"), "--config", str(files / "cfg.txt"),
                     "--out-dir", str(files / "x")]) == 1
        assert "error" in capsys.readouterr().err
        assert main(["ablate", "--stream", str(files / "missing.txt"), "--config", str(files / "cfg.txt"),
                     "--variants", "NOPE", "--out-dir", str(files / "x")]) == 1
        assert main(["report", "--in-dir", str(files)]) == 1

    def test_module_entry(self):
        out = subprocess.run([sys.executable, "-m", "ipll", "--help"], capture_output=True, text=True, check=True)
        assert "gen" in out.stdout and "report" in out.stdout
