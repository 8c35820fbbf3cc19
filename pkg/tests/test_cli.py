import json
import subprocess
import sys

import numpy as np
import pytest

from maskattn import cli
from maskattn.analysis import capture_attention, locality_statistic
from maskattn.errors import DivergenceError
from maskattn.model import load_checkpoint
from maskattn.training import ablation

TINY = """\
# tiny model, a handful of steps
vocab_size = 10
d_model = 8
heads = 2
enc_layers = 2
dec_layers = 1
max_rel = 4
max_len = 12
ordering = C5
task = local
min_len = 4
max_len_task = 8
rule = max
steps = 3
batch_size = 4
warmup = 2
eval_size = 8
seeds = 0, 1, 2
"""


@pytest.fixture
def cfg_file(tmp_path):
    def write(extra="", name="run.cfg"):
        p = tmp_path / name
        p.write_text(TINY + extra)
        return p
    return write


@pytest.fixture
def trained(tmp_path, cfg_file):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg_file()), "--out", str(out)]) == 0
    return out


class TestTrain:
    def test_artifacts(self, trained):
        for name in ("config.cfg", "report.csv", "report.json", "test_set.txt", "checkpoint/manifest.json"):
            assert (trained / name).is_file(), name
        assert json.loads((trained / "report.json").read_text())["steps"] == 3

    def test_config_snapshot_reproduces_run(self, trained, tmp_path):
        again = tmp_path / "again"
        assert cli.main(["train", "--config", str(trained / "config.cfg"), "--out", str(again)]) == 0
        assert (again / "report.csv").read_bytes() == (trained / "report.csv").read_bytes()

    def test_invalid_ordering(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text(TINY.replace("ordering = C5", "ordering = C7"))
        assert cli.main(["train", "--config", str(path)]) == 2
        assert "C5" in capsys.readouterr().err

    def test_unknown_key(self, cfg_file, capsys):
        assert cli.main(["train", "--config", str(cfg_file("learning_rate = 3\n", "bad.cfg"))]) == 2
        assert "learning_rate" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert cli.main(["train", "--config", str(tmp_path / "nope.cfg")]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, cfg_file, tmp_path, capsys):
        # an infinite learning rate turns the weights non-finite after one step
        path = cfg_file("peak_lr = inf\n", "div.cfg")
        assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "d")]) == 1
        assert "step 2" in capsys.readouterr().err

    def test_env_overrides_out_dir(self, cfg_file, tmp_path, monkeypatch):
        monkeypatch.setenv("MASKATTN_OUT_DIR", str(tmp_path / "env_out"))
        assert cli.main(["train", "--config", str(cfg_file())]) == 0
        assert (tmp_path / "env_out" / "report.csv").is_file()

    def test_bad_flag(self):
        assert cli.main(["train"]) == 2
        assert cli.main(["frobnicate"]) == 2


class TestAblate:
    def test_five_presets_and_smans(self, cfg_file, tmp_path):
        out = tmp_path / "abl"
        code = cli.main(["ablate", "--config", str(cfg_file()),
                         "--orderings", "C1,C2,C3,C4,C5", "--seeds", "3", "--smans", "--out", str(out)])
        assert code == 0
        rows = (out / "ablation.csv").read_text().splitlines()
        assert [r.split(",")[0] for r in rows[1:]] == ["C1", "C2", "C3", "C4", "C5", "BASE", "SMAN1", "SMAN2"]
        assert json.loads((out / "ablation.json").read_text())["seeds"] == [0, 1, 2]

    def test_partial_failure_still_exits_zero(self, cfg_file, tmp_path, monkeypatch):
        real = ablation.train

        def flaky(model, task, cfg, seed=0, **kw):
            if seed == 2:
                raise DivergenceError(1, float("inf"))
            return real(model, task, cfg, seed=seed, **kw)

        monkeypatch.setattr(ablation, "train", flaky)
        out = tmp_path / "abl"
        assert cli.main(["ablate", "--config", str(cfg_file()), "--orderings", "C5,C2", "--out", str(out)]) == 0
        for line in (out / "ablation.csv").read_text().splitlines()[1:]:
            assert "partial" in line and line.endswith("failed")

    def test_invalid_ordering(self, cfg_file, capsys):
        assert cli.main(["ablate", "--config", str(cfg_file()), "--orderings", "C5,XX"]) == 2
        assert "C1" in capsys.readouterr().err


class TestAnalyze:
    def test_default_grid_matches_library(self, trained, tmp_path):
        out = tmp_path / "an"
        args = ["analyze", "--checkpoint", str(trained / "checkpoint"),
                "--dataset", str(trained / "test_set.txt"), "--out", str(out)]
        assert cli.main(args) == 0
        rows = json.loads((out / "locality.json").read_text())["rows"]
        # windows {1,2,4} x kinds {DMAN, SAN} x 2 layers
        assert len(rows) == 2 * 3 * 2
        model = load_checkpoint(trained / "checkpoint")
        rec = capture_attention(model, cli.read_dataset(trained / "test_set.txt"))
        for r in rows:
            assert r["value"] == locality_statistic(rec, r["w"], r["layer"], r["kind"])

    def test_window_zero_is_diagonal_mass(self, trained, tmp_path):
        out = tmp_path / "an0"
        assert cli.main(["analyze", "--checkpoint", str(trained / "checkpoint"), "--dataset",
                         str(trained / "test_set.txt"), "--windows", "0", "--layers", "1",
                         "--out", str(out), "--dump-attention"]) == 0
        model = load_checkpoint(trained / "checkpoint")
        rec = capture_attention(model, cli.read_dataset(trained / "test_set.txt"))
        want = np.mean([np.trace(m[(1, "SAN")]) / n for n, m in zip(rec.lengths, rec.mean)])
        rows = json.loads((out / "locality.json").read_text())["rows"]
        san = next(r for r in rows if r["kind"] == "SAN")
        assert san["value"] == pytest.approx(want, abs=1e-12)
        assert any((out / "attention").iterdir())

    def test_corrupt_checkpoint(self, trained, tmp_path):
        blob = trained / "checkpoint" / "params.bin"
        blob.write_bytes(blob.read_bytes()[:100])
        code = cli.main(["analyze", "--checkpoint", str(trained / "checkpoint"),
                         "--dataset", str(trained / "test_set.txt"), "--out", str(tmp_path / "x")])
        assert code == 1

    def test_bad_layer_and_window(self, trained):
        base = ["analyze", "--checkpoint", str(trained / "checkpoint"), "--dataset", str(trained / "test_set.txt")]
        assert cli.main(base + ["--layers", "7"]) == 2
        assert cli.main(base + ["--windows", "-1"]) == 2
        assert cli.main(base + ["--windows", "a,b"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "maskattn", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "analyze" in res.stdout
