import json

import numpy as np
import pytest

from qrsim.cli import main
from qrsim.montecarlo import read_sweep_csv
from qrsim.nn import Mlp
from qrsim.ppo import save_checkpoint


def write_config(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f)
    return str(path)


def base_params():
    return {"n_segments": 4, "L0_km": 20.0, "tau_c_ms": 1.0}


class TestSweepCommand:
    def sweep_doc(self, out, c_values=(1, 2, 3, 4, 5), T=10_000, M=10):
        return {
            "params": base_params(),
            "seed": 7,
            "output": out,
            "sweep": {"c_values": list(c_values), "T": T, "M": M},
        }

    def test_row_count_contract(self, tmp_path):
        out = tmp_path / "sweep.csv"
        cfg = write_config(tmp_path / "cfg.json", self.sweep_doc(str(out)))
        assert main(["sweep", "--config", cfg]) == 0
        rows = read_sweep_csv(out)
        assert [r["cutoff"] for r in rows] == [1, 2, 3, 4, 5]

    def test_duplicate_cutoffs_duplicate_rows(self, tmp_path):
        out = tmp_path / "sweep.csv"
        cfg = write_config(
            tmp_path / "cfg.json", self.sweep_doc(str(out), c_values=[2, 2, "none"], T=2000, M=4)
        )
        main(["sweep", "--config", cfg])
        lines = out.read_text().splitlines()
        assert lines[1] == lines[2]
        assert lines[3].startswith("none,")

    def test_reruns_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        cfg = write_config(
            tmp_path / "cfg.json", self.sweep_doc(str(out1), c_values=[1, "none"], T=3000, M=5)
        )
        main(["sweep", "--config", cfg])
        main(["sweep", "--config", cfg, "--out", str(out2)])
        assert out1.read_bytes() == out2.read_bytes()

    def test_worker_flag_does_not_change_output(self, tmp_path):
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        cfg = write_config(
            tmp_path / "cfg.json", self.sweep_doc(str(out1), c_values=[1, 3], T=3000, M=6)
        )
        main(["sweep", "--config", cfg, "--workers", "1"])
        main(["sweep", "--config", cfg, "--workers", "4", "--out", str(out2)])
        assert out1.read_bytes() == out2.read_bytes()

    def test_effective_config_reproduces_run(self, tmp_path):
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        cfg = write_config(
            tmp_path / "cfg.json", self.sweep_doc(str(out1), c_values=[2, "none"], T=2000, M=4)
        )
        main(["sweep", "--config", cfg])
        echo = json.loads((tmp_path / "a.csv.config.json").read_text())
        assert echo["seed"] == 7 and echo["params"]["L_att_km"] == 22.0
        echo_cfg = write_config(tmp_path / "echo.json", echo)
        main(["sweep", "--config", echo_cfg, "--out", str(out2)])
        assert out1.read_bytes() == out2.read_bytes()


class TestTrainEvalCensusCommands:
    def train_doc(self, out_dir, epochs=2):
        return {
            "params": base_params(),
            "seed": 3,
            "workers": 1,
            "output": str(out_dir),
            "train": {
                "L": 50,
                "N": 2,
                "epochs": epochs,
                "n_pi": 5,
                "n_v": 5,
                "hidden": [8, 8],
                "checkpoint_every": 1,
            },
        }

    def test_train_smoke_and_resume(self, tmp_path, capsys):
        run_dir = tmp_path / "run"
        cfg = write_config(tmp_path / "t.json", self.train_doc(run_dir, epochs=1))
        assert main(["train", "--config", cfg]) == 0
        assert "final checkpoint" in capsys.readouterr().out
        log = (run_dir / "epoch_log.csv").read_text().splitlines()
        assert len(log) == 2
        cfg2 = write_config(tmp_path / "t2.json", self.train_doc(run_dir, epochs=3))
        assert main(["train", "--config", cfg2, "--resume"]) == 0
        log = (run_dir / "epoch_log.csv").read_text().splitlines()
        assert [ln.split(",")[0] for ln in log[1:]] == ["0", "1", "2"]

    def test_eval_json_fields_and_ratios(self, tmp_path, capsys):
        ckpt = tmp_path / "net.json"
        save_checkpoint(ckpt, Mlp.init((10, 8, 8, 9), seed=0, scale=0.0), None, 0, "h")
        sweep_out = tmp_path / "sweep.csv"
        sweep_cfg = write_config(
            tmp_path / "s.json",
            {
                "params": base_params(),
                "seed": 1,
                "output": str(sweep_out),
                "sweep": {"c_values": [1, 5, "none"], "T": 2000, "M": 4},
            },
        )
        main(["sweep", "--config", sweep_cfg])
        capsys.readouterr()  # drop the sweep command's status line
        out = tmp_path / "eval.json"
        eval_cfg = write_config(
            tmp_path / "e.json",
            {
                "params": base_params(),
                "seed": 2,
                "eval": {
                    "checkpoint": str(ckpt),
                    "T": 500,
                    "sweep_csv": str(sweep_out),
                },
                "output": str(out),
            },
        )
        assert main(["eval", "--config", eval_cfg]) == 0
        doc = json.loads(out.read_text())
        assert doc == json.loads(capsys.readouterr().out)
        assert doc["M"] == 100  # default applied when omitted
        assert doc["T"] == 500
        assert np.isfinite(doc["rate_per_s"]) and np.isfinite(doc["ci3sigma"])
        rows = read_sweep_csv(sweep_out)
        none_rate = next(r["rate_per_s"] for r in rows if r["cutoff"] is None)
        best = max(r["rate_per_s"] for r in rows)
        assert doc["ratios"]["vs_no_cutoff"] == pytest.approx(doc["rate_per_s"] / none_rate, rel=1e-12)
        assert doc["ratios"]["vs_benchmark"] == pytest.approx(doc["rate_per_s"] / best, rel=1e-12)

    def test_census_command(self, tmp_path):
        ckpt = tmp_path / "net.json"
        save_checkpoint(ckpt, Mlp.init((10, 8, 8, 9), seed=1, scale=0.5), None, 0, "h")
        out = tmp_path / "census.csv"
        cfg = write_config(
            tmp_path / "c.json",
            {
                "params": base_params(),
                "seed": 4,
                "census": {"checkpoint": str(ckpt), "T": 400},
                "output": str(out),
            },
        )
        assert main(["census", "--config", cfg]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "state,action,count"
        assert sum(int(ln.rsplit(",", 1)[1]) for ln in lines[1:]) == 400


class TestValidation:
    def test_mode_block_mismatch(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json",
            {"params": base_params(), "sweep": {"c_values": [1], "T": 10, "M": 2}},
        )
        assert main(["train", "--config", cfg]) == 1
        assert "sweep" in capsys.readouterr().err

    def test_two_mode_blocks_rejected(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json",
            {
                "params": base_params(),
                "sweep": {"c_values": [1], "T": 10, "M": 2},
                "census": {"checkpoint": "x", "T": 10},
            },
        )
        assert main(["sweep", "--config", cfg]) == 1
        assert "exactly one" in capsys.readouterr().err

    def test_missing_output_is_an_error(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json",
            {"params": base_params(), "sweep": {"c_values": [1], "T": 10, "M": 2}},
        )
        assert main(["sweep", "--config", cfg]) == 1
        assert "output" in capsys.readouterr().err

    def test_unknown_param_field_rejected(self, tmp_path, capsys):
        doc = {"params": dict(base_params(), bogus=1), "output": "x.csv",
               "sweep": {"c_values": [1], "T": 10, "M": 2}}
        cfg = write_config(tmp_path / "c.json", doc)
        assert main(["sweep", "--config", cfg]) == 1
        assert "bogus" in capsys.readouterr().err