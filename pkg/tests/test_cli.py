import json
import os

import numpy as np
import pytest

from stssm import tensor
from stssm.cli import main
from stssm.data import gen_dataset
from stssm.model import load_checkpoint


def write_config(path, model=None, train=None, data=None):
    payload = {}
    if model is not None:
        payload["model"] = model
    if train is not None:
        payload["train"] = train
    if data is not None:
        payload["data"] = data
    path.write_text(json.dumps(payload))
    return str(path)


TOY_MODEL = {
    "blocks": 1, "dim": 8, "state_dim": 2, "tubelet": [2, 8, 8], "frames": 4,
    "height": 16, "width": 16, "channels": 1, "num_classes": 4,
    "delta_rank": 2, "pe_mode": "learnable", "pe_init": "random",
    "backward": "st-reverse", "class_token": True,
}
TOY_TRAIN = {"epochs": 2, "batch_size": 8, "warmup_epochs": 1, "seed": 3}
TOY_DATA = {"n_train": 16, "n_eval": 8, "frames": 4, "size": 16, "noise_std": 0.1}


class TestCheck:
    def test_exit_zero_and_report(self, tmp_path, capsys):
        rc = main(["check", "--seed", "0", "--out", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "checks passed" in out
        report = (tmp_path / "check_report.txt").read_text()
        assert report.count("PASS") >= 15
        assert "FAIL" not in report

    def test_deterministic_artifact(self, tmp_path):
        main(["check", "--seed", "7", "--out", str(tmp_path / "a")])
        main(["check", "--seed", "7", "--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "check_report.txt").read_bytes()
        b = (tmp_path / "b" / "check_report.txt").read_bytes()
        assert a == b


class TestFlops:
    def test_paper_scale_report(self, capsys):
        rc = main(["flops", "--config", "configs/base16.json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert 27.4e9 <= payload["flops_total"] <= 41.0e9
        assert payload["params_total"] == pytest.approx(26.3e6, rel=0.01)

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "bad.json", model={"blocks": 2, "hidden_dim": 4})
        rc = main(["flops", "--config", cfg])
        assert rc == 2
        assert "unknown model config keys" in capsys.readouterr().err

    def test_unknown_section_rejected(self, tmp_path, capsys):
        path = tmp_path / "bad2.json"
        path.write_text(json.dumps({"model": {}, "optimizer": {}}))
        rc = main(["flops", "--config", str(path)])
        assert rc == 2

    def test_missing_file(self, capsys):
        assert main(["flops", "--config", "does-not-exist.json"]) == 2

    def test_bad_flags_exit_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["flops", "--no-such-flag"])
        assert exc.value.code == 2


class TestBench:
    def test_sweep_csv(self, tmp_path, capsys):
        rc = main(["bench", "--sweep", "16,32,64,256", "--dim", "8", "--state", "2",
                   "--trials", "5", "--out", str(tmp_path)])
        assert rc == 0
        csv_text = (tmp_path / "scaling.csv").read_text()
        assert csv_text.splitlines()[0] == "n,median_ns_scan,median_ns_attn"
        assert len(csv_text.strip().splitlines()) == 5

    def test_compare_kernels(self, tmp_path):
        rc = main(["bench", "--sweep", "16,32,64,256", "--dim", "8", "--state", "2",
                   "--trials", "5", "--out", str(tmp_path), "--compare-kernels"])
        assert rc == 0
        assert (tmp_path / "kernel_compare.csv").exists()


class TestTrainEvalDelta:
    @pytest.fixture(scope="class")
    def run_dir(self, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("run")
        cfg = write_config(tmp / "toy.json", model=TOY_MODEL, train=TOY_TRAIN,
                           data=TOY_DATA)
        out = tmp / "out"
        rc = main(["train", "--config", cfg, "--out", str(out)])
        assert rc == 0
        return out

    def test_train_writes_artifacts(self, run_dir):
        assert (run_dir / "manifest.txt").exists()
        assert (run_dir / "config.json").exists()
        metrics = (run_dir / "metrics.csv").read_text().strip().splitlines()
        assert metrics[0] == "epoch,loss,acc"
        assert len(metrics) == 1 + TOY_TRAIN["epochs"]

    def test_eval_runs_all_strategies(self, run_dir, capsys):
        for strategy in ("sequential", "interleaved", "pairwise", "blockwise"):
            rc = main(["eval", "--weights", str(run_dir), "--strategy", strategy])
            assert rc == 0
            out = capsys.readouterr().out
            assert f"strategy={strategy}" in out

    def test_eval_on_saved_dataset(self, run_dir, tmp_path, capsys):
        from stssm.data import save_dataset
        samples = gen_dataset(6, frames=4, size=16, seed=5)
        save_dataset(tmp_path / "ds", samples)
        rc = main(["eval", "--weights", str(run_dir), "--data", str(tmp_path / "ds")])
        assert rc == 0
        assert "n=6" in capsys.readouterr().out

    def test_delta_export(self, run_dir, tmp_path, capsys):
        clip = gen_dataset(1, frames=4, size=16, seed=6)[0].clip
        clip_path = tmp_path / "clip.vmtb"
        tensor.save_tensor(clip_path, tensor.from_array(clip.data))
        out = tmp_path / "delta"
        rc = main(["delta", "--weights", str(run_dir), "--clip", str(clip_path),
                   "--out", str(out)])
        assert rc == 0
        csv_lines = (out / "delta.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "layer,t,h,w,value"
        pgms = sorted(p for p in os.listdir(out) if p.endswith(".pgm"))
        assert len(pgms) == TOY_MODEL["blocks"] * (TOY_DATA["frames"] // TOY_MODEL["tubelet"][0])

    def test_train_deterministic_across_runs(self, tmp_path):
        cfg = write_config(tmp_path / "toy.json", model=TOY_MODEL, train=TOY_TRAIN,
                           data=TOY_DATA)
        main(["train", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["train", "--config", cfg, "--out", str(tmp_path / "b")])
        _, wa = load_checkpoint(tmp_path / "a")
        _, wb = load_checkpoint(tmp_path / "b")
        assert all(wa[k].tobytes() == wb[k].tobytes() for k in wa)
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
            (tmp_path / "b" / "metrics.csv").read_bytes()
