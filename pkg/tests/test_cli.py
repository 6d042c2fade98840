import numpy as np
import pytest

from streamseg.cli import main
from streamseg.dataio import read_features, write_features
from streamseg.gradcheck import CheckResult

TINY = ["--set", "model.k=4", "--set", "model.p=2", "--set", "model.d=16",
        "--set", "model.m=4", "--set", "model.n1=1", "--set", "model.n2=1",
        "--set", "model.window=4", "--set", "train.epochs=1"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tiny synthetic dataset plus a one-epoch training run."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    assert main(["synth", "--out", str(data), "--classes", "3", "--width", "6",
                 "--train-videos", "3", "--test-videos", "1",
                 "--t-min", "40", "--t-max", "60", "--dur-min", "8",
                 "--dur-max", "16", "--sigma", "0.3", "--blur", "2",
                 "--seed", "3"]) == 0
    assert main(["train", "--data", str(data), "--out", str(run)] + TINY) == 0
    return data, run


class TestSynth:
    def test_writes_complete_dataset(self, tmp_path):
        out = tmp_path / "ds"
        code = main(["synth", "--out", str(out), "--classes", "3",
                     "--width", "5", "--train-videos", "2", "--test-videos", "1",
                     "--t-min", "30", "--t-max", "40", "--dur-min", "5",
                     "--dur-max", "10", "--seed", "1"])
        assert code == 0
        assert (out / "manifest.txt").exists()
        assert (out / "classes.txt").exists()
        assert (out / "train_000.feat").exists()
        assert (out / "train_000.labels").exists()
        assert (out / "test_000.feat").exists()

    def test_invalid_geometry_is_data_error(self, tmp_path):
        code = main(["synth", "--out", str(tmp_path / "x"), "--t-min", "50",
                     "--t-max", "10"])
        assert code == 2


class TestTrain:
    def test_writes_checkpoints_and_metrics(self, workspace):
        _, run = workspace
        assert (run / "best.ckpt").exists()
        assert (run / "last.ckpt").exists()
        csv = (run / "metrics.csv").read_text().strip().splitlines()
        assert csv[0] == "epoch,split,acc,edit,f1_10,f1_25,f1_50"
        # one epoch, both splits scored
        assert len(csv) == 3

    def test_missing_data_flag_is_usage_error(self):
        assert main(["train"] + TINY) == 1

    def test_nonexistent_data_dir_is_data_error(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none"),
                     "--out", str(tmp_path / "run")] + TINY) == 2

    def test_unknown_override_is_usage_error(self, workspace, tmp_path):
        data, _ = workspace
        assert main(["train", "--data", str(data), "--out", str(tmp_path),
                     "--set", "model.layers=2"]) == 1

    def test_unknown_profile_is_usage_error(self, workspace, tmp_path):
        data, _ = workspace
        assert main(["train", "--data", str(data), "--out", str(tmp_path),
                     "--profile", "youtube"]) == 1

    def test_config_file_pipeline(self, workspace, tmp_path):
        data, _ = workspace
        ini = tmp_path / "run.ini"
        ini.write_text("[model]\nk = 4\np = 2\nd = 16\nm = 4\nn1 = 1\nn2 = 1\n"
                       "window = 4\n\n[train]\nepochs = 1\n")
        out = tmp_path / "run"
        assert main(["train", "--config", str(ini), "--data", str(data),
                     "--out", str(out)]) == 0
        assert (out / "best.ckpt").exists()


class TestEval:
    def test_writes_reports_and_segments(self, workspace, tmp_path, capsys):
        data, run = workspace
        out = tmp_path / "eval"
        code = main(["eval", "--data", str(data), "--out", str(out),
                     "--checkpoint", str(run / "best.ckpt"),
                     "--split", "test"] + TINY)
        assert code == 0
        assert (out / "report.txt").exists()
        csv = (out / "report.csv").read_text().strip().splitlines()
        assert len(csv) == 2 and csv[1].startswith("0,test,")
        assert (out / "test_000.segments.txt").exists()
        printed = capsys.readouterr().out
        assert "Acc" in printed and "F1@0.5" in printed

    def test_missing_checkpoint_is_data_error(self, workspace, tmp_path):
        data, _ = workspace
        assert main(["eval", "--data", str(data), "--out", str(tmp_path),
                     "--checkpoint", str(tmp_path / "none.ckpt")] + TINY) == 2

    def test_mismatched_model_shape_is_data_error(self, workspace, tmp_path):
        data, run = workspace
        # checkpoint was trained at d=16; asking for d=32 cannot restore
        assert main(["eval", "--data", str(data), "--out", str(tmp_path),
                     "--checkpoint", str(run / "best.ckpt"),
                     "--set", "model.k=4", "--set", "model.p=2",
                     "--set", "model.d=32", "--set", "model.m=4",
                     "--set", "model.n1=1", "--set", "model.n2=1",
                     "--set", "model.window=4"]) == 2


class TestInfer:
    def test_labels_cover_every_frame(self, workspace, tmp_path):
        data, run = workspace
        labels_out = tmp_path / "pred.labels"
        code = main(["infer", "--data", str(data),
                     "--checkpoint", str(run / "best.ckpt"),
                     "--features", str(data / "test_000.feat"),
                     "--labels-out", str(labels_out)] + TINY)
        assert code == 0
        total = read_features(data / "test_000.feat").shape[0]
        lines = labels_out.read_text().strip().splitlines()
        assert len(lines) == total
        names = (data / "classes.txt").read_text().split()
        assert all(0 <= int(v) < len(names) for v in lines)
        stats = (str(labels_out) + ".stats.txt")
        stats_text = open(stats).read()
        assert "mean_ms" in stats_text and "clips" in stats_text

    def test_streaming_output_is_causal(self, workspace, tmp_path):
        # two inputs identical up to frame 16 (two 8-frame clips) and
        # different afterwards must emit identical labels for those clips
        data, run = workspace
        base = read_features(data / "test_000.feat")[:24]
        altered = base.copy()
        altered[16:] += 10.0
        a_path, b_path = tmp_path / "a.feat", tmp_path / "b.feat"
        write_features(a_path, base)
        write_features(b_path, altered)
        outs = []
        for feat in (a_path, b_path):
            out = tmp_path / (feat.stem + ".labels")
            assert main(["infer", "--data", str(data),
                         "--checkpoint", str(run / "best.ckpt"),
                         "--features", str(feat),
                         "--labels-out", str(out)] + TINY) == 0
            outs.append(out.read_text().splitlines())
        assert outs[0][:16] == outs[1][:16]
        assert outs[0][16:] != outs[1][16:]

    def test_bad_magic_is_data_error(self, workspace, tmp_path):
        data, run = workspace
        bad = tmp_path / "bad.feat"
        bad.write_bytes(b"JUNK" + b"\x00" * 64)
        assert main(["infer", "--data", str(data),
                     "--checkpoint", str(run / "best.ckpt"),
                     "--features", str(bad),
                     "--labels-out", str(tmp_path / "x.labels")] + TINY) == 2

    def test_truncated_stream_is_data_error(self, workspace, tmp_path):
        data, run = workspace
        raw = (data / "test_000.feat").read_bytes()
        cut = tmp_path / "cut.feat"
        cut.write_bytes(raw[:len(raw) // 2])
        assert main(["infer", "--data", str(data),
                     "--checkpoint", str(run / "best.ckpt"),
                     "--features", str(cut),
                     "--labels-out", str(tmp_path / "x.labels")] + TINY) == 2


class TestGradcheckCommand:
    def test_small_run_passes(self, capsys):
        assert main(["gradcheck", "--cases", "2", "--seed", "0"]) == 0
        table = capsys.readouterr().out
        assert "matmul" in table and "pass" in table

    def test_failure_exits_3(self, monkeypatch, capsys):
        import streamseg.cli as cli_mod
        failing = [CheckResult(name="matmul", cases=1, max_rel_err=1.0,
                               seconds=0.0)]
        monkeypatch.setattr(cli_mod.gradcheck_mod, "run_all",
                            lambda cases, seed: failing)
        assert main(["gradcheck", "--cases", "1"]) == 3


class TestUsage:
    def test_no_subcommand_is_usage_error(self):
        assert main([]) == 1

    def test_unknown_subcommand_is_usage_error(self):
        assert main(["demolish"]) == 1
