import numpy as np
import pytest

from stiefelopt.cli import main
from stiefelopt.stiefel import default_orth_tol
from stiefelopt.weightstore import load_weights, save_weights


TINY = [
    "--dataset", "synthetic", "--subset", "40", "--batch-size", "16",
    "--token-dim", "10", "--seq-len", "4", "--n-heads", "2",
    "--n-layers", "1", "--precision", "double", "--seed", "1",
]


def read_csv_rows(path):
    lines = path.read_text().strip().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


def strip_timing(path):
    header, rows = read_csv_rows(path)
    keep = [i for i, name in enumerate(header) if name != "wall_seconds"]
    return [[row[i] for i in keep] for row in rows]


class TestTrain:
    def test_five_epoch_run_artifacts(self, tmp_path):
        out = tmp_path / "run"
        assert main(["train", *TINY, "--epochs", "5", "--output-dir", str(out)]) == 0

        header, rows = read_csv_rows(out / "loss.csv")
        assert header == ["epoch", "mean_train_loss", "max_orth_drift",
                          "wall_seconds"]
        assert len(rows) == 5
        assert [r[0] for r in rows] == ["1", "2", "3", "4", "5"]
        drift = [float(r[2]) for r in rows]
        assert max(drift) <= default_orth_tol(np.float64)
        assert all(d >= 0.0 for d in drift)

        assert (out / "loss.png").stat().st_size > 0
        assert (out / "config.echo").exists()
        echo = (out / "config.echo").read_text()
        assert "optimizer = adam" in echo and "seed = 1" in echo
        assert len(load_weights(str(out / "weights.bin"))) > 0

    def test_zero_epochs_writes_initialization(self, tmp_path):
        out = tmp_path / "zero"
        assert main(["train", *TINY, "--epochs", "0", "--output-dir", str(out)]) == 0
        header, rows = read_csv_rows(out / "loss.csv")
        assert rows == []

        stored = dict(load_weights(str(out / "weights.bin")))
        from stiefelopt.network import init_params
        from stiefelopt.training import RunConfig, _INIT_STREAM

        config = RunConfig(seed=1, precision="double", token_dim=10, seq_len=4,
                           n_heads=2, n_layers=1)
        fresh = init_params(config.transformer_config(),
                            np.random.default_rng([1, _INIT_STREAM]),
                            dtype=np.float64)
        for name, array in zip(fresh.names(), fresh.to_arrays()):
            np.testing.assert_array_equal(stored[name], array)

    def test_rerun_is_deterministic(self, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            assert main(["train", *TINY, "--epochs", "3",
                         "--output-dir", str(out)]) == 0
            outs.append(out)
        assert strip_timing(outs[0] / "loss.csv") == strip_timing(outs[1] / "loss.csv")
        assert (outs[0] / "weights.bin").read_bytes() == \
            (outs[1] / "weights.bin").read_bytes()

    def test_config_file_with_flag_override(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(
            "optimizer = momentum\n"
            "epochs = 1\n"
            "subset = 30          # trailing comment\n"
            "batch_size = 15\n"
            "token_dim = 10\n"
            "seq_len = 4\n"
            "n_heads = 2\n"
            "n_layers = 1\n"
            "precision = double\n"
            "constrain = false\n"
        )
        out = tmp_path / "cfg_run"
        assert main(["train", "--config", str(config), "--optimizer", "gradient",
                     "--output-dir", str(out)]) == 0
        echo = (out / "config.echo").read_text()
        assert "optimizer = gradient" in echo     # flag beats file
        assert "constrain = False" in echo
        assert "subset = 30" in echo

    def test_output_dir_environment_default(self, tmp_path, monkeypatch):
        target = tmp_path / "from_env"
        monkeypatch.setenv("STIEFELOPT_OUTPUT_DIR", str(target))
        assert main(["train", *TINY, "--epochs", "1"]) == 0
        assert (target / "loss.csv").exists()

    def test_held_out_evaluation_flag(self, tmp_path):
        out = tmp_path / "eval_run"
        assert main(["train", *TINY, "--epochs", "2", "--evaluate",
                     "--output-dir", str(out)]) == 0
        header, rows = read_csv_rows(out / "eval.csv")
        assert header == ["mean_eval_loss", "accuracy"]
        loss, accuracy = float(rows[0][0]), float(rows[0][1])
        assert np.isfinite(loss) and 0.0 <= accuracy <= 1.0

    def test_mnist_format_end_to_end(self, tmp_path):
        import struct

        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, (30, 28, 28)).astype(np.uint8)
        labels = rng.integers(0, 10, 30).astype(np.uint8)
        images_path = tmp_path / "images.idx"
        labels_path = tmp_path / "labels.idx"
        images_path.write_bytes(struct.pack(">iiii", 2051, 30, 28, 28)
                                + pixels.tobytes())
        labels_path.write_bytes(struct.pack(">ii", 2049, 30) + labels.tobytes())

        out = tmp_path / "mnist_run"
        assert main(["train", "--dataset", "mnist",
                     "--mnist-images", str(images_path),
                     "--mnist-labels", str(labels_path),
                     "--subset", "20", "--batch-size", "10", "--epochs", "2",
                     "--n-layers", "1", "--output-dir", str(out)]) == 0
        _, rows = read_csv_rows(out / "loss.csv")
        assert len(rows) == 2
        assert all(np.isfinite(float(r[1])) for r in rows)

    def test_missing_mnist_paths_fail_with_stage(self, tmp_path, capsys):
        code = main(["train", "--dataset", "mnist", "--epochs", "1",
                     "--output-dir", str(tmp_path / "x")])
        assert code == 1
        err = capsys.readouterr().err
        assert "failed during load-data" in err

    def test_unknown_config_key_fails(self, tmp_path, capsys):
        config = tmp_path / "bad.cfg"
        config.write_text("learning_rate_schedule = cosine\n")
        assert main(["train", "--config", str(config)]) == 1
        assert "failed during resolve-config" in capsys.readouterr().err


class TestCompare:
    def test_four_scenarios_merged(self, tmp_path):
        out = tmp_path / "cmp"
        assert main(["compare", *TINY, "--epochs", "2",
                     "--output-dir", str(out)]) == 0
        header, rows = read_csv_rows(out / "comparison.csv")
        assert header == ["epoch", "adam", "adam_stiefel", "gradient_stiefel",
                          "momentum_stiefel"]
        assert [r[0] for r in rows] == ["1", "2", "update_seconds"]
        for row in rows:
            assert len(row) == 5
        for value in rows[-1][1:]:
            assert float(value) >= 0.0
        assert (out / "comparison.png").stat().st_size > 0

    def test_single_epoch_curves(self, tmp_path):
        out = tmp_path / "cmp1"
        assert main(["compare", *TINY, "--epochs", "1",
                     "--output-dir", str(out)]) == 0
        _, rows = read_csv_rows(out / "comparison.csv")
        assert [r[0] for r in rows] == ["1", "update_seconds"]


class TestVerifyCommand:
    def test_double_passes(self, capsys):
        assert main(["verify", "--precision", "double", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "qr_orthogonality" in out

    def test_single_subset_passes(self, capsys):
        assert main(["verify", "--precision", "single", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        # double-only identities are excluded from the single-precision run
        assert "metric_duality" not in out

    def test_corrupted_sections_fail_loudly(self, capsys):
        assert main(["verify", "--precision", "single", "--seed", "0",
                     "--corrupt-sections"]) == 1
        out = capsys.readouterr().out
        assert any(line.startswith("FAIL") and "preservation" in line
                   for line in out.splitlines())

    def test_disabling_reskew_alone_is_harmless(self, capsys):
        # The second moment of a skew block is symmetric, so the computed
        # velocity is already skew to roundoff; the re-skew is pure hygiene.
        assert main(["verify", "--precision", "double", "--seed", "0",
                     "--disable-velocity-reskew"]) == 0
        assert "FAIL" not in capsys.readouterr().out


class TestWeightStore:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        entries = [
            ("layer0/head0/wq", rng.standard_normal((49, 7)).astype(np.float32)),
            ("classifier", rng.standard_normal((10, 49))),
            ("bias", rng.standard_normal(49)),
        ]
        path = tmp_path / "weights.bin"
        save_weights(str(path), entries)
        loaded = load_weights(str(path))
        assert [name for name, _ in loaded] == [name for name, _ in entries]
        for (_, original), (_, restored) in zip(entries, loaded):
            assert original.dtype == restored.dtype
            np.testing.assert_array_equal(original, restored)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a weight container")
        with pytest.raises(ValueError):
            load_weights(str(path))

    def test_header_layout_is_little_endian(self, tmp_path):
        path = tmp_path / "one.bin"
        save_weights(str(path), [("w", np.zeros((2, 3), dtype=np.float32))])
        raw = path.read_bytes()
        assert raw[:4] == b"SOW1"
        assert int.from_bytes(raw[4:8], "little") == 1   # entry count
        assert int.from_bytes(raw[8:10], "little") == 1  # name length
        assert raw[10:11] == b"w"
