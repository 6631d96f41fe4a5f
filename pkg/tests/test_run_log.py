"""반복 로그 CSV와 체크포인트 파일"""

import math
import struct

import numpy as np
import pytest

from model_config import LayerSpec, ModelConfig
from network import Network
from newton_solver import LOG_COLUMNS
from run_log import (LOG_SCHEMA_LINE, MAGIC, Checkpoint, CheckpointError, IterationLog,
                     ModelMismatchError, load_checkpoint, load_model, read_log, save_checkpoint)


def _row(k: int, test_acc: float = 0.5) -> dict:
    return {"iter": k, "f": 1.0 / k, "train_acc": 0.25, "test_acc": test_acc,
            "lambda": 1.5 ** -k, "cg_iters": 3 * k, "alpha": 1.0, "seconds": 0.0}


@pytest.fixture
def checkpoint(tiny_network) -> Checkpoint:
    theta = np.random.default_rng(0).standard_normal(tiny_network.num_params)
    rng = np.random.default_rng(7)
    rng.random(3)
    return Checkpoint(iteration=4, lam=2.0 / 3.0, f=0.123456789, segment_sizes=tiny_network.layout.segment_sizes,
                      theta=theta, rng_state=rng.bit_generator.state)


class TestIterationLog:

    def test_header(self, tmp_path):
        path = tmp_path / "log.csv"
        IterationLog(str(path))
        lines = path.read_text().splitlines()
        assert lines == [LOG_SCHEMA_LINE, ",".join(LOG_COLUMNS)]

    def test_rows_full_precision(self, tmp_path):
        path = tmp_path / "log.csv"
        log = IterationLog(str(path))
        for k in (1, 2, 3):
            log.append(_row(k))
        frame = read_log(str(path))
        assert list(frame.columns) == LOG_COLUMNS
        assert frame["iter"].tolist() == [1, 2, 3]
        assert frame["f"].tolist() == [1.0, 0.5, 1.0 / 3.0]
        assert frame["lambda"].iloc[2] == 1.5 ** -3

    def test_missing_test_accuracy(self, tmp_path):
        path = tmp_path / "log.csv"
        IterationLog(str(path)).append(_row(1, float("nan")))
        assert math.isnan(read_log(str(path))["test_acc"].iloc[0])

    def test_resume_drops_later_rows(self, tmp_path):
        path = tmp_path / "log.csv"
        log = IterationLog(str(path))
        for k in (1, 2, 3, 4):
            log.append(_row(k))
        resumed = IterationLog(str(path), resume_iteration=2)
        resumed.append(_row(3))
        assert read_log(str(path))["iter"].tolist() == [1, 2, 3]

    def test_not_a_log(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(CheckpointError):
            read_log(str(path))


class TestCheckpoint:

    def test_round_trip(self, tmp_path, checkpoint):
        path = str(tmp_path / "ckpt.bin")
        save_checkpoint(path, checkpoint)
        loaded = load_checkpoint(path)
        assert (loaded.iteration, loaded.lam, loaded.f) == (4, 2.0 / 3.0, 0.123456789)
        assert loaded.segment_sizes == checkpoint.segment_sizes
        np.testing.assert_array_equal(loaded.theta, checkpoint.theta)

        restored = np.random.default_rng(0)
        restored.bit_generator.state = loaded.rng_state
        original = np.random.default_rng(0)
        original.bit_generator.state = checkpoint.rng_state
        np.testing.assert_array_equal(restored.random(5), original.random(5))

    def test_no_temp_file_left(self, tmp_path, checkpoint):
        save_checkpoint(str(tmp_path / "ckpt.bin"), checkpoint)
        assert [p.name for p in tmp_path.iterdir()] == ["ckpt.bin"]

    def test_layout(self, tmp_path, checkpoint):
        path = tmp_path / "ckpt.bin"
        save_checkpoint(str(path), checkpoint)
        data = path.read_bytes()
        assert data[:8] == MAGIC
        version, iteration = struct.unpack("<II", data[8:16])
        assert (version, iteration) == (1, 4)
        assert struct.unpack("<d", data[-8:])[0] == checkpoint.theta[-1]

    def test_truncated(self, tmp_path, checkpoint):
        path = tmp_path / "ckpt.bin"
        save_checkpoint(str(path), checkpoint)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(str(path))

    def test_trailing_bytes(self, tmp_path, checkpoint):
        path = tmp_path / "ckpt.bin"
        save_checkpoint(str(path), checkpoint)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(str(path))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "ckpt.bin"
        path.write_bytes(b"NOTACKPT" + bytes(40))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(str(path))

    def test_theta_length_checked(self, tmp_path, checkpoint):
        checkpoint.theta = checkpoint.theta[:-1]
        with pytest.raises(CheckpointError):
            save_checkpoint(str(tmp_path / "ckpt.bin"), checkpoint)


class TestLoadModel:

    def test_matching_config(self, tmp_path, checkpoint, tiny_network):
        path = str(tmp_path / "model.bin")
        save_checkpoint(path, checkpoint)
        np.testing.assert_array_equal(load_model(path, tiny_network), checkpoint.theta)

    def test_mismatch_names_layer(self, tmp_path, checkpoint):
        path = str(tmp_path / "model.bin")
        save_checkpoint(path, checkpoint)
        wider = Network(ModelConfig(input_dims=(8, 8, 2), layers=(LayerSpec.conv(3, 4, pool=2), LayerSpec.fc(5))))
        with pytest.raises(ModelMismatchError, match="layer 2"):
            load_model(path, wider)

    def test_layer_count_mismatch(self, tmp_path, checkpoint):
        path = str(tmp_path / "model.bin")
        save_checkpoint(path, checkpoint)
        deeper = Network(ModelConfig(input_dims=(8, 8, 2),
                                     layers=(LayerSpec.conv(3, 4, pool=2), LayerSpec.fc(3), LayerSpec.fc(3))))
        with pytest.raises(ModelMismatchError):
            load_model(path, deeper)
