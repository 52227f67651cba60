import csv
import json
import struct
import zlib

import numpy as np
import pytest

from braillespeech.errors import CheckpointMismatch, ConfigError, CorruptFile, VersionMismatch
from braillespeech.pipeline_cli.checkpoint import decode, encode, restore
from braillespeech.pipeline_cli.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main, parse_grid
from braillespeech.pipeline_cli.config import JointConfig, RunConfig, dump_config, parse_config
from braillespeech.pipeline_cli.pipeline import StrategyResult, epochs_to_threshold
from braillespeech.tensor_core import Tensor
from braillespeech.tensor_core.layers import ParamStore

TINY_TOML = """
[i2t]
epochs = 1
batch_size = 8

[t2a]
epochs = 1
batch_size = 4

[joint]
epochs = 1
batch_size = 8
audio_batch_size = 2
"""


def test_checkpoint_round_trip():
    tensors = {"b.w": np.arange(6, dtype=np.float32).reshape(2, 3), "a.s": np.float32(2.5) * np.ones(()),
               "c.x": np.zeros((0, 4), np.float32)}
    blob = encode(tensors)
    assert blob[:4] == b"BIPC"
    out = decode(blob)
    assert sorted(out) == ["a.s", "b.w", "c.x"]
    for k in tensors:
        assert out[k].shape == tensors[k].shape and np.array_equal(out[k], tensors[k])
    assert encode(out) == blob


def test_checkpoint_corruption():
    blob = encode({"w": np.ones(3, np.float32)})
    with pytest.raises(CorruptFile):
        decode(blob[:10])
    flipped = bytearray(blob)
    flipped[-8] ^= 1
    with pytest.raises(CorruptFile):
        decode(bytes(flipped))
    body = b"BIPC" + struct.pack("<II", 9, 0)
    with pytest.raises(VersionMismatch):
        decode(body + struct.pack("<I", zlib.crc32(body)))
    body = b"NOPE" + struct.pack("<II", 1, 0)
    with pytest.raises(CorruptFile):
        decode(body + struct.pack("<I", zlib.crc32(body)))


def test_restore_checks_names_and_shapes():
    store = ParamStore()
    store["m.w"] = Tensor(np.zeros((2, 2), np.float32), requires_grad=True)
    restore(store, {"m.w": np.ones((2, 2), np.float32)}, "m.")
    assert store["m.w"].data.sum() == 4
    with pytest.raises(CheckpointMismatch):
        restore(store, {"m.w": np.ones(3, np.float32)}, "m.")
    with pytest.raises(CheckpointMismatch):
        restore(store, {"m.v": np.ones((2, 2), np.float32)}, "m.")
    with pytest.raises(CheckpointMismatch):
        restore(store, {"other.w": np.ones(1, np.float32)}, "m.")


def test_config_parse_and_dump():
    cfg = parse_config(TINY_TOML)
    assert cfg.i2t.epochs == 1 and cfg.joint.audio_batch_size == 2
    assert cfg.t2a.lr == RunConfig().t2a.lr
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config("[joint]\nlr = 1\n").joint.lr == 1.0


@pytest.mark.parametrize("text", ["[i2t]\nbogus = 1\n", "[extra]\n", "[i2t]\nepochs = 'x'\n",
                                  "[joint]\nfreeze_i2t = 1\n", "[i2t]\nepochs = true\n", "not toml ="])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_lambda_validation():
    JointConfig.with_lambda1(0.3).validate()
    with pytest.raises(ConfigError):
        JointConfig(lambda1=0.5, lambda2=0.6).validate()
    for endpoint in (0.0, 1.0):
        with pytest.raises(ConfigError):
            JointConfig.with_lambda1(endpoint).validate()
        JointConfig.with_lambda1(endpoint).validate(force=True)


def test_parse_grid():
    assert parse_grid("0.1..0.9", 0.2) == [0.1, 0.3, 0.5, 0.7, 0.9]
    assert parse_grid("0.3,0.5") == [0.3, 0.5]
    with pytest.raises(ConfigError):
        parse_grid("0.1..0.9")


def test_epochs_to_threshold():
    assert epochs_to_threshold([5.0, 3.0, 2.0, 2.5], 2.0) == 3
    assert epochs_to_threshold([5.0, 3.0], 1.0) is None
    assert epochs_to_threshold([], 1.0) is None
    win = StrategyResult(0, 2.0, 2, 5, [], [])
    assert win.staged_wins
    assert StrategyResult(0, 2.0, 5, 5, [], []).staged_wins
    assert not StrategyResult(0, 2.0, 6, 5, [], []).staged_wins
    assert StrategyResult(0, 2.0, 6, None, [], []).staged_wins
    assert not StrategyResult(0, 2.0, None, 3, [], []).staged_wins


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.toml").write_text(TINY_TOML)
    assert main(["gen-data", "--out", str(root / "d"), "--numbers", "6", "--spells", "10", "--puncts", "4"]) == EXIT_OK
    cfg = str(root / "tiny.toml")
    assert main(["pretrain-i2t", "--data", str(root / "d"), "--config", cfg, "--out", str(root / "i2t")]) == EXIT_OK
    assert main(["pretrain-t2a", "--data", str(root / "d"), "--config", cfg, "--out", str(root / "t2a")]) == EXIT_OK
    assert main(["finetune", "--data", str(root / "d"), "--config", cfg, "--i2t", str(root / "i2t"),
                 "--t2a", str(root / "t2a"), "--out", str(root / "ft")]) == EXIT_OK
    return root


def test_run_directory_contents(workspace):
    names = {p.name for p in (workspace / "ft").iterdir()}
    assert {"model.bipc", "index.tsv", "config.toml", "finetune_curve.csv", "finetune_batches.csv"} <= names
    resolved = parse_config((workspace / "ft" / "config.toml").read_text())
    assert resolved.joint.lambda1 + resolved.joint.lambda2 == 1.0
    with open(workspace / "ft" / "finetune_batches.csv") as fh:
        for row in csv.DictReader(fh):
            expected = 0.5 * float(row["loss_it"]) + 0.5 * float(row["loss_ta"])
            assert float(row["loss_total"]) == pytest.approx(expected, rel=1e-5)


def test_infer_writes_same_wav_twice(workspace):
    image = sorted((workspace / "d" / "images").iterdir())[0]
    for name in ("a", "b"):
        assert main(["infer", "--ckpt", str(workspace / "ft"), "--image", str(image), "--k", "3",
                     "--out", str(workspace / "out" / f"{name}.wav")]) == EXIT_OK
    a, b = (workspace / "out" / "a.wav").read_bytes(), (workspace / "out" / "b.wav").read_bytes()
    assert a == b and a[:4] == b"RIFF"
    trace = json.loads((workspace / "out" / "a.json").read_text())
    assert len(trace["topk"]) == 3 and trace["chosen"] == trace["topk"][0]["record"]
    assert sum(trace["durations"]) == trace["mel_frames"]


def test_eval_report(workspace):
    assert main(["eval", "--ckpt", str(workspace / "ft"), "--data", str(workspace / "d"),
                 "--report", str(workspace / "rep")]) == EXIT_OK
    rows = {r["metric"]: r["value"] for r in csv.DictReader(open(workspace / "rep" / "metrics.csv"))}
    assert {"recall@1", "mean_r", "wer", "mean_mcd", "bleu4", "FAD"} <= set(rows)
    assert (workspace / "rep" / "finetune_curve.svg").exists()


def test_sweep_outputs(workspace):
    out = workspace / "sw" / "sweep.csv"
    assert main(["sweep", "--grid", "0.3,0.5", "--data", str(workspace / "d"), "--config",
                 str(workspace / "tiny.toml"), "--i2t", str(workspace / "i2t"), "--t2a", str(workspace / "t2a"),
                 "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out)))
    assert [r["lambda1"] for r in rows] == ["0.3", "0.5"]
    assert all(float(r["lambda1"]) + float(r["lambda2"]) == pytest.approx(1.0) for r in rows)
    assert out.with_suffix(".svg").exists()


def test_exit_codes(workspace, capsys):
    d = str(workspace / "d")
    image = str(sorted((workspace / "d" / "images").iterdir())[0])
    assert main(["finetune", "--data", d, "--lambda1", "1.0", "--out", str(workspace / "x")]) == EXIT_USAGE
    assert main(["finetune", "--data", d, "--lambda1", "0.5", "--lambda2", "0.6", "--out", str(workspace / "x")]) == EXIT_USAGE
    assert main(["infer", "--ckpt", str(workspace / "t2a"), "--image", image, "--out", str(workspace / "x.wav")]) == EXIT_DATA
    assert main(["pretrain-i2t", "--data", str(workspace / "missing"), "--out", str(workspace / "x")]) == EXIT_DATA
    (workspace / "bad.toml").write_text("[i2t]\nnope = 1\n")
    assert main(["pretrain-i2t", "--data", d, "--config", str(workspace / "bad.toml"), "--out", str(workspace / "x")]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == EXIT_USAGE
    capsys.readouterr()


def test_pretraining_is_deterministic(workspace):
    args = ["pretrain-t2a", "--data", str(workspace / "d"), "--config", str(workspace / "tiny.toml"), "--out"]
    assert main(args + [str(workspace / "again")]) == EXIT_OK
    assert (workspace / "again" / "model.bipc").read_bytes() == (workspace / "t2a" / "model.bipc").read_bytes()
    assert (workspace / "again" / "t2a_curve.csv").read_bytes() == (workspace / "t2a" / "t2a_curve.csv").read_bytes()
