import pathlib

import numpy as np
import pytest

import mmtm

CONFIGS = pathlib.Path(__file__).resolve().parents[2] / "configs"


def tiny_config(*extra):
    return mmtm.parse_config(
        "",
        [
            "task.shapes=6x6x1,8",
            "task.train_size=60",
            "task.val_size=30",
            "task.test_size=30",
            "streams.conv_channels=4,8",
            "streams.conv_pool=1,0",
            "streams.dense_units=8,8",
            "training.max_epochs=1",
            *extra,
        ],
    )


def test_variants_listed():
    assert mmtm.fusion_variants() == ["mmtm", "early", "late", "se_late", "conv_mmtm", "conv_mmtm_sum"]


def test_closed_form_parameter_count():
    assert mmtm.mmtm_parameter_count([4, 4]) == 42
    assert mmtm.Mmtm([4, 4]).parameter_count == 42


def test_zero_heads_are_identity_for_mixed_ranks():
    rng = np.random.default_rng(0)
    feats = [rng.normal(size=(2, 3, 3, 4)), rng.normal(size=(3, 3, 5)), rng.normal(size=6)]
    out, exc = mmtm.Mmtm([4, 5, 6], init="zero_heads").forward(feats)
    for a, b in zip(out, feats):
        assert np.array_equal(a, b)
    assert all(np.all(e == 0) for e in exc)


def test_gating_range():
    rng = np.random.default_rng(1)
    feats = [np.ones((3, 3, 4)), np.ones(8)]
    out, _ = mmtm.Mmtm([4, 8], seed=3, init="random").forward(feats)
    for o in out:
        assert np.all((o > 0) & (o < 2))
    # One gate per channel, shared by every position.
    assert np.allclose(out[0], out[0][0, 0])


def test_errors_are_typed():
    with pytest.raises(mmtm.UsageError, match="valid names"):
        tiny_config("fusion.variant=gmu")
    with pytest.raises(mmtm.ConfigError):
        tiny_config("task.colour=red")
    with pytest.raises(mmtm.DimensionError):
        mmtm.Mmtm([4, 4]).forward([np.ones((2, 2, 3)), np.ones(4)])
    assert issubclass(mmtm.ParseError, mmtm.Error)


def test_dataset_round_trip(tmp_path):
    cfg = tiny_config()
    data = mmtm.generate(cfg)
    assert data.size("train") == 60
    inputs, label, corrupted = data.sample("test", 0)
    assert inputs[0].shape == (6, 6, 1) and inputs[1].shape == (8,)
    assert 0 <= label < 4 and len(corrupted) == 2
    assert mmtm.decode_dataset(mmtm.encode_dataset(data)) == data
    path = tmp_path / "d.mmfz"
    mmtm.save_dataset(data, path)
    assert mmtm.load_dataset(path) == data
    with pytest.raises(mmtm.ParseError):
        mmtm.decode_dataset(mmtm.encode_dataset(data)[:-1])


def test_train_and_checkpoint(tmp_path):
    cfg = tiny_config()
    data = mmtm.generate(cfg)
    net = mmtm.Network(cfg, seed=2)
    record = net.train(data, cfg)
    assert len(record["epochs"]) == 2
    loss, acc = net.evaluate(data)
    assert acc == record["test_acc"]
    path = tmp_path / "c.mmck"
    net.save(path, cfg, 2)
    again = mmtm.Network.load(path)
    inputs, _, _ = data.sample("test", 3)
    assert np.array_equal(again.logits(inputs), net.logits(inputs))


def test_run_experiment_is_deterministic():
    cfg = tiny_config()
    data = mmtm.generate(cfg)
    a = mmtm.run_experiment(data, cfg, "se_late", 1, 4)
    b = mmtm.run_experiment(data, cfg, "se_late", 1, 4)
    assert a["test_acc"] == b["test_acc"] and a["params"] > 0


def test_cost_csv():
    csv = mmtm.Network(mmtm.load_config(CONFIGS / "default.ini")).cost_csv()
    assert csv.startswith("component,params,macs\n")
    assert "fusion2.mmtm," in csv


def test_gradcheck_passes():
    assert all(r["passed"] for r in mmtm.gradcheck())
