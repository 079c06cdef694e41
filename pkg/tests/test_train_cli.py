import csv
import dataclasses
import math

import numpy as np
import pytest

from rcdpt import cli
from rcdpt import tensor as T
from rcdpt.config import TrainConfig, format_kv, parse_kv
from rcdpt.data import Dataset, write_dataset
from rcdpt.encoder import ConfigError
from rcdpt.model import load_checkpoint
from rcdpt.optim import SGD, lr_schedule, sgd_step
from rcdpt.plotting import read_pgm16, write_pgm16
from rcdpt.reassemble import FusionMode
from rcdpt.tensor import GradientError, Tensor
from rcdpt.train import epoch_batches, evaluate, load_batch, make_model, train

TINY = dict(size=16, token_dim=8, num_heads=2, mlp_ratio=2, out_dim=4, batch_size=2, epochs=2)
TINY_FLAGS = ["--size", "16", "--token-dim", "8", "--num-heads", "2", "--mlp-ratio", "2", "--out-dim", "4",
              "--batch-size", "2", "--epochs", "2"]


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert cli.main(["-q", "gen-data", "--n", "4", "--val", "2", "--size", "16", "--seed", "3",
                     "--out", str(root)]) == 0
    return root


# --- schedule / optimizer ------------------------------------------------------------

def test_lr_schedule_examples():
    assert lr_schedule(0, 100) == 1e-4
    assert lr_schedule(100, 100) == 0.0
    assert lr_schedule(50, 100) == pytest.approx(5.359e-5, rel=1e-4)
    assert lr_schedule(50, 100) == 1e-4 * 0.5 ** 0.9


def test_lr_schedule_monotone_and_errors():
    lrs = [lr_schedule(s, 37) for s in range(38)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        lr_schedule(0, 0)
    with pytest.raises(ValueError):
        lr_schedule(5, 4)


def test_sgd_examples():
    with T.precision("float64"):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([1.0])
        sgd_step([p], lr=0.1, momentum=0.9, weight_decay=0.0)
        assert p.data[0] == pytest.approx(0.9, abs=1e-15)

        p = Tensor([0.0], requires_grad=True)
        opt = SGD([p], momentum=0.9, weight_decay=0.0)
        p.grad = np.array([1.0])
        opt.step(0.1)
        assert p.data[0] == pytest.approx(-0.1, abs=1e-15)
        p.grad = np.array([1.0])
        opt.step(0.1)
        assert opt.velocity[0][0] == pytest.approx(1.9, abs=1e-15)
        assert p.data[0] == pytest.approx(-0.29, abs=1e-15)

        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([0.0])
        sgd_step([p], lr=0.1, momentum=0.9, weight_decay=5e-4)
        assert p.data[0] == pytest.approx(0.99995, abs=1e-15)
        assert p.grad is None


def test_sgd_requires_gradients():
    p = Tensor([1.0], requires_grad=True)
    with pytest.raises(GradientError):
        SGD([p]).step(0.1)


# --- configuration -------------------------------------------------------------------

def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# toy run\nepochs = 7\nlr0 = 2e-4\ntap-layers = 1,2,3,4\naugment = false\n")
    args = cli.build_parser().parse_args(["train", "--data", "d", "--out", "o", "--config", str(path),
                                          "--epochs", "9"])
    cfg = cli.load_config(args, mode=args.mode)
    assert cfg.epochs == 9 and cfg.lr0 == 2e-4 and cfg.augment is False
    assert cfg.tap_layers == (1, 2, 3, 4)


def test_config_round_trip_and_errors():
    cfg = TrainConfig(mode="early", epochs=3)
    back = TrainConfig.from_kv(parse_kv(format_kv(cfg.to_dict())))
    assert back == cfg
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig.from_kv({"learning_rate": "1"})
    with pytest.raises(ConfigError):
        TrainConfig(lr0=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        parse_kv("no equals sign here")


def test_every_config_key_has_a_flag():
    help_text = cli.build_parser()._subparsers._group_actions[0].choices["train"].format_help()
    for f in dataclasses.fields(TrainConfig):
        assert "--" + f.name.replace("_", "-") in help_text


# --- training --------------------------------------------------------------------------

def test_augmentation_stream_is_mode_independent(tiny_data):
    data = Dataset(tiny_data / "train")
    a = TrainConfig(mode="early", **TINY)
    b = dataclasses.replace(a, mode=FusionMode.RCDPT)
    for epoch in range(3):
        ba, bb = epoch_batches(a, len(data), epoch), epoch_batches(b, len(data), epoch)
        assert all(np.array_equal(x, y) for x, y in zip(ba, bb))
        for x in ba:
            for sa, sb in zip(load_batch(a, data, x, epoch), load_batch(b, data, x, epoch)):
                assert sa.image.tobytes() == sb.image.tobytes() and sa.radar.tobytes() == sb.radar.tobytes()


def test_train_logs_schedule_and_checkpoints(tiny_data, tmp_path):
    cfg = TrainConfig(mode="rcdpt", checkpoint_every=1, **TINY)
    res = train(cfg, Dataset(tiny_data / "train"), tmp_path / "run")
    steps = 2 * 2
    assert [row[1] for row in res.log] == list(range(steps))
    assert res.log[0][2] == 1e-4
    assert res.log[-1][2] == lr_schedule(steps - 1, steps)
    assert (tmp_path / "run" / "checkpoint_epoch001" / "manifest.txt").exists()
    assert (tmp_path / "run" / "checkpoint" / "manifest.txt").exists()
    with open(tmp_path / "run" / "train_log.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "step", "lr", "loss"] and len(rows) == steps + 1
    assert float(rows[1][2]) == 1e-4
    assert parse_kv((tmp_path / "run" / "config.txt").read_text())["mode"] == "rcdpt-reassemble"


def test_training_rejects_mismatched_dataset(tiny_data):
    with pytest.raises(ConfigError, match="config expects"):
        train(TrainConfig(**{**TINY, "size": 32}), Dataset(tiny_data / "train"))


def test_nan_loss_aborts_with_step(tiny_data, monkeypatch):
    from rcdpt import train as train_mod
    from rcdpt.train import TrainingError

    monkeypatch.setattr(train_mod, "total_loss", lambda *a, **k: Tensor([float("nan")]))
    with pytest.raises(TrainingError, match="step 0"):
        train(TrainConfig(**TINY), Dataset(tiny_data / "train"))


def test_eval_against_own_predictions_is_perfect(tiny_data):
    model = make_model(TrainConfig(mode="late", init_depth=12.0, **TINY))
    data = Dataset(tiny_data / "val")
    own = Dataset(tiny_data / "val")
    preds = [model.predict(s.image, s.radar)[..., 0] for s in data]
    for i, p in enumerate(preds):
        own[i].lidar_gt[...] = p
    rep = evaluate(model, own, preds=preds)
    assert (rep.delta1, rep.delta2, rep.delta3, rep.rmse, rep.absrel) == (1.0, 1.0, 1.0, 0.0, 0.0)
    assert rep.n_pixels == 2 * 16 * 16


def test_trained_model_beats_untrained(tmp_path):
    root = write_dataset(tmp_path / "d", n=16, size=48, seed=11)
    cfg = TrainConfig(mode="rcdpt", epochs=8, augment=False)
    data = Dataset(root)
    before = evaluate(make_model(cfg), data)
    after = evaluate(train(cfg, data).model, data)
    assert before.delta1 < after.delta1


# --- CLI -----------------------------------------------------------------------------------

def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_cli_train_eval_and_determinism(tiny_data, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert cli.main(["-q", "train", "--mode", "rcdpt", "--data", str(tiny_data), "--out", str(out),
                         "--seed", "4", *TINY_FLAGS]) == 0
        assert cli.main(["-q", "eval", "--ckpt", str(out / "checkpoint"), "--data", str(tiny_data),
                         "--out", str(out / "eval"), "--pgm"]) == 0
        outs.append(out)
    a, b = outs
    for rel in ("train_log.csv", "eval/metrics.csv", "eval/metrics_dense.csv", "config.txt",
                "checkpoint/manifest.txt"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    weights = sorted(p.name for p in (a / "checkpoint" / "weights").iterdir())
    assert len(weights) > 50
    for name in weights:
        assert (a / "checkpoint" / "weights" / name).read_bytes() == (b / "checkpoint" / "weights" / name).read_bytes()
    for png in ("loss_curve.png", "eval/examples.png"):
        assert (a / png).stat().st_size > 1000

    rows = read_csv(a / "eval" / "metrics.csv")
    assert rows[0] == ["mode", "seed", "delta1", "delta2", "delta3", "rmse", "absrel", "n_pixels"]
    assert len(rows) == 2 and all(len(r) == 8 for r in rows)
    assert rows[1][:2] == ["rcdpt-reassemble", "4"]
    pgms = sorted((a / "eval" / "depth").iterdir())
    assert [p.name for p in pgms] == ["scene_000004.pgm", "scene_000005.pgm"]
    model = load_checkpoint(a / "checkpoint")
    pred = model.predict(Dataset(tiny_data / "val")[0].image, Dataset(tiny_data / "val")[0].radar)
    np.testing.assert_allclose(read_pgm16(pgms[0]), np.clip(pred[..., 0], 0, 80), atol=80 / 65535)


def test_eval_prediction_denominator_changes_absrel(tiny_data, tmp_path):
    assert cli.main(["-q", "train", "--mode", "early", "--data", str(tiny_data), "--out", str(tmp_path / "r"),
                     *TINY_FLAGS, "--epochs", "1", "--init-depth", "30"]) == 0
    for denom in ("target", "prediction"):
        assert cli.main(["-q", "eval", "--ckpt", str(tmp_path / "r" / "checkpoint"), "--data", str(tiny_data),
                         "--out", str(tmp_path / denom), "--absrel-denominator", denom, "--no-figures"]) == 0
    t = read_csv(tmp_path / "target" / "metrics.csv")[1]
    p = read_csv(tmp_path / "prediction" / "metrics.csv")[1]
    assert t[:6] == p[:6] and t[6] != p[6]


def test_cli_compare_outputs(tiny_data, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert cli.main(["-q", "compare", "--seeds", "0,1", "--data", str(tiny_data), "--out", str(out),
                     *TINY_FLAGS, "--epochs", "1"]) == 0
    table = read_csv(out / "comparison.csv")
    assert [r[0] for r in table[1:]] == ["image-only", "early", "late", "rcdpt-reassemble"]
    assert table[0][:4] == ["mode", "n_seeds", "delta1_mean", "delta1_std"]
    assert all(r[1] == "2" for r in table[1:])
    per_seed = read_csv(out / "per_seed.csv")
    assert len(per_seed) == 1 + 8
    rmse = {(r[0], r[1]): float(r[5]) for r in per_seed[1:]}
    for row in table[1:]:
        vals = [rmse[(row[0], s)] for s in ("0", "1")]
        assert math.isclose(float(table[0].index("rmse_mean") and row[table[0].index("rmse_mean")]),
                            float(np.mean(vals)), rel_tol=1e-12)
    assert (out / "comparison.png").exists() and (out / "loss_curves.png").exists()
    assert "rcdpt-reassemble" in capsys.readouterr().out


def test_cli_errors(tmp_path):
    assert cli.main(["-q", "train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["-q", "eval", "--ckpt", str(tmp_path), "--data", str(tmp_path), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        cli.main(["train", "--mode", "bogus", "--data", "x", "--out", "y"])


def test_pgm_scaling(tmp_path):
    d = np.array([[0.0, 40.0], [80.0, 120.0]])
    write_pgm16(tmp_path / "d.pgm", d)
    raw = (tmp_path / "d.pgm").read_bytes()
    assert raw.startswith(b"P5\n2 2\n65535\n")
    assert np.frombuffer(raw[-8:], dtype=">u2").tolist() == [0, 32768, 65535, 65535]
    np.testing.assert_allclose(read_pgm16(tmp_path / "d.pgm"), [[0, 40], [80, 80]], atol=1e-3)
