import csv
import json
import os

import numpy as np
import pytest

from islab import cli
from islab.config import RunConfig, parse_override
from islab.nn import ConfigurationError
from islab.pipeline import (
    export_embeddings, init_run, load_datasets, load_run, run_eval, run_mine, run_sweep,
    run_train,
)


def tiny(**kw):
    base = dict(n_per_class=30, n_test_per_class=20, rounds=2, epochs_per_round=2,
                batch_size=16, encoder_hidden=[8], feature_dim=8, gan_hidden=16,
                max_gan_epochs=2, gan_batch_size=32, probe_epochs=2, r=1.2)
    base.update(kw)
    return RunConfig(**base)


# ------------------------------------------------------------------ config


def test_config_round_trips(tmp_path):
    cfg = tiny(symmetric=True, knn_k=7, lr_decay_points=[0.5, 0.8])
    cfg.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg
    assert RunConfig.from_json(cfg.to_json()) == cfg


def test_config_rejects_bad_values():
    for bad in (dict(h=1.5), dict(r=0.0), dict(eta=-0.1), dict(tau=0.0), dict(m=0),
                dict(dataset="mnist"), dict(dataset="cifar10")):
        with pytest.raises(ConfigurationError):
            RunConfig(**bad)
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"not_a_field": 1})


def test_full_scale_defaults():
    cfg = RunConfig.full_scale()
    assert (cfg.feature_dim, cfg.rounds, cfg.batch_size, cfg.gan_hidden) == (128, 4, 128, 256)
    assert (cfg.h, cfg.r, cfg.m, cfg.eta, cfg.tau, cfg.lam) == (0.5, 1.0, 5, 0.5, 0.07, 0.5)


def test_parse_override():
    assert parse_override("h=0.3") == ("h", 0.3)
    assert parse_override("encoder_hidden=[4,4]") == ("encoder_hidden", [4, 4])
    assert parse_override("dataset=swiss_roll") == ("dataset", "swiss_roll")
    assert parse_override("hpe-enabled=false") == ("hpe_enabled", False)
    with pytest.raises(ConfigurationError):
        parse_override("nonsense")


# ---------------------------------------------------------------- pipeline


def test_noop_pipeline_keeps_identity_sets():
    cfg = tiny(rounds=1, epochs_per_round=0, max_gan_epochs=0)
    res = run_train(cfg)
    assert res.run.state.sizes().tolist() == [1] * 60
    assert res.reports[0].mining_precision_by_setsize == {"all": 1.0, "1": 1.0}


def test_random_encoder_beats_chance():
    cfg = tiny(n_per_class=200, n_test_per_class=200)
    train, test = load_datasets(cfg)
    run = init_run(cfg, train)
    from islab.evaluation import knn_accuracy
    acc = knn_accuracy(run.encode(train.samples), train.eval_labels(),
                       run.encode(test.samples), test.eval_labels())
    assert acc > 0.6


def test_train_writes_artifacts_deterministically(tmp_path):
    cfg = tiny()
    a, b = tmp_path / "a", tmp_path / "b"
    run_train(cfg, a)
    run_train(cfg, b)
    for rel in ("metrics/round_1.json", "metrics/round_2.json", "mining/round_2.json",
                "logs/train.csv", "logs/gan.csv", "metrics/precision.csv", "config.json"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    with open(a / "logs" / "train.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["round", "epoch", "l1", "l2", "total", "lr"]
    assert len(rows) == 1 + 2 * 2
    with open(a / "logs" / "gan.csv") as fh:
        assert next(csv.reader(fh)) == ["round", "epoch", "d_loss", "g_loss"]


def test_eval_of_checkpoint_reproduces_report(tmp_path):
    cfg = tiny()
    res = run_train(cfg, tmp_path)
    again = run_eval(tmp_path / "checkpoints" / "round_2.npz")
    assert again.to_json() == res.reports[-1].to_json()
    saved = json.loads((tmp_path / "metrics" / "round_2.json").read_text())
    assert saved == res.reports[-1].to_dict()


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = tiny(rounds=3)
    full = run_train(cfg, tmp_path / "full")
    run_train(cfg, tmp_path / "part", stop_after=1)
    resumed = run_train(cfg, tmp_path / "part",
                        resume_from=tmp_path / "part" / "checkpoints" / "round_1.npz")
    assert [r.to_json() for r in resumed.reports] == [r.to_json() for r in full.reports[1:]]
    assert (tmp_path / "part" / "metrics" / "round_3.json").read_bytes() == \
        (tmp_path / "full" / "metrics" / "round_3.json").read_bytes()


def test_resume_rejects_other_config(tmp_path):
    run_train(tiny(rounds=1), tmp_path)
    with pytest.raises(ConfigurationError):
        run_train(tiny(rounds=2, h=0.7), resume_from=tmp_path / "checkpoints" / "round_1.npz")


def test_missing_checkpoint_names_the_path(tmp_path):
    path = tmp_path / "nope.npz"
    with pytest.raises(FileNotFoundError, match="nope.npz"):
        run_eval(path)


def test_eval_rejects_mismatched_dataset(tmp_path):
    run_train(tiny(rounds=1), tmp_path)
    other = load_datasets(tiny(dataset="swiss_roll"))
    with pytest.raises(ConfigurationError):
        run_eval(tmp_path / "checkpoints" / "round_1.npz", other)


def test_mine_from_checkpoint(tmp_path):
    run_train(tiny(rounds=1), tmp_path)
    ckpt = tmp_path / "checkpoints" / "round_1.npz"
    before = load_run(ckpt).state.sizes().sum()
    report = run_mine(ckpt, tmp_path / "mined.npz", h=0.0)
    after = load_run(tmp_path / "mined.npz").state.sizes().sum()
    assert after - before == report.total_added


def test_export_embeddings(tmp_path):
    cfg = tiny(rounds=1)
    res = run_train(cfg)
    train, _ = load_datasets(cfg)
    export_embeddings(res.run, train, tmp_path / "emb.csv")
    with open(tmp_path / "emb.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == [f"f{i}" for i in range(8)] + ["label"]
    feats = np.array([[float(v) for v in r[:-1]] for r in rows[1:]])
    np.testing.assert_allclose(np.linalg.norm(feats, axis=1), 1.0, atol=1e-12)


def test_sweep_rows_and_singleton(tmp_path):
    cfg = tiny(rounds=1)
    rows = run_sweep(cfg, {"h": [0.3, 0.6], "m": [1, 2]}, tmp_path / "s.csv")
    assert len(rows) == 4
    assert [r["seed"] for r in rows] == [0, 1, 2, 3]
    with open(tmp_path / "s.csv") as fh:
        header = next(csv.reader(fh))
    assert header[:4] == ["param", "value", "knn_accuracy", "precision"]
    single = run_sweep(cfg, {"h": [0.5]})
    direct = run_train(cfg).reports[-1]
    assert single[0]["knn_accuracy"] == direct.knn_accuracy
    assert single[0]["precision"] == direct.mining_precision_by_setsize["all"]


def test_sweep_records_failing_cells():
    rows = run_sweep(tiny(rounds=1), {"r": [-1.0, 1.0]})
    assert "ConfigurationError" in rows[0]["error"] and rows[1]["error"] == ""
    with pytest.raises(ConfigurationError):
        run_sweep(tiny(), {"tau": [0.1]})


# --------------------------------------------------------------------- cli


def test_cli_end_to_end(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    tiny(rounds=1).save(cfg_path)
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg_path), "--set", "h=0.4",
                     "--out", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["h"] == 0.4
    ckpt = str(out / "checkpoints" / "round_1.npz")
    assert cli.main(["eval", ckpt, "--out", str(tmp_path / "rep.json")]) == 0
    assert json.loads((tmp_path / "rep.json").read_text()) == \
        json.loads((out / "metrics" / "round_1.json").read_text())
    assert cli.main(["mine", ckpt, "--set", "h=0.0"]) == 0
    assert cli.main(["export-embeddings", ckpt, "--out", str(tmp_path / "e.csv")]) == 0
    assert os.path.exists(tmp_path / "e.csv")
    assert cli.main(["sweep", "--config", str(cfg_path), "--grid", "r=0.5,1.5",
                     "--out", str(tmp_path / "sw.csv")]) == 0
    with open(tmp_path / "sw.csv") as fh:
        assert len(list(csv.reader(fh))) == 3
    assert cli.main(["gen-data", "--kind", "concentric_circles", "--n-per-class", "4",
                     "--out", str(tmp_path / "d.csv")]) == 0
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 9
    capsys.readouterr()


def test_cli_reports_errors(tmp_path, capsys):
    assert cli.main(["eval", str(tmp_path / "missing.npz")]) == 2
    assert "missing.npz" in capsys.readouterr().err
    assert cli.main(["train", "--set", "bogus=1", "--out", str(tmp_path)]) == 2
