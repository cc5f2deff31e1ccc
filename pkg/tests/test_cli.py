import csv
import json

import pytest

from mbcgcn import cascade, checkpoint
from mbcgcn import graph as graph_mod
from mbcgcn.cli import build_run_config, main, make_parser
from mbcgcn.data import SyntheticConfig, generate_synthetic, write_dataset
from mbcgcn.evaluation import MetricsReport
from mbcgcn.runner import AblationGrid, RunConfig, run_ablation, run_train, write_report
from mbcgcn.train import TrainConfig

FAST = TrainConfig(learning_rate=1e-2, batch_size=64, max_epochs=3, patience=2, seed=3)


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    ds = generate_synthetic(SyntheticConfig(M=40, N=30, densities=(0.3, 0.15, 0.1)), 0)
    return [str(p) for p in write_dataset(ds, root)]


def base_config(files, out, **kw):
    kw.setdefault("train", FAST)
    return RunConfig(behaviors=("view", "cart", "buy"), inputs=tuple(files), layers=(1, 2, 1), d=8,
                     Ks=(10, 20), out=str(out), **kw)


def test_run_train_writes_artifacts(files, tmp_path):
    result = run_train(base_config(files, tmp_path))
    for name in ("model.ckpt", "metrics.json", "train.log", "user_ids.tsv", "item_ids.tsv"):
        assert (tmp_path / name).exists()
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert set(metrics["recall"]) == {"10", "20"}
    assert metrics["recall"]["10"] == result.metrics.recall[10]
    assert len((tmp_path / "train.log").read_text().splitlines()) == len(result.log.records)


def test_mf_config_never_propagates(files, tmp_path, monkeypatch):
    calls = []
    real = graph_mod.propagate_layer
    monkeypatch.setattr(graph_mod, "propagate_layer", lambda *a: calls.append(1) or real(*a))
    transforms = []
    real_ft = cascade.feature_transform
    monkeypatch.setattr(cascade, "feature_transform", lambda *a: transforms.append(1) or real_ft(*a))
    cfg = base_config(files, tmp_path, order="buy")
    cfg = RunConfig(**{**cfg.__dict__, "uniform_layers": 0})
    result = run_train(cfg)
    assert result.model_config.layers == (0,)
    assert calls == [] and transforms == []
    assert result.params.user_transforms == []


def test_run_train_deterministic_checkpoint(files, tmp_path):
    a = run_train(base_config(files, tmp_path / "a"))
    b = run_train(base_config(files, tmp_path / "b"))
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()
    assert a.metrics == b.metrics


def test_checkpoint_evaluate_reproduces_metrics(files, tmp_path, capsys):
    result = run_train(base_config(files, tmp_path))
    code = main(["evaluate", "--behaviors", "view,cart,buy", "--inputs", ",".join(files), "--layers", "1,2,1",
                 "--dim", "8", "--topk", "10,20", "--ckpt", str(tmp_path / "model.ckpt"), "--out", str(tmp_path)])
    assert code == 0
    report = MetricsReport.from_dict(json.loads((tmp_path / "eval_metrics.json").read_text()))
    assert report.recall == result.metrics.recall and report.ndcg == result.metrics.ndcg


def test_missing_input_names_path(tmp_path, capsys):
    missing = tmp_path / "absent.tsv"
    code = main(["train", "--behaviors", "buy", "--inputs", str(missing), "--layers", "0", "--out", str(tmp_path)])
    assert code != 0
    assert "absent.tsv" in capsys.readouterr().err


def test_grid_product_count(files, tmp_path):
    grid = AblationGrid(transform=(True, False), aggregation=("sum", "concat", "last_only"))
    assert len(grid) == 6
    rows = run_ablation(grid, base_config(files, tmp_path, train=TrainConfig(max_epochs=1, batch_size=64)))
    assert len(rows) == 6
    assert all(r.error is None for r in rows)


def test_grid_order_labels_and_unknown_behavior(files, tmp_path):
    grid = AblationGrid(orders=("view>cart>buy", "cart>view>buy", "view>click>buy"))
    rows = run_ablation(grid, base_config(files, tmp_path, train=TrainConfig(max_epochs=1, batch_size=64)))
    assert "order=view>cart>buy" in rows[0].label
    assert "order=cart>view>buy" in rows[1].label
    assert rows[2].error is not None and "unknown behavior" in rows[2].error
    assert rows[0].error is None and rows[1].error is None


def test_grid_row_matches_standalone_run(files, tmp_path):
    base = base_config(files, tmp_path, train=TrainConfig(max_epochs=2, batch_size=64, seed=5))
    rows = run_ablation(AblationGrid(transform=(True, False)), base)
    alone = run_train(RunConfig(**{**base.__dict__, "transform_enabled": False, "out": str(tmp_path / "x")}))
    assert rows[1] == alone.metrics


def test_write_report_rows_and_rounding(tmp_path):
    r = MetricsReport((10, 20), {10: 0.09716, 20: 0.2}, {10: 0.04, 20: 0.05}, 3, "lbl")
    path = write_report([r], tmp_path / "r.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["label", "metric", "K", "value"]
    assert len(rows) == 1 + 4
    assert rows[1] == ["lbl", "recall", "10", "0.0972"]
    js = json.loads(write_report([r], tmp_path / "r.json", "json").read_text())
    assert js["lbl"]["recall"]["10"] == 0.0972


def test_write_report_empty_creates_nothing(tmp_path):
    with pytest.raises(ValueError):
        write_report([], tmp_path / "none.csv")
    assert not (tmp_path / "none.csv").exists()


def test_write_report_unwritable(tmp_path):
    r = MetricsReport((10,), {10: 0.1}, {10: 0.1}, 1, "x")
    with pytest.raises(OSError):
        write_report([r], tmp_path / "missing_dir" / "r.csv")


def test_config_file_with_flag_override(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# experiment\nbehaviors=view,buy\nlayers=2,3\nlr=0.01\ndim=16\nagg=last\nft=off\n")
    args = make_parser().parse_args(["train", "--config", str(cfg_file), "--dim", "32"])
    cfg = build_run_config(args)
    assert cfg.d == 32
    assert cfg.behaviors == ("view", "buy") and cfg.layers == (2, 3)
    assert cfg.train.learning_rate == 0.01
    assert cfg.aggregation == "last_only" and cfg.transform_enabled is False


def test_cli_defaults():
    cfg = build_run_config(make_parser().parse_args(["train"]))
    assert cfg.d == 64 and cfg.train.batch_size == 1024 and cfg.train.learning_rate == 1e-3
    assert cfg.layers == (3, 4, 3) and cfg.Ks == (10, 20, 50)
    assert cfg.train.patience == 10 and cfg.train.eval_K == 20


def test_cli_prepare_ablate_report(files, tmp_path, capsys):
    common = ["--behaviors", "view,cart,buy", "--inputs", ",".join(files), "--layers", "1,1,1", "--dim", "4",
              "--epochs", "1", "--batch", "64", "--topk", "10,20"]
    assert main(["prepare", *common, "--out", str(tmp_path / "prep")]) == 0
    stats = json.loads((tmp_path / "prep" / "stats.json").read_text())
    assert stats["users"] == 40 and stats["chain"] == ["view", "cart", "buy"]
    assert main(["ablate", *common, "--grid-ft", "on,off", "--grid-orders", "view>cart>buy;cart>buy",
                 "--out", str(tmp_path / "abl")]) == 0
    rows = list(csv.reader((tmp_path / "abl" / "ablation.csv").open()))
    assert len(rows) == 1 + 4 * 4
    assert main(["train", *common, "--out", str(tmp_path / "t")]) == 0
    assert main(["report", str(tmp_path / "t" / "metrics.json"), "--output", str(tmp_path / "rep.csv")]) == 0
    assert len(list(csv.reader((tmp_path / "rep.csv").open()))) == 1 + 4
    blob = (tmp_path / "t" / "model.ckpt").read_bytes()
    params, cfg = checkpoint.from_bytes(blob)
    assert cfg.layers == (1, 1, 1) and params.P.shape == (40, 4)
