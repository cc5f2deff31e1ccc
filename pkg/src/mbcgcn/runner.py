"""End-to-end runs: ingest -> split -> train -> evaluate -> write artifacts,
plus the ablation grid and report writer used by the command line."""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import checkpoint
from .cascade import AGGREGATIONS, CascadeParams, ModelConfig
from .data import ConfigError, MultiBehaviorDataset, SplitDataset, leave_one_out_split, load_dataset
from .evaluation import MetricsReport, evaluate_split
from .train import TrainConfig, TrainingLog, build_graphs, fit

logger = logging.getLogger(__name__)


def parse_order(order: str) -> tuple[str, ...]:
    names = tuple(x.strip() for x in order.split(">"))
    if not order.strip() or any(not x for x in names):
        raise ConfigError(f"invalid behavior order {order!r}")
    if len(set(names)) != len(names):
        raise ConfigError(f"behavior repeated in order {order!r}")
    return names


@dataclass(frozen=True)
class RunConfig:
    """One experiment. ``behaviors``/``inputs`` name the files; ``order`` picks
    the chain from them (default: all behaviors, file order). ``layers`` pairs
    with ``behaviors`` unless ``uniform_layers`` is set."""

    behaviors: tuple[str, ...] = ("view", "cart", "buy")
    inputs: tuple[str, ...] = ()
    order: str | None = None
    layers: tuple[int, ...] = (3, 4, 3)
    uniform_layers: int | None = None
    d: int = 64
    transform_enabled: bool = True
    aggregation: str = "sum"
    train: TrainConfig = field(default_factory=TrainConfig)
    Ks: tuple[int, ...] = (10, 20, 50)
    out: str = "runs/default"

    def __post_init__(self):
        if len(self.layers) != len(self.behaviors):
            raise ConfigError(f"{len(self.layers)} layer counts for {len(self.behaviors)} behaviors")
        if self.inputs and len(self.inputs) != len(self.behaviors):
            raise ConfigError(f"{len(self.inputs)} input files for {len(self.behaviors)} behaviors")
        if not self.Ks or list(self.Ks) != sorted(set(self.Ks)):
            raise ConfigError("Ks must be non-empty and strictly ascending")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")

    @property
    def chain(self) -> tuple[str, ...]:
        return parse_order(self.order) if self.order else tuple(self.behaviors)

    def model_config(self) -> ModelConfig:
        chain = self.chain
        for name in chain:
            if name not in self.behaviors:
                raise ConfigError(f"unknown behavior {name!r}")
        if self.uniform_layers is not None:
            layers = (self.uniform_layers,) * len(chain)
        else:
            by_name = dict(zip(self.behaviors, self.layers))
            layers = tuple(by_name[name] for name in chain)
        return ModelConfig(self.d, layers, self.transform_enabled, self.aggregation)

    def label(self) -> str:
        order = self.order or ">".join(self.behaviors)
        try:
            layers = ",".join(map(str, self.model_config().layers))
        except (ConfigError, ValueError):
            layers = "?"
        return (f"order={order} ft={'on' if self.transform_enabled else 'off'} "
                f"agg={self.aggregation} layers={layers}")


@dataclass
class RunResult:
    params: CascadeParams
    model_config: ModelConfig
    metrics: MetricsReport
    log: TrainingLog
    split: SplitDataset


def load_all(config: RunConfig) -> MultiBehaviorDataset:
    return load_dataset(config.inputs, config.behaviors)


def train_and_evaluate(dataset: MultiBehaviorDataset, config: RunConfig) -> RunResult:
    model_config = config.model_config()
    split = leave_one_out_split(dataset.select(config.chain))
    graphs = build_graphs(split)
    params, log = fit(split, model_config, config.train, graphs=graphs)
    # evaluate what the checkpoint will hold, so reloads reproduce metrics exactly
    params = params.as_float32_precision()
    metrics = evaluate_split(params, model_config, graphs, split, config.Ks, label=config.label())
    return RunResult(params, model_config, metrics, log, split)


def run_train(config: RunConfig, dataset: MultiBehaviorDataset | None = None) -> RunResult:
    """Train one configuration and write model.ckpt, metrics.json, train.log
    and the ID maps into ``config.out``."""
    if dataset is None:
        dataset = load_all(config)
    result = train_and_evaluate(dataset, config)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out / "model.ckpt", result.params, result.model_config)
    (out / "metrics.json").write_text(result.metrics.to_json() + "\n")
    (out / "train.log").write_text("".join(line + "\n" for line in result.log.lines()))
    dataset.id_maps.users.save(out / "user_ids.tsv")
    dataset.id_maps.items.save(out / "item_ids.tsv")
    return result


def evaluate_checkpoint(config: RunConfig, ckpt_path: str | Path,
                        dataset: MultiBehaviorDataset | None = None) -> MetricsReport:
    params, model_config = checkpoint.load(ckpt_path)
    if dataset is None:
        dataset = load_all(config)
    chain = config.chain
    if len(chain) != model_config.B:
        raise ConfigError(f"checkpoint has {model_config.B} behaviors, chain {'>'.join(chain)} has {len(chain)}")
    split = leave_one_out_split(dataset.select(chain))
    if params.P.shape[0] != split.train.M or params.Q.shape[0] != split.train.N:
        raise ConfigError("checkpoint user/item counts do not match the dataset")
    graphs = build_graphs(split)
    return evaluate_split(params, model_config, graphs, split, config.Ks, label=config.label())


@dataclass(frozen=True)
class AblationGrid:
    transform: tuple[bool, ...] = (True,)
    aggregation: tuple[str, ...] = ("sum",)
    orders: tuple[str | None, ...] = (None,)
    uniform_layers: tuple[int | None, ...] = (None,)

    def __len__(self) -> int:
        return len(self.transform) * len(self.aggregation) * len(self.orders) * len(self.uniform_layers)

    def variants(self, base: RunConfig) -> list[RunConfig]:
        out = []
        for ft, agg, order, layers in itertools.product(self.transform, self.aggregation, self.orders,
                                                        self.uniform_layers):
            out.append(replace(base, transform_enabled=ft, aggregation=agg,
                               order=order if order is not None else base.order,
                               uniform_layers=layers if layers is not None else base.uniform_layers))
        return out


def run_ablation(grid: AblationGrid, base: RunConfig,
                 dataset: MultiBehaviorDataset | None = None) -> list[MetricsReport]:
    """Train and test every variant in turn with the base seed. A failing
    variant becomes an error row; the rest of the grid still runs."""
    if dataset is None:
        dataset = load_all(base)
    rows = []
    for variant in grid.variants(base):
        label = variant.label()
        try:
            report = train_and_evaluate(dataset, variant).metrics
        except (ConfigError, ValueError, RuntimeError) as exc:
            logger.error("variant %s failed: %s", label, exc)
            report = MetricsReport.failed(label, str(exc))
        rows.append(report)
    return rows


def write_report(reports: Sequence[MetricsReport], path: str | Path, fmt: str = "csv") -> Path:
    """Write (label, metric, K, value) rows; values carry 4 decimals."""
    if not reports:
        raise ValueError("no reports to write")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    if fmt == "csv":
        lines = [["label", "metric", "K", "value"]]
        for r in reports:
            if r.error is not None:
                lines.append([r.label, "error", "", r.error])
                continue
            lines.extend([label, metric, str(k), f"{value:.4f}"] for label, metric, k, value in r.rows())
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(lines)
    else:
        obj = {}
        for r in reports:
            if r.error is not None:
                obj[r.label] = {"error": r.error}
            else:
                obj[r.label] = {m: {str(k): float(f"{r.recall[k] if m == 'recall' else r.ndcg[k]:.4f}")
                                    for k in r.Ks} for m in ("recall", "ndcg")}
        path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
    return path
