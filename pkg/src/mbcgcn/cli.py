"""Command line: prepare, train, evaluate, ablate, report (and synth for demo data)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import (ConfigError, ParseError, SyntheticConfig, dataset_stats, generate_synthetic,
                   leave_one_out_split, load_dataset, write_dataset)
from .evaluation import MetricsReport
from .runner import AblationGrid, RunConfig, evaluate_checkpoint, parse_order, run_ablation, run_train, write_report
from .train import TrainConfig

logger = logging.getLogger("mbcgcn")

AGG_FLAGS = {"sum": "sum", "concat": "concat", "last": "last_only", "last_only": "last_only"}

# flag name -> (RunConfig/TrainConfig field, converter)
_KEYS = {
    "behaviors": lambda v: ("behaviors", _csv(v)),
    "inputs": lambda v: ("inputs", _csv(v)),
    "order": lambda v: ("order", v or None),
    "layers": lambda v: ("layers", tuple(int(x) for x in _csv(v))),
    "dim": lambda v: ("d", int(v)),
    "ft": lambda v: ("transform_enabled", _on_off(v)),
    "agg": lambda v: ("aggregation", _agg(v)),
    "topk": lambda v: ("Ks", tuple(int(x) for x in _csv(v))),
    "out": lambda v: ("out", v),
    "batch": lambda v: ("train.batch_size", int(v)),
    "lr": lambda v: ("train.learning_rate", float(v)),
    "lambda": lambda v: ("train.lam", float(v)),
    "epochs": lambda v: ("train.max_epochs", int(v)),
    "patience": lambda v: ("train.patience", int(v)),
    "seed": lambda v: ("train.seed", int(v)),
    "eval-k": lambda v: ("train.eval_K", int(v)),
}


def _csv(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _on_off(v: str) -> bool:
    if v.lower() in ("on", "true", "1", "yes"):
        return True
    if v.lower() in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"expected on/off, got {v!r}")


def _agg(v: str) -> str:
    if v not in AGG_FLAGS:
        raise ConfigError(f"--agg must be sum, concat or last, got {v!r}")
    return AGG_FLAGS[v]


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key=value`` lines; '#' starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value")
            key, value = (x.strip() for x in line.split("=", 1))
            key = key.lstrip("-").replace("_", "-")
            if key not in _KEYS:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            out[key] = value
    return out


def build_run_config(args: argparse.Namespace) -> RunConfig:
    raw = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in _KEYS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            raw[key] = value
    run_kw: dict = {}
    train_kw: dict = {}
    for key, value in raw.items():
        name, converted = _KEYS[key](value)
        if name.startswith("train."):
            train_kw[name[6:]] = converted
        else:
            run_kw[name] = converted
    if "behaviors" in run_kw and "layers" not in run_kw and len(run_kw["behaviors"]) != 3:
        run_kw["layers"] = (3,) * len(run_kw["behaviors"])
    return RunConfig(train=TrainConfig(**train_kw), **run_kw)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--behaviors", help="behavior names matching --inputs, e.g. view,cart,buy")
    p.add_argument("--inputs", help="one TSV per behavior, comma separated")
    p.add_argument("--order", help="behavior chain, e.g. view>cart>buy (default: --behaviors order)")
    p.add_argument("--layers", help="propagation depth per behavior, e.g. 3,4,3")
    p.add_argument("--dim", help="embedding size (default 64)")
    p.add_argument("--batch", help="batch size (default 1024)")
    p.add_argument("--lr", help="learning rate (default 1e-3)")
    p.add_argument("--lambda", dest="lambda", help="L2 weight (default 1e-4)")
    p.add_argument("--epochs", help="max epochs")
    p.add_argument("--patience", help="early stopping patience in epochs (default 10)")
    p.add_argument("--seed")
    p.add_argument("--eval-k", dest="eval_k", help="validation Recall@K monitored for early stopping")
    p.add_argument("--agg", help="sum|concat|last")
    p.add_argument("--ft", help="feature transformation on|off")
    p.add_argument("--topk", help="Ks for reporting, e.g. 10,20,50")
    p.add_argument("--out", help="output directory")


def cmd_prepare(args) -> int:
    cfg = build_run_config(args)
    dataset = load_dataset(cfg.inputs, cfg.behaviors).select(cfg.chain)
    split = leave_one_out_split(dataset)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset.id_maps.users.save(out / "user_ids.tsv")
    dataset.id_maps.items.save(out / "item_ids.tsv")
    users, items = dataset.id_maps.users, dataset.id_maps.items
    train_target = split.train.target
    with open(out / "train.tsv", "w", encoding="utf-8") as fh:
        for x in train_target:
            fh.write(f"{users.raw(x.user)}\t{items.raw(x.item)}\n")
    for name, held in (("validation", split.validation), ("test", split.test)):
        with open(out / f"{name}.tsv", "w", encoding="utf-8") as fh:
            for u, i in held.items():
                fh.write(f"{users.raw(u)}\t{items.raw(i)}\n")
    stats = dataset_stats(dataset)
    stats.update(train_target=len(train_target), validation_users=len(split.validation),
                 test_users=len(split.test))
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    print(json.dumps(stats, indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = build_run_config(args)
    result = run_train(cfg)
    print(result.metrics.to_json())
    return 0


def cmd_evaluate(args) -> int:
    cfg = build_run_config(args)
    report = evaluate_checkpoint(cfg, args.ckpt)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_metrics.json").write_text(report.to_json() + "\n")
    print(report.to_json())
    return 0


def cmd_ablate(args) -> int:
    cfg = build_run_config(args)
    grid = AblationGrid(
        transform=tuple(_on_off(v) for v in _csv(args.grid_ft)) if args.grid_ft else (cfg.transform_enabled,),
        aggregation=tuple(_agg(v) for v in _csv(args.grid_agg)) if args.grid_agg else (cfg.aggregation,),
        orders=tuple(x.strip() for x in args.grid_orders.split(";") if x.strip()) if args.grid_orders else (None,),
        uniform_layers=tuple(int(v) for v in _csv(args.grid_layers)) if args.grid_layers else (None,),
    )
    reports = run_ablation(grid, cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = write_report(reports, out / "ablation.csv")
    print(path.read_text(), end="")
    return 0


def cmd_report(args) -> int:
    reports = [MetricsReport.from_dict(json.loads(Path(p).read_text())) for p in args.metrics]
    path = write_report(reports, args.output, args.format)
    print(path.read_text(), end="")
    return 0


def cmd_synth(args) -> int:
    chain = parse_order(args.order)
    densities = tuple(float(x) for x in _csv(args.densities))
    config = SyntheticConfig(M=args.users, N=args.items, d_latent=args.latent, densities=densities,
                             nesting=not args.no_nesting, noise=args.noise, chain=chain)
    paths = write_dataset(generate_synthetic(config, args.seed), args.out)
    print(",".join(str(p) for p in paths))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbcgcn", description="Cascading multi-behavior graph recommender")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest, split and print dataset statistics")
    _add_run_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train, test and write a checkpoint")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    _add_run_flags(p)
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run an ablation grid, one row per variant")
    _add_run_flags(p)
    p.add_argument("--grid-ft", help="e.g. on,off")
    p.add_argument("--grid-agg", help="e.g. sum,concat,last")
    p.add_argument("--grid-orders", help="';'-separated chains, e.g. 'view>cart>buy;cart>view>buy'")
    p.add_argument("--grid-layers", help="uniform layer counts, e.g. 1,2,3,4")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="merge metrics.json files into a CSV/JSON table")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a seeded synthetic multi-behavior dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--order", default="view>cart>buy")
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--latent", type=int, default=8)
    p.add_argument("--densities", default="0.15,0.05,0.02")
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--no-nesting", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
