"""`safenet train`: fit a network and write its checkpoint, history and test metrics."""

from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any

import structlog

from safenet.commands.common import echo, ensure_writable, load_data, network_config, window_stats, write_json
from safenet.metrics import write_metrics
from safenet.model import build_model, firing_rates, save_checkpoint
from safenet.schemas import RunConfig
from safenet.train import evaluate, fit, prepare_splits

logger: structlog.stdlib.BoundLogger = structlog.get_logger()


def train(args: Namespace, config: RunConfig) -> int:
    data = load_data(args.data, config)
    out: Path = args.out
    checkpoint = ensure_writable(out / "model.sfn", args.force)

    splits = prepare_splits(data.dataset, config.split)
    model = build_model(network_config(config, data))
    log = logger.bind(architecture=model.cfg.architecture, safd=model.cfg.safd.enabled)
    log.info("Training", train=len(splits.train), val=len(splits.val), test=len(splits.test), tag="train_start")

    model, history = fit(model, splits.train, splits.val, config.train)
    run = {"config": echo(config), "normalization": window_stats(data, splits, config).model_dump(mode="json")}
    save_checkpoint(checkpoint, model, run)
    history.write_csv(out / "history.csv", echo(config))

    report = evaluate(
        model,
        splits.test,
        splits.angle_stats,
        joint_names=data.joint_names,
        condition_names=data.condition_names,
        batch_size=config.train.batch_size,
        config=echo(config),
    )
    write_json(out / "metrics.json", report)
    write_metrics(out / "metrics.prom")

    rates = firing_rates(model)
    log.info("Trained", best_epoch=history.best_epoch, rmse=report.mean.rmse, firing_rates=rates, tag="train_done")
    print(f"best epoch {history.best_epoch}, test RMSE {report.mean.rmse:.3f} deg")
    return 0


def register(subparsers: Any, parents: list[ArgumentParser]) -> None:
    parser = subparsers.add_parser("train", parents=parents, help="train a network on a dataset")
    parser.add_argument("--data", type=Path, required=True, help="manifest (.json) or windowed container (.sfw)")
    parser.set_defaults(handler=train)
