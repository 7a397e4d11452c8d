"""`safenet profile`: parameters, FLOPs, effective MACs, latency and power of a network."""

from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any

import numpy as np
import structlog

from safenet.commands.common import (
    checkpoint_split,
    echo,
    ensure_writable,
    load_data,
    load_trained,
    network_config,
    write_json,
)
from safenet.custom_exceptions import UsageError
from safenet.diffcore import Tensor
from safenet.dsp import window_geometry
from safenet.model import Network, build_model
from safenet.profiler import append_cost_row, measure_latency, profile
from safenet.schemas import RunConfig
from safenet.train import prepare_splits

logger: structlog.stdlib.BoundLogger = structlog.get_logger()


def _random_windows(config: RunConfig) -> tuple[Network, Tensor]:
    """An untrained network shaped after the synthetic cohort, fed standard-normal windows."""
    spec = config.synth
    network = config.network_config(c_in=spec.n_channels, n_joints=spec.n_joints, n_subjects=spec.n_subjects)
    L, _ = window_geometry(config.dsp, spec.fs)
    rng = np.random.default_rng(config.train.seed)
    return build_model(network), Tensor(rng.standard_normal((config.profile.batch_size, L, spec.n_channels)))


def _model_and_batch(args: Namespace, config: RunConfig) -> tuple[Network, Tensor]:
    if args.data is None:
        if args.checkpoint is not None:
            raise UsageError("--checkpoint needs --data to shape its sample batch")
        return _random_windows(config)

    data = load_data(args.data, config)
    if args.checkpoint is not None:
        model, stats = load_trained(args.checkpoint, data, config, validate=args.config is not None)
        windows = checkpoint_split(data, config, stats, "test").windows
    else:
        model = build_model(network_config(config, data))
        windows = prepare_splits(data.dataset, config.split).test.windows
    return model, Tensor(windows[: config.profile.batch_size])


def _default_label(model: Network) -> str:
    cfg = model.cfg
    safd = f"safd{cfg.safd.iterations}" if cfg.safd.enabled and cfg.architecture == "safenet" else "nosafd"
    return f"{cfg.architecture}-d{cfg.ssa.d_model}-{safd}"


def profile_network(args: Namespace, config: RunConfig) -> int:
    model, batch = _model_and_batch(args, config)
    path = ensure_writable(args.out / "cost.json", args.force)

    report = profile(model, batch, config.profile, echo(config))
    write_json(path, report)
    append_cost_row(args.out / "costs.csv", report, args.label or _default_label(model))

    if batch.shape[0] > 1:
        single, _ = measure_latency(model, Tensor(batch.values[:1]), config.profile.latency_repeats, config.profile.warmup)
        if report.latency_s > single:
            logger.warning(
                "Batching did not amortize latency",
                batch=batch.shape[0],
                per_sample_batched_s=report.latency_s,
                per_sample_single_s=single,
                tag="no_amortization",
            )

    print(f"params {report.params}, FLOPs {report.flops}, effective MACs {report.effective_macs:.0f}")
    print(f"latency {report.latency_s * 1e3:.3f} ms/sample, power {report.power_w:.4g} (see power_note)")
    return 0


def register(subparsers: Any, parents: list[ArgumentParser]) -> None:
    parser = subparsers.add_parser("profile", parents=parents, help="cost report of a network")
    parser.add_argument("--checkpoint", type=Path, help="trained network; an untrained one is built from the config")
    parser.add_argument("--data", type=Path, help="windows to measure on; random windows when omitted")
    parser.add_argument("--label", help="row label in costs.csv")
    parser.set_defaults(handler=profile_network)
