"""`safenet synth`: write a synthetic gait cohort and its manifest."""

from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any

import structlog

from safenet.commands.common import echo
from safenet.custom_exceptions import OutputExistsError
from safenet.data import channel_names, generate_synthetic_cohort, joint_names, write_cohort
from safenet.schemas import RunConfig, SynthSpec

logger: structlog.stdlib.BoundLogger = structlog.get_logger()


def _occupied(path: Path) -> bool:
    return path.exists() and (path.is_file() or any(path.iterdir()))


def synth(args: Namespace, config: RunConfig) -> int:
    updates = {"n_subjects": args.subjects, "duration_s": args.duration}
    spec = SynthSpec.model_validate(config.synth.model_dump() | {k: v for k, v in updates.items() if v is not None})
    config = config.model_copy(update={"synth": spec})

    out: Path = args.out
    if _occupied(out) and not args.force:
        logger.error("Output directory is not empty", path=str(out), tag="output_exists")
        raise OutputExistsError(str(out))

    recordings = generate_synthetic_cohort(spec)
    manifest = write_cohort(
        out,
        recordings,
        channel_names(spec.n_channels),
        joint_names(spec.n_joints),
        generator=echo(config),
    )
    print(manifest)
    return 0


def register(subparsers: Any, parents: list[ArgumentParser]) -> None:
    parser = subparsers.add_parser("synth", parents=parents, help="write a synthetic sEMG / joint-angle cohort")
    parser.add_argument("--subjects", type=int, help="number of simulated subjects")
    parser.add_argument("--duration", type=float, help="recording length per subject in seconds")
    parser.set_defaults(handler=synth)
