"""`safenet compare`: per-subject ablation of the decomposition stage."""

from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from safenet.commands.common import ensure_writable, write_json
from safenet.custom_exceptions import InputNotFoundError, ParseError
from safenet.schemas import MetricReport, RunConfig
from safenet.train import compare_ablation


def read_report(path: Path) -> MetricReport:
    if not path.is_file():
        raise InputNotFoundError(str(path), "metrics report")
    try:
        return MetricReport.model_validate_json(path.read_text())
    except ValidationError as exc:
        raise ParseError(str(exc), path=str(path)) from exc


def compare(args: Namespace, config: RunConfig) -> int:
    with_safd = [read_report(path) for path in args.with_safd]
    without_safd = [read_report(path) for path in args.without_safd]
    if len(with_safd) != len(without_safd):
        raise ParseError(
            f"{len(with_safd)} --with reports against {len(without_safd)} --without reports",
            path=str(args.with_safd[0]),
        )
    path = ensure_writable(args.out / "ablation.json", args.force)

    report = compare_ablation(with_safd, without_safd)
    write_json(path, report)
    print(f"median RMSE with decomposition {report.median_with:.3f} deg, without {report.median_without:.3f} deg")
    if report.p_value is not None:
        print(f"one-way ANOVA F={report.f_statistic:.3f} p={report.p_value:.4g}")
    return 0


def register(subparsers: Any, parents: list[ArgumentParser]) -> None:
    parser = subparsers.add_parser("compare", parents=parents, help="compare runs with and without decomposition")
    parser.add_argument("--with", dest="with_safd", type=Path, action="append", required=True, help="metrics.json")
    parser.add_argument("--without", dest="without_safd", type=Path, action="append", required=True)
    parser.set_defaults(handler=compare)
