"""Command-line entry points: validate, run, ablate, label.

Exit codes: 0 on success, 1 for data errors (bad records, malformed rows),
2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

from urca.config import ConfigError, load_config, make_manifest
from urca.corpus import load_dataset, record_from_dict, validate_record
from urca.evaluation import build_report
from urca.generation import ORDERING_KINDS
from urca.labels import EffectEstimate, label_from_ci, label_to_str
from urca.pipeline import (
    VARIANT_KINDS,
    PipelineConfig,
    VariantSpec,
    model_label,
    parse_variant,
    run_dataset,
    write_run_log,
)

logger = logging.getLogger(__name__)

ORDERING_DISPLAY = {
    "ascending": "Ascending",
    "descending": "Descending",
    "random": "Random",
    "pingpong_desc_top": "Ping-pong Descending Top-to-bottom",
    "pingpong_desc_bottom": "Ping-pong Descending Bottom-to-top",
}

LABEL_CSV_HEADER = ["study_id", "point", "ci_low", "ci_high", "effect_kind"]


def _eprint(message: str) -> None:
    print(message, file=sys.stderr)


def cmd_validate(dataset: str) -> int:
    """Check every record in a JSONL dataset, reporting all problems."""
    if not os.path.exists(dataset):
        _eprint(f"error: dataset file not found: {dataset}")
        return 2
    problems: list[str] = []
    seen: dict[tuple[str, str], int] = {}
    n_records = 0
    with open(dataset, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            n_records += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {lineno}: invalid JSON: {exc.msg}")
                continue
            try:
                record = record_from_dict(obj)
                validate_record(record)
            except (ValueError, TypeError, AttributeError) as exc:
                problems.append(f"line {lineno}: {exc}")
                continue
            key = (record.question.id, record.study.id)
            if key in seen:
                problems.append(
                    f"line {lineno}: duplicate (question.id, study.id)={key!r}, "
                    f"first seen on line {seen[key]}"
                )
            else:
                seen[key] = lineno
    if problems:
        for problem in problems:
            _eprint(problem)
        _eprint(f"{len(problems)} invalid records")
        return 1
    print(f"ok: {n_records} records")
    return 0


def _load_pipeline_config(config_path: str | None) -> PipelineConfig:
    if config_path is None:
        return PipelineConfig()
    return load_config(config_path)


def _apply_overrides(config: PipelineConfig, seed: int | None, ordering: str | None) -> PipelineConfig:
    if seed is not None:
        config = dataclasses.replace(
            config,
            seed=seed,
            ordering=dataclasses.replace(config.ordering, seed=seed),
            reducer=dataclasses.replace(config.reducer, seed=seed),
        )
    if ordering is not None:
        config = dataclasses.replace(
            config, ordering=dataclasses.replace(config.ordering, kind=ordering)
        )
    return config


def _summary_lines(records) -> list[str]:
    lines = []
    groups: dict[tuple[str, str], list] = {}
    for record in records:
        groups.setdefault((record.variant, record.model_name), []).append(record)
    for (variant, model), group in sorted(groups.items()):
        report = build_report(group)
        lines.append(
            f"variant={variant} model={model} n={report.n_records} "
            f"f1={report.micro_f1:.4f} precision={report.micro_precision:.4f} "
            f"recall={report.micro_recall:.4f} accuracy={report.accuracy:.4f} "
            f"coverage={report.mean_coverage:.4f} unparsed={report.n_unparsed}"
        )
    return lines


def _run_log_name(variant: VariantSpec, ordering_kind: str | None = None) -> str:
    stem = variant.name.replace(":", "_")
    if ordering_kind:
        stem += f"_{ordering_kind}"
    return f"run_{stem}.jsonl"


def cmd_run(
    dataset: str,
    config_path: str | None,
    variant: str,
    out: str,
    parallelism: int = 1,
    seed: int | None = None,
    ordering: str | None = None,
) -> int:
    """Run one variant over a dataset, writing the run log and printing a summary."""
    try:
        spec = parse_variant(variant)
    except ValueError as exc:
        _eprint(f"error: {exc}")
        _eprint(f"usage: --variant takes one of {', '.join(VARIANT_KINDS)}")
        return 2
    try:
        config = _apply_overrides(_load_pipeline_config(config_path), seed, ordering)
    except ConfigError as exc:
        _eprint(f"error: {exc}")
        return 2
    if not os.path.exists(dataset):
        _eprint(f"error: dataset file not found: {dataset}")
        return 2
    try:
        records = load_dataset(dataset)
    except ValueError as exc:
        _eprint(f"error: {exc}")
        return 1

    try:
        preds = run_dataset(records, spec, config, parallelism=parallelism)
    except ValueError as exc:
        _eprint(f"error: {exc}")
        return 2

    os.makedirs(out, exist_ok=True)
    manifest = make_manifest(config, dataset, spec.name, model_label(config))
    log_path = os.path.join(out, _run_log_name(spec))
    write_run_log(log_path, manifest.header(), preds)
    _eprint(f"run log: {log_path} (started {manifest.timestamp})")
    for line in _summary_lines(preds):
        print(line)
    return 0


def cmd_ablate(
    dataset: str,
    config_path: str | None,
    variants: list[str],
    out: str,
    ordering_sweep: bool = False,
    parallelism: int = 1,
    seed: int | None = None,
) -> int:
    """Run several variants (optionally across all ordering strategies) and compare them."""
    if not variants:
        _eprint("error: --variants must name at least one variant")
        return 2
    try:
        specs = [parse_variant(v) for v in variants]
    except ValueError as exc:
        _eprint(f"error: {exc}")
        return 2
    try:
        base_config = _apply_overrides(_load_pipeline_config(config_path), seed, None)
    except ConfigError as exc:
        _eprint(f"error: {exc}")
        return 2
    if not os.path.exists(dataset):
        _eprint(f"error: dataset file not found: {dataset}")
        return 2
    try:
        records = load_dataset(dataset)
    except ValueError as exc:
        _eprint(f"error: {exc}")
        return 1

    os.makedirs(out, exist_ok=True)
    orderings = list(ORDERING_KINDS) if ordering_sweep else [None]
    rows: list[tuple[str, object]] = []
    for spec in specs:
        for ordering_kind in orderings:
            config = base_config
            row_name = spec.name
            if ordering_kind is not None:
                config = dataclasses.replace(
                    base_config,
                    ordering=dataclasses.replace(base_config.ordering, kind=ordering_kind),
                )
                row_name = f"{spec.name} / {ORDERING_DISPLAY[ordering_kind]}"
            try:
                preds = run_dataset(records, spec, config, parallelism=parallelism)
            except ValueError as exc:
                _eprint(f"error: {exc}")
                return 2
            manifest = make_manifest(config, dataset, spec.name, model_label(config))
            log_path = os.path.join(out, _run_log_name(spec, ordering_kind))
            write_run_log(log_path, manifest.header(), preds)
            rows.append((row_name, build_report(preds)))

    lines = [
        "| Configuration | F1 | Precision | Recall | Accuracy | Coverage | N | Unparsed |",
        "| --- | --- | --- | --- | --- | --- | --- | --- |",
    ]
    for name, report in rows:
        lines.append(
            f"| {name} | {report.micro_f1:.4f} | {report.micro_precision:.4f} "
            f"| {report.micro_recall:.4f} | {report.accuracy:.4f} | {report.mean_coverage:.4f} "
            f"| {report.n_records} | {report.n_unparsed} |"
        )
    table = "\n".join(lines) + "\n"
    table_path = os.path.join(out, "ablation.md")
    with open(table_path, "w", encoding="utf-8") as handle:
        handle.write(table)
    _eprint(f"ablation table: {table_path}")
    print(table, end="")
    return 0


def cmd_label(dataset: str) -> int:
    """Derive conclusion labels from a CSV of effect estimates, one printed line per row."""
    if not os.path.exists(dataset):
        _eprint(f"error: input file not found: {dataset}")
        return 2
    problems: list[str] = []
    outputs: list[str] = []
    with open(dataset, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            _eprint("error: empty CSV")
            return 1
        if [h.strip() for h in header] != LABEL_CSV_HEADER:
            _eprint(f"error: expected header {','.join(LABEL_CSV_HEADER)}")
            return 1
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(LABEL_CSV_HEADER):
                problems.append(f"row {rownum}: expected {len(LABEL_CSV_HEADER)} columns, got {len(row)}")
                continue
            study_id, point_s, low_s, high_s, kind = (cell.strip() for cell in row)
            try:
                estimate = EffectEstimate(
                    point=float(point_s), ci_low=float(low_s), ci_high=float(high_s), effect_kind=kind
                )
            except ValueError as exc:
                problems.append(f"row {rownum}: {exc}")
                continue
            outputs.append(f"{study_id} {label_to_str(label_from_ci(estimate))}")
    for line in outputs:
        print(line)
    if problems:
        for problem in problems:
            _eprint(problem)
        _eprint(f"{len(problems)} invalid rows")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urca",
        description="Evidence synthesis over clinical trial reports: retrieval, clustering, extraction, answering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a JSONL dataset")
    p_validate.add_argument("--dataset", required=True)

    p_run = sub.add_parser("run", help="run one pipeline variant over a dataset")
    p_run.add_argument("--dataset", required=True)
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--variant", default="urca")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--parallelism", type=int, default=1)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--ordering", choices=ORDERING_KINDS, default=None)

    p_ablate = sub.add_parser("ablate", help="compare variants (and ordering strategies)")
    p_ablate.add_argument("--dataset", required=True)
    p_ablate.add_argument("--config", default=None)
    p_ablate.add_argument("--variants", required=True, help="comma-separated variant names")
    p_ablate.add_argument("--ordering-sweep", action="store_true")
    p_ablate.add_argument("--out", required=True)
    p_ablate.add_argument("--parallelism", type=int, default=1)
    p_ablate.add_argument("--seed", type=int, default=None)

    p_label = sub.add_parser("label", help="derive gold labels from effect-estimate CSV rows")
    p_label.add_argument("--dataset", required=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("URCA_LOG_LEVEL", "WARNING"))
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args.dataset)
    if args.command == "run":
        return cmd_run(
            args.dataset,
            args.config,
            args.variant,
            args.out,
            parallelism=args.parallelism,
            seed=args.seed,
            ordering=args.ordering,
        )
    if args.command == "ablate":
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        return cmd_ablate(
            args.dataset,
            args.config,
            variants,
            args.out,
            ordering_sweep=args.ordering_sweep,
            parallelism=args.parallelism,
            seed=args.seed,
        )
    return cmd_label(args.dataset)


if __name__ == "__main__":
    sys.exit(main())
