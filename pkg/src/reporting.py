#!/usr/bin/env python3
"""
Report assembly and rendering: structured analysis document, application-by-kind power grid, plot-ready CSV
"""

import csv
import io
from typing import Dict, List, Optional, Tuple

from .analysis import (
    DEFAULT_TIE_REL_TOL,
    aggregate_rank,
    default_reference,
    rankings_from_results,
    savings_matrix,
    second_rank_report,
    thread_trends,
    tradeoff_tables,
)
from .models import AnalysisReport, ProfileRecord, Ranking, ResultSet
from .profiling import aggregate_reps

SERIES_CSV_HEADER = ["app", "size", "kind", "threads", "avg_power_w", "duration_s"]
MISSING_CELL = "--"


def build_report(
    rs: ResultSet,
    tie_rel_tol: float = DEFAULT_TIE_REL_TOL,
    reference_kind: Optional[str] = None,
    weight_power: Optional[float] = None,
) -> AnalysisReport:
    rankings = rankings_from_results(rs, tie_rel_tol)
    kinds = rs.kinds

    # one aggregate per thread count; only applications measured on every kind contribute
    by_threads: Dict[int, List[Ranking]] = {}
    for ranking in rankings:
        if set(ranking.values) == set(kinds):
            by_threads.setdefault(ranking.threads, []).append(ranking)
    aggregates = [aggregate_rank(group) for group in by_threads.values()]

    reference = None
    rows = []
    if len(kinds) >= 2:
        reference = reference_kind or default_reference(kinds)
        assert reference is not None
        rows = savings_matrix(rankings, reference)

    return AnalysisReport(
        tie_rel_tol=tie_rel_tol,
        reference_kind=reference,
        rankings=tuple(rankings),
        aggregates=tuple(aggregates),
        trends=tuple(thread_trends(rs)),
        savings=tuple(rows),
        second_rank=second_rank_report(rankings) if rankings else None,
        tradeoff=tuple(tradeoff_tables(rs, weight_power)) if weight_power is not None else (),
        failures=tuple(rs.failures),
    )


def _first_appearance(records: List[ProfileRecord]) -> Tuple[List[str], List[str], List[int]]:
    labels = list(dict.fromkeys(r.label for r in records))
    kinds = list(dict.fromkeys(r.kind for r in records))
    threads = list(dict.fromkeys(r.threads for r in records))
    return labels, kinds, threads


def render_power_grid(rs: ResultSet) -> str:
    """Applications as rows, memory kinds as columns, average watts at 2 decimals"""
    records = list(aggregate_reps(rs).records)
    if not records:
        return ""
    labels, kinds, thread_counts = _first_appearance(records)
    watts: Dict[Tuple[str, str, int], float] = {
        (r.label, r.kind, r.threads): r.avg_power_w for r in records
    }

    blocks = []
    for threads in thread_counts:
        rows = [label for label in labels if any((label, k, threads) in watts for k in kinds)]
        cells = {
            (label, kind): (
                f"{watts[(label, kind, threads)]:.2f}"
                if (label, kind, threads) in watts
                else MISSING_CELL
            )
            for label in rows
            for kind in kinds
        }
        first_width = max(len("application"), *(len(label) for label in rows))
        widths = [max(len(kind), *(len(cells[(label, kind)]) for label in rows)) for kind in kinds]

        lines = [
            f"Memory power consumption [W] at {threads} threads",
            "  ".join(
                ["application".ljust(first_width)]
                + [kind.rjust(width) for kind, width in zip(kinds, widths)]
            ),
            "  ".join(["-" * first_width] + ["-" * width for width in widths]),
        ]
        for label in rows:
            lines.append(
                "  ".join(
                    [label.ljust(first_width)]
                    + [cells[(label, kind)].rjust(width) for kind, width in zip(kinds, widths)]
                )
            )
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def _format_ranking(ranking: Ranking) -> str:
    groups = []
    for group in ranking.groups:
        names = " = ".join(group)
        groups.append(f"{{{names}}}" if len(group) > 1 else names)
    return " < ".join(groups)


def render_report_text(report: AnalysisReport) -> str:
    lines = [f"Tie tolerance: {report.tie_rel_tol * 100:g}% relative", ""]

    lines.append("Rankings (ascending average power)")
    for ranking in report.rankings:
        lines.append(f"  {ranking.label} @ {ranking.threads} threads: {_format_ranking(ranking)}")

    for aggregate in report.aggregates:
        lines += ["", f"Aggregate order at {aggregate.threads} threads ({aggregate.method})"]
        for position, kind in enumerate(aggregate.order, start=1):
            lines.append(
                f"  {position}. {kind}: mean rank {aggregate.mean_rank[kind]:.2f}, "
                f"mean {aggregate.mean_watts[kind]:.2f} W"
            )

    if report.savings:
        lines += ["", f"Savings vs {report.reference_kind}"]
        for row in report.savings:
            values = ", ".join(f"{kind} {value * 100:.2f}%" for kind, value in row.savings.items())
            lines.append(f"  {row.app}.{row.size_label} @ {row.threads} threads: {values}")

    if report.second_rank is not None:
        verdict = "consistent" if report.second_rank.consistent else "inconsistent"
        lines += ["", f"Second rank: {verdict}"]
        for entry in report.second_rank.entries:
            second = ", ".join(entry.second) if entry.second is not None else "(single group)"
            lines.append(f"  {entry.app}.{entry.size_label} @ {entry.threads} threads: {second}")

    if report.trends:
        lines += ["", "Thread scaling"]
        for trend in report.trends:
            rho = f"{trend.rho:.3f}" if trend.rho is not None else "n/a"
            lines.append(
                f"  {trend.app}.{trend.size_label} {trend.kind}: rho {rho}, "
                f"P = {trend.model.intercept_w:.3f} + {trend.model.slope_w_per_thread:.3f}*t "
                f"(r2 {trend.model.r2:.3f})"
            )

    for table in report.tradeoff:
        lines += [
            "",
            f"Trade-off {table.app}.{table.size_label} @ {table.threads} threads "
            f"(power weight {table.weight_power:g})",
        ]
        for entry in table.entries:
            lines.append(
                f"  {entry.kind}: score {entry.score:.3f} "
                f"({entry.power_w:.2f} W, {entry.runtime_s:.2f} s)"
            )

    if report.failures:
        lines += ["", f"Failed cells: {len(report.failures)}"]
        for failure in report.failures:
            lines.append(
                f"  {failure.get('app')}.{failure.get('size')} {failure.get('kind')} "
                f"t={failure.get('threads')} r={failure.get('rep')}: {failure.get('error')}"
            )

    return "\n".join(lines) + "\n"


def render_series_csv(rs: ResultSet) -> str:
    """Plot-ready power-vs-threads series, one row per aggregated cell"""
    records = list(aggregate_reps(rs).records)
    labels, kinds, _ = _first_appearance(records)
    records.sort(key=lambda r: (labels.index(r.label), kinds.index(r.kind), r.threads))

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SERIES_CSV_HEADER)
    for r in records:
        writer.writerow(
            [r.app, r.size_label, r.kind, r.threads, repr(r.avg_power_w), repr(r.duration_s)]
        )
    return buffer.getvalue()
