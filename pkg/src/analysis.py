#!/usr/bin/env python3
"""
Analysis of result sets: tie-aware memory-kind orderings, thread scaling, savings, trade-offs

Every function here is pure; inputs are immutable models.
"""

import math
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.stats import rankdata

from .errors import AnalysisError
from .models import (
    AggregateRanking,
    PowerModel,
    Prediction,
    ProfileRecord,
    Ranking,
    ResultSet,
    SavingsRow,
    SecondRankEntry,
    SecondRankReport,
    ThreadTrend,
    TradeoffBounds,
    TradeoffEntry,
    TradeoffTable,
)
from .profiling import aggregate_reps

DEFAULT_TIE_REL_TOL = 0.01


def _single_cell(records: Sequence[ProfileRecord]) -> Tuple[str, str, int]:
    if not records:
        raise AnalysisError("at least one record is required")
    cells = {(r.app, r.size_label, r.threads) for r in records}
    if len(cells) != 1:
        raise AnalysisError(f"records span several applications/thread counts: {sorted(cells)}")
    kinds = [r.kind for r in records]
    duplicates = sorted({k for k in kinds if kinds.count(k) > 1})
    if duplicates:
        raise AnalysisError(f"duplicate kind(s) {duplicates}; aggregate repetitions first")
    return next(iter(cells))


def rank_for_app(
    records: Sequence[ProfileRecord], tie_rel_tol: float = DEFAULT_TIE_REL_TOL
) -> Ranking:
    """Ascending-power tie groups; neighbours within tie_rel_tol of the lower value merge"""
    if tie_rel_tol < 0:
        raise AnalysisError(f"tie tolerance must be >= 0, got {tie_rel_tol}")
    app, size, threads = _single_cell(records)

    ordered = sorted(records, key=lambda r: (r.avg_power_w, r.kind))
    groups: List[List[str]] = [[ordered[0].kind]]
    for lower, upper in zip(ordered, ordered[1:]):
        if upper.avg_power_w - lower.avg_power_w <= tie_rel_tol * lower.avg_power_w:
            groups[-1].append(upper.kind)
        else:
            groups.append([upper.kind])

    return Ranking(
        app=app,
        size_label=size,
        threads=threads,
        groups=tuple(tuple(group) for group in groups),
        values={r.kind: r.avg_power_w for r in records},
    )


def rankings_from_results(
    rs: ResultSet, tie_rel_tol: float = DEFAULT_TIE_REL_TOL
) -> List[Ranking]:
    """One ranking per (app, size, threads) in order of first appearance"""
    cells: Dict[Tuple[str, str, int], List[ProfileRecord]] = {}
    for record in aggregate_reps(rs).records:
        cells.setdefault((record.app, record.size_label, record.threads), []).append(record)
    return [rank_for_app(records, tie_rel_tol) for records in cells.values()]


def fractional_ranks(ranking: Ranking) -> Dict[str, Fraction]:
    """Tie-group members share the mean of the positions they span"""
    ranks: Dict[str, Fraction] = {}
    position = 0
    for group in ranking.groups:
        shared = Fraction(2 * position + len(group) + 1, 2)
        for kind in group:
            ranks[kind] = shared
        position += len(group)
    return ranks


def aggregate_rank(rankings: Sequence[Ranking]) -> AggregateRanking:
    """Order kinds by mean fractional rank, then mean watts, then name"""
    if not rankings:
        raise AnalysisError("at least one ranking is required")
    kinds = set(rankings[0].values)
    for ranking in rankings[1:]:
        if set(ranking.values) != kinds:
            raise AnalysisError(
                f"mismatched kind sets: {ranking.label} has {sorted(ranking.values)}, "
                f"expected {sorted(kinds)}"
            )

    total_rank = {kind: Fraction(0) for kind in kinds}
    total_watts = {kind: 0.0 for kind in kinds}
    for ranking in rankings:
        for kind, rank in fractional_ranks(ranking).items():
            total_rank[kind] += rank
            total_watts[kind] += ranking.values[kind]

    n = len(rankings)
    mean_rank = {kind: total_rank[kind] / n for kind in kinds}
    mean_watts = {kind: total_watts[kind] / n for kind in kinds}
    thread_counts = {ranking.threads for ranking in rankings}
    order = sorted(kinds, key=lambda kind: (mean_rank[kind], mean_watts[kind], kind))
    return AggregateRanking(
        threads=thread_counts.pop() if len(thread_counts) == 1 else None,
        mean_rank={kind: float(mean_rank[kind]) for kind in order},
        mean_watts={kind: mean_watts[kind] for kind in order},
        order=tuple(order),
    )


def spearman(threads: Sequence[float], power: Sequence[float]) -> float:
    """Spearman rank correlation, average ranks for ties"""
    if len(threads) != len(power):
        raise AnalysisError(f"length mismatch: {len(threads)} thread values, {len(power)} powers")
    if len(threads) < 2:
        raise AnalysisError("at least 2 points are required")

    x = rankdata(np.asarray(threads, dtype=float), method="average")
    y = rankdata(np.asarray(power, dtype=float), method="average")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0:
        raise AnalysisError("degenerate input: all thread counts are equal")
    if syy == 0:
        raise AnalysisError("degenerate input: power is constant")
    rho = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, rho))


def fit_power_model(
    threads: Sequence[int], power: Sequence[float], kind: str = ""
) -> PowerModel:
    """Ordinary least squares P = a + b*t over >= 2 distinct thread counts"""
    if len(threads) != len(power):
        raise AnalysisError(f"length mismatch: {len(threads)} thread values, {len(power)} powers")
    if len(set(threads)) < 2:
        raise AnalysisError("at least 2 distinct thread counts are required")

    t = np.asarray(threads, dtype=float)
    p = np.asarray(power, dtype=float)
    dt = t - t.mean()
    slope = float(np.dot(dt, p - p.mean()) / np.dot(dt, dt))
    intercept = float(p.mean() - slope * t.mean())

    residuals = p - (intercept + slope * t)
    ss_res = float(np.dot(residuals, residuals))
    ss_tot = float(np.dot(p - p.mean(), p - p.mean()))
    r2 = 1.0 if ss_tot == 0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))

    return PowerModel(
        kind=kind,
        intercept_w=intercept,
        slope_w_per_thread=slope,
        r2=r2,
        min_threads=int(min(threads)),
        max_threads=int(max(threads)),
        n_points=len(threads),
    )


def predict(model: PowerModel, threads: int) -> Prediction:
    if threads < 1:
        raise AnalysisError(f"threads must be >= 1, got {threads}")
    extrapolated = not model.min_threads <= threads <= model.max_threads
    if extrapolated:
        logger.warning(
            f"⚠️ Extrapolating {model.kind or 'model'} to {threads} threads "
            f"(observed {model.min_threads}-{model.max_threads})"
        )
    return Prediction(
        threads=threads,
        watts=model.intercept_w + model.slope_w_per_thread * threads,
        extrapolated=extrapolated,
    )


def thread_trends(rs: ResultSet) -> List[ThreadTrend]:
    """Spearman rho and a linear model per (app, size, kind) seen at >= 2 thread counts"""
    series: Dict[Tuple[str, str, str], List[Tuple[int, float]]] = {}
    for record in aggregate_reps(rs).records:
        key = (record.app, record.size_label, record.kind)
        series.setdefault(key, []).append((record.threads, record.avg_power_w))

    trends = []
    for (app, size, kind), points in series.items():
        points.sort()
        threads = [t for t, _ in points]
        power = [p for _, p in points]
        if len(set(threads)) < 2:
            continue
        rho = spearman(threads, power) if len(set(power)) > 1 else None
        trends.append(
            ThreadTrend(
                app=app,
                size_label=size,
                kind=kind,
                rho=rho,
                model=fit_power_model(threads, power, kind=kind),
            )
        )
    return trends


def savings(ref_watts: float, alt_watts: float) -> float:
    """Fraction of the reference power saved by the alternative; negative when it costs more"""
    if ref_watts <= 0:
        raise AnalysisError(f"reference power must be > 0, got {ref_watts}")
    return (ref_watts - alt_watts) / ref_watts


def savings_matrix(rankings: Sequence[Ranking], reference_kind: str) -> List[SavingsRow]:
    """Savings of every other kind against reference_kind, per application"""
    kinds = {kind for ranking in rankings for kind in ranking.values}
    if len(kinds) < 2:
        return []
    if reference_kind not in kinds:
        raise AnalysisError(f"unknown reference kind '{reference_kind}' (known: {sorted(kinds)})")

    rows = []
    for ranking in rankings:
        if reference_kind not in ranking.values:
            continue
        ref = ranking.values[reference_kind]
        rows.append(
            SavingsRow(
                app=ranking.app,
                size_label=ranking.size_label,
                threads=ranking.threads,
                reference=reference_kind,
                savings={
                    kind: savings(ref, watts)
                    for kind, watts in ranking.values.items()
                    if kind != reference_kind
                },
            )
        )
    return rows


def second_rank_report(rankings: Sequence[Ranking]) -> SecondRankReport:
    """Whether the second tie group is the same set of kinds for every application"""
    entries = []
    insufficient = []
    for ranking in rankings:
        if len(ranking.groups) < 2:
            insufficient.append(ranking.label)
            entries.append(
                SecondRankEntry(app=ranking.app, size_label=ranking.size_label, threads=ranking.threads)
            )
            continue
        entries.append(
            SecondRankEntry(
                app=ranking.app,
                size_label=ranking.size_label,
                threads=ranking.threads,
                second=tuple(sorted(ranking.groups[1])),
            )
        )

    seconds = {entry.second for entry in entries if entry.second is not None}
    return SecondRankReport(
        consistent=len(seconds) <= 1,
        entries=tuple(entries),
        insufficient=tuple(insufficient),
    )


def tradeoff_bounds(records: Sequence[ProfileRecord]) -> TradeoffBounds:
    if not records:
        raise AnalysisError("at least one record is required")
    power = [r.avg_power_w for r in records]
    runtime = [r.duration_s for r in records]
    return TradeoffBounds(
        power_min=min(power),
        power_max=max(power),
        runtime_min=min(runtime),
        runtime_max=max(runtime),
    )


def _normalize(value: float, low: float, high: float) -> float:
    if high <= low:
        return 0.0
    return (value - low) / (high - low)


def tradeoff_score(
    power_w: float, runtime_s: float, weight_power: float, bounds: TradeoffBounds
) -> float:
    """w * norm(power) + (1 - w) * norm(runtime); lower is better"""
    if not 0.0 <= weight_power <= 1.0:
        raise AnalysisError(f"invalid weight {weight_power}: must be in [0, 1]")
    return weight_power * _normalize(power_w, bounds.power_min, bounds.power_max) + (
        1.0 - weight_power
    ) * _normalize(runtime_s, bounds.runtime_min, bounds.runtime_max)


def tradeoff_table(records: Sequence[ProfileRecord], weight_power: float) -> TradeoffTable:
    app, size, threads = _single_cell(records)
    bounds = tradeoff_bounds(records)
    entries = [
        TradeoffEntry(
            kind=r.kind,
            power_w=r.avg_power_w,
            runtime_s=r.duration_s,
            score=tradeoff_score(r.avg_power_w, r.duration_s, weight_power, bounds),
        )
        for r in records
    ]
    entries.sort(key=lambda entry: (entry.score, entry.kind))
    return TradeoffTable(
        app=app,
        size_label=size,
        threads=threads,
        weight_power=weight_power,
        entries=tuple(entries),
    )


def tradeoff_tables(rs: ResultSet, weight_power: float) -> List[TradeoffTable]:
    cells: Dict[Tuple[str, str, int], List[ProfileRecord]] = {}
    for record in aggregate_reps(rs).records:
        cells.setdefault((record.app, record.size_label, record.threads), []).append(record)
    return [tradeoff_table(records, weight_power) for records in cells.values()]


def default_reference(kinds: Sequence[str]) -> Optional[str]:
    """LocalDRAM when present, otherwise the first kind seen"""
    if not kinds:
        return None
    return "LocalDRAM" if "LocalDRAM" in kinds else kinds[0]
