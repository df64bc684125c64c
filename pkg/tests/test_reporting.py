#!/usr/bin/env python3
"""
Tests for report assembly and rendering
"""

from pathlib import Path

from src.models import ProfileRecord, ResultSet, Subdomain
from src.profiling import load_results
from src.reporting import (
    MISSING_CELL,
    build_report,
    render_report_text,
    render_series_csv,
    render_power_grid,
)
from src.topology import FIXTURES_DIR

GOLDEN_GRID = Path(__file__).parent / "golden" / "reference_grid.txt"


def _reference() -> ResultSet:
    return load_results((FIXTURES_DIR / "table1.results").read_text(encoding="utf-8"))


def _record(kind, watts, app="BT", size="A", threads=18, rep=0, duration=10.0):
    return ProfileRecord(
        app=app,
        size_label=size,
        kind=kind,
        threads=threads,
        rep=rep,
        duration_s=duration,
        energy_j=watts * duration,
        avg_power_w=watts,
        socket=0,
        subdomain=Subdomain.DRAM,
    )


class TestPowerGrid:
    """Test the plain-text power grid"""

    def test_matches_golden(self):
        """Test the reference results render byte for byte"""
        # Act
        grid = render_power_grid(_reference())

        # Assert
        assert grid == GOLDEN_GRID.read_text(encoding="utf-8")

    def test_missing_cell(self):
        """Test an unmeasured (application, kind) pair renders as a placeholder"""
        # Arrange
        rs = ResultSet(
            records=(
                _record("LocalDRAM", 80.0),
                _record("LocalNVM", 70.0),
                _record("LocalDRAM", 90.0, app="CG", size="W"),
            )
        )

        # Act
        lines = render_power_grid(rs).splitlines()

        # Assert
        assert lines[-1].split() == ["CG.W", "90.00", MISSING_CELL]

    def test_one_block_per_thread_count(self):
        """Test each thread count gets its own titled block"""
        rs = ResultSet(
            records=(_record("LocalDRAM", 80.0, threads=1), _record("LocalDRAM", 85.0, threads=18))
        )

        grid = render_power_grid(rs)

        assert "at 1 threads" in grid
        assert "at 18 threads" in grid
        assert grid.count("application") == 2

    def test_reps_are_averaged(self):
        """Test repetitions collapse to their mean"""
        rs = ResultSet(records=(_record("LocalDRAM", 80.0, rep=0), _record("LocalDRAM", 82.0, rep=1)))

        assert "81.00" in render_power_grid(rs)

    def test_empty(self):
        """Test an empty result set renders nothing"""
        assert render_power_grid(ResultSet()) == ""


class TestBuildReport:
    """Test the structured analysis document"""

    def test_reference_report(self):
        """Test rankings, aggregate, savings and second rank for the reference results"""
        # Act
        report = build_report(_reference())

        # Assert
        assert len(report.rankings) == 8
        assert [a.order for a in report.aggregates] == [("LocalNVM", "LocalDRAM")]
        assert report.reference_kind == "LocalDRAM"
        assert len(report.savings) == 8
        assert report.second_rank.consistent
        assert report.trends == ()
        assert report.tradeoff == ()

    def test_single_kind_has_no_savings(self):
        """Test one measured kind yields no savings section"""
        rs = ResultSet(records=(_record("LocalDRAM", 80.0),))

        report = build_report(rs)

        assert report.savings == ()
        assert report.reference_kind is None

    def test_incomplete_applications_skip_aggregate(self):
        """Test applications missing a kind are left out of the aggregate"""
        rs = ResultSet(
            records=(
                _record("LocalDRAM", 80.0),
                _record("LocalNVM", 70.0),
                _record("LocalDRAM", 90.0, app="CG", size="W"),
            )
        )

        report = build_report(rs)

        assert [a.order for a in report.aggregates] == [("LocalNVM", "LocalDRAM")]
        assert len(report.rankings) == 2

    def test_one_aggregate_per_thread_count(self):
        """Test a sweep aggregates each thread count separately"""
        # Arrange
        rs = ResultSet(
            records=(
                _record("LocalDRAM", 80.0, threads=1),
                _record("LocalNVM", 70.0, threads=1),
                _record("LocalDRAM", 60.0, threads=18),
                _record("LocalNVM", 75.0, threads=18),
                _record("LocalDRAM", 81.0, app="CG", size="W", threads=18),
                _record("LocalNVM", 79.0, app="CG", size="W", threads=18),
            )
        )

        # Act
        report = build_report(rs, tie_rel_tol=0.0)

        # Assert
        assert [a.threads for a in report.aggregates] == [1, 18]
        assert report.aggregates[0].order == ("LocalNVM", "LocalDRAM")
        assert report.aggregates[1].mean_rank == {"LocalDRAM": 1.5, "LocalNVM": 1.5}
        assert report.aggregates[1].order == ("LocalDRAM", "LocalNVM")

    def test_tradeoff_requested(self):
        """Test a weight adds one trade-off table per application"""
        report = build_report(_reference(), weight_power=0.5)

        assert len(report.tradeoff) == 8
        assert report.tradeoff[0].weight_power == 0.5


class TestReportText:
    """Test the human-readable report"""

    def test_sections(self):
        """Test the rendered text carries the headline numbers"""
        # Act
        text = render_report_text(build_report(_reference()))

        # Assert
        assert "Tie tolerance: 1% relative" in text
        assert "BT.A @ 18 threads: LocalNVM < LocalDRAM" in text
        assert "Aggregate order at 18 threads (mean fractional rank)" in text
        assert "1. LocalNVM: mean rank 1.00" in text
        assert "FT.A @ 18 threads: LocalNVM 26.83%" in text
        assert "Second rank: consistent" in text

    def test_tie_group_rendering(self):
        """Test tied kinds render inside braces"""
        rs = ResultSet(records=(_record("LocalDRAM", 50.2), _record("LocalNVM", 50.0)))

        text = render_report_text(build_report(rs))

        assert "{LocalNVM = LocalDRAM}" in text

    def test_failures_listed(self):
        """Test failed cells from provenance are listed"""
        rs = ResultSet(
            records=(_record("LocalDRAM", 80.0),),
            provenance={
                "failures": [
                    {"app": "BT", "size": "A", "kind": "LocalNVM", "threads": 18, "rep": 0, "error": "boom"}
                ]
            },
        )

        text = render_report_text(build_report(rs))

        assert "Failed cells: 1" in text
        assert "BT.A LocalNVM t=18 r=0: boom" in text


class TestSeriesCsv:
    """Test the plot-ready series"""

    def test_rows_sorted_by_threads(self):
        """Test rows group by application and kind with ascending threads"""
        # Arrange
        rs = ResultSet(
            records=(
                _record("LocalDRAM", 79.0, threads=18),
                _record("LocalDRAM", 70.5, threads=1),
                _record("LocalNVM", 66.3, threads=1),
            )
        )

        # Act
        lines = render_series_csv(rs).splitlines()

        # Assert
        assert lines == [
            "app,size,kind,threads,avg_power_w,duration_s",
            "BT,A,LocalDRAM,1,70.5,10.0",
            "BT,A,LocalDRAM,18,79.0,10.0",
            "BT,A,LocalNVM,1,66.3,10.0",
        ]
