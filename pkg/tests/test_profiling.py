#!/usr/bin/env python3
"""
Tests for the measurement matrix, repetition aggregation and the results format
"""

import json
import random

import pytest

from src.errors import AdapterUnavailableError, PlanError, ResultsFormatError
from src.launchers import DryRunAdapter
from src.models import (
    KindParameters,
    ProfileRecord,
    ResultSet,
    Subdomain,
    SyntheticPowerModel,
    WorkloadSpec,
)
from src.profiling import (
    aggregate_reps,
    load_results,
    merge_results,
    run_matrix,
    save_results,
)
from src.samplers import CounterCsvSampler, SyntheticSampler
from src.sampling import load_synthetic_model
from src.topology import FIXTURES_DIR, enumerate_targets, load_fixture_topology, select_targets

REFERENCE_TEXT = (FIXTURES_DIR / "table1.results").read_text(encoding="utf-8")


def _record(app="BT", size="A", kind="LocalDRAM", threads=18, rep=0, watts=80.0, duration=10.0):
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


class TestRunMatrix:
    """Test matrix orchestration on the synthetic backend"""

    def setup_method(self):
        """Set up test fixtures"""
        self.topo = load_fixture_topology("paper-machine")
        self.targets = select_targets(enumerate_targets(self.topo, 0), ["LocalDRAM", "LocalNVM"])
        self.model = SyntheticPowerModel(
            kinds={
                "LocalDRAM": KindParameters(base_w=70.0, slope_w_per_thread=0.5),
                "LocalNVM": KindParameters(base_w=66.0, slope_w_per_thread=0.3),
            }
        )
        self.workload = WorkloadSpec(name="BT", size_label="A", threads=1, builtin="triad")

    async def test_cardinality(self):
        """Test one workload, two kinds, one thread count, one rep gives two records"""
        # Act
        rs = await run_matrix(
            self.topo, self.targets, [self.workload], [18], 1, SyntheticSampler(self.model, seed=1)
        )

        # Assert
        assert len(rs.records) == 2
        assert [r.kind for r in rs.records] == ["LocalDRAM", "LocalNVM"]
        assert rs.records[0].avg_power_w == pytest.approx(79.0, rel=1e-9)
        assert rs.records[1].avg_power_w == pytest.approx(71.4, rel=1e-9)
        assert rs.provenance["failures"] == []
        assert rs.provenance["backend"] == "synthetic"

    async def test_reps_and_iteration_order(self):
        """Test reps produce distinct rep indices in (workload, kind, threads, rep) order"""
        rs = await run_matrix(
            self.topo,
            self.targets,
            [self.workload],
            [1, 4],
            3,
            SyntheticSampler(self.model, seed=1),
        )

        assert [r.key[2:] for r in rs.records] == [
            (kind, threads, rep)
            for kind in ("LocalDRAM", "LocalNVM")
            for threads in (1, 4)
            for rep in range(3)
        ]

    async def test_energy_power_identity(self):
        """Test avg_power_w * duration_s == energy_j for every record"""
        sampler = SyntheticSampler(
            SyntheticPowerModel(
                kinds={"LocalDRAM": KindParameters(base_w=70.0, noise_sigma_w=3.0)}
            ),
            seed=9,
        )

        rs = await run_matrix(self.topo, self.targets[:1], [self.workload], [2, 8], 2, sampler)

        for record in rs.records:
            assert record.avg_power_w * record.duration_s == pytest.approx(record.energy_j, rel=1e-9)

    async def test_seeded_runs_are_reproducible(self):
        """Test two runs with the same seed save identical text"""
        noisy = SyntheticPowerModel(
            kinds={
                "LocalDRAM": KindParameters(base_w=70.0, noise_sigma_w=1.5),
                "LocalNVM": KindParameters(base_w=66.0, noise_sigma_w=1.5),
            }
        )

        a = await run_matrix(self.topo, self.targets, [self.workload], [4], 2, SyntheticSampler(noisy, seed=3))
        b = await run_matrix(self.topo, self.targets, [self.workload], [4], 2, SyntheticSampler(noisy, seed=3))

        assert save_results(a) == save_results(b)

    async def test_failed_cells_are_listed(self):
        """Test failed executions are excluded and enumerated in provenance"""
        # Arrange
        adapter = DryRunAdapter(fail_exit_code=2, fail_when=lambda p: p.target.name == "LocalNVM")

        # Act
        rs = await run_matrix(
            self.topo,
            self.targets,
            [self.workload],
            [18],
            2,
            SyntheticSampler(self.model, seed=1),
            adapter,
        )

        # Assert
        assert {r.kind for r in rs.records} == {"LocalDRAM"}
        failures = rs.provenance["failures"]
        assert [(f["kind"], f["rep"]) for f in failures] == [("LocalNVM", 0), ("LocalNVM", 1)]
        assert "exit status 2" in failures[0]["error"]

    async def test_sampler_failure_aborts_cell_only(self, tmp_path):
        """Test a missing counter file fails its cell and the matrix continues"""
        # Arrange
        (tmp_path / "BT.A__LocalDRAM__t18__r0.csv").write_text(
            "t_s,socket,subdomain,energy_uj\n0.0,0,DRAM,0\n10.0,0,DRAM,800000000\n"
        )

        # Act
        rs = await run_matrix(
            self.topo, self.targets, [self.workload], [18], 1, CounterCsvSampler(tmp_path)
        )

        # Assert
        assert len(rs.records) == 1
        assert rs.records[0].avg_power_w == 80.0
        assert rs.failures[0]["kind"] == "LocalNVM"

    async def test_remote_cells_read_memory_socket(self, tmp_path):
        """Test a remote kind is charged the counter of its node's socket, not the home one"""
        # Arrange
        targets = select_targets(enumerate_targets(self.topo, 0), ["RemoteDRAM"])
        (tmp_path / "BT.A__RemoteDRAM__t18__r0.csv").write_text(
            "t_s,socket,subdomain,energy_uj\n"
            "0.0,0,DRAM,0\n0.0,1,DRAM,0\n10.0,0,DRAM,50000000\n10.0,1,DRAM,900000000\n"
        )

        # Act
        rs = await run_matrix(
            self.topo, targets, [self.workload], [18], 1, CounterCsvSampler(tmp_path)
        )

        # Assert
        assert len(rs.records) == 1
        assert rs.records[0].socket == 1
        assert rs.records[0].avg_power_w == 90.0

    async def test_unavailable_adapter_aborts(self, mocker):
        """Test an unavailable adapter aborts the whole matrix"""
        adapter = DryRunAdapter()
        mocker.patch.object(adapter, "available", return_value=False)

        with pytest.raises(AdapterUnavailableError):
            await run_matrix(
                self.topo, self.targets, [self.workload], [1], 1,
                SyntheticSampler(self.model, seed=1), adapter,
            )

    async def test_empty_inputs(self):
        """Test empty targets, workloads or thread counts are rejected"""
        sampler = SyntheticSampler(self.model, seed=1)

        with pytest.raises(PlanError):
            await run_matrix(self.topo, [], [self.workload], [1], 1, sampler)
        with pytest.raises(PlanError):
            await run_matrix(self.topo, self.targets, [self.workload], [], 1, sampler)
        with pytest.raises(PlanError):
            await run_matrix(self.topo, self.targets, [self.workload], [1], 0, sampler)

    async def test_reference_calibrated_model(self):
        """Test the calibrated model reproduces the reference watts for all 16 cells"""
        # Arrange
        model = load_synthetic_model(FIXTURES_DIR / "reference_model.json")
        expected = {r.key: r.avg_power_w for r in load_results(REFERENCE_TEXT).records}
        workloads = [
            WorkloadSpec(name=app, size_label=size, threads=18, builtin="triad")
            for app, size in dict.fromkeys((k[0], k[1]) for k in expected)
        ]

        # Act
        rs = await run_matrix(
            self.topo, self.targets, workloads, [18], 1, SyntheticSampler(model, seed=2024)
        )

        # Assert
        assert len(rs.records) == 16
        for record in rs.records:
            assert record.avg_power_w == pytest.approx(expected[record.key], rel=1e-9)


class TestAggregateReps:
    """Test repetition collapsing"""

    def test_mean_of_reps(self):
        """Test three reps average to their mean with spread recorded"""
        # Arrange
        rs = ResultSet(
            records=tuple(_record(rep=i, watts=w) for i, w in enumerate([10.0, 12.0, 14.0]))
        )

        # Act
        agg = aggregate_reps(rs)

        # Assert
        assert len(agg.records) == 1
        assert agg.records[0].avg_power_w == 12.0
        assert agg.records[0].rep == 0
        assert agg.provenance["rep_stats"][0]["n"] == 3
        assert agg.provenance["rep_stats"][0]["power_std_w"] == pytest.approx(2.0)

    def test_single_rep_unchanged(self):
        """Test a single repetition keeps its value"""
        rs = ResultSet(records=(_record(watts=86.91),))

        assert aggregate_reps(rs).records == rs.records

    def test_empty(self):
        """Test an empty set stays empty"""
        assert aggregate_reps(ResultSet()).records == ()


class TestResultsFile:
    """Test results persistence"""

    def test_fixture_round_trip_is_bit_identical(self):
        """Test the reference fixture re-saves byte for byte"""
        # Act
        rs = load_results(REFERENCE_TEXT)

        # Assert
        assert len(rs.records) == 16
        assert save_results(rs) == REFERENCE_TEXT

    def test_record_field_order(self):
        """Test record lines carry exactly the documented fields in order"""
        line = save_results(ResultSet(records=(_record(),))).splitlines()[1]

        assert list(json.loads(line)) == [
            "app", "size", "kind", "threads", "rep",
            "duration_s", "energy_j", "avg_power_w", "socket", "subdomain",
        ]

    def test_empty_file(self):
        """Test an empty file gives an empty result set"""
        assert load_results("") == ResultSet()

    def test_duplicate_key_rejected(self):
        """Test a duplicate (app, size, kind, threads, rep) names its line"""
        lines = REFERENCE_TEXT.splitlines()
        text = "\n".join(lines + [lines[1]]) + "\n"

        with pytest.raises(ResultsFormatError) as exc_info:
            load_results(text)

        assert exc_info.value.line == len(lines) + 1

    def test_unknown_field_rejected(self):
        """Test records with extra fields are rejected"""
        lines = REFERENCE_TEXT.splitlines()
        record = json.loads(lines[1])
        record["node"] = 2
        text = "\n".join([lines[0], json.dumps(record)]) + "\n"

        with pytest.raises(ResultsFormatError) as exc_info:
            load_results(text)

        assert "node" in str(exc_info.value)
        assert exc_info.value.line == 2

    def test_malformed_line(self):
        """Test broken JSON reports its line"""
        text = REFERENCE_TEXT.splitlines()[0] + "\n{not json\n"

        with pytest.raises(ResultsFormatError) as exc_info:
            load_results(text)

        assert exc_info.value.line == 2

    def test_power_energy_mismatch_rejected(self):
        """Test a record whose watts disagree with energy/duration"""
        header = REFERENCE_TEXT.splitlines()[0]
        bad = (
            '{"app":"BT","size":"A","kind":"LocalDRAM","threads":18,"rep":0,"duration_s":10.0,'
            '"energy_j":800.0,"avg_power_w":81.0,"socket":0,"subdomain":"DRAM"}'
        )

        with pytest.raises(ResultsFormatError):
            load_results(f"{header}\n{bad}\n")

    def test_wrong_format_header(self):
        """Test an unknown format name"""
        with pytest.raises(ResultsFormatError):
            load_results('{"format":"other","provenance":{},"version":1}\n')

    def test_random_round_trips(self):
        """Test 1000 random result sets survive save then load"""
        rng = random.Random(5)
        for _ in range(1000):
            # Arrange
            records = {}
            for _ in range(rng.randint(0, 12)):
                duration = rng.uniform(0.01, 500.0)
                watts = rng.uniform(0.0, 400.0)
                record = ProfileRecord(
                    app=rng.choice(["BT", "CG", "miniFE", "XSBench"]),
                    size_label=rng.choice(["A", "B", "400", "large"]),
                    kind=rng.choice(["LocalDRAM", "LocalNVM", "RemoteDRAM"]),
                    threads=rng.randint(1, 64),
                    rep=rng.randint(0, 3),
                    duration_s=duration,
                    energy_j=watts * duration,
                    avg_power_w=watts,
                    socket=rng.randint(0, 1),
                    subdomain=rng.choice(list(Subdomain)),
                )
                records[record.key] = record
            rs = ResultSet(
                records=tuple(records.values()),
                provenance={"backend": "synthetic", "seed": rng.randint(0, 9), "failures": []},
            )

            # Act
            again = load_results(save_results(rs))

            # Assert
            assert again == rs


class TestMergeResults:
    """Test result set union"""

    def test_union_and_failures(self):
        """Test records and failures are concatenated"""
        a = ResultSet(records=(_record(app="BT"),), provenance={"backend": "synthetic", "failures": [{"app": "x"}]})
        b = ResultSet(records=(_record(app="CG"),), provenance={"backend": "synthetic", "failures": [{"app": "y"}]})

        merged = merge_results(a, b)

        assert [r.app for r in merged.records] == ["BT", "CG"]
        assert merged.failures == [{"app": "x"}, {"app": "y"}]

    def test_duplicate_rejected(self):
        """Test overlapping keys are rejected"""
        a = ResultSet(records=(_record(),))

        with pytest.raises(ResultsFormatError):
            merge_results(a, a)
