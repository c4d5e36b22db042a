import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.models import ScalingLaw, TimingRecord
from src.services.perf import (
    amdahl_speedup,
    build_report,
    fit_amdahl,
    fit_gustafson,
    fit_serial_fraction,
    format_table,
    gustafson_speedup,
    median_by_workers,
    speedups,
)
from src.storage import read_timings
from src.utils import ArgumentError

WORKERS = [1, 2, 4, 8, 16, 32]


def record(n: int, total: float) -> TimingRecord:
    """Split a total 50/30/20 over the Mg, LS and film buckets"""
    return TimingRecord(workers=n, ls_pde=0.3 * total, mg_pde=0.5 * total, film_pde=0.2 * total)


def strong_records(f: float, t1: float = 100.0):
    return [record(n, t1 / float(amdahl_speedup(f, n))) for n in WORKERS]


def weak_records(f: float, t1: float = 10.0):
    return [record(n, n * t1 / float(gustafson_speedup(f, n))) for n in WORKERS]


class TestModels:
    def test_amdahl_limits(self):
        assert amdahl_speedup(0.0, 8) == pytest.approx(8.0)
        assert amdahl_speedup(1.0, 8) == pytest.approx(1.0)
        assert amdahl_speedup(0.1, 1) == pytest.approx(1.0)

    def test_gustafson_limits(self):
        assert gustafson_speedup(0.0, 8) == pytest.approx(8.0)
        assert gustafson_speedup(1.0, 8) == pytest.approx(1.0)


class TestSpeedups:
    def test_strong(self):
        s = speedups([record(1, 10.0), record(2, 5.0), record(4, 4.0)])
        assert s == pytest.approx([1.0, 2.0, 2.5])

    def test_weak_is_scaled(self):
        s = speedups([record(1, 10.0), record(4, 12.5)], weak=True)
        assert s == pytest.approx([1.0, 3.2])

    def test_missing_baseline(self):
        with pytest.raises(ArgumentError):
            speedups([record(2, 5.0), record(4, 3.0)])

    def test_non_positive_total(self):
        with pytest.raises(ArgumentError):
            speedups([record(1, 10.0), record(2, 0.0)])

    def test_repeated_counts_use_the_median(self):
        merged = median_by_workers([record(2, 4.0), record(1, 10.0), record(2, 6.0), record(2, 100.0)])
        assert [r.workers for r in merged] == [1, 2]
        assert merged[1].total == pytest.approx(6.0)


class TestFits:
    def test_recorded_timings_amdahl(self, timings_path):
        f = fit_amdahl(read_timings(timings_path))
        assert f == pytest.approx(0.01, abs=0.005)

    def test_synthetic_amdahl(self):
        assert fit_amdahl(strong_records(0.25)) == pytest.approx(0.25, abs=1e-6)

    def test_synthetic_gustafson(self):
        assert fit_gustafson(weak_records(0.18)) == pytest.approx(0.18, abs=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(f=st.floats(min_value=0.01, max_value=0.99))
    def test_amdahl_recovers_any_fraction(self, f):
        assert fit_amdahl(strong_records(f)) == pytest.approx(f, abs=1e-5)

    @settings(max_examples=25, deadline=None)
    @given(f=st.floats(min_value=0.01, max_value=0.99))
    def test_gustafson_recovers_any_fraction(self, f):
        assert fit_gustafson(weak_records(f)) == pytest.approx(f, abs=1e-5)

    def test_perfect_scaling_is_zero(self):
        assert fit_serial_fraction(WORKERS, WORKERS, ScalingLaw.AMDAHL) == 0.0

    def test_no_scaling_is_one(self):
        assert fit_serial_fraction(WORKERS, np.ones(len(WORKERS)), ScalingLaw.GUSTAFSON) == 1.0

    def test_single_count_cannot_be_fitted(self):
        with pytest.raises(ArgumentError):
            fit_amdahl([record(1, 10.0), record(1, 11.0)])


class TestReport:
    def test_strong_report(self):
        report = build_report(strong_records(0.1))
        assert report.worker_counts == WORKERS
        assert report.efficiencies[0] == pytest.approx(1.0)
        assert not any(report.superlinear)
        assert report.f_amdahl == pytest.approx(0.1, abs=1e-6)
        assert report.f_gustafson is None

    def test_weak_report(self):
        report = build_report(weak_records(0.3), weak=True)
        assert report.f_gustafson == pytest.approx(0.3, abs=1e-6)
        assert report.f_amdahl is None

    def test_superlinear_flag(self):
        report = build_report([record(1, 10.0), record(2, 4.0)])
        assert report.superlinear == [False, True]
        assert "Superlinear efficiency at N = 2" in format_table(report)

    def test_table_rows(self, timings_path):
        table = format_table(build_report(read_timings(timings_path)))
        lines = table.splitlines()
        assert lines[0] == "Strong-scaling test result"
        labels = [line.split("  ")[0].strip() for line in lines[3:9]]
        assert labels == ["LS PDE", "Mg PDE", "Film PDE", "Total time (s)", "Speedup", "Efficiency"]
        assert lines[1].split()[1:] == ["1", "8", "10", "16", "40", "60", "90"]
        assert "28.42" in lines[6]
        assert "Amdahl serial fraction f = 0.0" in table

    def test_weak_table_title(self):
        assert format_table(build_report(weak_records(0.2), weak=True)).startswith("Weak-scaling test result")
