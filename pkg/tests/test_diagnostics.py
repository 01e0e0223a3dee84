"""
Tests for the monitored quantities and the checks built on them
"""

import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from krf_lab._exceptions import UnsupportedModelError
from krf_lab.diagnostics import (
    RECORD_COLUMNS,
    alpha_consistency,
    c2_monitor,
    lambda_min,
    perelman_check,
    record,
    records_from_rows,
    ricci_decay_check,
    volume_window,
)
from krf_lab.flow_engine import make_state


def _sech_state(model, amplitude=0.3, shift=0.0):
    phi = amplitude / np.cosh(model.grid.xi[..., 0]) + shift
    return make_state(model, phi, 0.0, 1e-3)


def _row(rec):
    return np.array([getattr(rec, c) for c in RECORD_COLUMNS])


class TestRecord:
    """Test one diagnostics record"""

    def test_fixed_point(self, cp1_fs):
        """Test the Kähler-Einstein reference has vanishing defects at phi = 0"""
        state = make_state(cp1_fs, np.zeros(cp1_fs.grid.shape), 0.0, 1e-3)
        rec = record(state, cp1_fs)
        assert rec.sup_abs_phidot < 1e-10
        assert rec.osc_phi == 0.0
        assert rec.ricci_defect_l2 < 1e-8
        assert rec.sup_S < 1e-8
        assert rec.mass_ratio == pytest.approx(1.0, abs=1e-12)
        assert rec.volume_ratio == pytest.approx(1.0, abs=1e-8)
        assert rec.sup_trace_h == pytest.approx(1.0, abs=1e-12)
        assert math.isnan(rec.lambda_min)

    def test_ricci_potential_normalized(self, cp1_bergman):
        """Test f is normalized against dens_phi and differs from -phi_t by a constant"""
        rec = record(_sech_state(cp1_bergman), cp1_bergman)
        assert rec.f_normalization == pytest.approx(1.0, abs=1e-12)
        assert rec.f_phidot_spread < 1e-12
        assert rec.sup_abs_phidot > 1e-3
        assert rec.c2_A == 10.0

    def test_row_columns(self, cp1_bergman):
        """Test a record survives the series.csv row format"""
        rec = record(_sech_state(cp1_bergman), cp1_bergman)
        row = {k: repr(v) for k, v in rec.to_row().items()}
        assert list(rec.to_row()) == list(RECORD_COLUMNS)
        (back,) = records_from_rows([row])
        np.testing.assert_array_equal(_row(back), _row(rec))

    @pytest.mark.parametrize("delta", [0.3, -1.5])
    def test_regauged_matches_shifted_state(self, cp1_bergman, delta):
        """Test the gauge shift law reproduces a record of the shifted potential"""
        rec = record(_sech_state(cp1_bergman), cp1_bergman)
        shifted = record(_sech_state(cp1_bergman, shift=delta), cp1_bergman)
        np.testing.assert_allclose(_row(rec.regauged(delta)), _row(shifted), rtol=1e-9, atol=1e-9)


class TestVolumeWindow:
    """Test the volume window and the crude sup/inf bounds"""

    def test_fixed_point(self, cp1_fs):
        """Test the window collapses to the mass ratio at the fixed point"""
        state = make_state(cp1_fs, np.zeros(cp1_fs.grid.shape), 0.0, 1e-3)
        window = volume_window(record(state, cp1_fs), cp1_fs)
        assert window.passed
        assert window.lower == pytest.approx(window.upper, rel=1e-10)
        assert window.value == pytest.approx(1.0, abs=1e-12)

    def test_nontrivial_state(self, cp1_bergman):
        """Test the window holds for a perturbed potential"""
        window = volume_window(record(_sech_state(cp1_bergman), cp1_bergman), cp1_bergman)
        assert window.passed
        assert window.lower < window.value < window.upper

    def test_violation(self, cp1_bergman):
        """Test a value above the upper bound fails the window"""
        rec = record(_sech_state(cp1_bergman), cp1_bergman)
        window = volume_window(rec, cp1_bergman)
        broken = replace(rec, exp_minus_phi_avg=2.0 * window.upper)
        assert not volume_window(broken, cp1_bergman).passed


class TestLambdaMin:
    """Test the eigenvalue monitor"""

    def test_kahler_einstein_eigenvalue(self, cp1_fs):
        """Test the first eigenvalue is 1 on the Fubini-Study sphere"""
        state = make_state(cp1_fs, np.zeros(cp1_fs.grid.shape), 0.0, 1e-3)
        report = lambda_min(state, cp1_fs)
        assert report.lambda1 == pytest.approx(1.0, abs=0.05)
        assert report.gap < 0.05
        assert list(report.eigenvalues) == sorted(report.eigenvalues)

    def test_record_carries_eigenvalue(self, cp1_fs):
        """Test with_lambda fills lambda_min and lambda_gap"""
        state = make_state(cp1_fs, np.zeros(cp1_fs.grid.shape), 0.0, 1e-3)
        rec = record(state, cp1_fs, with_lambda=True)
        assert rec.lambda_min == pytest.approx(1.0, abs=0.05)
        assert not math.isnan(rec.lambda_gap)

    def test_mu_not_one(self, cp1_fs):
        """Test the monitor refuses mu != 1"""
        state = make_state(cp1_fs, np.zeros(cp1_fs.grid.shape), 0.0, 1e-3)
        with pytest.raises(UnsupportedModelError):
            lambda_min(state, cp1_fs, mu=0.5)


class TestC2Monitor:
    """Test the C^2 monitor"""

    def test_fixed_point(self, cp1_fs):
        """Test log Tr h - A phi vanishes at phi = 0"""
        state = make_state(cp1_fs, np.zeros(cp1_fs.grid.shape), 0.0, 1e-3)
        monitor = c2_monitor(state, cp1_fs, A=5.0)
        assert monitor.value == pytest.approx(0.0, abs=1e-12)
        assert monitor.A == 5.0
        assert len(monitor.argmax) == 1


def _series(times, **columns):
    return [
        SimpleNamespace(t=float(t), **{k: float(v[i]) for k, v in columns.items()})
        for i, t in enumerate(times)
    ]


class TestSeriesChecks:
    """Test checks over a time series of records"""

    def test_alpha_consistency(self):
        """Test an average satisfying the tail formula has a small defect"""
        times = np.linspace(0.0, 10.0, 1001)
        series = _series(times, alpha=np.exp(-2 * times) / 3, grad_phidot_norm2=np.exp(-2 * times))
        defect, _ = alpha_consistency(series)
        assert defect < 1e-4

    def test_alpha_inconsistency(self):
        """Test an average off the tail formula is detected"""
        times = np.linspace(0.0, 10.0, 1001)
        series = _series(times, alpha=np.exp(-2 * times), grad_phidot_norm2=np.exp(-2 * times))
        defect, where = alpha_consistency(series)
        assert defect > 0.1
        assert where == 0.0

    def test_perelman_bounded(self):
        """Test quantities bounded by their early maxima pass"""
        times = np.linspace(0.0, 10.0, 21)
        decay = 1.0 + np.exp(-times)
        series = _series(
            times, sup_abs_f=decay, sup_grad_f=decay, sup_abs_laplacian_f=decay
        )
        report = perelman_check(series)
        assert report["passed"]
        assert report["sup_abs_f"]["max"] == pytest.approx(2.0)

    def test_perelman_late_growth(self):
        """Test a late spike beyond the factor fails"""
        times = np.linspace(0.0, 10.0, 21)
        flat = np.ones_like(times)
        spike = flat.copy()
        spike[-1] = 5.0
        series = _series(times, sup_abs_f=flat, sup_grad_f=spike, sup_abs_laplacian_f=flat)
        report = perelman_check(series)
        assert not report["passed"]
        assert not report["sup_grad_f"]["passed"]
        assert report["sup_abs_f"]["passed"]

    def test_ricci_decay(self):
        """Test monotone decay below the threshold passes"""
        times = np.linspace(0.0, 20.0, 41)
        series = _series(times, ricci_defect_l2=np.exp(-times))
        report = ricci_decay_check(series)
        assert report["passed"]
        assert report["monotone_from"] == 0.0

    def test_ricci_decay_late_monotone(self):
        """Test the monotone stretch starts after a transient increase"""
        times = np.linspace(0.0, 20.0, 41)
        values = np.exp(-times)
        values[:4] = [0.1, 0.2, 0.4, 0.8]
        report = ricci_decay_check(_series(times, ricci_defect_l2=values))
        assert report["passed"]
        assert report["monotone_from"] == pytest.approx(times[3])

    @pytest.mark.parametrize(
        "values",
        [
            np.append(np.geomspace(1.0, 1e-8, 19), 2e-8),
            np.linspace(1.0, 1e-2, 20),
        ],
        ids=["growing-tail", "above-threshold"],
    )
    def test_ricci_decay_failures(self, values):
        """Test a growing tail or a large final defect fails"""
        times = np.arange(values.size, dtype=float)
        assert not ricci_decay_check(_series(times, ricci_defect_l2=values))["passed"]
