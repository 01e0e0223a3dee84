"""
Tests for the flow integrator and the initial-constant normalization
"""

import numpy as np
import pytest

from krf_lab._exceptions import (
    InvalidConfigurationError,
    StepCollapseError,
    TailNotConvergedError,
)
from krf_lab.flow_engine import (
    FlowConfig,
    Normalization,
    _jacobian,
    make_state,
    normalize_c0,
    provisional_constant,
    regauge,
    resume,
    run_flow,
    tail_average,
)
from krf_lab.persistence import RunDirectory


def _sech(model, amplitude=0.3):
    return amplitude / np.cosh(model.grid.xi[..., 0])


@pytest.fixture(scope="module")
def bergman_run(cp1_bergman):
    """CP^1 with the Bergman reference flowed to t = 20."""
    config = FlowConfig(t_end=20.0, t_norm=20.0, snapshot_every=1.0)
    return run_flow(cp1_bergman, config, sample_every=0.25)


class TestFlowConfig:
    """Test integrator settings validation"""

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"scheme": "euler"},
            {"t_end": 0.0},
            {"dt_min": 0.0},
            {"dt_init": 1e-12},
            {"dt_max": 1e-4},
            {"snapshot_every": 0.0},
        ],
    )
    def test_invalid(self, kwargs):
        """Test invalid settings raise InvalidConfigurationError"""
        with pytest.raises(InvalidConfigurationError):
            FlowConfig(**kwargs)


class TestFlowState:
    """Test state construction"""

    def test_constant_potential(self, cp1_bergman):
        """Test a constant potential moves only through the gauge term"""
        state = make_state(cp1_bergman, np.full(cp1_bergman.grid.shape, 0.7), 0.0, 1e-3)
        assert np.all(state.G == 0.0)
        np.testing.assert_allclose(state.phidot, 0.7 - cp1_bergman.fhat, atol=1e-14)

    def test_provisional_constant_of_zero(self, cp1_bergman):
        """Test the provisional constant is the average of fhat for phi0 = 0"""
        c0 = provisional_constant(cp1_bergman, np.zeros(cp1_bergman.grid.shape))
        assert c0 == pytest.approx(cp1_bergman.average(cp1_bergman.fhat), abs=1e-14)


class TestRunFlow:
    """Test integration runs"""

    def test_kahler_einstein_fixed_point(self, cp1_fs):
        """Test phi = 0 stays fixed on a Kähler-Einstein reference"""
        traj = run_flow(cp1_fs, FlowConfig(t_end=1.0))
        assert traj.status == "completed"
        assert traj.c0 == pytest.approx(0.0, abs=1e-14)
        assert np.abs(traj.final.phi).max() < 1e-12
        assert np.abs(traj.final.phidot).max() < 1e-12

    def test_sampling_cadence(self, bergman_run):
        """Test samples land on the cadence and snapshots on their grid"""
        np.testing.assert_allclose(bergman_run.times, np.linspace(0.0, 20.0, 81), atol=1e-12)
        assert [s.t for s in bergman_run.snapshots] == pytest.approx(list(range(21)))
        assert bergman_run.final.t == pytest.approx(20.0)

    def test_gradient_energy_decays(self, bergman_run):
        """Test ||grad phi_t||^2 decays along a converging run"""
        energy = bergman_run.column("grad_norm2")
        assert energy[0] > 1e-4
        assert energy[-1] < 1e-6 * energy[0]

    def test_imex_matches_rk2(self, cp1_fs):
        """Test both schemes agree over a short horizon"""
        phi0 = _sech(cp1_fs)
        imex_config = FlowConfig(t_end=2e-4, dt_init=1e-6, dt_max=1e-5, tol=1e-10)
        imex = run_flow(cp1_fs, imex_config, phi0=phi0)
        rk2 = run_flow(
            cp1_fs,
            FlowConfig(
                t_end=2e-4, dt_init=2e-7, dt_max=2e-7, dt_min=1e-9, scheme="rk2", adaptive=False
            ),
            phi0=phi0,
        )
        np.testing.assert_allclose(imex.final.phi, rk2.final.phi, atol=1e-6)

    def test_step_collapse(self, cp1_fs):
        """Test a step below dt_min stops the run"""
        config = FlowConfig(
            t_end=1.0, dt_init=0.05, dt_min=0.01, dt_max=0.05, scheme="rk2", tol=1e-14
        )
        traj = run_flow(cp1_fs, config, phi0=_sech(cp1_fs))
        assert traj.status == "step-collapse"
        assert "dt_min" in traj.message
        with pytest.raises(StepCollapseError):
            run_flow(cp1_fs, config, phi0=_sech(cp1_fs), on_collapse="raise")

    def test_resume_continues_bitwise(self, cp1_bergman, tmp_path):
        """Test resuming from the last snapshot reproduces an uninterrupted run"""
        run_dir = RunDirectory(tmp_path / "run", create=True)
        first = FlowConfig(t_end=1.0, snapshot_every=0.5)
        run_flow(cp1_bergman, first, phi0=_sech(cp1_bergman), run_dir=run_dir)
        assert [e.t for e in run_dir.snapshots()] == [0.0, 0.5, 1.0]

        second = FlowConfig(t_end=2.0, snapshot_every=0.5)
        resumed = resume(run_dir, cp1_bergman, second)
        straight = run_flow(cp1_bergman, second, phi0=_sech(cp1_bergman))
        assert resumed.samples[0].t == pytest.approx(1.5)
        np.testing.assert_allclose(resumed.final.phi, straight.final.phi, rtol=0, atol=1e-12)
        assert [e.t for e in run_dir.snapshots()][-1] == pytest.approx(2.0)

    def test_resume_without_snapshots(self, cp1_bergman, tmp_path):
        """Test resuming an empty run directory fails"""
        run_dir = RunDirectory(tmp_path / "empty", create=True)
        with pytest.raises(StepCollapseError):
            resume(run_dir, cp1_bergman, FlowConfig())


class TestGaugeMode:
    """Test the flow along the constant mode c * exp(t)"""

    def test_shift_grows_exponentially(self, cp1_bergman):
        """Test runs from phi0 and phi0 + c differ by c * exp(t)"""
        config = FlowConfig(t_end=5.0, dt_init=0.01, dt_max=0.01, adaptive=False)
        phi0 = _sech(cp1_bergman)
        base = run_flow(cp1_bergman, config, phi0=phi0, c0=0.0)
        shifted = run_flow(cp1_bergman, config, phi0=phi0, c0=0.5)
        assert [s.t for s in base.snapshots] == pytest.approx([0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
        for a, b in zip(base.snapshots, shifted.snapshots):
            np.testing.assert_allclose(b.phi - a.phi, 0.5 * np.exp(a.t), rtol=0, atol=1e-8)

    @pytest.mark.parametrize("scheme", ["imex", "rk2"])
    def test_order_under_halving(self, cp1_fs, scheme):
        """Test rk2 converges at second order and imex is exact on the gauge mode"""
        phi0 = np.ones(cp1_fs.grid.shape)
        errors = []
        for dt in (0.0625, 0.03125, 0.015625):
            config = FlowConfig(t_end=1.0, dt_init=dt, dt_max=dt, scheme=scheme, adaptive=False)
            final = run_flow(cp1_fs, config, phi0=phi0, c0=0.0).final
            errors.append(float(np.abs(final.phi - np.e).max()))
        if scheme == "imex":
            assert max(errors) < 1e-12
        else:
            orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
            assert np.all(orders >= 1.9)


class TestLinearization:
    """Test the implicit operator against the discrete right-hand side"""

    def test_jacobian_matches_directional_derivative(self, cp1_bergman):
        """Test tr(H^-1 D^2 v) is the derivative of G along v, edge nodes included"""
        phi = _sech(cp1_bergman)
        v = 1.0 / np.cosh(0.5 * cp1_bergman.grid.xi[..., 0])
        eps = 1e-7
        state = make_state(cp1_bergman, phi, 0.0, 1e-3)
        plus = make_state(cp1_bergman, phi + eps * v, 0.0, 1e-3).G
        minus = make_state(cp1_bergman, phi - eps * v, 0.0, 1e-3).G
        jv = _jacobian(cp1_bergman, state.hess) @ v.ravel()
        np.testing.assert_allclose(
            (plus - minus) / (2 * eps), jv, rtol=0, atol=1e-6 * np.abs(jv).max()
        )

    def test_linearization_is_stable(self, cp1_bergman):
        """Test the linearized operator has no growing modes"""
        state = make_state(cp1_bergman, _sech(cp1_bergman), 0.0, 1e-3)
        jac = _jacobian(cp1_bergman, state.hess).toarray()
        eig = np.linalg.eigvals(jac)
        assert eig.real.max() < 1e-9 * np.abs(eig).max()


class TestNormalization:
    """Test the initial-constant normalization"""

    def test_tail_average_of_constant(self):
        """Test the tail average of a constant energy is that constant"""
        times = np.linspace(0.0, 5.0, 501)
        np.testing.assert_allclose(tail_average(times, np.full(501, 2.0), 2.0), 2.0, rtol=1e-4)

    def test_regauged_alpha_matches_tail(self, bergman_run):
        """Test the normalized average of phi_t equals the weighted energy tail"""
        norm = normalize_c0(bergman_run)
        regauged = regauge(bergman_run, norm)
        energy = bergman_run.column("grad_norm2")
        expected = tail_average(bergman_run.times, energy, float(energy[-1]))
        alpha = regauged.column("alpha")
        # late samples carry the rounding of the provisional gauge constant
        np.testing.assert_allclose(alpha, expected, rtol=1e-9, atol=1e-7)
        assert alpha.min() >= -1e-7
        assert regauged.gauge == "normalized"
        assert regauged.c0 == pytest.approx(norm.c0)

    def test_normalized_run_converges(self, bergman_run):
        """Test phi_t vanishes at the end of a converging run in the normalized gauge"""
        regauged = regauge(bergman_run, normalize_c0(bergman_run))
        phidot = regauged.final.phidot
        assert np.abs(phidot).max() < 1e-5
        assert np.abs(phidot[:3]).max() < 1e-5
        assert np.abs(phidot[-3:]).max() < 1e-5

    def test_steps_grow_once_converging(self, bergman_run):
        """Test the controller is not held back by the outermost nodes"""
        assert bergman_run.final.step < 5000
        assert bergman_run.final.dt > 1e-2

    def test_short_run_tail_not_converged(self, cp1_bergman):
        """Test a short horizon leaves too much tail mass"""
        traj = run_flow(cp1_bergman, FlowConfig(t_end=2.0), sample_every=0.5)
        with pytest.raises(TailNotConvergedError):
            normalize_c0(traj)

    def test_round_trip(self, bergman_run):
        """Test Normalization survives to_dict/from_dict"""
        norm = normalize_c0(bergman_run)
        again = Normalization.from_dict(norm.to_dict())
        assert again.c0 == norm.c0
        assert again.shift_at(3.0) == pytest.approx(norm.shift_at(3.0))
        assert again.shift_at(3.1) == pytest.approx(norm.shift_at(3.1))
