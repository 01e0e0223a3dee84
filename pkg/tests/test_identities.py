"""
Tests for the chart identity suite
"""

import pytest

from krf_lab._exceptions import UnsupportedDimensionError
from krf_lab.identities import (
    IDENTITIES,
    IDENTITY_IDS,
    RESIDUAL_BOUND,
    IdentityConfig,
    random_setup,
    residual_bound,
    run_suite,
    verify_identity,
)


def _offset(side, amount):
    def moved(ctx):
        return side(ctx) + amount

    return moved


class TestIdentitySuite:
    """Test every identity on random configurations"""

    @pytest.mark.parametrize("identity", IDENTITY_IDS)
    @pytest.mark.parametrize("n", [1, 2])
    def test_identity_holds(self, identity, n):
        """Test the identity residual stays below the bound"""
        for seed in range(2):
            report = verify_identity(identity, IdentityConfig(seed=seed, n=n))
            assert report.passed, report.to_dict()
            assert report.rel_residual <= RESIDUAL_BOUND
            assert report.bound == residual_bound(identity)

    @pytest.mark.parametrize("identity", ["HDOT", "GENERAL_HEAT"])
    def test_off_shell_identities(self, identity):
        """Test identities that hold for any time family"""
        report = verify_identity(identity, IdentityConfig(seed=3, n=1, on_shell=False))
        assert report.passed
        assert report.on_shell is False

    def test_on_shell_forced(self):
        """Test flow-specific identities force the flow velocity"""
        report = verify_identity("KRF_SPECIAL", IdentityConfig(seed=1, n=1, on_shell=False))
        assert report.on_shell is True

    def test_run_suite_shape(self):
        """Test run_suite returns one report per identity, dimension and trial"""
        reports = run_suite(["diff", "bk"], n_values=(1,), trials=2, seed=5)
        assert [r.identity for r in reports] == ["DIFF", "DIFF", "BK", "BK"]
        assert [r.seed for r in reports[:2]] == [5, 6]
        assert all(r.passed for r in reports)

    def test_report_is_json_ready(self):
        """Test to_dict() carries the residual and point"""
        record = verify_identity("DIFF", IdentityConfig(seed=0, n=2)).to_dict()
        assert set(record) >= {"identity", "rel_residual", "point", "passed"}
        assert len(record["point"]) == 2


class TestResidualBounds:
    """Test the per-identity pass bounds"""

    def test_bounds(self):
        """Test the tighter bounds and the default"""
        assert residual_bound("nabla3") == 1e-10
        assert residual_bound("KRF_SPECIAL") == 1e-9
        assert residual_bound("BK") == RESIDUAL_BOUND

    @pytest.mark.parametrize("n", [1, 2])
    def test_nabla3_over_many_configurations(self, n):
        """Test the third covariant derivative symmetry to 1e-10 on 100 configurations"""
        for seed in range(100):
            report = verify_identity("NABLA3", IdentityConfig(seed=seed, n=n))
            assert report.bound == 1e-10
            assert report.passed, report.to_dict()
            assert report.rel_residual <= 1e-10

    @pytest.mark.parametrize("n", [1, 2])
    def test_krf_special_max_norm(self, n):
        """Test the flow identity is judged on the absolute max-norm residual"""
        for seed in range(5):
            report = verify_identity("KRF_SPECIAL", IdentityConfig(seed=seed, n=n))
            assert report.passed, report.to_dict()
            assert report.abs_residual <= 1e-9

    def test_tight_bound_rejects_loose_residual(self, monkeypatch):
        """Test a residual the default bound accepts fails the NABLA3 bound"""
        config = IdentityConfig(seed=0, n=1)
        base = verify_identity("NABLA3", config)
        scale = max(1.0, base.lhs, base.rhs)
        lhs, rhs, *flags = IDENTITIES["NABLA3"]
        monkeypatch.setitem(IDENTITIES, "NABLA3", (_offset(lhs, 1e-9 * scale), rhs, *flags))
        report = verify_identity("NABLA3", config)
        assert 1e-10 < report.rel_residual < RESIDUAL_BOUND
        assert not report.passed


class TestSideIndependence:
    """Test the two sides of an identity are evaluated independently"""

    @pytest.mark.parametrize("identity", ["BK", "EXPLICIT1", "PARA_C3"])
    @pytest.mark.parametrize("side", [0, 1])
    def test_offset_one_side(self, monkeypatch, identity, side):
        """Test moving one side changes the residual and leaves the other side alone"""
        config = IdentityConfig(seed=2, n=2)
        base = verify_identity(identity, config)
        entry = list(IDENTITIES[identity])
        entry[side] = _offset(entry[side], 0.25)
        monkeypatch.setitem(IDENTITIES, identity, tuple(entry))
        moved = verify_identity(identity, config)

        assert base.passed
        assert not moved.passed
        assert moved.abs_residual == pytest.approx(0.25, abs=1e-6)
        untouched = "rhs" if side == 0 else "lhs"
        assert getattr(moved, untouched) == getattr(base, untouched)


class TestIdentityErrors:
    """Test error handling"""

    def test_unknown_identity(self):
        """Test an unknown id is a KeyError"""
        with pytest.raises(KeyError):
            verify_identity("NOPE")

    def test_unsupported_dimension(self):
        """Test n = 3 is rejected"""
        with pytest.raises(UnsupportedDimensionError):
            random_setup(IdentityConfig(n=3))

    def test_random_setup_deterministic(self):
        """Test a seed selects the same configuration"""
        a = random_setup(IdentityConfig(seed=11, n=1))
        b = random_setup(IdentityConfig(seed=11, n=1))
        assert complex(a.point[0]) == complex(b.point[0])


class TestIdentityBenchmark:
    """Benchmark one identity evaluation"""

    def test_benchmark_bk(self, benchmark):
        """Benchmark the Bochner-Kodaira identity on C^2"""
        report = benchmark(verify_identity, "BK", IdentityConfig(seed=0, n=2))
        assert report.passed
