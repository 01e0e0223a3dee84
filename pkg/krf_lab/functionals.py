"""Energy functionals along the flow.

Top-degree products of invariant (1,1)-forms reduce to mixed discriminants of
their log-coordinate Hessians: ``omega_0^i omega_phi^(n-i)`` becomes
``D(H0[i], H[n-i]) dxi`` with ``D(A, ..., A) = det A``.  The reference Ricci
form is ``-D^2 log dens0``; the linear term ``sum xi_i`` of the chart
determinant is pluriharmonic and drops out.

Integrals use the model quadrature (box trapezoid plus lumped exterior mass),
so ``F = 0`` holds to rounding at ``phi = 0``.
"""

import logging
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .flow_engine import FlowState
from .toric_models import ToricModel

logger = logging.getLogger(__name__)

__all__ = [
    "FunctionalSample",
    "FUNCTIONAL_COLUMNS",
    "evaluate",
    "mixed_discriminant",
    "check_inequalities",
    "nu_difference_check",
    "samples_from_rows",
]


@dataclass(frozen=True)
class FunctionalSample:
    """Functionals at one time.

    Attributes:
        J: Aubin-Yau functional ``(avg_phi0 - avg_phi_dens / mass_ratio) / 2``;
            dividing by the discrete mass keeps it blind to constants.
        F0: ``J - avg_phi0``.
        F: ``F0 - log_avg_exp``.
        nu: Mabuchi K-energy.
        avg_phi0: ``(1/V) int phi dens0``.
        avg_phi_dens: ``(1/V) int phi dens_phi``.
        log_avg_exp: ``log (1/V) int exp(fhat - phi) dens0``.
        mass_ratio: ``(1/V) int dens_phi``.
        nu_constant_weight: Rate of change of ``nu`` under ``phi -> phi - c``.
    """

    t: float
    J: float
    F0: float
    F: float
    nu: float
    avg_phi0: float
    avg_phi_dens: float
    log_avg_exp: float
    mass_ratio: float
    nu_constant_weight: float

    def to_row(self) -> dict:
        return asdict(self)

    def shifted(self, delta: float) -> "FunctionalSample":
        """Same metric, potential shifted by the constant ``delta``."""
        avg_phi0 = self.avg_phi0 + delta
        avg_phi_dens = self.avg_phi_dens + delta * self.mass_ratio
        log_avg = self.log_avg_exp - delta
        J = 0.5 * (avg_phi0 - avg_phi_dens / self.mass_ratio)
        F0 = J - avg_phi0
        return replace(
            self,
            J=J,
            F0=F0,
            F=F0 - log_avg,
            nu=self.nu - delta * self.nu_constant_weight,
            avg_phi0=avg_phi0,
            avg_phi_dens=avg_phi_dens,
            log_avg_exp=log_avg,
        )


FUNCTIONAL_COLUMNS = tuple(f.name for f in fields(FunctionalSample))


def samples_from_rows(rows) -> list:
    return [FunctionalSample(**{c: float(r[c]) for c in FUNCTIONAL_COLUMNS}) for r in rows]


def mixed_discriminant(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``D(A, B)`` for fields of 2x2 matrices, by polarization.

    For 1x1 fields this is ``(A + B) / 2``, the mean of the two mixed terms.
    """
    if A.shape[-1] == 1:
        return 0.5 * (A[..., 0, 0] + B[..., 0, 0])
    return 0.5 * (np.linalg.det(A + B) - np.linalg.det(A) - np.linalg.det(B))


def _products(model: ToricModel, hess: np.ndarray, dens: np.ndarray) -> tuple:
    """Densities of ``Ric(omega_0) sum omega_0^i omega^(n-1-i)`` and ``sum omega_0^i omega^(n-i)``.

    The ``i = 0`` energy term uses ``dens`` so that it matches the entropy measure.
    """
    H0 = np.asarray(model.hess0)
    ric = model.ricci0
    if model.n == 1:
        ricci_term = ric[..., 0, 0]
        energy_term = H0[..., 0, 0] + dens
    else:
        ricci_term = mixed_discriminant(ric, hess) + mixed_discriminant(ric, H0)
        energy_term = dens + mixed_discriminant(H0, hess) + np.asarray(model.dens0)
    return ricci_term, energy_term


def evaluate(state: FlowState, model: ToricModel) -> FunctionalSample:
    """Evaluate ``J``, ``F0``, ``F`` and ``nu`` at ``state``."""
    n = model.n
    phi = state.phi
    avg_phi0 = model.average(phi)
    avg_phi_dens = model.average(phi, state.dens)
    mass_ratio = model.average(1.0, state.dens)
    J = 0.5 * (avg_phi0 - avg_phi_dens / mass_ratio)
    F0 = J - avg_phi0
    log_avg = model.log_average_exp(model.fhat - phi)

    ricci_term, energy_term = _products(model, state.hess, state.dens)
    weight_density = ricci_term - n / (n + 1.0) * energy_term
    entropy = model.average(state.G, state.dens)
    nu = entropy - model.average(phi, weight_density)
    return FunctionalSample(
        t=state.t,
        J=J,
        F0=F0,
        F=F0 - log_avg,
        nu=nu,
        avg_phi0=avg_phi0,
        avg_phi_dens=avg_phi_dens,
        log_avg_exp=log_avg,
        mass_ratio=mass_ratio,
        nu_constant_weight=model.average(1.0, weight_density),
    )


# ----------------------------------------------------------------------
# checks


def check_inequalities(
    samples,
    records,
    n: int = 1,
    fhat_bounds: tuple = (0.0, 0.0),
    tol: float = 1e-8,
    nu_tol: float = 1e-6,
) -> dict:
    """Monotonicity and sandwich checks on a normalized run.

    Asserted: ``F`` nonincreasing (``tol`` per step), ``nu`` nonincreasing
    (``nu_tol`` per unit time), ``J >= -tol`` and ``F0 - C3 <= F <= F0 + C4``
    with ``C3 = log C2 + sup fhat + log m`` and ``C4 = -log C1 - inf fhat - log m``
    built from the volume-window constants of the matching record.

    Reported only: the constant ``C`` in ``J <= avg_phi0 + C`` and an upper
    fit of ``osc phi <= C5 J^(n + 1) + C6``.
    """
    times = np.array([s.t for s in samples])
    F = np.array([s.F for s in samples])
    F0 = np.array([s.F0 for s in samples])
    J = np.array([s.J for s in samples])
    nu = np.array([s.nu for s in samples])
    lo_f, hi_f = fhat_bounds

    dF = np.diff(F)
    dnu = np.diff(nu)
    f_ok = bool(np.all(dF <= tol))
    nu_ok = bool(np.all(dnu <= nu_tol * np.maximum(np.diff(times), 1.0)))
    j_ok = bool(J.min() >= -tol)

    by_time = {round(r.t, 9): r for r in records}
    worst = 0.0
    osc, j_matched = [], []
    for s in samples:
        r = by_time.get(round(s.t, 9))
        if r is None:
            continue
        log_m = math.log(r.mass_ratio)
        c3 = hi_f - r.fhat_phidot_inf + log_m
        c4 = r.fhat_phidot_sup - lo_f - log_m
        violation = max((s.F0 - c3) - s.F, s.F - (s.F0 + c4), 0.0)
        worst = max(worst, violation / max(1.0, abs(s.F)))
        osc.append(r.osc_phi)
        j_matched.append(s.J)
    sandwich_ok = worst <= 1e-6

    report = {
        "F_nonincreasing": {"passed": f_ok, "max_increase": float(dF.max(initial=0.0))},
        "nu_nonincreasing": {"passed": nu_ok, "max_increase": float(dnu.max(initial=0.0))},
        "J_nonnegative": {"passed": j_ok, "min": float(J.min())},
        "sandwich": {"passed": sandwich_ok, "worst_violation": worst},
        "J_upper_constant": float(F0.max()),
        "harnack_fit": _harnack_fit(np.array(j_matched), np.array(osc), n),
    }
    report["passed"] = f_ok and nu_ok and j_ok and sandwich_ok
    if not report["passed"]:
        logger.warning(
            "functional checks failed: F=%s nu=%s J=%s sandwich=%s", f_ok, nu_ok, j_ok, sandwich_ok
        )
    return report


def _harnack_fit(J: np.ndarray, osc: np.ndarray, n: int):
    """Least-squares ``(C5, C6)`` for ``osc ~ C5 J^(n+1) + C6``, then lifted to an upper bound."""
    if len(J) < 2:
        return None
    basis = np.column_stack([np.maximum(J, 0.0) ** (n + 1), np.ones_like(J)])
    (c5, c6), *_ = np.linalg.lstsq(basis, osc, rcond=None)
    residual = osc - basis @ np.array([c5, c6])
    lift = float(residual.max())
    return {
        "exponent": n + 1,
        "C5": float(c5),
        "C6": float(c6 + lift),
        "rms_residual": float(np.sqrt(np.mean(residual**2))),
    }


def nu_difference_check(samples, series, rtol: float = 1e-2) -> dict:
    """Compare ``nu(t) - nu(0)`` with ``-int_0^t ||grad phi_t||^2 ds``.

    The energy is taken from the diagnostics series and integrated with the
    trapezoid rule; the comparison is made at the functional sample times.
    """
    times = np.array([r.t for r in series])
    energy = np.array([r.grad_phidot_norm2 for r in series])
    dissipated = cumulative_trapezoid(energy, times, initial=0.0)

    t_s = np.array([s.t for s in samples])
    nu = np.array([s.nu for s in samples])
    predicted = -np.interp(t_s, times, dissipated)
    observed = nu - nu[0]
    defect = np.abs(observed - predicted)
    scale = max(float(np.abs(predicted).max()), 1e-12)
    worst = int(np.argmax(defect))
    relative = float(defect[worst]) / scale
    return {
        "max_defect": float(defect[worst]),
        "relative": relative,
        "t_worst": float(t_s[worst]),
        "total_dissipation": float(dissipated[-1]),
        "passed": bool(relative <= rtol or defect[worst] <= 1e-10),
    }
