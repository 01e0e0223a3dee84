"""Monitored quantities along the flow and the checks built on them.

All quantities are evaluated in the torus-invariant reduction: for invariant
tensors the factors of ``w`` cancel, so with ``H = D^2(psi_0 + phi)`` and
``H0 = D^2 psi_0``

* ``Tr h = tr(H0^-1 H)``;
* ``|grad u|^2 = H^-1(grad u, grad u)`` and ``Delta u = tr(H^-1 D^2 u)``;
* ``|Ric - mu g|^2 = tr(H^-1 D^2 f H^-1 D^2 f)`` with ``f = -phi_t + const``;
* ``S = |Gamma - Gamma_hat|^2`` from ``A^l_pm = (H^-1 D H)^l_pm - (H0^-1 D H0)^l_pm``.
"""

import logging
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from ._exceptions import EigSolverError, UnsupportedModelError
from .flow_engine import BOUNDARY, FlowState, tail_average
from .toric_models import ToricModel, flow_hessian, inverse

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_A",
    "DiagnosticsRecord",
    "RECORD_COLUMNS",
    "EigenReport",
    "VolumeWindow",
    "C2Monitor",
    "record",
    "alpha_consistency",
    "volume_window",
    "lambda_min",
    "c2_monitor",
    "perelman_check",
    "ricci_decay_check",
    "records_from_rows",
]

DEFAULT_A = 10.0
WINDOW_RTOL = 1e-6


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One time sample of the monitored scalars.

    The leading fields follow the ``series.csv`` column order; the trailing
    ones carry the data needed by the window checks and by re-gauging.
    """

    t: float
    sup_abs_phidot: float
    alpha: float
    osc_phi: float
    sup_phi: float
    inf_phi: float
    grad_phidot_norm2: float
    sup_abs_f: float
    sup_grad_f: float
    sup_abs_laplacian_f: float
    sup_trace_h: float
    sup_S: float
    ricci_defect_l2: float
    min_density_ratio: float
    lambda_min: float
    c2_monitor: float
    # supplementary
    volume_ratio: float
    pali_sup_bound: float
    avg_phi_dens: float
    phidot_sup: float
    phidot_inf: float
    fhat_phidot_sup: float
    fhat_phidot_inf: float
    mass_ratio: float
    exp_minus_phi_avg: float
    f_normalization: float
    f_phidot_spread: float
    min_trace_h: float
    lambda_gap: float
    c2_A: float

    def to_row(self) -> dict:
        return asdict(self)

    def regauged(self, delta: float, mu: float = 1.0) -> "DiagnosticsRecord":
        """Record of the same metric with ``phi`` shifted by the gauge mode value ``delta``."""
        dphidot = mu * delta
        phidot_sup = self.phidot_sup + dphidot
        phidot_inf = self.phidot_inf + dphidot
        return replace(
            self,
            sup_abs_phidot=max(abs(phidot_sup), abs(phidot_inf)),
            alpha=self.alpha + dphidot * self.mass_ratio,
            sup_phi=self.sup_phi + delta,
            inf_phi=self.inf_phi + delta,
            c2_monitor=self.c2_monitor - self.c2_A * delta,
            volume_ratio=self.volume_ratio * math.exp((mu - 1.0) * delta),
            pali_sup_bound=self.pali_sup_bound + delta,
            avg_phi_dens=self.avg_phi_dens + delta * self.mass_ratio,
            phidot_sup=phidot_sup,
            phidot_inf=phidot_inf,
            fhat_phidot_sup=self.fhat_phidot_sup + dphidot,
            fhat_phidot_inf=self.fhat_phidot_inf + dphidot,
            exp_minus_phi_avg=self.exp_minus_phi_avg * math.exp(-delta),
        )


RECORD_COLUMNS = tuple(f.name for f in fields(DiagnosticsRecord))


def records_from_rows(rows) -> list:
    """Rebuild records from ``series.csv`` rows."""
    return [DiagnosticsRecord(**{c: float(row[c]) for c in RECORD_COLUMNS}) for row in rows]


@dataclass(frozen=True)
class EigenReport:
    """Low spectrum of ``-Delta`` on invariant functions.

    Attributes:
        lambda1: First nonzero eigenvalue.
        gap: ``min_k |lambda_k - 1|`` over the computed nonzero eigenvalues.
        eigenvalues: Computed nonzero eigenvalues, ascending.
    """

    lambda1: float
    gap: float
    eigenvalues: tuple


@dataclass(frozen=True)
class VolumeWindow:
    value: float
    lower: float
    upper: float
    sup_phi_bound: float
    inf_phi_bound: float
    passed: bool


@dataclass(frozen=True)
class C2Monitor:
    value: float
    argmax: tuple
    A: float


# ----------------------------------------------------------------------
# pointwise fields


def _third_derivatives(model: ToricModel, phi: np.ndarray) -> np.ndarray:
    grid = model.grid
    hess_phi = flow_hessian(model, phi)
    n = grid.n
    third = np.empty(grid.shape + (n, n, n))
    for a in range(n):
        for b in range(n):
            for c in range(n):
                third[..., a, b, c] = grid.d1(hess_phi[..., a, b], c, BOUNDARY)
    return model.third0 + third


def s_field(model: ToricModel, state: FlowState) -> np.ndarray:
    """``S = |Gamma - Gamma_hat|^2_g`` at every grid node."""
    hinv = inverse(state.hess)
    diff = np.einsum("...ls,...smp->...lpm", hinv, _third_derivatives(model, state.phi))
    diff = diff - np.einsum("...ls,...smp->...lpm", model.hess0_inv, model.third0)
    return np.einsum(
        "...lL,...pP,...mM,...lpm,...LPM->...", state.hess, hinv, hinv, diff, diff
    )


def trace_h(model: ToricModel, state: FlowState) -> np.ndarray:
    return np.einsum("...ab,...ba->...", model.hess0_inv, state.hess)


def record(
    state: FlowState,
    model: ToricModel,
    A: float = DEFAULT_A,
    mu: float = 1.0,
    with_lambda: bool = False,
) -> DiagnosticsRecord:
    """Evaluate every monitored scalar at ``state``.

    ``lambda_min`` is computed only when ``with_lambda`` is set (NaN otherwise).

    Raises:
        DegenerateHessianError: Propagated from the state construction.
    """
    grid = model.grid
    dens = state.dens
    phidot = state.phidot
    hinv = inverse(state.hess)

    # Ricci potential f = -phidot + c with (1/V) int e^f dens_phi = 1
    c = -model.log_average_exp(-phidot, dens)
    f = -phidot + c
    grad_f = grid.gradient(f, BOUNDARY)
    hess_f = flow_hessian(model, f)
    grad_f_norm = np.sqrt(np.maximum(np.einsum("...a,...ab,...b->...", grad_f, hinv, grad_f), 0.0))
    lap_f = np.einsum("...ab,...ba->...", hinv, hess_f)
    m = hinv @ hess_f
    ricci_sq = np.einsum("...ab,...ba->...", m, m)

    trh = trace_h(model, state)
    S = s_field(model, state)
    fhat_phidot = model.fhat + phidot
    ratio_min = float(np.exp(state.G.min()))
    grad_phidot = grid.gradient(phidot, BOUNDARY)
    grad_phidot_sq = np.einsum("...a,...ab,...b->...", grad_phidot, hinv, grad_phidot)

    monitor = c2_monitor(state, model, A)
    lam = lambda_min(state, model, mu) if with_lambda else None

    return DiagnosticsRecord(
        t=state.t,
        sup_abs_phidot=float(np.abs(phidot).max()),
        alpha=model.average(phidot, dens),
        osc_phi=float(state.phi.max() - state.phi.min()),
        sup_phi=float(state.phi.max()),
        inf_phi=float(state.phi.min()),
        grad_phidot_norm2=float(np.sum(grid.weights * dens * grad_phidot_sq)) / model.volume_h,
        sup_abs_f=float(np.abs(f).max()),
        sup_grad_f=float(grad_f_norm.max()),
        sup_abs_laplacian_f=float(np.abs(lap_f).max()),
        sup_trace_h=float(trh.max()),
        sup_S=float(max(S.max(), 0.0)),
        ricci_defect_l2=math.sqrt(
            max(float(np.sum(grid.weights * dens * ricci_sq)) / model.volume_h, 0.0)
        ),
        min_density_ratio=ratio_min,
        lambda_min=lam.lambda1 if lam else math.nan,
        c2_monitor=monitor.value,
        volume_ratio=math.exp(
            model.log_average_exp(model.fhat - state.phi + phidot)
        ),
        pali_sup_bound=(float(fhat_phidot.max()) - math.log(ratio_min)) / mu,
        avg_phi_dens=model.average(state.phi, dens),
        phidot_sup=float(phidot.max()),
        phidot_inf=float(phidot.min()),
        fhat_phidot_sup=float(fhat_phidot.max()),
        fhat_phidot_inf=float(fhat_phidot.min()),
        mass_ratio=model.average(1.0, dens),
        exp_minus_phi_avg=math.exp(model.log_average_exp(-state.phi)),
        f_normalization=math.exp(model.log_average_exp(f, dens)),
        f_phidot_spread=float(np.ptp(f + phidot)),
        min_trace_h=float(trh.min()),
        lambda_gap=lam.gap if lam else math.nan,
        c2_A=float(A),
    )


# ----------------------------------------------------------------------
# checks


def alpha_consistency(series, mu: float = 1.0) -> tuple:
    """Largest ``|alpha(t) - tail(t)|`` and the time it occurs.

    ``tail(t) = int_t^T exp(-mu (s - t)) ||grad phi_t||^2 ds + exp(-mu (T - t)) alpha(T)``.
    """
    times = np.array([r.t for r in series])
    alpha = np.array([r.alpha for r in series])
    energy = np.array([r.grad_phidot_norm2 for r in series])
    defect = np.abs(alpha - tail_average(times, energy, alpha[-1], mu))
    worst = int(np.argmax(defect))
    return float(defect[worst]), float(times[worst])


def volume_window(
    rec: DiagnosticsRecord, model: ToricModel, rtol: float = WINDOW_RTOL
) -> VolumeWindow:
    """Check ``C1 m <= (1/V) int e^-phi dens0 <= C2 m`` and the crude sup/inf bounds.

    ``C1 = exp(-sup(fhat + phi_t))``, ``C2 = exp(-inf(fhat + phi_t))`` and ``m`` is
    the measured volume ratio of ``dens_phi``.
    """
    m0 = model.average(1.0)
    m = rec.mass_ratio
    lower = math.exp(-rec.fhat_phidot_sup) * m
    upper = math.exp(-rec.fhat_phidot_inf) * m
    value = rec.exp_minus_phi_avg
    sup_bound = -math.log(upper / m0)
    inf_bound = -math.log(lower / m0)
    passed = (
        value >= lower * (1.0 - rtol)
        and value <= upper * (1.0 + rtol)
        and rec.sup_phi >= sup_bound - rtol * max(1.0, abs(sup_bound))
        and rec.inf_phi <= inf_bound + rtol * max(1.0, abs(inf_bound))
    )
    if not passed:
        logger.warning(
            "volume window violated at t=%g: %.10g not in [%.10g, %.10g]",
            rec.t, value, lower, upper,
        )
    return VolumeWindow(value, lower, upper, sup_bound, inf_bound, bool(passed))


def _stiffness(model: ToricModel, hess: np.ndarray, dens: np.ndarray) -> sp.csr_matrix:
    """Symmetric stiffness of ``int H^-1(grad u, grad v) dens`` (cofactor form)."""
    grid = model.grid
    cof = dens[..., None, None] * inverse(hess)
    weights = sp.diags(grid.weights.ravel())
    K = None
    for a in range(grid.n):
        for b in range(grid.n):
            term = sp.diags(cof[..., a, b].ravel()) @ grid.derivative_matrix(a, b, "reflect")
            K = term if K is None else K + term
    K = -(weights @ K)
    return (0.5 * (K + K.T)).tocsc()


def lambda_min(state: FlowState, model: ToricModel, mu: float = 1.0, k: int = 6) -> EigenReport:
    """Low spectrum of ``-Delta_phi`` on invariant functions.

    Solves ``K u = lambda M u`` with ``K`` from the Dirichlet form and ``M`` the
    quadrature mass of ``dens_phi``; the constant mode is removed.

    Raises:
        UnsupportedModelError: For ``mu != 1``, where ``Delta + 1`` has no meaning here.
        EigSolverError: If ARPACK fails.
    """
    if mu != 1.0:
        raise UnsupportedModelError(f"lambda_min is defined for mu = 1 models, got mu={mu}")
    K = _stiffness(model, state.hess, state.dens)
    mass = model.mass(state.dens).ravel()
    M = sp.diags(mass).tocsc()
    k = min(k, K.shape[0] - 2)
    try:
        values, vectors = eigsh(K, k=k, M=M, sigma=-0.1, which="LM")
    except (ArpackNoConvergence, ArpackError, RuntimeError) as e:
        raise EigSolverError(f"eigsh failed: {e}") from e

    order = np.argsort(values)
    values, vectors = values[order], vectors[:, order]
    total = float(np.sum(mass))
    keep = []
    for i in range(len(values)):
        v = vectors[:, i]
        overlap = abs(float(np.sum(mass * v))) / math.sqrt(float(np.sum(mass * v * v)) * total)
        if overlap < 0.99:
            keep.append(float(values[i]))
    if not keep:
        raise EigSolverError("no nonconstant eigenpair among the computed modes")
    gap = min(abs(v - 1.0) for v in keep)
    return EigenReport(lambda1=keep[0], gap=gap, eigenvalues=tuple(keep))


def c2_monitor(state: FlowState, model: ToricModel, A: float = DEFAULT_A) -> C2Monitor:
    """``sup(log Tr h - A phi)`` and the log coordinates of the maximizer."""
    field_ = np.log(trace_h(model, state)) - A * state.phi
    idx = np.unravel_index(int(np.argmax(field_)), field_.shape)
    return C2Monitor(float(field_[idx]), tuple(model.grid.xi[idx].tolist()), float(A))


def perelman_check(series, factor: float = 3.0) -> dict:
    """Compare the Perelman quantities with their maxima over the first half of the run."""
    times = np.array([r.t for r in series])
    half = times <= times[0] + 0.5 * (times[-1] - times[0])
    report = {"factor": factor, "passed": True}
    for name in ("sup_abs_f", "sup_grad_f", "sup_abs_laplacian_f"):
        values = np.array([getattr(r, name) for r in series])
        first, overall = float(values[half].max()), float(values.max())
        ok = bool(overall <= factor * first + 1e-12)
        report[name] = {"first_half_max": first, "max": overall, "passed": ok}
        report["passed"] = report["passed"] and ok
    return report


def ricci_decay_check(series, threshold: float = 1e-4, rtol: float = 1e-9) -> dict:
    """Eventual monotone decay of ``||Ric - g||_L2`` and its final value."""
    values = np.array([r.ricci_defect_l2 for r in series])
    times = np.array([r.t for r in series])
    start = len(values) - 1
    while start > 0 and values[start] <= values[start - 1] * (1.0 + rtol) + 1e-15:
        start -= 1
    final = float(values[-1])
    return {
        "monotone_from": float(times[start]),
        "final": final,
        "threshold": threshold,
        "passed": bool(final < threshold and start < len(values) - 1),
    }
