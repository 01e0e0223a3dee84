"""Integrability scans of ``exp(-p phi)`` along the flow and limit-point extraction.

``I_p(t) = (1/V) int exp(-p phi(t)) dens0`` is evaluated in log form from
snapshots in the normalized gauge.  When some ``I_p`` blows up, a
sup-normalized L1-Cauchy family of snapshots along an escalating subsequence
gives a limit profile ``psi``; its singular behaviour along the rays that
leave the box towards each polytope facet is converted into a critical
exponent.

Along the ray ``xi = -s l_k`` (``l_k`` the inward normal of facet ``k``) the
reference density decays like ``exp(-s)``, so a profile with slope
``psi ~ -gamma s`` is integrable against ``dens0`` exactly for ``p < 1/gamma``.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import linregress

from ._exceptions import FitFailureError, InvalidConfigurationError, NoCauchySubfamilyError
from .toric_models import ToricModel, build_model

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_P_LIST",
    "FACE_DECAY_RATE",
    "LpTrace",
    "PsiSnapshot",
    "ExponentEstimate",
    "lp_scan",
    "extract_limit",
    "exponent_estimate",
    "harnack_correlation",
    "control_check",
    "synthetic_suite",
    "calibrate",
]

DEFAULT_P_LIST = (1.0, 1.5, 2.0, 3.0)
FACE_DECAY_RATE = 1.0
RAY_SAMPLES = 64


@dataclass(frozen=True)
class LpTrace:
    """``log I_p`` at the snapshot times with the blow-up verdict."""

    p: float
    times: tuple
    log_values: tuple
    blowup: bool
    onset: float = None
    trend: float = 0.0

    @property
    def values(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_values))

    @property
    def log_ratio(self) -> float:
        return float(self.log_values[-1] - self.log_values[0])

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "times": list(self.times),
            "log_values": list(self.log_values),
            "blowup": self.blowup,
            "onset": self.onset,
            "trend": self.trend,
            "log_ratio": self.log_ratio,
        }


@dataclass(frozen=True)
class PsiSnapshot:
    """Limit profile ``psi`` from a sup-normalized Cauchy family.

    Attributes:
        psi: Profile on the model grid (``sup psi = 0``).
        times: Source times of the accepted family.
        gaps: Pairwise L1 gaps of the accepted family, row-major upper triangle.
        offset: ``sup phi`` removed from the latest member.
        p: Exponent whose blow-up selected the subsequence.
    """

    psi: np.ndarray
    times: tuple
    gaps: tuple
    offset: float
    p: float

    @property
    def max_gap(self) -> float:
        return max(self.gaps) if self.gaps else 0.0

    def to_dict(self) -> dict:
        return {
            "times": list(self.times),
            "gaps": list(self.gaps),
            "max_gap": self.max_gap,
            "offset": self.offset,
            "p": self.p,
            "osc": float(np.ptp(self.psi)),
        }


@dataclass(frozen=True)
class ExponentEstimate:
    """Critical exponent at a polytope face or vertex.

    ``rule`` is ``"corner rule: min"`` for vertex estimates, which take the
    smaller threshold of the two facets meeting there.
    """

    location: str
    direction: tuple
    p_crit: float
    gamma: float
    slope: float
    r2: float
    method: str = "ray-fit"
    rule: str = ""
    facets: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "location": self.location,
            "direction": list(self.direction),
            "p_crit": self.p_crit,
            "gamma": self.gamma,
            "slope": self.slope,
            "r2": self.r2,
            "method": self.method,
            "rule": self.rule,
            "facets": list(self.facets),
        }


# ----------------------------------------------------------------------
# L^p traces


def _trace(model: ToricModel, snapshots, p: float, blowup_ratio: float) -> LpTrace:
    times = np.array([s.t for s in snapshots])
    logs = np.array([model.log_average_exp(-p * np.asarray(s.phi)) for s in snapshots])
    threshold = logs[0] + math.log(blowup_ratio)
    quarter = max(2, len(times) // 4)
    trend = 0.0
    if len(times) >= 2:
        trend = float(np.polyfit(times[-quarter:], logs[-quarter:], 1)[0])
    exceeded = np.nonzero(logs > threshold)[0]
    blowup = bool(logs[-1] > threshold and trend > 0.0)
    onset = float(times[exceeded[0]]) if blowup else None
    return LpTrace(
        p=float(p), times=tuple(times.tolist()), log_values=tuple(logs.tolist()),
        blowup=blowup, onset=onset, trend=trend,
    )  # fmt: skip


def lp_scan(
    model: ToricModel,
    snapshots,
    p_list=DEFAULT_P_LIST,
    blowup_ratio: float = 10.0,
    workers: int = 1,
) -> list:
    """``I_p`` traces for every ``p`` (``p = 1`` is always included).

    Args:
        model: Toric model the snapshots live on.
        snapshots: Time-ordered objects with ``t`` and ``phi`` in the normalized gauge.
        p_list: Exponents to scan.
        blowup_ratio: ``I_p(T) / I_p(0)`` above which (with a rising last
            quarter) a trace is flagged.
        workers: Thread count for the scan over ``p``.
    """
    if not snapshots:
        raise NoCauchySubfamilyError("no snapshots to scan", stage="mis-scan")
    ps = sorted({float(p) for p in p_list} | {1.0})
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        traces = list(pool.map(lambda p: _trace(model, snapshots, p, blowup_ratio), ps))
    for tr in traces:
        logger.info(
            "I_%g: log ratio %.4g, trend %.3g%s",
            tr.p, tr.log_ratio, tr.trend, " (blow-up)" if tr.blowup else "",
        )  # fmt: skip
    return traces


# ----------------------------------------------------------------------
# limit extraction


def _l1_gap(model: ToricModel, a: np.ndarray, b: np.ndarray) -> float:
    return model.average(np.abs(a - b))


def extract_limit(
    model: ToricModel,
    snapshots,
    trace: LpTrace,
    escalation: float = 2.0,
    cauchy_tol: float = 0.05,
) -> PsiSnapshot:
    """Select an escalating subsequence and return its L1 limit profile.

    The subsequence takes the first snapshot, then each snapshot whose
    ``I_p`` reaches ``escalation`` times the last selected value.  The longest
    suffix of the sup-normalized subsequence whose pairwise L1 gaps stay
    within ``cauchy_tol`` is accepted and its latest member returned.

    Raises:
        InvalidConfigurationError: If ``escalation`` is below 1.
        NoCauchySubfamilyError: If fewer than two snapshots are selected or
            no suffix of length two meets ``cauchy_tol``.
    """
    if not escalation >= 1.0:
        raise InvalidConfigurationError(
            f"escalation must be >= 1, got {escalation}", stage="mis-scan"
        )
    by_time = {round(t, 9): lv for t, lv in zip(trace.times, trace.log_values)}
    selected = []
    level = -math.inf
    for snap in snapshots:
        lv = by_time.get(round(snap.t, 9))
        if lv is None:
            continue
        if not selected or lv > level + math.log(escalation):
            selected.append((snap, lv))
            level = lv
    if len(selected) < 2:
        raise NoCauchySubfamilyError(
            f"I_{trace.p:g} never escalates by x{escalation:g}; nothing to extract",
            stage="mis-scan",
        )
    profiles = [np.asarray(s.phi) - float(np.max(s.phi)) for s, _ in selected]
    m = len(profiles)
    gaps = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            gaps[i, j] = gaps[j, i] = _l1_gap(model, profiles[i], profiles[j])

    for start in range(m - 1):
        block = gaps[start:, start:]
        if block.max() <= cauchy_tol:
            iu = np.triu_indices(m - start, k=1)
            snap = selected[-1][0]
            logger.info(
                "psi from %d snapshots (t=%g..%g), max gap %.3g",
                m - start, selected[start][0].t, snap.t, block.max(),
            )  # fmt: skip
            return PsiSnapshot(
                psi=profiles[-1],
                times=tuple(float(s.t) for s, _ in selected[start:]),
                gaps=tuple(block[iu].tolist()),
                offset=float(np.max(snap.phi)),
                p=trace.p,
            )
    raise NoCauchySubfamilyError(
        f"no L1-Cauchy subfamily within {cauchy_tol:g} "
        f"(last gap {gaps[-2, -1]:.3g} over {m} snapshots)",
        stage="mis-scan",
    )


# ----------------------------------------------------------------------
# exponents


def _sampler(model: ToricModel, values: np.ndarray):
    grid = model.grid
    if grid.n == 1:
        return lambda pts: np.interp(pts[:, 0], grid.axis, values)
    return RegularGridInterpolator(
        (grid.axis, grid.axis), values, bounds_error=False, fill_value=None
    )


def _ray_fit(model: ToricModel, sample, direction: np.ndarray) -> tuple:
    """Slope and R^2 of ``psi(s * direction)`` over the outer half of the box."""
    s_max = model.grid.half_width / float(np.abs(direction).max())
    s = np.linspace(0.5 * s_max, s_max, RAY_SAMPLES)
    values = np.asarray(sample(s[:, None] * direction[None, :]))
    if np.ptp(values) < 1e-14:
        return 0.0, 1.0
    fit = linregress(s, values)
    return float(fit.slope), float(fit.rvalue**2)


def _facet_label(polytope, k: int) -> str:
    ell = polytope.normals[k].tolist()
    verts = polytope.facet_vertices(k).tolist()
    return f"facet {k}: <{ell}, x> = -1, vertices {verts}"


def exponent_estimate(
    psi,
    model: ToricModel,
    min_r2: float = 0.9,
    gamma_floor: float = 1e-3,
    strict: bool = False,
) -> list:
    """Critical exponents of ``psi`` at the polytope facets and vertices.

    Facets where ``psi`` is bounded (``gamma <= gamma_floor``) are omitted.

    Raises:
        FitFailureError: When ``strict`` and a ray fit has ``R^2 < min_r2``;
            otherwise the estimate is withheld with a warning.
    """
    values = psi.psi if isinstance(psi, PsiSnapshot) else np.asarray(psi)
    polytope = model.polytope
    sample = _sampler(model, values)

    faces = {}
    estimates = []
    for k, ell in enumerate(polytope.normals):
        direction = -np.asarray(ell, dtype=float)
        slope, r2 = _ray_fit(model, sample, direction)
        gamma = -slope
        if gamma <= gamma_floor:
            continue
        if r2 < min_r2:
            message = f"ray fit towards facet {k} has R^2={r2:.3f} < {min_r2}"
            if strict:
                raise FitFailureError(message, stage="mis-scan")
            logger.warning("%s; estimate withheld", message)
            continue
        est = ExponentEstimate(
            location=_facet_label(polytope, k),
            direction=tuple(direction.tolist()),
            p_crit=FACE_DECAY_RATE / gamma,
            gamma=gamma,
            slope=slope,
            r2=r2,
            facets=(k,),
        )
        faces[k] = est
        estimates.append(est)

    if polytope.n == 2:
        for k1, k2, vertex in polytope.adjacent_facets():
            near = [faces[k] for k in (k1, k2) if k in faces]
            if not near:
                continue
            best = min(near, key=lambda e: e.p_crit)
            estimates.append(
                ExponentEstimate(
                    location=f"vertex {vertex.tolist()}",
                    direction=tuple((-(polytope.normals[k1] + polytope.normals[k2])).tolist()),
                    p_crit=best.p_crit,
                    gamma=best.gamma,
                    slope=best.slope,
                    r2=best.r2,
                    method="corner",
                    rule="corner rule: min",
                    facets=(int(k1), int(k2)),
                )
            )
    return estimates


# ----------------------------------------------------------------------
# reports


def harnack_correlation(traces, records, gauge: str = "normalized", growth: float = 3.0) -> dict:
    """Relate boundedness of ``I_p`` (p > 1) to boundedness of ``osc phi``.

    ``osc phi`` counts as unbounded when its final value exceeds ``growth``
    times its maximum over the first half of the run.  The implication
    "bounded osc => bounded I_p" is asserted; the converse pattern is flagged.
    """
    report = {"gauge_warning": gauge != "normalized"}
    if gauge != "normalized":
        logger.warning("harnack correlation requested on a %s-gauge run", gauge)

    times = np.array([r.t for r in records])
    osc = np.array([r.osc_phi for r in records])
    half = times <= times[0] + 0.5 * (times[-1] - times[0])
    first = float(osc[half].max())
    osc_unbounded = bool(osc[-1] > growth * max(first, 1e-12))

    per_p = []
    any_blowup = False
    for tr in traces:
        if tr.p <= 1.0:
            continue
        any_blowup = any_blowup or tr.blowup
        lv = np.interp(times, tr.times, tr.log_values)
        corr = float(np.corrcoef(osc, lv)[0, 1]) if np.ptp(osc) > 0 and np.ptp(lv) > 0 else 0.0
        per_p.append(
            {
                "p": tr.p,
                "sup_I_p": float(np.exp(max(tr.log_values))),
                "sup_osc": float(osc.max()),
                "blowup": tr.blowup,
                "correlation": corr,
            }
        )
    report.update(
        {
            "osc_unbounded": osc_unbounded,
            "per_p": per_p,
            "implication_holds": osc_unbounded or not any_blowup,
            "contrapositive_pattern": osc_unbounded and any_blowup,
        }
    )
    return report


def control_check(traces, records, rtol: float = 1e-6) -> dict:
    """``I_1`` must lie in the volume window ``[C1 m, C2 m]`` at every matching record."""
    trace = next(tr for tr in traces if tr.p == 1.0)
    by_time = {round(r.t, 9): r for r in records}
    worst = 0.0
    checked = 0
    for t, lv in zip(trace.times, trace.log_values):
        r = by_time.get(round(t, 9))
        if r is None:
            continue
        checked += 1
        lower = math.log(r.mass_ratio) - r.fhat_phidot_sup
        upper = math.log(r.mass_ratio) - r.fhat_phidot_inf
        worst = max(worst, lower - lv, lv - upper)
    return {"checked": checked, "worst_violation": worst, "passed": bool(worst <= rtol)}


def synthetic_suite(model: ToricModel = None) -> list:
    """Calibration profiles on cp1 with known critical exponents.

    Nine kinks ``min(0, gamma xi)`` for ``gamma = 0.2, ..., 1.0`` and the smooth
    profile ``-0.25 log(1 + exp(-xi))``; each case is ``(name, psi, p_crit)``.
    """
    model = model or build_model("cp1", L=8.0, grid=257)
    xi = model.grid.xi[..., 0]
    cases = []
    for gamma in np.round(np.arange(0.2, 1.01, 0.1), 10):
        cases.append((f"kink-{gamma:.1f}", np.minimum(0.0, gamma * xi), 1.0 / gamma))
    cases.append(("smooth-0.25", -0.25 * np.logaddexp(0.0, -xi), 4.0))
    return cases


def calibrate(model: ToricModel = None, rtol: float = 0.05) -> dict:
    """Run :func:`exponent_estimate` on :func:`synthetic_suite` and compare."""
    model = model or build_model("cp1", L=8.0, grid=257)
    rows = []
    for name, psi, expected in synthetic_suite(model):
        found = exponent_estimate(psi, model)
        p_crit = min((e.p_crit for e in found), default=math.inf)
        error = abs(p_crit - expected) / expected
        rows.append({"case": name, "expected": expected, "p_crit": p_crit, "relative_error": error})
    return {"cases": rows, "passed": all(r["relative_error"] <= rtol for r in rows)}
