"""Potential-level normalized Kähler-Ricci flow on a toric model.

The flow ``phi_t = G(phi) + mu * phi - fhat`` with ``G = log(dens_phi / dens0)``
is integrated on the model grid.  The outermost node along each axis owns the
cell reaching to infinity, across which the slope of the potential changes
by the known amount fixed by the polytope; no flux leaves that cell.

Schemes:
    - ``"imex"``: two-stage linearly implicit Rosenbrock-W method (ROS2,
      ``gamma = 1 + 1/sqrt(2)``) in the integrating-factor variable
      ``v = exp(-mu t) phi``.  The W-matrix is the linearized Monge-Ampère
      operator ``tr(H^-1 D^2 .)`` frozen at the start of the step.  The gauge
      mode ``c exp(mu t)`` is constant in ``v`` and is integrated exactly.
    - ``"rk2"``: explicit Heun method on ``phi`` (cross-validation only; it
      is stable only for small steps on fine grids).

A step that loses positivity of ``D^2(psi_0 + phi)`` is rejected and retried
with half the step; below ``dt_min`` the run stops with
:class:`~krf_lab._exceptions.StepCollapseError`.

The initial constant is fixed in two passes: the run starts from a
provisional constant, :func:`normalize_c0` computes the correct one from the
recorded ``||grad phi_t||^2`` history, and :func:`regauge` shifts the stored
trajectory.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid
from scipy.sparse.linalg import splu

from ._exceptions import (
    DegenerateHessianError,
    InvalidConfigurationError,
    StepCollapseError,
    TailNotConvergedError,
)
from .persistence import RunDirectory
from .toric_models import (
    ToricModel,
    densities_from_hessian,
    dirichlet_energy,
    flow_hessian,
    inverse,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SCHEMES",
    "ROS2_GAMMA",
    "FlowConfig",
    "FlowState",
    "FlowSample",
    "Snapshot",
    "Trajectory",
    "Normalization",
    "make_state",
    "provisional_constant",
    "step",
    "run_flow",
    "resume",
    "snapshot",
    "normalize_c0",
    "regauge",
    "tail_average",
]

SCHEMES = ("imex", "rk2")
ROS2_GAMMA = 1.0 + 1.0 / math.sqrt(2.0)
BOUNDARY = "exterior"
_EVENT_EPS = 1e-12


@dataclass(frozen=True)
class FlowConfig:
    """Integrator settings.

    Attributes:
        mu: Constant of the normalized flow (1 for Fano models).
        dt_init: Initial step.
        dt_min: Smallest step before the run is declared collapsed.
        dt_max: Largest step the controller may propose.
        t_end: Final time.
        scheme: ``"imex"`` or ``"rk2"``.
        t_norm: Horizon of the normalization integral.
        tail_tol: Bound on ``exp(-mu T) * sup ||grad phi_t||^2``.
        snapshot_every: Snapshot cadence.
        tol: Local error tolerance of the step controller.
        adaptive: Use the error controller; otherwise steps stay at ``dt_init``
            except for positivity halving.
    """

    mu: float = 1.0
    dt_init: float = 1e-3
    dt_min: float = 1e-9
    dt_max: float = 0.05
    t_end: float = 20.0
    scheme: str = "imex"
    t_norm: float = 30.0
    tail_tol: float = 1e-8
    snapshot_every: float = 1.0
    tol: float = 1e-7
    adaptive: bool = True

    def __post_init__(self):
        if not self.dt_min > 0:
            raise InvalidConfigurationError(f"dt_min must be > 0, got {self.dt_min}")
        if not self.t_end > 0:
            raise InvalidConfigurationError(f"t_end must be > 0, got {self.t_end}")
        if not self.dt_init >= self.dt_min:
            raise InvalidConfigurationError("dt_init must be >= dt_min")
        if not self.dt_max >= self.dt_init:
            raise InvalidConfigurationError("dt_max must be >= dt_init")
        if self.scheme not in SCHEMES:
            raise InvalidConfigurationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.snapshot_every > 0:
            raise InvalidConfigurationError("snapshot_every must be > 0")


@dataclass(frozen=True)
class FlowState:
    """Flow state with the quantities derived from ``phi``.

    ``phidot`` is always recomputed from the flow relation, never integrated.
    ``dt`` is the step proposed for the next step.
    """

    t: float
    phi: np.ndarray
    phidot: np.ndarray
    G: np.ndarray
    dens: np.ndarray
    hess: np.ndarray
    dt: float
    step: int = 0
    c0: float = 0.0
    rejected: int = 0


@dataclass(frozen=True)
class FlowSample:
    """Gauge-relevant scalars recorded at a sample time."""

    t: float
    dt: float
    step: int
    grad_norm2: float
    alpha: float
    mass_ratio: float
    phidot_sup: float
    phidot_inf: float
    phi_sup: float
    phi_inf: float

    COLUMNS = (
        "t", "dt", "step", "grad_norm2", "alpha", "mass_ratio",
        "phidot_sup", "phidot_inf", "phi_sup", "phi_inf",
    )  # fmt: skip

    def shifted(self, delta: float, mu: float) -> "FlowSample":
        """Effect of adding the gauge mode with value ``delta`` at this time."""
        return replace(
            self,
            alpha=self.alpha + mu * delta * self.mass_ratio,
            phidot_sup=self.phidot_sup + mu * delta,
            phidot_inf=self.phidot_inf + mu * delta,
            phi_sup=self.phi_sup + delta,
            phi_inf=self.phi_inf + delta,
        )


@dataclass(frozen=True)
class Snapshot:
    t: float
    phi: np.ndarray
    dt: float
    step: int


@dataclass
class Trajectory:
    """Result of :func:`run_flow`.

    Attributes:
        status: ``"completed"`` or ``"step-collapse"``.
        gauge: ``"provisional"`` until :func:`regauge` is applied.
    """

    model: str
    config: FlowConfig
    c0: float
    samples: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final: Optional[FlowState] = None
    status: str = "completed"
    message: str = ""
    gauge: str = "provisional"

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples])


# ----------------------------------------------------------------------
# states


def make_state(
    model: ToricModel,
    phi: np.ndarray,
    t: float,
    dt: float,
    mu: float = 1.0,
    step: int = 0,
    c0: float = 0.0,
    rejected: int = 0,
) -> FlowState:
    """Build a :class:`FlowState`, recomputing ``G`` and ``phidot``.

    The Hessian is taken of ``exp(-mu t) phi`` and rescaled, so constant
    shifts in the integrating-factor variable cancel to rounding.

    Raises:
        DegenerateHessianError: If positivity fails.
    """
    phi = np.asarray(phi, dtype=float)
    scale = math.exp(mu * t)
    dphi = scale * flow_hessian(model, phi / scale)
    dens, G, hess = densities_from_hessian(model, dphi)
    phidot = G + mu * phi - model.fhat
    return FlowState(
        t=t, phi=phi, phidot=phidot, G=G, dens=dens, hess=hess,
        dt=dt, step=step, c0=c0, rejected=rejected,
    )  # fmt: skip


def provisional_constant(model: ToricModel, phi0: np.ndarray) -> float:
    """Provisional initial constant ``-(1/V) * integral((G + phi0 - fhat) dens_phi0)``.

    For ``phi0 = 0`` this is ``(1/V) * integral(fhat dens0)``.
    """
    state = make_state(model, phi0, 0.0, 1.0)
    return -model.average(state.G + state.phi - model.fhat, state.dens)


def _jacobian(model: ToricModel, hess: np.ndarray) -> sp.csr_matrix:
    """Sparse ``tr(H^-1 D^2 .)`` matching :func:`~krf_lab.toric_models.flow_hessian`."""
    hinv = inverse(hess)
    grid = model.grid
    jac = None
    for a in range(grid.n):
        for b in range(a, grid.n):
            if a == b:
                factor = hinv[..., a, a] * model.edge_scale[..., a]
            else:
                factor = 2.0 * hinv[..., a, b]
            term = sp.diags(factor.ravel()) @ grid.derivative_matrix(a, b, BOUNDARY)
            jac = term if jac is None else jac + term
    return jac.tocsc()


def _rhs(model: ToricModel, phi: np.ndarray, t: float, mu: float) -> np.ndarray:
    """``phi_t`` at ``(phi, t)``."""
    return make_state(model, phi, t, 1.0, mu).phidot


def _imex_attempt(state: FlowState, model: ToricModel, config: FlowConfig, dt: float):
    mu = config.mu
    t0, t1 = state.t, state.t + dt
    e0, e1 = math.exp(-mu * t0), math.exp(-mu * t1)
    shape = state.phi.shape
    size = state.phi.size

    jac = _jacobian(model, state.hess)
    w = sp.identity(size, format="csc") - ROS2_GAMMA * dt * jac
    lu = splu(w)

    v0 = e0 * state.phi
    n1 = e0 * (state.G - model.fhat)
    k1 = lu.solve(n1.ravel()).reshape(shape)
    phi_mid = (v0 + dt * k1) / e1
    mid = make_state(model, phi_mid, t1, dt, mu)
    n2 = e1 * (mid.G - model.fhat)
    k2 = lu.solve((n2 - 2.0 * k1).ravel()).reshape(shape)
    v1 = v0 + dt * (1.5 * k1 + 0.5 * k2)
    err = 0.5 * dt * float(np.abs(k1 + k2).max()) / e1
    return v1 / e1, err


def _rk2_attempt(state: FlowState, model: ToricModel, config: FlowConfig, dt: float):
    k1 = state.phidot
    k2 = _rhs(model, state.phi + dt * k1, state.t + dt, config.mu)
    err = 0.5 * dt * float(np.abs(k2 - k1).max())
    return state.phi + 0.5 * dt * (k1 + k2), err


_ATTEMPTS = {"imex": _imex_attempt, "rk2": _rk2_attempt}


def step(
    state: FlowState, model: ToricModel, config: FlowConfig, t_stop: float = math.inf
) -> FlowState:
    """Advance by one accepted step, not past ``t_stop``.

    Rejections (positivity loss, non-finite values, error above ``tol``)
    shrink the step and retry.

    Raises:
        StepCollapseError: If the step would fall below ``dt_min``.
    """
    attempt = _ATTEMPTS[config.scheme]
    proposal = state.dt
    rejected = 0
    while True:
        dt = min(proposal, t_stop - state.t)
        clipped = dt < proposal
        t_new = t_stop if clipped else state.t + dt
        if proposal < config.dt_min:
            raise StepCollapseError(
                f"step size {proposal:.3e} below dt_min={config.dt_min:g} at t={state.t:.6g}",
                t=state.t,
            )
        try:
            phi_new, err = attempt(state, model, config, dt)
            if not np.all(np.isfinite(phi_new)):
                raise DegenerateHessianError("non-finite potential")
            new_state = make_state(
                model, phi_new, t_new, dt, config.mu,
                step=state.step + 1, c0=state.c0, rejected=state.rejected + rejected,
            )  # fmt: skip
        except DegenerateHessianError as e:
            rejected += 1
            proposal = 0.5 * dt
            logger.warning("step rejected at t=%.6g (dt=%.3e): %s", state.t, dt, e.message)
            continue

        if config.adaptive:
            if err > config.tol:
                rejected += 1
                proposal = dt * max(0.2, 0.9 * math.sqrt(config.tol / err))
                logger.debug(
                    "error %.3e > tol at t=%.6g, retry with dt=%.3e", err, state.t, proposal
                )
                continue
            factor = 2.0 if err == 0.0 else min(2.0, 0.9 * math.sqrt(config.tol / err))
            next_dt = min(config.dt_max, max(dt * factor, state.dt if clipped else 0.0))
        else:
            next_dt = state.dt if clipped and not rejected else dt

        logger.debug("t=%.6g dt=%.3e err=%.3e", new_state.t, dt, err)
        return replace(new_state, dt=next_dt)


# ----------------------------------------------------------------------
# runs


def _sample(model: ToricModel, state: FlowState) -> FlowSample:
    return FlowSample(
        t=state.t,
        dt=state.dt,
        step=state.step,
        grad_norm2=dirichlet_energy(model, state.phidot, state.hess, state.dens, BOUNDARY),
        alpha=model.average(state.phidot, state.dens),
        mass_ratio=model.average(1.0, state.dens),
        phidot_sup=float(state.phidot.max()),
        phidot_inf=float(state.phidot.min()),
        phi_sup=float(state.phi.max()),
        phi_inf=float(state.phi.min()),
    )


def snapshot(state: FlowState, run_dir: RunDirectory, model: ToricModel) -> None:
    """Persist ``state`` into the run directory's snapshot store."""
    run_dir.write_snapshot(state.phi, model.grid.half_width, state.t, state.dt, state.step)


def run_flow(
    model: ToricModel,
    config: FlowConfig,
    phi0: np.ndarray = None,
    c0: float = None,
    sample_every: float = None,
    on_sample: Callable = None,
    run_dir: RunDirectory = None,
    initial_state: FlowState = None,
    on_collapse: str = "stop",
) -> Trajectory:
    """Integrate the flow from ``phi0 + c0`` to ``config.t_end``.

    Args:
        model: Toric model.
        config: Integrator settings.
        phi0: Initial deviation profile (default zero).
        c0: Initial constant; defaults to :func:`provisional_constant`.
        sample_every: Cadence of :class:`FlowSample` records (default the
            snapshot cadence).  Snapshot times are always sampled.
        on_sample: Called with each sampled :class:`FlowState`.
        run_dir: When given, snapshots are written there.
        initial_state: Continue from this state instead of ``phi0``.
        on_collapse: ``"stop"`` returns the partial trajectory with status
            ``"step-collapse"``; ``"raise"`` propagates the error.
    """
    sample_every = sample_every or config.snapshot_every
    if initial_state is None:
        phi0 = np.zeros(model.grid.shape) if phi0 is None else np.asarray(phi0, dtype=float)
        if c0 is None:
            c0 = provisional_constant(model, phi0)
        state = make_state(model, phi0 + c0, 0.0, config.dt_init, config.mu, c0=c0)
    else:
        state = initial_state
        c0 = state.c0

    traj = Trajectory(model=model.name, config=config, c0=c0)
    if run_dir is not None and initial_state is None:
        run_dir.write_json(
            "flow.json", {"model": model.name, "c0": c0, "scheme": config.scheme, "mu": config.mu}
        )

    def record(s: FlowState, is_snapshot: bool):
        traj.samples.append(_sample(model, s))
        if on_sample is not None:
            on_sample(s)
        if is_snapshot:
            traj.snapshots.append(Snapshot(s.t, s.phi.copy(), s.dt, s.step))
            if run_dir is not None:
                snapshot(s, run_dir, model)

    k_sample = int(math.floor(state.t / sample_every + _EVENT_EPS))
    k_snap = int(math.floor(state.t / config.snapshot_every + _EVENT_EPS))
    if initial_state is None:
        record(state, True)

    logger.info(
        "run %s: scheme=%s t_end=%g c0=%.10g", model.name, config.scheme, config.t_end, c0
    )
    while state.t < config.t_end - _EVENT_EPS:
        next_sample = min((k_sample + 1) * sample_every, config.t_end)
        next_snap = min((k_snap + 1) * config.snapshot_every, config.t_end)
        t_stop = min(next_sample, next_snap)
        try:
            state = step(state, model, config, t_stop)
        except StepCollapseError as e:
            traj.status = "step-collapse"
            traj.message = e.message
            logger.warning("run %s stopped: %s", model.name, e.message)
            if on_collapse == "raise":
                traj.final = state
                raise
            break
        hit_sample = state.t >= next_sample - _EVENT_EPS
        hit_snap = state.t >= next_snap - _EVENT_EPS
        if hit_sample or hit_snap:
            if hit_sample:
                k_sample += 1
            if hit_snap:
                k_snap += 1
            record(state, hit_snap)

    traj.final = state
    logger.info(
        "run %s finished at t=%.6g after %d steps (%s)",
        model.name, state.t, state.step, traj.status,
    )  # fmt: skip
    return traj


def resume(
    run_dir: RunDirectory,
    model: ToricModel,
    config: FlowConfig,
    sample_every: float = None,
    on_sample: Callable = None,
) -> Trajectory:
    """Continue a run from the last snapshot in ``run_dir`` up to ``config.t_end``.

    The returned trajectory contains only the new part of the run.
    """
    entries = run_dir.snapshots()
    if not entries:
        raise StepCollapseError("no snapshot to resume from", t=0.0)
    last = entries[-1]
    grid = run_dir.load_snapshot(last)
    meta = run_dir.read_json("flow.json") if run_dir.has("flow.json") else {}
    c0 = float(meta.get("c0", 0.0))
    state = make_state(model, grid.values, last.t, last.dt, config.mu, step=last.step, c0=c0)
    logger.info("resuming %s from t=%g (step %d)", run_dir, last.t, last.step)
    return run_flow(
        model, config, sample_every=sample_every, on_sample=on_sample,
        run_dir=run_dir, initial_state=state,
    )  # fmt: skip


# ----------------------------------------------------------------------
# normalization


def tail_average(times: np.ndarray, energy: np.ndarray, end_value: float, mu: float = 1.0):
    """``int_t^T exp(-mu (s - t)) energy(s) ds + exp(-mu (T - t)) * end_value`` at every sample.

    The integral uses the trapezoid rule on the recorded samples.
    """
    times = np.asarray(times, dtype=float)
    weighted = np.exp(-mu * (times - times[0])) * np.asarray(energy, dtype=float)
    cumulative = cumulative_trapezoid(weighted, times, initial=0.0)
    integral = np.exp(mu * (times - times[0])) * (cumulative[-1] - cumulative)
    return integral + np.exp(-mu * (times[-1] - times)) * end_value


@dataclass(frozen=True)
class Normalization:
    """Outcome of :func:`normalize_c0`.

    Attributes:
        c0_provisional: Constant the run was started with.
        c0: Normalized initial constant.
        integral: ``int_0^T exp(-mu s) ||grad phi_t||^2 ds`` plus the end tail.
        horizon: Normalization horizon ``T``.
        tail: ``exp(-mu T) * sup ||grad phi_t||^2``.
        times: Sample times.
        shifts: Per-sample additive constants (stable form, applied).
        naive_shifts: ``(c0 - c0_provisional) exp(mu t)``.
        discrepancy: Largest difference between the two forms.
    """

    c0_provisional: float
    c0: float
    integral: float
    horizon: float
    tail: float
    times: np.ndarray
    shifts: np.ndarray
    naive_shifts: np.ndarray
    discrepancy: float
    mu: float = 1.0

    def shift_at(self, t: float, mode: str = "stable") -> float:
        table = self.shifts if mode == "stable" else self.naive_shifts
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9:
            return float(np.interp(t, self.times, table))
        return float(table[idx])

    def to_dict(self) -> dict:
        return {
            "c0_provisional": self.c0_provisional,
            "c0": self.c0,
            "integral": self.integral,
            "horizon": self.horizon,
            "tail": self.tail,
            "mu": self.mu,
            "discrepancy": self.discrepancy,
            "times": self.times.tolist(),
            "shifts": self.shifts.tolist(),
            "naive_shifts": self.naive_shifts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Normalization":
        return cls(
            c0_provisional=data["c0_provisional"],
            c0=data["c0"],
            integral=data["integral"],
            horizon=data["horizon"],
            tail=data["tail"],
            times=np.asarray(data["times"]),
            shifts=np.asarray(data["shifts"]),
            naive_shifts=np.asarray(data["naive_shifts"]),
            discrepancy=data["discrepancy"],
            mu=data.get("mu", 1.0),
        )


def normalize_c0(
    trajectory: Trajectory, t_norm: float = None, tail_tol: float = None
) -> Normalization:
    """Compute the normalized initial constant from a provisional run.

    The correct constant makes the average ``alpha(t) = (1/V) int phi_t dens_phi``
    equal to ``int_t^inf exp(-mu (s - t)) ||grad phi_t||^2 ds`` for all t.  The
    stable per-time shift matches that tail formula at every sample; the naive
    shift propagates the constant correction as ``exp(mu t)``.

    Raises:
        TailNotConvergedError: If ``exp(-mu T) * sup ||grad phi_t||^2 > tail_tol``.
    """
    config = trajectory.config
    mu = config.mu
    if mu <= 0:
        raise TailNotConvergedError(f"normalization needs mu > 0, got {mu}", stage="normalize")
    t_norm = config.t_norm if t_norm is None else t_norm
    tail_tol = config.tail_tol if tail_tol is None else tail_tol
    if len(trajectory.samples) < 2:
        raise TailNotConvergedError("need at least two samples to normalize")

    times = trajectory.times
    energy = trajectory.column("grad_norm2")
    alpha = trajectory.column("alpha")
    mass = trajectory.column("mass_ratio")

    horizon = min(t_norm, float(times[-1]))
    tail = math.exp(-mu * horizon) * float(energy.max())
    if tail > tail_tol:
        raise TailNotConvergedError(
            f"normalization tail {tail:.3e} exceeds tail_tol={tail_tol:g} (T={horizon:g})",
            stage="normalize",
        )

    target = tail_average(times, energy, float(energy[-1]), mu)
    within = times <= horizon + _EVENT_EPS
    integral = float(
        tail_average(times[within], energy[within], float(energy[within][-1]), mu)[0]
    )
    shifts = (target - alpha) / (mu * mass)
    delta_c = float(shifts[0])
    naive = delta_c * np.exp(mu * times)
    discrepancy = float(np.abs(shifts - naive).max())
    c0 = trajectory.c0 + delta_c
    logger.info(
        "normalized c0=%.12g (provisional %.12g, integral %.6g, discrepancy %.3e)",
        c0, trajectory.c0, integral, discrepancy,
    )  # fmt: skip
    return Normalization(
        c0_provisional=trajectory.c0, c0=c0, integral=integral, horizon=horizon, tail=tail,
        times=times, shifts=shifts, naive_shifts=naive, discrepancy=discrepancy, mu=mu,
    )  # fmt: skip


def regauge(trajectory: Trajectory, norm: Normalization, mode: str = "stable") -> Trajectory:
    """Apply the normalization shifts to samples, snapshots and the final state."""
    mu = norm.mu
    samples = [s.shifted(norm.shift_at(s.t, mode), mu) for s in trajectory.samples]
    snaps = [
        replace(s, phi=s.phi + norm.shift_at(s.t, mode)) for s in trajectory.snapshots
    ]
    final = trajectory.final
    if final is not None:
        delta = norm.shift_at(final.t, mode)
        final = replace(final, phi=final.phi + delta, phidot=final.phidot + mu * delta, c0=norm.c0)
    return Trajectory(
        model=trajectory.model, config=trajectory.config, c0=norm.c0, samples=samples,
        snapshots=snaps, final=final, status=trajectory.status,
        message=trajectory.message, gauge="normalized",
    )  # fmt: skip
