"""Exact Kähler tensor calculus on a chart of C^n, n in {1, 2}.

All quantities are :class:`~krf_lab._jets.JetArray` objects built from exact
jets of closed-form potentials, so derivatives carry no truncation error.

Index conventions (``G[k, j] = g_{kbar j} = d_j d_kbar Phi``):

* ``Ginv`` is the matrix inverse, ``Ginv[j, l] = g^{j lbar}``.
* Christoffel symbols ``Gamma[l, p, m] = g^{l sbar} d_p g_{sbar m}``.
* Curvature ``Rm[q, p, l, m] = -d_qbar Gamma[l, p, m]`` and Ricci
  ``Ric[q, p] = Rm[q, p, l, l] = -d_p d_qbar log det g``.
* ``h = Ghat^{-1} G`` and the connection difference
  ``T[a, m, b] = (nabla_m h . h^{-1})^a_b = Gamma[a, m, b] - Gammahat[a, m, b]``.

Tensor axes are typed by a string over ``u`` (upper), ``l`` (lower),
``U`` (upper barred), ``L`` (lower barred); covariant derivatives append
their direction as a trailing ``l`` or ``L`` axis.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from ._exceptions import NonPositiveMetricError, UnsupportedDimensionError
from ._jets import JetArray, dz, dzbar, jet_det, jet_einsum, jet_inv, jet_trace, jlog
from .chart_expr import ChartExpr

__all__ = [
    "KahlerJet",
    "Curvature",
    "EndoJet",
    "build_jet",
    "curvature",
    "connection_difference",
    "compute_S",
    "s_from_third_derivatives",
    "s_jet",
    "cov_d",
    "cov_dbar",
    "inner",
    "laplacian",
    "tensor_laplacian",
    "tensor_laplacian_bar",
    "complex_hessian_jet",
    "POSITIVITY_FLOOR",
]

POSITIVITY_FLOOR = 1e-12
_AXES = "abcdefgh"


def complex_hessian_jet(f: JetArray, n: int) -> JetArray:
    """``H[k, j] = d_j d_kbar f`` as an ``(n, n)`` jet (order drops by two)."""
    rows = []
    for k in range(n):
        fk = dzbar(f, k)
        rows.append(JetArray.stack([dz(fk, j) for j in range(n)], axis=0))
    return JetArray.stack(rows, axis=0)


def laplacian(f: JetArray, ginv) -> JetArray:
    """``g^{p qbar} d_p d_qbar f`` for a scalar jet; ``ginv`` is a jet or array."""
    n = ginv.shape[-1]
    hess = complex_hessian_jet(f, n)  # [q, p]
    if isinstance(ginv, JetArray):
        return jet_einsum("pq,qp->", ginv, hess)
    return jet_einsum("pq,qp->", np.asarray(ginv), hess)


def cov_d(tensor: JetArray, types: str, gamma: JetArray) -> JetArray:
    """Covariant derivative ``nabla_p`` with trailing direction axis ``p``.

    Barred axes are not corrected: the Chern connection of a Kähler metric
    has no mixed Christoffel symbols.
    """
    n = gamma.shape[0]
    idx = _AXES[: len(types)]
    result = JetArray.stack([dz(tensor, p) for p in range(n)], axis=-1)
    for i, kind in enumerate(types):
        swapped = idx[:i] + "z" + idx[i + 1 :]
        if kind == "u":
            result = result + jet_einsum(f"{idx[i]}pz,{swapped}->{idx}p", gamma, tensor)
        elif kind == "l":
            result = result - jet_einsum(f"zp{idx[i]},{swapped}->{idx}p", gamma, tensor)
    return result


def cov_dbar(tensor: JetArray, types: str, gamma: JetArray) -> JetArray:
    """Covariant derivative ``nabla_qbar`` with trailing direction axis ``q``."""
    n = gamma.shape[0]
    idx = _AXES[: len(types)]
    gbar = gamma.conj()
    result = JetArray.stack([dzbar(tensor, q) for q in range(n)], axis=-1)
    for i, kind in enumerate(types):
        swapped = idx[:i] + "z" + idx[i + 1 :]
        if kind == "U":
            result = result + jet_einsum(f"{idx[i]}pz,{swapped}->{idx}p", gbar, tensor)
        elif kind == "L":
            result = result - jet_einsum(f"zp{idx[i]},{swapped}->{idx}p", gbar, tensor)
    return result


def _metric_factor(kind: str, g, ginv):
    # F[b, a]: b indexes the conjugated operand, a the first operand
    if kind == "u":
        return g
    if kind == "l":
        return ginv.T if isinstance(ginv, JetArray) else np.transpose(ginv)
    if kind == "U":
        return g.T if isinstance(g, JetArray) else np.transpose(g)
    if kind == "L":
        return ginv
    raise ValueError(f"unknown index type {kind!r}")


def _contract(spec: str, a, b):
    if isinstance(a, JetArray) or isinstance(b, JetArray):
        return jet_einsum(spec, a, b)
    return np.einsum(spec, a, b)


def inner(a, b, types: str, g, ginv):
    """Hermitian inner product ``<a, b>`` of two tensors of the same type.

    Works on jets or on plain arrays (point values); the result is a scalar
    jet or a complex number.
    """
    idx = _AXES[: len(types)]
    other = b.conj() if isinstance(b, JetArray) else np.conj(b)
    for i, kind in enumerate(types):
        factor = _metric_factor(kind, g, ginv)
        src = idx[:i] + "z" + idx[i + 1 :]
        other = _contract(f"z{idx[i]},{src}->{idx}", factor, other)
    return _contract(f"{idx},{idx}->", a, other)


def tensor_laplacian(tensor: JetArray, types: str, gamma: JetArray, ginv) -> JetArray:
    """``Delta T = g^{p qbar} nabla_p nabla_qbar T``."""
    second = cov_d(cov_dbar(tensor, types, gamma), types + "L", gamma)
    idx = _AXES[: len(types)]
    ginv = ginv if isinstance(ginv, JetArray) else np.asarray(ginv)
    return _contract(f"pq,{idx}qp->{idx}", ginv, second)


def tensor_laplacian_bar(tensor: JetArray, types: str, gamma: JetArray, ginv) -> JetArray:
    """``Deltabar T = g^{p qbar} nabla_qbar nabla_p T``."""
    second = cov_dbar(cov_d(tensor, types, gamma), types + "l", gamma)
    idx = _AXES[: len(types)]
    ginv = ginv if isinstance(ginv, JetArray) else np.asarray(ginv)
    return _contract(f"pq,{idx}pq->{idx}", ginv, second)


@dataclass(frozen=True)
class Curvature:
    """Curvature of one metric of a :class:`KahlerJet`.

    Attributes:
        riemann: ``Rm[q, p, l, m]`` jet (order 1).
        ricci: ``Ric[q, p] = -d_p d_qbar log det`` jet (order 1).
        ricci_up: ``Rup[a, b] = g^{a qbar} Ric[q, b]`` jet (order 1).
        scalar: Scalar curvature at the point.
        contraction_residual: Relative mismatch between ``Rm`` contracted
            over ``l = m`` and the log-det Ricci form.
    """

    riemann: JetArray
    ricci: JetArray
    ricci_up: JetArray
    scalar: float
    contraction_residual: float


@dataclass(frozen=True)
class KahlerJet:
    """Exact jets of a reference metric and an evolving metric at a point.

    ``phi`` carries derivatives to order 5; the metrics to order 3.  When
    built from a time family the jet variables include ``t`` (last) and
    ``phidot`` holds ``d phi / dt`` with spatial derivatives to order 4.
    """

    n: int
    point: np.ndarray
    with_time: bool
    phi: JetArray
    ghat: JetArray
    g: JetArray
    phidot: Optional[JetArray] = None

    @property
    def time_var(self) -> int:
        return 2 * self.n

    @cached_property
    def ghat_inv(self) -> JetArray:
        return jet_inv(self.ghat)

    @cached_property
    def g_inv(self) -> JetArray:
        return jet_inv(self.g)

    def metric(self, which: str = "evolving") -> tuple:
        if which == "evolving":
            return self.g, self.g_inv
        if which == "reference":
            return self.ghat, self.ghat_inv
        raise ValueError(f"which must be 'evolving' or 'reference', got {which!r}")

    def christoffel(self, which: str = "evolving") -> JetArray:
        return self._gamma_evolving if which == "evolving" else self._gamma_reference

    @staticmethod
    def _christoffel(g: JetArray, g_inv: JetArray, n: int) -> JetArray:
        dg = JetArray.stack([dz(g, p) for p in range(n)], axis=-1)  # [s, m, p]
        return jet_einsum("ls,smp->lpm", g_inv, dg)

    @cached_property
    def _gamma_evolving(self) -> JetArray:
        return self._christoffel(self.g, self.g_inv, self.n)

    @cached_property
    def _gamma_reference(self) -> JetArray:
        return self._christoffel(self.ghat, self.ghat_inv, self.n)

    @cached_property
    def log_det_ratio(self) -> JetArray:
        """``G = log(det g / det ghat)`` as a jet (order 3)."""
        return jlog(jet_det(self.g)) - jlog(jet_det(self.ghat))

    def value(self, name: str) -> np.ndarray:
        return getattr(self, name).value


def _min_eigenvalue(mat: np.ndarray) -> float:
    herm = 0.5 * (mat + mat.conj().T)
    return float(np.linalg.eigvalsh(herm).min())


def build_jet(
    reference: ChartExpr,
    phi: ChartExpr,
    point,
    time_family: Optional[ChartExpr] = None,
    order: int = 5,
) -> KahlerJet:
    """Build the exact :class:`KahlerJet` of ``reference`` and ``reference + phi``.

    Args:
        reference: Reference Kähler potential.
        phi: Potential perturbation.
        point: Complex coordinates of the evaluation point.
        time_family: Optional ``phi(z, t)``; when given its jets replace
            ``phi`` and include the time variable (taken at ``t = 0``).
        order: Jet order of the potentials.

    Raises:
        UnsupportedDimensionError: If ``n`` is not 1 or 2.
        NonPositiveMetricError: If either metric has an eigenvalue <= 1e-12.
    """
    n = reference.n
    if n not in (1, 2):
        raise UnsupportedDimensionError(f"chart calculus supports n in {{1, 2}}, got n={n}")
    point = np.asarray(point, dtype=complex).reshape(-1)

    with_time = time_family is not None
    source = time_family if with_time else phi
    psi_hat = reference.jet(point, order, with_time=with_time)
    phi_jet = source.jet(point, order, with_time=with_time)

    ghat = complex_hessian_jet(psi_hat, n)
    g = complex_hessian_jet(psi_hat + phi_jet, n)
    for label, mat in (("reference", ghat), ("evolving", g)):
        lam = _min_eigenvalue(mat.value)
        if lam <= POSITIVITY_FLOOR:
            raise NonPositiveMetricError(
                f"{label} metric not positive definite at {point.tolist()}: "
                f"min eigenvalue {lam:.3e}"
            )

    phidot = phi_jet.diff(2 * n) if with_time else None
    return KahlerJet(
        n=n, point=point, with_time=with_time, phi=phi_jet, ghat=ghat, g=g, phidot=phidot
    )


def curvature(jet: KahlerJet, which: str = "evolving") -> Curvature:
    """Full curvature tensor and Ricci form of the chosen metric."""
    g, g_inv = jet.metric(which)
    gamma = jet.christoffel(which)
    n = jet.n

    dbar = JetArray.stack([dzbar(gamma, q) for q in range(n)], axis=-1)  # [l, p, m, q]
    riemann = (-dbar).transpose(3, 1, 0, 2)
    ricci = -complex_hessian_jet(jlog(jet_det(g)), n)
    contracted = JetArray(np.trace(riemann.coeffs, axis1=2, axis2=3), riemann.basis)

    ric0 = ricci.value
    scale = max(1.0, float(np.abs(ric0).max()))
    residual = float(np.abs(contracted.value - ric0).max()) / scale

    ricci_up = jet_einsum("aq,qb->ab", g_inv, ricci)
    scalar = float(np.real(np.trace(ricci_up.value)))
    return Curvature(
        riemann=riemann,
        ricci=ricci,
        ricci_up=ricci_up,
        scalar=scalar,
        contraction_residual=residual,
    )


@dataclass(frozen=True)
class EndoJet:
    """The endomorphism ``h = ghat^{-1} g`` and its connection difference tensor.

    Attributes:
        h, h_inv: ``(n, n)`` jets (order 3).
        trace_h: ``Tr h`` jet (order 3).
        T: ``(nabla_m h . h^{-1})^a_b`` as ``T[a, m, b]`` (order 2).
        dT: ``nabla_p T`` with axes ``[a, m, b, p]`` (order 1).
        dbarT: ``nabla_qbar T`` with axes ``[a, m, b, q]`` (order 1).
    """

    h: JetArray
    h_inv: JetArray
    trace_h: JetArray
    T: JetArray
    dT: JetArray
    dbarT: JetArray


def connection_difference(jet: KahlerJet) -> EndoJet:
    """Compute ``nabla h . h^{-1}`` from the covariant derivative of ``h``."""
    h = jet_einsum("al,lb->ab", jet.ghat_inv, jet.g)
    h_inv = jet_einsum("al,lb->ab", jet.g_inv, jet.ghat)
    gamma = jet.christoffel("evolving")
    grad_h = cov_d(h, "ul", gamma)  # [a, c, m]
    T = jet_einsum("acm,cb->amb", grad_h, h_inv)
    return EndoJet(
        h=h,
        h_inv=h_inv,
        trace_h=jet_trace(h),
        T=T,
        dT=cov_d(T, "ull", gamma),
        dbarT=cov_dbar(T, "ull", gamma),
    )


def s_jet(jet: KahlerJet, endo: EndoJet) -> JetArray:
    """``S = |T|^2_g`` as a real scalar jet (order 2)."""
    return inner(endo.T, endo.T, "ull", jet.g, jet.g_inv).real


def compute_S(jet: KahlerJet, endo: Optional[EndoJet] = None) -> float:
    """``S = |nabla h . h^{-1}|^2_g`` at the jet point."""
    endo = connection_difference(jet) if endo is None else endo
    T0 = endo.T.value
    return float(np.real(inner(T0, T0, "ull", jet.g.value, jet.g_inv.value)))


def s_from_third_derivatives(jet: KahlerJet) -> float:
    """``S = g^{j rbar} g^{s kbar} g^{m tbar} phi_{j kbar m} phi_{rbar s tbar}``.

    ``phi_{j kbar m}`` is the reference-covariant derivative of
    ``phi_{kbar j}``; no connection difference tensor is formed.
    """
    gamma_hat = jet.christoffel("reference")
    phi3 = cov_d(jet.g - jet.ghat, "Ll", gamma_hat).value  # [k, j, m]
    ginv = jet.g_inv.value
    # phi3 indices: k barred lower, j lower, m lower
    value = np.einsum(
        "kjm,srt,jr,sk,mt->", phi3, np.conj(phi3), ginv, ginv, ginv, optimize=True
    )
    return float(np.real(value))
