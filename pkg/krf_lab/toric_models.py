"""Toric Fano model geometries in log coordinates.

A model is a reflexive polytope ``P = {x : <l_k, x> >= -1}`` together with a
log-sum-exp reference potential

    psi_0(xi) = log sum_{a in P ∩ Z^n} c_a exp(<a, xi>)

on the box ``[-L, L]^n`` of log coordinates ``xi_i = log|w_i|^2``.  Torus
invariant quantities reduce to real convex analysis:

* the volume form is ``det D^2 psi dxi`` (``dens``) and ``vol(P) = V``;
* the reference Ricci potential is ``fhat = -psi_0 - log det D^2 psi_0 + c``;
* ``G = log(dens_phi / dens_0)`` for a perturbation ``phi``.

Derivatives of ``psi_0`` are cumulants of the softmax distribution over the
lattice points and are evaluated in closed form; only perturbations are
differentiated on the grid.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations, product

import numpy as np
from scipy.special import factorial, logsumexp, softmax

from . import chart_expr as ce
from ._exceptions import (
    DegenerateHessianError,
    InvalidConfigurationError,
    NotReflexiveError,
    UnboundedRicciPotentialError,
    UnsupportedModelError,
)
from ._grid import BoxGrid
from .chart_calculus import build_jet, curvature

logger = logging.getLogger(__name__)

__all__ = [
    "MODEL_NAMES",
    "REFERENCE_KINDS",
    "DENSITY_FLOOR",
    "ReflexivePolytope",
    "LogSumExpPotential",
    "ToricModel",
    "build_model",
    "ricci_potential_hat",
    "hessian",
    "densities",
    "densities_from_hessian",
    "flow_hessian",
    "dirichlet_energy",
    "inverse",
    "chart_potential",
    "chart_consistency",
    "model_info",
]

DENSITY_FLOOR = 1e-10
TAIL_EXTENSION = 12.0
CHUNK = 32768

_FACET_NORMALS = {
    "cp1": [[1], [-1]],
    "cp1xcp1": [[1, 0], [-1, 0], [0, 1], [0, -1]],
    "cp2": [[1, 0], [0, 1], [-1, -1]],
    "bl1cp2": [[1, 0], [0, 1], [-1, -1], [1, 1]],
}

MODEL_NAMES = tuple(_FACET_NORMALS)
REFERENCE_KINDS = ("bergman", "fubini_study")


# ----------------------------------------------------------------------
# polytopes


def _primitive(vec) -> bool:
    g = 0
    for v in vec:
        g = math.gcd(g, abs(int(v)))
    return g == 1


@dataclass(frozen=True)
class ReflexivePolytope:
    """Reflexive lattice polytope ``{x : <l_k, x> >= -1}`` for n in {1, 2}.

    Attributes:
        n: Dimension.
        normals: Integer facet normals ``l_k`` with shape ``(K, n)``.
        vertices: Integer vertices, counter-clockwise for n = 2.
        lattice_points: All points of ``P ∩ Z^n``.
    """

    n: int
    normals: np.ndarray
    vertices: np.ndarray
    lattice_points: np.ndarray

    @classmethod
    def from_normals(cls, normals) -> "ReflexivePolytope":
        """Build and validate a polytope from its facet normals.

        Raises:
            NotReflexiveError: If a normal is not primitive, the polytope is
                unbounded, a facet is redundant, or a vertex is not integral.
        """
        normals = np.atleast_2d(np.asarray(normals, dtype=int))
        n = normals.shape[1]
        if n not in (1, 2):
            raise NotReflexiveError(f"polytope dimension must be 1 or 2, got {n}")
        for ell in normals:
            if not _primitive(ell):
                raise NotReflexiveError(f"facet normal {ell.tolist()} is not primitive")

        if n == 1:
            signs = np.sign(normals[:, 0])
            if not (np.any(signs > 0) and np.any(signs < 0)):
                raise NotReflexiveError("polytope is unbounded")
            lo = max(-1.0 / ell for ell in normals[:, 0] if ell > 0)
            hi = min(-1.0 / ell for ell in normals[:, 0] if ell < 0)
            vertices = np.array([[lo], [hi]])
        else:
            angles = np.sort(np.arctan2(normals[:, 1], normals[:, 0]))
            gaps = np.diff(np.append(angles, angles[0] + 2 * np.pi))
            if gaps.max() >= np.pi - 1e-12:
                raise NotReflexiveError("facet normals do not positively span the plane")
            found = []
            for a, b in combinations(range(len(normals)), 2):
                mat = normals[[a, b]].astype(float)
                if abs(np.linalg.det(mat)) < 1e-12:
                    continue
                x = np.linalg.solve(mat, [-1.0, -1.0])
                if np.all(normals @ x >= -1.0 - 1e-9):
                    if not any(np.allclose(x, y) for y in found):
                        found.append(x)
            vertices = np.array(found)
            center = vertices.mean(axis=0)
            order = np.argsort(np.arctan2(*(vertices - center).T[::-1]))
            vertices = vertices[order]
            for ell in normals:
                on_facet = np.sum(np.abs(vertices @ ell + 1.0) < 1e-9)
                if on_facet < 2:
                    raise NotReflexiveError(f"facet with normal {ell.tolist()} is redundant")

        if not np.allclose(vertices, np.round(vertices), atol=1e-9):
            raise NotReflexiveError(f"vertices {vertices.tolist()} are not integral")
        vertices = np.round(vertices).astype(int)

        lo, hi = vertices.min(axis=0), vertices.max(axis=0)
        box = product(*[range(lo[i], hi[i] + 1) for i in range(n)])
        points = np.array([p for p in box if np.all(normals @ np.array(p) >= -1)], dtype=int)
        return cls(n=n, normals=normals, vertices=vertices, lattice_points=points)

    @property
    def volume(self) -> float:
        if self.n == 1:
            return float(self.vertices[1, 0] - self.vertices[0, 0])
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    @property
    def barycenter(self) -> np.ndarray:
        """Centroid of the polytope; zero iff the Futaki invariant vanishes."""
        if self.n == 1:
            return np.array([0.5 * float(self.vertices[0, 0] + self.vertices[1, 0])])
        x, y = self.vertices[:, 0].astype(float), self.vertices[:, 1].astype(float)
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        area = 0.5 * float(cross.sum())
        cx = float(np.sum((x + xn) * cross)) / (6.0 * area)
        cy = float(np.sum((y + yn) * cross)) / (6.0 * area)
        return np.array([cx, cy])

    def facet_vertices(self, k: int) -> np.ndarray:
        """Vertices lying on facet ``k``."""
        mask = self.vertices @ self.normals[k] == -1
        return self.vertices[mask]

    def adjacent_facets(self) -> list:
        """Pairs of facet indices meeting at a vertex, with that vertex (n = 2)."""
        pairs = []
        for v in self.vertices:
            on = [k for k, ell in enumerate(self.normals) if int(ell @ v) == -1]
            if len(on) == 2:
                pairs.append((on[0], on[1], v))
        return pairs


# ----------------------------------------------------------------------
# reference potentials


class LogSumExpPotential:
    """``psi(xi) = log sum_a exp(<a, xi> + log c_a)`` with cumulant derivatives."""

    def __init__(self, points: np.ndarray, log_weights: np.ndarray):
        self.points = np.asarray(points, dtype=float)
        self.log_weights = np.asarray(log_weights, dtype=float)
        self.n = self.points.shape[1]

    def _logits(self, xi: np.ndarray) -> np.ndarray:
        return xi @ self.points.T + self.log_weights

    def value(self, xi: np.ndarray) -> np.ndarray:
        return logsumexp(self._logits(np.asarray(xi, dtype=float)), axis=-1)

    def cumulants(self, xi: np.ndarray, order: int = 2) -> tuple:
        """Value and derivatives up to ``order`` (2, 3 or 4) at points ``xi[..., n]``.

        Returns ``(value, gradient, hessian)`` followed by the third and
        fourth derivative tensors as ``order`` requests.
        """
        xi = np.asarray(xi, dtype=float)
        lead = xi.shape[:-1]
        flat = xi.reshape(-1, self.n)
        outputs = []
        for start in range(0, flat.shape[0], CHUNK):
            outputs.append(self._cumulants_flat(flat[start : start + CHUNK], order))
        stacked = [np.concatenate(parts, axis=0) for parts in zip(*outputs)]
        n = self.n
        shapes = [(), (n,), (n, n), (n, n, n), (n, n, n, n)]
        return tuple(s.reshape(lead + shapes[i]) for i, s in enumerate(stacked))

    def _cumulants_flat(self, xi: np.ndarray, order: int) -> tuple:
        logits = self._logits(xi)
        value = logsumexp(logits, axis=-1)
        prob = softmax(logits, axis=-1)
        mean = prob @ self.points
        c = self.points[None, :, :] - mean[:, None, :]
        hess = np.einsum("ma,mai,maj->mij", prob, c, c)
        if order <= 2:
            return value, mean, hess
        k3 = np.einsum("ma,mai,maj,mak->mijk", prob, c, c, c)
        if order == 3:
            return value, mean, hess, k3
        m4 = np.einsum("ma,mai,maj,mak,mal->mijkl", prob, c, c, c, c)
        k4 = (
            m4
            - np.einsum("mij,mkl->mijkl", hess, hess)
            - np.einsum("mik,mjl->mijkl", hess, hess)
            - np.einsum("mil,mjk->mijkl", hess, hess)
        )
        return value, mean, hess, k3, k4


def _reference_weights(polytope: ReflexivePolytope, reference: str, name: str) -> np.ndarray:
    points = polytope.lattice_points
    if reference == "bergman":
        return np.zeros(len(points))
    if reference != "fubini_study":
        raise UnsupportedModelError(
            f"unknown reference {reference!r}; use one of {REFERENCE_KINDS}"
        )
    if name == "cp1":
        k = points[:, 0] + 1
        return np.log(factorial(2) / (factorial(k) * factorial(2 - k)))
    if name == "cp1xcp1":
        k = points + 1
        return np.sum(np.log(factorial(2) / (factorial(k) * factorial(2 - k))), axis=1)
    if name == "cp2":
        k1, k2 = points[:, 0] + 1, points[:, 1] + 1
        k0 = 3 - k1 - k2
        return np.log(factorial(3) / (factorial(k0) * factorial(k1) * factorial(k2)))
    raise UnsupportedModelError(
        f"{name} carries no Kähler-Einstein reference; use reference='bergman'"
    )


# ----------------------------------------------------------------------
# models


def _det(mat: np.ndarray) -> np.ndarray:
    if mat.shape[-1] == 1:
        return mat[..., 0, 0]
    return mat[..., 0, 0] * mat[..., 1, 1] - mat[..., 0, 1] * mat[..., 1, 0]


def _inv(mat: np.ndarray) -> np.ndarray:
    if mat.shape[-1] == 1:
        return 1.0 / mat
    det = _det(mat)[..., None, None]
    adj = np.empty_like(mat)
    adj[..., 0, 0] = mat[..., 1, 1]
    adj[..., 1, 1] = mat[..., 0, 0]
    adj[..., 0, 1] = -mat[..., 0, 1]
    adj[..., 1, 0] = -mat[..., 1, 0]
    return adj / det


def _min_eig(mat: np.ndarray) -> np.ndarray:
    if mat.shape[-1] == 1:
        return mat[..., 0, 0]
    a, b, c = mat[..., 0, 0], mat[..., 0, 1], mat[..., 1, 1]
    return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ToricModel:
    """A toric Fano model sampled on a log-coordinate box grid.

    Grid arrays are read-only.  ``mass0`` is the nodal quadrature measure of
    ``dens0`` including the exterior mass lumped onto boundary nodes, and
    ``volume_h = sum(mass0)`` is the quadrature volume used for averages.
    ``edge_scale[..., a]`` rescales the exterior-cell rows of the second
    derivative along axis ``a`` (one away from the two outermost nodes).
    """

    name: str
    reference: str
    polytope: ReflexivePolytope
    potential: LogSumExpPotential
    grid: BoxGrid
    psi0: np.ndarray
    hess0: np.ndarray
    hess0_inv: np.ndarray
    dens0: np.ndarray
    fhat: np.ndarray
    tail: np.ndarray
    c_norm: float
    edge_scale: np.ndarray
    mu: float = 1.0
    mass0: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "mass0", _frozen(self.grid.weights * self.dens0 + self.tail))

    @property
    def n(self) -> int:
        return self.polytope.n

    @property
    def volume(self) -> float:
        return self.polytope.volume

    @property
    def volume_h(self) -> float:
        return float(np.sum(self.mass0))

    def mass(self, dens: np.ndarray = None) -> np.ndarray:
        """Nodal measure of ``dens`` (default ``dens0``), exterior mass included."""
        if dens is None:
            return self.mass0
        return self.grid.weights * dens + self.tail * (dens / self.dens0)

    def average(self, values, dens: np.ndarray = None) -> float:
        """``(1/V) * integral(values * dens)`` by quadrature."""
        return float(np.sum(self.mass(dens) * values)) / self.volume_h

    def log_average_exp(self, exponent: np.ndarray, dens: np.ndarray = None) -> float:
        """``log((1/V) * integral(exp(exponent) * dens))`` without overflow."""
        mass = self.mass(dens)
        positive = mass > 0
        return float(
            logsumexp(exponent[positive], b=mass[positive]) - math.log(self.volume_h)
        )

    @cached_property
    def third0(self) -> np.ndarray:
        """Third derivatives of ``psi_0`` on the grid, shape ``(*grid, n, n, n)``."""
        return _frozen(self.potential.cumulants(self.grid.xi, order=3)[3])

    @cached_property
    def ricci0(self) -> np.ndarray:
        """Reference Ricci form ``-D^2 log dens0`` on the grid, shape ``(*grid, n, n)``."""
        return _frozen(self.ricci_at(self.grid.xi))

    def fhat_at(self, xi) -> np.ndarray:
        """Closed-form ``fhat`` at arbitrary log coordinates ``xi[..., n]``."""
        value, _, hess = self.potential.cumulants(xi, order=2)
        return -value - np.log(_det(hess)) + self.c_norm

    def ricci_at(self, xi) -> np.ndarray:
        """Reference Ricci form in log coordinates, ``-D^2 log det D^2 psi_0``."""
        _, _, hess, k3, k4 = self.potential.cumulants(xi, order=4)
        hinv = _inv(hess)
        term1 = np.einsum("...ij,...jiab->...ab", hinv, k4)
        term2 = np.einsum("...ij,...jka,...kl,...lib->...ab", hinv, k3, hinv, k3)
        return -(term1 - term2)


def _exterior_tail(potential: LogSumExpPotential, grid: BoxGrid) -> np.ndarray:
    """Exterior mass of ``dens0`` lumped onto the nearest box boundary node."""
    ext = grid.extended(TAIL_EXTENSION)
    _, _, hess = potential.cumulants(ext.xi, order=2)
    ext_mass = ext.weights * _det(hess)
    steps = (ext.points - grid.points) // 2
    index = np.clip(np.arange(ext.points) - steps, 0, grid.points - 1)

    folded = ext_mass
    for axis in range(grid.n):
        out_shape = list(folded.shape)
        out_shape[axis] = grid.points
        acc = np.zeros(out_shape)
        moved_in = np.moveaxis(folded, axis, 0)
        moved_out = np.moveaxis(acc, axis, 0)
        np.add.at(moved_out, index, moved_in)
        folded = acc
    _, _, hess_box = potential.cumulants(grid.xi, order=2)
    return folded - grid.weights * _det(hess_box)


def _exterior_cell_scale(
    polytope: ReflexivePolytope, grid: BoxGrid, psi0: np.ndarray, hess0: np.ndarray
) -> np.ndarray:
    """Rescaling ``h / ell`` of the exterior-cell rows along every axis.

    Along axis ``a`` the slope ``d_a psi`` of any admissible potential tends to
    the extreme value of ``x_a`` on the polytope.  The change of slope of
    ``psi_0`` across the outermost cell is therefore known exactly, and
    ``ell = change / D_aa psi_0`` is the length that makes the cell row
    consistent with the closed-form reference Hessian.
    """
    h = grid.h
    scale = np.ones(grid.shape + (grid.n,))
    for a in range(grid.n):
        psi = np.moveaxis(psi0, a, -1)
        curv = np.moveaxis(hess0[..., a, a], a, -1)
        out = np.moveaxis(scale[..., a], a, -1)
        x_min = float(polytope.vertices[:, a].min())
        x_max = float(polytope.vertices[:, a].max())
        left = (psi[..., 1] - psi[..., 0]) / h - x_min
        right = x_max - (psi[..., -1] - psi[..., -2]) / h
        out[..., 0] = h * curv[..., 0] / left
        out[..., -1] = h * curv[..., -1] / right
    return scale


def build_model(
    name: str, L: float = 8.0, grid: int = 513, reference: str = "bergman"
) -> ToricModel:
    """Construct a named toric Fano model on the box ``[-L, L]^n``.

    Args:
        name: One of ``cp1``, ``cp1xcp1``, ``cp2``, ``bl1cp2``.
        L: Box half-width, at least 6.
        grid: Nodes per axis, at least 64.
        reference: ``"bergman"`` (unit weights) or ``"fubini_study"``
            (multinomial weights, Kähler-Einstein).

    Raises:
        UnsupportedModelError: Unknown model, or no Fubini-Study reference.
        InvalidConfigurationError: ``L`` or ``grid`` out of range.
        NotReflexiveError: Polytope data fails the reflexivity predicate.
        UnboundedRicciPotentialError: ``fhat`` is not stable under L -> L + 2.
    """
    if name not in _FACET_NORMALS:
        raise UnsupportedModelError(f"unknown model {name!r}; available: {list(MODEL_NAMES)}")
    if L < 6:
        raise InvalidConfigurationError(f"box half-width L must be >= 6, got {L}")
    if grid < 64:
        raise InvalidConfigurationError(f"grid must have >= 64 nodes per axis, got {grid}")

    polytope = ReflexivePolytope.from_normals(_FACET_NORMALS[name])
    potential = LogSumExpPotential(
        polytope.lattice_points, _reference_weights(polytope, reference, name)
    )
    box = BoxGrid(polytope.n, L, grid)
    psi0, _, hess0 = potential.cumulants(box.xi, order=2)
    if _min_eig(hess0).min() <= 0:
        raise DegenerateHessianError(f"reference Hessian of {name} is not positive definite")
    dens0 = _det(hess0)
    tail = _exterior_tail(potential, box)

    raw = -psi0 - np.log(dens0)
    mass0 = box.weights * dens0 + tail
    volume_h = float(np.sum(mass0))
    c_norm = -float(logsumexp(raw, b=mass0) - math.log(volume_h))
    fhat = raw + c_norm
    if np.ptp(fhat) < 1e-10:
        # Kähler-Einstein reference
        c_norm -= float(np.mean(fhat))
        fhat = np.zeros_like(fhat)

    wide = BoxGrid(polytope.n, L + 2.0, grid + int(round(4.0 / box.h)))
    wide_value, _, wide_hess = potential.cumulants(wide.xi, order=2)
    sup_box = float(np.abs(fhat).max())
    sup_wide = float(np.abs(-wide_value - np.log(_det(wide_hess)) + c_norm).max())
    if abs(sup_wide - sup_box) > 0.1 * sup_box + 1e-8:
        raise UnboundedRicciPotentialError(
            f"max|fhat| changes from {sup_box:.4g} to {sup_wide:.4g} under L -> L + 2"
        )

    volume = polytope.volume
    if abs(volume_h - volume) > 1e-6 * volume:
        logger.warning(
            "quadrature volume %.10g differs from vol(P) = %g for %s (L=%g, grid=%d)",
            volume_h, volume, name, L, grid,
        )
    logger.info(
        "built %s (%s): V=%g, V_h=%.10g, max|fhat|=%.4g", name, reference, volume, volume_h, sup_box
    )
    return ToricModel(
        name=name,
        reference=reference,
        polytope=polytope,
        potential=potential,
        grid=box,
        psi0=_frozen(psi0),
        hess0=_frozen(hess0),
        hess0_inv=_frozen(_inv(hess0)),
        dens0=_frozen(dens0),
        fhat=_frozen(fhat),
        tail=_frozen(tail),
        c_norm=c_norm,
        edge_scale=_frozen(_exterior_cell_scale(polytope, box, psi0, hess0)),
    )


def ricci_potential_hat(model: ToricModel) -> np.ndarray:
    """Normalized reference Ricci potential on the model grid."""
    return model.fhat


def hessian(model: ToricModel, phi: np.ndarray, boundary: str = "onesided") -> np.ndarray:
    """``D^2(psi_0 + phi)`` on the grid, with a closed-form ``D^2 psi_0``."""
    return model.hess0 + model.grid.hessian(phi, boundary)


def densities(model: ToricModel, phi: np.ndarray, boundary: str = "onesided") -> tuple:
    """Monge-Ampère density ``det D^2(psi_0 + phi)`` and ``G = log(dens / dens0)``.

    ``G`` is formed as ``log det(I + H0^-1 D^2 phi)``, which is exactly zero
    when the grid Hessian of ``phi`` vanishes.

    Raises:
        DegenerateHessianError: If the smallest eigenvalue drops below 1e-10.
    """
    phi = np.asarray(phi, dtype=float)
    dens, G, _ = densities_from_hessian(model, model.grid.hessian(phi, boundary))
    return dens, G


def densities_from_hessian(model: ToricModel, dphi: np.ndarray) -> tuple:
    """``(dens, G, H)`` from a precomputed grid Hessian ``dphi`` of the perturbation."""
    total = model.hess0 + dphi
    lam = _min_eig(total)
    if lam.min() < DENSITY_FLOOR:
        worst = np.unravel_index(np.argmin(lam), lam.shape)
        raise DegenerateHessianError(
            f"D^2(psi_0 + phi) has eigenvalue {lam.min():.3e} at xi={model.grid.xi[worst].tolist()}"
        )
    m = model.hess0_inv @ dphi
    if model.n == 1:
        G = np.log1p(m[..., 0, 0])
    else:
        G = np.log1p(np.trace(m, axis1=-2, axis2=-1) + _det(m))
    return model.dens0 * np.exp(G), G, total


def flow_hessian(model: ToricModel, u: np.ndarray) -> np.ndarray:
    """Grid Hessian of ``u`` with the exterior-cell closure used by the flow.

    Mixed entries use reflected first derivatives.
    """
    hess = model.grid.hessian(u, "exterior")
    for a in range(model.n):
        hess[..., a, a] *= model.edge_scale[..., a]
    return hess


def inverse(hess: np.ndarray) -> np.ndarray:
    """Pointwise inverse of a field of 1x1 or 2x2 matrices."""
    return _inv(hess)


def dirichlet_energy(
    model: ToricModel, u: np.ndarray, hess: np.ndarray, dens: np.ndarray, boundary: str = "reflect"
) -> float:
    """``(1/V) * integral(H^-1(grad u, grad u) * dens)`` over the box.

    Grid functions are constant beyond the box, so the exterior carries no
    gradient energy.
    """
    grad = model.grid.gradient(u, boundary)
    form = np.einsum("...a,...ab,...b->...", grad, _inv(hess), grad)
    return float(np.sum(model.grid.weights * dens * form)) / model.volume_h


# ----------------------------------------------------------------------
# chart view


def chart_potential(model: ToricModel) -> ce.ChartExpr:
    """Reference potential on the ``(C*)^n`` chart as a :class:`ChartExpr`.

    Negative lattice exponents are cleared by the monomial ``prod |w_i|^(2 m_i)``;
    the compensating ``-sum m_i log|w_i|^2`` is pluriharmonic.
    """
    n = model.n
    points = model.polytope.lattice_points
    shift = -points.min(axis=0)
    weights = np.exp(model.potential.log_weights)
    poly = ce.constant(0.0, n)
    for a, c in zip(points + shift, weights):
        term = ce.constant(float(c), n)
        for i in range(n):
            if a[i]:
                term = term * ce.abs2(n, i) ** int(a[i])
        poly = poly + term
    expr = ce.log(poly)
    for i in range(n):
        if shift[i]:
            expr = expr - float(shift[i]) * ce.log(ce.abs2(n, i))
    return expr


def _relative(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.abs(a - b).max() / max(1.0, float(np.abs(b).max())))


def chart_consistency(model: ToricModel, points: int = 5, seed: int = 0, eps: float = 0.2) -> dict:
    """Compare the log-coordinate reduction with exact chart calculus.

    At random ``xi`` the chart metric, Ricci form, ``fhat`` and ``G`` of the
    invariant perturbation ``eps * sum log(1 + |w_i|^2)`` are evaluated from
    jets and compared with the closed-form toric expressions.

    Returns:
        dict: Worst relative errors per quantity and ``passed`` (all <= 1e-6).
    """
    n = model.n
    rng = np.random.default_rng(seed)
    reference = chart_potential(model)
    phi = ce.constant(0.0, n)
    for i in range(n):
        phi = phi + eps * ce.log(ce.constant(1.0, n) + ce.abs2(n, i))

    errors = {"metric": 0.0, "ricci": 0.0, "fhat": 0.0, "G": 0.0}
    for _ in range(points):
        xi = rng.uniform(-2.0, 2.0, size=n)
        w = np.exp(xi / 2.0) * np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=n))
        jet = build_jet(reference, phi, w, order=4)
        scale = np.outer(np.conj(w), w)  # [k, j] -> conj(w_k) w_j

        _, _, hess = model.potential.cumulants(xi, order=2)
        ghat = (jet.ghat.value * scale).T
        errors["metric"] = max(errors["metric"], _relative(ghat, hess))

        ric = (curvature(jet, "reference").ricci.value * scale).T
        errors["ricci"] = max(errors["ricci"], _relative(ric, model.ricci_at(xi)))

        log_det = float(np.log(np.real(np.linalg.det(jet.ghat.value))))
        psi_chart = reference.evaluate(ce.real_point(w, n))
        f_chart = -log_det - psi_chart - float(np.sum(xi)) + model.c_norm
        errors["fhat"] = max(errors["fhat"], _relative(f_chart, model.fhat_at(xi)))

        bump = np.diag(eps * np.exp(xi) / (1.0 + np.exp(xi)) ** 2)
        g_toric = math.log(np.linalg.det(hess + bump) / np.linalg.det(hess))
        g_chart = float(np.real(jet.log_det_ratio.value))
        errors["G"] = max(errors["G"], _relative(g_chart, g_toric))

    errors["passed"] = all(v <= 1e-6 for v in errors.values())
    return errors


def model_info(model: ToricModel) -> dict:
    """JSON-ready summary of a model (``krf-lab model-info``)."""
    return {
        "name": model.name,
        "reference": model.reference,
        "n": model.n,
        "normals": model.polytope.normals.tolist(),
        "vertices": model.polytope.vertices.tolist(),
        "lattice_points": model.polytope.lattice_points.tolist(),
        "volume": model.volume,
        "volume_quadrature": model.volume_h,
        "barycenter": model.polytope.barycenter.tolist(),
        "kahler_einstein_expected": bool(np.allclose(model.polytope.barycenter, 0.0)),
        "max_abs_fhat": float(np.abs(model.fhat).max()),
        "L": model.grid.half_width,
        "grid": model.grid.points,
        "mu": model.mu,
    }
