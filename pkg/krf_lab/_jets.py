"""Truncated multivariate Taylor jets with exact forward-mode arithmetic.

A jet of order K in d real variables stores the Taylor coefficients ``c_a``
of a function about a point for every multi-index ``|a| <= K``::

    f(x0 + h) = sum_a c_a h^a + O(|h|^(K+1))

so every partial derivative up to order K is recovered exactly as
``c_a * a!``.  Monomials are kept in graded order, which makes truncation
to a lower order a prefix slice of the coefficient axis.

Leading axes of the coefficient array are tensor axes: a metric jet on
C^2 is one array of shape ``(2, 2, nmon)``.  Coefficients may be complex,
which is how Wirtinger derivatives are represented.

Variables are ordered ``x1, y1, x2, y2, ...`` followed by an optional time
variable; :func:`dz` and :func:`dzbar` rely on that ordering.
"""

from functools import lru_cache
from itertools import combinations_with_replacement
from math import factorial

import numpy as np
from scipy.special import binom

__all__ = [
    "JetBasis",
    "JetArray",
    "get_basis",
    "jet_einsum",
    "jet_inv",
    "jet_det",
    "jet_trace",
    "jexp",
    "jlog",
    "jpow",
    "dz",
    "dzbar",
]


class JetBasis:
    """Monomial bookkeeping for jets of a given order in ``nvar`` variables."""

    def __init__(self, nvar: int, order: int):
        self.nvar = nvar
        self.order = order

        exps = [np.zeros(nvar, dtype=np.int64)]
        sizes = [1]
        for degree in range(1, order + 1):
            for combo in combinations_with_replacement(range(nvar), degree):
                exps.append(np.bincount(combo, minlength=nvar).astype(np.int64))
            sizes.append(len(exps))
        self.exps = np.array(exps, dtype=np.int64).reshape(-1, nvar)
        self.sizes = tuple(sizes)
        self.nmon = len(self.exps)
        self.degrees = self.exps.sum(axis=1)

        self._radix = (order + 2) ** np.arange(nvar, dtype=np.int64)
        codes = self.exps @ self._radix
        self._sorter = np.argsort(codes, kind="stable")
        self._sorted_codes = codes[self._sorter]

        self.factorials = np.array(
            [np.prod([factorial(int(e)) for e in row]) for row in self.exps], dtype=float
        )

        self._build_product_table()
        self._diff_tables = {}

    def index_of(self, exps) -> np.ndarray:
        """Return monomial indices of exponent rows (raises KeyError if absent)."""
        exps = np.atleast_2d(np.asarray(exps, dtype=np.int64))
        codes = exps @ self._radix
        pos = np.searchsorted(self._sorted_codes, codes)
        pos = np.clip(pos, 0, self.nmon - 1)
        if np.any(self._sorted_codes[pos] != codes) or np.any(exps.sum(axis=1) > self.order):
            raise KeyError("monomial outside jet basis")
        return self._sorter[pos]

    def _build_product_table(self):
        left, right = [], []
        for a in range(self.nmon):
            room = self.order - self.degrees[a]
            count = self.sizes[room]
            left.append(np.full(count, a, dtype=np.int64))
            right.append(np.arange(count, dtype=np.int64))
        left = np.concatenate(left)
        right = np.concatenate(right)
        target = self.index_of(self.exps[left] + self.exps[right])

        order = np.argsort(target, kind="stable")
        self.pair_left = left[order]
        self.pair_right = right[order]
        self.pair_target = target[order]
        # every target has the (constant, target) pair, so no segment is empty
        self.pair_starts = np.searchsorted(self.pair_target, np.arange(self.nmon))

    def diff_table(self, var: int):
        """Source indices and factors for d/dx_var, mapping order K to K-1."""
        if var not in self._diff_tables:
            if self.order == 0:
                raise ValueError("cannot differentiate an order-0 jet")
            lower = self.sizes[self.order - 1]
            shifted = self.exps[:lower].copy()
            shifted[:, var] += 1
            src = self.index_of(shifted)
            factor = (self.exps[:lower, var] + 1).astype(float)
            self._diff_tables[var] = (src, factor)
        return self._diff_tables[var]


@lru_cache(maxsize=None)
def get_basis(nvar: int, order: int) -> JetBasis:
    """Cached :class:`JetBasis` for ``(nvar, order)``."""
    return JetBasis(nvar, order)


def _result_dtype(*arrays):
    return np.result_type(*[np.asarray(a).dtype for a in arrays], float)


class JetArray:
    """A tensor of truncated Taylor jets sharing one basis.

    Attributes:
        coeffs: Array of shape ``(*shape, nmon)``.
        basis: The :class:`JetBasis` describing the last axis.
    """

    __array_ufunc__ = None

    def __init__(self, coeffs, basis: JetBasis):
        coeffs = np.asarray(coeffs)
        if coeffs.shape[-1] != basis.nmon:
            raise ValueError(
                f"coefficient axis has length {coeffs.shape[-1]}, basis needs {basis.nmon}"
            )
        self.coeffs = coeffs
        self.basis = basis

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def constant(cls, value, basis: JetBasis) -> "JetArray":
        value = np.asarray(value)
        coeffs = np.zeros(value.shape + (basis.nmon,), dtype=_result_dtype(value))
        coeffs[..., 0] = value
        return cls(coeffs, basis)

    @classmethod
    def variable(cls, var: int, x0: float, basis: JetBasis) -> "JetArray":
        coeffs = np.zeros(basis.nmon)
        coeffs[0] = x0
        if basis.order >= 1:
            coeffs[1 + var] = 1.0
        return cls(coeffs, basis)

    @staticmethod
    def stack(jets, axis: int = 0) -> "JetArray":
        jets = list(jets)
        order = min(j.order for j in jets)
        jets = [j.truncate(order) for j in jets]
        ndim = jets[0].ndim
        if axis < 0:
            axis += ndim + 1
        return JetArray(np.stack([j.coeffs for j in jets], axis=axis), jets[0].basis)

    # ------------------------------------------------------------------
    # properties

    @property
    def order(self) -> int:
        return self.basis.order

    @property
    def nvar(self) -> int:
        return self.basis.nvar

    @property
    def shape(self) -> tuple:
        return self.coeffs.shape[:-1]

    @property
    def ndim(self) -> int:
        return self.coeffs.ndim - 1

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[..., 0]

    def __repr__(self):
        return f"JetArray(shape={self.shape}, nvar={self.nvar}, order={self.order})"

    # ------------------------------------------------------------------
    # structural operations

    def truncate(self, order: int) -> "JetArray":
        if order == self.order:
            return self
        if order > self.order:
            raise ValueError(f"cannot raise jet order from {self.order} to {order}")
        return JetArray(self.coeffs[..., : self.basis.sizes[order]], get_basis(self.nvar, order))

    def _tensor_key(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        if any(k is Ellipsis for k in key):
            pos = next(i for i, k in enumerate(key) if k is Ellipsis)
            fill = self.ndim - (len(key) - 1 - sum(k is None for k in key))
            key = key[:pos] + (slice(None),) * fill + key[pos + 1 :]
        return key + (slice(None),)

    def __getitem__(self, key) -> "JetArray":
        return JetArray(self.coeffs[self._tensor_key(key)], self.basis)

    def transpose(self, *axes) -> "JetArray":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return JetArray(self.coeffs.transpose(*axes, self.ndim), self.basis)

    @property
    def T(self) -> "JetArray":
        return self.transpose()

    def sum(self, axis=None) -> "JetArray":
        if axis is None:
            axis = tuple(range(self.ndim))
        elif isinstance(axis, int):
            axis = (axis,)
        axis = tuple(a + self.ndim if a < 0 else a for a in axis)
        return JetArray(self.coeffs.sum(axis=axis), self.basis)

    def conj(self) -> "JetArray":
        return JetArray(np.conj(self.coeffs), self.basis)

    @property
    def real(self) -> "JetArray":
        return JetArray(np.real(self.coeffs), self.basis)

    @property
    def imag(self) -> "JetArray":
        return JetArray(np.imag(self.coeffs), self.basis)

    # ------------------------------------------------------------------
    # calculus

    def diff(self, var: int) -> "JetArray":
        """Exact derivative with respect to variable ``var`` (order drops by one)."""
        src, factor = self.basis.diff_table(var)
        return JetArray(self.coeffs[..., src] * factor, get_basis(self.nvar, self.order - 1))

    def partial(self, alpha) -> np.ndarray:
        """Exact value of the mixed partial derivative with multi-index ``alpha``."""
        idx = self.basis.index_of(alpha)[0]
        return self.coeffs[..., idx] * self.basis.factorials[idx]

    # ------------------------------------------------------------------
    # arithmetic

    def _align(self, other: "JetArray"):
        order = min(self.order, other.order)
        return self.truncate(order), other.truncate(order)

    def _with_constant(self, value, sign: float = 1.0) -> "JetArray":
        value = np.asarray(value)
        shape = np.broadcast_shapes(self.shape, value.shape)
        coeffs = np.array(
            np.broadcast_to(self.coeffs, shape + (self.basis.nmon,)),
            dtype=_result_dtype(self.coeffs, value),
        )
        coeffs[..., 0] += sign * value
        return JetArray(coeffs, self.basis)

    def __add__(self, other):
        if isinstance(other, JetArray):
            a, b = self._align(other)
            return JetArray(a.coeffs + b.coeffs, a.basis)
        return self._with_constant(other)

    __radd__ = __add__

    def __neg__(self):
        return JetArray(-self.coeffs, self.basis)

    def __sub__(self, other):
        if isinstance(other, JetArray):
            a, b = self._align(other)
            return JetArray(a.coeffs - b.coeffs, a.basis)
        return self._with_constant(other, -1.0)

    def __rsub__(self, other):
        return (-self)._with_constant(other)

    def __mul__(self, other):
        if isinstance(other, JetArray):
            a, b = self._align(other)
            basis = a.basis
            prod = a.coeffs[..., basis.pair_left] * b.coeffs[..., basis.pair_right]
            return JetArray(np.add.reduceat(prod, basis.pair_starts, axis=-1), basis)
        other = np.asarray(other)
        return JetArray(self.coeffs * other[..., None], self.basis)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, JetArray):
            return self * reciprocal(other)
        other = np.asarray(other)
        return JetArray(self.coeffs / other[..., None], self.basis)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, p):
        if isinstance(p, (int, np.integer)):
            if p < 0:
                return reciprocal(self) ** (-p)
            result = JetArray.constant(np.ones(self.shape), self.basis)
            for _ in range(p):
                result = result * self
            return result
        return jpow(self, p)


def _series(f: JetArray, coefficients) -> JetArray:
    """Evaluate ``sum_k c_k (f - f0)^k`` by Horner's rule on the nilpotent part."""
    nil = f - f.value
    result = JetArray.constant(coefficients[-1], f.basis)
    for c in reversed(coefficients[:-1]):
        result = result * nil + c
    return result


def reciprocal(f: JetArray) -> JetArray:
    a = f.value
    return _series(f, [(-1.0) ** k / a ** (k + 1) for k in range(f.order + 1)])


def jexp(f: JetArray) -> JetArray:
    """Exponential of a jet."""
    ea = np.exp(f.value)
    return _series(f, [ea / factorial(k) for k in range(f.order + 1)])


def jlog(f: JetArray) -> JetArray:
    """Natural logarithm of a jet with nonzero value."""
    a = f.value
    coefficients = [np.log(a)]
    coefficients += [(-1.0) ** (k + 1) / (k * a**k) for k in range(1, f.order + 1)]
    return _series(f, coefficients)


def jpow(f: JetArray, p: float) -> JetArray:
    """Real power of a jet with positive value."""
    a = f.value
    return _series(f, [binom(p, k) * a ** (p - k) for k in range(f.order + 1)])


def jet_einsum(spec: str, a, b) -> JetArray:
    """Tensor contraction of jets (or a jet and an ndarray) over tensor axes.

    ``spec`` is an ordinary two-operand einsum specification over the tensor
    axes only, e.g. ``"ij,jk->ik"``.
    """
    inputs, out = spec.replace(" ", "").split("->")
    sa, sb = inputs.split(",")
    pair = next(c for c in "ZYXWVUTS" if c not in spec)

    if isinstance(a, JetArray) and isinstance(b, JetArray):
        a, b = a._align(b)
        basis = a.basis
        prod = np.einsum(
            f"{sa}{pair},{sb}{pair}->{out}{pair}",
            a.coeffs[..., basis.pair_left],
            b.coeffs[..., basis.pair_right],
        )
        return JetArray(np.add.reduceat(prod, basis.pair_starts, axis=-1), basis)
    if isinstance(a, JetArray):
        return JetArray(np.einsum(f"{sa}{pair},{sb}->{out}{pair}", a.coeffs, b), a.basis)
    if isinstance(b, JetArray):
        return JetArray(np.einsum(f"{sa},{sb}{pair}->{out}{pair}", a, b.coeffs), b.basis)
    raise TypeError("jet_einsum needs at least one JetArray operand")


def jet_inv(mat: JetArray) -> JetArray:
    """Matrix inverse over the last two tensor axes.

    Uses the Neumann series about the value, which terminates because the
    non-constant part is nilpotent.
    """
    a0_inv = np.linalg.inv(mat.value)
    nil = mat - mat.value
    step = jet_einsum("...ij,...jk->...ik", a0_inv, nil)
    result = JetArray.constant(a0_inv, mat.basis)
    for _ in range(mat.order):
        result = (-jet_einsum("...ij,...jk->...ik", step, result)) + a0_inv
    return result


def jet_det(mat: JetArray) -> JetArray:
    """Determinant of a 1x1 or 2x2 matrix jet."""
    n = mat.shape[-1]
    if n == 1:
        return mat[..., 0, 0]
    if n == 2:
        return mat[..., 0, 0] * mat[..., 1, 1] - mat[..., 0, 1] * mat[..., 1, 0]
    raise ValueError(f"jet_det supports n <= 2, got {n}")


def jet_trace(mat: JetArray) -> JetArray:
    """Trace over the last two tensor axes."""
    return JetArray(np.trace(mat.coeffs, axis1=-3, axis2=-2), mat.basis)


def dz(f: JetArray, k: int) -> JetArray:
    """Wirtinger derivative d/dz_k = (d/dx_k - i d/dy_k) / 2."""
    return (f.diff(2 * k) - 1j * f.diff(2 * k + 1)) * 0.5


def dzbar(f: JetArray, k: int) -> JetArray:
    """Wirtinger derivative d/dzbar_k = (d/dx_k + i d/dy_k) / 2."""
    return (f.diff(2 * k) + 1j * f.diff(2 * k + 1)) * 0.5
