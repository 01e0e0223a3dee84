"""Closed-form scalar expressions over real chart coordinates.

A :class:`ChartExpr` on C^n is a tree over the real coordinates
``x1, y1, ..., xn, yn`` (``w_k = x_k + i y_k``) and an optional time
parameter ``t``.  Trees are built from polynomials, sums, products,
``exp``, ``log`` and powers, and support two kinds of differentiation:

* exact Taylor jets at a point (:meth:`ChartExpr.jet`), computed by
  forward propagation of :class:`~krf_lab._jets.JetArray` through the tree;
* symbolic derivatives (:meth:`ChartExpr.diff`), used to assemble closed-form
  quantities such as the complex Hessian determinant of a potential.

Polynomial arithmetic folds eagerly, so sums and products of polynomials
stay polynomials and their jets are evaluated in one vectorized pass.

Example:
    >>> x, y = coords(1)
    >>> phi = 0.25 * (x**2 + y**2) ** 2
    >>> jet = phi.jet([1.0 + 0j], order=5)
"""

import numbers

import numpy as np
from scipy.special import comb

from ._jets import JetArray, get_basis, jexp, jlog, jpow

__all__ = [
    "ChartExpr",
    "Poly",
    "Sum",
    "Product",
    "Exp",
    "Log",
    "Power",
    "coords",
    "time_var",
    "constant",
    "abs2",
    "exp",
    "log",
    "complex_hessian",
    "complex_hessian_det",
    "real_point",
]


def real_point(point, n: int) -> np.ndarray:
    """Convert a complex point in C^n to ``(x1, y1, ..., xn, yn)``."""
    z = np.asarray(point, dtype=complex).reshape(-1)
    if z.size != n:
        raise ValueError(f"point has {z.size} complex coordinates, expected {n}")
    out = np.empty(2 * n)
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


class _JetContext:
    def __init__(self, x0: np.ndarray, order: int, with_time: bool, t0: float):
        self.x0 = x0
        self.with_time = with_time
        self.t0 = t0
        self.basis = get_basis(len(x0), order)
        self.cache = {}


class ChartExpr:
    """Base class of expression nodes on a chart of C^n."""

    n: int

    # ------------------------------------------------------------------
    # evaluation

    def jet(self, point, order: int, with_time: bool = False, t0: float = 0.0) -> JetArray:
        """Exact Taylor jet at a complex point.

        Args:
            point: Complex coordinates ``(w_1, ..., w_n)``.
            order: Jet order (maximal total derivative order).
            with_time: Include ``t`` as the last jet variable.
            t0: Time value at which the jet is taken.
        """
        x0 = real_point(point, self.n)
        return self.jet_real(x0, order, with_time=with_time, t0=t0)

    def jet_real(self, x0, order: int, with_time: bool = False, t0: float = 0.0) -> JetArray:
        x0 = np.asarray(x0, dtype=float)
        if with_time:
            x0 = np.append(x0, t0)
        return self._jet(_JetContext(x0, order, with_time, t0))

    def evaluate(self, x, t: float = 0.0) -> float:
        """Value at real coordinates ``x = (x1, y1, ...)`` and time ``t``."""
        return float(np.real(self.jet_real(np.asarray(x, dtype=float), 0, t0=t).value))

    def _jet(self, ctx: _JetContext) -> JetArray:
        key = id(self)
        if key not in ctx.cache:
            ctx.cache[key] = self._compute_jet(ctx)
        return ctx.cache[key]

    def _compute_jet(self, ctx: _JetContext) -> JetArray:
        raise NotImplementedError

    def diff(self, var: int) -> "ChartExpr":
        """Symbolic derivative with respect to coordinate ``var`` (``2n`` is time)."""
        raise NotImplementedError

    def is_zero(self) -> bool:
        return False

    # ------------------------------------------------------------------
    # algebra

    def _wrap(self, other) -> "ChartExpr":
        if isinstance(other, ChartExpr):
            if other.n != self.n:
                raise ValueError(f"mixing expressions on C^{self.n} and C^{other.n}")
            return other
        if isinstance(other, numbers.Real):
            return constant(float(other), self.n)
        return NotImplemented

    def __add__(self, other):
        other = self._wrap(other)
        if other is NotImplemented:
            return other
        if isinstance(self, Poly) and isinstance(other, Poly):
            return self._poly_add(other)
        if self.is_zero():
            return other
        if other.is_zero():
            return self
        terms = []
        for e in (self, other):
            terms.extend(e.terms if isinstance(e, Sum) else [e])
        return Sum(terms)

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        other = self._wrap(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._wrap(other)
        if other is NotImplemented:
            return other
        if isinstance(self, Poly) and isinstance(other, Poly):
            return self._poly_mul(other)
        if self.is_zero() or other.is_zero():
            return constant(0.0, self.n)
        factors = []
        for e in (self, other):
            factors.extend(e.factors if isinstance(e, Product) else [e])
        return Product(factors)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, numbers.Real):
            return self * (1.0 / float(other))
        other = self._wrap(other)
        if other is NotImplemented:
            return other
        return self * Power(other, -1)

    def __rtruediv__(self, other):
        return self._wrap(other) * Power(self, -1)

    def __pow__(self, p):
        if isinstance(self, Poly) and isinstance(p, (int, np.integer)) and p >= 0:
            result = constant(1.0, self.n)
            for _ in range(int(p)):
                result = result * self
            return result
        return Power(self, p)


class Poly(ChartExpr):
    """Real polynomial in ``(x1, y1, ..., xn, yn, t)``.

    Attributes:
        terms: Mapping from exponent tuples of length ``2n + 1`` to coefficients.
    """

    def __init__(self, terms: dict, n: int):
        self.n = n
        width = 2 * n + 1
        cleaned = {}
        for e, c in terms.items():
            e = tuple(int(k) for k in e)
            if len(e) != width:
                raise ValueError(f"exponent {e} has length {len(e)}, expected {width}")
            if c != 0.0:
                cleaned[e] = cleaned.get(e, 0.0) + float(c)
        self.terms = {e: c for e, c in cleaned.items() if c != 0.0}
        if self.terms:
            self._exps = np.array(list(self.terms.keys()), dtype=np.int64)
            self._coefs = np.array(list(self.terms.values()), dtype=float)
        else:
            self._exps = np.zeros((0, width), dtype=np.int64)
            self._coefs = np.zeros(0)

    def __repr__(self):
        return f"Poly({len(self.terms)} terms, n={self.n})"

    @property
    def degree(self) -> int:
        return int(self._exps.sum(axis=1).max()) if self.terms else 0

    def is_zero(self) -> bool:
        return not self.terms

    def _poly_add(self, other: "Poly") -> "Poly":
        merged = dict(self.terms)
        for e, c in other.terms.items():
            merged[e] = merged.get(e, 0.0) + c
        return Poly(merged, self.n)

    def _poly_mul(self, other: "Poly") -> "Poly":
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Poly(out, self.n)

    def diff(self, var: int) -> "Poly":
        out = {}
        for e, c in self.terms.items():
            if e[var] > 0:
                lowered = list(e)
                lowered[var] -= 1
                out[tuple(lowered)] = out.get(tuple(lowered), 0.0) + c * e[var]
        return Poly(out, self.n)

    def _compute_jet(self, ctx: _JetContext) -> JetArray:
        basis = ctx.basis
        if not self.terms:
            return JetArray.constant(0.0, basis)
        exps, coefs = self._exps, self._coefs
        if not ctx.with_time:
            coefs = coefs * ctx.t0 ** exps[:, -1]
            exps = exps[:, :-1]
        # Taylor coefficient of x^E about x0 for multi-index B: C(E, B) x0^(E - B)
        e = exps[:, None, :]
        b = basis.exps[None, :, :]
        factors = comb(e, b) * ctx.x0 ** np.clip(e - b, 0, None)
        return JetArray(coefs @ factors.prod(axis=-1), basis)


class Sum(ChartExpr):
    def __init__(self, terms):
        self.terms = list(terms)
        self.n = self.terms[0].n

    def _compute_jet(self, ctx):
        result = self.terms[0]._jet(ctx)
        for term in self.terms[1:]:
            result = result + term._jet(ctx)
        return result

    def diff(self, var):
        result = constant(0.0, self.n)
        for term in self.terms:
            result = result + term.diff(var)
        return result


class Product(ChartExpr):
    def __init__(self, factors):
        self.factors = list(factors)
        self.n = self.factors[0].n

    def _compute_jet(self, ctx):
        result = self.factors[0]._jet(ctx)
        for factor in self.factors[1:]:
            result = result * factor._jet(ctx)
        return result

    def diff(self, var):
        result = constant(0.0, self.n)
        for i, factor in enumerate(self.factors):
            d = factor.diff(var)
            if d.is_zero():
                continue
            term = d
            for j, other in enumerate(self.factors):
                if j != i:
                    term = term * other
            result = result + term
        return result


class Exp(ChartExpr):
    def __init__(self, arg: ChartExpr):
        self.arg = arg
        self.n = arg.n

    def _compute_jet(self, ctx):
        return jexp(self.arg._jet(ctx))

    def diff(self, var):
        return self * self.arg.diff(var)


class Log(ChartExpr):
    """Natural logarithm; the argument must be positive where evaluated."""

    def __init__(self, arg: ChartExpr):
        self.arg = arg
        self.n = arg.n

    def _compute_jet(self, ctx):
        return jlog(self.arg._jet(ctx))

    def diff(self, var):
        return self.arg.diff(var) * Power(self.arg, -1)


class Power(ChartExpr):
    def __init__(self, base: ChartExpr, p):
        self.base = base
        self.p = p
        self.n = base.n

    def _compute_jet(self, ctx):
        base = self.base._jet(ctx)
        if isinstance(self.p, (int, np.integer)):
            return base ** int(self.p)
        return jpow(base, float(self.p))

    def diff(self, var):
        d = self.base.diff(var)
        if d.is_zero():
            return constant(0.0, self.n)
        if self.p == 1:
            return d
        return Power(self.base, self.p - 1) * d * float(self.p)


# ----------------------------------------------------------------------
# constructors


def constant(c: float, n: int) -> Poly:
    return Poly({(0,) * (2 * n + 1): c}, n)


def coords(n: int) -> list:
    """Real coordinate polynomials ``[x1, y1, ..., xn, yn]``."""
    out = []
    for k in range(2 * n):
        e = [0] * (2 * n + 1)
        e[k] = 1
        out.append(Poly({tuple(e): 1.0}, n))
    return out


def time_var(n: int) -> Poly:
    e = [0] * (2 * n + 1)
    e[-1] = 1
    return Poly({tuple(e): 1.0}, n)


def abs2(n: int, k: int = None) -> Poly:
    """``|w_k|^2``, or ``|w|^2 = sum_k |w_k|^2`` when ``k`` is None."""
    xs = coords(n)
    ks = range(n) if k is None else [k]
    result = constant(0.0, n)
    for j in ks:
        result = result + xs[2 * j] ** 2 + xs[2 * j + 1] ** 2
    return result


def exp(e: ChartExpr) -> Exp:
    return Exp(e)


def log(e: ChartExpr) -> Log:
    return Log(e)


def complex_hessian(expr: ChartExpr) -> tuple:
    """Real and imaginary parts of ``d_j d_kbar expr`` as nested lists ``[k][j]``.

    ``d_j d_kbar = ((d_xj d_xk + d_yj d_yk) + i (d_xj d_yk - d_yj d_xk)) / 4``.
    """
    n = expr.n
    first = [expr.diff(v) for v in range(2 * n)]
    second = [[first[a].diff(b) for b in range(2 * n)] for a in range(2 * n)]
    re = [[None] * n for _ in range(n)]
    im = [[None] * n for _ in range(n)]
    for k in range(n):
        for j in range(n):
            xj, yj, xk, yk = 2 * j, 2 * j + 1, 2 * k, 2 * k + 1
            re[k][j] = (second[xj][xk] + second[yj][yk]) * 0.25
            im[k][j] = (second[xj][yk] - second[yj][xk]) * 0.25
    return re, im


def complex_hessian_det(expr: ChartExpr) -> ChartExpr:
    """Closed-form ``det(d_j d_kbar expr)`` for n in {1, 2} as a real expression."""
    n = expr.n
    re, im = complex_hessian(expr)
    if n == 1:
        return re[0][0]
    if n == 2:
        off_re, off_im = re[0][1], im[0][1]
        return re[0][0] * re[1][1] - (off_re * off_re + off_im * off_im)
    raise ValueError(f"complex_hessian_det supports n <= 2, got {n}")
