"""Uniform log-coordinate box grids with fourth-order difference stencils.

Stencils are stored in difference form ``sum_k c_k (u[i + k] - u[i])`` so
that constants are annihilated exactly; this keeps the gauge mode of the
flow (adding a constant to the potential) free of rounding drift.

Boundary modes:
    - ``"onesided"``: fourth-order one-sided stencils at the two outer nodes.
    - ``"reflect"``: even reflection about the end nodes (homogeneous Neumann).
    - ``"exterior"``: second derivatives in flux form, where the outermost
      node owns the cell reaching to infinity and no flux leaves it.  The
      edge row holds ``(u[1] - u[0]) / h^2``, the change of slope across that
      cell divided by ``h``; callers rescale it by ``h / ell`` for the
      effective cell length ``ell``.  The next row drops the fourth-order
      flux correction on the outer face.  First derivatives are reflected.
"""

import numpy as np
import scipy.sparse as sp

__all__ = ["BoxGrid", "BOUNDARY_MODES"]

BOUNDARY_MODES = ("onesided", "reflect", "exterior")

_CENTRAL_OFFSETS = np.array([-2, -1, 1, 2])
_CENTRAL_D1 = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
_CENTRAL_D2 = np.array([-1.0, 16.0, 16.0, -1.0]) / 12.0

# fourth-order one-sided stencils at the first two nodes (left end)
_LEFT_D1 = {
    0: ([1, 2, 3, 4], np.array([48.0, -36.0, 16.0, -3.0]) / 12.0),
    1: ([0, 2, 3, 4], np.array([-3.0, 18.0, -6.0, 1.0]) / 12.0),
}
_LEFT_D2 = {
    0: ([1, 2, 3, 4, 5], np.array([-154.0, 214.0, -156.0, 61.0, -10.0]) / 12.0),
    1: ([0, 2, 3, 4, 5], np.array([10.0, -4.0, 14.0, -6.0, 1.0]) / 12.0),
}

# flux-form rows next to an exterior cell (left end)
_EXTERIOR_D2 = {
    0: ([1], np.array([1.0])),
    1: ([0, 2, 3], np.array([13.0, 15.0, -1.0]) / 12.0),
}


def _stencil_table(N: int, derivative: int, boundary: str):
    """Neighbour indices and coefficients (unscaled by h) of width 5."""
    width = 5
    idx = np.tile(np.arange(N)[:, None], (1, width))
    coef = np.zeros((N, width))
    central = _CENTRAL_D1 if derivative == 1 else _CENTRAL_D2
    if boundary == "exterior" and derivative == 1:
        boundary = "reflect"

    for i in range(N):
        nbrs = i + _CENTRAL_OFFSETS
        if boundary == "reflect":
            nbrs = np.where(nbrs < 0, -nbrs, nbrs)
            nbrs = np.where(nbrs > N - 1, 2 * (N - 1) - nbrs, nbrs)
            idx[i, :4] = nbrs
            coef[i, :4] = central
        elif 2 <= i <= N - 3:
            idx[i, :4] = nbrs
            coef[i, :4] = central
        else:
            if boundary == "exterior":
                left = _EXTERIOR_D2
            else:
                left = _LEFT_D1 if derivative == 1 else _LEFT_D2
            mirrored = i > N - 3
            j = N - 1 - i if mirrored else i
            offsets, values = left[j]
            values = np.asarray(values)
            if mirrored:
                idx[i, : len(offsets)] = [N - 1 - k for k in offsets]
                # odd derivative changes sign under reflection
                coef[i, : len(offsets)] = -values if derivative == 1 else values
            else:
                idx[i, : len(offsets)] = offsets
                coef[i, : len(offsets)] = values
    return idx, coef


class BoxGrid:
    """Tensor-product grid on ``[-L, L]^n`` with ``points`` nodes per axis.

    Attributes:
        n: Dimension.
        half_width: Box half-width ``L``.
        points: Nodes per axis ``N``.
        h: Spacing ``2L / (N - 1)``.
        axis: 1D node coordinates.
        shape: Grid shape ``(N,) * n``.
        xi: Node coordinates with shape ``(*shape, n)``.
        weights: Tensor-product trapezoid weights.
    """

    def __init__(self, n: int, half_width: float, points: int):
        if n not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {n}")
        if points < 6:
            raise ValueError(f"need at least 6 nodes per axis, got {points}")
        self.n = n
        self.half_width = float(half_width)
        self.points = int(points)
        self.h = 2.0 * self.half_width / (self.points - 1)
        self.axis = np.linspace(-self.half_width, self.half_width, self.points)
        self.shape = (self.points,) * n
        mesh = np.meshgrid(*([self.axis] * n), indexing="ij")
        self.xi = np.stack(mesh, axis=-1)

        w1 = np.full(self.points, self.h)
        w1[0] = w1[-1] = 0.5 * self.h
        weights = w1
        for _ in range(n - 1):
            weights = np.multiply.outer(weights, w1)
        self.weights = weights

        self._tables = {}
        self._sparse = {}

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for a in range(self.n):
            index = [slice(None)] * self.n
            index[a] = 0
            mask[tuple(index)] = True
            index[a] = -1
            mask[tuple(index)] = True
        return mask

    def _table(self, derivative: int, boundary: str):
        if boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}, got {boundary!r}")
        key = (derivative, boundary)
        if key not in self._tables:
            self._tables[key] = _stencil_table(self.points, derivative, boundary)
        return self._tables[key]

    def _apply(self, u: np.ndarray, axis: int, derivative: int, boundary: str) -> np.ndarray:
        idx, coef = self._table(derivative, boundary)
        moved = np.moveaxis(u, axis, -1)
        diff = np.take(moved, idx, axis=-1) - moved[..., None]
        out = np.einsum("...ik,ik->...i", diff, coef)
        return np.moveaxis(out, -1, axis) / self.h**derivative

    def d1(self, u: np.ndarray, axis: int = 0, boundary: str = "onesided") -> np.ndarray:
        """First derivative along ``axis``."""
        return self._apply(u, axis, 1, boundary)

    def d2(self, u: np.ndarray, axis: int = 0, boundary: str = "onesided") -> np.ndarray:
        """Second derivative along ``axis``."""
        return self._apply(u, axis, 2, boundary)

    def gradient(self, u: np.ndarray, boundary: str = "onesided") -> np.ndarray:
        """Gradient with a trailing component axis."""
        return np.stack([self.d1(u, a, boundary) for a in range(self.n)], axis=-1)

    def hessian(self, u: np.ndarray, boundary: str = "onesided") -> np.ndarray:
        """Hessian with trailing ``(n, n)`` axes; mixed entries are ``d1(d1(u))``."""
        hess = np.empty(self.shape + (self.n, self.n))
        for a in range(self.n):
            hess[..., a, a] = self.d2(u, a, boundary)
            for b in range(a + 1, self.n):
                mixed = self.d1(self.d1(u, a, boundary), b, boundary)
                hess[..., a, b] = mixed
                hess[..., b, a] = mixed
        return hess

    def integrate(self, values: np.ndarray, density: np.ndarray = None, tail=None) -> float:
        """Trapezoid quadrature of ``values * density`` plus lumped exterior mass."""
        mass = self.weights if density is None else self.weights * density
        total = float(np.sum(mass * values))
        if tail is not None:
            total += float(np.sum(tail * values))
        return total

    # ------------------------------------------------------------------
    # sparse operators

    def _matrix_1d(self, derivative: int, boundary: str) -> sp.csr_matrix:
        idx, coef = self._table(derivative, boundary)
        N = self.points
        rows = np.repeat(np.arange(N), idx.shape[1])
        mat = sp.coo_matrix((coef.ravel(), (rows, idx.ravel())), shape=(N, N)).tocsr()
        mat = mat - sp.diags(np.asarray(mat.sum(axis=1)).ravel())
        return (mat / self.h**derivative).tocsr()

    def derivative_matrix(self, a: int, b: int, boundary: str = "reflect") -> sp.csr_matrix:
        """Sparse matrix of ``d_a d_b`` on flattened (C-order) grid functions."""
        key = (min(a, b), max(a, b), boundary)
        if key in self._sparse:
            return self._sparse[key]
        eye = sp.identity(self.points, format="csr")
        if a == b:
            factors = [self._matrix_1d(2, boundary) if k == a else eye for k in range(self.n)]
        else:
            d1 = self._matrix_1d(1, boundary)
            factors = [d1 if k in (a, b) else eye for k in range(self.n)]
        mat = factors[0]
        for f in factors[1:]:
            mat = sp.kron(mat, f, format="csr")
        self._sparse[key] = mat
        return mat

    def extended(self, extra: float) -> "BoxGrid":
        """Grid with the same spacing on ``[-(L + extra), L + extra]^n``."""
        steps = int(round(extra / self.h))
        return BoxGrid(self.n, self.half_width + steps * self.h, self.points + 2 * steps)
