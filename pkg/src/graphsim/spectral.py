"""Dense spectral graph linear algebra.

Everything here operates on small dense matrices (a hundred nodes or so):
normalized Laplacian construction, a cyclic-Jacobi eigensolver, power
iteration for the top eigenvalue, Laplacian rescaling to [-1, 1], and
Chebyshev polynomial filtering of node signals. An exact spectral-domain
filter is included as a test oracle for the recursive Chebyshev path.

All functions are pure and double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGraphError, NumericError, ValidationError


def _offdiag_norm(a: np.ndarray) -> float:
    # summed directly over off-diagonal entries; subtracting the diagonal
    # from the total Frobenius norm cancels catastrophically near convergence
    mask = ~np.eye(a.shape[0], dtype=bool)
    return float(np.sqrt(np.sum(a[mask] ** 2)))


def _as_square_float(m, name: str) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Adjacency:
    """Weighted adjacency matrix: symmetric, non-negative, zero diagonal."""

    w: np.ndarray

    def __post_init__(self):
        w = _as_square_float(self.w, "adjacency")
        if w.shape[0] < 1:
            raise ValidationError("adjacency needs at least one node")
        if not np.array_equal(w, w.T):
            raise ValidationError("adjacency matrix is not symmetric")
        if np.any(w < 0):
            raise ValidationError("adjacency weights must be non-negative")
        if np.any(np.diag(w) != 0):
            raise ValidationError("adjacency diagonal must be zero (no self loops)")
        object.__setattr__(self, "w", w)

    @property
    def r(self) -> int:
        return self.w.shape[0]

    def degrees(self) -> np.ndarray:
        return self.w.sum(axis=1)


@dataclass(frozen=True)
class Laplacian:
    """Symmetric graph Laplacian together with its largest eigenvalue."""

    l: np.ndarray
    lambda_max: float

    def __post_init__(self):
        l = _as_square_float(self.l, "laplacian")
        if not np.allclose(l, l.T, atol=1e-12, rtol=0.0):
            raise ValidationError("laplacian is not symmetric within 1e-12")
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "lambda_max", float(self.lambda_max))

    @property
    def r(self) -> int:
        return self.l.shape[0]


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues (ascending) and orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.eigenvalues, dtype=np.float64)
        vecs = np.asarray(self.eigenvectors, dtype=np.float64)
        if vals.ndim != 1 or vecs.ndim != 2 or vecs.shape != (vals.size, vals.size):
            raise ValidationError("decomposition shapes inconsistent")
        if np.any(np.diff(vals) < 0):
            raise ValidationError("eigenvalues must be ascending")
        object.__setattr__(self, "eigenvalues", vals)
        object.__setattr__(self, "eigenvectors", vecs)

    @property
    def r(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True)
class ChebCoeffs:
    """Chebyshev filter coefficients theta_0 .. theta_K (K+1 entries)."""

    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=np.float64)
        if t.ndim != 1 or t.size < 1:
            raise ValidationError("theta must be a non-empty vector")
        if not np.all(np.isfinite(t)):
            raise ValidationError("theta entries must be finite")
        object.__setattr__(self, "theta", t)

    @property
    def k_order(self) -> int:
        return self.theta.size - 1


def normalized_laplacian(a: Adjacency) -> Laplacian:
    """Normalized Laplacian L = I - D^{-1/2} A D^{-1/2}.

    Isolated nodes (zero degree) get a zero D^{-1/2} entry, so their row
    reduces to the identity row. lambda_max is computed exactly from the
    Jacobi eigensolver (spectrum of L lies in [0, 2]).
    """
    w = a.w
    deg = a.degrees()
    d_inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    l = np.eye(a.r) - d_inv_sqrt[:, None] * w * d_inv_sqrt[None, :]
    l = 0.5 * (l + l.T)
    decomp = symmetric_eig(l)
    return Laplacian(l=l, lambda_max=float(decomp.eigenvalues[-1]))


def symmetric_eig(m, tol: float = 1e-12, max_sweeps: int = 100) -> SpectralDecomposition:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps the strict upper triangle, zeroing one off-diagonal entry per
    rotation, until the off-diagonal Frobenius norm falls below
    tol * ||M||_F. Returns eigenvalues ascending with matching eigenvector
    columns; U diag(w) U^T reconstructs M to ~1e-12 relative.
    """
    a = _as_square_float(m, "matrix")
    if not np.allclose(a, a.T, atol=1e-9, rtol=1e-9):
        raise ValidationError("matrix is not symmetric within 1e-9")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return SpectralDecomposition(eigenvalues=np.zeros(n), eigenvectors=v)

    for _ in range(max_sweeps):
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # entries negligible against both diagonal values are
                # flushed to zero instead of rotated (their tau overflows)
                g = 100.0 * abs(apq)
                if abs(a[p, p]) + g == abs(a[p, p]) and abs(a[q, q]) + g == abs(a[q, q]):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0.0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # two-sided rotation A <- J^T A J in the (p, q) plane
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        off = _offdiag_norm(a)
        if off < tol * norm:
            break
    else:
        raise NumericError(
            f"Jacobi failed to converge in {max_sweeps} sweeps "
            f"(off-diagonal residual {off / norm:.3e})"
        )

    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    return SpectralDecomposition(eigenvalues=vals[order], eigenvectors=v[:, order])


def estimate_lambda_max(l, tol: float = 1e-6, max_iter: int = 10000, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric matrix with spectrum in [0, 2].

    Power iteration on M + 2I: the shift makes the target eigenvalue the
    dominant one in magnitude for any spectrum inside [0, 2]. Stops when
    the eigenpair residual drops below tol relative to the shifted
    eigenvalue. A zero matrix returns 0.0; callers substitute 2.0 when
    rescaling (see rescale_laplacian).
    """
    a = _as_square_float(l, "matrix")
    if not np.allclose(a, a.T, atol=1e-9, rtol=1e-9):
        raise ValidationError("matrix is not symmetric within 1e-9")
    if not np.any(a):
        return 0.0
    n = a.shape[0]
    shifted = a + 2.0 * np.eye(n)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    ray = 0.0
    for _ in range(max_iter):
        y = shifted @ x
        y_norm = np.linalg.norm(y)
        if y_norm == 0.0:
            x = rng.standard_normal(n)
            x /= np.linalg.norm(x)
            continue
        ray = float(x @ y)
        x = y / y_norm
        residual = np.linalg.norm(shifted @ x - ray * x)
        if residual <= tol * max(abs(ray), 1e-300):
            break
    else:
        raise NumericError(f"power iteration did not converge in {max_iter} iterations")
    return ray - 2.0


def rescale_laplacian(l: Laplacian) -> np.ndarray:
    """Rescaled Laplacian (2 / lambda_max) L - I with spectrum in [-1, 1]."""
    if l.lambda_max <= 0.0:
        raise DegenerateGraphError(
            f"cannot rescale with lambda_max = {l.lambda_max}; "
            "substitute 2.0 for edgeless graphs"
        )
    return (2.0 / l.lambda_max) * l.l - np.eye(l.r)


def chebyshev_filter(l_scaled, c, coeffs: ChebCoeffs) -> np.ndarray:
    """Apply the filter sum_k theta_k T_k(L~) to a signal.

    Uses the three-term recursion T_k = 2 L~ T_{k-1} - T_{k-2} with one
    matrix-vector product per order; T_k(L~) is never materialized. c may
    be a vector (one signal) or an R x F matrix of signals filtered
    columnwise with the same coefficients.
    """
    lt = _as_square_float(l_scaled, "rescaled laplacian")
    x = np.asarray(c, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[0] != lt.shape[0]:
        raise ValidationError(
            f"signal shape {x.shape} incompatible with {lt.shape[0]} nodes"
        )
    theta = coeffs.theta
    y = theta[0] * x
    if coeffs.k_order == 0:
        return y
    t_prev = x
    t_cur = lt @ x
    y = y + theta[1] * t_cur
    for k in range(2, coeffs.k_order + 1):
        t_prev, t_cur = t_cur, 2.0 * (lt @ t_cur) - t_prev
        y = y + theta[k] * t_cur
    return y


def chebyshev_basis(l_scaled, c, k_order: int) -> np.ndarray:
    """Stack [T_0(L~) c, ..., T_K(L~) c] with shape (K+1, ...) of c's shape.

    Shared by chebyshev_filter consumers that combine several coefficient
    vectors against the same signal (the convolution layers reuse one
    stack for all filters of a layer).
    """
    lt = _as_square_float(l_scaled, "rescaled laplacian")
    x = np.asarray(c, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[0] != lt.shape[0]:
        raise ValidationError(
            f"signal shape {x.shape} incompatible with {lt.shape[0]} nodes"
        )
    if k_order < 0:
        raise ValidationError("k_order must be >= 0")
    stack = np.empty((k_order + 1,) + x.shape, dtype=np.float64)
    stack[0] = x
    if k_order >= 1:
        stack[1] = lt @ x
    for k in range(2, k_order + 1):
        stack[k] = 2.0 * (lt @ stack[k - 1]) - stack[k - 2]
    return stack


def spectral_filter_oracle(
    decomp: SpectralDecomposition, c, coeffs: ChebCoeffs, lambda_max: float
) -> np.ndarray:
    """Exact spectral-domain evaluation of the Chebyshev filter.

    Computes U g(Lambda) U^T c with g(lambda) = sum_k theta_k T_k(lambda~)
    evaluated scalar-wise on the rescaled eigenvalues
    lambda~ = 2 lambda / lambda_max - 1. Exists as a test oracle for
    chebyshev_filter; the two must agree to ~1e-10 relative.
    """
    if lambda_max <= 0.0:
        raise DegenerateGraphError("lambda_max must be positive")
    x = np.asarray(c, dtype=np.float64)
    lam_scaled = 2.0 * decomp.eigenvalues / lambda_max - 1.0
    theta = coeffs.theta
    gain = np.full_like(lam_scaled, theta[0])
    if coeffs.k_order >= 1:
        t_prev = np.ones_like(lam_scaled)
        t_cur = lam_scaled.copy()
        gain = gain + theta[1] * t_cur
        for k in range(2, coeffs.k_order + 1):
            t_prev, t_cur = t_cur, 2.0 * lam_scaled * t_cur - t_prev
            gain = gain + theta[k] * t_cur
    u = decomp.eigenvectors
    if x.ndim == 1:
        return u @ (gain * (u.T @ x))
    return u @ (gain[:, None] * (u.T @ x))


def graph_fourier(decomp: SpectralDecomposition, c) -> np.ndarray:
    """Graph Fourier transform: project a signal onto the eigenbasis."""
    return decomp.eigenvectors.T @ np.asarray(c, dtype=np.float64)


def inverse_graph_fourier(decomp: SpectralDecomposition, c_hat) -> np.ndarray:
    """Inverse graph Fourier transform back to the vertex domain."""
    return decomp.eigenvectors @ np.asarray(c_hat, dtype=np.float64)
