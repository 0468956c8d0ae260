"""Dense Hermitian eigensolving, projectors, resolvents, Schatten norms.

This is the oracle layer: everything else is checked against it. Dense
solvers only, with a hard dimension cap, so every result here is a full
factorization rather than an iterative approximation.
"""

import warnings

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ComputeError, GeometryError, PreconditionError

DIM_CAP = 4096
ENDPOINT_TIE = 1e-12  # eigenvalues this close to an interval endpoint count as inside


def _as_matrix(op):
    m = op.matrix if hasattr(op, "matrix") else np.asarray(op)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise GeometryError("expected a square matrix")
    if m.shape[0] > DIM_CAP:
        raise GeometryError("matrix dimension %d exceeds the dense-solver cap %d"
                            % (m.shape[0], DIM_CAP))
    return np.asarray(m, dtype=complex)


def _check_hermitian(m):
    scale = max(float(np.max(np.abs(m))), 1e-300)
    if float(np.max(np.abs(m - m.conj().T))) > 1e-10 * scale:
        raise PreconditionError("matrix is not Hermitian to working tolerance")


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Full spectral decomposition with a deterministic eigenvector phase."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source_dim: int

    def __post_init__(self):
        self.eigenvalues.setflags(write=False)
        self.eigenvectors.setflags(write=False)


def eigen_hermitian(op):
    """Ascending eigendecomposition; largest-magnitude vector entry made real positive."""
    m = _as_matrix(op)
    _check_hermitian(m)
    vals, vecs = np.linalg.eigh(m)
    lead = np.argmax(np.abs(vecs), axis=0)
    pick = vecs[lead, np.arange(vecs.shape[1])]
    phase = np.where(np.abs(pick) > 0, pick / np.maximum(np.abs(pick), 1e-300), 1.0)
    vecs = vecs * phase.conj()[None, :]
    return SpectralData(vals, vecs, m.shape[0])


def spectral_projector(spec, a, b):
    """Orthogonal projector onto eigenvectors with eigenvalue in [a, b].

    Endpoint ties within 1e-12 are included (closed-interval convention).
    Returns (projector, integer count).
    """
    if not a < b:
        raise PreconditionError("need a < b")
    mask = (spec.eigenvalues >= a - ENDPOINT_TIE) & (spec.eigenvalues <= b + ENDPOINT_TIE)
    count = int(np.count_nonzero(mask))
    if count == 0:
        return np.zeros((spec.source_dim, spec.source_dim), dtype=complex), 0
    V = spec.eigenvectors[:, mask]
    return V @ V.conj().T, count


def count_in_interval(eigenvalues, a, b):
    """Closed-interval eigenvalue count with the same endpoint tie-break."""
    return int(np.count_nonzero((eigenvalues >= a - ENDPOINT_TIE)
                                & (eigenvalues <= b + ENDPOINT_TIE)))


def resolvent(op, z):
    """(H - z)^{-1}, verified by its residual.

    The caller promises z is at distance > 1e-12 from the spectrum; the
    check here is the computed residual, which also catches near-singular
    solves.
    """
    m = _as_matrix(op)
    dim = m.shape[0]
    A = m - complex(z) * np.eye(dim)
    with warnings.catch_warnings(), np.errstate(divide="ignore", invalid="ignore"):
        warnings.simplefilter("ignore")
        try:
            X = sla.solve(A, np.eye(dim, dtype=complex))
        except (sla.LinAlgError, ValueError) as exc:
            raise ComputeError("resolvent solve failed: %s" % (exc,)) from None
        if not np.all(np.isfinite(X)):
            raise ComputeError("resolvent solve overflowed: z on the spectrum")
        residual = float(np.max(np.abs(A @ X - np.eye(dim))))
    if not residual <= 1e-8:
        raise ComputeError("resolvent residual %.3e: z too close to the spectrum"
                           % residual)
    return X


def schatten_norm(matrix, p):
    """(sum of singular values^p)^(1/p); p = inf gives the operator norm."""
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2:
        raise GeometryError("expected a matrix")
    if not (p == np.inf or p >= 1.0):
        raise PreconditionError("Schatten exponent must be >= 1 (or inf)")
    if p == 2:
        return float(np.linalg.norm(m, "fro"))
    s = sla.svdvals(m)
    if p == np.inf:
        return float(s[0]) if s.size else 0.0
    return float(np.sum(s ** p) ** (1.0 / p))


def apply_function_eigen(spec, f):
    """U f(Lambda) U*, the reference route for any matrix function."""
    fvals = np.asarray([f(v) for v in spec.eigenvalues], dtype=complex)
    return (spec.eigenvectors * fvals[None, :]) @ spec.eigenvectors.conj().T
