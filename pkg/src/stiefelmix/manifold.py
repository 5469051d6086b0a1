"""Geometry of the Stiefel manifold V_{p,d}.

Points are ``d x p`` arrays with orthonormal columns.  Batched routines accept
arrays of shape ``(..., d, p)``.  All randomness comes from an injected
``numpy.random.Generator``.
"""

import numpy as np
from scipy.linalg import expm

ORTHO_TOL = 1e-10


class InvalidShapeError(ValueError):
    """Raised when a matrix cannot be a point of V_{p,d} because p > d."""


class DegenerateInputError(ValueError):
    """Raised when projection is requested for a rank-deficient matrix."""


def _check_shape(M):
    M = np.asarray(M, dtype=float)
    if M.ndim < 2:
        raise InvalidShapeError(f"expected a (d, p) matrix, got shape {M.shape}")
    d, p = M.shape[-2:]
    if p < 1 or d < 1 or p > d:
        raise InvalidShapeError(f"need 1 <= p <= d, got d={d}, p={p}")
    return M


def orthonormality_error(M):
    """Max absolute entry of ``M^T M - I_p`` (per matrix for batches)."""
    M = _check_shape(M)
    p = M.shape[-1]
    gram = np.swapaxes(M, -1, -2) @ M
    return np.abs(gram - np.eye(p)).max(axis=(-2, -1))


def validate(M, tol=ORTHO_TOL):
    """Return True iff ``max|M^T M - I_p| <= tol``.

    Parameters
    ----------
    M : array_like, shape (d, p)
    tol : float
        Positive tolerance.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    M = _check_shape(M)
    if M.ndim != 2:
        raise InvalidShapeError("validate expects a single (d, p) matrix")
    return bool(orthonormality_error(M) <= tol)


def sample_haar(d, p, rng, size=None):
    """Draw uniformly (Haar) distributed points of V_{p,d}.

    A ``d x p`` standard Gaussian matrix is factored by thin QR and the
    columns are sign corrected so that ``R`` has a positive diagonal, which
    makes ``Q`` exactly Haar distributed.

    Parameters
    ----------
    d, p : int
        Ambient dimension and number of columns, ``1 <= p <= d``.
    rng : numpy.random.Generator
    size : int or None
        Number of draws.  ``None`` returns a single ``(d, p)`` array,
        otherwise an array of shape ``(size, d, p)``.
    """
    if not 1 <= p <= d:
        raise InvalidShapeError(f"need 1 <= p <= d, got d={d}, p={p}")
    shape = (d, p) if size is None else (size, d, p)
    Z = rng.standard_normal(shape)
    Q, R = np.linalg.qr(Z)
    signs = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    return Q * signs[..., None, :]


def frobenius_distance(X, Y):
    """Extrinsic distance ``sqrt(tr((X - Y)(X - Y)^T))``.

    Works on batches; shapes must broadcast and the trailing ``(d, p)``
    dimensions must match exactly.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[-2:] != Y.shape[-2:]:
        raise InvalidShapeError(f"shape mismatch {X.shape[-2:]} vs {Y.shape[-2:]}")
    diff = X - Y
    return np.sqrt(np.sum(diff * diff, axis=(-2, -1)))


def project(M):
    """Nearest point of V_{p,d} to ``M`` in Frobenius norm (polar factor).

    Computed as ``U V^T`` from the thin SVD ``M = U S V^T``.  Batched input
    of shape ``(..., d, p)`` is supported.
    """
    M = _check_shape(M)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    smax = s.max(axis=-1, keepdims=True)
    if np.any(s <= np.finfo(float).eps * max(M.shape[-2:]) * smax) or np.any(smax == 0):
        raise DegenerateInputError("matrix does not have full column rank")
    return U @ Vt


def perturb(G, step, rng):
    """Random nearby frame ``project(G + step * E)`` with Gaussian ``E``.

    ``step = 0`` returns ``G`` unchanged (a copy).
    """
    if step < 0:
        raise ValueError("step must be nonnegative")
    G = _check_shape(G)
    if step == 0:
        return G.copy()
    E = rng.standard_normal(G.shape)
    return project(G + step * E)


def random_rotation(d, step, rng, size=None):
    """Rotation ``expm(step * A)`` with ``A`` a standard Gaussian skew matrix.

    The law of the result is invariant under inversion, so left
    multiplication by it is a symmetric proposal on V_{p,d}.
    """
    shape = (d, d) if size is None else (size, d, d)
    if step == 0:
        return np.broadcast_to(np.eye(d), shape).copy()
    B = rng.standard_normal(shape)
    A = np.triu(B, 1)
    A = A - np.swapaxes(A, -1, -2)
    return expm(step * A)


def rotate(G, step, rng):
    """Left-multiply ``G`` (or a batch of frames) by random rotations."""
    G = _check_shape(G)
    d = G.shape[-2]
    size = None if G.ndim == 2 else G.shape[0]
    if G.ndim > 3:
        raise InvalidShapeError("rotate supports a single frame or a flat batch")
    return random_rotation(d, step, rng, size=size) @ G


def reorthonormalize(G, tol=ORTHO_TOL):
    """Project ``G`` back onto the manifold when drift exceeds ``tol``."""
    err = orthonormality_error(G)
    if np.all(err <= tol):
        return G
    return project(G)


def to_row(X):
    """Serialize a frame as ``[d, p, x11, x12, ...]`` (row-major)."""
    X = _check_shape(X)
    d, p = X.shape
    return [d, p] + [float(v) for v in X.ravel(order="C")]


def from_row(values):
    """Inverse of :func:`to_row`."""
    values = list(values)
    d, p = int(values[0]), int(values[1])
    entries = np.asarray(values[2:], dtype=float)
    if entries.size != d * p:
        raise InvalidShapeError(f"expected {d * p} entries, got {entries.size}")
    return _check_shape(entries.reshape(d, p))
