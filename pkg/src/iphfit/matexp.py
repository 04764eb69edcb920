"""Dense small-matrix kernels: matrix exponential and the block-exponential
coupling integral.

All heavy lifting in the package funnels through ``expm_multi``, a vectorized
scaling-and-squaring exponential for stacks of small matrices.  It uses the
[13/13] Pade approximant at fixed order with the squaring count chosen per
matrix from its 1-norm, which stays robust when diagonal magnitudes vary over
several orders (piecewise fits routinely produce rates up to ~1e3).

``vanloan_integral`` exponentiates the 2p x 2p block matrix

    G = [[T, B],
         [0, T]]

whose exponential carries e^{T*dt} on the diagonal blocks and

    C = int_0^dt e^{T(dt-u)} B e^{T u} du

in the top-right block, so one exponential yields the coupling integral.
"""

import numpy as np

from .errors import InvalidMatrix

# Coefficients of the degree-13 Pade numerator for exp; the denominator uses
# the same coefficients with alternating signs.
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
# Largest 1-norm for which the [13/13] approximant is accurate without scaling.
_THETA13 = 5.371920351148152


def _as_square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidMatrix(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidMatrix(f"{name} has non-finite entries")
    return A


def expm_multi(stack):
    """Exponentials of a stack of square matrices, shape (..., p, p).

    Vectorized over the leading axes; each matrix gets its own squaring
    count from its 1-norm.
    """
    A = np.asarray(stack, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise InvalidMatrix(f"expected a stack of square matrices, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidMatrix("non-finite entries in exponential input")

    p = A.shape[-1]
    lead = A.shape[:-2]
    A = A.reshape((-1, p, p))

    norms = np.abs(A).sum(axis=-2).max(axis=-1)  # 1-norm per matrix
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(norms / _THETA13))
    s = np.where(np.isfinite(s) & (s > 0), s, 0.0).astype(int)
    A = A / (2.0 ** s)[:, None, None]

    ident = np.broadcast_to(np.eye(p), A.shape)
    b = _PADE13
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    U = A @ (
        A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
        + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident
    )
    V = (
        A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
        + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    )
    R = np.linalg.solve(V - U, V + U)
    if np.any(norms == 0.0):
        R[norms == 0.0] = np.eye(p)

    for step in range(s.max() if s.size else 0):
        todo = s > step
        if not todo.any():
            break
        R[todo] = R[todo] @ R[todo]
    return R.reshape(lead + (p, p))


def expm(A, t=1.0):
    """e^{A*t} for a single square matrix and scalar t >= 0."""
    A = _as_square(A)
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise InvalidMatrix(f"time scale must be finite and nonnegative, got {t}")
    if t == 0.0:
        return np.eye(A.shape[0])
    return expm_multi(A * t)


def vanloan_integral(T, B, dt):
    """Both blocks of the 2p x 2p block exponential.

    Returns ``(E, C)`` with ``E = e^{T*dt}`` and
    ``C = int_0^dt e^{T(dt-u)} B e^{T u} du``.

    B is rescaled to unit 1-norm before the exponential and the factor
    restored afterwards (C is linear in B), so the block norm cannot
    dominate the scaling when B and T differ by many orders of magnitude.
    """
    T = _as_square(T, "T")
    B = _as_square(B, "B")
    if T.shape != B.shape:
        raise InvalidMatrix(f"dimension mismatch: T is {T.shape}, B is {B.shape}")
    dt = float(dt)
    if not np.isfinite(dt) or dt < 0:
        raise InvalidMatrix(f"dt must be finite and nonnegative, got {dt}")

    p = T.shape[0]
    if dt == 0.0:
        return np.eye(p), np.zeros((p, p))

    scale = np.abs(B).sum(axis=0).max()
    if scale == 0.0:
        return expm(T, dt), np.zeros((p, p))

    G = np.zeros((2 * p, 2 * p))
    G[:p, :p] = T
    G[:p, p:] = B / scale
    G[p:, p:] = T
    F = expm_multi(G * dt)
    return F[:p, :p], scale * F[:p, p:]


def vanloan_multi(T_stack, B_stack, dts):
    """Vectorized :func:`vanloan_integral` over a stack of (T, B, dt) triples.

    Shapes: ``T_stack`` and ``B_stack`` are (n, p, p), ``dts`` is (n,).
    Returns ``(E, C)`` each of shape (n, p, p).
    """
    T = np.asarray(T_stack, dtype=float)
    B = np.asarray(B_stack, dtype=float)
    dts = np.asarray(dts, dtype=float)
    n, p = T.shape[0], T.shape[-1]
    if B.shape != T.shape:
        raise InvalidMatrix(f"dimension mismatch: T stack {T.shape}, B stack {B.shape}")

    scale = np.abs(B).sum(axis=-2).max(axis=-1)
    safe = np.where(scale > 0.0, scale, 1.0)

    G = np.zeros((n, 2 * p, 2 * p))
    G[:, :p, :p] = T
    G[:, :p, p:] = B / safe[:, None, None]
    G[:, p:, p:] = T
    F = expm_multi(G * dts[:, None, None])
    return F[:, :p, :p], scale[:, None, None] * F[:, :p, p:]
