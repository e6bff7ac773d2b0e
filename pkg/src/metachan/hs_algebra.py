"""Dense operator kernels and the Hilbert-Schmidt (Liouville) correspondence.

Operators are ``d x d`` complex arrays. Vectorization is row-stacking, so the
operator ``sum a_ij |i><j|`` maps to the vector with entry ``i*d + j`` equal to
``a_ij`` and the superoperator ``rho -> X rho Y`` is the matrix ``kron(X, Y.T)``.
Every other module relies on this single convention.
"""

import numpy as np
import scipy.linalg

HERMITIAN_TOL = 1e-8
PSD_CLAMP_TOL = 1e-10

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)  # |1><0|


class DimensionError(ValueError):
    pass


def as_operator(a, name="operator"):
    """Return ``a`` as a finite square complex array."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def dag(a):
    return np.conj(np.swapaxes(a, -1, -2))


def is_hermitian(a, tol=HERMITIAN_TOL):
    a = np.asarray(a)
    return bool(np.max(np.abs(a - dag(a)), initial=0.0) <= tol)


def is_psd(a, tol=HERMITIAN_TOL):
    a = np.asarray(a)
    if not is_hermitian(a, tol):
        return False
    return bool(np.linalg.eigvalsh((a + dag(a)) / 2).min() >= -tol)


def is_unitary(a, tol=HERMITIAN_TOL):
    a = np.asarray(a)
    return bool(np.max(np.abs(dag(a) @ a - np.eye(a.shape[0]))) <= tol)


def hermitian_part(a):
    return (a + dag(a)) / 2


def vectorize(a):
    a = as_operator(a)
    return a.reshape(-1).copy()


def devectorize(v):
    v = np.asarray(v, dtype=complex)
    if v.ndim != 1:
        raise DimensionError("HS vector must be one-dimensional")
    d = int(round(np.sqrt(v.size)))
    if d * d != v.size or d == 0:
        raise DimensionError(f"length {v.size} is not a perfect square")
    return v.reshape(d, d).copy()


def hs_inner(a, b):
    """Hilbert-Schmidt inner product ``Tr(a^dagger b)``."""
    a = as_operator(a)
    b = as_operator(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return complex(np.vdot(a.reshape(-1), b.reshape(-1)))


def sandwich(x, y):
    """Superoperator of ``rho -> x @ rho @ y``."""
    x = as_operator(x, "x")
    y = as_operator(y, "y")
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {y.shape}")
    return np.kron(x, y.T)


def apply_superop(s, rho):
    rho = as_operator(rho)
    d = rho.shape[0]
    if s.shape != (d * d, d * d):
        raise DimensionError(f"superoperator shape {s.shape} does not act on d={d}")
    return (s @ rho.reshape(-1)).reshape(d, d)


def partial_trace(rho_tot, dims, keep="system"):
    """Reduce an ancilla (x) system operator.

    Parameters
    ----------
    rho_tot : array
        Operator on the composite space, ordered ancilla first.
    dims : tuple of int
        ``(d_a, d_s)``.
    keep : {"system", "ancilla"}
        Subsystem to keep.
    """
    rho_tot = as_operator(rho_tot, "rho_tot")
    d_a, d_s = (int(x) for x in dims)
    if d_a * d_s != rho_tot.shape[0]:
        raise DimensionError(f"dimension {rho_tot.shape[0]} does not factor as {d_a}x{d_s}")
    t = rho_tot.reshape(d_a, d_s, d_a, d_s)
    if keep == "system":
        return np.einsum("aiaj->ij", t)
    if keep == "ancilla":
        return np.einsum("aibi->ab", t)
    raise ValueError(f"keep must be 'system' or 'ancilla', got {keep!r}")


def matrix_exp(a):
    """Matrix exponential (scaling and squaring with Pade approximants)."""
    a = np.asarray(a, dtype=complex)
    if np.any(np.isnan(a)):
        raise ValueError("matrix_exp input contains NaN")
    a = as_operator(a)
    return scipy.linalg.expm(a)


def psd_sqrt(a, clamp=PSD_CLAMP_TOL):
    """Square root of a PSD matrix, clamping eigenvalues in ``[-clamp, 0)``."""
    a = hermitian_part(as_operator(a))
    w, v = np.linalg.eigh(a)
    if w.min() < -clamp:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ dag(v)


def check_state(rho, tol=HERMITIAN_TOL, name="state"):
    rho = as_operator(rho, name)
    if not is_hermitian(rho, tol):
        raise ValueError(f"{name} is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValueError(f"{name} does not have unit trace (trace {np.trace(rho).real:.12g})")
    if np.linalg.eigvalsh(hermitian_part(rho)).min() < -tol:
        raise ValueError(f"{name} is not positive semidefinite")
    return rho


def fidelity(rho, sigma):
    """Uhlmann fidelity ``Tr sqrt(sqrt(sigma) rho sqrt(sigma))`` (not squared)."""
    rho = check_state(rho, name="rho")
    sigma = check_state(sigma, name="sigma")
    s = psd_sqrt(sigma)
    inner = s @ rho @ s
    w = np.linalg.eigvalsh(hermitian_part(inner))
    if w.min() < -PSD_CLAMP_TOL:
        raise ValueError("fidelity kernel is not positive semidefinite")
    return float(min(1.0, np.sum(np.sqrt(np.clip(w, 0.0, None)))))


def trace_distance(rho, sigma):
    diff = hermitian_part(np.asarray(rho) - np.asarray(sigma))
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))


def commutator(a, b):
    return a @ b - b @ a


def embed(op, site, n_sites, local_dim=2):
    """Place ``op`` on ``site`` of an ``n_sites`` register (site 0 leftmost)."""
    out = np.eye(1, dtype=complex)
    for k in range(n_sites):
        out = np.kron(out, op if k == site else np.eye(local_dim))
    return out


def hermitian_basis(d):
    """Orthonormal Hermitian basis of d x d matrices, first element ``I/sqrt(d)``.

    Returned as an array of shape ``(d*d, d, d)``.
    """
    mats = [np.eye(d, dtype=complex) / np.sqrt(d)]
    for k in range(1, d):
        diag = np.zeros(d)
        diag[:k] = 1.0
        diag[k] = -k
        mats.append(np.diag(diag / np.sqrt(k * (k + 1))).astype(complex))
    for i in range(d):
        for j in range(i + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[i, j] = m[j, i] = 1 / np.sqrt(2)
            mats.append(m)
            m = np.zeros((d, d), dtype=complex)
            m[i, j] = -1j / np.sqrt(2)
            m[j, i] = 1j / np.sqrt(2)
            mats.append(m)
    return np.array(mats)
