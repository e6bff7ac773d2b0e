"""Spectral decomposition of natural representations and metastable-region detection."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .channels import QuantumChannel
from .hs_algebra import DimensionError, as_operator, hermitian_part

COND_LIMIT = 1e8
EPS_UNIT = 1e-10
CLUSTER_TOL = 1e-9
PAIR_TOL = 1e-10
AUTO_L_MIN_MODULUS = 0.5


class SpectralError(RuntimeError):
    pass


class NotDiagonalizableError(SpectralError):
    pass


class NoMetastableRegion(SpectralError):
    """Raised when a metastable region is required but the spectrum has none."""


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Biorthonormal eigen-decomposition ``Phi = sum_i lam_i |R_i>><<L_i|``.

    Columns of ``right`` and ``left`` are the row-stacked eigenvectors, ordered
    by decreasing modulus of ``eigenvalues``.
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    cond_eigvec: float
    diagonalizable: bool
    residual: float = 0.0

    @property
    def dim(self):
        return int(round(np.sqrt(self.eigenvalues.size)))

    def __len__(self):
        return self.eigenvalues.size

    def right_op(self, i):
        d = self.dim
        return self.right[:, i].reshape(d, d)

    def left_op(self, i):
        d = self.dim
        return self.left[:, i].reshape(d, d)

    def coefficients(self, rho):
        """``c_i = Tr(L_i^dagger rho)`` for every mode."""
        rho = as_operator(rho, "rho")
        return self.left.conj().T @ rho.reshape(-1)

    def biorthonormality_residual(self):
        g = self.left.conj().T @ self.right
        return float(np.max(np.abs(g - np.eye(g.shape[0]))))

    def reconstruct(self):
        return (self.right * self.eigenvalues) @ self.left.conj().T


def _sort_order(w):
    mod = np.round(np.abs(w), 11)
    re = np.round(w.real, 11)
    im = np.round(w.imag, 11)
    # lexsort: last key is primary
    return np.lexsort((im, -re, -mod))


def _clusters(w, tol):
    groups = []
    start = 0
    for i in range(1, w.size + 1):
        if i == w.size or abs(w[i] - w[start]) > tol * max(1.0, abs(w[start])):
            groups.append(list(range(start, i)))
            start = i
    return groups


def _dagger_vec(v, d):
    return v.reshape(d, d).conj().T.reshape(-1)


def _eig_residual(phi, v, lam):
    return float(np.linalg.norm(phi @ v - lam * v) / max(np.linalg.norm(v), 1e-300))


def _hermitian_candidate(v, d):
    r = v.reshape(d, d)
    h1 = (r + r.conj().T) / 2
    h2 = (r - r.conj().T) / 2j
    h = h1 if np.linalg.norm(h1) >= np.linalg.norm(h2) else h2
    return h.reshape(-1) / np.linalg.norm(h)


def _pin_sign(v, d):
    """Flip sign so the first significant diagonal entry is positive."""
    diag = np.diag(v.reshape(d, d)).real
    big = np.abs(diag) > 1e-6 * max(np.abs(v).max(), 1e-300)
    if np.any(big) and diag[np.argmax(big)] < 0:
        return -v
    return v


def _hermitian_span(cols, d, phi, lam):
    """Hermitian orthonormal basis of span(cols) if the span is closed under adjoint."""
    cands = []
    for v in cols.T:
        r = v.reshape(d, d)
        cands.append(((r + r.conj().T) / 2).reshape(-1))
        cands.append(((r - r.conj().T) / 2j).reshape(-1))
    # Hermitian matrices form a real vector space: orthonormalize over the reals
    real_rep = np.concatenate([np.array(cands).real, np.array(cands).imag], axis=1)
    u, s, vt = np.linalg.svd(real_rep, full_matrices=False)
    k = cols.shape[1]
    if s.size < k or s[k - 1] < 1e-8 * s[0] or (s.size > k and s[k] > 1e-6 * s[0]):
        return None
    basis = vt[:k]
    n = d * d
    out = basis[:, :n] + 1j * basis[:, n:]
    out = out.T / np.linalg.norm(out, axis=1)
    if max(_eig_residual(phi, out[:, j], lam) for j in range(k)) > 1e-8:
        return None
    return out


def spectral_decompose(phi_hat, cond_limit=COND_LIMIT):
    """Full non-Hermitian eigendecomposition with biorthonormal left vectors.

    Numerically degenerate eigenvalues are re-orthonormalized within their
    eigenspace (and given a Hermitian basis when the map preserves Hermiticity).
    Simple real eigenvalues get Hermitian representatives with a pinned sign;
    conjugate pairs are arranged so that the partner vector is the adjoint.
    Left vectors come from the inverse of the right-eigenvector matrix.
    """
    if isinstance(phi_hat, QuantumChannel):
        phi_hat = phi_hat.natural
    phi = np.asarray(phi_hat, dtype=complex)
    if phi.ndim != 2 or phi.shape[0] != phi.shape[1]:
        raise DimensionError("superoperator must be square")
    n = phi.shape[0]
    d = int(round(np.sqrt(n)))
    if d * d != n:
        raise DimensionError(f"superoperator size {n} is not a square number")
    try:
        w, v = scipy.linalg.eig(phi)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectralError(f"eigensolver failed: {exc}") from exc

    order = _sort_order(w)
    w = w[order]
    v = v[:, order]
    v = v / np.linalg.norm(v, axis=0)

    for group in _clusters(w, CLUSTER_TOL):
        lam = w[group].mean()
        if len(group) > 1:
            q, _ = np.linalg.qr(v[:, group])
            if abs(lam.imag) < 1e-9:
                herm = _hermitian_span(q, d, phi, lam)
                if herm is not None:
                    q = herm
            v[:, group] = q
        else:
            i = group[0]
            if abs(w[i].imag) < 1e-9:
                h = _hermitian_candidate(v[:, i], d)
                if _eig_residual(phi, h, w[i]) < 1e-8:
                    v[:, i] = _pin_sign(h, d)

    # conjugate partners: R(conj lam) = R(lam)^dagger
    done = set()
    for i in range(n):
        if i in done or abs(w[i].imag) <= 1e-9:
            continue
        partner = [j for j in range(n) if j != i and j not in done and abs(w[j] - np.conj(w[i])) < 1e-8]
        if len(partner) != 1:
            continue
        j = partner[0]
        cand = _dagger_vec(v[:, i], d)
        if _eig_residual(phi, cand, w[j]) < 1e-8:
            v[:, j] = cand
        done.update((i, j))

    # unit-trace representative for a simple eigenvalue-1 mode
    ones = [i for i in range(n) if abs(w[i] - 1.0) <= 1e-9]
    if len(ones) == 1:
        tr = v[:, ones[0]].reshape(d, d).trace()
        if abs(tr) > 1e-8:
            v[:, ones[0]] = v[:, ones[0]] / tr

    cond = float(np.linalg.cond(v))
    residual = max(_eig_residual(phi, v[:, i], w[i]) for i in range(n))
    diagonalizable = bool(np.isfinite(cond) and cond <= cond_limit and residual < 1e-6)
    if np.isfinite(cond) and cond < 1e15:
        left = np.linalg.inv(v).conj().T
    else:
        left = np.full_like(v, np.nan)
        diagonalizable = False
    return SpectralData(
        eigenvalues=w,
        right=v,
        left=left,
        cond_eigvec=cond,
        diagonalizable=diagonalizable,
        residual=residual,
    )


@dataclass(frozen=True)
class EigenClass:
    kind: str  # "fixed" | "rotating" | "metastable" | "decaying"
    phase: float = 0.0

    def __str__(self):
        if self.kind == "rotating":
            return f"rotating({self.phase:.6g})"
        return self.kind


@dataclass(frozen=True)
class MetastableRegion:
    """Round-count window ``mu'' << m << mu'`` delimited by the truncation index ``l``."""

    n: int
    l: int
    mu_prime: float
    mu_double_prime: float
    gap_ratio: float
    n_peripheral: int = 0

    @property
    def midpoint(self):
        """Geometric midpoint of the window, rounded to a round count."""
        return max(1, int(round(np.sqrt(self.mu_prime * self.mu_double_prime))))

    def as_dict(self):
        return {
            "n": self.n,
            "l": self.l,
            "mu_prime": self.mu_prime,
            "mu_double_prime": self.mu_double_prime,
            "gap_ratio": self.gap_ratio,
            "n_peripheral": self.n_peripheral,
            "midpoint": self.midpoint,
        }


def _log_mod(lam):
    a = abs(lam)
    return np.inf if a == 0 else abs(np.log(a))


def region_for(eigenvalues, n, n_peripheral, l):
    """Window boundaries for truncation index ``l`` (1-based)."""
    w = np.asarray(eigenvalues)
    if not n_peripheral < l < w.size:
        raise ValueError(f"truncation index l={l} outside ({n_peripheral}, {w.size})")
    inner = _log_mod(w[l - 1])
    outer = _log_mod(w[l])
    if inner == 0:
        raise ValueError(f"eigenvalue {l} has unit modulus and cannot bound the window")
    mu_prime = 1.0 / inner
    mu_dd = 0.0 if np.isinf(outer) else 1.0 / outer
    ratio = np.inf if np.isinf(outer) else outer / inner
    return MetastableRegion(n, l, mu_prime, mu_dd, ratio, n_peripheral)


def classify_spectrum(sd, eps_unit=EPS_UNIT, l=None, min_modulus=AUTO_L_MIN_MODULUS):
    """Label each eigenvalue and locate the metastable region.

    Returns ``(classes, region)``; ``region`` is ``None`` when no decaying
    eigenvalue qualifies as metastable. When ``l`` is omitted it is chosen to
    maximize ``|ln|lam_{l+1}|| / |ln|lam_l||`` over decaying ``lam_l`` with
    ``|lam_l| > min_modulus``.
    """
    if not sd.diagonalizable:
        raise NotDiagonalizableError(f"eigenvector condition number {sd.cond_eigvec:.3e}")
    w = sd.eigenvalues
    size = w.size
    kinds = []
    for lam in w:
        if abs(lam - 1) <= eps_unit:
            kinds.append(EigenClass("fixed"))
        elif abs(abs(lam) - 1) <= eps_unit:
            kinds.append(EigenClass("rotating", float(np.angle(lam))))
        else:
            kinds.append(None)
    n = sum(1 for k in kinds if k is not None and k.kind == "fixed")
    n_periph = sum(1 for k in kinds if k is not None)

    if l is None:
        best = None
        for cand in range(n_periph + 1, size):
            lam = w[cand - 1]
            if abs(lam) <= min_modulus or abs(lam) >= 1 - eps_unit:
                continue
            reg = region_for(w, n, n_periph, cand)
            if best is None or reg.gap_ratio > best.gap_ratio:
                best = reg
        region = best
    else:
        region = region_for(w, n, n_periph, int(l))

    cut = region.l if region is not None else n_periph
    classes = [
        k if k is not None else EigenClass("metastable" if i < cut else "decaying")
        for i, k in enumerate(kinds)
    ]
    return classes, region


def propagate(sd, rho, m, truncate_to=None):
    """``sum_i c_i lam_i^m R_i``, optionally keeping only the first ``truncate_to`` modes."""
    if not sd.diagonalizable:
        raise NotDiagonalizableError("spectral propagation requires a diagonalizable channel")
    m = int(m)
    if m < 0:
        raise ValueError("m must be non-negative")
    k = len(sd) if truncate_to is None else int(truncate_to)
    if not 1 <= k <= len(sd):
        raise ValueError(f"truncation index {truncate_to} out of range 1..{len(sd)}")
    c = sd.coefficients(rho)[:k]
    vec = sd.right[:, :k] @ (c * sd.eigenvalues[:k] ** m)
    d = sd.dim
    return hermitian_part(vec.reshape(d, d))


@dataclass(frozen=True)
class RealMode:
    """One real eigenvalue (``vectors`` has one Hermitian operator) or a conjugate pair (two)."""

    indices: tuple
    eigenvalue: complex
    vectors: tuple
    left: tuple

    @property
    def is_pair(self):
        return len(self.indices) == 2


@dataclass(frozen=True)
class RealModeSet:
    modes: tuple = field(default_factory=tuple)

    def coefficients(self, rho, m=0, include_decay=True):
        """Real coefficients ``c'`` of every mode after ``m`` rounds."""
        rho = as_operator(rho, "rho")
        out = []
        for mode in self.modes:
            c = np.vdot(mode.left[0].reshape(-1), rho.reshape(-1))
            lam = mode.eigenvalue
            decay = abs(lam) ** m if include_decay else 1.0
            if mode.is_pair:
                phase = m * np.angle(lam) + np.angle(c)
                out.extend([abs(c) * decay * np.cos(phase), abs(c) * decay * np.sin(phase)])
            else:
                val = c * lam**m if include_decay else c
                out.append(val.real)
        return np.array(out)

    def operators(self):
        return [v for mode in self.modes for v in mode.vectors]

    def reconstruct(self, rho, m=0, include_decay=True):
        ops = self.operators()
        coeffs = self.coefficients(rho, m, include_decay)
        return sum(c * op for c, op in zip(coeffs, ops))


def real_modes(sd, indices):
    """Combine conjugate pairs into Hermitian modes ``R1 + R2`` and ``i(R1 - R2)``.

    ``indices`` are 0-based positions into ``sd.eigenvalues`` and must be
    closed under complex conjugation.
    """
    indices = [int(i) for i in indices]
    w = sd.eigenvalues
    remaining = list(indices)
    modes = []
    while remaining:
        i = remaining.pop(0)
        lam = w[i]
        if abs(lam.imag) <= PAIR_TOL:
            r = sd.right_op(i)
            modes.append(RealMode((i,), complex(lam.real), (hermitian_part(r),), (sd.left_op(i),)))
            continue
        partners = [j for j in remaining if abs(w[j] - np.conj(lam)) <= PAIR_TOL]
        if not partners:
            raise ValueError(f"eigenvalue {lam} at index {i} has no conjugate partner in the set")
        j = partners[0]
        remaining.remove(j)
        r1, r2 = sd.right_op(i), sd.right_op(j)
        modes.append(
            RealMode(
                (i, j),
                complex(lam),
                (r1 + r2, 1j * (r1 - r2)),
                (sd.left_op(i), sd.left_op(j)),
            )
        )
    return RealModeSet(tuple(modes))
