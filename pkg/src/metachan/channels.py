"""Quantum channels in Kraus and natural (Hilbert-Schmidt) form."""

from dataclasses import dataclass

import numpy as np

from .hs_algebra import (
    DimensionError,
    as_operator,
    dag,
    hermitian_part,
    is_unitary,
)

TP_TOL = 1e-8
VALIDITY_TOL = 1e-10


class ChannelError(ValueError):
    pass


def _readonly(a):
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuantumChannel:
    """A CPTP map stored as Kraus operators plus its cached natural representation.

    ``natural`` is ``sum_a kron(M_a, conj(M_a))``, acting on row-stacked vectors.
    """

    kraus: tuple
    natural: np.ndarray

    @property
    def dim(self):
        return int(round(np.sqrt(self.natural.shape[0])))

    def __call__(self, rho):
        return apply(self, rho, 1)


@dataclass(frozen=True)
class ValidityReport:
    trace_preserving: bool
    tp_residual: float
    completely_positive: bool
    min_choi_eigenvalue: float
    unital: bool
    unital_residual: float

    @property
    def ok(self):
        return self.trace_preserving and self.completely_positive

    def failures(self):
        names = []
        if not self.trace_preserving:
            names.append("trace_preserving")
        if not self.completely_positive:
            names.append("completely_positive")
        return names

    def as_dict(self):
        return {
            "trace_preserving": self.trace_preserving,
            "tp_residual": self.tp_residual,
            "completely_positive": self.completely_positive,
            "min_choi_eigenvalue": self.min_choi_eigenvalue,
            "unital": self.unital,
            "unital_residual": self.unital_residual,
        }


def natural_from_kraus(ops):
    return sum(np.kron(m, m.conj()) for m in ops)


def _check_kraus(ops):
    ops = [as_operator(m, "Kraus operator") for m in ops]
    if not ops:
        raise ChannelError("at least one Kraus operator is required")
    shape = ops[0].shape
    if any(m.shape != shape for m in ops):
        raise DimensionError("Kraus operators have different dimensions")
    return ops


def tp_residual_kraus(ops):
    d = ops[0].shape[0]
    s = sum(dag(m) @ m for m in ops)
    return float(np.max(np.abs(s - np.eye(d))))


def channel_from_kraus(ops, tol=TP_TOL):
    """Build a channel from Kraus operators; raises if not trace preserving within ``tol``."""
    ops = _check_kraus(ops)
    res = tp_residual_kraus(ops)
    if res > tol:
        raise ChannelError(f"Kraus operators are not trace preserving (residual {res:.3e})")
    return QuantumChannel(tuple(_readonly(m) for m in ops), _readonly(natural_from_kraus(ops)))


def unchecked_channel(ops):
    """Channel from Kraus operators without the trace-preservation gate.

    Used to feed deliberately broken operator sets to :func:`validate`.
    """
    ops = _check_kraus(ops)
    return QuantumChannel(tuple(_readonly(m) for m in ops), _readonly(natural_from_kraus(ops)))


def channel_from_joint_unitary(u, ancilla_init, d_a, d_s, tol=VALIDITY_TOL):
    """Stinespring dilation ``rho -> Tr_a[U (psi_a (x) rho) U^dagger]`` with ancilla first.

    The Kraus operators are ``<alpha| U |psi>`` over the computational basis of
    the ancilla. Only pure ancilla states are accepted.
    """
    u = as_operator(u, "U")
    if u.shape[0] != d_a * d_s:
        raise DimensionError(f"U has dimension {u.shape[0]}, expected {d_a}*{d_s}")
    if not is_unitary(u, tol):
        raise ChannelError("joint evolution is not unitary")
    rho_a = np.asarray(ancilla_init, dtype=complex)
    if rho_a.ndim == 1:
        psi = rho_a / np.linalg.norm(rho_a)
    else:
        rho_a = hermitian_part(as_operator(rho_a, "ancilla state"))
        if rho_a.shape[0] != d_a:
            raise DimensionError("ancilla state has the wrong dimension")
        w, v = np.linalg.eigh(rho_a)
        if abs(w[-1] - 1.0) > 1e-8 or abs(np.trace(rho_a).real - 1.0) > 1e-8:
            raise ChannelError("mixed ancilla states are not supported")
        psi = v[:, -1]
    blocks = u.reshape(d_a, d_s, d_a, d_s)
    kraus = [np.einsum("ibj,b->ij", blocks[alpha], psi) for alpha in range(d_a)]
    return channel_from_kraus(kraus)


def choi_from_natural(natural):
    """Choi matrix ``sum_kl Phi(|k><l|) (x) |k><l|`` by reshuffling the natural rep."""
    n = natural.shape[0]
    d = int(round(np.sqrt(n)))
    return natural.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(n, n)


def validate_natural(natural, tol=VALIDITY_TOL):
    """Trace preservation, complete positivity and unitality of a natural representation."""
    natural = np.asarray(natural, dtype=complex)
    n = natural.shape[0]
    d = int(round(np.sqrt(n)))
    eye = np.eye(d).reshape(-1)
    tp = float(np.max(np.abs(natural.conj().T @ eye - eye)))
    unital = float(np.max(np.abs(natural @ eye - eye)))
    choi = choi_from_natural(natural)
    min_eig = float(np.linalg.eigvalsh(hermitian_part(choi)).min())
    return ValidityReport(
        trace_preserving=tp <= tol,
        tp_residual=tp,
        completely_positive=min_eig >= -tol,
        min_choi_eigenvalue=min_eig,
        unital=unital <= tol,
        unital_residual=unital,
    )


def validate(ch, tol=VALIDITY_TOL):
    return validate_natural(ch.natural, tol)


def apply(ch, rho, m=1):
    """``m``-fold application of ``ch`` to ``rho`` by repeated matrix-vector products."""
    rho = as_operator(rho, "rho")
    m = int(m)
    if m < 0:
        raise ValueError("m must be non-negative")
    natural = ch.natural if isinstance(ch, QuantumChannel) else np.asarray(ch)
    d = rho.shape[0]
    if natural.shape[0] != d * d:
        raise DimensionError(f"channel acts on d={int(round(np.sqrt(natural.shape[0])))}, state has d={d}")
    if m == 0:
        return rho.copy()
    v = rho.reshape(-1)
    for _ in range(m):
        v = natural @ v
    return hermitian_part(v.reshape(d, d))


def power(ch, m):
    """Natural representation of ``ch`` applied ``m`` times (binary exponentiation)."""
    natural = ch.natural if isinstance(ch, QuantumChannel) else np.asarray(ch)
    return np.linalg.matrix_power(natural, int(m))


def compose(a, b):
    """The channel ``a o b`` (``b`` acts first)."""
    if a.natural.shape != b.natural.shape:
        raise DimensionError("channels act on different dimensions")
    kraus = [x @ y for x in a.kraus for y in b.kraus]
    return QuantumChannel(tuple(_readonly(m) for m in kraus), _readonly(a.natural @ b.natural))


def identity_channel(d):
    return channel_from_kraus([np.eye(d)])
