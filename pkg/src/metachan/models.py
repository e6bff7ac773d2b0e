"""Physical models: RIM channels, nuclear spin baths, DD effective Hamiltonians, dissipation.

Units: frequencies are angular, in rad/ms, and times are in ms, so every
``frequency * t`` product is a dimensionless phase. Quoted kHz values are
converted with :func:`khz`. Dimensionless models use ``t = 1``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .channels import QuantumChannel, channel_from_kraus, validate_natural
from .hs_algebra import (
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    DimensionError,
    as_operator,
    embed,
    is_hermitian,
    matrix_exp,
)

MU0_OVER_4PI = 1e-7  # T m / A
HBAR = 1.054571817e-34  # J s
GAMMA_C13 = 6.728284e7  # rad / (s T)

SPIN_OPS = (PAULI_X / 2, PAULI_Y / 2, PAULI_Z / 2)


def khz(f):
    """Angular frequency in rad/ms for an ordinary frequency quoted in kHz."""
    return 2 * np.pi * np.asarray(f, dtype=float)


def larmor_from_field(field_gauss, gyromagnetic=GAMMA_C13):
    """Nuclear Larmor angular frequency (rad/ms) at a field given in gauss."""
    return gyromagnetic * field_gauss * 1e-4 / 1e3


def rotation(phi, theta):
    """Ancilla rotation ``exp(-i (cos(phi) X + sin(phi) Y) theta / 2)``."""
    n = np.cos(phi) * PAULI_X + np.sin(phi) * PAULI_Y
    return np.cos(theta / 2) * np.eye(2) - 1j * np.sin(theta / 2) * n


@dataclass(frozen=True, eq=False)
class RimSpec:
    """Ramsey interferometry cycle under ``H = Z_q (x) B + gamma I_q (x) C`` for time ``t``."""

    B: np.ndarray
    C: np.ndarray
    gamma: float = 0.0
    delta_phi: float = np.pi / 2
    t: float = 1.0

    def __post_init__(self):
        b = as_operator(self.B, "B")
        c = as_operator(self.C, "C")
        if b.shape != c.shape:
            raise DimensionError("B and C must have equal dimensions")
        if not (is_hermitian(b, 1e-10) and is_hermitian(c, 1e-10)):
            raise ValueError("B and C must be Hermitian")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.t <= 0:
            raise ValueError("t must be positive")
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "C", c)

    @property
    def dim(self):
        return self.B.shape[0]

    def conditional_unitaries(self):
        u0 = matrix_exp(-1j * self.t * (self.B + self.gamma * self.C))
        u1 = matrix_exp(-1j * self.t * (-self.B + self.gamma * self.C))
        return u0, u1

    def hamiltonian(self):
        """Composite Hamiltonian, ancilla first."""
        return np.kron(PAULI_Z, self.B) + self.gamma * np.kron(np.eye(2), self.C)


@dataclass(frozen=True, eq=False)
class ConditionalMaps:
    """Outcome-resolved superoperators ``E_0``, ``E_1`` of one measurement cycle."""

    maps: tuple
    kraus: tuple = None

    @property
    def dim(self):
        return int(round(np.sqrt(self.maps[0].shape[0])))

    @property
    def natural(self):
        return sum(self.maps)

    def validate(self, tol=1e-10):
        """Validity report of the summed channel plus the smallest Choi eigenvalue per branch."""
        report = validate_natural(self.natural, tol)
        branch_min = [validate_natural(e, tol).min_choi_eigenvalue for e in self.maps]
        return report, branch_min


def rim_kraus(spec):
    u0, u1 = spec.conditional_unitaries()
    phase = np.exp(1j * spec.delta_phi)
    return (u0 - phase * u1) / 2, (u0 + phase * u1) / 2


def rim_channel(spec):
    """Channel induced on the target by one RIM cycle, with its outcome branches."""
    m0, m1 = rim_kraus(spec)
    ch = channel_from_kraus([m0, m1])
    u0, u1 = spec.conditional_unitaries()
    mixed = (np.kron(u0, u0.conj()) + np.kron(u1, u1.conj())) / 2
    if np.max(np.abs(ch.natural - mixed)) > 1e-12:
        raise RuntimeError("RIM natural representation differs from the mixed-unitary form")
    maps = ConditionalMaps((np.kron(m0, m0.conj()), np.kron(m1, m1.conj())), (m0, m1))
    return ch, maps


def rim_joint_unitary(spec, phi1=None, phi2=0.0):
    """Full ancilla-target unitary ``(R_phi2 (x) I) exp(-iHt) (R_phi1 (x) I)``.

    ``phi1 - phi2`` must equal ``delta_phi``; by default ``phi1 = delta_phi``.
    The ancilla starts in ``|0>``.
    """
    if phi1 is None:
        phi1 = spec.delta_phi + phi2
    d = spec.dim
    u = matrix_exp(-1j * spec.t * spec.hamiltonian())
    pre = np.kron(rotation(phi1, np.pi / 2), np.eye(d))
    post = np.kron(rotation(phi2, np.pi / 2), np.eye(d))
    return post @ u @ pre


@dataclass(frozen=True, eq=False)
class SpinSystem:
    """K spin-1/2 nuclei around a central electron spin.

    ``hyperfine`` rows are the vectors ``A_k`` in rad/ms, ``positions`` are in
    nm, ``larmor`` in rad/ms and ``gyromagnetic`` in rad/(s T).
    """

    hyperfine: np.ndarray
    positions: np.ndarray = None
    larmor: float = 0.0
    gyromagnetic: float = GAMMA_C13

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.hyperfine, dtype=float))
        if a.shape[1] != 3 or a.shape[0] < 1:
            raise ValueError("hyperfine must be a (K, 3) array")
        if a.shape[0] > 5:
            raise ValueError("at most 5 target spins are supported")
        object.__setattr__(self, "hyperfine", a)
        if self.positions is not None:
            r = np.atleast_2d(np.asarray(self.positions, dtype=float))
            if r.shape != a.shape:
                raise ValueError("positions must have the same shape as hyperfine")
            object.__setattr__(self, "positions", r)

    @property
    def K(self):
        return self.hyperfine.shape[0]

    @property
    def dim(self):
        return 2**self.K

    def dipolar_couplings(self):
        """Symmetric matrix of ``D_jk = mu0 gamma_n^2 hbar / (4 pi r_jk^3)`` in rad/ms."""
        K = self.K
        D = np.zeros((K, K))
        if self.positions is None:
            return D
        for k in range(K):
            for j in range(k + 1, K):
                r = np.linalg.norm(self.positions[j] - self.positions[k]) * 1e-9
                if r == 0:
                    raise ValueError(f"spins {k} and {j} sit at the same position")
                D[k, j] = D[j, k] = MU0_OVER_4PI * self.gyromagnetic**2 * HBAR / r**3 / 1e3
        return D


def separation_for_coupling(coupling, gyromagnetic=GAMMA_C13):
    """Distance in nm giving a dipolar coupling of ``coupling`` rad/ms."""
    return (MU0_OVER_4PI * gyromagnetic**2 * HBAR / (coupling * 1e3)) ** (1 / 3) * 1e9


def _spin_vector(k, K):
    return [embed(s, k, K) for s in SPIN_OPS]


def spin_bath_hamiltonians(system, include_zeeman=False):
    """``B = sum_k A_k . I_k`` and ``C`` = dipolar couplings (+ Zeeman term)."""
    K = system.K
    spins = [_spin_vector(k, K) for k in range(K)]
    d = system.dim
    B = np.zeros((d, d), dtype=complex)
    for k in range(K):
        B += sum(a * s for a, s in zip(system.hyperfine[k], spins[k]))
    C = np.zeros((d, d), dtype=complex)
    if system.positions is not None:
        D = system.dipolar_couplings()
        for k in range(K):
            for j in range(k + 1, K):
                rvec = system.positions[j] - system.positions[k]
                rhat = rvec / np.linalg.norm(rvec)
                dot = sum(a @ b for a, b in zip(spins[k], spins[j]))
                ik_r = sum(x * s for x, s in zip(rhat, spins[k]))
                ij_r = sum(x * s for x, s in zip(rhat, spins[j]))
                C += D[k, j] * (dot - 3 * ik_r @ ij_r)
    if include_zeeman:
        C += system.larmor * sum(spins[k][2] for k in range(K))
    return B, C


def dd_effective_hamiltonians(system, delta_omega):
    """First-harmonic rotating-wave Hamiltonians of an ancilla under CPMG control.

    ``B = (2/pi) sum_k A_perp_k I_perp_k`` and ``C = delta_omega sum_k I^z_k``;
    dipolar couplings are dropped.
    """
    K = system.K
    d = system.dim
    B = np.zeros((d, d), dtype=complex)
    for k in range(K):
        ax, ay, _ = system.hyperfine[k]
        a_perp = np.hypot(ax, ay)
        if a_perp == 0:
            warnings.warn(f"spin {k} has no transverse hyperfine coupling and is dropped from B", stacklevel=2)
            continue
        xi = np.arctan2(ay, ax)
        i_perp = np.cos(xi) * embed(SPIN_OPS[0], k, K) + np.sin(xi) * embed(SPIN_OPS[1], k, K)
        B += (2 / np.pi) * a_perp * i_perp
    C = delta_omega * sum(embed(SPIN_OPS[2], k, K) for k in range(K))
    return B, C


@dataclass(frozen=True, eq=False)
class LindbladSpec:
    """Jump operators acting on the target and their rates."""

    jumps: tuple = field(default_factory=tuple)

    def __post_init__(self):
        jumps = tuple((as_operator(op, "jump operator"), float(rate)) for op, rate in self.jumps)
        if any(rate < 0 for _, rate in jumps):
            raise ValueError("Lindblad rates must be non-negative")
        object.__setattr__(self, "jumps", jumps)


def lindblad_generator(h, jumps):
    """Row-stacked generator ``-i[H, .] + sum_k G_k (L . L^+ - {L^+ L, .}/2)``."""
    n = h.shape[0]
    eye = np.eye(n)
    gen = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for op, rate in jumps:
        if op.shape != h.shape:
            raise DimensionError("jump operator dimension does not match the Hamiltonian")
        ld = op.conj().T @ op
        gen += rate * (np.kron(op, op.conj()) - 0.5 * (np.kron(ld, eye) + np.kron(eye, ld.T)))
    return gen


def dissipative_rim_maps(spec, dissipation, phi2=0.0):
    """Outcome maps of a RIM cycle whose target also obeys a Lindblad equation.

    The ancilla-target state evolves under one exact exponential of the
    composite generator; the jumps act on the target factor only.
    """
    d = spec.dim
    jumps = []
    for op, rate in dissipation.jumps:
        if op.shape != (d, d):
            raise DimensionError(f"jump operator has shape {op.shape}, target dimension is {d}")
        jumps.append((np.kron(np.eye(2), op), rate))
    gen = lindblad_generator(spec.hamiltonian(), jumps)
    prop = matrix_exp(gen * spec.t)
    psi = rotation(spec.delta_phi + phi2, np.pi / 2) @ np.array([1, 0], dtype=complex)
    prep = np.kron(psi.reshape(2, 1), np.eye(d))  # (2d, d)
    prep_s = np.kron(prep, prep.conj())
    r2 = rotation(phi2, np.pi / 2)
    maps = []
    for alpha in range(2):
        k = np.kron(r2[alpha].reshape(1, 2), np.eye(d))  # (d, 2d)
        maps.append(np.kron(k, k.conj()) @ prop @ prep_s)
    return ConditionalMaps(tuple(maps))


def channel_of(maps):
    """Natural representation of the summed branches wrapped as a Kraus-less channel view."""
    return QuantumChannel((), maps.natural)
