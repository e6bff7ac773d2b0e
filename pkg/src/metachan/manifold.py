"""Fixed-point structure, extreme metastable states (EMS) and the metastable projector.

For a unital channel the fixed points are exactly the operators commuting with
every Kraus operator, which for the RIM channel is the commutant of ``{B, C}``.
A metastable manifold (MM) is described by its EMS ``rho_v`` and dual
observables ``P_v``; the channel in the metastable window acts approximately
as ``sum_v |rho_v>><<P_v|``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .channels import QuantumChannel, apply, validate_natural
from .hs_algebra import (
    DimensionError,
    as_operator,
    commutator,
    hermitian_part,
    is_hermitian,
)
from .spectral import NoMetastableRegion, real_modes

log = logging.getLogger(__name__)

FIXED_TOL = 1e-9
COMMUTE_TOL = 1e-8
KERNEL_TOL = 1e-9
DUAL_PSD_TOL = 1e-6
GENERIC_SEED = 20240611
GENERIC_RETRIES = 8


class ManifoldError(RuntimeError):
    """Inconsistent fixed-point or manifold data (e.g. a failed commutation check)."""


@dataclass(frozen=True, eq=False)
class FixedPointStructure:
    """Hermitian basis of a fixed-point space or commutant, with its minimal projections.

    ``basis`` holds HS-orthonormal Hermitian operators, except that elements with
    non-zero trace are rescaled to unit trace. ``transform`` is a unitary whose
    columns are grouped by projection.
    """

    basis: tuple
    projections: tuple = None
    block_partition: tuple = None
    transform: np.ndarray = None

    @property
    def dimension(self):
        return len(self.basis)

    @property
    def r(self):
        return None if self.projections is None else len(self.projections)

    def fixed_residual(self, natural):
        """Largest ``||Phi(rho) - rho||_max`` over the basis."""
        natural = natural.natural if isinstance(natural, QuantumChannel) else np.asarray(natural)
        return max(
            (float(np.max(np.abs(natural @ b.reshape(-1) - b.reshape(-1)))) for b in self.basis),
            default=0.0,
        )

    def commutation_residual(self, ops):
        """Largest ``||[rho, M]||_max`` over the basis and the operators ``ops``."""
        return max(
            (float(np.max(np.abs(commutator(b, m)))) for b in self.basis for m in ops),
            default=0.0,
        )

    def projection_residual(self):
        """Largest deviation from ``P^2 = P = P^dagger`` and ``sum P = I``."""
        if self.projections is None:
            return 0.0
        d = self.projections[0].shape[0]
        res = [float(np.max(np.abs(sum(self.projections) - np.eye(d))))]
        for p in self.projections:
            res.append(float(np.max(np.abs(p @ p - p))))
            res.append(float(np.max(np.abs(p - p.conj().T))))
        return max(res)


@dataclass(frozen=True, eq=False)
class MetastableManifold:
    """EMS ``rho_v`` with dual observables ``P_v`` (``<<P_v|rho_u>> = delta_vu``).

    ``h``, ``c2_max`` and ``c2_min`` are set by the single-qubit construction;
    ``approximate`` marks candidates obtained by propagating seed states.
    """

    ems: tuple
    duals: tuple
    h: float = None
    c2_max: float = None
    c2_min: float = None
    approximate: bool = False
    m_star: int = None
    eigenvalue: complex = None
    notes: tuple = field(default_factory=tuple)

    @property
    def dim(self):
        return self.ems[0].shape[0]

    def duality_matrix(self):
        return np.array([[np.vdot(p.reshape(-1), r.reshape(-1)) for r in self.ems] for p in self.duals])

    def duality_residual(self):
        g = self.duality_matrix()
        return float(np.max(np.abs(g - np.eye(len(self.ems)))))

    def dual_sum_residual(self):
        return float(np.max(np.abs(sum(self.duals) - np.eye(self.dim))))

    def min_dual_eigenvalue(self):
        return float(min(np.linalg.eigvalsh(hermitian_part(p)).min() for p in self.duals))

    def purities(self):
        return [float(np.trace(r @ r).real) for r in self.ems]

    def probabilities(self, rho):
        """Weights ``p_v = <<P_v|rho>>`` of a state on the manifold."""
        rho = as_operator(rho, "rho")
        return np.array([np.vdot(p.reshape(-1), rho.reshape(-1)).real for p in self.duals])

    def violations(self, duality_tol=1e-6, sum_tol=1e-8, psd_tol=DUAL_PSD_TOL):
        """Names of manifold invariants that do not hold."""
        out = []
        if self.duality_residual() > duality_tol:
            out.append("duality")
        if self.dual_sum_residual() > sum_tol:
            out.append("dual_sum")
        if self.min_dual_eigenvalue() < -psd_tol:
            out.append("dual_positivity")
        return out

    def as_dict(self):
        def flat(a):
            return [[float(z.real), float(z.imag)] for z in np.asarray(a).reshape(-1)]

        return {
            "dim": self.dim,
            "approximate": self.approximate,
            "m_star": self.m_star,
            "h": self.h,
            "c2_max": self.c2_max,
            "c2_min": self.c2_min,
            "ems": [flat(r) for r in self.ems],
            "duals": [flat(p) for p in self.duals],
            "purity": self.purities(),
            "duality_residual": self.duality_residual(),
            "dual_sum_residual": self.dual_sum_residual(),
            "min_dual_eigenvalue": self.min_dual_eigenvalue(),
            "violations": self.violations(),
            "notes": list(self.notes),
        }


def _hermitian_orthonormal(mats, rank=None, tol=KERNEL_TOL):
    """HS-orthonormal Hermitian basis of the real span of ``H + H^dagger`` and ``i(H - H^dagger)``."""
    rows = []
    for m in mats:
        rows.append(hermitian_part(m))
        rows.append(hermitian_part(1j * m))
    if not rows:
        return []
    d = rows[0].shape[0]
    real = np.array([np.concatenate([r.real.reshape(-1), r.imag.reshape(-1)]) for r in rows])
    _, s, vt = np.linalg.svd(real, full_matrices=False)
    k = int(np.sum(s > tol * max(1.0, s[0]))) if rank is None else int(rank)
    out = []
    for v in vt[:k]:
        op = (v[: d * d] + 1j * v[d * d :]).reshape(d, d)
        out.append(hermitian_part(op))
    return out


def _identity_first(basis):
    """Rotate a Hermitian basis containing the identity so that ``I/sqrt(d)`` comes first."""
    d = basis[0].shape[0]
    e = np.eye(d) / np.sqrt(d)
    coef = np.array([np.vdot(b.reshape(-1), e.reshape(-1)).real for b in basis])
    if abs(np.linalg.norm(coef) - 1.0) > 1e-8:
        return basis
    rest = [b - np.vdot(e.reshape(-1), b.reshape(-1)).real * e for b in basis]
    return [e.astype(complex)] + _hermitian_orthonormal(rest, rank=len(basis) - 1)


def _normalize_traces(basis):
    out = []
    for b in basis:
        tr = np.trace(b).real
        out.append(b / tr if tr > 1e-8 else b)
    return out


def _minimal_projections(basis, seed=GENERIC_SEED, retries=GENERIC_RETRIES):
    """Eigenprojections of a generic Hermitian element of an operator algebra."""
    d = basis[0].shape[0]
    last = None
    for attempt in range(retries):
        rng = np.random.default_rng([seed, attempt])
        x = sum(c * b for c, b in zip(rng.standard_normal(len(basis)), basis))
        w, v = np.linalg.eigh(hermitian_part(x))
        scale = max(1.0, float(np.max(np.abs(w))))
        groups = [[0]]
        for i in range(1, d):
            if w[i] - w[groups[-1][-1]] <= 1e-8 * scale:
                groups[-1].append(i)
            else:
                groups.append([i])
        gaps = [w[g[0]] - w[p[-1]] for p, g in zip(groups, groups[1:])]
        last = (groups, v)
        if not gaps or min(gaps) > 1e-4 * scale:
            break
        log.debug("generic commutant element nearly degenerate (attempt %d); retrying", attempt)
    groups, v = last
    projections = tuple(v[:, g] @ v[:, g].conj().T for g in groups)
    return projections, tuple(len(g) for g in groups), v


def commutant_projections(B, C, seed=GENERIC_SEED):
    """Commutant of ``{B, C}`` from the joint kernel of the two commutator maps.

    Returns the Hermitian kernel basis, the minimal projections extracted from
    a generic (fixed-seed) element and their block sizes.
    """
    B = as_operator(B, "B")
    C = as_operator(C, "C")
    if B.shape != C.shape:
        raise DimensionError("B and C must have equal dimensions")
    if not (is_hermitian(B) and is_hermitian(C)):
        raise ValueError("B and C must be Hermitian")
    d = B.shape[0]
    eye = np.eye(d)
    # row-stacked vec: X A -> kron(I, A^T), A X -> kron(A, I)
    system = np.vstack([np.kron(eye, a.T) - np.kron(a, eye) for a in (B, C)])
    _, s, vh = np.linalg.svd(system)
    scale = max(1.0, s[0])
    kdim = int(np.sum(s <= KERNEL_TOL * scale)) + (d * d - s.size)
    kernel = [row.conj().reshape(d, d) for row in vh[d * d - kdim :]]
    basis = _hermitian_orthonormal(kernel)
    if len(basis) != kdim:
        raise ManifoldError(f"commutant kernel has dimension {kdim} but its Hermitian span has {len(basis)}")
    res = max(max(np.max(np.abs(commutator(x, B))), np.max(np.abs(commutator(x, C)))) for x in basis)
    if res > COMMUTE_TOL * scale:
        raise ManifoldError(f"commutant basis fails the commutation check (residual {res:.3e})")
    basis = _identity_first(basis)
    projections, blocks, w = _minimal_projections(basis, seed)
    return FixedPointStructure(tuple(basis), projections, blocks, w)


def fixed_point_space(sd, ch, tol=FIXED_TOL, kraus=None):
    """Hermitian basis of the eigenvalue-1 space of a unital channel.

    Every element is checked to commute with every Kraus operator; a failure
    signals non-unital input or a misclassified spectrum.
    """
    natural = ch.natural if isinstance(ch, QuantumChannel) else np.asarray(ch)
    ops = kraus if kraus is not None else (ch.kraus if isinstance(ch, QuantumChannel) else ())
    report = validate_natural(natural)
    if not report.unital:
        raise ValueError(f"channel is not unital (residual {report.unital_residual:.3e})")
    idx = [i for i, lam in enumerate(sd.eigenvalues) if abs(lam - 1.0) <= tol]
    if not idx:
        raise ManifoldError("a unital channel must have a fixed point")
    basis = _hermitian_orthonormal([sd.right_op(i) for i in idx], rank=len(idx))
    basis = _normalize_traces(_identity_first(basis))
    fps = FixedPointStructure(tuple(basis))
    res = fps.fixed_residual(natural)
    if res > COMMUTE_TOL:
        raise ManifoldError(f"fixed-point basis is not invariant (residual {res:.3e})")
    if ops:
        res = fps.commutation_residual(ops)
        if res > COMMUTE_TOL:
            raise ManifoldError(f"fixed point fails to commute with a Kraus operator (residual {res:.3e})")
    unit = [b / np.linalg.norm(b) for b in basis]
    projections, blocks, w = _minimal_projections(unit)
    return FixedPointStructure(tuple(basis), projections, blocks, w)


def ems_from_modes(R2, L2, eigenvalue=None, R1=None):
    """Single-qubit EMS and duals from the metastable right/left eigenoperators.

    With ``h = sqrt(<<L2|L2>><<R2|R2>>)`` and ``c^M, c^m`` the extreme
    eigenvalues of ``L2``: ``rho = R1 + (c/h) R2``, ``P1 = (h L2 - c^m I)/dc``,
    ``P2 = (c^M I - h L2)/dc``. ``R1`` is the unit-trace fixed point and
    defaults to ``I/2``.
    """
    R1 = np.eye(2) / 2 if R1 is None else hermitian_part(as_operator(R1, "R1"))
    R2 = as_operator(R2, "R2")
    L2 = as_operator(L2, "L2")
    if R2.shape != (2, 2) or L2.shape != (2, 2):
        raise DimensionError("the closed-form EMS construction is for a single qubit")
    if not (is_hermitian(R2, 1e-8 * max(1, np.abs(R2).max())) and is_hermitian(L2, 1e-8 * max(1, np.abs(L2).max()))):
        raise ValueError("R2 and L2 must be Hermitian (real metastable eigenvalue)")
    R2 = hermitian_part(R2)
    L2 = hermitian_part(L2)
    h = float(np.sqrt(np.vdot(L2, L2).real * np.vdot(R2, R2).real))
    w = np.linalg.eigvalsh(L2)
    c_min, c_max = float(w[0]), float(w[-1])
    dc = c_max - c_min
    if dc <= 1e-12 * max(1.0, abs(c_max)):
        raise ManifoldError("degenerate L2 spectrum (c2_max == c2_min)")
    eye = np.eye(2)
    ems = (R1 + (c_max / h) * R2, R1 + (c_min / h) * R2)
    duals = ((h * L2 - c_min * eye) / dc, (c_max * eye - h * L2) / dc)
    mm = MetastableManifold(ems, duals, h, c_max, c_min, eigenvalue=eigenvalue)
    bad = mm.violations()
    if bad:
        log.warning("single-qubit manifold violates %s (h=%.6g, min dual eigenvalue %.3e)", bad, h, mm.min_dual_eigenvalue())
        mm = MetastableManifold(ems, duals, h, c_max, c_min, eigenvalue=eigenvalue, notes=tuple(bad))
    return mm


def ems_qubit(sd, eps_unit=FIXED_TOL):
    """Exact EMS of a single-qubit channel with one fixed point and a real metastable eigenvalue."""
    if sd.dim != 2:
        raise DimensionError("ems_qubit requires a single-qubit channel")
    w = sd.eigenvalues
    if abs(w[0] - 1.0) > eps_unit or abs(w[1] - 1.0) <= eps_unit:
        raise ManifoldError("ems_qubit requires exactly one fixed point")
    if abs(w[1].imag) > 1e-10:
        raise ManifoldError(f"metastable eigenvalue {w[1]} is complex")
    r1 = sd.right_op(0)
    return ems_from_modes(sd.right_op(1), sd.left_op(1), complex(w[1]), r1 / np.trace(r1))


def ems_candidates(ch, region, seeds):
    """Seeds propagated to the window midpoint ``m* = round(sqrt(mu' mu''))``."""
    if region is None:
        raise NoMetastableRegion("EMS candidates need a metastable region")
    m_star = region.midpoint
    return [apply(ch, s, m_star) for s in seeds]


def b_eigenprojectors(B):
    """Rank-one eigenprojectors of ``B`` in ascending eigenvalue order."""
    _, v = np.linalg.eigh(hermitian_part(as_operator(B, "B")))
    return [np.outer(v[:, j], v[:, j].conj()) for j in range(v.shape[1])]


def approximate_manifold(sd, ch, region, seeds):
    """Manifold from midpoint-propagated seeds with duals in the span of the leading left modes.

    The candidates are projected onto the first ``l`` right eigenoperators and
    the duals are the unique combinations of the first ``l`` left
    eigenoperators with ``<<P_v|rho_u>> = delta_vu``; ``len(seeds)`` must equal
    ``l``. The result is flagged approximate.
    """
    if region is None:
        raise NoMetastableRegion("approximate manifold needs a metastable region")
    l = region.l
    if len(seeds) != l:
        raise ValueError(f"need exactly l={l} seeds, got {len(seeds)}")
    cands = ems_candidates(ch, region, seeds)
    d = sd.dim
    R = sd.right[:, :l]
    L = sd.left[:, :l]
    coef = np.array([L.conj().T @ c.reshape(-1) for c in cands])  # (v, i)
    ems = tuple(hermitian_part((R @ c).reshape(d, d)) for c in coef)
    try:
        b = np.linalg.inv(coef.T)
    except np.linalg.LinAlgError as exc:
        raise ManifoldError("candidates are linearly dependent in the metastable modes") from exc
    duals = tuple(hermitian_part((L @ b[v].conj()).reshape(d, d)) for v in range(l))
    return MetastableManifold(ems, duals, approximate=True, m_star=region.midpoint)


def mm_projector(mm):
    """Superoperator ``sum_v |rho_v>><<P_v|`` on row-stacked vectors."""
    return sum(np.outer(r.reshape(-1), p.reshape(-1).conj()) for r, p in zip(mm.ems, mm.duals))


def metastable_coefficients(sd, rho, l):
    """Real coefficients of the first ``l`` modes.

    Real eigenvalues give ``Tr(L_j^dagger rho)``; conjugate pairs give the two
    real coefficients of the Hermitian combinations. ``l`` may not split a pair.
    """
    l = int(l)
    if not 1 <= l <= len(sd):
        raise IndexError(f"l={l} outside 1..{len(sd)}")
    rho = as_operator(rho, "rho")
    if abs(np.trace(rho) - 1.0) > 1e-8:
        raise ValueError("rho must have unit trace")
    return real_modes(sd, range(l)).coefficients(rho, 0, include_decay=False)
