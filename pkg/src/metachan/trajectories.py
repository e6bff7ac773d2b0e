"""Monte Carlo unraveling of sequential two-outcome channels into measurement records.

Trajectories are propagated in blocks of fixed size in a real coordinate
system (an orthonormal Hermitian operator basis), so states stay Hermitian and
each update is one small real matrix product. Every trajectory draws its
uniforms from its own Philox stream keyed by ``(master_seed, index)``; the
block partition does not depend on the worker count, which makes results
bit-identical for any number of threads.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks as _scipy_find_peaks

from .channels import QuantumChannel
from .hs_algebra import as_operator, check_state, hermitian_basis, hermitian_part

log = logging.getLogger(__name__)

BLOCK_SIZE = 2048
CHUNK = 1024  # uniforms drawn per generator call; multiple of 8 for bit packing
PROB_SUM_TOL = 1e-8
PROB_CLAMP_TOL = 1e-12
DEFAULT_STEP_BUDGET = 2_000_000_000
DEFAULT_BINS = 81
DEFAULT_THRESHOLDS = (-0.5, -0.15, 0.15, 0.5)
PEAK_FRACTION = 0.05


class InvalidMapsError(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Observable:
    """Quantity recorded at checkpoints: ``Tr(O rho)`` or the fidelity to a pure state."""

    name: str
    operator: np.ndarray
    kind: str = "expect"

    @classmethod
    def expectation(cls, name, op):
        return cls(name, hermitian_part(as_operator(op, name)), "expect")

    @classmethod
    def fidelity(cls, name, state):
        """Fidelity ``sqrt(<i|rho|i>)`` to a pure state given as a vector or projector."""
        state = np.asarray(state, dtype=complex)
        proj = np.outer(state, state.conj()) if state.ndim == 1 else as_operator(state, name)
        proj = proj / np.trace(proj).real
        return cls(name, hermitian_part(proj), "fidelity")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    outcomes: np.ndarray
    polarization: float
    observables: dict
    final_state: np.ndarray
    checkpoints: np.ndarray
    zeros: np.ndarray

    @property
    def m(self):
        return int(self.checkpoints[-1])


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Per-trajectory outcome counts and observables at each checkpoint.

    ``zeros[i, k]`` is the number of 0 outcomes of trajectory ``i`` in the
    first ``checkpoints[k]`` rounds; ``observables[name][i, k]`` the value of
    an observable at that round.
    """

    checkpoints: np.ndarray
    zeros: np.ndarray
    observables: dict
    mean_states: list
    final_states: np.ndarray
    rng_seed: int
    params: dict = field(default_factory=dict)
    outcomes_packed: np.ndarray = None

    @property
    def n_samples(self):
        return self.zeros.shape[0]

    @property
    def m(self):
        return int(self.checkpoints[-1])

    def checkpoint_index(self, m):
        idx = np.flatnonzero(self.checkpoints == int(m))
        if idx.size == 0:
            raise KeyError(f"round {m} is not a recorded checkpoint")
        return int(idx[0])

    def zeros_at(self, m):
        if int(m) == 0:
            return np.zeros(self.n_samples, dtype=np.int64)
        if self.outcomes_packed is not None and int(m) not in set(self.checkpoints.tolist()):
            bits = self.outcomes(slice(0, int(m)))
            return (bits == 0).sum(axis=1)
        return self.zeros[:, self.checkpoint_index(m)]

    def polarization(self, m=None, window=None):
        """Measurement polarization ``(m0 - m1) / (2 m)`` over rounds ``(start, end]``."""
        if window is None:
            start, end = 0, self.m if m is None else int(m)
        else:
            start, end = (int(x) for x in window)
        if end <= start:
            raise ValueError(f"empty window ({start}, {end}]")
        n = end - start
        m0 = self.zeros_at(end) - self.zeros_at(start)
        return (2 * m0 - n) / (2 * n)

    def outcomes(self, rounds=slice(None)):
        if self.outcomes_packed is None:
            raise ValueError("outcomes were not stored; run with store_outcomes=True")
        bits = np.unpackbits(self.outcomes_packed, axis=1, count=self.m)
        return bits[:, rounds]

    @property
    def records(self):
        return [self.record(i) for i in range(self.n_samples)]

    def record(self, i):
        outcomes = None if self.outcomes_packed is None else self.outcomes()[i]
        return TrajectoryRecord(
            outcomes=outcomes,
            polarization=float(self.polarization()[i]),
            observables={k: v[i] for k, v in self.observables.items()},
            final_state=self.final_states[i],
            checkpoints=self.checkpoints,
            zeros=self.zeros[i],
        )


def trajectory_rng(master_seed, index):
    """Independent counter-based stream for trajectory ``index``."""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(seq))


class _RealModel:
    """Conditional maps and observables in an orthonormal Hermitian coordinate system."""

    def __init__(self, maps, rho0, observables):
        pair = tuple(maps.maps if hasattr(maps, "maps") else maps)
        if len(pair) != 2:
            raise InvalidMapsError(f"two outcome maps are required, got {len(pair)}")
        e0, e1 = pair
        e0 = np.asarray(e0, dtype=complex)
        e1 = np.asarray(e1, dtype=complex)
        n = e0.shape[0]
        d = int(round(np.sqrt(n)))
        basis = hermitian_basis(d)
        gv = basis.reshape(n, n).T  # columns: row-stacked basis elements
        self.d = d
        self.basis = basis
        self.sqrt_d = np.sqrt(d)
        stacked = []
        for e in (e0, e1):
            s = gv.conj().T @ e @ gv
            if np.max(np.abs(s.imag)) > 1e-9:
                raise InvalidMapsError("conditional map does not preserve Hermiticity")
            stacked.append(s.real)
        self.step_matrix = np.ascontiguousarray(np.vstack(stacked).T)  # (n, 2n)
        self.n = n
        rho0 = check_state(rho0, name="rho0")
        if rho0.shape[0] != d:
            raise InvalidMapsError(f"initial state has dimension {rho0.shape[0]}, maps act on {d}")
        self.x0 = self.coords(rho0)
        self.observables = list(observables)
        if self.observables:
            self.obs_matrix = np.array([self.coords(o.operator) for o in self.observables]).T
        else:
            self.obs_matrix = np.zeros((n, 0))
        self.fid_mask = np.array([o.kind == "fidelity" for o in self.observables], dtype=bool)

    def coords(self, op):
        return np.einsum("kji,ij->k", self.basis, op).real

    def operator(self, x):
        return np.einsum("k,kij->ij", x, self.basis)

    def measure(self, x):
        vals = x @ self.obs_matrix
        if self.fid_mask.any():
            vals[..., self.fid_mask] = np.sqrt(np.clip(vals[..., self.fid_mask], 0.0, None))
        return vals


def _run_block(model, gens, m, checkpoints, store_outcomes):
    b = len(gens)
    n = model.n
    x = np.tile(model.x0, (b, 1))
    zeros = np.zeros(b, dtype=np.int64)
    ck_zeros = np.zeros((b, len(checkpoints)), dtype=np.int64)
    ck_obs = np.zeros((b, len(checkpoints), len(model.observables)))
    ck_sum = np.zeros((len(checkpoints), n))
    packed = [] if store_outcomes else None
    ck_pos = {c: k for k, c in enumerate(checkpoints)}
    step_matrix = model.step_matrix
    sqrt_d = model.sqrt_d
    step = 0
    while step < m:
        size = min(CHUNK, m - step)
        u = np.stack([g.random(size) for g in gens])
        bits = np.empty((b, size), dtype=np.uint8) if store_outcomes else None
        for s in range(size):
            y = x @ step_matrix
            y0 = y[:, :n]
            y1 = y[:, n:]
            p0 = y0[:, 0] * sqrt_d
            p1 = y1[:, 0] * sqrt_d
            total = p0 + p1
            if np.max(np.abs(total - 1.0)) > PROB_SUM_TOL:
                raise InvalidMapsError(f"branch probabilities sum to {total[np.argmax(np.abs(total - 1))]:.12g}")
            if min(p0.min(), p1.min()) < -PROB_CLAMP_TOL:
                raise InvalidMapsError("negative branch probability")
            q0 = np.clip(p0, 0.0, 1.0)
            q0 = q0 / (q0 + np.clip(p1, 0.0, 1.0))
            one = u[:, s] >= q0
            with np.errstate(divide="ignore", invalid="ignore"):
                x = np.where(one[:, None], y1 / p1[:, None], y0 / p0[:, None])
            zeros += ~one
            if store_outcomes:
                bits[:, s] = one
            step += 1
            k = ck_pos.get(step)
            if k is not None:
                ck_zeros[:, k] = zeros
                if model.observables:
                    ck_obs[:, k, :] = model.measure(x)
                ck_sum[k] = x.sum(axis=0)
        if store_outcomes:
            packed.append(bits)
    if store_outcomes:
        packed = np.packbits(np.concatenate(packed, axis=1), axis=1)
    return ck_zeros, ck_obs, ck_sum, x, packed


def _normalize_checkpoints(checkpoints, m):
    cks = sorted({int(c) for c in (checkpoints or [])} | {int(m)})
    if cks[0] < 1 or cks[-1] > m:
        raise ValueError(f"checkpoints must lie in 1..{m}")
    return np.array(cks, dtype=np.int64)


def sample_trajectory(maps, rho0, m, rng, checkpoints=None, observables=()):
    """Sample one measurement record of ``m`` rounds with generator ``rng``."""
    m = int(m)
    if m < 1:
        raise ValueError("m must be at least 1")
    model = _RealModel(maps, rho0, observables)
    cks = _normalize_checkpoints(checkpoints, m)
    ck_zeros, ck_obs, _, x, packed = _run_block(model, [rng], m, cks.tolist(), True)
    zeros = ck_zeros[0]
    return TrajectoryRecord(
        outcomes=np.unpackbits(packed[0], count=m),
        polarization=float((2 * zeros[-1] - m) / (2 * m)),
        observables={o.name: ck_obs[0, :, j] for j, o in enumerate(model.observables)},
        final_state=hermitian_part(model.operator(x[0])),
        checkpoints=cks,
        zeros=zeros,
    )


def run_ensemble(
    maps,
    rho0,
    m_max,
    n_samples,
    checkpoints=None,
    master_seed=0,
    observables=(),
    threads=1,
    store_outcomes=False,
    step_budget=DEFAULT_STEP_BUDGET,
    params=None,
):
    """Run ``n_samples`` independent trajectories of ``m_max`` rounds."""
    m_max = int(m_max)
    n_samples = int(n_samples)
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if m_max < 1:
        raise ValueError("m_max must be at least 1")
    if n_samples * m_max > step_budget:
        raise BudgetExceeded(f"{n_samples} x {m_max} trajectory steps exceed the budget of {step_budget}")
    model = _RealModel(maps, rho0, observables)
    cks = _normalize_checkpoints(checkpoints, m_max)
    starts = list(range(0, n_samples, BLOCK_SIZE))

    def work(start):
        stop = min(start + BLOCK_SIZE, n_samples)
        gens = [trajectory_rng(master_seed, i) for i in range(start, stop)]
        return _run_block(model, gens, m_max, cks.tolist(), store_outcomes)

    threads = max(1, int(threads))
    log.debug("running %d trajectories x %d rounds in %d blocks on %d threads", n_samples, m_max, len(starts), threads)
    if threads == 1 or len(starts) == 1:
        parts = [work(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))

    zeros = np.concatenate([p[0] for p in parts])
    obs = np.concatenate([p[1] for p in parts])
    total = np.zeros_like(parts[0][2])
    for p in parts:
        total = total + p[2]
    mean_states = [hermitian_part(model.operator(v / n_samples)) for v in total]
    x_final = np.concatenate([p[3] for p in parts])
    final_states = hermitian_part(np.einsum("nk,kij->nij", x_final, model.basis))
    packed = np.concatenate([p[4] for p in parts]) if store_outcomes else None
    return EnsembleResult(
        checkpoints=cks,
        zeros=zeros,
        observables={o.name: obs[:, :, j] for j, o in enumerate(model.observables)},
        mean_states=mean_states,
        final_states=final_states,
        rng_seed=int(master_seed),
        params=dict(params or {}),
        outcomes_packed=packed,
    )


def branch_sum(maps, rho0, m):
    """Sum of all ``2^m`` unnormalized outcome branches, enumerated one by one.

    Returns ``(state, min_branch_completeness)``; the state equals the
    channel applied ``m`` times when the unraveling is consistent.
    """
    m = int(m)
    if m > 16:
        raise ValueError("exhaustive enumeration is limited to m <= 16")
    e = [np.asarray(x, dtype=complex) for x in (maps.maps if hasattr(maps, "maps") else maps)]
    rho0 = as_operator(rho0, "rho0")
    d = rho0.shape[0]
    v0 = rho0.reshape(-1)
    total = np.zeros_like(v0)
    worst = 0.0
    for seq in itertools.product((0, 1), repeat=m):
        v = v0
        for a in seq:
            v = e[a] @ v
        total = total + v
    # completeness of every visited (normalized) state along the all-branch tree
    frontier = [v0]
    for _ in range(m):
        nxt = []
        for v in frontier:
            tr = np.trace(v.reshape(d, d)).real
            if tr <= 1e-300:
                continue
            w = v / tr
            probs = [np.trace((ek @ w).reshape(d, d)).real for ek in e]
            worst = max(worst, abs(sum(probs) - 1.0))
            nxt.extend(ek @ w * tr for ek in e)
        frontier = nxt
    return hermitian_part(total.reshape(d, d)), worst


@dataclass(frozen=True)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    m: int
    window: tuple = None
    sums: np.ndarray = None  # per-bin sum of X, for peak locations

    @property
    def centers(self):
        return (self.bin_edges[:-1] + self.bin_edges[1:]) / 2


def default_bins(rounds, bins=DEFAULT_BINS):
    """``bins`` capped at ``rounds + 1`` so each bin holds at most one attainable X value."""
    return max(2, min(int(bins), int(rounds) + 1))


def polarization_histogram(ens, bins=None, window=None, m=None):
    """Histogram of the measurement polarization over ``[-1/2, 1/2]``.

    ``window=(start, end)`` restricts X to rounds ``start+1 .. end``; ``m``
    evaluates the full record up to a checkpoint. With ``bins=None`` the
    default 81 bins are capped at the number of attainable X values.
    """
    if window is None:
        end = ens.m if m is None else int(m)
        window_t = (0, end)
    else:
        window_t = tuple(int(x) for x in window)
    start, end = window_t
    if end <= start:
        raise ValueError(f"empty window ({start}, {end}]")
    x = ens.polarization(window=window_t)
    nbins = default_bins(end - start) if bins is None else int(bins)
    if nbins < 2:
        raise ValueError("at least 2 bins are required")
    counts, edges = np.histogram(x, bins=nbins, range=(-0.5, 0.5))
    sums, _ = np.histogram(x, bins=edges, weights=x)
    return Histogram(edges, counts, end - start, window_t if window is not None else None, sums)


def find_peaks(hist, fraction=PEAK_FRACTION):
    """Peaks of a polarization histogram.

    Local maxima of the 3-bin moving average whose prominence is at least
    ``fraction`` of the total count. Returns ``(locations, smoothed_heights)``;
    a location is the mean X of the samples in the three bins that were
    averaged (the bin center when per-bin sums are unavailable).
    """
    counts = np.asarray(hist.counts, dtype=float)
    kernel = np.ones(3)
    smooth = np.convolve(counts, kernel / 3, mode="same")
    padded = np.concatenate([[0.0], smooth, [0.0]])
    idx, _ = _scipy_find_peaks(padded, prominence=fraction * counts.sum())
    idx = idx - 1
    if hist.sums is None:
        return hist.centers[idx], smooth[idx]
    local_n = np.convolve(counts, kernel, mode="same")[idx]
    local_x = np.convolve(np.asarray(hist.sums, dtype=float), kernel, mode="same")[idx]
    return local_x / local_n, smooth[idx]


def parse_thresholds(thresholds):
    """Validate class boundaries; accepts a boundary list or ``(lo, hi)`` pairs."""
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLDS
    thresholds = list(thresholds)
    if thresholds and np.ndim(thresholds[0]) == 1:
        pairs = sorted((float(lo), float(hi)) for lo, hi in thresholds)
        for (a_lo, a_hi), (b_lo, b_hi) in zip(pairs, pairs[1:]):
            if b_lo < a_hi:
                raise ValueError("class intervals overlap")
            if b_lo > a_hi:
                raise ValueError("class intervals leave a gap")
        thresholds = [pairs[0][0]] + [hi for _, hi in pairs]
    b = np.array(thresholds, dtype=float)
    if b.size < 2 or np.any(np.diff(b) <= 0):
        raise ValueError("class boundaries must be strictly increasing (overlapping intervals)")
    if abs(b[0] + 0.5) > 1e-12 or abs(b[-1] - 0.5) > 1e-12:
        raise ValueError("class intervals must partition [-1/2, 1/2]")
    return b


def assign_classes(x, boundaries):
    """Class index per X; a value on an inner boundary joins the class nearer X = 0."""
    x = np.asarray(x, dtype=float)
    inner = boundaries[1:-1]
    idx = np.zeros(x.shape, dtype=int)
    for b in inner:
        idx += (x > b) | ((x == b) & (b < 0))
    return idx


@dataclass(frozen=True)
class ClassCurves:
    rounds: np.ndarray
    boundaries: np.ndarray
    observable: str
    means: np.ndarray  # (n_classes, n_rounds), NaN for empty classes
    populations: np.ndarray  # (n_classes, n_rounds)

    def labels(self):
        b = self.boundaries
        return [f"[{b[i]:g},{b[i + 1]:g}]" for i in range(len(b) - 1)]


def classify_and_average(ens, thresholds=None, observable=None, rounds=None):
    """Per-class mean of an observable versus round.

    At each checkpoint trajectories are classified by the polarization of
    their record so far.
    """
    b = parse_thresholds(thresholds)
    if observable is None:
        if len(ens.observables) != 1:
            raise ValueError("observable name required")
        observable = next(iter(ens.observables))
    values = ens.observables[observable]
    rounds = ens.checkpoints if rounds is None else np.asarray(rounds, dtype=np.int64)
    ncls = len(b) - 1
    means = np.full((ncls, len(rounds)), np.nan)
    pops = np.zeros((ncls, len(rounds)), dtype=np.int64)
    for k, r in enumerate(rounds):
        col = ens.checkpoint_index(r)
        cls = assign_classes(ens.polarization(r), b)
        for c in range(ncls):
            sel = cls == c
            pops[c, k] = sel.sum()
            if pops[c, k]:
                means[c, k] = values[sel, col].mean()
    return ClassCurves(np.asarray(rounds), b, observable, means, pops)


def channel_power_state(natural, rho0, m):
    """Reference ``Phi^m(rho0)`` for checking ensemble means."""
    natural = natural.natural if isinstance(natural, QuantumChannel) else np.asarray(natural)
    v = np.asarray(rho0, dtype=complex).reshape(-1)
    for _ in range(int(m)):
        v = natural @ v
    d = int(round(np.sqrt(v.size)))
    return hermitian_part(v.reshape(d, d))
