import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_hermitian, random_state
from metachan.channels import apply, channel_from_kraus, identity_channel
from metachan.hs_algebra import PAULI_X, PAULI_Z, DimensionError, is_hermitian, trace_distance
from metachan.models import RimSpec, rim_channel
from metachan.spectral import (
    NotDiagonalizableError,
    classify_spectrum,
    propagate,
    real_modes,
    region_for,
    spectral_decompose,
)


def rotating_dephasing(r=0.99, theta=np.pi / 8):
    """Qubit channel with coherence eigenvalues ``r * exp(-+i theta)``."""
    rz = np.diag([np.exp(-1j * theta / 2), np.exp(1j * theta / 2)])
    k = [np.sqrt((1 + r) / 2) * rz, np.sqrt((1 - r) / 2) * PAULI_Z @ rz]
    return channel_from_kraus(k)


def test_identity_channel_spectrum():
    sd = spectral_decompose(identity_channel(3))
    assert np.allclose(sd.eigenvalues, 1)
    assert sd.diagonalizable
    assert sd.biorthonormality_residual() < 1e-12


def test_gamma_zero_eigenvalues():
    ch, _ = rim_channel(RimSpec(PAULI_Z, np.zeros((2, 2)), 0.0, np.pi / 2, 1.0))
    w = spectral_decompose(ch).eigenvalues
    assert np.max(np.abs(np.sort_complex(w) - np.sort_complex(np.array([1, 1, np.cos(2), np.cos(2)])))) < 1e-10


def test_gamma_small_single_fixed_point(qubit_channel):
    ch, _ = qubit_channel
    sd = spectral_decompose(ch)
    w = sd.eigenvalues
    assert abs(w[0] - 1) < 1e-12 and abs(w[1] - 1) > 1e-6
    assert abs(w[1].imag) < 1e-12 and abs(w[1]) < 1
    ref = np.linalg.eigvals(np.asarray(ch.natural))
    ref = ref[np.argsort(-np.abs(ref))]
    assert np.max(np.abs(np.abs(ref) - np.abs(w))) < 1e-10


def test_decompose_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        spectral_decompose(np.eye(3))
    with pytest.raises(DimensionError):
        spectral_decompose(np.zeros((4, 2)))


def test_jordan_block_is_flagged_not_fatal():
    phi = np.eye(4, dtype=complex)
    phi[1, 1] = phi[2, 2] = 0.5
    phi[1, 2] = 1.0
    sd = spectral_decompose(phi)
    assert not sd.diagonalizable
    with pytest.raises(NotDiagonalizableError):
        classify_spectrum(sd)
    with pytest.raises(NotDiagonalizableError):
        propagate(sd, np.eye(2) / 2, 3)


def test_classify_gamma_zero_has_no_region():
    ch, _ = rim_channel(RimSpec(PAULI_Z, np.zeros((2, 2)), 0.0, np.pi / 2, 1.0))
    classes, region = classify_spectrum(spectral_decompose(ch))
    assert [c.kind for c in classes] == ["fixed", "fixed", "decaying", "decaying"]
    assert region is None


def test_classify_gamma_small(qubit_channel):
    ch, _ = qubit_channel
    classes, region = classify_spectrum(spectral_decompose(ch))
    assert [c.kind for c in classes] == ["fixed", "metastable", "decaying", "decaying"]
    assert region.n == 1 and region.l == 2
    assert region.mu_prime / region.mu_double_prime > 100


def test_diagonal_superoperator_region():
    sd = spectral_decompose(np.diag([1, 0.999, 0.5, 0.1]).astype(complex))
    _, region = classify_spectrum(sd)
    assert region.l == 2 and region.n == 1
    assert region.mu_prime == pytest.approx(1 / abs(np.log(0.999)), rel=1e-12)
    assert region.mu_prime == pytest.approx(999.4998, abs=1e-3)
    assert region.mu_double_prime == pytest.approx(1.4427, abs=1e-4)
    assert region.gap_ratio == pytest.approx(692.8, abs=0.1)


def test_region_invariants_and_override():
    sd = spectral_decompose(np.diag([1, 0.999, 0.99, 0.1]).astype(complex))
    _, auto = classify_spectrum(sd)
    assert auto.l == 3
    classes, forced = classify_spectrum(sd, l=2)
    assert forced.l == 2 and [c.kind for c in classes] == ["fixed", "metastable", "decaying", "decaying"]
    for reg in (auto, forced):
        assert reg.mu_prime > reg.mu_double_prime and reg.gap_ratio > 1 and reg.l >= reg.n


def test_region_for_out_of_range():
    w = np.array([1, 0.9, 0.5, 0.1])
    with pytest.raises(ValueError):
        region_for(w, 1, 1, 1)
    with pytest.raises(ValueError):
        region_for(w, 1, 1, 4)


def test_rotating_classification():
    sd = spectral_decompose(rotating_dephasing(r=1.0))
    classes, _ = classify_spectrum(sd)
    kinds = sorted(c.kind for c in classes)
    assert kinds == ["fixed", "fixed", "rotating", "rotating"]
    phases = sorted(c.phase for c in classes if c.kind == "rotating")
    assert np.allclose(phases, [-np.pi / 8, np.pi / 8])


def test_propagate_examples(qubit_channel, rng):
    ch, _ = qubit_channel
    sd = spectral_decompose(ch)
    rho = random_state(rng, 2)
    assert np.max(np.abs(propagate(sd, rho, 0) - rho)) < 1e-10
    for m in (1, 10, 1000):
        assert np.allclose(propagate(sd, np.eye(2) / 2, m), np.eye(2) / 2, atol=1e-12)
    with pytest.raises(ValueError):
        propagate(sd, rho, 1, truncate_to=5)
    with pytest.raises(ValueError):
        propagate(sd, rho, -1)


def test_real_modes_all_real(qubit_channel):
    sd = spectral_decompose(qubit_channel[0])
    modes = real_modes(sd, [0, 1])
    assert len(modes.modes) == 2 and not any(m.is_pair for m in modes.modes)
    assert all(is_hermitian(op) for op in modes.operators())
    rho = np.diag([0.8, 0.2])
    assert np.allclose(modes.coefficients(rho, 0, include_decay=False), sd.coefficients(rho)[:2].real)


def test_real_modes_rotating_pair():
    sd = spectral_decompose(rotating_dephasing())
    pair = [i for i, lam in enumerate(sd.eigenvalues) if abs(lam.imag) > 1e-6]
    assert np.allclose(sorted(sd.eigenvalues[pair].imag), 0.99 * np.sin(np.pi / 8) * np.array([-1, 1]))
    modes = real_modes(sd, pair)
    assert modes.modes[0].is_pair
    assert all(is_hermitian(op, 1e-8) for op in modes.operators())
    # real-mode sum reproduces the complex two-term sum
    rho = np.array([[0.5, 0.3 - 0.1j], [0.3 + 0.1j, 0.5]])
    for m in (0, 3, 40):
        ref = sum(sd.coefficients(rho)[i] * sd.eigenvalues[i] ** m * sd.right_op(i) for i in pair)
        assert np.max(np.abs(modes.reconstruct(rho, m) - ref)) < 1e-12


def test_real_modes_unpaired_error():
    sd = spectral_decompose(rotating_dephasing())
    i = next(i for i, lam in enumerate(sd.eigenvalues) if abs(lam.imag) > 1e-6)
    with pytest.raises(ValueError):
        real_modes(sd, [i])


@given(st.sampled_from([2, 3, 4]), st.floats(0.01, 0.5), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_spectral_invariants(d, gamma, seed):
    rng = np.random.default_rng(seed)
    ch, _ = rim_channel(RimSpec(random_hermitian(rng, d), random_hermitian(rng, d), gamma, np.pi / 2, 1.0))
    sd = spectral_decompose(ch)
    w = sd.eigenvalues
    assert np.max(np.abs(w)) <= 1 + 1e-8
    assert np.all(np.diff(np.abs(w)) <= 1e-10)
    for lam in w[np.abs(w.imag) > 1e-8]:
        assert np.min(np.abs(w - np.conj(lam))) < 1e-10
    if not sd.diagonalizable:
        return
    assert sd.biorthonormality_residual() < 1e-8
    assert np.max(np.abs(sd.reconstruct() - ch.natural)) < 1e-8
    for j in np.flatnonzero(np.abs(w) < 1 - 1e-10):
        assert abs(np.trace(sd.right_op(j))) < 1e-8
    rho = random_state(rng, d)
    for m in (1, 5, 64):
        assert trace_distance(propagate(sd, rho, m), apply(ch, rho, m)) < 1e-8
