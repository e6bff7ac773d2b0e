"""Estimator-style front end: fit on a channel, transform states into metastable coordinates."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .channels import QuantumChannel, validate_natural
from .hs_algebra import DimensionError, hermitian_part
from .manifold import approximate_manifold, ems_qubit, metastable_coefficients, mm_projector
from .models import ConditionalMaps
from .spectral import (
    AUTO_L_MIN_MODULUS,
    EPS_UNIT,
    NoMetastableRegion,
    classify_spectrum,
    spectral_decompose,
)


def check_superoperator(X, tol=1e-10, require_cptp=True):
    """Natural representation from a channel, branch maps or a raw ``(d^2, d^2)`` array."""
    if isinstance(X, QuantumChannel):
        natural = np.asarray(X.natural)
    elif isinstance(X, ConditionalMaps):
        natural = np.asarray(X.natural)
    else:
        natural = np.asarray(X, dtype=complex)
    if natural.ndim != 2 or natural.shape[0] != natural.shape[1]:
        raise DimensionError(f"expected a square superoperator, got shape {natural.shape}")
    d = int(round(np.sqrt(natural.shape[0])))
    if d * d != natural.shape[0]:
        raise DimensionError(f"superoperator size {natural.shape[0]} is not a square number")
    if not np.all(np.isfinite(natural)):
        raise ValueError("superoperator has non-finite entries")
    if require_cptp:
        report = validate_natural(natural, tol)
        if not report.ok:
            raise ValueError(f"input is not a valid channel: {', '.join(report.failures())}")
    return natural


def check_states(X, d, tol=1e-8):
    """Stack of ``d x d`` unit-trace Hermitian operators with shape ``(n, d, d)``."""
    X = np.asarray(X, dtype=complex)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (d, d):
        raise DimensionError(f"expected states of shape (n, {d}, {d}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("states have non-finite entries")
    if np.max(np.abs(X - np.conj(np.swapaxes(X, 1, 2))), initial=0.0) > tol:
        raise ValueError("states must be Hermitian")
    traces = np.trace(X, axis1=1, axis2=2).real
    if np.max(np.abs(traces - 1.0), initial=0.0) > tol:
        raise ValueError("states must have unit trace")
    return hermitian_part(X)


class MetastabilityAnalyzer(TransformerMixin, BaseEstimator):
    """Spectral metastability analysis of a sequential channel.

    ``fit`` decomposes the channel and locates the metastable window;
    ``transform`` maps states to the real coefficients of the first ``l``
    modes (``output="coefficients"``) or to EMS weights ``<<P_v|rho>>``
    (``output="weights"``); ``predict`` returns the EMS with the largest weight.

    Parameters
    ----------
    l : int, optional
        Truncation index; chosen by the largest gap ratio when omitted.
    eps_unit : float
        Tolerance for unit-modulus eigenvalues.
    min_modulus : float
        Smallest ``|lam_l|`` considered by the automatic choice of ``l``.
    output : {"coefficients", "weights"}
    seeds : list of arrays, optional
        Seed states for the approximate manifold when ``d > 2``.
    """

    def __init__(self, l=None, eps_unit=EPS_UNIT, min_modulus=AUTO_L_MIN_MODULUS, output="coefficients", seeds=None):
        self.l = l
        self.eps_unit = eps_unit
        self.min_modulus = min_modulus
        self.output = output
        self.seeds = seeds

    def fit(self, X, y=None):
        natural = check_superoperator(X)
        self.natural_ = natural
        self.dim_ = int(round(np.sqrt(natural.shape[0])))
        self.spectral_ = spectral_decompose(natural)
        self.classes_, self.region_ = classify_spectrum(self.spectral_, self.eps_unit, self.l, self.min_modulus)
        self.manifold_ = self._manifold()
        return self

    def _manifold(self):
        if self.region_ is None:
            return None
        if self.dim_ == 2 and self.region_.l == 2:
            return ems_qubit(self.spectral_)
        if self.seeds is not None and len(self.seeds) == self.region_.l:
            return approximate_manifold(self.spectral_, self.natural_, self.region_, self.seeds)
        return None

    def transform(self, X):
        check_is_fitted(self, "spectral_")
        states = check_states(X, self.dim_)
        if self.output == "coefficients":
            if self.region_ is None:
                raise NoMetastableRegion("no metastable region; set l explicitly")
            return np.array([metastable_coefficients(self.spectral_, s, self.region_.l) for s in states])
        if self.output == "weights":
            if self.manifold_ is None:
                raise NoMetastableRegion("no metastable manifold available for EMS weights")
            return np.array([self.manifold_.probabilities(s) for s in states])
        raise ValueError(f"unknown output {self.output!r}")

    def predict(self, X):
        check_is_fitted(self, "spectral_")
        if self.manifold_ is None:
            raise NoMetastableRegion("no metastable manifold available")
        states = check_states(X, self.dim_)
        return np.array([int(np.argmax(self.manifold_.probabilities(s))) for s in states])

    def projector(self):
        """Metastable projector ``sum_v |rho_v>><<P_v|`` of the fitted manifold."""
        check_is_fitted(self, "manifold_")
        if self.manifold_ is None:
            raise NoMetastableRegion("no metastable manifold available")
        return mm_projector(self.manifold_)
