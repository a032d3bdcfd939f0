"""Synthetic measurement generation and sample covariances.

Snapshots follow ``Y = A(mu) Psi + N`` with circular complex Gaussian
source waveforms (covariance ``P``) and i.i.d. ``CN(0, noise_var)`` noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ArrayGeometry, steering_matrix

__all__ = [
    "SourceScenario",
    "MeasurementSet",
    "simulate",
    "sample_covariance",
    "diagonal_load",
    "default_loading",
    "snr_db_to_noise_var",
]


def snr_db_to_noise_var(snr_db: float) -> float:
    """Noise variance for a given SNR in dB (SNR = 1 / noise_var)."""
    return 10.0 ** (-snr_db / 10.0)


@dataclass(frozen=True)
class SourceScenario:
    """Source frequencies, covariance, snapshot count and noise level."""

    mu_x: np.ndarray
    mu_y: np.ndarray
    P: np.ndarray
    snapshots: int
    noise_var: float
    seed: int = 0

    def __post_init__(self):
        mu_x = np.atleast_1d(np.asarray(self.mu_x, dtype=float))
        mu_y = np.atleast_1d(np.asarray(self.mu_y, dtype=float))
        if mu_x.shape != mu_y.shape:
            raise ValueError("mu_x and mu_y must have equal length")
        pairs = set(zip(mu_x.tolist(), mu_y.tolist()))
        if len(pairs) != len(mu_x):
            raise ValueError("source frequency pairs must be pairwise distinct")
        P = np.asarray(self.P, dtype=complex)
        ns = len(mu_x)
        if P.shape != (ns, ns):
            raise ValueError(f"P must be {ns}x{ns}")
        if not np.allclose(P, P.conj().T):
            raise ValueError("P must be Hermitian")
        if not np.allclose(np.diag(P).real, 1.0):
            raise ValueError("P must have unit diagonal")
        if np.linalg.eigvalsh(P).min() < -1e-12:
            raise ValueError("P must be positive semidefinite")
        if self.snapshots < 1:
            raise ValueError("snapshots must be >= 1")
        if self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")
        object.__setattr__(self, "mu_x", mu_x)
        object.__setattr__(self, "mu_y", mu_y)
        object.__setattr__(self, "P", P)

    @classmethod
    def pairwise(cls, mu_x, mu_y, corr=0.0, snapshots=1, noise_var=1.0, seed=0):
        """Two-source scenario with correlation coefficient ``corr``
        (|corr| <= 1, may be complex); generalizes to any count with
        the same coefficient between every pair."""
        ns = len(np.atleast_1d(mu_x))
        if abs(corr) > 1:
            raise ValueError("|corr| must be <= 1")
        P = np.full((ns, ns), complex(corr))
        P = np.where(np.tri(ns, k=-1, dtype=bool), np.conj(P.T), P)
        np.fill_diagonal(P, 1.0)
        return cls(mu_x, mu_y, P, snapshots, noise_var, seed)

    @property
    def n_sources(self) -> int:
        return len(self.mu_x)


@dataclass(frozen=True)
class MeasurementSet:
    """Snapshots plus the (observable-sensor) sample covariance."""

    Y: np.ndarray
    R_hat: np.ndarray
    observable_indices: np.ndarray
    loaded: bool = False
    noise_var: float = field(default=0.0)

    @property
    def snapshots(self) -> int:
        return self.Y.shape[1]


def _hermitian_sqrt(P: np.ndarray) -> np.ndarray:
    w, E = np.linalg.eigh(P)
    w = np.clip(w, 0.0, None)
    return (E * np.sqrt(w)) @ E.conj().T


def _cn_samples(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circular complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def simulate(geom: ArrayGeometry, scenario: SourceScenario,
             rng: np.random.Generator | None = None) -> MeasurementSet:
    """Draw one snapshot matrix for the scenario.

    Requires fully known displacements (the simulator needs ground truth).
    Deterministic for a fixed seed: the waveforms are drawn before the
    noise from a Philox-backed generator.
    """
    if not geom.fully_known:
        raise ValueError("cannot simulate with unknown inter-subarray displacements")
    if rng is None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(scenario.seed)))
    A = steering_matrix(geom, scenario.mu_x, scenario.mu_y)
    n = scenario.snapshots
    waveforms = _hermitian_sqrt(scenario.P) @ _cn_samples(rng, (scenario.n_sources, n))
    noise = np.sqrt(scenario.noise_var) * _cn_samples(rng, (geom.M, n))
    Y = A @ waveforms + noise
    obs = geom.observable_indices
    return MeasurementSet(Y=Y, R_hat=sample_covariance(Y[obs]), observable_indices=obs,
                          loaded=False, noise_var=scenario.noise_var)


def sample_covariance(Y: np.ndarray) -> np.ndarray:
    """``Y Y^H / N``, symmetrized against rounding."""
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise ValueError("Y must be a matrix with at least one snapshot")
    R = Y @ Y.conj().T / Y.shape[1]
    return 0.5 * (R + R.conj().T)


def diagonal_load(R_hat: np.ndarray, iota: float) -> np.ndarray:
    """``R_hat + iota * I``; strictly positive definite for ``iota > 0``."""
    if iota < 0:
        raise ValueError("loading must be non-negative")
    return R_hat + iota * np.eye(R_hat.shape[0])


def default_loading(R_hat: np.ndarray) -> float:
    """Trace-relative loading level, scale invariant: ``1e-6 tr(R) / M``."""
    m = R_hat.shape[0]
    return 1e-6 * float(np.trace(R_hat).real) / m
