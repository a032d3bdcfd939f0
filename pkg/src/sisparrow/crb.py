"""Stochastic Cramér-Rao bounds for the spatial-frequency estimates.

Under the unconditional (Gaussian-source) model each snapshot is
``CN(0, A P A^H + noise_var I)``.  After concentrating out the nuisance
parameters (source covariance and noise power), the bound on the remaining
real parameter vector is

    CRB = noise_var / (2 N) [Re((D^H P_A_perp D) o (1 1^T kron U^T))]^{-1}

with ``U = P (A^H A P + noise_var I)^{-1} A^H A P`` and ``D`` the stacked
parameter derivatives of the steering matrix.

Two parameterizations are supported.  In the fully calibrated mode only
the frequencies are unknown.  In the partly calibrated mode the
inter-subarray phase responses are additional free parameters (their
first entries pinned to 1 to remove the scaling ambiguity), so ``D``
additionally stacks their real and imaginary parts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import ArrayGeometry, steering_matrix

__all__ = ["CrbResult", "derivative_blocks", "stochastic_crb"]


@dataclass(frozen=True)
class CrbResult:
    """Frequency block of the bound plus the scalar RMSE floor."""

    crb_mu: np.ndarray     # 2 Ns x 2 Ns block ordered [mu_x..., mu_y...]
    rmse_bound: float      # sqrt(mean of the 2 Ns diagonal entries)
    full: np.ndarray       # complete parameter block
    condition: float


def _axis_factors(geom: ArrayGeometry, mu_x, mu_y):
    """Per-source subarray / displacement response vectors for both axes."""
    vx = np.exp(1j * np.outer(geom.delta_x, mu_x))       # Lx x Ns
    vy = np.exp(1j * np.outer(geom.delta_y, mu_y))       # Ly x Ns
    hx = np.exp(1j * np.outer(geom.Delta_x, mu_x))       # Px x Ns
    hy = np.exp(1j * np.outer(geom.Delta_y, mu_y))       # Py x Ns
    return vx, vy, hx, hy


def _kron_cols(*factors):
    """Column-wise Kronecker product of equally wide matrices."""
    out = factors[0]
    for f in factors[1:]:
        out = (out[:, None, :] * f[None, :, :]).reshape(-1, out.shape[-1])
    return out


def derivative_blocks(geom: ArrayGeometry, mu_x, mu_y, mode: str = "partly") -> np.ndarray:
    """Stacked steering-vector derivatives ``D`` for the chosen mode.

    Column blocks of width Ns: ``[d/dmu_x, d/dmu_y]`` and, in partly
    calibrated mode, the derivatives with respect to the real and
    imaginary parts of the free inter-subarray responses (subarrays
    2..Px and 2..Py; the imaginary blocks equal ``1j`` times the real
    ones).
    """
    if mode not in ("partly", "fully"):
        raise ValueError("mode must be 'partly' or 'fully'")
    if not geom.fully_known:
        raise ValueError("bound evaluation needs the ground-truth geometry")
    mu_x = np.atleast_1d(np.asarray(mu_x, dtype=float))
    mu_y = np.atleast_1d(np.asarray(mu_y, dtype=float))
    vx, vy, hx, hy = _axis_factors(geom, mu_x, mu_y)
    ax = _kron_cols(hx, vx)
    ay = _kron_cols(hy, vy)
    dvx = 1j * geom.delta_x[:, None] * vx
    dvy = 1j * geom.delta_y[:, None] * vy

    if mode == "fully":
        # frequency derivatives see the full sensor positions
        dax = 1j * geom.positions_x()[:, None] * ax
        day = 1j * geom.positions_y()[:, None] * ay
        return np.hstack([_kron_cols(dax, ay), _kron_cols(ax, day)])

    # partly calibrated: inter-subarray responses are free parameters, so
    # the frequency derivatives only act on the calibrated factors
    xi_x, xi_y = [], []
    for p in range(1, geom.Px):
        e = np.zeros((geom.Px, len(mu_x)), dtype=complex)
        e[p] = 1.0
        xi_x.append(_kron_cols(e, vx, ay))
    for p in range(1, geom.Py):
        e = np.zeros((geom.Py, len(mu_x)), dtype=complex)
        e[p] = 1.0
        xi_y.append(_kron_cols(ax, e, vy))
    blocks = [_kron_cols(hx, dvx, ay), _kron_cols(ax, hy, dvy)]
    blocks += xi_x + [1j * B for B in xi_x]
    blocks += xi_y + [1j * B for B in xi_y]
    return np.hstack(blocks)


def stochastic_crb(geom: ArrayGeometry, mu_x, mu_y, P, noise_var: float,
                   n_snapshots: int, mode: str = "partly",
                   cond_warn: float = 1e12) -> CrbResult:
    """Bound for the frequency estimates; see the module docstring.

    Raises ``numpy.linalg.LinAlgError`` when the information matrix is
    singular (unidentifiable configuration, e.g. coinciding sources) and
    warns when it is severely ill-conditioned.
    """
    mu_x = np.atleast_1d(np.asarray(mu_x, dtype=float))
    mu_y = np.atleast_1d(np.asarray(mu_y, dtype=float))
    ns = len(mu_x)
    A = steering_matrix(geom, mu_x, mu_y)
    if np.linalg.matrix_rank(A) < ns:
        raise np.linalg.LinAlgError("steering matrix is rank deficient")
    P = np.asarray(P, dtype=complex)
    gram = A.conj().T @ A
    U = P @ np.linalg.solve(gram @ P + noise_var * np.eye(ns), gram @ P)
    proj = A @ np.linalg.solve(gram, A.conj().T)
    D = derivative_blocks(geom, mu_x, mu_y, mode)
    K = D.conj().T @ D - (D.conj().T @ proj) @ D
    n_blocks = D.shape[1] // ns
    info = np.real(K * np.kron(np.ones((n_blocks, n_blocks)), U.T))
    info = 0.5 * (info + info.T)
    cond = float(np.linalg.cond(info))
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise np.linalg.LinAlgError("singular information matrix: "
                                    "unidentifiable configuration")
    if cond > cond_warn:
        warnings.warn(f"information matrix condition number {cond:.2e}; "
                      "bound may be unreliable", RuntimeWarning)
    try:
        crb = noise_var / (2 * n_snapshots) * np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular information matrix: "
                                    "unidentifiable configuration") from exc
    crb = 0.5 * (crb + crb.T)
    block = crb[:2 * ns, :2 * ns]
    rmse_bound = float(np.sqrt(np.mean(np.diag(block))))
    return CrbResult(crb_mu=block, rmse_bound=rmse_bound, full=crb, condition=cond)
