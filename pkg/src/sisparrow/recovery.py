"""Frequency recovery from a reconstructed covariance-like matrix.

Two estimators are provided:

* :func:`mi_md_esprit` exploits every intra-subarray shift invariance in
  both axes.  The per-invariance shift operators share a common eigenbasis,
  recovered by approximate joint diagonalization, which pairs the x/y
  frequencies of each source automatically.  Only the intra-subarray
  sensor spacing needs to be known.
* :func:`music_2d` performs a 2D grid search over the noise-subspace
  spectrum with successive local refinement; it requires a fully
  calibrated array.

:func:`match_and_rmse` scores batches of estimates against the ground
truth with the wrap-around distance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .geometry import ArrayGeometry, selection_groups, steering_matrix

__all__ = [
    "InsufficientAperture",
    "FrequencyEstimate",
    "SubspaceResult",
    "signal_subspace",
    "joint_diagonalize",
    "mi_md_esprit",
    "music_2d",
    "wrap_distance",
    "match_and_rmse",
    "RmseResult",
]


class InsufficientAperture(Exception):
    """The array does not expose enough invariances / rank for recovery."""


def wrap_angle(mu):
    """Map angles into [-pi, pi)."""
    return np.mod(np.asarray(mu) + np.pi, 2 * np.pi) - np.pi


def wrap_distance(mu1, mu2):
    """Wrap-around distance min_k |mu1 - mu2 + 2 k pi|."""
    return np.abs(wrap_angle(np.asarray(mu1) - np.asarray(mu2)))


@dataclass(frozen=True)
class FrequencyEstimate:
    """Paired frequency estimates plus recovery diagnostics."""

    mu_x: np.ndarray
    mu_y: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mu_x", wrap_angle(np.atleast_1d(self.mu_x).astype(float)))
        object.__setattr__(self, "mu_y", wrap_angle(np.atleast_1d(self.mu_y).astype(float)))

    @property
    def pairs(self):
        return list(zip(self.mu_x.tolist(), self.mu_y.tolist()))

    @property
    def n_sources(self) -> int:
        return len(self.mu_x)


@dataclass(frozen=True)
class SubspaceResult:
    basis: np.ndarray       # M x Ns, orthonormal dominant eigenvectors
    eigenvalues: np.ndarray  # all M, descending
    eigengap: float          # relative gap at the subspace boundary
    degenerate: bool


def signal_subspace(Qhat: np.ndarray, ns: int, gap_tol: float = 1e-8) -> SubspaceResult:
    """Dominant-eigenvector basis of a Hermitian matrix.

    Flags a (near-)degenerate spectrum when the relative eigengap between
    the ``ns``-th and ``ns+1``-th eigenvalue is below ``gap_tol``.
    """
    m = Qhat.shape[0]
    if not 0 < ns < m:
        raise ValueError(f"need 0 < ns < {m}, got {ns}")
    w, E = np.linalg.eigh(0.5 * (Qhat + Qhat.conj().T))
    order = np.argsort(w)[::-1]
    w = w[order]
    E = E[:, order]
    scale = max(abs(w[0]), np.finfo(float).tiny)
    gap = (w[ns - 1] - w[ns]) / scale
    return SubspaceResult(basis=E[:, :ns], eigenvalues=w, eigengap=float(gap),
                          degenerate=bool(gap <= gap_tol))


def _offdiag_energy(mats):
    total = 0.0
    for D in mats:
        total += np.linalg.norm(D - np.diag(np.diag(D))) ** 2
    return total


def joint_diagonalize(mats, max_sweeps: int = 100, tol: float = 1e-10,
                      rng: np.random.Generator | None = None):
    """Approximate joint eigenbasis of a family of (near-)commuting matrices.

    A random convex combination supplies the candidate basis; elementary
    similarity updates then sweep over index pairs, each minimizing the
    summed squared off-diagonal magnitudes in the least-squares sense.
    Sweeps stop when the off-diagonal energy falls below ``tol`` (or after
    ``max_sweeps``; non-convergence is reported, not raised).

    Returns ``(T, eigvals, info)`` where ``eigvals[l, i]`` is the i-th
    diagonal value of ``T^{-1} mats[l] T``.
    """
    mats = [np.asarray(Ml, dtype=complex) for Ml in mats]
    n = mats[0].shape[0]
    if n == 1:
        eigvals = np.array([[Ml[0, 0]] for Ml in mats])
        return np.eye(1, dtype=complex), eigvals, {"offdiag_energy": 0.0,
                                                   "converged": True, "sweeps": 0}
    if rng is None:
        rng = np.random.default_rng(0x5eed)

    best = None
    for _ in range(4):  # a few weight draws guard against unlucky combinations
        w = rng.random(len(mats))
        w /= w.sum()
        C = sum(wi * Ml for wi, Ml in zip(w, mats))
        try:
            _, T = np.linalg.eig(C)
            D = [np.linalg.solve(T, Ml @ T) for Ml in mats]
        except np.linalg.LinAlgError:
            continue
        energy = _offdiag_energy(D)
        if best is None or energy < best[0]:
            best = (energy, T, D)
    if best is None:
        raise np.linalg.LinAlgError("joint diagonalization: no usable eigenbasis")
    energy, T, D = best

    sweeps = 0
    while energy > tol and sweeps < max_sweeps:
        sweeps += 1
        improved = False
        for p in range(n):
            for q in range(n):
                if p == q:
                    continue
                # least-squares shift for the elementary update T <- T (I + t E_pq)
                num = 0.0 + 0.0j
                den = 0.0
                for Dl in D:
                    col = np.delete(Dl[:, q], (p, q))
                    colb = np.delete(Dl[:, p], (p, q))
                    row = np.delete(Dl[p, :], (q, p))
                    rowb = -np.delete(Dl[q, :], (q, p))
                    num += np.vdot(colb, col) + np.vdot(rowb, row)
                    bpq = Dl[p, p] - Dl[q, q]
                    num += np.conj(bpq) * Dl[p, q]
                    den += np.vdot(colb, colb).real + np.vdot(rowb, rowb).real
                    den += abs(bpq) ** 2
                if den <= 0:
                    continue
                t = -num / den
                for _ in range(8):  # exact update is quartic in t; backtrack if needed
                    D_new = [_elementary_similarity(Dl, p, q, t) for Dl in D]
                    e_new = _offdiag_energy(D_new)
                    if e_new < energy:
                        break
                    t *= 0.5
                else:
                    continue
                D = D_new
                T = T.copy()
                T[:, q] += t * T[:, p]
                energy = e_new
                improved = True
        if not improved:
            break

    eigvals = np.array([np.diag(Dl) for Dl in D])
    info = {"offdiag_energy": float(energy), "converged": bool(energy <= tol),
            "sweeps": sweeps}
    return T, eigvals, info


def _elementary_similarity(D, p, q, t):
    """(I - t e_p e_q^T) D (I + t e_p e_q^T)."""
    out = D.copy()
    out[:, q] += t * D[:, p]
    out[p, :] -= t * D[q, :]
    out[p, q] -= t * t * D[q, p]
    return out


def _dml_search(v_hat, deltas, n_grid: int = 4096, tol: float = 1e-9) -> tuple[float, float]:
    """Single-frequency fit of a reconstructed subarray response.

    Maximizes the beamformer correlation |v(mu)^H v_hat|^2 over a coarse
    grid, then refines by golden-section search.  Returns (mu, peak value).
    """
    deltas = np.asarray(deltas, dtype=float)

    def power(mu):
        return np.abs(np.exp(-1j * np.multiply.outer(mu, deltas)) @ v_hat) ** 2

    grid = np.linspace(-np.pi, np.pi, n_grid, endpoint=False)
    vals = power(grid)
    k = int(np.argmax(vals))
    spacing = 2 * np.pi / n_grid
    lo, hi = grid[k] - spacing, grid[k] + spacing
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = power(c), power(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = power(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = power(d)
    mu = 0.5 * (a + b)
    return float(wrap_angle(mu)), float(power(mu))


def mi_md_esprit(Qhat: np.ndarray, geom: ArrayGeometry, ns: int,
                 dml_grid: int = 4096, dml_tol: float = 1e-9,
                 rng: np.random.Generator | None = None) -> FrequencyEstimate:
    """Multi-invariance multidimensional ESPRIT.

    Works on any Hermitian matrix sharing the signal subspace of the
    steering matrix (the sample covariance or a structured reconstruction).
    Every intra-subarray invariance contributes a shift operator; their
    joint diagonalization yields per-source phase factors on both axes at
    once, so the (mu_x, mu_y) pairing is automatic.  Each frequency is then
    fitted to its reconstructed subarray response by a 1D search, which
    also resolves phase ambiguity for spacings above half a wavelength.
    """
    if geom.Lx < 2 or geom.Ly < 2:
        raise InsufficientAperture("need at least two sensors per subarray in "
                                   "each axis for the intra-subarray invariances")
    sub = signal_subspace(Qhat, ns)
    groups = selection_groups(geom)
    ref_x = sub.basis[groups.sensor_x[0]]
    ref_y = sub.basis[groups.sensor_y[0]]
    for name, ref in (("x", ref_x), ("y", ref_y)):
        sv = np.linalg.svd(ref, compute_uv=False)
        if ref.shape[0] < ns or sv[-1] <= 1e-10 * max(sv[0], np.finfo(float).tiny):
            raise InsufficientAperture(f"reference group along {name} is rank "
                                       f"deficient for {ns} sources")

    shift_ops = []
    tags = []  # (axis, displacement) per shift-invariance equation
    for l in range(1, geom.Lx):
        psi, *_ = np.linalg.lstsq(ref_x, sub.basis[groups.sensor_x[l]], rcond=None)
        shift_ops.append(psi)
        tags.append(("x", geom.delta_x[l]))
    for l in range(1, geom.Ly):
        psi, *_ = np.linalg.lstsq(ref_y, sub.basis[groups.sensor_y[l]], rcond=None)
        shift_ops.append(psi)
        tags.append(("y", geom.delta_y[l]))

    _, eigvals, jd_info = joint_diagonalize(shift_ops, rng=rng)

    mu_x = np.empty(ns)
    mu_y = np.empty(ns)
    peak_x = np.empty(ns)
    peak_y = np.empty(ns)
    x_rows = [k for k, tag in enumerate(tags) if tag[0] == "x"]
    y_rows = [k for k, tag in enumerate(tags) if tag[0] == "y"]
    for i in range(ns):
        v_x = np.concatenate(([1.0], eigvals[x_rows, i]))
        v_y = np.concatenate(([1.0], eigvals[y_rows, i]))
        mu_x[i], peak_x[i] = _dml_search(v_x, geom.delta_x, dml_grid, dml_tol)
        mu_y[i], peak_y[i] = _dml_search(v_y, geom.delta_y, dml_grid, dml_tol)

    return FrequencyEstimate(
        mu_x=mu_x, mu_y=mu_y, method="esprit",
        diagnostics={
            "eigengap": sub.eigengap,
            "degenerate": sub.degenerate,
            "jd_offdiag_energy": jd_info["offdiag_energy"],
            "jd_converged": jd_info["converged"],
            "dml_peak_x": peak_x.tolist(),
            "dml_peak_y": peak_y.tolist(),
        })


def _music_spectrum(noise_basis, geom, mu_x, mu_y, chunk: int = 8192):
    """1 / ||Un^H a(mu)||^2 on the (flattened) frequency list."""
    A = steering_matrix(geom, mu_x, mu_y)
    out = np.empty(A.shape[1])
    for start in range(0, A.shape[1], chunk):
        block = noise_basis.conj().T @ A[:, start:start + chunk]
        out[start:start + chunk] = np.einsum("ij,ij->j", block.conj(), block).real
    return 1.0 / np.maximum(out, 1e-300)


def _music_grid_scan(noise_basis, geom, gx_vec, gy_vec):
    """Spectrum on a full product grid, exploiting the Kronecker structure of
    the steering vectors (much cheaper than scanning point by point)."""
    Ax = np.exp(1j * np.outer(geom.positions_x(), gx_vec))
    Ay = np.exp(1j * np.outer(geom.positions_y(), gy_vec))
    C = noise_basis.conj().reshape(geom.Mx, geom.My, noise_basis.shape[1])
    half = np.einsum("xyk,xg->gky", C, Ax)
    out = np.empty((len(gx_vec), len(gy_vec)))
    for i in range(len(gx_vec)):
        block = half[i] @ Ay  # (K, Gy)
        out[i] = np.einsum("kj,kj->j", block.conj(), block).real
    return 1.0 / np.maximum(out, 1e-300)


def _auto_grid(geom, floor: int = 256) -> int:
    """Coarse grid sized so the spectrum main lobes are safely sampled:
    roughly eight points across a lobe of width 2 pi / aperture."""
    aperture = max(geom.positions_x().max() - geom.positions_x().min(),
                   geom.positions_y().max() - geom.positions_y().min(), 1.0)
    size = int(2 ** np.ceil(np.log2(8 * aperture)))
    return max(floor, size)


def music_2d(Qhat: np.ndarray, geom: ArrayGeometry, ns: int,
             grid: tuple[int, int] | None = None, crb_ref: float | None = None,
             refine_floor: float = 1e-7) -> FrequencyEstimate:
    """2D MUSIC with successive grid refinement.

    The coarse spectrum is scanned for the ``ns`` strongest separated
    peaks (local maxima on the wrapped grid); each is refined on shrinking
    local grids, halving the spacing until it is negligible against the
    reference bound ``crb_ref`` (a variance; the target spacing is
    ``0.01 sqrt(crb_ref)``) or the floor is reached.  Requires a fully
    calibrated geometry.

    ``grid=None`` sizes the coarse grid from the array aperture (256 at
    least); widely displaced subarrays have spectrum lobes far narrower
    than a fixed desk-scale grid resolves.  When fewer than ``ns`` peaks
    exist the found ones are returned and flagged in the diagnostics.
    """
    if not geom.fully_known:
        raise ValueError("MUSIC requires a fully calibrated geometry")
    if ns == 0:
        return FrequencyEstimate(mu_x=np.empty(0), mu_y=np.empty(0), method="music",
                                 diagnostics={"n_peaks_found": 0, "complete": True})
    m = Qhat.shape[0]
    if ns >= m:
        raise ValueError("need ns < M")
    w, E = np.linalg.eigh(0.5 * (Qhat + Qhat.conj().T))
    noise_basis = E[:, :m - ns]  # ascending order: minor eigenvectors first

    gx, gy = grid if grid is not None else (_auto_grid(geom),) * 2
    ax = np.linspace(-np.pi, np.pi, gx, endpoint=False)
    ay = np.linspace(-np.pi, np.pi, gy, endpoint=False)
    spec = _music_grid_scan(noise_basis, geom, ax, ay)

    # refine a pool of candidate maxima before picking the strongest: with a
    # sparse aperture the coarse sidelobes of one source can outrank the
    # barely-sampled main lobe of another
    candidates = _local_maxima(spec, max(4 * ns, ns + 8))
    target = refine_floor if crb_ref is None else max(refine_floor, 0.01 * np.sqrt(crb_ref))
    coarse_spacing = 2 * np.pi / max(gx, gy)
    refined = []
    for (ix, iy) in candidates:
        px, py = ax[ix], ay[iy]
        value = spec[ix, iy]
        spacing = coarse_spacing
        trace = [value]
        while spacing > target:
            spacing *= 0.5
            off = spacing * np.arange(-2.0, 3.0)
            LX, LY = np.meshgrid(px + off, py + off, indexing="ij")
            local = _music_spectrum(noise_basis, geom, LX.ravel(), LY.ravel())
            k = int(np.argmax(local))
            value = local[k]
            px, py = LX.ravel()[k], LY.ravel()[k]
            trace.append(value)
        refined.append((value, px, py, trace))

    refined.sort(key=lambda item: -item[0])
    mu_x, mu_y, levels = [], [], []
    for value, px, py, trace in refined:
        separated = all(max(wrap_distance(px, qx), wrap_distance(py, qy)) > coarse_spacing
                        for qx, qy in zip(mu_x, mu_y))
        if separated:
            mu_x.append(px)
            mu_y.append(py)
            levels.append(trace)
        if len(mu_x) == ns:
            break

    return FrequencyEstimate(
        mu_x=np.asarray(mu_x), mu_y=np.asarray(mu_y), method="music",
        diagnostics={"n_peaks_found": len(mu_x), "complete": len(mu_x) == ns,
                     "refinement_values": levels})


def _local_maxima(spec, count):
    """Indices of the strongest local maxima on a torus grid."""
    neighborhood = np.full(spec.shape, -np.inf)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            neighborhood = np.maximum(neighborhood, np.roll(spec, (dx, dy), axis=(0, 1)))
    is_peak = spec > neighborhood
    idx = np.argwhere(is_peak)
    if len(idx) == 0:
        return []
    order = np.argsort(spec[is_peak])[::-1]
    return [tuple(idx[k]) for k in order[:count]]


@dataclass(frozen=True)
class RmseResult:
    rmse: float
    n_trials: int
    n_scored: int
    n_flagged: int
    flagged_trials: tuple


def match_and_rmse(estimates, mu_x_true, mu_y_true, drop_incomplete: bool = False) -> RmseResult:
    """Permutation-matched RMSE over trials with wrap-around distances.

    Per trial the estimated pairs are assigned to the ground truth by the
    permutation minimizing the total squared wrap-around distance jointly
    in both axes.  Trials with a source-count mismatch are flagged; per
    default, missing sources are scored at the worst-case distance pi per
    coordinate, with ``drop_incomplete`` they are excluded instead.
    """
    mu_x_true = np.atleast_1d(np.asarray(mu_x_true, dtype=float))
    mu_y_true = np.atleast_1d(np.asarray(mu_y_true, dtype=float))
    ns = len(mu_x_true)
    total = 0.0
    n_trials = 0
    n_scored = 0
    flagged = []
    for trial, est in enumerate(estimates):
        n_trials += 1
        if isinstance(est, FrequencyEstimate):
            ex, ey = est.mu_x, est.mu_y
        else:
            ex, ey = (np.atleast_1d(np.asarray(v, dtype=float)) for v in est)
        if len(ex) != ns:
            flagged.append(trial)
            if drop_incomplete:
                continue
        total += _matched_sq_error(ex, ey, mu_x_true, mu_y_true)
        n_scored += 1
    if n_scored == 0:
        return RmseResult(rmse=float("nan"), n_trials=n_trials, n_scored=0,
                          n_flagged=len(flagged), flagged_trials=tuple(flagged))
    rmse = float(np.sqrt(total / (ns * n_scored)))
    return RmseResult(rmse=rmse, n_trials=n_trials, n_scored=n_scored,
                      n_flagged=len(flagged), flagged_trials=tuple(flagged))


def _matched_sq_error(ex, ey, tx, ty):
    """Minimum over assignments of the summed squared wrap-around error;
    unmatched truth sources cost pi^2 per coordinate."""
    ns = len(tx)
    k = len(ex)
    missing = max(0, ns - k) * 2 * np.pi ** 2
    if k == 0:
        return missing
    dx = wrap_distance(ex[:, None], tx[None, :]) ** 2
    dy = wrap_distance(ey[:, None], ty[None, :]) ** 2
    cost = dx + dy
    best = np.inf
    if k <= ns:
        for assign in itertools.permutations(range(ns), k):
            best = min(best, sum(cost[j, assign[j]] for j in range(k)))
    else:  # more estimates than sources: match each truth to its best estimate
        for assign in itertools.permutations(range(k), ns):
            best = min(best, sum(cost[assign[j], j] for j in range(ns)))
    return best + missing
