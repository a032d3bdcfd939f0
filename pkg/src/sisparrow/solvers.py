"""Covariance-fitting objective and its two first-order solvers.

The objective

    f(Q) = M tr((Q + lam I)^{-1} R) + tr(Q)

is minimized over positive semidefinite Hermitian matrices constrained to
the shift-invariant subspace described by a :class:`ShiftStructure`.  Two
algorithms are provided:

* :func:`solve_admm` splits the subspace constraint from the PSD cone and
  solves the structured proximal subproblem with an inner separable-quadratic
  descent loop (:func:`inner_sca_q_update`).  Requires strictly positive
  definite ``R`` (diagonally load undersampled covariances first).
* :func:`solve_sca` linearizes ``f`` with a separable quadratic model in
  the independent variables and projects onto the constraint intersection
  with an inner Dykstra-style splitting loop.  Works for rank-deficient
  ``R`` as well.

With ``selection`` set, the data term only sees the observable-sensor
submatrix of ``Q`` (failed-sensor variant) while the trace penalty and the
constraints act on the full matrix.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .geometry import ShiftStructure

__all__ = [
    "NotPositiveDefinite",
    "Objective",
    "SolverConfig",
    "SolverReport",
    "InnerInfo",
    "objective_value",
    "gradient",
    "partial_grad_hess",
    "inner_sca_q_update",
    "psd_project",
    "psd_sqrt",
    "solve_admm",
    "solve_sca",
    "update_penalty",
    "lambda_auto",
]


class NotPositiveDefinite(Exception):
    """A matrix required to be positive definite is not."""


def hermitian(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.conj().T)


def psd_sqrt(R: np.ndarray) -> np.ndarray:
    """Hermitian square root with negative eigenvalues clamped to zero."""
    w, E = np.linalg.eigh(hermitian(R))
    w = np.clip(w, 0.0, None)
    return hermitian((E * np.sqrt(w)) @ E.conj().T)


def psd_project(X: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) PSD matrix: discard negative eigenvalues."""
    w, E = np.linalg.eigh(hermitian(X))
    w = np.clip(w, 0.0, None)
    return hermitian((E * w) @ E.conj().T)


def lambda_auto(noise_std: float, M: int, N: int) -> float:
    """Tuned regularization level ``sigma_n (sqrt(M / N) + 1)``."""
    return noise_std * (np.sqrt(M / N) + 1.0)


class PointData(NamedTuple):
    """Quantities shared by all per-class updates at one evaluation point."""

    value: float          # f(Q), without any proximal term
    V: np.ndarray         # (Q + lam I)^{-1}, embedded at full size
    Rt: np.ndarray        # V R V, embedded at full size
    grad_f: np.ndarray    # -M Rt + I


@dataclass
class Objective:
    """Problem data: effective covariance, regularization, structure."""

    R: np.ndarray
    lam: float
    structure: ShiftStructure
    selection: np.ndarray | None = None

    def __post_init__(self):
        self.R = np.ascontiguousarray(hermitian(np.asarray(self.R, dtype=np.complex128)))
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.selection is not None:
            sel = np.asarray(self.selection, dtype=np.intp)
            if len(sel) == 0 or len(np.unique(sel)) != len(sel):
                raise ValueError("selection must be non-empty distinct indices")
            if sel.min() < 0 or sel.max() >= self.structure.M:
                raise ValueError("selection index out of range")
            if len(sel) == self.structure.M:
                sel = None  # no failures: identical to the base objective
            self.selection = sel
        m_eff = self.structure.M if self.selection is None else len(self.selection)
        if self.R.shape != (m_eff, m_eff):
            raise ValueError(f"R must be {m_eff}x{m_eff}, got {self.R.shape}")

    @property
    def M(self) -> int:
        return self.structure.M

    def _sub(self, Q: np.ndarray) -> np.ndarray:
        if self.selection is None:
            return Q
        return Q[np.ix_(self.selection, self.selection)]

    def _cholesky(self, Q):
        W = self._sub(Q) + self.lam * np.eye(self.R.shape[0])
        try:
            return cho_factor(W, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise NotPositiveDefinite("Q + lam I is not positive definite") from exc

    def _value_from_cho(self, cho, Q) -> float:
        tr_inv = np.trace(cho_solve(cho, self.R, check_finite=False)).real
        return self.M * tr_inv + np.trace(Q).real

    def value(self, Q, rho: float = 0.0, anchor=None) -> float:
        """Objective value, optionally with the proximal penalty
        ``rho/2 ||Q - anchor||_F^2``.  Raises NotPositiveDefinite when the
        (selected) ``Q + lam I`` has no Cholesky factorization."""
        val = self._value_from_cho(self._cholesky(Q), Q)
        if rho:
            val += 0.5 * rho * np.linalg.norm(Q - anchor) ** 2
        return val

    def point(self, Q, rho: float = 0.0, anchor=None):
        """Evaluate value, resolvent ``V``, ``Rt = V R V`` and gradient at
        ``Q``.  Returns ``(PointData, grad)`` where ``grad`` includes the
        proximal term."""
        cho = self._cholesky(Q)
        m_eff = self.R.shape[0]
        V = cho_solve(cho, np.eye(m_eff, dtype=np.complex128), check_finite=False)
        V = hermitian(V)
        Rt = hermitian(V @ self.R @ V)
        if self.selection is not None:
            V_full = np.zeros((self.M, self.M), dtype=np.complex128)
            Rt_full = np.zeros((self.M, self.M), dtype=np.complex128)
            idx = np.ix_(self.selection, self.selection)
            V_full[idx] = V
            Rt_full[idx] = Rt
            V, Rt = V_full, Rt_full
        grad_f = -self.M * Rt + np.eye(self.M)
        pt = PointData(self._value_from_cho(cho, Q), np.ascontiguousarray(V),
                       np.ascontiguousarray(Rt), grad_f)
        grad = pt.grad_f if not rho else pt.grad_f + rho * (Q - anchor)
        return pt, grad

    def gradient(self, Q, rho: float = 0.0, anchor=None) -> np.ndarray:
        return self.point(Q, rho, anchor)[1]


def objective_value(obj: Objective, Q, rho: float = 0.0, anchor=None) -> float:
    return obj.value(Q, rho, anchor)


def gradient(obj: Objective, Q, rho: float = 0.0, anchor=None) -> np.ndarray:
    return obj.gradient(Q, rho, anchor)


def partial_grad_hess(obj: Objective, Q=None, rho: float = 0.0, anchor=None,
                      point=None, grad=None):
    """Per-class gradient and Hessian diagonal of the (proximal) objective.

    Returns ``(g, h)`` over all independent variables.  Complex classes
    carry the factor-two Wirtinger convention; real classes the plain
    derivative.  ``point``/``grad`` allow reuse of an evaluation from
    :meth:`Objective.point`.
    """
    if point is None:
        point, grad = obj.point(Q, rho, anchor)
    s = obj.structure
    from . import kernels
    g = s.factor * kernels.class_sums(np.ascontiguousarray(grad, dtype=np.complex128),
                                      s.ptr, s.rows, s.cols)
    g[s.is_real] = g[s.is_real].real
    quad = kernels.class_quadratic(point.V, point.Rt, s.ptr, s.rows, s.cols)
    h = s.factor * (obj.M * quad + rho * s.sizes)
    return g, h


@dataclass
class SolverConfig:
    """Tolerances and schedule parameters shared by both solvers."""

    eps_abs: float = 1e-4
    eps_rel: float = 1e-4
    eta: float | None = None          # inner descent gradient tolerance (auto-scaled if None)
    armijo_beta: float = 0.5
    armijo_sigma: float = 0.1
    rho0: float = 1.0
    kappa: float = 10.0
    tau_incr: float = 2.0
    tau_decr: float = 2.0
    t_max: int = 50
    max_outer: int = 500
    max_inner: int = 1000
    max_inner_admm: int = 500
    max_backtracks: int = 60

    def __post_init__(self):
        for name in ("eps_abs", "eps_rel", "rho0", "tau_incr", "tau_decr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.armijo_beta < 1 or not 0 < self.armijo_sigma < 1:
            raise ValueError("armijo_beta and armijo_sigma must lie in (0, 1)")
        if self.kappa <= 1:
            raise ValueError("kappa must exceed 1")


@dataclass
class InnerInfo:
    iterations: int
    grad_norm: float
    converged: bool
    value: float


@dataclass
class SolverReport:
    """Solve outcome with residual traces; JSON-serializable."""

    Q: np.ndarray
    method: str
    lam: float
    converged: bool
    iterations: int
    inner_iterations: int
    objective: float
    grad_norm: float
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    rho_final: float = 0.0
    relaxed_solution: bool = False
    min_eigenvalue: float = 0.0
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "Q"}
        d["Q"] = {"real": self.Q.real.tolist(), "imag": self.Q.imag.tolist()}
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverReport":
        d = dict(d)
        q = d.pop("Q")
        Q = np.asarray(q["real"], dtype=float) + 1j * np.asarray(q["imag"], dtype=float)
        return cls(Q=Q, **d)


def _feasibility_margin(lam: float) -> float:
    return 1e-8 * (1.0 + abs(lam))


def _floor_curvature(h: np.ndarray) -> np.ndarray:
    # rank-deficient R can zero out a class curvature; keep divisions finite
    floor = 1e-12 * max(1.0, float(h.max(initial=0.0)))
    return np.maximum(h, floor)


def inner_sca_q_update(obj: Objective, anchor, rho: float, config: SolverConfig,
                       Q_init: np.ndarray):
    """Minimize ``f(Q) + rho/2 ||Q - anchor||^2`` over the structured
    subspace with ``Q + lam I`` positive definite.

    Separable quadratic model per independent variable, Newton-style step
    with the ``q >= -lam`` bound on diagonal-bearing classes, Armijo
    backtracking with a Cholesky feasibility check.  Terminates when the
    model gradient norm drops below ``sqrt(I) eta``.

    Returns ``(Q, InnerInfo)``; ``Q_init`` must lie in the subspace with
    ``Q_init + lam I`` positive definite (otherwise NotPositiveDefinite).
    """
    s = obj.structure
    sqrt_i = np.sqrt(s.n_classes)
    Q = np.array(Q_init, dtype=np.complex128)
    val = obj.value(Q, rho, anchor)  # raises NotPositiveDefinite for infeasible starts
    grad_ref = np.inf
    grad_norm = np.inf
    iterations = 0
    converged = False

    for it in range(config.max_inner):
        point, grad = obj.point(Q, rho, anchor)
        g, h = partial_grad_hess(obj, rho=rho, point=point, grad=grad)
        grad_norm = float(np.linalg.norm(g))
        if config.eta is not None:
            eta = config.eta
        else:
            # auto tolerance referenced to the best gradient seen: cold starts
            # near the barrier have a transient gradient orders of magnitude
            # above the problem scale
            grad_ref = min(grad_ref, grad_norm)
            eta = 1e-6 * (1.0 + grad_ref / sqrt_i)
        if grad_norm <= sqrt_i * eta:
            converged = True
            break
        h = _floor_curvature(h)
        q = s.extract(Q)
        q_new = q - g / h
        bounded = s.has_diagonal
        q_new[bounded] = np.maximum(-obj.lam, q_new[bounded].real)
        delta = s.assemble(q_new) - Q
        descent = float(np.vdot(grad, delta).real)
        if descent >= 0:
            converged = True  # no descent direction left within rounding
            break
        alpha = 1.0
        accepted = False
        slack = 4 * np.finfo(float).eps * max(1.0, abs(val))
        for _ in range(config.max_backtracks):
            Q_try = Q + alpha * delta
            try:
                val_try = obj.value(Q_try, rho, anchor)
            except NotPositiveDefinite:
                alpha *= config.armijo_beta
                continue
            if val_try <= val + alpha * config.armijo_sigma * descent + slack:
                accepted = True
                break
            alpha *= config.armijo_beta
        if not accepted:
            break
        Q, val = Q_try, val_try
        iterations = it + 1
    else:
        # hit the iteration cap: report the gradient at the returned point
        g, _ = partial_grad_hess(obj, Q, rho=rho, anchor=anchor)
        grad_norm = float(np.linalg.norm(g))

    return Q, InnerInfo(iterations=iterations, grad_norm=grad_norm,
                        converged=converged, value=val)


def update_penalty(rho: float, pri_norm: float, dual_norm: float,
                   config: SolverConfig, t: int):
    """Adaptive penalty: grow when the primal residual dominates, shrink
    when the dual does; frozen after ``t_max`` iterations.  Returns the new
    penalty and the rescaling factor for the scaled dual variable."""
    if t < config.t_max:
        if pri_norm > config.kappa * dual_norm:
            return rho * config.tau_incr, 1.0 / config.tau_incr
        if dual_norm > config.kappa * pri_norm:
            return rho / config.tau_decr, config.tau_decr
    return rho, 1.0


def _initial_structured_point(obj: Objective, require: str) -> np.ndarray:
    """Project the unconstrained stationary point ``sqrt(M) R^{1/2} - lam I``
    onto the structured subspace and lift it to feasibility.

    ``require`` selects the feasibility notion: "barrier" keeps the
    (selected) ``Q + lam I`` positive definite, "psd" keeps ``Q`` itself PSD.
    """
    M, lam = obj.M, obj.lam
    root = np.sqrt(M) * psd_sqrt(obj.R)
    if obj.selection is None:
        Q1 = root - lam * np.eye(M)
    else:
        Q1 = np.zeros((M, M), dtype=np.complex128)
        Q1[np.ix_(obj.selection, obj.selection)] = root
        Q1 -= lam * np.eye(M)
    Q0 = obj.structure.project(Q1)
    margin = _feasibility_margin(lam)
    if require == "barrier":
        lmin = float(np.linalg.eigvalsh(obj._sub(Q0)).min())
        iota = max(0.0, lam + margin - lmin)
    else:
        lmin = float(np.linalg.eigvalsh(Q0).min())
        iota = max(0.0, margin - lmin)
    return Q0 + iota * np.eye(M)


def solve_admm(obj: Objective, config: SolverConfig | None = None,
               callback=None) -> SolverReport:
    """Constraint-splitting solver (structured subspace vs. PSD cone).

    First solves the PSD-relaxed problem; when that solution is already
    PSD it is returned without any splitting iterations.  Otherwise the
    scaled-dual iteration alternates the structured proximal subproblem,
    the PSD projection and the dual update, with adaptive penalty and an
    absolute-plus-relative residual stopping rule.

    Raises NotPositiveDefinite when ``R`` is not strictly positive
    definite (diagonally load it first in the undersampled case).
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    try:
        cho_factor(obj.R, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NotPositiveDefinite(
            "sample covariance must be strictly positive definite; apply "
            "diagonal loading in the undersampled case") from exc

    M = obj.M
    Q0 = _initial_structured_point(obj, require="barrier")
    Q, inner = inner_sca_q_update(obj, None, 0.0, config, Q0)
    inner_total = inner.iterations
    eigs = np.linalg.eigvalsh(Q)
    psd_tol = 1e-8 * max(1.0, float(np.abs(eigs).max()))
    if eigs.min() >= -psd_tol:
        # PSD constraint inactive: the relaxed solution is optimal
        return SolverReport(
            Q=Q, method="admm", lam=obj.lam, converged=inner.converged,
            iterations=0, inner_iterations=inner_total,
            objective=obj.value(Q), grad_norm=inner.grad_norm,
            rho_final=0.0, relaxed_solution=True,
            min_eigenvalue=float(eigs.min()),
            wall_time_s=time.perf_counter() - t0)

    Z = psd_project(Q)
    U = Q - Z
    rho = config.rho0
    pri_trace, dual_trace = [], []
    converged = False
    grad_norm = inner.grad_norm
    iterations = 0
    for t in range(config.max_outer):
        Q, inner = inner_sca_q_update(obj, Z - U, rho, config, Q)
        inner_total += inner.iterations
        grad_norm = inner.grad_norm
        Z_old = Z
        Z = psd_project(Q + U)
        U = U + Q - Z
        pri = float(np.linalg.norm(Q - Z))
        dual = float(rho * np.linalg.norm(Z - Z_old))
        pri_trace.append(pri)
        dual_trace.append(dual)
        iterations = t + 1
        if callback is not None:
            callback(t=t, Q=Q, Z=Z, U=U, rho=rho, primal=pri, dual=dual)
        eps_pri = M * config.eps_abs + config.eps_rel * max(np.linalg.norm(Q),
                                                            np.linalg.norm(Z))
        eps_dual = M * config.eps_abs + config.eps_rel * rho * np.linalg.norm(U)
        if pri <= eps_pri and dual <= eps_dual:
            converged = True
            break
        rho, u_scale = update_penalty(rho, pri, dual, config, t)
        if u_scale != 1.0:
            U = U * u_scale

    eigs = np.linalg.eigvalsh(Q)
    return SolverReport(
        Q=Q, method="admm", lam=obj.lam, converged=converged,
        iterations=iterations, inner_iterations=inner_total,
        objective=obj.value(Q), grad_norm=grad_norm,
        primal_residuals=pri_trace, dual_residuals=dual_trace,
        rho_final=rho, relaxed_solution=False,
        min_eigenvalue=float(eigs.min()),
        wall_time_s=time.perf_counter() - t0)


def _solve_separable_model(obj: Objective, q_ref: np.ndarray, g: np.ndarray,
                           h: np.ndarray, Q_start: np.ndarray,
                           config: SolverConfig):
    """Minimize the separable quadratic model over (PSD cone intersected
    with the structured subspace) by Dykstra-style splitting.

    The subspace-side update is closed form per class; tolerances are ten
    times tighter than the outer loop so inexact projections do not
    dominate the outer error.
    """
    s = obj.structure
    M = s.M
    rho = config.rho0
    Q = np.array(Q_start)
    Z = psd_project(Q)
    U = Q - Z
    eps_abs, eps_rel = 0.1 * config.eps_abs, 0.1 * config.eps_rel
    iterations = 0
    converged = False
    for l in range(config.max_inner_admm):
        b = s.class_sums(Z - U)
        b[s.is_real] = b[s.is_real].real
        q_new = (h * q_ref - g + s.factor * rho * b) / (h + s.factor * rho * s.sizes)
        q_new[s.is_real] = q_new[s.is_real].real
        Q = s.assemble(q_new)
        Z_old = Z
        Z = psd_project(Q + U)
        U = U + Q - Z
        pri = float(np.linalg.norm(Q - Z))
        dual = float(rho * np.linalg.norm(Z - Z_old))
        iterations = l + 1
        eps_pri = M * eps_abs + eps_rel * max(np.linalg.norm(Q), np.linalg.norm(Z))
        eps_dual = M * eps_abs + eps_rel * rho * np.linalg.norm(U)
        if pri <= eps_pri and dual <= eps_dual:
            converged = True
            break
        rho, u_scale = update_penalty(rho, pri, dual, config, l)
        if u_scale != 1.0:
            U = U * u_scale
    return Q, iterations, converged


def separable_model_argmin(q_ref, g, h, b_sum, size, factor, rho, is_real):
    """Closed-form minimizer of one class of the inner splitting step:

        Re(g* (q - q_ref)) + h/2 |q - q_ref|^2 + factor * rho/2 * avg-term

    with ``b_sum`` the sum of the anchor entries over the class positions.
    Exposed separately so the closed form can be checked against a generic
    quadratic minimizer.
    """
    q = (h * q_ref - g + factor * rho * b_sum) / (h + factor * rho * size)
    return q.real if is_real else q


def solve_sca(obj: Objective, config: SolverConfig | None = None,
              callback=None) -> SolverReport:
    """Separable-approximation solver operating directly on the constrained
    problem.  Does not require strict positive definiteness of ``R``.

    Each outer step builds the diagonal quadratic model of ``f`` at the
    current point, solves it over the constraint intersection with the
    inner splitting loop, and takes an Armijo step along the resulting
    direction (feasible by convexity).  Stops when the iterate change
    drops below ``M eps_abs + eps_rel ||Q||``.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    M = obj.M
    s = obj.structure
    Q = _initial_structured_point(obj, require="psd")
    f_val = obj.value(Q)
    step_trace = []
    inner_total = 0
    converged = False
    grad_norm = np.inf
    iterations = 0
    for t in range(config.max_outer):
        point, grad = obj.point(Q)
        g, h = partial_grad_hess(obj, point=point, grad=grad)
        grad_norm = float(np.linalg.norm(g))
        h = _floor_curvature(h)
        q_ref = s.extract(Q)
        Q_model, n_inner, _ = _solve_separable_model(obj, q_ref, g, h, Q, config)
        inner_total += n_inner
        delta = Q_model - Q
        descent = float(np.vdot(grad, delta).real)
        if descent >= 0 or np.linalg.norm(delta) <= 1e-15 * (1 + np.linalg.norm(Q)):
            converged = True
            break
        alpha = 1.0
        accepted = False
        slack = 4 * np.finfo(float).eps * max(1.0, abs(f_val))
        for _ in range(config.max_backtracks):
            Q_try = Q + alpha * delta
            try:
                val_try = obj.value(Q_try)
            except NotPositiveDefinite:
                alpha *= config.armijo_beta
                continue
            if val_try <= f_val + alpha * config.armijo_sigma * descent + slack:
                accepted = True
                break
            alpha *= config.armijo_beta
        if not accepted:
            break
        prev_norm = np.linalg.norm(Q)
        step = float(alpha * np.linalg.norm(delta))
        step_trace.append(step)
        Q = Q_try
        f_val = val_try
        iterations = t + 1
        if callback is not None:
            callback(t=t, Q=Q, step=step, value=f_val)
        if step <= M * config.eps_abs + config.eps_rel * prev_norm:
            converged = True
            break

    eigs = np.linalg.eigvalsh(Q)
    return SolverReport(
        Q=Q, method="sca", lam=obj.lam, converged=converged,
        iterations=iterations, inner_iterations=inner_total,
        objective=f_val, grad_norm=grad_norm, step_norms=step_trace,
        rho_final=config.rho0, relaxed_solution=False,
        min_eigenvalue=float(eigs.min()),
        wall_time_s=time.perf_counter() - t0)
