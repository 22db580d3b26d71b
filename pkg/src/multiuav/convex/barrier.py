"""Feasible-start log-barrier method for small dense convex programs.

The program is::

    maximize f(x)  subject to  g_i(x) <= 0

with ``f`` concave and every ``g_i`` convex. Constraints come in vectorised
blocks that report values, a Jacobian and the weighted sum of their
Hessians, so Newton systems are assembled without per-row Python loops.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .outcome import MAX_ITERS, NUMERIC_FAILURE, OPTIMAL, TOL_FEAS, TOL_KKT, SolveOutcome

log = logging.getLogger(__name__)

KINDS = ("affine", "quadratic", "logsum")


@dataclass
class ConstraintBlock:
    """A family of convex constraints ``fun(x) <= 0``.

    ``fun`` returns an (m,) array (``inf`` outside the domain), ``jac`` an
    (m, n) dense or sparse matrix and ``hess(x, w)`` the matrix
    ``sum_i w_i * Hessian(g_i)(x)`` (omit for affine blocks).
    """

    kind: str
    fun: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], object]
    hess: Callable[[np.ndarray, np.ndarray], object] | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind != "affine" and self.hess is None:
            raise ValueError(f"{self.kind} block {self.name!r} needs a Hessian")


def affine_block(A, b, name: str = "") -> ConstraintBlock:
    """``A x - b <= 0``."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    return ConstraintBlock("affine", lambda x: A @ x - b, lambda x: A, None, name)


@dataclass
class Objective:
    """Concave objective; ``hess`` (negative semidefinite) may be omitted when zero."""

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], object] | None = None


def linear_objective(c) -> Objective:
    c = np.asarray(c, dtype=float)
    return Objective(lambda x: float(c @ x), lambda x: c)


@dataclass
class SmoothConvexProgram:
    objective: Objective
    constraints: list[ConstraintBlock]
    start: np.ndarray
    layout: dict[str, slice] = field(default_factory=dict)

    @property
    def num_vars(self) -> int:
        return self.start.size

    def values(self, x) -> np.ndarray:
        if not self.constraints:
            return np.zeros(0)
        return np.concatenate([np.atleast_1d(b.fun(x)) for b in self.constraints])

    def max_violation(self, x) -> float:
        g = self.values(x)
        return float(g.max()) if g.size else -np.inf


def _dense(mat, n):
    if mat is None:
        return None
    if sp.issparse(mat):
        return mat.toarray()
    return np.asarray(mat, dtype=float).reshape(-1, n)


def check_gradients(prog: SmoothConvexProgram, x, rel_tol: float = 1e-4,
                    step: float = 1e-6) -> float:
    """Largest relative gap between block Jacobians and central differences."""
    x = np.asarray(x, dtype=float)
    worst = 0.0
    funcs = [(lambda z, b=b: np.atleast_1d(b.fun(z)), lambda z, b=b: _dense(b.jac(z), x.size))
             for b in prog.constraints]
    funcs.append((lambda z: np.atleast_1d(prog.objective.value(z)),
                  lambda z: np.atleast_1d(prog.objective.grad(z))[None, :]))
    for fun, jac in funcs:
        analytic = jac(x)
        numeric = np.empty_like(analytic)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = step * max(1.0, abs(x[i]))
            numeric[:, i] = (fun(x + e) - fun(x - e)) / (2 * e[i])
        scale = np.maximum(np.abs(numeric), 1e-3 * max(1.0, np.abs(numeric).max()))
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / scale)))
    if worst > rel_tol:
        log.warning("gradient check failed: relative error %.3g", worst)
    return worst


DENSE_LIMIT = 4_000_000  # Jacobians up to this many entries are densified


class _Linear:
    """Cached form of an affine block's constant Jacobian."""

    def __init__(self, A, n):
        A = sp.csr_matrix(A) if sp.issparse(A) else sp.csr_matrix(np.asarray(A).reshape(-1, n))
        counts = np.diff(A.indptr)
        self.bound = bool(np.all(counts <= 1))
        if self.bound:
            # at most one variable per row: derivatives reduce to bincounts
            rows = np.repeat(np.arange(A.shape[0]), counts)
            self.rows, self.cols, self.vals = rows, A.indices.copy(), A.data.copy()
            self.n = n
        elif A.shape[0] * n <= DENSE_LIMIT:
            self.dense = A.toarray()
        else:
            self.sparse = A

    def add(self, inv, grad, H):
        if self.bound:
            w = inv[self.rows]
            grad += np.bincount(self.cols, self.vals * w, minlength=self.n)
            H[np.diag_indices_from(H)] += np.bincount(self.cols, (self.vals * w) ** 2,
                                                      minlength=self.n)
        elif hasattr(self, "dense"):
            J = self.dense
            grad += J.T @ inv
            H += (J.T * inv ** 2) @ J
        else:
            J = self.sparse
            grad += J.T @ inv
            H += (J.T @ J.multiply((inv ** 2)[:, None])).toarray()


class _Barrier:
    """phi_t(x) = -t f(x) - sum log(-g(x)) and its derivatives."""

    def __init__(self, prog: SmoothConvexProgram):
        self.prog = prog
        self.n = prog.num_vars
        self.linear = {}
        for i, block in enumerate(prog.constraints):
            if block.kind == "affine":
                self.linear[i] = _Linear(block.jac(prog.start), self.n)

    def value(self, x, t):
        g = self.prog.values(x)
        if g.size and not np.all(g < 0):
            return np.inf
        f = self.prog.objective.value(x)
        if not np.isfinite(f):
            return np.inf
        return -t * f - np.sum(np.log(-g))

    def derivatives(self, x, t):
        n = self.n
        obj = self.prog.objective
        grad = -t * np.asarray(obj.grad(x), dtype=float)
        H = np.zeros((n, n))
        if obj.hess is not None:
            H -= t * _dense(obj.hess(x), n)
        for i, block in enumerate(self.prog.constraints):
            g = np.atleast_1d(block.fun(x))
            inv = 1.0 / (-g)
            if i in self.linear:
                self.linear[i].add(inv, grad, H)
                continue
            J = block.jac(x)
            if sp.issparse(J) and J.shape[0] * n > DENSE_LIMIT:
                J = sp.csr_matrix(J)
                grad += J.T @ inv
                H += (J.T @ J.multiply((inv ** 2)[:, None])).toarray()
            else:
                J = _dense(J, n)
                grad += J.T @ inv
                H += (J.T * inv ** 2) @ J
            if block.hess is not None:
                Hb = block.hess(x, inv)
                H += Hb.toarray() if sp.issparse(Hb) else Hb
        return grad, H


def _newton_direction(grad, H):
    n = grad.size
    diag = np.abs(np.diag(H))
    reg = 0.0
    base = max(float(diag.max()) if n else 1.0, 1e-300)
    for _ in range(6):
        try:
            c = la.cho_factor(H + reg * np.eye(n), check_finite=False)
            d = -la.cho_solve(c, grad, check_finite=False)
            if np.all(np.isfinite(d)):
                return d, True
        except (la.LinAlgError, ValueError):
            pass
        reg = base * 1e-14 if reg == 0.0 else reg * 100.0
    # ill-conditioned: fall back to a scaled gradient step
    scale = np.where(diag > 0, diag, 1.0)
    return -grad / scale, False


def _center(barrier: _Barrier, x, t, max_steps, stop=None):
    """Newton centering for phi_t starting from a strictly feasible x."""
    steps = 0
    phi = barrier.value(x, t)
    lam2 = prev_lam2 = np.inf
    while steps < max_steps:
        grad, H = barrier.derivatives(x, t)
        d, newton = _newton_direction(grad, H)
        slope = float(grad @ d)
        if slope >= 0:
            # numerically flat
            return x, steps, 0.0, grad
        lam2 = -slope
        if newton and lam2 / 2 <= 1e-10:
            return x, steps, lam2, grad
        if newton and lam2 < 1e-6 and lam2 > 0.5 * prev_lam2:
            return x, steps, lam2, grad  # Newton no longer contracting: round-off floor
        prev_lam2 = lam2
        if newton and lam2 < 0.1:
            # quadratic-convergence region: take the full step, whose phi
            # change may already be below round-off at large t
            xn = x + d
            phin = barrier.value(xn, t)
            if np.isfinite(phin):
                x, phi = xn, phin
                steps += 1
                continue
        s = 1.0
        while True:
            xn = x + s * d
            phin = barrier.value(xn, t)
            if phin <= phi + 0.01 * s * slope:
                break
            s *= 0.5
            if s < 1e-14:
                return x, steps, lam2, grad
        stalled = lam2 < 1e-6 and phi - phin <= 1e-15 * max(1.0, abs(phi))
        x, phi = xn, phin
        steps += 1
        if stalled:
            # round-off floor reached; further steps cannot improve phi
            return x, steps, lam2, grad
        if stop is not None and stop(x):
            return x, steps, lam2, grad
    grad, _ = barrier.derivatives(x, t)
    return x, steps, lam2, grad


def _kkt_residual(prog: SmoothConvexProgram, x, t) -> float:
    """Stationarity of the Lagrangian with multipliers 1/(-t g), relative to
    the size of its terms."""
    n = prog.num_vars
    gf = np.asarray(prog.objective.grad(x), dtype=float)
    total = -gf.copy()
    size = np.abs(gf)
    for block in prog.constraints:
        lam = 1.0 / (-t * np.atleast_1d(block.fun(x)))
        J = block.jac(x)
        J = sp.csr_matrix(J) if sp.issparse(J) else np.asarray(J, dtype=float).reshape(-1, n)
        total += J.T @ lam
        size = np.maximum(size, abs(J).T @ lam)
    return float(np.max(np.abs(total)) / max(1.0, float(size.max())))


def _phase_one(prog: SmoothConvexProgram, x0, radius, max_steps):
    """Find x with max g(x) < 0 inside the box |x - x0| <= radius."""
    n = prog.num_vars
    s0 = max(prog.max_violation(x0), 0.0) + 1.0

    def shifted(block):
        def fun(z):
            return np.atleast_1d(block.fun(z[:n])) - z[n]

        def jac(z):
            J = block.jac(z[:n])
            m = np.atleast_1d(block.fun(z[:n])).size
            if sp.issparse(J):
                return sp.hstack([J, -np.ones((m, 1))], format="csr")
            return np.hstack([np.asarray(J).reshape(m, n), -np.ones((m, 1))])

        if block.kind == "affine":
            # constant Jacobian: build the shifted matrix once
            J0 = jac(np.zeros(n + 1))
            jac = lambda z, J0=J0: J0  # noqa: E731

        hess = None
        if block.hess is not None:
            def hess(z, w):
                Hb = block.hess(z[:n], w)
                if sp.issparse(Hb):
                    return sp.block_diag([Hb, sp.csr_matrix((1, 1))], format="csr")
                out = np.zeros((n + 1, n + 1))
                out[:n, :n] = Hb
                return out
        return ConstraintBlock(block.kind, fun, jac, hess, block.name)

    box = sp.vstack([sp.hstack([sp.identity(n), sp.csr_matrix((n, 1))]),
                     sp.hstack([-sp.identity(n), sp.csr_matrix((n, 1))])], format="csr")
    bbox = np.concatenate([x0 + radius, radius - x0])
    c = np.zeros(n + 1)
    c[n] = -1.0
    aux = SmoothConvexProgram(linear_objective(c),
                              [shifted(b) for b in prog.constraints] + [affine_block(box, bbox)],
                              np.append(x0, s0))
    barrier = _Barrier(aux)
    z = aux.start.copy()
    t = 1.0
    steps = 0

    def done(zz):
        return prog.max_violation(zz[:n]) < 0

    for _ in range(60):
        z, k, _, _ = _center(barrier, z, t, max_steps, stop=done)
        steps += k
        if done(z):
            return z[:n], steps
        if aux.values(z).size / t < 1e-10:
            break
        t *= 10.0
    return None, steps


def solve_smooth(prog: SmoothConvexProgram, *, gap_tol: float = 1e-8,
                 certified_gap_tol: float = 1e-6, tol_feas: float = TOL_FEAS, tol_kkt: float = TOL_KKT, mu: float = 4.0,
                 max_newton: int = 400, phase_one_radius: float = 1.0,
                 debug: bool = False) -> SolveOutcome:
    """Maximise a concave objective from a feasible start point.

    The returned point is never worse than the start: if the barrier path
    ends below ``f(start)`` the start is returned instead. When round-off
    keeps the final point from meeting ``tol_kkt``, the last point that did
    is returned if its duality gap is within ``certified_gap_tol``.
    """
    x0 = np.asarray(prog.start, dtype=float).copy()
    g0 = prog.values(x0)
    if g0.size and not np.all(np.isfinite(g0)):
        raise ValueError("start point lies outside a constraint's domain")
    if g0.size and g0.max() > tol_feas:
        raise ValueError(f"start point violates constraints by {g0.max():.3g}")
    if debug:
        check_gradients(prog, x0)
    f0 = prog.objective.value(x0)
    m = g0.size

    def fallback(status, its, msg):
        return SolveOutcome(status, x0, f0, its, np.nan, msg)

    if m == 0:
        return fallback(OPTIMAL, 0, "unconstrained problem returned at start")

    x, iterations = x0, 0
    if g0.max() >= 0:
        x, iterations = _phase_one(prog, x0, phase_one_radius, max_newton)
        if x is None:
            return fallback(MAX_ITERS, iterations, "no strictly feasible point near the start")

    barrier = _Barrier(prog)
    t = max(1.0, m / max(1.0, abs(prog.objective.value(x))))
    status = MAX_ITERS
    certified = None  # latest centred point meeting the KKT tolerance
    while True:
        x, k, lam2, grad = _center(barrier, x, t, max_newton)
        iterations += k
        residual = _kkt_residual(prog, x, t)
        if residual <= tol_kkt and prog.max_violation(x) <= tol_feas:
            certified = (x, residual, t)
        if m / t <= gap_tol:
            status = OPTIMAL
            break
        if iterations > 20 * max_newton:
            break
        t *= mu

    f = prog.objective.value(x)
    if status == OPTIMAL and residual > tol_kkt:
        # at very large t the multipliers 1/(-t g) lose digits to round-off in
        # g; fall back to the last certified point if it is within the gap
        if certified is not None and (
                m / certified[2] <= certified_gap_tol * max(1.0, abs(f))
                or prog.objective.value(certified[0]) >= f - gap_tol * max(1.0, abs(f))):
            x, residual, _ = certified
            f = prog.objective.value(x)
        else:
            status = MAX_ITERS
    viol = prog.max_violation(x)
    if not np.isfinite(f) or viol > tol_feas:
        return fallback(NUMERIC_FAILURE, iterations, "barrier iterate left the feasible set")
    if f < f0:
        return fallback(status, iterations, "barrier point below start; start kept")
    return SolveOutcome(status, x, f, iterations, residual)
