"""Solvers for lp-mixed-norm multiple kernel learning.

The estimator minimizes

    (1/n) ||y - sum_m f_m||_n^2 + lambda1 (sum_m ||f_m||_Hm^p)^(2/p)

over functions f_m in the m-th RKHS. By the representer theorem each f_m
lives in the span of its kernel sections at the data, and the substitution
beta_m = S_m alpha_m with S_m the symmetric PSD square root of the Gram
matrix K_m turns the RKHS norm into the Euclidean norm of beta_m. Two
routes are implemented:

* ``solve_theta_path``: for 1 <= p <= 2, alternate a ridge solve with the
  weighted kernel k_theta = sum_m theta_m k_m against the closed-form
  update of the weights theta under sum_m theta_m^(p/(2-p)) = 1.
* ``solve_direct``: accelerated proximal gradient on the beta blocks. For
  p <= 2 the proximal step of the squared mixed norm is computed exactly;
  for p > 2 the block norms are smoothed by ||b|| -> sqrt(||b||^2 + eps^2)
  with eps annealed from 1e-3 down to 1e-10.

``solve`` dispatches: p <= 2 to the alternating path (with a theta floor
at p = 1), p > 2 to the first-order route.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .kernels import GramMatrix, gram_eigh, load_gram_csv

_THETA_FLOOR = 1e-12


class UnsupportedFormulationError(ValueError):
    """The kernel-weight formulation does not cover the requested p."""


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and budgets shared by both solver routes.

    Termination triggers when the relative objective decrease stays below
    ``tol_sweep`` (kernel-weight sweeps) or ``tol_step`` (first-order
    steps) for a short run of iterations. The defaults are tight enough
    that the two routes reproduce each other's fitted values to well under
    1e-5 in sup norm on small problems.
    """

    tol_sweep: float = 1e-14
    tol_step: float = 1e-13
    max_sweeps: int = 50_000
    max_steps: int = 50_000
    eps_start: float = 1e-3
    eps_end: float = 1e-10


@dataclass(frozen=True)
class MklProblem:
    y: np.ndarray
    grams: list[GramMatrix]
    p: float
    lambda1: float

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "y", y)
        if not self.grams:
            raise ValueError("at least one Gram matrix is required")
        for g in self.grams:
            if g.n != y.size:
                raise ValueError(
                    f"Gram matrix is {g.n}x{g.n} but y has {y.size} entries"
                )
        if not np.isfinite(self.p) or self.p < 1:
            raise ValueError(f"p must be a finite real >= 1, got {self.p}")
        if self.lambda1 <= 0:
            raise ValueError(f"lambda1 must be positive, got {self.lambda1}")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def M(self) -> int:
        return len(self.grams)


@dataclass(frozen=True)
class MklSolution:
    """Solver output in the square-root parameterization.

    ``beta_blocks[m]`` holds the coefficients of f_m with respect to S_m,
    so ``block_norms[m] = ||beta_blocks[m]||`` is the RKHS norm of f_m.
    ``coef_blocks[m]`` are the equivalent representer coefficients c_m
    (f_m(x) = sum_i c_{m,i} k_m(x_i, x)), kept for out-of-sample use.
    ``theta`` is present when the kernel-weight path produced the solution.
    """

    beta_blocks: list[np.ndarray]
    block_norms: np.ndarray
    theta: Optional[np.ndarray]
    objective: float
    fitted: np.ndarray
    iterations: int
    converged: bool
    coef_blocks: list[np.ndarray] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Objective pieces
# ---------------------------------------------------------------------------


def mixed_norm_sq(norms: np.ndarray, p: float) -> float:
    """(sum_m norms[m]^p)^(2/p)."""
    norms = np.asarray(norms, dtype=float)
    total = float((norms**p).sum())
    return total ** (2.0 / p)


def objective_value(problem: MklProblem, beta_blocks: Sequence[np.ndarray]) -> float:
    """Evaluate the mixed-norm objective at arbitrary beta blocks."""
    if len(beta_blocks) != problem.M:
        raise ValueError(f"expected {problem.M} blocks, got {len(beta_blocks)}")
    prep = _prepare(problem)
    beta = np.vstack([np.asarray(b, dtype=float).ravel() for b in beta_blocks])
    if beta.shape[1] != problem.n:
        raise ValueError("block length does not match the sample size")
    fitted = np.einsum("mij,mj->i", prep.sqrts, beta)
    return _objective_from_parts(problem, fitted, np.linalg.norm(beta, axis=1))


def _objective_from_parts(problem: MklProblem, fitted: np.ndarray, norms: np.ndarray) -> float:
    resid = problem.y - fitted
    return float(resid @ resid) / problem.n + problem.lambda1 * mixed_norm_sq(norms, problem.p)


# ---------------------------------------------------------------------------
# Shared preparation: eigendecompositions and symmetric square roots
# ---------------------------------------------------------------------------


@dataclass
class _Prepared:
    ks: np.ndarray  # (M, n, n) Gram values
    sqrts: np.ndarray  # (M, n, n) symmetric PSD square roots
    eig_w: list[np.ndarray]
    eig_u: list[np.ndarray]

    @property
    def loss_lipschitz_bound(self) -> float:
        n = self.ks.shape[1]
        return (2.0 / n) * sum(float(w[-1]) for w in self.eig_w)


def _prepare(problem: MklProblem) -> _Prepared:
    # gram_eigh validates positive semidefiniteness as a side effect.
    sqrts, ws, us = [], [], []
    for g in problem.grams:
        w, u = gram_eigh(g)
        s = (u * np.sqrt(w)) @ u.T
        sqrts.append((s + s.T) / 2.0)
        ws.append(w)
        us.append(u)
    ks = np.stack([g.values for g in problem.grams])
    return _Prepared(ks=ks, sqrts=np.stack(sqrts), eig_w=ws, eig_u=us)


def _representer_coefficients(prep: _Prepared, beta: np.ndarray, rtol: float = 1e-12) -> list[np.ndarray]:
    """Map beta blocks to representer coefficients c_m with S_m c_m = beta_m."""
    coefs = []
    for m in range(beta.shape[0]):
        w, u = prep.eig_w[m], prep.eig_u[m]
        inv_sqrt = np.where(w > rtol * max(w[-1], 1e-300), 1.0 / np.sqrt(np.clip(w, 1e-300, None)), 0.0)
        coefs.append((u * inv_sqrt) @ (u.T @ beta[m]))
    return coefs


def _build_solution(
    problem: MklProblem,
    prep: _Prepared,
    beta: np.ndarray,
    theta: Optional[np.ndarray],
    iterations: int,
    converged: bool,
    coef_blocks: Optional[list[np.ndarray]] = None,
) -> MklSolution:
    fitted = np.einsum("mij,mj->i", prep.sqrts, beta)
    norms = np.linalg.norm(beta, axis=1)
    if coef_blocks is None:
        coef_blocks = _representer_coefficients(prep, beta)
    return MklSolution(
        beta_blocks=[beta[m].copy() for m in range(problem.M)],
        block_norms=norms,
        theta=None if theta is None else np.asarray(theta, dtype=float),
        objective=_objective_from_parts(problem, fitted, norms),
        fitted=fitted,
        iterations=iterations,
        converged=converged,
        coef_blocks=coef_blocks,
    )


# ---------------------------------------------------------------------------
# Kernel-weight (theta) path, 1 <= p <= 2
# ---------------------------------------------------------------------------


def theta_update(block_norms: Sequence[float], p: float) -> np.ndarray:
    """Closed-form optimal kernel weights for fixed block norms.

    Minimizes sum_m a_m / theta_m over the constraint set
    {theta >= 0, sum_m theta_m^q = 1}, q = p/(2-p), where a_m is the
    squared block norm. Weights are floored at 1e-12 and renormalized.
    """
    if not 1.0 <= p < 2.0:
        raise ValueError(f"theta_update requires 1 <= p < 2, got {p}")
    norms = np.asarray(block_norms, dtype=float)
    if norms.size == 0 or np.any(norms < 0) or not np.all(np.isfinite(norms)):
        raise ValueError("block norms must be a nonempty nonnegative sequence")
    a = norms**2
    q = p / (2.0 - p)
    if not np.any(a > 0):
        theta = np.full(a.size, a.size ** (-1.0 / q))
    else:
        theta = a ** (1.0 / (q + 1.0)) / (a ** (q / (q + 1.0))).sum() ** (1.0 / q)
    theta = np.maximum(theta, _THETA_FLOOR)
    return theta / (theta**q).sum() ** (1.0 / q)


def _ridge_solve(k: np.ndarray, y: np.ndarray, shift: float) -> np.ndarray:
    a = k + shift * np.eye(k.shape[0])
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(a, lower=True), y)
    except scipy.linalg.LinAlgError:
        return np.linalg.solve(a, y)


def _theta_path_core(
    ks: np.ndarray, y: np.ndarray, p: float, lam: float, opts: SolverOptions
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, bool]:
    """Alternating minimization; returns (alpha, theta, block_norms, sweeps, converged)."""
    n = y.size
    m_count = ks.shape[0]
    if p == 2.0:
        theta = np.ones(m_count)
        alpha = _ridge_solve(ks.sum(axis=0), y, n * lam)
        norms = np.sqrt(np.clip(np.einsum("i,mij,j->m", alpha, ks, alpha), 0.0, None))
        return alpha, theta, norms, 1, True

    q = p / (2.0 - p)
    theta = np.full(m_count, m_count ** (-1.0 / q))
    prev_obj = np.inf
    alpha = np.zeros(n)
    norms = np.zeros(m_count)
    converged = False
    sweeps = 0
    stall = 0
    for sweeps in range(1, opts.max_sweeps + 1):
        k_theta = np.einsum("m,mij->ij", theta, ks)
        alpha = _ridge_solve(k_theta, y, n * lam)
        resid = y - k_theta @ alpha
        a = np.clip(theta**2 * np.einsum("i,mij,j->m", alpha, ks, alpha), 0.0, None)
        norms = np.sqrt(a)
        obj = float(resid @ resid) / n + lam * mixed_norm_sq(norms, p)
        # two consecutive flat sweeps, so a single rounding plateau
        # cannot stop the alternation early
        stall = stall + 1 if prev_obj - obj <= opts.tol_sweep * max(1.0, abs(obj)) else 0
        if stall >= 2:
            converged = True
            break
        prev_obj = obj
        theta = theta_update(norms, p)
    return alpha, theta, norms, sweeps, converged


def solve_theta_path(problem: MklProblem, opts: SolverOptions | None = None) -> MklSolution:
    """Solve via the kernel-weight formulation (valid for 1 <= p <= 2 only)."""
    if problem.p > 2.0:
        raise UnsupportedFormulationError(
            f"the kernel-weight formulation requires 1 <= p <= 2; "
            f"use solve() for p = {problem.p}"
        )
    opts = opts or SolverOptions()
    prep = _prepare(problem)
    alpha, theta, _, sweeps, converged = _theta_path_core(
        prep.ks, problem.y, problem.p, problem.lambda1, opts
    )
    beta = theta[:, None] * np.einsum("mij,j->mi", prep.sqrts, alpha)
    coefs = [theta[m] * alpha for m in range(problem.M)]
    return _build_solution(problem, prep, beta, theta, sweeps, converged, coefs)


# ---------------------------------------------------------------------------
# Proximal machinery for the direct route
# ---------------------------------------------------------------------------


def _prox_norms_p1(r: np.ndarray, t: float, lam: float) -> np.ndarray:
    # prox of lam * (sum_m c_m)^2 over c >= 0: water-filling on sorted radii.
    order = np.argsort(r)[::-1]
    rs = r[order]
    cum = np.cumsum(rs)
    ks = np.arange(1, r.size + 1)
    totals = cum / (1.0 + 2.0 * lam * t * ks)
    thresholds = 2.0 * lam * t * totals
    active = rs > thresholds
    k = int(np.nonzero(active)[0].max()) + 1 if np.any(active) else 0
    if k == 0:
        return np.zeros_like(r)
    tau = thresholds[k - 1]
    return np.maximum(r - tau, 0.0)


def _solve_block_equation(r: np.ndarray, nu: float, p: float) -> np.ndarray:
    # c + nu c^(p-1) = r per block, c in (0, r]. In c the left side is
    # concave (1 < p < 2) and Newton can overshoot to ~0 and stall, so
    # substitute u = c^(p-1): u^q + nu u = r with q = 1/(p-1) >= 1 is
    # convex, and Newton from u = r^(p-1) decreases monotonically to the
    # root with a quadratic rate.
    if nu <= 0:
        return r.copy()
    q = 1.0 / (p - 1.0)
    c = np.zeros_like(r)
    pos = r > 0
    rp = r[pos]
    u = rp ** (p - 1.0)
    for _ in range(200):
        uq = u ** (q - 1.0)
        f = uq * u + nu * u - rp
        step = f / (q * uq + nu)
        u = u - step
        if np.all(step <= 1e-16 * (1.0 + u)):
            break
    c[pos] = u**q
    return c


def _prox_norms(r: np.ndarray, t: float, lam: float, p: float) -> np.ndarray:
    """Minimize lam (sum c^p)^(2/p) + (1/2t) ||c - r||^2 over c >= 0."""
    if not np.any(r > 0):
        return np.zeros_like(r)
    if p == 2.0:
        return r / (1.0 + 2.0 * lam * t)
    if p == 1.0:
        return _prox_norms_p1(r, t, lam)
    # KKT: c_m + nu c_m^(p-1) = r_m with nu = 2 lam t (sum c^p)^((2-p)/p);
    # nu - 2 lam t A(nu)^((2-p)/p) is increasing, so bisect on nu.
    expo = (2.0 - p) / p
    nu_hi = 2.0 * lam * t * float((r**p).sum()) ** expo
    if nu_hi <= 0:
        return r.copy()
    nu_lo = 0.0
    c = r.copy()
    for _ in range(64):
        nu = 0.5 * (nu_lo + nu_hi)
        c = _solve_block_equation(r, nu, p)
        gap = nu - 2.0 * lam * t * float((c**p).sum()) ** expo
        if gap < 0:
            nu_lo = nu
        else:
            nu_hi = nu
    return _solve_block_equation(r, 0.5 * (nu_lo + nu_hi), p)


def _prox_blocks(v: np.ndarray, t: float, lam: float, p: float) -> np.ndarray:
    r = np.linalg.norm(v, axis=1)
    c = _prox_norms(r, t, lam, p)
    scale = np.divide(c, r, out=np.zeros_like(r), where=r > 0)
    return v * scale[:, None]


def _smoothed_penalty(beta: np.ndarray, lam: float, p: float, eps: float) -> float:
    w = np.sqrt((beta**2).sum(axis=1) + eps * eps)
    return lam * float((w**p).sum()) ** (2.0 / p)


def _smoothed_penalty_grad(beta: np.ndarray, lam: float, p: float, eps: float) -> np.ndarray:
    w = np.sqrt((beta**2).sum(axis=1) + eps * eps)
    total = float((w**p).sum())
    return 2.0 * lam * total ** ((2.0 - p) / p) * (w ** (p - 2.0))[:, None] * beta


# ---------------------------------------------------------------------------
# Direct first-order route (any p >= 1)
# ---------------------------------------------------------------------------


def _fista(
    prep: _Prepared,
    y: np.ndarray,
    lam: float,
    p: float,
    beta0: np.ndarray,
    max_steps: int,
    tol: float,
    eps: float,
) -> tuple[np.ndarray, int, bool]:
    """Monotone accelerated proximal gradient with adaptive restart.

    With eps = 0 the penalty is handled through its exact prox (p <= 2);
    with eps > 0 the penalty is smoothed into the gradient and the prox
    step is the identity (p > 2 route).
    """
    n = y.size
    sqrts = prep.sqrts
    smooth_reg = eps > 0

    def fit_of(b: np.ndarray) -> np.ndarray:
        return np.einsum("mij,mj->i", sqrts, b)

    def loss_of(fit: np.ndarray) -> float:
        r = y - fit
        return float(r @ r) / n

    def total_of(b: np.ndarray, fit: np.ndarray) -> float:
        if smooth_reg:
            return loss_of(fit) + _smoothed_penalty(b, lam, p, eps)
        return loss_of(fit) + lam * mixed_norm_sq(np.linalg.norm(b, axis=1), p)

    def smooth_grad(b: np.ndarray, fit: np.ndarray) -> np.ndarray:
        g = -(2.0 / n) * np.einsum("mij,j->mi", sqrts, y - fit)
        if smooth_reg:
            g = g + _smoothed_penalty_grad(b, lam, p, eps)
        return g

    def smooth_val(b: np.ndarray, fit: np.ndarray) -> float:
        if smooth_reg:
            return loss_of(fit) + _smoothed_penalty(b, lam, p, eps)
        return loss_of(fit)

    def step_from(point: np.ndarray, lip: float) -> tuple[np.ndarray, np.ndarray, float]:
        fit_pt = fit_of(point)
        g = smooth_grad(point, fit_pt)
        h_pt = smooth_val(point, fit_pt)
        while True:
            cand = point - g / lip
            if not smooth_reg:
                cand = _prox_blocks(cand, 1.0 / lip, lam, p)
            fit_cand = fit_of(cand)
            diff = cand - point
            quad = h_pt + float((g * diff).sum()) + 0.5 * lip * float((diff * diff).sum())
            if smooth_val(cand, fit_cand) <= quad + 1e-14 * max(1.0, abs(quad)):
                return cand, fit_cand, lip
            lip *= 2.0
            if lip > 1e18:
                return cand, fit_cand, lip

    lip = max(prep.loss_lipschitz_bound, 1e-12)
    if smooth_reg:
        lip += 2.0 * lam * max(prep.ks.shape[0] ** (2.0 / p), 1.0) * eps ** min(p - 2.0, 0.0)

    x = beta0.copy()
    x_prev = x.copy()
    f_x = total_of(x, fit_of(x))
    t_momentum = 1.0
    stall = 0
    steps = 0
    for steps in range(1, max_steps + 1):
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_momentum * t_momentum))
        yk = x + ((t_momentum - 1.0) / t_next) * (x - x_prev)
        z, fit_z, lip = step_from(yk, lip)
        f_z = total_of(z, fit_z)
        if f_z > f_x:
            # momentum overshoot: restart from the current iterate
            z, fit_z, lip = step_from(x, lip)
            f_z = total_of(z, fit_z)
            t_next = 1.0
            if f_z > f_x:  # no descent possible at this scale
                stall += 1
                z, f_z = x, f_x
        decrease = f_x - f_z
        if decrease <= tol * max(1.0, abs(f_z)):
            stall += 1
        else:
            stall = 0
        x_prev, x, f_x = x, z, f_z
        t_momentum = t_next
        lip = max(lip * 0.95, 1e-12)
        if stall >= 5:
            return x, steps, True
    return x, steps, False


def solve_direct(problem: MklProblem, opts: SolverOptions | None = None) -> MklSolution:
    """First-order solver on the penalized objective itself, any p >= 1.

    This is the route ``solve`` uses for p > 2; for p <= 2 it serves as an
    independent cross-check of the kernel-weight path.
    """
    opts = opts or SolverOptions()
    prep = _prepare(problem)
    n, m_count = problem.n, problem.M
    beta = np.zeros((m_count, n))
    lam, p = problem.lambda1, problem.p

    if p <= 2.0:
        beta, steps, converged = _fista(
            prep, problem.y, lam, p, beta, opts.max_steps, opts.tol_step, eps=0.0
        )
        total_steps = steps
    else:
        # Annealed smoothing: polish each stage, tighten on the last.
        stages = 1 + max(1, int(round(np.log10(opts.eps_start / opts.eps_end))))
        eps_values = np.geomspace(opts.eps_start, opts.eps_end, stages)
        total_steps = 0
        converged = False
        for i, eps in enumerate(eps_values):
            last = i == len(eps_values) - 1
            budget = opts.max_steps - total_steps
            if budget <= 0:
                converged = False
                break
            stage_budget = budget if last else max(200, budget // (2 * (len(eps_values) - i)))
            tol = opts.tol_step if last else max(opts.tol_step, 1e-9)
            beta, steps, converged = _fista(
                prep, problem.y, lam, p, beta, stage_budget, tol, eps=float(eps)
            )
            total_steps += steps
    return _build_solution(problem, prep, beta, None, total_steps, converged)


def solve(problem: MklProblem, opts: SolverOptions | None = None) -> MklSolution:
    """Solve the lp-MKL problem; see the module docstring for the dispatch."""
    opts = opts or SolverOptions()
    if problem.p <= 2.0:
        return solve_theta_path(problem, opts)
    return solve_direct(problem, opts)


# ---------------------------------------------------------------------------
# Serialization (CLI interface)
# ---------------------------------------------------------------------------


def problem_from_json(path: str | Path) -> MklProblem:
    """Load {y, gram_files, p, lambda1} JSON; gram paths are relative to it."""
    path = Path(path)
    with open(path) as fh:
        d = json.load(fh)
    try:
        y = np.asarray(d["y"], dtype=float)
        gram_files = d["gram_files"]
        p = float(d["p"])
        lambda1 = float(d["lambda1"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed problem file {path}: {exc}") from exc
    grams = [load_gram_csv(path.parent / f) for f in gram_files]
    return MklProblem(y=y, grams=grams, p=p, lambda1=lambda1)


def solution_to_json_dict(sol: MklSolution) -> dict:
    return {
        "block_norms": [float(v) for v in sol.block_norms],
        "theta": None if sol.theta is None else [float(v) for v in sol.theta],
        "objective": float(sol.objective),
        "iterations": int(sol.iterations),
        "converged": bool(sol.converged),
    }
