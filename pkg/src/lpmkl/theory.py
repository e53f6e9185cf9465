"""Closed-form rate theory for lp-mixed-norm multiple kernel learning.

Everything here is exact arithmetic on the model parameters: localized
complexity functionals, the optimal regularization scale, predicted and
minimax rates, the empirical kernel-correlation constant, entropy-number
bounds, and the Hamming-code packing construction behind the lower bound.

``p = math.inf`` is the sentinel for the sup-aggregated mixed norm; every
formula treats ``1/p`` as 0 in that case.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .kernels import GramMatrix

# Rank truncation when extracting Gram column spaces for kappa_estimate.
_RANK_RTOL = 1e-10
# Guard on the greedy packing enumeration; N**M beyond this is not desk-scale.
_PACKING_SPACE_LIMIT = 10**7


class DegenerateGramError(ValueError):
    """A Gram matrix has no positive spectrum, so its column space is empty."""


class PackingSpaceError(ValueError):
    """The requested codeword space is too large to enumerate."""


def _inv_p(p: float) -> float:
    """1/p with the p = inf convention."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return 0.0 if math.isinf(p) else 1.0 / p


def _log_m(m: int) -> float:
    # The M log M complexity branch is meaningful only for M >= 2; for a
    # single kernel the log factor is replaced by 1 to avoid a zero branch.
    return 1.0 if m == 1 else math.log(m)


@dataclass(frozen=True)
class TheoryParams:
    """Model parameters the rate formulas are evaluated at.

    ``c_free`` is a single configurable stand-in for every universal
    constant the bounds leave unspecified; all returned quantities scale
    linearly in it.
    """

    n: int
    M: int
    p: float
    s: float
    R_p: float = 1.0
    kappa: float = 1.0
    L: float = 1.0
    c_free: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if self.R_p <= 0:
            raise ValueError(f"R_p must be positive, got {self.R_p}")
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.L <= 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.c_free <= 0:
            raise ValueError(f"c_free must be positive, got {self.c_free}")


class RatePrediction(NamedTuple):
    leading: float
    full: tuple[float, float, float]


class PackingBound(NamedTuple):
    q_star: Fraction
    log_bound: float


# ---------------------------------------------------------------------------
# Complexity functionals
# ---------------------------------------------------------------------------


def eta(t: float, n: int) -> float:
    """Deviation weight max(1, sqrt(t), t / sqrt(n))."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    return max(1.0, math.sqrt(t), t / math.sqrt(n))


def _complexity_branches(params: TheoryParams, lam: float) -> tuple[float, float, float]:
    """The three localized-complexity branches shared by zeta_n and u_n_bound.

    Branch 3 carries lambda to the power -s(3-s)/(2(1+s)); the factor s is
    required for the weighted Young step behind the bound (exponent weights
    (1-s)^2/(1+s) and s(3-s)/(1+s) sum to 1) and keeps the per-block and
    aggregated forms consistent.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    n, M, p, s = params.n, params.M, params.p, params.s
    ip = _inv_p(p)
    b1 = math.sqrt(M * _log_m(M) / n)
    b2 = lam ** (-s / 2.0) * M ** ((1.0 + s) / 2.0 - s * ip) / math.sqrt(n)
    b3 = (
        M ** ((1.0 + 4.0 * s - s * s) / (2.0 * (1.0 + s)) - s * (3.0 - s) * ip / (1.0 + s))
        * lam ** (-s * (3.0 - s) / (2.0 * (1.0 + s)))
        / n ** (1.0 / (1.0 + s))
    )
    return b1, b2, b3


def zeta_n(params: TheoryParams, lam: float) -> float:
    """Localized complexity scale: 2 times the max of the three branches."""
    return 2.0 * max(_complexity_branches(params, lam))


def u_n_bound(f_norm_l2: float, f_norm_h: float, params: TheoryParams, lam: float) -> float:
    """Per-block complexity bound U_n^(lambda)(f).

    Product of the branch-max factor and the norm aggregate
    ``|f|_L2 / sqrt(M) + sqrt(lambda) |f|_H / M^(1 - 1/p)``.
    """
    if f_norm_l2 < 0 or f_norm_h < 0:
        raise ValueError("norms must be nonnegative")
    M, p = params.M, params.p
    ip = _inv_p(p)
    factor = max(_complexity_branches(params, lam))
    return factor * (f_norm_l2 / math.sqrt(M) + math.sqrt(lam) * f_norm_h / M ** (1.0 - ip))


def r_p_norm(h_norms: Sequence[float], p: float) -> float:
    """lp aggregate of per-block RKHS norms; max for p = inf."""
    norms = np.asarray(h_norms, dtype=float)
    if norms.size == 0:
        raise ValueError("h_norms must be nonempty")
    if np.any(norms < 0):
        raise ValueError("h_norms must be nonnegative")
    if _inv_p(p) == 0.0:
        return float(norms.max())
    return float((norms**p).sum() ** (1.0 / p))


# ---------------------------------------------------------------------------
# Rates and regularization
# ---------------------------------------------------------------------------


def sample_size_ok(params: TheoryParams) -> bool:
    """Check the large-n proviso under which the leading rate term dominates.

    Requires n >= M^(2/p) R_p^(-2) (log M)^((1+s)/s) and
    n >= (R_p / M^(1/p))^(4s/(1-s)).
    """
    n, M, p, s, R = params.n, params.M, params.p, params.s, params.R_p
    ip = _inv_p(p)
    log_m = math.log(M) if M > 1 else 0.0
    first = M ** (2.0 * ip) * R ** (-2.0) * log_m ** ((1.0 + s) / s)
    second = (R / M**ip) ** (4.0 * s / (1.0 - s))
    return n >= first and n >= second


def optimal_lambda(params: TheoryParams) -> float:
    """Regularization scale minimizing the rate bound, times c_free.

    n^(-1/(1+s)) M^(1 - 2s/(p(1+s))) R_p^(-2/(1+s)). Emits a warning when
    the sample-size proviso fails; the formula is still returned.
    """
    n, M, s, R = params.n, params.M, params.s, params.R_p
    ip = _inv_p(params.p)
    if not sample_size_ok(params):
        warnings.warn(
            "sample size n is below the regime where the leading rate term "
            "dominates; optimal_lambda may be outside its derivation range",
            stacklevel=2,
        )
    return params.c_free * n ** (-1.0 / (1.0 + s)) * M ** (1.0 - 2.0 * s * ip / (1.0 + s)) * R ** (
        -2.0 / (1.0 + s)
    )


def predicted_rate(params: TheoryParams) -> RatePrediction:
    """Three-term rate bound and its leading simplification, each times c_free.

    Terms: the leading n^(-1/(1+s)) M^(1-2s/(p(1+s))) R_p^(2s/(1+s)), the
    M log(M)/n sample-complexity term, and the higher-order remainder.
    """
    n, M, s, R = params.n, params.M, params.s, params.R_p
    ip = _inv_p(params.p)
    c = params.c_free
    t1 = c * n ** (-1.0 / (1.0 + s)) * M ** (1.0 - 2.0 * s * ip / (1.0 + s)) * R ** (
        2.0 * s / (1.0 + s)
    )
    t2 = c * M * _log_m(M) / n
    t3 = (
        c
        * n ** (-1.0 / (1.0 + s) - (1.0 - s) ** 2 / (1.0 + s) ** 2)
        * M ** (1.0 - 2.0 * s * (3.0 - s) * ip / (1.0 + s) ** 2)
        * R ** (2.0 * s * (3.0 - s) / (1.0 + s) ** 2)
    )
    return RatePrediction(leading=t1, full=(t1, t2, t3))


def minimax_lower_bound(params: TheoryParams, R: float) -> float:
    """Minimax rate over the lp-mixed-norm ball of radius R, times c_free."""
    if R <= 0:
        raise ValueError(f"R must be positive, got {R}")
    n, M, s = params.n, params.M, params.s
    ip = _inv_p(params.p)
    return params.c_free * n ** (-1.0 / (1.0 + s)) * M ** (1.0 - 2.0 * s * ip / (1.0 + s)) * R ** (
        2.0 * s / (1.0 + s)
    )


def entropy_bound(i: int, n: int, s: float, C: float, c_free: float = 1.0) -> float:
    """Bound on the i-th entropy number: c_free * C * min(i,n)^(1/(2s)) * i^(-1/s)."""
    if i < 1 or n < 1:
        raise ValueError("i and n must be positive integers")
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if C < 1:
        raise ValueError(f"C must be >= 1, got {C}")
    return c_free * C * min(i, n) ** (1.0 / (2.0 * s)) * float(i) ** (-1.0 / s)


# ---------------------------------------------------------------------------
# Empirical kernel correlation
# ---------------------------------------------------------------------------


def kappa_estimate(grams: Sequence[GramMatrix], rank_rtol: float = _RANK_RTOL) -> float:
    """Empirical incoherence of the kernels' sample column spaces.

    Equals min over nonzero u_m in col(K_m) of ||sum u_m||^2 / sum ||u_m||^2,
    computed as the smallest eigenvalue of the stacked-basis cross-product
    matrix [Q_i^T Q_j]. 0 means some combination of the spaces cancels
    exactly; 1 means the spaces are pairwise orthogonal.
    """
    if len(grams) == 0:
        raise ValueError("at least one Gram matrix is required")
    bases = []
    for g in grams:
        w, u = scipy.linalg.eigh(g.values)
        top = w[-1]
        if top <= 0:
            raise DegenerateGramError("Gram matrix has no positive eigenvalues")
        keep = w > rank_rtol * top
        bases.append(u[:, keep])
    q = np.hstack(bases)
    b = q.T @ q
    w_min = scipy.linalg.eigvalsh(b)[0]
    return float(min(max(w_min, 0.0), 1.0))


# ---------------------------------------------------------------------------
# Packing construction for the minimax lower bound
# ---------------------------------------------------------------------------


def packing_lower_bound(N: int, M: int) -> PackingBound:
    """Guaranteed packing size Q* = N^M / (2 C(M, M/2) N^(M/2)), exactly.

    Returns the exact rational Q* together with the simplified logarithmic
    bound (M/2) log(N/16), which lower-bounds log Q* for all even M.
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if M < 2 or M % 2 != 0:
        raise ValueError(f"M must be an even integer >= 2, got {M}")
    q_star = Fraction(N**M, 2 * math.comb(M, M // 2) * N ** (M // 2))
    return PackingBound(q_star=q_star, log_bound=(M / 2.0) * math.log(N / 16.0))


def greedy_packing(N: int, M: int, min_dist_exclusive: int | None = None) -> list[tuple[int, ...]]:
    """Greedy Hamming code over [N]^M with pairwise distance > min_dist_exclusive.

    Scans codewords in lexicographic order and keeps each one whose Hamming
    distance to every kept codeword strictly exceeds the threshold (default
    M/2, the separation the counting bound is stated for). Running to
    completion makes the output maximal, so its size is at least ceil(Q*).
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if M < 2 or M % 2 != 0:
        raise ValueError(f"M must be an even integer >= 2, got {M}")
    if N**M > _PACKING_SPACE_LIMIT:
        raise PackingSpaceError(
            f"codeword space N^M = {N**M} exceeds the enumeration guard {_PACKING_SPACE_LIMIT}"
        )
    if min_dist_exclusive is None:
        min_dist_exclusive = M // 2
    if not 0 <= min_dist_exclusive <= M:
        raise ValueError(f"min_dist_exclusive must lie in [0, {M}]")

    # Lexicographic enumeration of [N]^M, first coordinate most significant.
    grids = np.indices((N,) * M).reshape(M, -1).T
    pool = np.ascontiguousarray(grids)
    code: list[np.ndarray] = []
    while pool.shape[0]:
        chosen = pool[0]
        code.append(chosen)
        dist = (pool != chosen).sum(axis=1)
        pool = pool[dist > min_dist_exclusive]
    return [tuple(int(v) for v in word) for word in code]
