"""Kernel specifications, Gram matrix construction, and spectral decay estimation.

The workhorse kernel here is a truncated cosine-basis kernel on [0, 1] whose
eigenvalues decay polynomially, ``mu_j = scale * j**(-1/decay)``. The decay
exponent is the quantity everything downstream (rates, regularization choices)
is phrased in terms of, so it is stored explicitly rather than inferred.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import scipy.linalg


class KernelDomainError(ValueError):
    """A point falls outside the domain a kernel is defined on."""


class SpectrumFitError(ValueError):
    """The eigenvalue sequence cannot support a decay fit."""


# Relative tolerance below which a Gram eigenvalue counts as "indefinite"
# rather than round-off: reject matrices with min eig < -1e-8 * max eig.
_PSD_REJECT_RTOL = 1e-8
# Diagonal jitter applied before factorizations, relative to mean diagonal.
_JITTER_RTOL = 1e-10
# Headroom factor so the normalized spectral kernel has sup_x k(x, x) < 1.
_SUP_MARGIN = 1.01


@dataclass(frozen=True)
class SpectralKernel:
    """Cosine-basis kernel on [0, 1] with polynomial eigenvalue decay.

    ``k(x, z) = sum_{j<=truncation} mu_j phi_j(x) phi_j(z)`` where
    ``phi_j(x) = sqrt(2) cos(pi j x)`` and ``mu_j = scale * j**(-1/decay)``.
    The basis is orthonormal and mean-zero under the uniform distribution
    on [0, 1]. With ``scale=None`` the eigenvalues are normalized so that
    ``sup_x k(x, x) < 1``.
    """

    decay: float
    truncation: int = 200
    scale: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay exponent must lie in (0, 1), got {self.decay}")
        if self.truncation < 1:
            raise ValueError(f"truncation must be >= 1, got {self.truncation}")
        if self.scale is not None and self.scale <= 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def eigenvalues(self) -> np.ndarray:
        js = np.arange(1, self.truncation + 1, dtype=float)
        raw = js ** (-1.0 / self.decay)
        if self.scale is not None:
            return self.scale * raw
        # sup_x k(x, x) = 2 * sum(mu); keep it strictly below 1
        return raw / (_SUP_MARGIN * 2.0 * raw.sum())


@dataclass(frozen=True)
class GaussianKernel:
    """Gaussian kernel exp(-(x - z)^2 / (2 * bandwidth^2)) on the real line."""

    bandwidth: float

    def __post_init__(self) -> None:
        if self.bandwidth <= 0.0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True)
class PrecomputedKernel:
    """Kernel given by a stored Gram matrix; points are row/column indices."""

    path: str


KernelSpec = Union[SpectralKernel, GaussianKernel, PrecomputedKernel]


@dataclass(eq=False)
class GramMatrix:
    """A symmetric PSD kernel matrix plus the jitter used when factoring it.

    ``jitter_applied`` starts at 0 and records the diagonal shift added the
    last time the matrix was factored (see :func:`gram_sqrt`).
    """

    values: np.ndarray
    jitter_applied: float = 0.0

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"Gram matrix must be square, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("Gram matrix contains non-finite entries")
        scale = np.abs(v).max() if v.size else 0.0
        if scale > 0 and np.abs(v - v.T).max() > 1e-8 * scale:
            raise ValueError("Gram matrix is not symmetric")
        self.values = (v + v.T) / 2.0

    @property
    def n(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# Kernel evaluation and Gram construction
# ---------------------------------------------------------------------------


def _check_unit_interval(pts: np.ndarray) -> None:
    if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
        raise KernelDomainError("spectral kernel points must lie in [0, 1]")


def basis_matrix(spec: SpectralKernel, points: np.ndarray) -> np.ndarray:
    """Evaluate the cosine basis: entry (i, j) is phi_{j+1}(points[i])."""
    pts = np.asarray(points, dtype=float).ravel()
    _check_unit_interval(pts)
    js = np.arange(1, spec.truncation + 1, dtype=float)
    return np.sqrt(2.0) * np.cos(np.pi * np.outer(pts, js))


def eval_kernel(spec: KernelSpec, x: float, z: float) -> float:
    """Evaluate k(x, z) for a single pair of points."""
    if isinstance(spec, SpectralKernel):
        pts = np.array([x, z], dtype=float)
        _check_unit_interval(pts)
        phi = basis_matrix(spec, pts)
        return float((spec.eigenvalues() * phi[0] * phi[1]).sum())
    if isinstance(spec, GaussianKernel):
        d = float(x) - float(z)
        return float(np.exp(-(d * d) / (2.0 * spec.bandwidth**2)))
    raise KernelDomainError(
        "precomputed kernels have no out-of-sample evaluation; use gram()"
    )


def gram(spec: KernelSpec, points: np.ndarray | None = None) -> GramMatrix:
    """Build the Gram matrix of ``spec`` at ``points``.

    For a precomputed kernel, ``points`` (if given) are integer indices into
    the stored matrix; otherwise the full stored matrix is returned.
    """
    if isinstance(spec, PrecomputedKernel):
        full = load_gram_csv(spec.path)
        if points is None:
            return full
        idx = np.asarray(points, dtype=int).ravel()
        return GramMatrix(full.values[np.ix_(idx, idx)])
    if points is None:
        raise ValueError("points are required for analytic kernels")
    pts = np.asarray(points, dtype=float).ravel()
    if isinstance(spec, SpectralKernel):
        phi = basis_matrix(spec, pts)
        values = (phi * spec.eigenvalues()) @ phi.T
    else:
        d = pts[:, None] - pts[None, :]
        values = np.exp(-(d * d) / (2.0 * spec.bandwidth**2))
    return GramMatrix(values)


def cross_gram(spec: KernelSpec, points_a: np.ndarray, points_b: np.ndarray) -> np.ndarray:
    """Rectangular kernel matrix k(a_i, b_j), used for out-of-sample prediction."""
    if isinstance(spec, PrecomputedKernel):
        full = load_gram_csv(spec.path).values
        ia = np.asarray(points_a, dtype=int).ravel()
        ib = np.asarray(points_b, dtype=int).ravel()
        return full[np.ix_(ia, ib)]
    a = np.asarray(points_a, dtype=float).ravel()
    b = np.asarray(points_b, dtype=float).ravel()
    if isinstance(spec, SpectralKernel):
        return (basis_matrix(spec, a) * spec.eigenvalues()) @ basis_matrix(spec, b).T
    d = a[:, None] - b[None, :]
    return np.exp(-(d * d) / (2.0 * spec.bandwidth**2))


def load_gram_csv(path: str | Path) -> GramMatrix:
    """Load a Gram matrix from CSV and validate symmetry and finiteness."""
    values = np.loadtxt(path, delimiter=",", ndmin=2)
    if values.shape[0] != values.shape[1]:
        raise ValueError(f"Gram CSV must be square, got shape {values.shape}")
    scale = np.abs(values).max() if values.size else 0.0
    if scale > 0 and np.abs(values - values.T).max() > 1e-12 * scale:
        raise ValueError(f"Gram CSV at {path} is not symmetric")
    return GramMatrix(values)


# ---------------------------------------------------------------------------
# Factorizations and spectral estimation
# ---------------------------------------------------------------------------


def gram_eigh(g: GramMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Gram matrix with jitter and PSD validation.

    Returns ascending eigenvalues (negatives clamped to 0) and eigenvectors.
    Records the diagonal jitter on ``g.jitter_applied``.
    """
    n = g.n
    jitter = _JITTER_RTOL * np.trace(g.values) / n if n else 0.0
    jitter = max(jitter, 0.0)
    w, u = scipy.linalg.eigh(g.values + jitter * np.eye(n))
    top = max(w[-1], 0.0) if n else 0.0
    if n and w[0] < -_PSD_REJECT_RTOL * max(top, 1e-300):
        raise ValueError(
            f"Gram matrix is not positive semidefinite (min eig {w[0]:.3e})"
        )
    g.jitter_applied = jitter
    return np.clip(w, 0.0, None), u


def gram_sqrt(g: GramMatrix) -> np.ndarray:
    """Symmetric PSD square root S of the Gram matrix, S @ S ~= g.values."""
    w, u = gram_eigh(g)
    s = (u * np.sqrt(w)) @ u.T
    return (s + s.T) / 2.0


def estimate_decay(g: GramMatrix, k_range: tuple[int, int] | None = None) -> float:
    """Estimate the eigenvalue decay exponent from an empirical Gram matrix.

    Fits ``log mu_hat_k ~ log k`` by least squares over ``k_range`` (default
    ``[2, min(30, n // 4)]``), where ``mu_hat`` are eigenvalues of
    ``values / n`` in descending order, and returns ``-1 / slope``.
    """
    n = g.n
    if k_range is None:
        k_range = (2, min(30, n // 4))
    lo, hi = int(k_range[0]), int(k_range[1])
    if lo < 1 or hi > n or hi - lo < 2:
        raise SpectrumFitError(
            f"decay fit window [{lo}, {hi}] needs >= 3 indices within 1..{n}"
        )
    eigs = np.sort(scipy.linalg.eigvalsh(g.values))[::-1] / n
    ks = np.arange(lo, hi + 1, dtype=float)
    mu = eigs[lo - 1 : hi]
    keep = mu > 0
    if keep.sum() < 3:
        raise SpectrumFitError("fewer than 3 positive eigenvalues in the fit window")
    slope = np.polyfit(np.log(ks[keep]), np.log(mu[keep]), 1)[0]
    if slope >= 0:
        raise SpectrumFitError("eigenvalues do not decay over the fit window")
    return -1.0 / slope


def kernel_to_json_dict(spec: KernelSpec) -> dict:
    """Serialize a kernel spec as a plain dict (for CLI files)."""
    d = dataclasses.asdict(spec)
    d["kind"] = {
        SpectralKernel: "spectral",
        GaussianKernel: "gaussian",
        PrecomputedKernel: "precomputed",
    }[type(spec)]
    return d


def kernel_from_json_dict(d: dict) -> KernelSpec:
    kind = d.get("kind")
    args = {k: v for k, v in d.items() if k != "kind"}
    if kind == "spectral":
        return SpectralKernel(**args)
    if kind == "gaussian":
        return GaussianKernel(**args)
    if kind == "precomputed":
        return PrecomputedKernel(**args)
    raise ValueError(f"unknown kernel kind {kind!r}")
