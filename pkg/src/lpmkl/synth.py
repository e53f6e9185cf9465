"""Synthetic product-space regression data with prescribed RKHS norms.

The design has M independent coordinates, each uniform on [0, 1], and a
truth f* = sum_m f*_m where every block lives in the same spectral RKHS.
Block coefficients are drawn Gaussian against the kernel spectrum and then
rescaled so the RKHS norms hit the requested pattern exactly, which makes
the mixed-norm radius of the truth a known quantity rather than an estimate.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .kernels import SpectralKernel, basis_matrix


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from a tuple of primitives.

    Uses a content hash rather than Python's salted hash so seeds are
    stable across processes and runs; floats are canonicalized via repr.
    """
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


@dataclass(frozen=True)
class TruthSpec:
    norm_pattern: tuple[float, ...]
    pattern_name: str = "custom"
    truth_truncation: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        pattern = tuple(float(v) for v in self.norm_pattern)
        object.__setattr__(self, "norm_pattern", pattern)
        if len(pattern) == 0 or any(v < 0 for v in pattern):
            raise ValueError("norm_pattern must be nonempty and nonnegative")
        if self.pattern_name not in ("sparse", "dense", "custom"):
            raise ValueError(f"unknown pattern_name {self.pattern_name!r}")
        if self.pattern_name == "sparse" and pattern != (1.0,) + (0.0,) * (len(pattern) - 1):
            raise ValueError("sparse pattern means (1, 0, ..., 0)")
        if self.pattern_name == "dense" and pattern != (1.0,) * len(pattern):
            raise ValueError("dense pattern means (1, ..., 1)")
        if self.truth_truncation < 1:
            raise ValueError("truth_truncation must be >= 1")

    @property
    def M(self) -> int:
        return len(self.norm_pattern)


def sparse_spec(M: int, truth_truncation: int = 50, seed: int = 0) -> TruthSpec:
    return TruthSpec((1.0,) + (0.0,) * (M - 1), "sparse", truth_truncation, seed)


def dense_spec(M: int, truth_truncation: int = 50, seed: int = 0) -> TruthSpec:
    return TruthSpec((1.0,) * M, "dense", truth_truncation, seed)


@dataclass(frozen=True)
class Truth:
    """Evaluable truth: per-block cosine-basis coefficients over a kernel."""

    kernel: SpectralKernel
    coefficients: np.ndarray  # (M, truth_truncation)

    @property
    def M(self) -> int:
        return self.coefficients.shape[0]

    def block_values(self, x_col: np.ndarray, m: int) -> np.ndarray:
        phi = basis_matrix(self.kernel, x_col)[:, : self.coefficients.shape[1]]
        return phi @ self.coefficients[m]

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.M:
            raise ValueError(f"X must be n x {self.M}")
        out = np.zeros(X.shape[0])
        for m in range(self.M):
            out += self.block_values(X[:, m], m)
        return out

    def rkhs_norms(self) -> np.ndarray:
        mu = self.kernel.eigenvalues()[: self.coefficients.shape[1]]
        return np.sqrt((self.coefficients**2 / mu).sum(axis=1))

    def l2_norms_sq(self) -> np.ndarray:
        # basis orthonormality makes the L2(Pi) norm a coefficient sum
        return (self.coefficients**2).sum(axis=1)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    truth: Truth
    noise_bound_L: float

    @property
    def n(self) -> int:
        return self.y.size


def build_truth(spec: TruthSpec, kernel: SpectralKernel) -> Truth:
    """Draw block coefficients and rescale each block to its target norm."""
    if not isinstance(kernel, SpectralKernel):
        raise ValueError("build_truth requires a spectral kernel")
    if spec.truth_truncation > kernel.truncation:
        raise ValueError(
            f"truth_truncation {spec.truth_truncation} exceeds kernel truncation {kernel.truncation}"
        )
    mu = kernel.eigenvalues()[: spec.truth_truncation]
    rng = np.random.default_rng(spec.seed)
    coeffs = np.zeros((spec.M, spec.truth_truncation))
    for m, target in enumerate(spec.norm_pattern):
        if target == 0.0:
            continue
        for attempt in range(2):
            g = rng.standard_normal(spec.truth_truncation)
            b = g * mu
            norm = float(np.sqrt((b * b / mu).sum()))
            if norm > 0:
                break
        else:
            raise ValueError("degenerate zero draw for a truth block")
        coeffs[m] = b * (target / norm)
    return Truth(kernel=kernel, coefficients=coeffs)


def sample_dataset(
    truth: Truth, kernel: SpectralKernel, n: int, L: float, seed: int = 0
) -> Dataset:
    """n uniform design points with truth values plus uniform [-L, L] noise."""
    if kernel != truth.kernel:
        raise ValueError("kernel must match the one the truth was built on")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if L <= 0:
        raise ValueError(f"L must be positive, got {L}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, truth.M))
    noise = rng.uniform(-L, L, size=n)
    y = truth.evaluate(X) + noise
    return Dataset(X=X, y=y, truth=truth, noise_bound_L=L)


class L2Error(NamedTuple):
    mse: float
    stderr: float


def measure_l2_error(
    estimate: Callable[[np.ndarray], np.ndarray],
    truth: Truth,
    n_test: int,
    seed: int = 0,
) -> L2Error:
    """Monte Carlo squared L2(Pi) distance between estimate and truth."""
    if n_test < 1:
        raise ValueError(f"n_test must be >= 1, got {n_test}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n_test, truth.M))
    d = np.asarray(estimate(X), dtype=float).ravel() - truth.evaluate(X)
    sq = d * d
    stderr = float(sq.std(ddof=1) / np.sqrt(n_test)) if n_test > 1 else float("nan")
    return L2Error(mse=float(sq.mean()), stderr=stderr)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def dataset_to_csv(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    header = [f"x_{m + 1}" for m in range(ds.truth.M)] + ["y"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            writer.writerow([repr(float(v)) for v in ds.X[i]] + [repr(float(ds.y[i]))])


def dataset_from_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read back a dataset CSV; returns (X, y) without the truth."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "y":
        raise ValueError(f"{path} is not a dataset CSV (expected x_1..x_M,y header)")
    body = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    if body.ndim != 2 or body.shape[1] < 2:
        raise ValueError(f"{path} has no data rows")
    return body[:, :-1], body[:, -1]


def truth_to_json_dict(truth: Truth, spec: TruthSpec | None = None) -> dict:
    d = {
        "kernel": {
            "decay": truth.kernel.decay,
            "truncation": truth.kernel.truncation,
            "scale": truth.kernel.scale,
        },
        "coefficients": [[float(v) for v in row] for row in truth.coefficients],
        "construction": "gaussian coefficients rescaled to exact block norms",
    }
    if spec is not None:
        d["norm_pattern"] = list(spec.norm_pattern)
        d["pattern_name"] = spec.pattern_name
        d["seed"] = spec.seed
    return d


def truth_from_json_dict(d: dict) -> Truth:
    k = d["kernel"]
    kernel = SpectralKernel(decay=k["decay"], truncation=k["truncation"], scale=k.get("scale"))
    return Truth(kernel=kernel, coefficients=np.asarray(d["coefficients"], dtype=float))


def truth_spec_from_json(path: str | Path) -> tuple[TruthSpec, SpectralKernel]:
    """Load a generation spec: pattern plus kernel parameters."""
    with open(path) as fh:
        d = json.load(fh)
    try:
        kernel = SpectralKernel(
            decay=float(d["s"]),
            truncation=int(d.get("kernel_truncation", 200)),
            scale=d.get("kernel_scale"),
        )
        m_count = int(d["M"])
        name = d.get("pattern", "custom")
        trunc = int(d.get("truth_truncation", 50))
        seed = int(d.get("seed", 0))
        if name == "sparse":
            spec = sparse_spec(m_count, trunc, seed)
        elif name == "dense":
            spec = dense_spec(m_count, trunc, seed)
        else:
            spec = TruthSpec(tuple(d["norms"]), "custom", trunc, seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed truth spec {path}: {exc}") from exc
    return spec, kernel
