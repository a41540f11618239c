"""Spectral analysis of symmetric transition matrices.

Everything downstream of the eigendecomposition lives here: the matrix
logarithm ``ln(I - W + (1/n) 11^T)`` that drives the closed-form privacy
accounting, generalized communicability for arbitrary coefficient series,
Katz centrality, and spectral/empirical mixing-time estimates.

The decomposition is cached on the :class:`~tokenwalk.transition.TransitionMatrix`
instance, so repeated derived quantities pay for one ``eigh`` call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import SpectralError
from .ioutil import write_rows_csv
from .transition import TransitionMatrix, stationary_distribution

__all__ = [
    "SpectralDecomposition",
    "SpectralGap",
    "CoefficientSeries",
    "PrivacyWeights",
    "GeometricWeights",
    "FactorialWeights",
    "decompose",
    "matrix_log_term",
    "communicability",
    "katz_centrality",
    "spectral_gap",
    "mixing_time_spectral_bound",
    "mixing_time_empirical",
    "save_spectrum_csv",
]

_CACHE_KEY = "spectral_decomposition"

#: Degeneracy guard: a second eigenvalue this close to 1 means the chain is
#: disconnected (or numerically indistinguishable from it).
_UNIT_EIGENVALUE_TOL = 1e-10

_EMPIRICAL_MIXING_CAP = 10**6


# --------------------------------------------------------------------------- #
# Types
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class SpectralDecomposition:
    """Real eigensystem of a symmetric matrix, eigenvalues descending.

    ``eigenvectors[:, k]`` is the unit eigenvector for ``eigenvalues[k]``;
    signs are canonicalized so the first nonzero component of each vector is
    positive, making results reproducible across eigensolvers.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def lambda_2(self) -> float:
        """Second-largest eigenvalue (equals lambda_1 for n=1)."""
        return float(self.eigenvalues[1]) if self.n > 1 else float(self.eigenvalues[0])

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[-1])

    def reconstruct(self) -> np.ndarray:
        """Rebuild the original matrix (round-trip check helper)."""
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


@dataclass(frozen=True)
class SpectralGap:
    """``1 - max(|lambda_2|, |lambda_n|)``, with the contributing eigenvalues."""

    lambda_w: float
    lambda_2: float
    lambda_n: float


@runtime_checkable
class CoefficientSeries(Protocol):
    """A positive non-increasing coefficient series ``c_1, c_2, ...``.

    `weight` evaluates a single coefficient; `series_sum` evaluates the full
    power series ``sum_{i>=1} c_i x^i`` in closed form for the untruncated
    case.
    """

    def weight(self, i: int) -> float: ...

    def series_sum(self, x: float) -> float: ...


@dataclass(frozen=True)
class PrivacyWeights:
    """``c_i = alpha / (sigma_sq * i)``; the series sums to a log."""

    alpha: float
    sigma_sq: float

    def weight(self, i: int) -> float:
        return self.alpha / (self.sigma_sq * i)

    def series_sum(self, x: float) -> float:
        if x >= 1.0:
            raise SpectralError(f"privacy-weight series diverges at x={x}")
        # sum x^i / i = -ln(1 - x)
        return -(self.alpha / self.sigma_sq) * math.log1p(-x)


@dataclass(frozen=True)
class GeometricWeights:
    """``c_i = a^i`` (Katz-style attenuation)."""

    a: float

    def weight(self, i: int) -> float:
        return self.a**i

    def series_sum(self, x: float) -> float:
        ax = self.a * x
        if abs(ax) >= 1.0:
            raise SpectralError(f"geometric series diverges at a*x={ax}")
        return ax / (1.0 - ax)


@dataclass(frozen=True)
class FactorialWeights:
    """``c_i = 1/i!``; the series sums to ``exp(x) - 1``."""

    def weight(self, i: int) -> float:
        return 1.0 / math.factorial(i)

    def series_sum(self, x: float) -> float:
        return math.expm1(x)


# --------------------------------------------------------------------------- #
# Decomposition
# --------------------------------------------------------------------------- #


def decompose(tm: TransitionMatrix) -> SpectralDecomposition:
    """Eigendecompose a symmetric transition matrix (cached per instance)."""
    cached = tm._cache.get(_CACHE_KEY)
    if cached is not None:
        return cached
    if not tm.symmetric:
        raise SpectralError("decompose requires a symmetric transition matrix")
    try:
        vals, vecs = np.linalg.eigh(tm.w)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh on finite input
        raise SpectralError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(vals)[::-1]
    vals = np.ascontiguousarray(vals[order])
    vecs = np.ascontiguousarray(vecs[:, order])
    # Canonical signs: first component of magnitude > 1e-12 made positive.
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            vecs[:, k] = -col
    vals.setflags(write=False)
    vecs.setflags(write=False)
    dec = SpectralDecomposition(eigenvalues=vals, eigenvectors=vecs)
    tm._cache[_CACHE_KEY] = dec
    return dec


def _require_unit_top(tm: TransitionMatrix, dec: SpectralDecomposition, op: str) -> None:
    if not tm.bistochastic:
        raise SpectralError(f"{op} requires a bistochastic transition matrix")
    if abs(dec.eigenvalues[0] - 1.0) > 1e-8:
        raise SpectralError(
            f"{op}: leading eigenvalue {dec.eigenvalues[0]!r} is not 1 (invalid chain)"
        )
    if dec.n > 1 and dec.lambda_2 >= 1.0 - _UNIT_EIGENVALUE_TOL:
        raise SpectralError(
            f"{op}: second eigenvalue {dec.lambda_2!r} is numerically 1 "
            "(disconnected or degenerate chain)"
        )


# --------------------------------------------------------------------------- #
# Derived matrices
# --------------------------------------------------------------------------- #


def matrix_log_term(tm: TransitionMatrix) -> np.ndarray:
    """Matrix logarithm ``ln(I - W + (1/n) 11^T)``.

    Computed spectrally as ``sum_{k>=2} ln(1 - lambda_k) phi_k phi_k^T``; the
    unit-eigenvalue component is excluded by construction (its image under the
    argument has eigenvalue 1, contributing ln 1 = 0).  Uses ``log1p(-lambda)``
    for accuracy near small eigenvalues.
    """
    dec = decompose(tm)
    _require_unit_top(tm, dec, "matrix_log_term")
    vals = dec.eigenvalues[1:]
    vecs = dec.eigenvectors[:, 1:]
    logs = np.log1p(-vals)
    out = (vecs * logs) @ vecs.T
    return 0.5 * (out + out.T)


def communicability(
    tm: TransitionMatrix,
    coeffs: CoefficientSeries,
    truncation: int | None = None,
) -> np.ndarray:
    """Weighted communicability ``sum_i c_i (W - (1/n) 11^T)^i``.

    Evaluated spectrally on the non-unit eigenspace:
    ``sum_{k>=2} S(lambda_k) phi_k phi_k^T`` with
    ``S(x) = sum_{i=1}^{T} c_i x^i``.  ``truncation=None`` uses the series'
    closed-form sum (the untruncated limit).
    """
    dec = decompose(tm)
    _require_unit_top(tm, dec, "communicability")
    vals = dec.eigenvalues[1:]
    vecs = dec.eigenvectors[:, 1:]
    if truncation is None:
        s = np.array([coeffs.series_sum(float(x)) for x in vals])
    else:
        if truncation < 0:
            raise SpectralError(f"truncation must be nonnegative, got {truncation}")
        s = np.zeros(vals.shape[0])
        powers = np.ones(vals.shape[0])
        for i in range(1, truncation + 1):
            powers = powers * vals
            s += coeffs.weight(i) * powers
    out = (vecs * s) @ vecs.T
    return 0.5 * (out + out.T)


def katz_centrality(tm: TransitionMatrix, attenuation: float) -> np.ndarray:
    """Row sums of ``sum_{i>=1} a^i W^i``, i.e. ``((I - aW)^{-1} - I) 1``.

    Requires ``a * rho(W) < 1``; for a stochastic matrix that means ``a < 1``.
    On bistochastic chains the result is the constant vector ``a/(1-a)``.
    """
    if attenuation < 0:
        raise SpectralError(f"attenuation must be nonnegative, got {attenuation}")
    if attenuation == 0.0:
        return np.zeros(tm.n)
    if tm.symmetric:
        rho = float(np.max(np.abs(decompose(tm).eigenvalues)))
    else:
        rho = float(np.max(np.abs(np.linalg.eigvals(tm.w))))
    if attenuation * rho >= 1.0:
        raise SpectralError(
            f"series diverges: attenuation {attenuation} * spectral radius {rho:.6g} >= 1"
        )
    n = tm.n
    ones = np.ones(n)
    return np.linalg.solve(np.eye(n) - attenuation * tm.w, ones) - ones


# --------------------------------------------------------------------------- #
# Mixing
# --------------------------------------------------------------------------- #


def spectral_gap(tm: TransitionMatrix) -> SpectralGap:
    """``1 - max(|lambda_2|, |lambda_n|)`` for a symmetric chain."""
    dec = decompose(tm)
    lam2 = dec.lambda_2 if dec.n > 1 else 1.0
    lamn = dec.lambda_min
    return SpectralGap(
        lambda_w=1.0 - max(abs(lam2), abs(lamn)), lambda_2=lam2, lambda_n=lamn
    )


def mixing_time_spectral_bound(tm: TransitionMatrix) -> int:
    """Relaxation-time bound ``ceil((1/lambda_w) * ln(1 / min_v pi_v))``."""
    gap = spectral_gap(tm)
    if gap.lambda_w <= 1e-12:
        raise SpectralError(
            f"zero spectral gap (lambda_2={gap.lambda_2!r}, lambda_n={gap.lambda_n!r}); "
            "the walk does not mix"
        )
    pi = stationary_distribution(tm)
    return int(math.ceil(math.log(1.0 / float(pi.min())) / gap.lambda_w))


def _max_tv_from_rows(p_t: np.ndarray, pi: np.ndarray) -> float:
    """Worst row-wise total-variation distance to `pi` (half L1)."""
    return float(0.5 * np.abs(p_t - pi[None, :]).sum(axis=1).max())


def mixing_time_empirical(tm: TransitionMatrix, iota: float) -> int:
    """Smallest ``t`` with ``max_v TV(W^t[v, :], pi) <= iota``.

    TV is half the L1 distance.  Worst-case distance to stationarity is
    non-increasing in ``t``, so for symmetric chains the threshold is located
    by doubling then bisecting on ``t``, evaluating ``W^t`` spectrally; other
    chains fall back to step-by-step matrix products.  A hard cap of 10^6
    steps guards non-mixing chains.
    """
    if not 0.0 < iota < 1.0:
        raise SpectralError(f"iota must be in (0, 1), got {iota}")
    pi = stationary_distribution(tm)
    n = tm.n
    if _max_tv_from_rows(np.eye(n), pi) <= iota:
        return 0

    if tm.symmetric and tm.bistochastic:
        dec = decompose(tm)
        vals, vecs = dec.eigenvalues, dec.eigenvectors

        def dist(t: int) -> float:
            p_t = (vecs * vals**t) @ vecs.T
            return _max_tv_from_rows(p_t, pi)

        hi = 1
        while dist(hi) > iota:
            hi *= 2
            if hi > _EMPIRICAL_MIXING_CAP:
                raise SpectralError(
                    f"no mixing within {_EMPIRICAL_MIXING_CAP} steps (iota={iota})"
                )
        lo = hi // 2  # dist(lo) > iota (or lo == 0, handled above)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if dist(mid) <= iota:
                hi = mid
            else:
                lo = mid
        return hi

    p_t = np.eye(n)
    for t in range(1, _EMPIRICAL_MIXING_CAP + 1):
        p_t = p_t @ tm.w
        if _max_tv_from_rows(p_t, pi) <= iota:
            return t
    raise SpectralError(f"no mixing within {_EMPIRICAL_MIXING_CAP} steps (iota={iota})")


# --------------------------------------------------------------------------- #
# Export
# --------------------------------------------------------------------------- #


def save_spectrum_csv(dec: SpectralDecomposition, path: str | Path) -> None:
    """Write (index, eigenvalue) rows, eigenvalues in descending order."""
    rows = [(k, float(v)) for k, v in enumerate(dec.eigenvalues)]
    write_rows_csv(path, ["index", "eigenvalue"], rows)
