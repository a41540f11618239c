"""Transition matrices for random walks on undirected graphs.

Builders produce symmetric doubly stochastic matrices supported on the graph's
edges (plus the diagonal).  The primary construction assigns each edge the
weight ``1 / max(deg(u), deg(v))`` and soaks the per-row residual into the
diagonal, which is symmetric and doubly stochastic on any connected graph.
Lazy-walk variants mix in self-loops with weight ``kappa``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import TransitionError
from .graphs import Graph
from .ioutil import read_matrix_csv, sha256_of_text, write_matrix_csv

__all__ = [
    "TransitionMatrix",
    "ValidationReport",
    "hamilton_weighting",
    "with_self_loops",
    "blend_self_loops",
    "from_array",
    "validate",
    "stationary_distribution",
    "save_csv",
    "load_csv",
]

# Absolute tolerance on stochasticity sums; dense double-precision arithmetic
# keeps row-sum drift under ~n*eps even at n=4096.
DEFAULT_ATOL = 1e-12


@dataclass(frozen=True)
class TransitionMatrix:
    """A dense transition matrix together with cheap-to-check metadata.

    The array is treated as immutable after construction.  `symmetric` and
    `bistochastic` record what the builder guaranteed; arbitrary arrays loaded
    from disk get these flags recomputed.  `_cache` holds the spectral
    decomposition once computed (see :mod:`tokenwalk.spectral`).
    """

    w: np.ndarray
    symmetric: bool = True
    bistochastic: bool = True
    self_loop_kappa: float = 0.0
    _cache: dict[str, Any] = field(
        default_factory=dict, repr=False, compare=False, hash=False
    )

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise TransitionError(f"transition matrix must be square, got shape {w.shape}")
        object.__setattr__(self, "w", w)
        w.setflags(write=False)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def content_hash(self) -> str:
        """Hash of the full-precision entries; identifies the chain."""
        payload = ";".join(np.format_float_scientific(x, precision=17) for x in self.w.ravel())
        return sha256_of_text(f"{self.n}|{payload}")


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate`.

    Boolean flags per checked property, the worst violation magnitudes, and
    human-readable failure messages.  `ok` covers everything except
    `aperiodic`, which is advisory (a periodic chain is well-defined, it just
    never mixes; callers decide whether that is fatal).
    """

    ok: bool
    stochastic: bool
    symmetric: bool
    bistochastic: bool
    support_ok: bool
    aperiodic: bool
    failures: tuple[str, ...]
    max_row_sum_error: float
    max_asymmetry: float
    min_entry: float

    def raise_if_failed(self) -> None:
        if not self.ok:
            raise TransitionError("; ".join(self.failures))


# --------------------------------------------------------------------------- #
# Builders
# --------------------------------------------------------------------------- #


def hamilton_weighting(graph: Graph) -> TransitionMatrix:
    """Edge weight ``1 / max(deg(u), deg(v))``, residual mass on the diagonal.

    Doubly stochastic and symmetric on any connected graph; regular graphs
    get zero diagonal (except weight left over on none).
    """
    n = graph.n
    deg = graph.degrees
    w = np.zeros((n, n), dtype=float)
    for u, v in graph.edges:
        w[u, v] = w[v, u] = 1.0 / max(deg[u], deg[v])
    np.fill_diagonal(w, 0.0)
    residual = 1.0 - w.sum(axis=1)
    # Residuals are nonnegative: each row sums to sum_v 1/max(d_u, d_v) <= 1.
    np.fill_diagonal(w, np.maximum(residual, 0.0))
    return TransitionMatrix(w=w, symmetric=True, bistochastic=True, self_loop_kappa=0.0)


def with_self_loops(graph: Graph, kappa: float) -> TransitionMatrix:
    """Lazy uniform walk ``(1 - kappa) * A / d + kappa * I`` on a d-regular graph.

    Raises
    ------
    TransitionError
        If the graph is not regular or `kappa` is outside ``[0, 1)`` -- the
        uniform-neighbor step is only stochastic for constant degree.
    """
    if not 0.0 <= kappa < 1.0:
        raise TransitionError(f"kappa must be in [0, 1), got {kappa}")
    deg = graph.degrees
    if not np.all(deg == deg[0]):
        raise TransitionError(
            "with_self_loops requires a regular graph "
            f"(degrees range {deg.min()}..{deg.max()}); use blend_self_loops instead"
        )
    d = float(deg[0])
    w = graph.adjacency_matrix() * ((1.0 - kappa) / d)
    np.fill_diagonal(w, kappa)
    return TransitionMatrix(w=w, symmetric=True, bistochastic=True, self_loop_kappa=kappa)


def blend_self_loops(tm: TransitionMatrix, kappa: float) -> TransitionMatrix:
    """Mix an existing chain with staying put: ``(1 - kappa) * W + kappa * I``.

    Works on any chain (irregular graphs included) and preserves symmetry and
    double stochasticity.
    """
    if not 0.0 <= kappa < 1.0:
        raise TransitionError(f"kappa must be in [0, 1), got {kappa}")
    w = (1.0 - kappa) * tm.w + kappa * np.eye(tm.n)
    return TransitionMatrix(
        w=w,
        symmetric=tm.symmetric,
        bistochastic=tm.bistochastic,
        self_loop_kappa=kappa + (1.0 - kappa) * tm.self_loop_kappa,
    )


def from_array(w: np.ndarray, *, atol: float = DEFAULT_ATOL) -> TransitionMatrix:
    """Wrap an arbitrary square array, recomputing the metadata flags.

    Does not reject invalid chains; run :func:`validate` to get a report.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise TransitionError(f"transition matrix must be square, got shape {w.shape}")
    symmetric = bool(np.allclose(w, w.T, atol=atol, rtol=0.0))
    rows_ok = bool(np.allclose(w.sum(axis=1), 1.0, atol=atol, rtol=0.0))
    cols_ok = bool(np.allclose(w.sum(axis=0), 1.0, atol=atol, rtol=0.0))
    kappa = float(np.min(np.diag(w))) if w.shape[0] else 0.0
    return TransitionMatrix(
        w=w.copy(),
        symmetric=symmetric,
        bistochastic=rows_ok and cols_ok,
        self_loop_kappa=max(kappa, 0.0),
    )


# --------------------------------------------------------------------------- #
# Validation and stationarity
# --------------------------------------------------------------------------- #


def _support_is_bipartite(w: np.ndarray, atol: float) -> bool:
    """2-colorability of the off-diagonal support graph (per component)."""
    n = w.shape[0]
    support = np.abs(w) > atol
    np.fill_diagonal(support, False)
    color = np.full(n, -1, dtype=np.int8)
    for start in range(n):
        if color[start] >= 0:
            continue
        color[start] = 0
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in np.flatnonzero(support[u]):
                if color[v] == -1:
                    color[v] = 1 - color[u]
                    queue.append(int(v))
                elif color[v] == color[u]:
                    return False
    return True


def validate(
    tm: TransitionMatrix,
    graph: Graph | None = None,
    *,
    atol: float = DEFAULT_ATOL,
) -> ValidationReport:
    """Check stochasticity, symmetry, bistochasticity, support, aperiodicity.

    Never raises: every violation is packed into the report so callers decide
    (the CLI maps a failed report to a config error, tests inspect messages).
    Aperiodicity is detected structurally -- a positive diagonal entry, or a
    non-bipartite support graph -- and reported as an advisory flag rather
    than a failure.  When `graph` is given, off-diagonal mass outside its edge
    set is flagged.
    """
    w = tm.w
    n = tm.n
    failures: list[str] = []

    asym = float(np.max(np.abs(w - w.T))) if n else 0.0
    symmetric = asym <= atol
    if not symmetric:
        i, j = np.unravel_index(np.argmax(np.abs(w - w.T)), w.shape)
        failures.append(f"not symmetric: |W[{i},{j}] - W[{j},{i}]| = {asym:.3g}")

    row_err = float(np.max(np.abs(w.sum(axis=1) - 1.0))) if n else 0.0
    stochastic = row_err <= atol
    if not stochastic:
        i = int(np.argmax(np.abs(w.sum(axis=1) - 1.0)))
        failures.append(f"row {i} sums to {w.sum(axis=1)[i]!r} (violation {row_err:.3g})")
    col_err = float(np.max(np.abs(w.sum(axis=0) - 1.0))) if n else 0.0
    bistochastic = stochastic and col_err <= atol
    if stochastic and col_err > atol:
        j = int(np.argmax(np.abs(w.sum(axis=0) - 1.0)))
        failures.append(f"column {j} sums to {w.sum(axis=0)[j]!r} (violation {col_err:.3g})")

    min_entry = float(np.min(w)) if n else 0.0
    if min_entry < -atol:
        i, j = np.unravel_index(np.argmin(w), w.shape)
        failures.append(f"negative entry W[{i},{j}] = {min_entry:.3g}")

    support_ok = True
    if graph is not None:
        if graph.n != n:
            support_ok = False
            failures.append(f"graph has {graph.n} nodes but matrix is {n}x{n}")
        else:
            allowed = graph.adjacency_matrix().astype(bool)
            np.fill_diagonal(allowed, True)
            off_support = np.abs(np.where(allowed, 0.0, w))
            worst = float(np.max(off_support))
            if worst > atol:
                support_ok = False
                i, j = np.unravel_index(np.argmax(off_support), w.shape)
                failures.append(
                    f"mass {worst:.3g} at non-edge ({i},{j}) outside graph support"
                )

    has_loop = bool(np.any(np.diag(w) > atol))
    aperiodic = has_loop or not _support_is_bipartite(w, atol)

    return ValidationReport(
        ok=not failures and min_entry >= -atol,
        stochastic=stochastic,
        symmetric=symmetric,
        bistochastic=bistochastic,
        support_ok=support_ok,
        aperiodic=aperiodic,
        failures=tuple(failures),
        max_row_sum_error=max(row_err, col_err),
        max_asymmetry=asym,
        min_entry=min_entry,
    )


#: Convergence threshold and iteration cap for the power-iteration fallback.
_STATIONARY_L1_TOL = 1e-10
_STATIONARY_MAX_ITER = 10**6


def stationary_distribution(tm: TransitionMatrix) -> np.ndarray:
    """Stationary law of the chain.

    Doubly stochastic chains get the exact uniform law.  Other row-stochastic
    matrices are power-iterated (pi <- pi W) until the L1 residual
    ``||pi W - pi||_1`` drops below 1e-10.
    """
    n = tm.n
    if tm.bistochastic:
        return np.full(n, 1.0 / n)
    rows = tm.w.sum(axis=1)
    if not np.allclose(rows, 1.0, atol=1e-6, rtol=0.0):
        raise TransitionError("stationary distribution undefined: rows do not sum to 1")
    pi = np.full(n, 1.0 / n)
    for _ in range(_STATIONARY_MAX_ITER):
        nxt = pi @ tm.w
        nxt /= nxt.sum()
        if float(np.abs(nxt - pi).sum()) <= _STATIONARY_L1_TOL:
            return nxt
        pi = nxt
    raise TransitionError(
        f"power iteration failed to converge within {_STATIONARY_MAX_ITER} iterations"
    )


# --------------------------------------------------------------------------- #
# Round-trip CSV persistence
# --------------------------------------------------------------------------- #


def save_csv(tm: TransitionMatrix, path: str | Path) -> None:
    """Write the matrix as CSV with 17 significant digits (lossless for f64)."""
    write_matrix_csv(path, tm.w)


def load_csv(path: str | Path) -> TransitionMatrix:
    """Read a matrix CSV back; metadata flags are recomputed from the entries."""
    path = Path(path)
    if not path.exists():
        raise TransitionError(f"transition CSV not found: {path}")
    try:
        w = read_matrix_csv(path)
    except ValueError as exc:
        raise TransitionError(f"failed to parse transition CSV {path}: {exc}") from exc
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise TransitionError(f"{path}: expected a square matrix, got shape {w.shape}")
    return from_array(w)
