"""Token-walk DP-SGD and its baselines.

The private walk: at each step the visiting node computes a stochastic
gradient of its local objective, clips it to the sensitivity ``delta``, adds
per-coordinate Gaussian noise of variance ``delta**2 * sigma**2``, applies the
step, and forwards the token along the transition matrix.  Local DP-SGD runs
the same update with an i.i.d. uniform node schedule; central DP-SGD averages
all clipped node gradients per round under a trusted aggregator, with a single
noise draw scaled down by ``1/n``.

Step sizes can be given explicitly or derived from the strongly convex
convergence analysis (`step_size_theorem2`), whose predicted error ceiling is
exposed by `error_bound_theorem2` for loose upper-bound checks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.special import expit

from .datasets import Dataset
from .errors import ConfigError
from .ioutil import dump_json, write_rows_csv
from .spectral import mixing_time_empirical, mixing_time_spectral_bound
from .transition import TransitionMatrix
from .walk import Trajectory, simulate

__all__ = [
    "Objective",
    "AveragingObjective",
    "LogisticObjective",
    "SgdConfig",
    "RunRecord",
    "clip",
    "step_size_theorem2",
    "error_bound_theorem2",
    "run_rw_dpsgd",
    "run_local_dpsgd",
    "run_central_dpsgd",
    "save_run_csv",
]

#: Appendix-constant of the strongly convex analysis; 3 * gamma * L * C = 39 gamma L.
THEOREM2_C = 13.0


# --------------------------------------------------------------------------- #
# Objectives
# --------------------------------------------------------------------------- #


@runtime_checkable
class Objective(Protocol):
    """Node-decomposed objective ``f = (1/n) sum_v f_v``."""

    n_nodes: int
    dim: int
    smoothness: float
    strong_convexity: float

    def gradient(
        self, node: int, x: np.ndarray, rng: np.random.Generator, batch_size: int | None
    ) -> np.ndarray: ...

    def objective_value(self, x: np.ndarray) -> float: ...

    def optimum(self) -> np.ndarray | None: ...

    def heterogeneity(self) -> float | None: ...

    def accuracy(self, x: np.ndarray) -> float | None: ...


class AveragingObjective:
    """Quadratic consensus: ``f_v(x) = ||x - y_v||^2``; optimum is the mean.

    Smoothness and strong convexity are both exactly 2, and the gradient
    heterogeneity at the optimum is computable in closed form, which makes
    this the reference objective for step-size and bound checks.
    """

    def __init__(self, values: np.ndarray):
        raw = np.asarray(values, dtype=float)
        if raw.ndim == 1:  # n scalars become (n, 1)
            raw = raw[:, None]
        if raw.ndim != 2 or raw.shape[0] < 1:
            raise ConfigError(f"values must be (n,) or (n, d), got shape {raw.shape}")
        self.values = raw
        self.n_nodes = raw.shape[0]
        self.dim = raw.shape[1]
        self.smoothness = 2.0
        self.strong_convexity = 2.0
        self._mean = raw.mean(axis=0)

    def gradient(self, node, x, rng, batch_size):
        return 2.0 * (x - self.values[node])

    def objective_value(self, x):
        return float(np.mean(np.sum((x[None, :] - self.values) ** 2, axis=1)))

    def optimum(self):
        return self._mean.copy()

    def heterogeneity(self):
        return float(2.0 * np.max(np.linalg.norm(self._mean[None, :] - self.values, axis=1)))

    def accuracy(self, x):
        return None


class LogisticObjective:
    """L2-regularized logistic regression over a partitioned dataset.

    ``f_v(x) = mean over v's samples of log(1 + exp(-y a.x)) + (reg/2)||x||^2``.
    Rows are unit-norm after preprocessing, so smoothness is ``1/4 + reg``.
    Stochastic gradients subsample the local dataset uniformly with
    replacement (unbiased for the local gradient).
    """

    def __init__(self, dataset: Dataset, reg: float = 0.0):
        if reg < 0:
            raise ConfigError(f"regularization must be nonnegative, got {reg}")
        self._blocks = [
            (dataset.features[idx], dataset.labels[idx]) for idx in dataset.partition
        ]
        self.n_nodes = len(self._blocks)
        self.dim = dataset.features.shape[1]
        self.reg = reg
        self.smoothness = 0.25 + reg
        self.strong_convexity = reg
        train = dataset.train_indices
        self._train = (dataset.features[train], dataset.labels[train])
        test = dataset.test_indices
        self._test = (dataset.features[test], dataset.labels[test])

    def gradient(self, node, x, rng, batch_size):
        feats, labels = self._blocks[node]
        m = feats.shape[0]
        if batch_size is not None and batch_size < m:
            idx = rng.integers(0, m, size=batch_size)
            feats, labels = feats[idx], labels[idx]
        margins = labels * (feats @ x)
        weights = -labels * expit(-margins)
        return feats.T @ weights / feats.shape[0] + self.reg * x

    def objective_value(self, x):
        feats, labels = self._train
        margins = labels * (feats @ x)
        return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * self.reg * (x @ x))

    def optimum(self):
        return None

    def heterogeneity(self):
        return None

    def accuracy(self, x):
        feats, labels = self._test
        if feats.shape[0] == 0:
            return None
        pred = np.where(feats @ x >= 0.0, 1.0, -1.0)
        return float(np.mean(pred == labels))


# --------------------------------------------------------------------------- #
# Configuration and results
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class SgdConfig:
    """Knobs for one optimization run.

    ``gamma=None`` derives the step size from the strongly convex analysis
    (`step_size_theorem2`), which needs an initial distance: provided via
    `dist0_override`, else ``||x0 - x*||^2`` when the optimum is known, else
    the ``||x0||^2 + 1`` heuristic.  ``sigma`` is the noise multiplier (0 for
    non-private runs); per-coordinate noise std is ``clip_threshold * sigma``.
    """

    steps: int
    gamma: float | None = None
    sigma: float = 0.0
    clip_threshold: float = 1.0
    schedule: str = "constant"
    burn_in: int = 0
    seed: int = 0
    contribution_cap: int | None = None
    batch_size: int | None = 1
    start_node: int = 0
    x0: float | np.ndarray | None = None
    dist0_override: float | None = None
    trace_points: int = 512

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigError(f"steps must be nonnegative, got {self.steps}")
        if self.gamma is not None and not self.gamma >= 0.0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if self.sigma < 0.0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma}")
        if not self.clip_threshold > 0.0:
            raise ConfigError(f"clip_threshold must be positive, got {self.clip_threshold}")
        if self.schedule not in ("constant", "inverse_t"):
            raise ConfigError(f"schedule must be 'constant' or 'inverse_t', got {self.schedule!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class RunRecord:
    """Traces of one run, subsampled every `stride` steps (plus the last)."""

    algorithm: str
    ts: np.ndarray
    objective: np.ndarray
    sq_distance: np.ndarray | None
    accuracy: np.ndarray | None
    final_x: np.ndarray
    gamma: float
    stride: int
    wall_clock: float
    trajectory: Trajectory | None = None
    extras: dict = field(default_factory=dict)


# --------------------------------------------------------------------------- #
# Analysis formulas
# --------------------------------------------------------------------------- #


def clip(g: np.ndarray, delta: float) -> np.ndarray:
    """Rescale `g` onto the L2 ball of radius `delta` (no-op inside it)."""
    if not delta > 0.0:
        raise ConfigError(f"clip threshold must be positive, got {delta}")
    norm = float(np.linalg.norm(g))
    if norm <= delta:
        return g
    return g * (delta / norm)


def step_size_theorem2(
    l_smooth: float, mu: float, steps: int, dist0: float, tau_mix: float, zeta_star: float
) -> float:
    """Strongly convex step size ``min(1/L, ln(T d0 mu^2 / (39 L tau z^2)) / (T mu))``.

    Falls back to ``1/L`` when the log branch is undefined (zero
    heterogeneity) or non-positive (the target contraction is already met).
    """
    if min(l_smooth, mu, steps, dist0, tau_mix) <= 0:
        raise ConfigError("step_size_theorem2 requires positive L, mu, T, dist0, tau_mix")
    inv_l = 1.0 / l_smooth
    if zeta_star <= 0.0:
        return inv_l
    arg = steps * dist0 * mu**2 / (3.0 * THEOREM2_C * l_smooth * tau_mix * zeta_star**2)
    if arg <= 1.0:
        return inv_l
    return min(inv_l, math.log(arg) / (steps * mu))


def error_bound_theorem2(
    l_smooth: float,
    mu: float,
    steps: int,
    dist0: float,
    tau_mix: float,
    zeta_star: float,
    dim: int,
    sigma: float,
    delta_sens: float,
    sigma_sgd: float,
) -> float:
    """Predicted ``E||x_T - x*||^2`` ceiling for the tuned step size.

    ``2 exp(-T mu / L) d0 + (39 tau z^2 L / (mu^3 T)
    + (dim sigma^2 delta^2 + sigma_sgd^2) L / (mu^2 T)) * ln(T mu^2 d0 /
    (39 L tau z^2))``.  The log factor is clamped at 0 from below and
    replaced by ``ln T`` when heterogeneity is zero (the analysis horizon),
    keeping the bound finite; treat the result as an order-of-magnitude
    ceiling, not an estimate.
    """
    if min(l_smooth, mu, steps, dist0, tau_mix) <= 0:
        raise ConfigError("error_bound_theorem2 requires positive L, mu, T, dist0, tau_mix")
    contraction = 2.0 * math.exp(-steps * mu / l_smooth) * dist0
    c39 = 3.0 * THEOREM2_C
    if zeta_star > 0.0:
        log_arg = steps * mu**2 * dist0 / (c39 * l_smooth * tau_mix * zeta_star**2)
        log_factor = max(math.log(log_arg), 0.0) if log_arg > 0 else 0.0
    else:
        log_factor = math.log(steps) if steps > 1 else 0.0
    walk_term = c39 * tau_mix * zeta_star**2 * l_smooth / (mu**3 * steps)
    noise_term = (dim * sigma**2 * delta_sens**2 + sigma_sgd**2) * l_smooth / (mu**2 * steps)
    return contraction + (walk_term + noise_term) * log_factor


# --------------------------------------------------------------------------- #
# Run loops
# --------------------------------------------------------------------------- #


def _initial_point(obj: Objective, cfg: SgdConfig) -> np.ndarray:
    if cfg.x0 is None:
        return np.zeros(obj.dim)
    if np.isscalar(cfg.x0):
        return np.full(obj.dim, float(cfg.x0))
    x0 = np.asarray(cfg.x0, dtype=float)
    if x0.shape != (obj.dim,):
        raise ConfigError(f"x0 shape {x0.shape} does not match dimension {obj.dim}")
    return x0.copy()


def _resolve_dist0(obj: Objective, cfg: SgdConfig, x0: np.ndarray) -> float:
    if cfg.dist0_override is not None:
        return float(cfg.dist0_override)
    optimum = obj.optimum()
    if optimum is not None:
        return float(np.sum((x0 - optimum) ** 2))
    # Unit-norm data keeps the optimum bounded; a crude but safe default.
    return float(x0 @ x0 + 1.0)


def _resolve_gamma(
    obj: Objective, cfg: SgdConfig, x0: np.ndarray, tau_mix: float
) -> float:
    if cfg.gamma is not None:
        return cfg.gamma
    zeta = obj.heterogeneity()
    if obj.strong_convexity <= 0.0:
        raise ConfigError(
            "automatic step size needs strong convexity > 0; pass gamma explicitly"
        )
    return step_size_theorem2(
        obj.smoothness,
        obj.strong_convexity,
        max(cfg.steps, 1),
        _resolve_dist0(obj, cfg, x0),
        tau_mix,
        zeta if zeta is not None else 0.0,
    )


def _mixing_estimate(w: TransitionMatrix) -> float:
    if w.n <= 256:
        return float(max(mixing_time_empirical(w, 0.25), 1))
    return float(max(mixing_time_spectral_bound(w), 1))


def _descent_loop(
    obj: Objective,
    cfg: SgdConfig,
    node_at,
    noise_only_at,
    gamma: float,
    algorithm: str,
    trajectory: Trajectory | None,
) -> RunRecord:
    """Shared token-update loop; `node_at(t)` supplies the schedule."""
    start = time.perf_counter()
    root = np.random.SeedSequence(cfg.seed)
    _, noise_child, batch_child = root.spawn(3)
    noise_rng = np.random.default_rng(noise_child)
    batch_rng = np.random.default_rng(batch_child)

    x = _initial_point(obj, cfg)
    optimum = obj.optimum()
    noise_std = cfg.clip_threshold * cfg.sigma
    stride = max(1, cfg.steps // max(cfg.trace_points, 1))

    ts: list[int] = []
    objective: list[float] = []
    sq_distance: list[float] = []
    accuracy: list[float] = []
    track_acc = obj.accuracy(x) is not None

    def record(t: int) -> None:
        ts.append(t)
        objective.append(obj.objective_value(x))
        if optimum is not None:
            sq_distance.append(float(np.sum((x - optimum) ** 2)))
        if track_acc:
            accuracy.append(obj.accuracy(x))

    record(0)
    updates = 0
    for t in range(cfg.steps):
        if t >= cfg.burn_in:
            updates += 1
            gamma_t = gamma if cfg.schedule == "constant" else gamma / updates
            if noise_only_at(t):
                g = np.zeros(obj.dim)
            else:
                g = clip(obj.gradient(node_at(t), x, batch_rng, cfg.batch_size), cfg.clip_threshold)
            if noise_std > 0.0:
                g = g + noise_rng.normal(0.0, noise_std, size=obj.dim)
            x = x - gamma_t * g
        if (t + 1) % stride == 0 or t + 1 == cfg.steps:
            record(t + 1)

    return RunRecord(
        algorithm=algorithm,
        ts=np.asarray(ts, dtype=np.int64),
        objective=np.asarray(objective),
        sq_distance=np.asarray(sq_distance) if optimum is not None else None,
        accuracy=np.asarray(accuracy) if track_acc else None,
        final_x=x,
        gamma=gamma,
        stride=stride,
        wall_clock=time.perf_counter() - start,
        trajectory=trajectory,
    )


def run_rw_dpsgd(w: TransitionMatrix, obj: Objective, cfg: SgdConfig) -> RunRecord:
    """Private random-walk gradient descent over the chain `w`.

    The walk, the Gaussian noise, and minibatch sampling draw from three
    sub-streams spawned from ``cfg.seed``, so runs are bitwise reproducible
    and the schedule is independent of the noise.
    """
    if w.n != obj.n_nodes:
        raise ConfigError(f"chain has {w.n} nodes but objective has {obj.n_nodes}")
    root = np.random.SeedSequence(cfg.seed)
    walk_child = root.spawn(3)[0]
    traj = simulate(
        w,
        cfg.start_node,
        cfg.steps,
        walk_child,
        contribution_cap=cfg.contribution_cap,
        burn_in=cfg.burn_in,
    )
    x0 = _initial_point(obj, cfg)
    gamma = cfg.gamma if cfg.gamma is not None else _resolve_gamma(
        obj, cfg, x0, _mixing_estimate(w)
    )
    return _descent_loop(
        obj,
        cfg,
        node_at=lambda t: int(traj.nodes[t]),
        noise_only_at=lambda t: bool(traj.noise_only[t]),
        gamma=gamma,
        algorithm="rw_dpsgd",
        trajectory=traj,
    )


def run_local_dpsgd(obj: Objective, cfg: SgdConfig, n: int) -> RunRecord:
    """Local DP-SGD baseline: i.i.d. uniform node schedule, no amplification.

    Shares the update machinery with the walk variant; only the schedule and
    the externally calibrated `sigma` differ.
    """
    if n != obj.n_nodes:
        raise ConfigError(f"n={n} but objective has {obj.n_nodes} nodes")
    root = np.random.SeedSequence(cfg.seed)
    schedule_child = root.spawn(3)[0]
    schedule = np.random.default_rng(schedule_child).integers(0, n, size=max(cfg.steps, 1))
    gamma = cfg.gamma if cfg.gamma is not None else _resolve_gamma(obj, cfg, _initial_point(obj, cfg), 1.0)
    return _descent_loop(
        obj,
        cfg,
        node_at=lambda t: int(schedule[t]),
        noise_only_at=lambda t: False,
        gamma=gamma,
        algorithm="local_dpsgd",
        trajectory=None,
    )


def run_central_dpsgd(obj: Objective, cfg: SgdConfig) -> RunRecord:
    """Trusted-aggregator baseline: per-round averaged clipped gradients.

    ``cfg.steps`` counts rounds.  Each round every node contributes its full
    clipped local gradient; one Gaussian draw of per-coordinate std
    ``clip_threshold * sigma / n`` is added to the average.
    """
    start = time.perf_counter()
    n = obj.n_nodes
    root = np.random.SeedSequence(cfg.seed)
    _, noise_child, batch_child = root.spawn(3)
    noise_rng = np.random.default_rng(noise_child)
    batch_rng = np.random.default_rng(batch_child)

    x = _initial_point(obj, cfg)
    gamma = cfg.gamma if cfg.gamma is not None else _resolve_gamma(obj, cfg, x, 1.0)
    optimum = obj.optimum()
    noise_std = cfg.clip_threshold * cfg.sigma / n
    track_acc = obj.accuracy(x) is not None
    stride = max(1, cfg.steps // max(cfg.trace_points, 1))

    ts: list[int] = []
    objective: list[float] = []
    sq_distance: list[float] = []
    accuracy: list[float] = []

    def record(t: int) -> None:
        ts.append(t)
        objective.append(obj.objective_value(x))
        if optimum is not None:
            sq_distance.append(float(np.sum((x - optimum) ** 2)))
        if track_acc:
            accuracy.append(obj.accuracy(x))

    record(0)
    for t in range(cfg.steps):
        acc_g = np.zeros(obj.dim)
        for v in range(n):
            acc_g += clip(obj.gradient(v, x, batch_rng, None), cfg.clip_threshold)
        g = acc_g / n
        if noise_std > 0.0:
            g = g + noise_rng.normal(0.0, noise_std, size=obj.dim)
        gamma_t = gamma if cfg.schedule == "constant" else gamma / (t + 1)
        x = x - gamma_t * g
        if (t + 1) % stride == 0 or t + 1 == cfg.steps:
            record(t + 1)

    return RunRecord(
        algorithm="central_dpsgd",
        ts=np.asarray(ts, dtype=np.int64),
        objective=np.asarray(objective),
        sq_distance=np.asarray(sq_distance) if optimum is not None else None,
        accuracy=np.asarray(accuracy) if track_acc else None,
        final_x=x,
        gamma=gamma,
        stride=stride,
        wall_clock=time.perf_counter() - start,
        trajectory=None,
    )


# --------------------------------------------------------------------------- #
# Persistence
# --------------------------------------------------------------------------- #


def save_run_csv(rec: RunRecord, path: str | Path) -> None:
    """(t, objective, sq_distance?, accuracy?) rows; blanks where untracked.

    A JSON header sidecar records the algorithm, stride and wall clock.
    """
    path = Path(path)
    rows = []
    for i, t in enumerate(rec.ts):
        rows.append(
            (
                int(t),
                float(rec.objective[i]),
                float(rec.sq_distance[i]) if rec.sq_distance is not None else "",
                float(rec.accuracy[i]) if rec.accuracy is not None else "",
            )
        )
    write_rows_csv(path, ["t", "objective", "sq_distance", "accuracy"], rows)
    dump_json(
        path.with_suffix(path.suffix + ".json"),
        {
            "algorithm": rec.algorithm,
            "stride": rec.stride,
            "gamma": rec.gamma,
            "steps": int(rec.ts[-1]) if rec.ts.size else 0,
            "wall_clock": rec.wall_clock,
        },
    )
