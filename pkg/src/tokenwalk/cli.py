"""Config-driven command-line runner.

Five subcommands cover the pipeline: ``graph`` (generate/export topologies),
``privacy`` (pairwise accounting and distance series), ``sgd`` (preset
experiment runs), ``calibrate`` (noise search for a DP target), and
``report`` (merge distance series into one long-format CSV).

Every command writes a ``manifest.json`` with the resolved config hash, tool
version, output checksums, wall clock, and seeds, so identical configs can be
verified to reproduce identical artifacts.

Exit codes: 0 success, 2 config/validation, 3 accounting, 4 data,
5 infeasible calibration.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, accountant, datasets, graphs, optim, spectral, transition, walk
from .errors import (
    AccountantError,
    CalibrationError,
    ConfigError,
    DataError,
    GraphError,
    SpectralError,
    TokenwalkError,
    TransitionError,
)
from .ioutil import dump_json, sha256_of_file, sha256_of_text, write_rows_csv

__all__ = ["main"]

SCHEMA_VERSION = 1

_EXIT_CONFIG = 2
_EXIT_ACCOUNTANT = 3
_EXIT_DATA = 4
_EXIT_CALIBRATION = 5

_FAMILY_ALIASES = {"erdos-renyi": "erdos_renyi", "edge-list": "edge_list", "exponential": "hypercube"}


# --------------------------------------------------------------------------- #
# Shared plumbing
# --------------------------------------------------------------------------- #


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise ConfigError(f"invalid seed list {text!r} (expected comma-separated ints)") from None


def _graph_spec_from_args(args: argparse.Namespace, seed: int | None) -> graphs.GraphSpec:
    family = _FAMILY_ALIASES.get(args.family, args.family)
    cluster_sizes = prob_matrix = None
    if args.cluster_sizes:
        cluster_sizes = tuple(int(s) for s in args.cluster_sizes.split(","))
    if args.prob_matrix:
        prob_matrix = tuple(
            tuple(float(x) for x in row.split(",")) for row in args.prob_matrix.split(";")
        )
    return graphs.GraphSpec(
        family=family,
        n=args.n,
        rows=getattr(args, "rows", None),
        cols=getattr(args, "cols", None),
        dim=getattr(args, "dim", None),
        q=getattr(args, "q", None),
        radius=getattr(args, "radius", None),
        cluster_sizes=cluster_sizes,
        prob_matrix=prob_matrix,
        path=getattr(args, "edge_file", None),
        seed=seed,
    )


def _build_chain(g: graphs.Graph, kappa_text: str | None, steps: int | None) -> transition.TransitionMatrix:
    tm = transition.hamilton_weighting(g)
    if kappa_text is None:
        return tm
    if kappa_text == "auto":
        if not steps:
            raise ConfigError("--kappa auto needs --steps to derive 1/T^2")
        kappa = 1.0 / float(steps) ** 2
    else:
        try:
            kappa = float(kappa_text)
        except ValueError:
            raise ConfigError(f"invalid --kappa {kappa_text!r}") from None
    return transition.blend_self_loops(tm, kappa)


def _apply_config_file(args: argparse.Namespace, allowed: set[str]) -> None:
    """Overlay a JSON config stanza; explicit CLI flags win, unknown keys fail."""
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        stanza = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(stanza, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    version = stanza.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    unknown = set(stanza) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    defaults = vars(args).get("_explicit", set())
    for key, value in stanza.items():
        if key not in defaults:
            setattr(args, key, value)


class _Manifest:
    """Collects outputs and timings for a command run."""

    def __init__(self, out_dir: Path, command: str, config: dict, seeds: list[int]):
        self.out_dir = out_dir
        self.command = command
        self.config = config
        self.seeds = seeds
        self.t0 = time.perf_counter()
        self.files: list[Path] = []

    def add(self, path: Path) -> Path:
        self.files.append(path)
        return path

    def write(self) -> None:
        canonical = json.dumps(self.config, sort_keys=True, default=str)
        payload = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "config_hash": sha256_of_text(canonical),
            "tool_version": __version__,
            "seeds": self.seeds,
            "wall_clock": time.perf_counter() - self.t0,
            "files": {p.name: sha256_of_file(p) for p in self.files if p.exists()},
        }
        dump_json(self.out_dir / "manifest.json", payload)


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _public_config(args: argparse.Namespace) -> dict:
    return {
        k: v
        for k, v in vars(args).items()
        if not k.startswith("_") and k not in ("func", "config") and v is not None
    }


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #


def cmd_graph(args: argparse.Namespace) -> int:
    _apply_config_file(args, {"family", "n", "rows", "cols", "dim", "q", "radius",
                              "cluster_sizes", "prob_matrix", "edge_file", "seed", "out"})
    out = _out_dir(args)
    manifest = _Manifest(out, "graph", _public_config(args), [args.seed] if args.seed is not None else [])
    g = graphs.generate(_graph_spec_from_args(args, args.seed))
    graphs.save_edge_list(g, manifest.add(out / "edges.txt"))
    manifest.add(out / "edges.txt.json")
    deg = g.degrees
    dist = graphs.shortest_path_distances(g)
    dump_json(
        manifest.add(out / "stats.json"),
        {
            "n": g.n,
            "edges": len(g.edges),
            "degree_min": int(deg.min()),
            "degree_max": int(deg.max()),
            "diameter": int(dist.max()),
            "retries": g.retries,
            "hash": g.content_hash(),
        },
    )
    manifest.write()
    return 0


def cmd_privacy(args: argparse.Namespace) -> int:
    _apply_config_file(args, {"family", "n", "rows", "cols", "dim", "q", "radius",
                              "cluster_sizes", "prob_matrix", "edge_file", "kappa",
                              "alpha", "sigma2", "steps", "method", "delta", "seeds", "out"})
    out = _out_dir(args)
    seeds = _parse_seeds(args.seeds)
    manifest = _Manifest(out, "privacy", _public_config(args), seeds)
    p = accountant.PrivacyParams(alpha=args.alpha, sigma2=args.sigma2, steps=args.steps)

    per_seed_series: list[list[accountant.DistanceBucket]] = []
    for seed in seeds:
        g = graphs.generate(_graph_spec_from_args(args, seed))
        tm = _build_chain(g, args.kappa, args.steps)
        report = transition.validate(tm, g)
        report.raise_if_failed()
        matrix = accountant.pairwise_matrix(tm, p, method=args.method)
        accountant.save_pairwise_csv(matrix, manifest.add(out / f"pairwise_seed{seed}.csv"))
        manifest.add(out / f"pairwise_seed{seed}.csv.json")
        dist = graphs.shortest_path_distances(g)
        buckets = accountant.mean_loss_by_distance(matrix, dist)
        accountant.save_distance_series_csv(
            buckets, manifest.add(out / f"distance_seed{seed}.csv")
        )
        per_seed_series.append(buckets)

    merged: dict[int, list[accountant.DistanceBucket]] = {}
    for series in per_seed_series:
        for b in series:
            merged.setdefault(b.distance, []).append(b)
    averaged = []
    converted = []
    tail = float(np.log(1.0 / args.delta) / (args.alpha - 1.0))
    for d in sorted(merged):
        means = np.array([b.mean for b in merged[d]])
        counts = sum(b.count for b in merged[d])
        averaged.append(
            accountant.DistanceBucket(
                distance=d,
                mean=float(means.mean()),
                std=float(means.std()),
                count=counts,
            )
        )
        converted.append((d, float(means.mean()) + tail, args.delta, counts))
    accountant.save_distance_series_csv(averaged, manifest.add(out / "distance_mean.csv"))
    write_rows_csv(
        manifest.add(out / "distance_dp.csv"),
        ["distance", "epsilon_dp", "delta", "count"],
        converted,
    )
    manifest.write()
    return 0


def _load_houses_or_die(n_users: int, seed: int) -> datasets.Dataset:
    path = datasets.find_houses_csv()
    if path is None:
        raise DataError(
            "Houses dataset not found. Fetch it with scripts/fetch_houses.py and "
            f"point {datasets.DATA_DIR_ENV} at the directory containing houses.csv "
            "(a 256-row sample ships in data/houses_sample.csv for smoke tests)."
        )
    raw = datasets.load_csv(path, label_column="median_house_value")
    return datasets.preprocess(raw, n_users=n_users, seed=seed)


def _synthetic_dataset(n_users: int, per_user: int, seed: int) -> datasets.Dataset:
    return datasets.synth_linear(n_users=n_users, per_user=per_user, d=8, margin=0.3, seed=seed)


def _summary_row(rec: optim.RunRecord) -> dict:
    row = {
        "algorithm": rec.algorithm,
        "gamma": rec.gamma,
        "final_objective": float(rec.objective[-1]),
        "wall_clock": rec.wall_clock,
    }
    if rec.accuracy is not None:
        row["final_accuracy"] = float(rec.accuracy[-1])
    if rec.sq_distance is not None:
        row["final_sq_distance"] = float(rec.sq_distance[-1])
    return row


def cmd_sgd(args: argparse.Namespace) -> int:
    _apply_config_file(args, {"preset", "n", "epochs", "steps", "gamma", "sigma",
                              "clip", "target_eps", "delta", "seeds", "synthetic",
                              "per_user", "out"})
    out = _out_dir(args)
    seeds = _parse_seeds(args.seeds)
    manifest = _Manifest(out, f"sgd:{args.preset}", _public_config(args), seeds)
    summary: dict = {"preset": args.preset, "runs": []}

    if args.preset == "averaging":
        n = args.n or 32
        steps = args.steps or (args.epochs or 1563) * n
        g = graphs.generate(graphs.GraphSpec(family="ring", n=n))
        tm = transition.with_self_loops(g, 1.0 / 3.0)
        for seed in seeds:
            values = np.random.default_rng(np.random.SeedSequence(seed)).normal(size=n)
            obj = optim.AveragingObjective(values)
            cfg = optim.SgdConfig(
                steps=steps, gamma=args.gamma, sigma=args.sigma or 0.0,
                clip_threshold=args.clip or 1e9, seed=seed, x0=100.0,
            )
            rec = optim.run_rw_dpsgd(tm, obj, cfg)
            optim.save_run_csv(rec, manifest.add(out / f"averaging_seed{seed}.csv"))
            manifest.add(out / f"averaging_seed{seed}.csv.json")
            row = _summary_row(rec)
            row["seed"] = seed
            row["var_y"] = float(np.var(values))
            summary["runs"].append(row)

    elif args.preset == "heterogeneity":
        n = args.n or 200
        g = graphs.generate(graphs.GraphSpec(family="geometric", n=n, seed=seeds[0]))
        tm = transition.blend_self_loops(transition.hamilton_weighting(g), 0.1)
        steps = args.steps or (args.epochs or 50) * n
        for shuffled in (False, True):
            ds = datasets.synth_heterogeneous_geometric(g, seed=seeds[0], shuffled=shuffled)
            obj = optim.LogisticObjective(ds)
            cfg = optim.SgdConfig(
                steps=steps, gamma=args.gamma or 1.0, sigma=args.sigma or 0.0,
                clip_threshold=args.clip or 1.0, seed=seeds[0],
            )
            rec = optim.run_rw_dpsgd(tm, obj, cfg)
            tag = "shuffled" if shuffled else "spatial"
            optim.save_run_csv(rec, manifest.add(out / f"heterogeneity_{tag}.csv"))
            manifest.add(out / f"heterogeneity_{tag}.csv.json")
            row = _summary_row(rec)
            row["shuffled"] = shuffled
            summary["runs"].append(row)

    elif args.preset in ("fig2", "table1-rw"):
        n = args.n or 2048
        epochs = args.epochs or 256
        steps = args.steps or epochs * n
        delta = args.delta or 1e-6
        if args.synthetic:
            ds = datasets.synth_linear(n, args.per_user or 8, d=8, margin=0.3, seed=seeds[0])
        else:
            ds = _load_houses_or_die(n, seed=seeds[0])
        obj = optim.LogisticObjective(ds)
        g = graphs.generate(graphs.GraphSpec(family="complete", n=n))
        tm = transition.hamilton_weighting(g)
        template = accountant.PrivacyParams(alpha=2.0, sigma2=16.0, steps=steps)
        targets = [args.target_eps or 1.0] if args.preset == "fig2" else [0.5, 1.0, 2.0]
        for eps_target in targets:
            target = accountant.DpPoint(epsilon=eps_target, delta=delta)
            cal_rw = accountant.calibrate_sigma(tm, template, target, method="exact")
            cal_local = accountant.calibrate_sigma_local(template, target, n)
            for seed in seeds:
                base_cfg = dict(
                    steps=steps, gamma=args.gamma or 0.1,
                    clip_threshold=args.clip or 1.0, seed=seed,
                )
                runs = [optim.run_rw_dpsgd(tm, obj, optim.SgdConfig(
                    sigma=float(np.sqrt(cal_rw.sigma2)), **base_cfg))]
                if args.preset == "fig2":
                    runs.append(optim.run_local_dpsgd(obj, optim.SgdConfig(
                        sigma=float(np.sqrt(cal_local.sigma2)), **base_cfg), n))
                    rounds_cfg = dict(base_cfg, steps=max(1, steps // n))
                    runs.append(optim.run_central_dpsgd(obj, optim.SgdConfig(
                        sigma=float(np.sqrt(cal_local.sigma2)), **rounds_cfg)))
                for rec in runs:
                    name = f"{rec.algorithm}_eps{eps_target}_seed{seed}.csv"
                    optim.save_run_csv(rec, manifest.add(out / name))
                    manifest.add(out / (name + ".json"))
                    row = _summary_row(rec)
                    row.update(seed=seed, target_eps=eps_target,
                               sigma2_rw=cal_rw.sigma2, sigma2_local=cal_local.sigma2)
                    summary["runs"].append(row)
    else:
        raise ConfigError(f"unknown preset {args.preset!r}")

    dump_json(manifest.add(out / "summary.json"), summary)
    manifest.write()
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    _apply_config_file(args, {"family", "n", "rows", "cols", "dim", "q", "radius",
                              "cluster_sizes", "prob_matrix", "edge_file", "kappa",
                              "target_eps", "delta", "statistic", "distance",
                              "steps", "method", "seed", "out"})
    out = _out_dir(args)
    manifest = _Manifest(out, "calibrate", _public_config(args),
                         [args.seed] if args.seed is not None else [])
    g = graphs.generate(_graph_spec_from_args(args, args.seed))
    tm = _build_chain(g, args.kappa, args.steps)
    template = accountant.PrivacyParams(alpha=2.0, sigma2=16.0, steps=args.steps)
    target = accountant.DpPoint(epsilon=args.target_eps, delta=args.delta)
    stat_name = args.statistic.replace("-", "_")
    if stat_name == "mean_at_distance":
        statistic = accountant.mean_at_distance(args.distance)
        dist = graphs.shortest_path_distances(g)
    else:
        statistic = accountant.Statistic(stat_name)
        dist = None
    result = accountant.calibrate_sigma(
        tm, template, target, statistic, dist=dist, method=args.method
    )
    dump_json(
        manifest.add(out / "calibration.json"),
        {
            "sigma2": result.sigma2,
            "epsilon": result.epsilon,
            "alpha": result.alpha,
            "rdp_statistic": result.rdp_statistic,
            "gap_limited": result.gap_limited,
            "target_eps": target.epsilon,
            "delta": target.delta,
            "statistic": stat_name,
            "method": args.method,
        },
    )
    manifest.write()
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    _apply_config_file(args, {"inputs", "out"})
    if not args.inputs:
        raise ConfigError("report needs at least one input distance-series CSV")
    out = _out_dir(args)
    manifest = _Manifest(out, "report", _public_config(args), [])
    rows = []
    for spec in args.inputs:
        if "=" in spec:
            path_text, source = spec.split("=", 1)
        else:
            path_text, source = spec, Path(spec).stem
        path = Path(path_text)
        if not path.exists():
            raise ConfigError(f"input not found: {path}")
        try:
            buckets = accountant.read_distance_series_csv(path)
        except AccountantError as exc:
            raise ConfigError(f"unreadable distance series: {exc}") from exc
        meta_path = path.with_suffix(path.suffix + ".json")
        method = graph_name = ""
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            method = str(meta.get("method", ""))
            graph_name = str(meta.get("graph", meta.get("graph_hash", "")))[:12]
        for b in buckets:
            rows.append((b.distance, b.mean, b.std, method, graph_name, source))
    write_rows_csv(
        manifest.add(out / "report.csv"),
        ["distance", "mean", "std", "method", "graph", "source"],
        rows,
    )
    manifest.write()
    return 0


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #


class _TrackedStore(argparse._StoreAction):
    """Store action that records explicitly passed dests in ``_explicit``."""

    def __call__(self, parser, namespace, values, option_string=None):
        super().__call__(parser, namespace, values, option_string)
        if not hasattr(namespace, "_explicit"):
            namespace._explicit = set()
        namespace._explicit.add(self.dest)


class _TrackedStoreTrue(argparse._StoreTrueAction):
    def __call__(self, parser, namespace, values, option_string=None):
        super().__call__(parser, namespace, values, option_string)
        if not hasattr(namespace, "_explicit"):
            namespace._explicit = set()
        namespace._explicit.add(self.dest)


class _TrackingParser(argparse.ArgumentParser):
    """Parser whose default actions flag user-provided arguments.

    The config overlay (`_apply_config_file`) needs to distinguish "flag left
    at its default" from "flag given on the command line"; only the former
    may be filled in from a config file.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.register("action", None, _TrackedStore)
        self.register("action", "store_true", _TrackedStoreTrue)


def _add_graph_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--family", required=True,
                    help="complete|ring|star|grid2d|hypercube|erdos-renyi|geometric|sbm|edge-list|exponential")
    sp.add_argument("--n", type=int)
    sp.add_argument("--rows", type=int)
    sp.add_argument("--cols", type=int)
    sp.add_argument("--dim", type=int)
    sp.add_argument("--q", type=float)
    sp.add_argument("--radius", type=float)
    sp.add_argument("--cluster-sizes", dest="cluster_sizes")
    sp.add_argument("--prob-matrix", dest="prob_matrix")
    sp.add_argument("--edge-file", dest="edge_file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokenwalk",
        description="Simulate private token walks and account their pairwise privacy loss.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_TrackingParser)

    sp = sub.add_parser("graph", help="generate a graph and export edge list + stats")
    _add_graph_flags(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_graph)

    sp = sub.add_parser("privacy", help="pairwise loss matrices and distance series")
    _add_graph_flags(sp)
    sp.add_argument("--kappa", help="self-loop mass to blend in, or 'auto' for 1/T^2")
    sp.add_argument("--alpha", type=float, default=2.0)
    sp.add_argument("--sigma2", type=float, default=16.0)
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--method", choices=["exact", "closed"], default="closed")
    sp.add_argument("--delta", type=float, default=1e-6)
    sp.add_argument("--seeds", default="0")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_privacy)

    sp = sub.add_parser("sgd", help="run a preset experiment")
    sp.add_argument("--preset", required=True,
                    choices=["fig2", "table1-rw", "heterogeneity", "averaging"])
    sp.add_argument("--n", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--clip", type=float)
    sp.add_argument("--target-eps", dest="target_eps", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--per-user", dest="per_user", type=int)
    sp.add_argument("--synthetic", action="store_true",
                    help="use the synthetic linear dataset instead of Houses")
    sp.add_argument("--seeds", default="0")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sgd)

    sp = sub.add_parser("calibrate", help="search sigma2 for a DP target")
    _add_graph_flags(sp)
    sp.add_argument("--kappa")
    sp.add_argument("--target-eps", dest="target_eps", type=float, required=True)
    sp.add_argument("--delta", type=float, default=1e-6)
    sp.add_argument("--statistic", default="mean_pairs",
                    help="mean_pairs|max_pairs|mean_at_distance")
    sp.add_argument("--distance", type=int)
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--method", choices=["exact", "closed"], default="closed")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("report", help="merge distance series into a long-format CSV")
    sp.add_argument("inputs", nargs="*", metavar="CSV[=label]")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CalibrationError as exc:
        print(f"calibration infeasible: {exc}", file=sys.stderr)
        return _EXIT_CALIBRATION
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return _EXIT_DATA
    except (AccountantError, SpectralError) as exc:
        print(f"accounting error: {exc}", file=sys.stderr)
        return _EXIT_ACCOUNTANT
    except (ConfigError, GraphError, TransitionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except TokenwalkError as exc:  # fallback for new error kinds
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
