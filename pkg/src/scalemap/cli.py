"""Command-line driver: ``fit``, ``simulate``, ``score`` and ``standardize``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, build_config, read_config_file
from .criteria import criteria_from_samples, exact_dic
from .data import StratifiedData, crude_rate_and_smr, expected_cases_indirect
from .engine import SubmodelError, fit
from .graph import (
    AdjacencyGraph,
    DomainPartition,
    GraphError,
    grid_partition,
    lattice_graph,
    load_graph,
    read_id_manifest,
    read_partition_csv,
)
from .laplace import ConvergenceError, ObservedData
from .merge import alpha_from_samples, joined_samples, merge
from .simulation import scenario1, scenario2, score, simulation_study
from .sparse import FactorizationError

log = logging.getLogger("scalemap")

EXIT_OK, EXIT_CONFIG, EXIT_FIT, EXIT_IO = 0, 2, 3, 4
RESULT_HEADER = ("area_id", "mean", "sd", "median", "q025", "q975", "exceed_prob")
SCORE_HEADER = ("E", "model", "DIC", "WAIC", "MARB", "MRRMSE", "Cov", "Length", "L")
# fields that never change the numerical output and are left out of the echo
_NOT_ECHOED = ("out", "workers")


class StageError(Exception):
    def __init__(self, stage: str, code: int, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage, self.code, self.cause = stage, code, cause


class _stage:
    """Map exceptions raised inside a pipeline stage to an exit code."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is None or isinstance(ev, StageError):
            return False
        if isinstance(ev, ConfigError):
            code = EXIT_CONFIG
        elif isinstance(ev, (SubmodelError, ConvergenceError, FactorizationError)):
            code = EXIT_FIT
        elif isinstance(ev, (OSError, GraphError, ValueError, KeyError, csv.Error)):
            code = EXIT_IO if self.name in ("ingest", "write") else EXIT_FIT
        else:
            return False
        raise StageError(self.name, code, ev) from ev


def fmt(v) -> str:
    return f"{v:.6g}"


# ---------------------------------------------------------------- readers

def _read_csv(path, required):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    missing = [c for c in required if c not in rows[0]]
    if missing:
        raise ValueError(f"{path}: missing column(s) {missing}")
    return rows


def read_data_csv(path, g: AdjacencyGraph) -> ObservedData:
    rows = _read_csv(path, ("area_id", "obs", "expected"))
    index = {a: k for k, a in enumerate(g.area_ids)}
    obs = np.full(g.n, np.nan)
    E = np.full(g.n, np.nan)
    for r in rows:
        a = r["area_id"].strip()
        if a not in index:
            raise ValueError(f"data row for unknown area {a!r}")
        obs[index[a]] = float(r["obs"])
        E[index[a]] = float(r["expected"])
    if np.isnan(obs).any():
        raise ValueError(f"data file misses {int(np.isnan(obs).sum())} area(s)")
    return ObservedData(obs.astype(np.int64), E)


def read_stratified_csv(path, area_order=None) -> StratifiedData:
    rows = _read_csv(path, ("area_id", "age_group", "obs", "pop"))
    return StratifiedData.from_long([r["area_id"].strip() for r in rows],
                                    [r["age_group"].strip() for r in rows],
                                    [float(r["obs"]) for r in rows],
                                    [float(r["pop"]) for r in rows], area_order)


def read_centroids(path, g: AdjacencyGraph) -> np.ndarray:
    rows = _read_csv(path, ("area_id", "x_km", "y_km"))
    index = {a: k for k, a in enumerate(g.area_ids)}
    xy = np.full((g.n, 2), np.nan)
    for r in rows:
        a = r["area_id"].strip()
        if a not in index:
            raise ValueError(f"centroid for unknown area {a!r}")
        xy[index[a]] = float(r["x_km"]), float(r["y_km"])
    if np.isnan(xy).any():
        raise ValueError("centroid file does not cover every area")
    return xy


def read_results_csv(path) -> dict:
    rows = _read_csv(path, RESULT_HEADER)
    out = {"area_id": [r["area_id"] for r in rows]}
    for c in RESULT_HEADER[1:]:
        out[c] = np.array([float(r[c]) for r in rows])
    return out


def _align(rep: dict, ids) -> dict:
    """Reorder a parsed results table to the area order ``ids``."""
    pos = {a: k for k, a in enumerate(rep["area_id"])}
    if set(pos) != set(ids):
        raise ValueError("results and truth cover different areas")
    order = np.array([pos[a] for a in ids])
    return {c: (list(ids) if c == "area_id" else rep[c][order]) for c in rep}


def _parse_dims(text, what):
    try:
        r, c = (int(t) for t in str(text).lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"{what} must look like ROWSxCOLS, got {text!r}") from exc
    if r < 1 or c < 1:
        raise ConfigError(f"{what} dimensions must be positive")
    return r, c


def load_map(cfg: RunConfig):
    """Graph and (optional) centroids from files or a synthetic lattice."""
    if cfg.lattice:
        rows, cols = _parse_dims(cfg.lattice, "lattice")
        return lattice_graph(rows, cols, cfg.spacing)
    if not cfg.graph:
        raise ConfigError("either graph or lattice must be given")
    cfg.check_files("graph", "ids", "centroids")
    ids = read_id_manifest(cfg.ids) if cfg.ids else None
    g = load_graph(cfg.graph, ids)
    xy = read_centroids(cfg.centroids, g) if cfg.centroids else None
    return g, xy


def load_partition(cfg: RunConfig, g, xy) -> DomainPartition | None:
    if cfg.model == "global" and not cfg.partition and not cfg.grid:
        return None
    if cfg.partition:
        cfg.check_files("partition")
        return read_partition_csv(cfg.partition, g)
    if cfg.grid:
        if xy is None:
            raise ConfigError("grid partitions need centroids")
        return grid_partition(g, xy, *_parse_dims(cfg.grid, "grid"))
    raise ConfigError(f"{cfg.model} model needs a partition or grid")


# ---------------------------------------------------------------- writers

def write_results(path, area_ids, merged):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for i, a in enumerate(area_ids):
            w.writerow([a] + [fmt(getattr(merged, c)[i]) for c in RESULT_HEADER[1:]])


def write_kv(path, items: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in items.items():
            if isinstance(v, float):
                v = f"{v:.10g}"
            fh.write(f"{k} = {v}\n")


def write_table(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, float) else v for v in r])


def config_echo(cfg: RunConfig) -> dict:
    return {k: v for k, v in cfg.echo().items() if k not in _NOT_ECHOED}


def write_manifest(path, cfg: RunConfig, command: str, extra=None):
    import numba
    import scipy

    from . import __version__

    man = {
        "command": command,
        "seed": cfg.seed,
        "versions": {
            "scalemap": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
        "config": config_echo(cfg),
    }
    if extra:
        man.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- commands

def run_fit(cfg: RunConfig) -> int:
    t_start = time.perf_counter()
    with _stage("ingest"):
        g, xy = load_map(cfg)
        if cfg.data:
            cfg.check_files("data")
            data = read_data_csv(cfg.data, g)
        elif cfg.stratified:
            cfg.check_files("stratified")
            strat = read_stratified_csv(cfg.stratified, g.area_ids)
            data = ObservedData(strat.obs.sum(axis=1).astype(np.int64), expected_cases_indirect(strat))
        else:
            raise ConfigError("fit needs data or stratified input")
    with _stage("partition"):
        part = load_partition(cfg, g, xy)
    with _stage("fit"):
        plan = cfg.plan()
        bundle = fit(plan, g, data, part)
    t_merge = time.perf_counter()
    with _stage("merge"):
        merged = merge(bundle)
        eta = joined_samples(bundle, cfg.samples, cfg.seed)
        alpha = alpha_from_samples(eta) if cfg.samples >= 100 else None
    with _stage("criteria"):
        crit = criteria_from_samples(eta, data.obs, data.expected, seed=cfg.seed)
        exact = exact_dic(merged.marginals, data.obs, data.expected) if plan.kind == "global" else None
    t_end = time.perf_counter()
    with _stage("write"):
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_results(out / "results.csv", g.area_ids, merged)
        report = {
            "model": plan.label(), "family": plan.family, "n": g.n, "D": bundle.partition.D,
            "Dbar": crit.mean_deviance, "pD": crit.p_D, "DIC": crit.DIC, "WAIC": crit.WAIC,
            "D_at_mean": crit.deviance_at_mean, "Dbar_se": crit.mean_deviance_se,
            "DIC_se": crit.dic_se, "saturated": crit.saturated, "S": crit.S, "seed": cfg.seed,
        }
        if exact is not None:
            report.update({"Dbar_exact": exact.mean_deviance, "pD_exact": exact.p_D,
                           "DIC_exact": exact.DIC})
        if alpha is not None:
            report.update({"alpha_mean": alpha.mean, "alpha_sd": alpha.sd,
                           "alpha_q025": alpha.quantiles[0.025], "alpha_median": alpha.quantiles[0.5],
                           "alpha_q975": alpha.quantiles[0.975], "alpha_bandwidth": alpha.bandwidth,
                           "alpha_bandwidth_method": alpha.method})
            write_table(out / "alpha_density.csv", ("alpha", "density"),
                        zip(alpha.grid.tolist(), alpha.density.tolist()))
        write_kv(out / "criteria.txt", report)
        write_manifest(out / "manifest.json", cfg, "fit")
        write_kv(out / "timing.txt", {
            "T.run": bundle.T1, "T.merge": t_end - t_merge, "T.total": t_end - t_start,
            "T2": bundle.T2,
        })
    return EXIT_OK


def _default_centers(n, seed):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    c = rng.choice(n, size=4, replace=False)
    return c[:2], c[2:]


def run_simulate(cfg: RunConfig) -> int:
    with _stage("ingest"):
        g, xy = load_map(cfg)
        if xy is None:
            raise ConfigError("simulate needs centroids (or a lattice)")
    with _stage("partition"):
        needs_part = any(m != "global" for m in cfg.models)
        part = None
        if needs_part:
            if cfg.partition:
                cfg.check_files("partition")
                part = read_partition_csv(cfg.partition, g)
            elif cfg.grid:
                part = grid_partition(g, xy, *_parse_dims(cfg.grid, "grid"))
            else:
                raise ConfigError("partitioned models need a partition or grid")
    with _stage("fit"):
        if cfg.scenario == "scenario1":
            hi, lo = cfg.high_centers, cfg.low_centers
            if not hi and not lo:
                hi, lo = _default_centers(g.n, cfg.seed)
            surface = scenario1(xy, hi, lo)
        elif cfg.scenario == "scenario2":
            surface = scenario2(xy, cfg.knots, cfg.kappa, cfg.seed)
        else:
            raise ConfigError("scenario must be scenario1 or scenario2")
        plans = [cfg.plan(m) for m in cfg.models]
        rows = simulation_study(g, surface, part, plans, cfg.levels, cfg.replicates,
                                cfg.seed, cfg.samples)
    with _stage("write"):
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "scores.csv", SCORE_HEADER,
                    [[fmt(r["E"])] + [r[c] for c in SCORE_HEADER[1:]] for r in rows])
        write_table(out / "truth.csv", ("area_id", "risk"),
                    zip(g.area_ids, surface.risk.tolist()))
        write_table(out / "timing.csv", ("E", "model", "T1", "T2"),
                    [[fmt(r["E"]), r["model"], r["T1"], r["T2"]] for r in rows])
        write_manifest(out / "manifest.json", cfg, "simulate")
    return EXIT_OK


def run_score(truth_path, result_paths, out_path) -> int:
    with _stage("ingest"):
        rows = _read_csv(truth_path, ("area_id", "risk"))
        ids = [r["area_id"] for r in rows]
        truth = np.array([float(r["risk"]) for r in rows])
        reps = [_align(read_results_csv(p), ids) for p in result_paths]
    with _stage("fit"):
        sc = score([r["median"] for r in reps], [r["q025"] for r in reps],
                   [r["q975"] for r in reps], truth)
    with _stage("write"):
        header = ("MARB", "MRRMSE", "Cov", "Length", "L")
        row = [sc.MARB, sc.MRRMSE, sc.coverage, sc.length, sc.L]
        if out_path:
            write_table(out_path, header, [row])
        else:
            print(",".join(header))
            print(",".join(fmt(v) if isinstance(v, float) else str(v) for v in row))
    return EXIT_OK


def run_standardize(stratified, out_path) -> int:
    with _stage("ingest"):
        strat = read_stratified_csv(stratified)
    with _stage("fit"):
        E = expected_cases_indirect(strat)
        O = strat.obs.sum(axis=1)
        N = strat.pop.sum(axis=1)
        cr, smr = crude_rate_and_smr(O, N, E)
    with _stage("write"):
        header = ("area_id", "obs", "expected", "pop", "crude_rate", "smr")
        rows = [[a, int(O[i]), float(E[i]), float(N[i]),
                 "NA" if np.isnan(cr[i]) else float(cr[i]),
                 "NA" if np.isnan(smr[i]) else float(smr[i])] for i, a in enumerate(strat.area_ids)]
        if out_path:
            write_table(out_path, header, rows)
        else:
            w = csv.writer(sys.stdout, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([fmt(v) if isinstance(v, float) else v for v in r])
    return EXIT_OK


# ---------------------------------------------------------------- argparse

def _add_run_flags(p):
    p.add_argument("--config", help="key = value file or a previous manifest.json")
    p.add_argument("--graph")
    p.add_argument("--ids")
    p.add_argument("--centroids")
    p.add_argument("--partition")
    p.add_argument("--grid", help="ROWSxCOLS grid partition over centroids")
    p.add_argument("--lattice", help="ROWSxCOLS synthetic lattice map")
    p.add_argument("--spacing", type=float)
    p.add_argument("--model", choices=("global", "disjoint", "k_order"))
    p.add_argument("--family", choices=("lcar", "icar"))
    p.add_argument("--k", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--log-drop", dest="log_drop", type=float)
    p.add_argument("--max-points", dest="max_points", type=int)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scalemap", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a global, disjoint or k-order model")
    _add_run_flags(p)
    p.add_argument("--data", help="CSV with area_id,obs,expected")
    p.add_argument("--stratified", help="CSV with area_id,age_group,obs,pop")

    p = sub.add_parser("simulate", help="simulation study on a synthetic surface")
    _add_run_flags(p)
    p.add_argument("--scenario", choices=("scenario1", "scenario2"))
    p.add_argument("--high-centers", dest="high_centers", help="comma-separated area indices")
    p.add_argument("--low-centers", dest="low_centers")
    p.add_argument("--knots", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--levels", help="comma-separated expected-count levels")
    p.add_argument("--replicates", type=int)
    p.add_argument("--models", help="comma-separated: global,disjoint,k1,k2,...")

    p = sub.add_parser("score", help="score replicate result files against a truth table")
    p.add_argument("--truth", required=True)
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--out")

    p = sub.add_parser("standardize", help="expected counts by indirect standardization")
    p.add_argument("stratified")
    p.add_argument("--out")
    return ap


def _load_config(args) -> RunConfig:
    file_values = {}
    if args.config:
        path = Path(args.config)
        if path.suffix == ".json":
            try:
                echo = json.loads(path.read_text(encoding="utf-8"))["config"]
            except (OSError, KeyError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot replay manifest {path}: {exc}") from exc
            from .config import coerce
            file_values = {k: coerce(k, v) for k, v in echo.items()}
        else:
            file_values = read_config_file(path)
    return build_config(file_values, vars(args))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("default")
    try:
        if args.command == "score":
            return run_score(args.truth, args.results, args.out)
        if args.command == "standardize":
            return run_standardize(args.stratified, args.out)
        try:
            cfg = _load_config(args)
        except (ConfigError, TypeError) as exc:
            raise StageError("config", EXIT_CONFIG, exc) from exc
        return run_fit(cfg) if args.command == "fit" else run_simulate(cfg)
    except StageError as exc:
        print(f"scalemap: error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
