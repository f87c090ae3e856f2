import logging
import sys
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional

import fire
import numpy as np
import pandas as pd
from fire.core import FireExit

from sng_dbscan.clusterer import (
    SngParams,
    check_min_pts,
    run_dbscan_exact,
    run_sng_dbscan,
    scale_min_pts,
)
from sng_dbscan.dataset_io import (
    Dataset,
    load_clustering,
    load_dataset,
    load_labels,
    save_binary,
    save_clustering,
    save_csv,
    save_labels,
)
from sng_dbscan.errors import (
    CheckFailedError,
    ContractError,
    DatasetFormatError,
    ParameterError,
)
from sng_dbscan.graph_core import DistanceSpec, check_eps, check_rate
from sng_dbscan.metrics import NoisePolicy, score
from sng_dbscan.synthetic import (
    BallMixtureSpec,
    LevelSetScenario,
    TheoryScenario,
    generate,
    scenario_from_config,
)
from sng_dbscan.theory_lab import (
    KARGER_MULTIPLIERS,
    LEVELSET_N_GRID,
    MINCUT_N_GRID,
    RECOVERY_N_GRID,
    ExperimentReport,
    core_identification_experiment,
    karger_connectivity_trial,
    karger_threshold_experiment,
    levelset_experiment,
    mincut_scaling_experiment,
    minpts_window_report,
    recovery_experiment,
    reference_graph,
)
from sng_dbscan.utils import _setup_logger, as_float, as_list, read_config, resolve_seed, stderr

logger = logging.getLogger(__name__)

COMMANDS = ("cluster", "score", "gen", "bench", "theory")
EXPERIMENTS = ("mincut", "karger", "recovery", "levelset", "window", "corepoints")

# flags `theory` accepts besides the experiment name
_THEORY_FLAGS = {
    "assert",
    "beta",
    "c",
    "config",
    "eps",
    "graph",
    "json",
    "lambda_n",
    "min_pts",
    "multipliers",
    "n",
    "n_grid",
    "output",
    "rate",
    "s_grid",
    "seed",
    "seeds",
    "threads",
    "trials",
    "verbose",
}

USAGE = "usage: sng {cluster|score|gen|bench|theory} [--flags]"


@dataclass
class RunConfig:
    """
    Options shared by the `sng` subcommands, validated before any computation.
    """

    subcommand: str = field(
        metadata={"help": "One of cluster, score, gen, bench, theory."}
    )
    input: Optional[str] = field(
        default=None, metadata={"help": "Input dataset (CSV or SNGD)."}
    )
    output: Optional[str] = field(default=None, metadata={"help": "Output file."})
    eps: List[float] = field(
        default_factory=list,
        metadata={"help": "Neighborhood radius ε (a comma separated grid for bench)."},
    )
    min_pts: Optional[int] = field(
        default=None, metadata={"help": "Degree threshold for core points."}
    )
    rate: List[float] = field(
        default_factory=lambda: [1.0],
        metadata={"help": "Sampling rate s in (0, 1] (a grid for bench)."},
    )
    minpts_scale: bool = field(
        default=False,
        metadata={"help": "Use max(2, floor(min_pts·rate)) as the degree threshold."},
    )
    seed: Optional[int] = field(
        default=None, metadata={"help": "Seed; falls back to SNG_SEED, then 0."}
    )
    dist: str = field(
        default="euclidean", metadata={"help": "euclidean, manhattan or cosine."}
    )
    noise_policy: str = field(
        default="own-cluster", metadata={"help": "own-cluster or exclude."}
    )
    experiment: Optional[str] = field(
        default=None, metadata={"help": "Theory experiment name."}
    )
    repeats: int = field(default=10, metadata={"help": "Runs per bench configuration."})
    threads: int = field(
        default=-1, metadata={"help": "Worker threads; -1 uses every core."}
    )
    label_column: Optional[int] = field(
        default=None, metadata={"help": "CSV column holding truth labels."}
    )
    header: bool = field(default=False, metadata={"help": "Skip the first CSV line."})
    cache_dir: Optional[str] = field(
        default=None,
        metadata={"help": "Directory for cached SNGD copies of CSV inputs."},
    )
    overwrite_cache: bool = field(
        default=False, metadata={"help": "Rebuild the cached SNGD copy even if it is current."}
    )
    verbose: bool = field(default=False, metadata={"help": "Log at DEBUG level."})

    def __post_init__(self):
        try:
            eps = as_list(self.eps) if self.eps is not None else []
            self.eps = [as_float(x, "eps") for x in eps]
            self.rate = [as_float(x, "rate") for x in as_list(self.rate)]
            if isinstance(self.min_pts, str):
                self.min_pts = int(self.min_pts)
            if isinstance(self.threads, str):
                self.threads = int(self.threads)
            if isinstance(self.repeats, str):
                self.repeats = int(self.repeats)
            self.seed = resolve_seed(self.seed)
        except ValueError as ex:
            raise ParameterError(f"bad flag value: {ex}")

    def validate(self) -> "RunConfig":
        if self.subcommand not in COMMANDS:
            raise ParameterError(f"unknown subcommand {self.subcommand!r}; {USAGE}")
        for eps in self.eps:
            check_eps(eps)
        for rate in self.rate:
            check_rate(rate)
        if self.min_pts is not None:
            self.min_pts = check_min_pts(self.min_pts)
        DistanceSpec.from_name(self.dist)
        if self.noise_policy not in {p.value for p in NoisePolicy}:
            raise ParameterError(
                f"--noise-policy must be own-cluster or exclude, got {self.noise_policy!r}"
            )
        if self.experiment is not None and self.experiment not in EXPERIMENTS:
            raise ParameterError(
                f"unknown experiment {self.experiment!r}; "
                f"expected one of {', '.join(EXPERIMENTS)}"
            )
        if not isinstance(self.repeats, int) or isinstance(self.repeats, bool) or self.repeats < 1:
            raise ParameterError(f"--repeats must be >= 1, got {self.repeats!r}")
        if not isinstance(self.threads, int) or isinstance(self.threads, bool) or self.threads == 0:
            raise ParameterError(f"--threads must be a non-zero integer, got {self.threads!r}")
        return self

    def degree_threshold(self, rate: float) -> int:
        return scale_min_pts(self.min_pts, rate) if self.minpts_scale else self.min_pts

    @staticmethod
    def describe() -> str:
        return "\n".join(
            f"  --{f.name.replace('_', '-')}: {f.metadata['help']}" for f in fields(RunConfig)
        )


def _emit(frame_or_text, output: Optional[str] = None) -> None:
    text = frame_or_text
    if isinstance(frame_or_text, pd.DataFrame):
        text = frame_or_text.to_csv(
            sep="\t", index=False, float_format="%.10g", lineterminator="\n"
        )
    sys.stdout.write(text)
    if output:
        with open(output, "w", encoding="utf-8", newline="") as f:
            f.write(text)


def _six(value: float) -> str:
    # round first so tiny negatives do not print as -0.000000
    return "%.6f" % (round(float(value), 6) + 0.0)


class SngCommands:
    """SNG-DBSCAN: DBSCAN on a subsampled ε-neighborhood graph."""

    def cluster(
        self,
        input,
        eps,
        min_pts,
        rate=1.0,
        seed=None,
        dist="euclidean",
        output=None,
        label_column=None,
        header=False,
        minpts_scale=False,
        threads=-1,
        cache_dir=None,
        overwrite_cache=False,
        dump_graph=None,
        verbose=False,
    ):
        """Clusters INPUT and writes one label per point (-1 for noise)."""
        config = RunConfig(
            subcommand="cluster",
            input=str(input),
            output=None if output is None else str(output),
            eps=eps,
            min_pts=min_pts,
            rate=rate,
            minpts_scale=minpts_scale,
            seed=seed,
            dist=dist,
            threads=threads,
            label_column=label_column,
            header=header,
            cache_dir=cache_dir,
            overwrite_cache=overwrite_cache,
            verbose=verbose,
        ).validate()
        if len(config.eps) != 1 or len(config.rate) != 1:
            raise ParameterError("cluster takes a single --eps and a single --rate")
        _setup_logger(logging.DEBUG if config.verbose else logging.INFO)

        rate = config.rate[0]
        params = SngParams(
            eps=config.eps[0],
            min_pts=config.degree_threshold(rate),
            rate=rate,
            seed=config.seed,
            dist=DistanceSpec.from_name(config.dist),
        )
        data = load_dataset(
            config.input,
            config.label_column,
            config.header,
            cache_dir=config.cache_dir,
            overwrite_cache=config.overwrite_cache,
        )
        run = run_sng_dbscan(data, params, n_jobs=config.threads)

        labels_path = config.output or config.input + ".labels"
        save_clustering(run.clustering, labels_path)
        if dump_graph:
            run.graph.write_edge_list(str(dump_graph))
        logger.info(f"Saved labels to {labels_path}")

        sys.stdout.write(
            f"n\t{run.n}\n"
            f"k\t{run.clustering.n_clusters}\n"
            f"noise\t{run.clustering.noise_count}\n"
            f"edges\t{run.edge_count}\n"
            f"distance_evaluations\t{run.distance_evaluations}\n"
            f"wall_ms\t{run.wall_ms:.3f}\n"
        )

    def score(self, pred, truth, noise_policy="own-cluster", verbose=False):
        """Prints ARI and AMI of the PRED labels against the TRUTH labels."""
        config = RunConfig(
            subcommand="score", noise_policy=str(noise_policy), verbose=verbose
        ).validate()
        _setup_logger(logging.DEBUG if config.verbose else logging.INFO)
        scores = score(load_clustering(str(pred)), load_labels(str(truth)), config.noise_policy)
        sys.stdout.write(f"ari\t{_six(scores['ari'])}\nami\t{_six(scores['ami'])}\n")

    def gen(
        self,
        output,
        config=None,
        kind=None,
        n=None,
        seed=None,
        truth_output=None,
        fmt="csv",
        verbose=False,
    ):
        """Generates a synthetic dataset (balls, theory or levelset) and its truth labels."""
        RunConfig(subcommand="gen", output=str(output), seed=seed, verbose=verbose).validate()
        if fmt not in ("csv", "binary"):
            raise ParameterError(f"--fmt must be csv or binary, got {fmt!r}")
        _setup_logger(logging.DEBUG if verbose else logging.INFO)

        entries = read_config(str(config)) if config else {}
        if kind is not None:
            entries["kind"] = str(kind)
        if n is not None:
            entries["n"] = str(n)
        if seed is not None or "seed" not in entries:
            entries["seed"] = str(resolve_seed(seed))
        kind, spec, n, seed = scenario_from_config(entries)

        data = generate(kind, spec, n, seed)
        points = Dataset(data.points)
        if fmt == "binary":
            save_binary(points, str(output))
        else:
            save_csv(points, str(output))
        truth_path = str(truth_output) if truth_output else str(output) + ".truth"
        save_labels(data.truth_labels, truth_path)
        logger.info(f"Generated {data.n} {kind} points into {output}, truth labels into {truth_path}")

    def bench(
        self,
        input,
        eps,
        min_pts,
        rate=1.0,
        repeats=10,
        exact=False,
        seed=None,
        dist="euclidean",
        label_column=None,
        header=False,
        minpts_scale=False,
        noise_policy="own-cluster",
        threads=-1,
        cache_dir=None,
        overwrite_cache=False,
        output=None,
        verbose=False,
    ):
        """Times SNG-DBSCAN (and optionally exact DBSCAN) over grids of eps and rate."""
        config = RunConfig(
            subcommand="bench",
            input=str(input),
            output=None if output is None else str(output),
            eps=eps,
            min_pts=min_pts,
            rate=rate,
            minpts_scale=minpts_scale,
            seed=seed,
            dist=dist,
            noise_policy=str(noise_policy),
            repeats=repeats,
            threads=threads,
            label_column=label_column,
            header=header,
            cache_dir=cache_dir,
            overwrite_cache=overwrite_cache,
            verbose=verbose,
        ).validate()
        _setup_logger(logging.DEBUG if config.verbose else logging.INFO)
        data = load_dataset(
            config.input,
            config.label_column,
            config.header,
            cache_dir=config.cache_dir,
            overwrite_cache=config.overwrite_cache,
        )
        distance = DistanceSpec.from_name(config.dist)

        rows = []
        for eps_value in config.eps:
            for rate in config.rate:
                runs = [
                    run_sng_dbscan(
                        data,
                        SngParams(
                            eps=eps_value,
                            min_pts=config.degree_threshold(rate),
                            rate=rate,
                            seed=config.seed + r,
                            dist=distance,
                        ),
                        n_jobs=config.threads,
                    )
                    for r in range(config.repeats)
                ]
                rows.append(self._bench_row("sng", eps_value, rate, config, data, runs))
            if exact:
                runs = [
                    run_dbscan_exact(data, eps_value, config.min_pts, distance, n_jobs=config.threads)
                    for _ in range(config.repeats)
                ]
                rows.append(self._bench_row("exact", eps_value, 1.0, config, data, runs))
        _emit(pd.DataFrame(rows), config.output)

    @staticmethod
    def _bench_row(method, eps, rate, config, data, runs) -> Dict[str, Any]:
        wall = np.array([r.wall_ms for r in runs])
        row = {
            "method": method,
            "eps": eps,
            "rate": rate,
            "min_pts": config.min_pts if method == "exact" else config.degree_threshold(rate),
            "repeats": len(runs),
            "wall_ms_mean": wall.mean(),
            "wall_ms_stderr": stderr(wall),
            "edges_mean": np.mean([r.edge_count for r in runs]),
            "distance_evaluations": runs[0].distance_evaluations,
            "adjacency_bytes_peak": max(r.adjacency_bytes for r in runs),
            "clusters_mean": np.mean([r.clustering.n_clusters for r in runs]),
            "noise_mean": np.mean([r.clustering.noise_count for r in runs]),
        }
        if data.truth_labels is not None:
            scores = [score(r.clustering, data.truth_labels, config.noise_policy) for r in runs]
            for name in ("ari", "ami"):
                values = np.array([s[name] for s in scores])
                row[f"{name}_mean"] = values.mean()
                row[f"{name}_stderr"] = stderr(values)
        return row

    def theory(self, experiment, **flags):
        """
        Runs one theory experiment: mincut, karger, recovery, levelset, window or corepoints.
        With --assert, failed threshold checks exit with status 1.
        """
        unknown = sorted(set(flags) - _THEORY_FLAGS)
        if unknown:
            raise ParameterError(f"unknown theory flags: {', '.join('--' + k for k in unknown)}")
        entries: Dict[str, Any] = read_config(str(flags["config"])) if flags.get("config") else {}
        entries.update({k: v for k, v in flags.items() if k != "config"})

        config = RunConfig(
            subcommand="theory",
            experiment=str(experiment),
            output=None if entries.get("output") is None else str(entries["output"]),
            seed=entries.get("seed"),
            threads=entries.get("threads", -1),
            min_pts=entries.get("min_pts"),
            verbose=bool(entries.get("verbose", False)),
        ).validate()
        _setup_logger(logging.DEBUG if config.verbose else logging.INFO)

        report = _run_experiment(config, entries)
        text = report.to_json_string() if entries.get("json") else report.to_tsv()
        _emit(text, config.output)
        for failure in report.failures:
            logger.warning(f"check failed: {failure}")
        if entries.get("assert") and report.failures:
            raise CheckFailedError(f"{len(report.failures)} check(s) failed")


def _floats(value, default, flag: str = "grid") -> List[float]:
    if value is None:
        return [float(x) for x in default]
    return [as_float(x, flag) for x in as_list(value)]


def _ints(value, default, flag: str = "grid") -> List[int]:
    values = _floats(value, default, flag)
    if any(not v.is_integer() or v < 1 for v in values):
        raise ParameterError(f"expected positive integers, got {value!r}")
    return [int(v) for v in values]


def _float(entries, key, default) -> float:
    return as_float(entries.get(key, default), key)


def _int(entries, key, default) -> int:
    value = _float(entries, key, default)
    if not value.is_integer() or value < 1:
        raise ParameterError(f"--{key.replace('_', '-')} must be a positive integer, got {value}")
    return int(value)


def _run_experiment(config: RunConfig, entries: Dict[str, Any]) -> ExperimentReport:
    name = config.experiment
    seed = config.seed
    seeds = range(seed, seed + _int(entries, "seeds", 10 if name == "recovery" else 5))
    n_jobs = config.threads

    if name == "window":
        ts = TheoryScenario.noisy_three_balls(lambda_n=_float(entries, "lambda_n", 0.01))
        return minpts_window_report(
            ts,
            eps=_float(entries, "eps", 0.8),
            s=_float(entries, "rate", 0.1),
            n=_int(entries, "n", 5000),
            min_pts=config.min_pts,
        )
    if name == "corepoints":
        ts = TheoryScenario.noisy_three_balls(lambda_n=_float(entries, "lambda_n", 0.01))
        return core_identification_experiment(
            ts,
            eps=_float(entries, "eps", 0.8),
            s=_float(entries, "rate", 0.1),
            n=_int(entries, "n", 5000),
            seeds=seeds,
            min_pts=config.min_pts,
            n_jobs=n_jobs,
        )
    if name == "mincut":
        return mincut_scaling_experiment(
            TheoryScenario.unit_disk(),
            eps=_float(entries, "eps", 0.4),
            n_grid=_ints(entries.get("n_grid"), MINCUT_N_GRID, "n_grid"),
            seeds=seeds,
            n_jobs=n_jobs,
        )
    if name == "karger":
        kind = str(entries.get("graph", "complete"))
        trials = _int(entries, "trials", 500)
        n = _int(entries, "n", 20 if kind == "complete" else 500) if "n" in entries else None
        eps = _float(entries, "eps", 0.4)
        if entries.get("s_grid") is not None:
            g = reference_graph(kind, n=n, eps=eps, seed=seed)
            s_grid = _floats(entries["s_grid"], (), "s_grid")
            return karger_connectivity_trial(g, s_grid, trials=trials, seed=seed, n_jobs=n_jobs)
        return karger_threshold_experiment(
            kind,
            multipliers=_floats(entries.get("multipliers"), KARGER_MULTIPLIERS, "multipliers"),
            trials=trials,
            seed=seed,
            n=n,
            eps=eps,
            n_jobs=n_jobs,
        )
    if name == "recovery":
        return recovery_experiment(
            BallMixtureSpec.three_balls(seed=seed),
            n_grid=_ints(entries.get("n_grid"), RECOVERY_N_GRID, "n_grid"),
            c=_float(entries, "c", 20.0),
            seeds=seeds,
            eps=_float(entries, "eps", 0.8),
            n_jobs=n_jobs,
        )
    base = LevelSetScenario.default()
    beta = _float(entries, "beta", base.beta)
    ls = LevelSetScenario(centers=base.centers, plateau=base.plateau, beta=beta)
    return levelset_experiment(
        ls,
        eps=_float(entries, "eps", 0.1),
        s=_float(entries, "rate", 0.5),
        n_grid=_ints(entries.get("n_grid"), LEVELSET_N_GRID, "n_grid"),
        seeds=seeds,
        n_jobs=n_jobs,
    )


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else [str(a) for a in argv]
    if not argv or (argv[0] not in COMMANDS and argv[0] not in ("-h", "--help")):
        sys.stderr.write(USAGE + "\n" + RunConfig.describe() + "\n")
        return 2
    try:
        fire.Fire(SngCommands(), command=argv, name="sng")
    except FireExit as ex:
        return ex.code if isinstance(ex.code, int) else 2
    except CheckFailedError as ex:
        sys.stderr.write(f"error: {ex}\n")
        return 1
    except (ParameterError, ContractError) as ex:
        sys.stderr.write(f"error: {ex}\n{USAGE}\n")
        return 2
    except (DatasetFormatError, OSError) as ex:
        sys.stderr.write(f"error: {ex}\n")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
