import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import spearmanr

from sng_dbscan.clusterer import SngParams, sng_dbscan
from sng_dbscan.errors import CalibrationError, ContractError, ParameterError
from sng_dbscan.graph_core import (
    SampledGraph,
    UnionFind,
    build_full_graph,
    build_sampled_graph,
    check_eps,
    check_rate,
    edge_inclusion_rate,
    is_connected,
    min_cut,
)
from sng_dbscan.metrics import hausdorff, score
from sng_dbscan.synthetic import (
    BallMixtureSpec,
    LevelSetScenario,
    TheoryScenario,
    generate_ball_mixture,
    generate_levelset_scenario,
    generate_theory_scenario,
)
from sng_dbscan.utils import DOMAIN_EDGE_TRIALS, stderr, substream, unit_ball_volume

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["experiment", "seed", "config", "statistic", "value", "stderr", "trials", "flag"]

RECOVERY_N_GRID = (1000, 3000, 10_000, 30_000, 100_000)
MINCUT_N_GRID = (250, 500, 1000)
LEVELSET_N_GRID = (2000, 4000, 8000, 16000)
KARGER_MULTIPLIERS = (0.2, 0.5, 1.0, 2.0)


def _fmt(value) -> str:
    if isinstance(value, float):
        return "%.10g" % value
    return str(value)


def format_config(config: Dict[str, Any]) -> str:
    return ",".join(f"{k}={_fmt(v)}" for k, v in config.items())


@dataclass
class ExperimentReport:
    """
    Rows of (config, statistic, value, stderr, trials, flag) plus the seed they
    were produced with. `failures` lists threshold checks that did not hold.
    """

    experiment: str
    seed: int
    rows: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)

    def add(
        self,
        config: Dict[str, Any],
        statistic: str,
        value: float,
        stderr: Optional[float] = None,
        trials: int = 1,
        flag: str = "",
    ) -> None:
        if trials < 1:
            raise ContractError(f"a report row needs trials >= 1, got {trials}")
        if trials > 1 and stderr is None:
            raise ContractError(f"row {statistic!r} has {trials} trials but no stderr")
        self.rows.append(
            {
                "experiment": self.experiment,
                "seed": self.seed,
                "config": format_config(config),
                "statistic": statistic,
                "value": float(value),
                "stderr": np.nan if stderr is None else float(stderr),
                "trials": int(trials),
                "flag": flag,
            }
        )

    def check(self, ok: bool, message: str) -> None:
        if not ok:
            logger.warning(f"{self.experiment}: {message}")
            self.failures.append(message)

    def values(self, statistic: str) -> List[float]:
        return [row["value"] for row in self.rows if row["statistic"] == statistic]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=REPORT_COLUMNS)

    def to_tsv(self) -> str:
        return self.to_frame().to_csv(
            sep="\t", index=False, float_format="%.10g", lineterminator="\n"
        )

    def to_json_string(self) -> str:
        return self.to_frame().to_json(orient="records", double_precision=10) + "\n"

    def write(self, path: str, as_json: bool = False) -> None:
        text = self.to_json_string() if as_json else self.to_tsv()
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)


def _run_cells(fn, cells: Sequence[Tuple], n_jobs: Optional[int]) -> List:
    """Runs independent cells; results come back in cell order."""
    return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(fn)(*cell) for cell in cells)


@dataclass(frozen=True)
class MinPtsWindow:
    """Bounds on MinPts/(s·n) within which core points are identified correctly."""

    lo: float
    hi: float
    v_d: float
    eps: float
    rate: float
    n: int
    precondition_ok: bool = True

    @property
    def scale(self) -> float:
        return self.rate * self.n

    @property
    def valid(self) -> bool:
        return self.lo < self.hi

    def margin(self, min_pts: int) -> float:
        x = min_pts / self.scale
        return min(x - self.lo, self.hi - x)

    def contains(self, min_pts: int) -> bool:
        return self.margin(min_pts) > 0

    def integer_range(self) -> Optional[Tuple[int, int]]:
        first = math.ceil(self.lo * self.scale) + 1
        last = math.floor(self.hi * self.scale)
        return (first, last) if first <= last else None

    @property
    def midpoint_min_pts(self) -> int:
        return max(1, int(math.floor(0.5 * (self.lo + self.hi) * self.scale + 0.5)))


def compute_minpts_window(ts: TheoryScenario, eps: float, s: float, n: int) -> MinPtsWindow:
    eps = check_eps(eps)
    s = check_rate(s)
    if int(n) < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    v_d = unit_ball_volume(ts.dim)
    lambda_c, lambda_n = ts.density_levels()
    ball = v_d * eps**ts.dim

    precondition_ok = eps < min(ts.r0, ts.r_s)
    if not precondition_ok:
        logger.warning(
            f"eps={eps} is not below min(R_0, R_s) = {min(ts.r0, ts.r_s)}; "
            "the window is computed but carries no guarantee"
        )
    return MinPtsWindow(
        lo=lambda_n * ball,
        hi=ts.rho * lambda_c * ball,
        v_d=v_d,
        eps=eps,
        rate=s,
        n=int(n),
        precondition_ok=precondition_ok,
    )


def minpts_window_report(
    ts: TheoryScenario, eps: float, s: float, n: int, min_pts: Optional[int] = None
) -> ExperimentReport:
    window = compute_minpts_window(ts, eps, s, n)
    report = ExperimentReport("window", seed=0)
    config = {"eps": window.eps, "s": window.rate, "n": window.n}
    flag = "" if window.precondition_ok else "eps_precondition"
    report.add(config, "lo", window.lo, flag=flag)
    report.add(config, "hi", window.hi, flag=flag)
    report.add(config, "midpoint_min_pts", window.midpoint_min_pts, flag=flag)
    bounds = window.integer_range()
    if bounds is not None:
        report.add(config, "min_pts_first", bounds[0], flag=flag)
        report.add(config, "min_pts_last", bounds[1], flag=flag)
    if min_pts is not None:
        report.add({**config, "min_pts": min_pts}, "margin", window.margin(min_pts), flag=flag)
        report.check(window.contains(min_pts), f"min_pts={min_pts} lies outside the window")
    report.check(window.valid, "the window is empty")
    report.check(window.precondition_ok, f"eps={window.eps} violates eps < min(R_0, R_s)")
    return report


def mincut_scaling_experiment(
    ts: TheoryScenario,
    eps: float,
    n_grid: Sequence[int] = MINCUT_N_GRID,
    seeds: Sequence[int] = range(5),
    cluster: int = 0,
    n_jobs: Optional[int] = None,
) -> ExperimentReport:
    """min_cut/n of one cluster's exact ε-graph along n, against ¼·λ_C·ρ·v_D·ε^D."""
    eps = check_eps(eps)
    seeds = list(seeds)
    lambda_c, _ = ts.density_levels()
    bound = 0.25 * lambda_c * ts.rho * unit_ball_volume(ts.dim) * eps**ts.dim

    def cell(n, seed):
        data = generate_theory_scenario(ts, n, seed)
        members = np.flatnonzero(data.truth_labels == cluster)
        if members.size < 2:
            return None
        g = build_full_graph(data.take(members), eps)
        if not is_connected(g):
            return None
        return min_cut(g), int(g.degree().min())

    cells = [(int(n), seed) for n in n_grid for seed in seeds]
    start = time.time()
    results = _run_cells(cell, cells, n_jobs)
    logger.info(f"Min-cut cells finished [took {time.time() - start:.3f} s]")

    report = ExperimentReport("mincut", seed=seeds[0] if seeds else 0)
    ratios = {}
    for n in n_grid:
        n = int(n)
        outcomes = [r for (cn, _), r in zip(cells, results) if cn == n]
        connected = [r for r in outcomes if r is not None]
        config = {"n": n, "eps": eps}
        disconnected = len(outcomes) - len(connected)
        report.add(
            config,
            "disconnected",
            disconnected,
            trials=max(1, len(outcomes)),
            stderr=0.0,
            flag="disconnected" if disconnected else "",
        )
        report.check(
            disconnected == 0, f"cluster subgraph disconnected at n={n} ({disconnected} seeds)"
        )
        report.add(config, "cut_bound", bound)
        if not connected:
            continue

        cuts = np.array([c for c, _ in connected], dtype=np.float64) / n
        degrees = np.array([d for _, d in connected], dtype=np.float64) / n
        ratios[n] = float(cuts.mean())
        report.add(config, "min_cut_over_n", cuts.mean(), stderr(cuts), trials=len(connected))
        report.add(config, "min_degree_over_n", degrees.mean(), stderr(degrees), trials=len(connected))
        report.check(bool((cuts <= degrees).all()), f"min_cut exceeds the minimum degree at n={n}")

    if ratios:
        first, last = min(ratios), max(ratios)
        report.check(
            ratios[last] >= 0.5 * ratios[first],
            f"min_cut/n decays: {ratios[last]:.6g} at n={last} vs {ratios[first]:.6g} at n={first}",
        )
        report.check(
            ratios[last] >= bound,
            f"min_cut/n = {ratios[last]:.6g} at n={last} is below the bound {bound:.6g}",
        )
    return report


def reference_graph(
    kind: str = "complete", n: Optional[int] = None, eps: float = 0.4, seed: int = 0
) -> SampledGraph:
    """K_n (default n=20), or the exact ε-graph of n (default 500) points in a unit disk."""
    if kind == "complete":
        return SampledGraph.complete(int(n or 20))
    if kind == "ball":
        data = generate_theory_scenario(TheoryScenario.unit_disk(), int(n or 500), seed)
        return build_full_graph(data, eps)
    raise ParameterError(f"unknown reference graph {kind!r}; expected complete or ball")


def _connected_after_sampling(u, v, n, s_grid, seed, trial) -> List[bool]:
    draws = substream(seed, trial, DOMAIN_EDGE_TRIALS).random(u.size)
    outcome = []
    for s in s_grid:
        keep = draws < s
        sets = UnionFind(n)
        sets.union_edges(u[keep], v[keep])
        outcome.append(sets.n_sets == 1)
    return outcome


def karger_connectivity_trial(
    g: SampledGraph,
    s_grid: Sequence[float],
    trials: int = 500,
    seed: int = 0,
    n_jobs: Optional[int] = None,
) -> ExperimentReport:
    """
    Keeps every edge of g independently with probability s and records how
    often the result stays connected. One uniform draw per edge and trial is
    shared by every s, so the frequencies are monotone in s.
    """
    if g.n < 2 or not is_connected(g):
        raise ContractError("the connectivity trial needs a connected graph with n >= 2")
    if int(trials) < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    s_grid = [float(s) for s in s_grid]
    if any(not 0.0 <= s <= 1.0 for s in s_grid):
        raise ParameterError(f"edge keep probabilities must lie in [0, 1], got {s_grid}")

    cut = min_cut(g)
    u, v = g.edges()
    start = time.time()
    outcomes = _run_cells(
        _connected_after_sampling,
        [(u, v, g.n, s_grid, seed, t) for t in range(int(trials))],
        n_jobs,
    )
    logger.info(f"Connectivity trials finished [took {time.time() - start:.3f} s]")
    counts = np.asarray(outcomes, dtype=np.float64).sum(axis=0)

    report = ExperimentReport("karger", seed=seed)
    base = {"n": g.n, "edges": g.edge_count}
    report.add(base, "min_cut", cut)
    report.add(base, "threshold_shape", math.log(g.n) / cut)
    frequencies = []
    for s, hits in zip(s_grid, counts):
        f = hits / trials
        frequencies.append((s, f, math.sqrt(f * (1.0 - f) / trials)))
        report.add({**base, "s": s}, "connected_frequency", f, frequencies[-1][2], trials=int(trials))

    ordered = sorted(frequencies)
    for (s0, f0, e0), (s1, f1, e1) in zip(ordered, ordered[1:]):
        report.check(
            f1 + 2.0 * max(e0, e1) >= f0,
            f"connectivity drops from {f0:.3f} at s={s0:.4g} to {f1:.3f} at s={s1:.4g}",
        )
    return report


def karger_threshold_experiment(
    kind: str = "complete",
    multipliers: Sequence[float] = KARGER_MULTIPLIERS,
    trials: int = 500,
    seed: int = 0,
    n: Optional[int] = None,
    eps: float = 0.4,
    n_jobs: Optional[int] = None,
) -> ExperimentReport:
    """Connectivity at s = min(1, c·log(n)/min_cut) for each multiplier c."""
    g = reference_graph(kind, n=n, eps=eps, seed=seed)
    if g.n < 2 or not is_connected(g):
        raise ContractError(f"the {kind} reference graph is not connected")
    cut = min_cut(g)
    multipliers = [float(c) for c in multipliers]
    s_grid = [min(1.0, c * math.log(g.n) / cut) for c in multipliers]
    report = karger_connectivity_trial(g, s_grid, trials=trials, seed=seed, n_jobs=n_jobs)

    rows = [row for row in report.rows if row["statistic"] == "connected_frequency"]
    for c, row in zip(multipliers, rows):
        row["config"] = f"graph={kind},c={_fmt(c)}," + row["config"]
        if c >= 2.0:
            report.check(row["value"] >= 0.9, f"connectivity {row['value']:.3f} < 0.9 at c={c}")
        if c <= 0.2:
            report.check(row["value"] <= 0.5, f"connectivity {row['value']:.3f} > 0.5 at c={c}")
    return report


def recovery_rate(n: int, c: float = 20.0) -> float:
    """min(1, c·log(n)/n), never below one partner per vertex."""
    n = int(n)
    return min(1.0, max(c * math.log(n) / n, 1.0 / n))


def recovery_experiment(
    spec: BallMixtureSpec,
    n_grid: Sequence[int] = RECOVERY_N_GRID,
    c: float = 20.0,
    seeds: Sequence[int] = range(10),
    eps: float = 0.8,
    n_jobs: Optional[int] = None,
) -> ExperimentReport:
    """SNG-DBSCAN on the ball mixture at rate min(1, c·log n/n), MinPts from the window midpoint."""
    spec.check_separation()
    eps = check_eps(eps)
    seeds = list(seeds)
    ts = spec.as_theory_scenario()

    def cell(n, seed):
        data = generate_ball_mixture(replace(spec, n=n, seed=seed))
        rate = recovery_rate(n, c)
        min_pts = compute_minpts_window(ts, eps, rate, n).midpoint_min_pts
        clustering = sng_dbscan(data, SngParams(eps=eps, min_pts=min_pts, rate=rate, seed=seed))
        scores = score(clustering, data.truth_labels)
        return scores["ari"], scores["ami"], clustering.n_clusters, min_pts, rate

    cells = [(int(n), seed) for n in n_grid for seed in seeds]
    start = time.time()
    results = _run_cells(cell, cells, n_jobs)
    logger.info(f"Recovery cells finished [took {time.time() - start:.3f} s]")

    report = ExperimentReport("recovery", seed=seeds[0] if seeds else 0)
    means = []
    for n in n_grid:
        n = int(n)
        rows = [r for (cn, _), r in zip(cells, results) if cn == n]
        if not rows:
            continue
        ari_values, ami_values, clusters, min_pts, rate = (np.asarray(x) for x in zip(*rows))
        config = {"n": n, "c": float(c), "eps": eps}
        k = len(rows)
        report.add(config, "rate", float(rate[0]))
        report.add(config, "min_pts", int(min_pts[0]))
        report.add(config, "ari", ari_values.mean(), stderr(ari_values), trials=k)
        report.add(config, "ami", ami_values.mean(), stderr(ami_values), trials=k)
        report.add(config, "clusters", clusters.mean(), stderr(clusters), trials=k)
        means.append((n, float(ari_values.mean()), stderr(ari_values)))

    late = [m for m in means if m[0] >= 10_000]
    for (n0, a0, e0), (n1, a1, e1) in zip(late, late[1:]):
        report.check(
            a1 + 2.0 * max(e0, e1) + 1e-9 >= a0,
            f"mean ARI drops from {a0:.6f} at n={n0} to {a1:.6f} at n={n1}",
        )
    if means:
        n_last, a_last, _ = means[-1]
        ami_last = report.values("ami")[-1]
        report.check(a_last >= 0.99, f"mean ARI {a_last:.6f} < 0.99 at n={n_last}")
        report.check(ami_last >= 0.99, f"mean AMI {ami_last:.6f} < 0.99 at n={n_last}")
    return report


def calibrate_levelset_min_pts(ls: LevelSetScenario, eps: float, s: float, n: int) -> int:
    """
    MinPts = v_D·ε^D·s'·n·(λ - Ĉ·ε^β - sqrt((log(4n) + log(1/δ))/(s'·n))),
    rounded to the nearest positive integer. s' is the rate at which an
    ε-edge survives sampling, which exceeds s because either endpoint may pick it.
    """
    eps = check_eps(eps)
    s = check_rate(s)
    n = int(n)
    s_eff = edge_inclusion_rate(n, s)
    _, c_hat = ls.regularity_constants()
    bias = c_hat * eps**ls.beta
    confidence = math.sqrt((math.log(4 * n) + math.log(1.0 / ls.delta)) / (s_eff * n))
    if ls.level - bias <= 0:
        raise CalibrationError(
            f"bias term Ĉ·ε^β = {bias:.6g} is not below the level λ = {ls.level:.6g}; "
            "use a smaller eps"
        )
    margin = ls.level - bias - confidence
    if margin <= 0:
        raise CalibrationError(
            f"confidence term sqrt((log(4n) + log(1/δ))/(s'·n)) = {confidence:.6g} is not below "
            f"λ - Ĉ·ε^β = {ls.level - bias:.6g}; increase n or s"
        )
    value = unit_ball_volume(ls.dim) * eps**ls.dim * s_eff * n * margin
    return max(1, int(math.floor(value + 0.5)))


def levelset_rate(ls: LevelSetScenario, eps: float, s: float, n: int) -> float:
    """((log(4n) + log(1/δ))/(s'·n))^(1/2β) + ε with s' the edge survival rate."""
    s_eff = edge_inclusion_rate(int(n), check_rate(s))
    spread = (math.log(4 * n) + math.log(1.0 / ls.delta)) / (s_eff * n)
    return spread ** (1.0 / (2.0 * ls.beta)) + eps


def levelset_experiment(
    ls: LevelSetScenario,
    eps: float = 0.1,
    s: float = 0.5,
    n_grid: Sequence[int] = LEVELSET_N_GRID,
    seeds: Sequence[int] = range(5),
    truth_points: int = 10_000,
    n_jobs: Optional[int] = None,
) -> ExperimentReport:
    """Hausdorff distance between the clustered points and the level set L_f(λ)."""
    eps = check_eps(eps)
    s = check_rate(s)
    seeds = list(seeds)
    truth = ls.level_set().discretize(truth_points, seed=0)
    min_pts = {int(n): calibrate_levelset_min_pts(ls, eps, s, n) for n in n_grid}

    def cell(n, seed):
        data, _ = generate_levelset_scenario(ls, n, seed)
        params = SngParams(eps=eps, min_pts=min_pts[n], rate=s, seed=seed)
        clustered = sng_dbscan(data, params).clustered_indices()
        if clustered.size == 0:
            return math.inf
        return hausdorff(data.points[clustered], truth)

    cells = [(int(n), seed) for n in n_grid for seed in seeds]
    start = time.time()
    results = _run_cells(cell, cells, n_jobs)
    logger.info(f"Level-set cells finished [took {time.time() - start:.3f} s]")

    centers = ls.center_array
    spread = max(
        (float(np.linalg.norm(a - b)) for a in centers for b in centers), default=0.0
    )
    diameter = spread + 2.0 * ls.support_radius

    report = ExperimentReport("levelset", seed=seeds[0] if seeds else 0)
    means = []
    for n in n_grid:
        n = int(n)
        distances = np.array([r for (cn, _), r in zip(cells, results) if cn == n])
        if distances.size == 0:
            continue
        config = {"n": n, "s": s, "eps": eps, "beta": ls.beta}
        empty = int(np.isinf(distances).sum())
        report.add(config, "min_pts", min_pts[n])
        report.add(config, "truth_points", truth.shape[0])
        report.add(config, "rate_curve", levelset_rate(ls, eps, s, n))
        report.add(
            config,
            "hausdorff",
            distances.mean(),
            stderr(distances),
            trials=distances.size,
            flag="empty" if empty else "",
        )
        means.append(float(distances.mean()))
        report.check(
            bool(np.isfinite(distances).all() and (distances < diameter).all()),
            f"Hausdorff distance not finite and below the support diameter at n={n}",
        )

    if len(means) >= 3:
        rho = spearmanr(np.asarray(n_grid[: len(means)], dtype=np.float64), means).correlation
        report.add({"points": len(means)}, "spearman", rho if np.isfinite(rho) else 0.0)
        report.check(
            bool(np.isfinite(rho) and rho <= -0.8),
            f"Hausdorff distance does not decrease with n (spearman {rho:.3f})",
        )
    return report


def core_identification_experiment(
    ts: TheoryScenario,
    eps: float,
    s: float,
    n: int,
    seeds: Sequence[int] = range(5),
    min_pts: Optional[int] = None,
    n_jobs: Optional[int] = None,
) -> ExperimentReport:
    """Share of cluster points found core and of noise points rejected at a given MinPts."""
    window = compute_minpts_window(ts, eps, s, n)
    min_pts = window.midpoint_min_pts if min_pts is None else int(min_pts)
    seeds = list(seeds)

    def cell(seed):
        data = generate_theory_scenario(ts, n, seed)
        g = build_sampled_graph(data, window.eps, window.rate, seed=seed)
        core = g.degree() >= min_pts
        in_cluster = data.truth_labels < ts.n_clusters
        found = float(core[in_cluster].mean()) if in_cluster.any() else np.nan
        rejected = float((~core[~in_cluster]).mean()) if (~in_cluster).any() else np.nan
        return found, rejected

    results = _run_cells(cell, [(seed,) for seed in seeds], n_jobs)
    found = np.array([r[0] for r in results])
    rejected = np.array([r[1] for r in results])

    report = ExperimentReport("corepoints", seed=seeds[0] if seeds else 0)
    config = {"n": int(n), "s": window.rate, "eps": window.eps, "min_pts": min_pts}
    flag = "" if window.precondition_ok else "eps_precondition"
    report.add(config, "window_margin", window.margin(min_pts), flag=flag)
    for name, values in (("cluster_core_fraction", found), ("noise_rejected_fraction", rejected)):
        values = values[np.isfinite(values)]
        if values.size == 0:
            continue
        report.add(config, name, values.mean(), stderr(values), trials=values.size)
        if window.contains(min_pts):
            report.check(values.mean() >= 0.95, f"{name} = {values.mean():.4f} < 0.95")
    return report
