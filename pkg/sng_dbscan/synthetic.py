import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy.integrate import quad
from scipy.spatial.distance import cdist, pdist

from sng_dbscan.dataset_io import Dataset
from sng_dbscan.errors import ContractError, EmptyLevelSetError, ParameterError
from sng_dbscan.utils import DOMAIN_SYNTHETIC, parse_vector, parse_vectors, substream, unit_ball_volume

logger = logging.getLogger(__name__)

Centers = Tuple[Tuple[float, ...], ...]


def _as_centers(centers) -> Centers:
    rows = [tuple(float(x) for x in np.atleast_1d(c)) for c in centers]
    if not rows:
        raise ContractError("at least one center is required")
    dims = {len(c) for c in rows}
    if len(dims) != 1:
        raise ContractError(f"centers have mixed dimensions {sorted(dims)}")
    if not np.isfinite(np.asarray(rows)).all():
        raise ContractError("centers must be finite")
    return tuple(rows)


def _min_center_distance(centers: np.ndarray) -> float:
    if centers.shape[0] < 2:
        return math.inf
    return float(pdist(centers).min())


def _directions(rng: np.random.Generator, m: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((m, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _uniform_ball(rng: np.random.Generator, m: int, dim: int) -> np.ndarray:
    """Uniform in the unit D-ball: direction on the sphere times U^(1/D)."""
    return _directions(rng, m, dim) * (rng.random(m) ** (1.0 / dim))[:, None]


@dataclass(frozen=True)
class BallMixtureSpec:
    """Uniform mixture of equal-radius D-balls; `margin` is the extra gap required between balls."""

    n: int
    centers: Centers
    radius: float = 1.0
    weights: Optional[Tuple[float, ...]] = None
    dim: Optional[int] = None
    seed: int = 0
    margin: float = 0.0

    def __post_init__(self):
        centers = _as_centers(self.centers)
        object.__setattr__(self, "centers", centers)
        if self.dim is None:
            object.__setattr__(self, "dim", len(centers[0]))
        elif int(self.dim) != len(centers[0]):
            raise ContractError(f"centers have D={len(centers[0])}, got dim={self.dim}")
        if int(self.n) < 1:
            raise ParameterError(f"n must be >= 1, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if not self.radius > 0:
            raise ParameterError(f"radius must be positive, got {self.radius}")

        k = len(centers)
        weights = (1.0 / k,) * k if self.weights is None else tuple(float(w) for w in self.weights)
        if len(weights) != k:
            raise ParameterError(f"{len(weights)} weights given for {k} centers")
        if min(weights) < 0 or abs(sum(weights) - 1.0) > 1e-9:
            raise ParameterError(f"weights must be non-negative and sum to 1, got {weights}")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def three_balls(cls, n: int = 10_000, seed: int = 0) -> "BallMixtureSpec":
        """Three unit balls in R^3, centers pairwise 6 apart, equal weights."""
        return cls(
            n=n,
            centers=((0.0, 0.0, 0.0), (6.0, 0.0, 0.0), (3.0, 3.0 * math.sqrt(3.0), 0.0)),
            radius=1.0,
            seed=seed,
        )

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=np.float64)

    def separation(self) -> float:
        """Smallest gap between two balls."""
        return _min_center_distance(self.center_array) - 2.0 * self.radius

    def check_separation(self) -> None:
        if not self.separation() > self.margin:
            raise ContractError(
                f"balls are {self.separation():.6g} apart, need more than margin {self.margin}"
            )

    def as_theory_scenario(self, r_s: Optional[float] = None) -> "TheoryScenario":
        if max(self.weights) - min(self.weights) > 1e-12:
            raise ContractError("a single cluster density level needs equal weights")
        if r_s is None:
            r_s = self.separation() if len(self.centers) > 1 else self.radius
        return TheoryScenario(centers=self.centers, radius=self.radius, lambda_c=1.0, r_s=r_s)


def generate_ball_mixture(spec: BallMixtureSpec) -> Dataset:
    rng = substream(spec.seed, 0, DOMAIN_SYNTHETIC)
    labels = rng.choice(len(spec.centers), size=spec.n, p=np.asarray(spec.weights))
    points = spec.center_array[labels] + spec.radius * _uniform_ball(rng, spec.n, spec.dim)
    return Dataset(points, labels)


@dataclass(frozen=True)
class TheoryScenario:
    """
    Equal-radius ball clusters of density level lambda_c, surrounded by a
    spherical noise shell of density level lambda_n. The shell starts r_s
    beyond the farthest cluster point and is `noise_width` thick.

    Levels are unnormalised; `density_levels()` divides them by the total mass.
    rho defaults to 2^-D and r0 to the cluster radius.
    """

    centers: Centers
    radius: float = 1.0
    lambda_c: float = 1.0
    lambda_n: float = 0.0
    r_s: float = 1.0
    noise_width: float = 1.0
    rho: Optional[float] = None
    r0: Optional[float] = None

    def __post_init__(self):
        centers = _as_centers(self.centers)
        object.__setattr__(self, "centers", centers)
        if not self.radius > 0:
            raise ParameterError(f"radius must be positive, got {self.radius}")
        if self.lambda_c < 0 or self.lambda_n < 0:
            raise ContractError("density levels must be non-negative")
        if self.lambda_c == 0 and self.lambda_n == 0:
            raise ContractError("scenario is not normalizable: all density levels are 0")
        if not (self.r_s > 0 and self.noise_width > 0):
            raise ParameterError("r_s and noise_width must be positive")
        if self.rho is None:
            object.__setattr__(self, "rho", 2.0 ** -len(centers[0]))
        if self.r0 is None:
            object.__setattr__(self, "r0", float(self.radius))
        if not 0 < self.rho <= 1:
            raise ParameterError(f"rho must lie in (0, 1], got {self.rho}")
        if not self.rho * self.lambda_c > self.lambda_n:
            raise ContractError(
                f"cluster level too low: rho·lambda_c = {self.rho * self.lambda_c:.6g} "
                f"<= lambda_n = {self.lambda_n:.6g}"
            )
        gap = _min_center_distance(self.center_array) - 2.0 * self.radius
        if gap < self.r_s:
            raise ContractError(f"clusters are {gap:.6g} apart, less than r_s = {self.r_s}")

    @classmethod
    def unit_disk(cls) -> "TheoryScenario":
        """A single uniform unit disk in the plane, no noise."""
        return cls(centers=((0.0, 0.0),), radius=1.0, lambda_c=1.0 / math.pi)

    @classmethod
    def noisy_three_balls(cls, lambda_n: float = 0.01) -> "TheoryScenario":
        base = BallMixtureSpec.three_balls().as_theory_scenario(r_s=1.0)
        return replace(base, lambda_n=lambda_n)

    @property
    def dim(self) -> int:
        return len(self.centers[0])

    @property
    def n_clusters(self) -> int:
        return len(self.centers)

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=np.float64)

    @property
    def centroid(self) -> np.ndarray:
        return self.center_array.mean(axis=0)

    @property
    def noise_radii(self) -> Tuple[float, float]:
        extent = float(np.linalg.norm(self.center_array - self.centroid, axis=1).max())
        inner = extent + self.radius + self.r_s
        return inner, inner + self.noise_width

    @property
    def cluster_volume(self) -> float:
        return unit_ball_volume(self.dim) * self.radius**self.dim

    @property
    def noise_volume(self) -> float:
        inner, outer = self.noise_radii
        return unit_ball_volume(self.dim) * (outer**self.dim - inner**self.dim)

    @property
    def mass(self) -> float:
        return self.lambda_c * self.n_clusters * self.cluster_volume + self.lambda_n * self.noise_volume

    def density_levels(self) -> Tuple[float, float]:
        """Normalised (λ_C, λ_N)."""
        return self.lambda_c / self.mass, self.lambda_n / self.mass

    def component_probabilities(self) -> np.ndarray:
        cluster = self.lambda_c * self.cluster_volume / self.mass
        noise = self.lambda_n * self.noise_volume / self.mass
        p = np.array([cluster] * self.n_clusters + [noise])
        return p / p.sum()


def generate_theory_scenario(ts: TheoryScenario, n: int, seed: int = 0) -> Dataset:
    """Truth label i for cluster i and n_clusters for noise points."""
    if int(n) < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    n = int(n)
    rng = substream(seed, 0, DOMAIN_SYNTHETIC)
    labels = rng.choice(ts.n_clusters + 1, size=n, p=ts.component_probabilities())
    points = np.empty((n, ts.dim), dtype=np.float64)

    in_cluster = labels < ts.n_clusters
    m = int(in_cluster.sum())
    points[in_cluster] = ts.center_array[labels[in_cluster]] + ts.radius * _uniform_ball(
        rng, m, ts.dim
    )

    noise = ~in_cluster
    m = n - m
    if m:
        inner, outer = ts.noise_radii
        d = ts.dim
        r = (inner**d + rng.random(m) * (outer**d - inner**d)) ** (1.0 / d)
        points[noise] = ts.centroid + _directions(rng, m, d) * r[:, None]
    return Dataset(points, labels)


@dataclass(frozen=True)
class LevelSet:
    """Union of balls {x : f(x) >= λ} for a radial-bump scenario."""

    centers: Centers
    radius: float

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=np.float64)

    @property
    def radii(self) -> np.ndarray:
        return np.full(len(self.centers), self.radius)

    def contains(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return (cdist(points, self.center_array) <= self.radius).any(axis=1)

    def discretize(self, m: int = 10_000, seed: int = 0) -> np.ndarray:
        """`m` points spread over the balls: half on each boundary sphere, half inside."""
        rng = substream(seed, 1, DOMAIN_SYNTHETIC)
        k = len(self.centers)
        dim = len(self.centers[0])
        parts = []
        for i, center in enumerate(self.center_array):
            share = m // k + (1 if i < m % k else 0)
            boundary = share // 2
            parts.append(center + self.radius * _directions(rng, boundary, dim))
            parts.append(center + self.radius * _uniform_ball(rng, share - boundary, dim))
        return np.concatenate(parts)


@dataclass(frozen=True)
class LevelSetScenario:
    """
    Density f(x) = (1/Z) Σ_i g(|x - c_i|) with g(r) = max(0, h - c·max(0, r - a)^β).

    `level` is a normalised density; it defaults to the plateau level h/Z,
    where the level set is the union of the plateau balls of radius a.
    """

    centers: Centers
    height: float = 1.0
    slope: float = 1.0
    beta: float = 1.0
    plateau: float = 0.0
    level: Optional[float] = None
    delta: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "centers", _as_centers(self.centers))
        if not (self.height > 0 and self.slope > 0 and self.beta > 0):
            raise ParameterError("height, slope and beta must be positive")
        if self.plateau < 0:
            raise ParameterError(f"plateau must be >= 0, got {self.plateau}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")
        gap = _min_center_distance(np.asarray(self.centers))
        if gap <= 2.0 * self.support_radius:
            raise ContractError(
                f"bump supports overlap: centers {gap:.6g} apart, support radius "
                f"{self.support_radius:.6g}"
            )
        if self.level is None:
            if self.plateau == 0:
                raise ParameterError("a level is required when the bumps have no plateau")
            object.__setattr__(self, "level", self.max_density)
        if not self.level > 0:
            raise ParameterError(f"level must be positive, got {self.level}")
        scaled = self.level * self.normalizer
        if self.plateau > 0:
            # the plateau level itself is still attained on the plateau balls
            empty = scaled > self.height and not math.isclose(scaled, self.height, rel_tol=1e-12)
        else:
            empty = scaled >= self.height
        if empty:
            raise EmptyLevelSetError(
                f"level {self.level:.6g} is at or above the maximum density {self.max_density:.6g}"
            )

    @classmethod
    def default(cls) -> "LevelSetScenario":
        """One bump on the line with plateau [-1, 1], linear decay, level at the plateau."""
        return cls(centers=((0.0,),), height=1.0, slope=1.0, beta=1.0, plateau=1.0)

    @property
    def dim(self) -> int:
        return len(self.centers[0])

    @property
    def n_bumps(self) -> int:
        return len(self.centers)

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=np.float64)

    @property
    def support_radius(self) -> float:
        return self.plateau + (self.height / self.slope) ** (1.0 / self.beta)

    def profile(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        decay = self.slope * np.maximum(r - self.plateau, 0.0) ** self.beta
        return np.maximum(self.height - decay, 0.0)

    def _mass_within(self, r: float) -> float:
        d = self.dim
        v_d = unit_ball_volume(d)
        r = min(float(r), self.support_radius)
        if r <= 0:
            return 0.0
        inner = self.height * v_d * min(r, self.plateau) ** d
        if r <= self.plateau:
            return inner
        shell, _ = quad(lambda t: float(self.profile(t)) * d * v_d * t ** (d - 1), self.plateau, r)
        return inner + shell

    @cached_property
    def bump_mass(self) -> float:
        return self._mass_within(self.support_radius)

    @property
    def normalizer(self) -> float:
        return self.n_bumps * self.bump_mass

    @property
    def max_density(self) -> float:
        return self.height / self.normalizer

    @property
    def level_radius(self) -> float:
        gap = max(self.height - self.level * self.normalizer, 0.0)
        return self.plateau + (gap / self.slope) ** (1.0 / self.beta)

    def level_set(self) -> LevelSet:
        return LevelSet(self.centers, self.level_radius)

    def regularity_constants(self, r_c: Optional[float] = None) -> Tuple[float, float]:
        """
        (Č, Ĉ): bounds of (λ - f(x)) / d(x, L)^β for points at most r_c outside
        the level set (default: out to the edge of the support).
        """
        r_level = self.level_radius
        exact = self.slope / self.normalizer
        if self.beta == 1.0 or math.isclose(r_level, self.plateau, abs_tol=1e-12):
            return exact, exact
        if r_c is None:
            r_c = self.support_radius - r_level
        if not r_c > 0:
            raise ParameterError(f"r_c must be positive, got {r_c}")
        d = np.linspace(r_c / 1000.0, r_c, 1000)
        inner = r_level - self.plateau
        ratio = exact * ((inner + d) ** self.beta - inner**self.beta) / d**self.beta
        return float(ratio.min()), float(ratio.max())

    def radial_cdf(self, r) -> np.ndarray:
        """P(|x - c| <= r) for a point drawn from one bump."""
        r = np.asarray(r, dtype=np.float64)
        values = np.vectorize(self._mass_within, otypes=[np.float64])(r)
        return values / self.bump_mass


def generate_levelset_scenario(
    ls: LevelSetScenario, n: int, seed: int = 0
) -> Tuple[Dataset, LevelSet]:
    """
    Rejection sampler: pick a bump (all bumps carry equal mass), propose
    uniformly in its support ball and accept with probability g(r)/h.
    """
    if int(n) < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    n = int(n)
    rng = substream(seed, 0, DOMAIN_SYNTHETIC)
    support = ls.support_radius
    accept_rate = ls.bump_mass / (ls.height * unit_ball_volume(ls.dim) * support**ls.dim)

    points, labels = [], []
    accepted = 0
    while accepted < n:
        batch = max(1024, int(1.2 * (n - accepted) / accept_rate))
        bump = rng.integers(ls.n_bumps, size=batch)
        offset = support * _uniform_ball(rng, batch, ls.dim)
        keep = rng.random(batch) * ls.height < ls.profile(np.linalg.norm(offset, axis=1))
        points.append(ls.center_array[bump[keep]] + offset[keep])
        labels.append(bump[keep])
        accepted += int(keep.sum())

    points = np.concatenate(points)[:n]
    labels = np.concatenate(labels)[:n]
    return Dataset(points, labels), ls.level_set()


_FLOAT_KEYS = {
    "radius",
    "lambda_c",
    "lambda_n",
    "r_s",
    "noise_width",
    "beta",
    "level",
    "height",
    "slope",
    "plateau",
    "delta",
}
_KNOWN_KEYS = _FLOAT_KEYS | {"kind", "n", "dim", "centers", "weights", "seed"}

ScenarioSpec = Union[BallMixtureSpec, TheoryScenario, LevelSetScenario]


def scenario_from_config(config: Dict[str, str]) -> Tuple[str, ScenarioSpec, int, int]:
    """
    Builds (kind, spec, n, seed) from key=value config entries.
    kind is one of balls, theory, levelset.
    """
    unknown = sorted(set(config) - _KNOWN_KEYS)
    if unknown:
        raise ParameterError(f"unknown config keys: {', '.join(unknown)}")
    kind = config.get("kind", "balls").strip().lower()
    try:
        n = int(config.get("n", "1000"))
        seed = int(config.get("seed", "0"))
        values = {k: float(v) for k, v in config.items() if k in _FLOAT_KEYS}
        dim = int(config["dim"]) if "dim" in config else None
    except ValueError as ex:
        raise ParameterError(f"bad config value: {ex}")

    centers = parse_vectors(config["centers"]) if "centers" in config else None
    if dim is not None and centers is not None and any(len(c) != dim for c in centers):
        raise ContractError(f"centers do not all have dim={dim}")

    if kind == "balls":
        if centers is None:
            centers = BallMixtureSpec.three_balls().centers
        weights = tuple(parse_vector(config["weights"])) if "weights" in config else None
        spec = BallMixtureSpec(
            n=n,
            centers=centers,
            radius=values.get("radius", 1.0),
            weights=weights,
            dim=dim,
            seed=seed,
        )
    elif kind == "theory":
        if centers is None:
            centers = TheoryScenario.noisy_three_balls().centers
        keys = ("radius", "lambda_c", "lambda_n", "r_s", "noise_width")
        spec = TheoryScenario(centers=centers, **{k: values[k] for k in keys if k in values})
    elif kind == "levelset":
        if centers is None:
            centers = LevelSetScenario.default().centers
        keys = ("height", "slope", "beta", "plateau", "level", "delta")
        defaults = {} if "level" in values else {"plateau": LevelSetScenario.default().plateau}
        defaults.update({k: values[k] for k in keys if k in values})
        spec = LevelSetScenario(centers=centers, **defaults)
    else:
        raise ParameterError(f"unknown scenario kind {kind!r}; expected balls, theory or levelset")
    return kind, spec, n, seed


def generate(kind: str, spec: ScenarioSpec, n: int, seed: int) -> Dataset:
    if kind == "balls":
        return generate_ball_mixture(replace(spec, n=n, seed=seed))
    if kind == "theory":
        return generate_theory_scenario(spec, n, seed)
    data, _ = generate_levelset_scenario(spec, n, seed)
    return data
