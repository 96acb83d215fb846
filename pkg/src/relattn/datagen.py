"""Seeded synthetic benchmarks with cluster-induced relationship matrices.

Every generator is a pure function of its spec: the same seed yields
bitwise-identical arrays.  Relationship matrices are symmetric, have a zero
diagonal and never relate points from different clusters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import RelDataset, SplitIndex, TreatmentDataset
from .errors import ConfigError

FAMILIES_1D = ("parabolas", "step")
FAMILIES_2D = ("linear2d", "square2d", "sin2d")
FAMILIES = FAMILIES_1D + FAMILIES_2D + ("noisy7d",)
R_MODES = ("deterministic", "random_half")
N_CLUSTERS = 3
NOISY_COLUMNS_7D = (2, 4, 5, 6)


@dataclass(frozen=True)
class SyntheticSpec:
    family: str
    n: int = 300
    cluster_scale: float | None = None
    r_mode: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.n < 3:
            raise ConfigError("synthetic datasets need n >= 3")
        if self.r_mode is not None and self.r_mode not in R_MODES:
            raise ConfigError(f"unknown r_mode {self.r_mode!r}")

    @property
    def scale(self) -> float:
        if self.cluster_scale is not None:
            return float(self.cluster_scale)
        return 1.0 if self.family == "noisy7d" else 0.5

    @property
    def mode(self) -> str:
        if self.r_mode is not None:
            return self.r_mode
        return "random_half" if self.family == "noisy7d" else "deterministic"

    def with_seed(self, seed: int) -> "SyntheticSpec":
        return replace(self, seed=seed)


def _streams(seed: int) -> tuple[np.random.Generator, int]:
    data_ss, rel_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(data_ss), int(rel_ss.generate_state(1)[0])


def gen_rel_matrix(clusters, r_mode: str = "deterministic", seed: int = 0) -> np.ndarray:
    """Same-cluster indicator matrix, optionally thinned by symmetric coin flips."""
    c = np.asarray(clusters).reshape(-1)
    same = (c[:, None] == c[None, :]).astype(np.float64)
    if r_mode == "random_half":
        rng = np.random.default_rng(seed)
        coins = (rng.random(same.shape) < 0.5).astype(np.float64)
        coins = np.triu(coins, 1)
        same = same * (coins + coins.T)
    elif r_mode != "deterministic":
        raise ConfigError(f"unknown r_mode {r_mode!r}")
    np.fill_diagonal(same, 0.0)
    return same


def _clusters(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, N_CLUSTERS, size=n)


def curve_1d(family: str, x, cluster, scale: float = 0.5) -> np.ndarray:
    """Noise-free target of a one-dimensional family for the given cluster."""
    x = np.asarray(x, dtype=np.float64)
    base = x**2 if family == "parabolas" else np.sign(x)
    return base + scale * np.asarray(cluster)


def gen_clusters_1d(spec: SyntheticSpec, return_clusters: bool = False):
    if spec.family not in FAMILIES_1D:
        raise ConfigError(f"{spec.family!r} is not a one-dimensional family")
    rng, rel_seed = _streams(spec.seed)
    x = rng.uniform(-1.0, 1.0, size=spec.n)
    c = _clusters(rng, spec.n)
    y = curve_1d(spec.family, x, c, spec.scale)
    ds = RelDataset(x[:, None], y, gen_rel_matrix(c, spec.mode, rel_seed))
    return (ds, c) if return_clusters else ds


def gen_2d(spec: SyntheticSpec, return_clusters: bool = False):
    if spec.family not in FAMILIES_2D:
        raise ConfigError(f"{spec.family!r} is not a two-dimensional family")
    rng, rel_seed = _streams(spec.seed)
    X = rng.uniform(-1.0, 1.0, size=(spec.n, 2))
    c = _clusters(rng, spec.n)
    x1, x2 = X[:, 0], X[:, 1]
    if spec.family == "linear2d":
        base = x1 + 2.0 * x2
    elif spec.family == "square2d":
        base = x1 + 0.5 * x2**2
    else:
        base = x1 + np.sin(x2)
    ds = RelDataset(X, base + spec.scale * c, gen_rel_matrix(c, spec.mode, rel_seed))
    return (ds, c) if return_clusters else ds


def gen_7d_noisy(spec: SyntheticSpec, return_clusters: bool = False):
    """Seven uniform features of which only columns 0, 1 and 3 drive the target."""
    if spec.family != "noisy7d":
        raise ConfigError(f"{spec.family!r} is not the noisy7d family")
    rng, rel_seed = _streams(spec.seed)
    X = rng.uniform(-1.0, 1.0, size=(spec.n, 7))
    c = _clusters(rng, spec.n)
    y = np.cos(X[:, 0]) + np.cos(X[:, 1]) + X[:, 3] + spec.scale * c
    ds = RelDataset(X, y, gen_rel_matrix(c, spec.mode, rel_seed))
    return (ds, c) if return_clusters else ds


def generate(spec: SyntheticSpec, return_clusters: bool = False):
    if spec.family in FAMILIES_1D:
        return gen_clusters_1d(spec, return_clusters)
    if spec.family in FAMILIES_2D:
        return gen_2d(spec, return_clusters)
    return gen_7d_noisy(spec, return_clusters)


def gen_additive_effect(n: int = 300, effect: float = 2.0, seed: int = 0,
                        r_mode: str = "deterministic", noise: float = 0.0) -> TreatmentDataset:
    """Parabola clusters with a constant treatment effect: Y(1) = Y(0) + effect."""
    rng, rel_seed = _streams(seed)
    x = rng.uniform(-1.0, 1.0, size=n)
    c = _clusters(rng, n)
    W = (rng.random(n) < 0.5).astype(int)
    if W.sum() in (0, n):
        W[0] = 1 - W[0]
    y0 = x**2 + 0.5 * c + noise * rng.normal(size=n)
    Y = y0 + effect * W
    return TreatmentDataset(x[:, None], W, Y, gen_rel_matrix(c, r_mode, rel_seed), np.full(n, float(effect)))


def _partition(n: int, sizes: tuple[int, int, int], seed: int) -> SplitIndex:
    if min(sizes) < 1:
        raise ConfigError(f"every split part needs at least one row, got sizes {sizes}")
    if sum(sizes) > n:
        raise ConfigError(f"split sizes {sizes} exceed {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    a, b, c = sizes
    return SplitIndex(np.sort(perm[:a]), np.sort(perm[a:a + b]), np.sort(perm[a + b:a + b + c]))


def split_dataset(n: int, fractions=(1 / 3, 1 / 3, 1 / 3), seed: int = 0) -> SplitIndex:
    """Disjoint random background/trial/validation index sets."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or sum(fractions) > 1 + 1e-9:
        raise ConfigError(f"fractions must be three nonnegative numbers summing to <= 1, got {fractions}")
    sizes = tuple(int(round(f * n)) for f in fractions)
    if sum(sizes) > n:
        sizes = (n - sizes[1] - sizes[2], sizes[1], sizes[2])
    return _partition(n, sizes, seed)


def split_counts(n: int, n_trial: int, n_validation: int, seed: int = 0) -> SplitIndex:
    """Fixed-size trial and validation sets; the remaining rows form the background."""
    return _partition(n, (n - n_trial - n_validation, n_trial, n_validation), seed)
