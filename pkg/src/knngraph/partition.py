"""Random hierarchical bisection along sampled principal directions."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .core import Dataset, InvalidInputError


@dataclass(frozen=True)
class DivisionConfig:
    g: int = 500
    pca_sample: int = 1000
    power_iters: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.g < 2:
            raise InvalidInputError(f"leaf cardinality bound g must be >= 2, got {self.g}")
        if self.pca_sample < 2:
            raise InvalidInputError(f"pca_sample must be >= 2, got {self.pca_sample}")
        if self.power_iters < 1:
            raise InvalidInputError(f"power_iters must be >= 1, got {self.power_iters}")


@dataclass
class Division:
    leaves: list[np.ndarray]
    depth: int = 0
    # per-node split diagnostics, only used for debugging
    degenerate_splits: int = field(default=0, repr=False)

    @property
    def sizes(self) -> list[int]:
        return [len(leaf) for leaf in self.leaves]

    def leaf_labels(self, n: int) -> np.ndarray:
        """Leaf index of each point, -1 for points not covered."""
        out = np.full(n, -1, np.int64)
        for t, leaf in enumerate(self.leaves):
            out[leaf] = t
        return out


def random_principal_direction(dataset: Dataset, subset, cfg: DivisionConfig, rng: np.random.Generator):
    """Dominant covariance direction of a random sample of ``subset``.

    Power iteration from a random unit start.  Returns a unit vector, or None
    when the sampled points are all identical (zero covariance).
    """
    subset = np.asarray(subset)
    if subset.size < 2:
        raise InvalidInputError("need at least two points to estimate a direction")
    v = K.principal_direction(dataset.points, subset.astype(np.int64), cfg.pca_sample, cfg.power_iters, rng)
    if v.size == 0:
        return None
    return v


def split_subset(dataset: Dataset, subset, direction) -> tuple[np.ndarray, np.ndarray]:
    """Median split of ``subset`` by projection onto ``direction``.

    Points tied with the median go, in ascending id order, to whichever side is
    currently smaller (left on ties).  If every projection is equal, or
    ``direction`` is None, the ids are halved in ascending order.
    """
    ids = np.sort(np.asarray(subset, dtype=np.int64))
    m = ids.size
    if m < 2:
        raise InvalidInputError("cannot split fewer than two points")
    half = (m + 1) // 2
    if direction is None:
        return ids[:half], ids[half:]
    side = K.median_split(dataset.points, ids, np.ascontiguousarray(direction, dtype=np.float64))
    if side.size == 0:
        return ids[:half], ids[half:]
    return ids[side == 0], ids[side == 1]


def random_division(dataset: Dataset, cfg: DivisionConfig, rng: np.random.Generator | None = None) -> Division:
    """Recursively bisect all points until every subset has fewer than ``g`` members.

    Leaves come out in depth-first, left-before-right order.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    members, bounds, depth, degenerate = K.divide(dataset.points, cfg.g, cfg.pca_sample, cfg.power_iters, rng)
    leaves = [members[bounds[t]:bounds[t + 1]] for t in range(len(bounds) - 1)]
    return Division(leaves=leaves, depth=int(depth), degenerate_splits=int(degenerate))


def _random_division_reference(dataset: Dataset, cfg: DivisionConfig, rng: np.random.Generator) -> Division:
    # same recursion driven from Python through the public helpers
    leaves: list[np.ndarray] = []
    depth = 0
    degenerate = 0
    stack = [(np.arange(dataset.n, dtype=np.int64), 0)]
    while stack:
        subset, level = stack.pop()
        if subset.size < cfg.g:
            leaves.append(subset)
            depth = max(depth, level)
            continue
        direction = random_principal_direction(dataset, subset, cfg, rng)
        if direction is None:
            degenerate += 1
        left, right = split_subset(dataset, subset, direction)
        stack.append((right, level + 1))
        stack.append((left, level + 1))
    return Division(leaves=leaves, depth=depth, degenerate_splits=degenerate)


def check_division(division: Division, n: int, g: int) -> list[str]:
    """Partition and size violations of ``division`` over points [0, n)."""
    problems = []
    seen = np.zeros(n, np.int64)
    for t, leaf in enumerate(division.leaves):
        if len(leaf) == 0:
            problems.append(f"leaf {t} is empty")
        if len(leaf) >= g:
            problems.append(f"leaf {t} has {len(leaf)} points (bound {g})")
        if len(leaf) and (leaf.min() < 0 or leaf.max() >= n):
            problems.append(f"leaf {t} holds ids outside [0, {n})")
            continue
        np.add.at(seen, leaf, 1)
    if np.any(seen > 1):
        problems.append(f"{int(np.sum(seen > 1))} points appear in more than one leaf")
    if np.any(seen == 0):
        problems.append(f"{int(np.sum(seen == 0))} points are in no leaf")
    return problems


def expected_depth_bound(n: int, g: int, slack: int = 4) -> int:
    return max(0, math.ceil(math.log2(max(n / (g / 2), 1.0)))) + slack


def warn_if_deep(division: Division, n: int, g: int) -> None:
    bound = expected_depth_bound(n, g)
    if division.depth > bound:
        warnings.warn(f"division depth {division.depth} exceeds expected bound {bound}", stacklevel=2)
