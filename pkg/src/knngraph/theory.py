"""Discovery probabilities under the independent random-hyperplane model.

A pair of points that a single split keeps together with probability P stays
together through a depth-h tree with probability P**h.  The closed forms below
follow from treating the h splits of a tree, and the L trees, as independent.
The simulators draw those Bernoulli events explicitly and serve as oracles for
the formulas (and the formulas for the simulators).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from .core import InvalidInputError

EVENTS = ("single", "multi", "new", "propagation", "path", "combined")


def _check_prob(name: str, P: float, *, open_interval: bool = False) -> float:
    P = float(P)
    ok = 0.0 < P < 1.0 if open_interval else 0.0 <= P <= 1.0
    if not ok:
        rng = "(0, 1)" if open_interval else "[0, 1]"
        raise InvalidInputError(f"{name} must lie in {rng}, got {P}")
    return P


def _check_int(name: str, v: int, lo: int) -> int:
    if int(v) != v or v < lo:
        raise InvalidInputError(f"{name} must be an integer >= {lo}, got {v}")
    return int(v)


def single_tree_prob(P: float, h: int) -> float:
    """Chance that a pair survives all h splits of one tree: P**h."""
    P = _check_prob("P", P)
    h = _check_int("h", h, 1)
    return P**h


def multi_tree_prob(P: float, h: int, L: int) -> float:
    """Chance that at least one of L independent trees co-locates the pair."""
    q = single_tree_prob(P, h)
    L = _check_int("L", L, 0)
    return 1.0 - (1.0 - q) ** L


def new_discovery_prob(P: float, h: int, L: int) -> float:
    """Chance that tree L is the first to co-locate the pair."""
    q = single_tree_prob(P, h)
    L = _check_int("L", L, 1)
    return (1.0 - q) ** (L - 1) * q


def _link_prob(P: float, h: int, L: int) -> float:
    # a link found by one of the first L - 1 trees
    return 1.0 - (1.0 - single_tree_prob(P, h)) ** (L - 1)


def propagation_prob(P_in: float, P_jn: float, h: int, L: int) -> float:
    """Chance that i and j both meet a shared neighbor n within the first L - 1 trees."""
    L = _check_int("L", L, 1)
    return _link_prob(P_in, h, L) * _link_prob(P_jn, h, L)


def path_propagation_prob(path: Sequence[float], h: int, L: int) -> float:
    """Chance that every link of a chain of intermediate points is found
    within the first L - 1 trees."""
    path = list(path)
    if not path:
        raise InvalidInputError("path must contain at least one link probability")
    L = _check_int("L", L, 1)
    out = 1.0
    for P in path:
        out *= _link_prob(P, h, L)
    return out


def combined_lower_bound(P: float, h: int, L: int) -> float:
    """Lower bound on discovery through a tree or one shared neighbor.

    With x = (1 - P**h)**L the chance that L trees miss a link, the pair is
    lost only if its own link is missed and the two-link route fails:
    1 - x * (1 - (1 - x)**2) = 1 - x**2 * (2 - x).
    """
    P = _check_prob("P", P, open_interval=True)
    h = _check_int("h", h, 1)
    L = _check_int("L", L, 1)
    x = (1.0 - P**h) ** L
    return 1.0 - x * x * (2.0 - x)


def cosine_collision_prob(d: float) -> float:
    """Chance that a random hyperplane through the origin keeps two vectors at
    angle ``d`` (radians) on the same side."""
    d = float(d)
    if not 0.0 <= d <= math.pi:
        raise InvalidInputError(f"angular distance must lie in [0, pi], got {d}")
    return 1.0 - d / math.pi


def _half_normal_pdf(z: float) -> float:
    return math.sqrt(2.0 / math.pi) * math.exp(-0.5 * z * z)


def euclidean_collision_prob(d: float, w: float) -> float:
    """Collision probability of two points at distance ``d`` under the hash
    floor((a.x + b) / w) with Gaussian ``a`` and ``b`` uniform on [0, w).

    Integrates (1/d) f(t/d) (1 - t/w) over [0, w], f the half-normal density.
    """
    d, w = float(d), float(w)
    if not (d > 0.0 and w > 0.0):
        raise InvalidInputError(f"need d > 0 and w > 0, got d={d}, w={w}")
    val, _err = integrate.quad(
        lambda t: _half_normal_pdf(t / d) / d * (1.0 - t / w), 0.0, w, epsabs=1e-8, epsrel=1e-10, limit=200
    )
    return min(1.0, max(0.0, val))


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeModel:
    """Per-split co-location probability P, tree depth h, number of trees L."""

    P: float
    h: int
    L: int

    def __post_init__(self):
        _check_prob("P", self.P)
        _check_int("h", self.h, 1)
        _check_int("L", self.L, 0)


def _found(rng: np.random.Generator, P: float, trials: int, trees: int, h: int) -> np.ndarray:
    """(trials, trees) bool: tree kept the pair through all h splits."""
    if trees == 0:
        return np.zeros((trials, 0), bool)
    if P >= 1.0:
        return np.ones((trials, trees), bool)
    if P <= 0.0:
        return np.zeros((trials, trees), bool)
    out = np.ones((trials, trees), bool)
    # draw level by level to bound memory at trials * trees
    for _ in range(h):
        out &= rng.random((trials, trees)) < P
    return out


def simulate_discovery(model: TreeModel, trials: int, rng: np.random.Generator | None = None, *,
                       event: str = "multi", path: Sequence[float] | None = None) -> tuple[float, float]:
    """Monte-Carlo frequency of a discovery event and its binomial standard error.

    Events:
      ``single``       the first tree co-locates the pair;
      ``multi``        some of the L trees does;
      ``new``          tree L does and trees 1..L-1 do not;
      ``propagation``  both links i-n and j-n are found within trees 1..L-1
                       (link probabilities from ``path`` if given, else P);
      ``path``         every link of ``path`` is found within trees 1..L-1;
      ``combined``     the pair is found directly by one of L trees, or both
                       links to a shared neighbor are, all at probability P.
    """
    if event not in EVENTS:
        raise InvalidInputError(f"unknown event {event!r}; expected one of {EVENTS}")
    trials = _check_int("trials", trials, 1)
    if rng is None:
        rng = np.random.default_rng()
    P, h, L = model.P, model.h, model.L

    if event == "single":
        hit = _found(rng, P, trials, 1, h)[:, 0]
    elif event == "multi":
        hit = _found(rng, P, trials, L, h).any(axis=1)
    elif event == "new":
        if L < 1:
            raise InvalidInputError("event 'new' needs L >= 1")
        f = _found(rng, P, trials, L, h)
        hit = f[:, -1] & ~f[:, :-1].any(axis=1)
    elif event in ("propagation", "path"):
        if L < 1:
            raise InvalidInputError(f"event {event!r} needs L >= 1")
        if event == "path" and not path:
            raise InvalidInputError("event 'path' needs a non-empty path")
        links = list(path) if path else [P, P]
        hit = np.ones(trials, bool)
        for Pk in links:
            _check_prob("link probability", Pk)
            hit &= _found(rng, Pk, trials, L - 1, h).any(axis=1)
    else:  # combined
        if L < 1:
            raise InvalidInputError("event 'combined' needs L >= 1")
        direct = _found(rng, P, trials, L, h).any(axis=1)
        via_i = _found(rng, P, trials, L, h).any(axis=1)
        via_j = _found(rng, P, trials, L, h).any(axis=1)
        hit = direct | (via_i & via_j)

    freq = float(hit.mean())
    se = math.sqrt(freq * (1.0 - freq) / trials)
    return freq, se


def simulate_cosine_collision(angle: float, trials: int, rng: np.random.Generator | None = None,
                              dim: int = 8) -> tuple[float, float]:
    """Sign agreement of two unit vectors at ``angle`` under random Gaussian hyperplanes."""
    if not 0.0 <= angle <= math.pi:
        raise InvalidInputError(f"angle must lie in [0, pi], got {angle}")
    if dim < 2:
        raise InvalidInputError("dim must be >= 2")
    trials = _check_int("trials", trials, 1)
    if rng is None:
        rng = np.random.default_rng()
    u = np.zeros(dim)
    u[0] = 1.0
    v = np.zeros(dim)
    v[0], v[1] = math.cos(angle), math.sin(angle)
    agree = 0
    done = 0
    while done < trials:
        m = min(trials - done, 1 << 18)
        A = rng.standard_normal((m, dim))
        agree += int(np.count_nonzero((A @ u >= 0) == (A @ v >= 0)))
        done += m
    freq = agree / trials
    return freq, math.sqrt(freq * (1.0 - freq) / trials)


def simulate_euclidean_collision(d: float, w: float, trials: int, rng: np.random.Generator | None = None,
                                 dim: int = 8) -> tuple[float, float]:
    """Bucket agreement of two points at distance ``d`` under floor((a.x + b) / w)."""
    if not (d > 0 and w > 0):
        raise InvalidInputError(f"need d > 0 and w > 0, got d={d}, w={w}")
    trials = _check_int("trials", trials, 1)
    if rng is None:
        rng = np.random.default_rng()
    x = rng.standard_normal(dim)
    off = rng.standard_normal(dim)
    y = x + d * off / np.linalg.norm(off)
    agree = 0
    done = 0
    while done < trials:
        m = min(trials - done, 1 << 18)
        A = rng.standard_normal((m, dim))
        b = rng.uniform(0.0, w, m)
        agree += int(np.count_nonzero(np.floor((A @ x + b) / w) == np.floor((A @ y + b) / w)))
        done += m
    freq = agree / trials
    return freq, math.sqrt(freq * (1.0 - freq) / trials)


# ---------------------------------------------------------------------------
# formula-vs-simulation table
# ---------------------------------------------------------------------------

THEORY_COLUMNS = ["event", "P", "h", "L", "formula", "simulated", "se", "z"]


def formula_for(event: str, model: TreeModel, path: Sequence[float] | None = None) -> float:
    P, h, L = model.P, model.h, model.L
    if event == "single":
        return single_tree_prob(P, h)
    if event == "multi":
        return multi_tree_prob(P, h, L)
    if event == "new":
        return new_discovery_prob(P, h, L)
    if event == "propagation":
        a, b = (path if path else (P, P))
        return propagation_prob(a, b, h, L)
    if event == "path":
        return path_propagation_prob(path or [], h, L)
    if event == "combined":
        return combined_lower_bound(P, h, L)
    raise InvalidInputError(f"unknown event {event!r}")


def theory_table(grid: Sequence[dict], trials: int, seed: int = 0) -> list[dict]:
    """One row per grid point: closed form, simulated frequency, SE and z-score.

    Each grid entry has keys P, h, L and optionally ``event`` (default
    ``multi``) and ``path``.
    """
    rows = []
    root = np.random.SeedSequence(seed)
    for entry, child in zip(grid, root.spawn(len(grid))):
        event = entry.get("event", "multi")
        model = TreeModel(float(entry["P"]), int(entry["h"]), int(entry["L"]))
        path = entry.get("path")
        exact = formula_for(event, model, path)
        freq, se = simulate_discovery(model, trials, np.random.default_rng(child), event=event, path=path)
        z = (freq - exact) / se if se > 0 else (0.0 if freq == exact else math.inf)
        rows.append(dict(event=event, P=model.P, h=model.h, L=model.L, formula=exact,
                         simulated=freq, se=se, z=z))
    return rows
