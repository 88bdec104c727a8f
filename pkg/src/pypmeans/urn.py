"""Finite-epsilon Polya urn whose new-color weight grows with the color count.

An existing color ``k`` is drawn with weight ``n_k * exp(theta / (2 eps))`` and
a new color with weight ``lam * exp(ln(c) * theta / (2 eps))``, where ``c``
is the number of colors so far.  ``theta = 0`` is the Chinese restaurant
process with concentration ``lam``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class UrnConfig:
    lambda_raw: float
    theta_raw: float = 0.0
    epsilon: float = 0.5
    n_draws: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.lambda_raw > 0:
            raise ValueError("lambda_raw must be > 0")
        if not self.theta_raw >= 0:
            raise ValueError("theta_raw must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")

    @property
    def rate(self) -> float:
        return self.theta_raw / (2.0 * self.epsilon)


@dataclass(frozen=True)
class UrnTrace:
    colors: np.ndarray      # 1-based color per draw, in draw order
    sizes: np.ndarray       # final ball count per color
    new_prob: np.ndarray    # probability of a new color at each draw
    c_before: np.ndarray    # color count just before each draw


def _log_weights(cfg: UrnConfig, sizes: np.ndarray) -> np.ndarray:
    c = sizes.size
    a = cfg.rate
    return np.append(np.log(sizes) + a, math.log(cfg.lambda_raw) + math.log(c) * a)


def alloc_weights(cfg: UrnConfig, sizes: Sequence[int]) -> np.ndarray:
    """Draw probabilities for each existing color followed by a new color."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0 or np.any(sizes <= 0):
        raise ValueError("sizes must be a non-empty vector of positive counts")
    lw = _log_weights(cfg, sizes)
    w = np.exp(lw - lw.max())
    return w / w.sum()


def new_color_prob(cfg: UrnConfig, n: int, c: int) -> float:
    """New-color probability after ``n`` balls in ``c`` colors (depends on nothing else)."""
    a = cfg.rate
    log_new = math.log(cfg.lambda_raw) + math.log(c) * a
    log_old = math.log(n) + a
    return 1.0 / (1.0 + math.exp(log_old - log_new))


def crp_weights(lam: float, sizes: Sequence[int]) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.float64)
    return np.append(sizes, lam) / (sizes.sum() + lam)


def pitman_yor_weights(lam: float, discount: float, sizes: Sequence[int]) -> np.ndarray:
    """Standard Pitman-Yor urn weights, used as a reference only."""
    sizes = np.asarray(sizes, dtype=np.float64)
    c = sizes.size
    return np.append(sizes - discount, lam + c * discount) / (sizes.sum() + lam)


def simulate(cfg: UrnConfig) -> UrnTrace:
    """Paint ``cfg.n_draws`` balls.  The first ball always opens color 1.

    Existing colors share their mass in proportion to ``n_k`` (the common
    ``exp(theta/2eps)`` factor cancels), so a draw is "new vs. old" followed by
    copying the color of a uniformly chosen earlier ball.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_draws
    colors = np.empty(n, dtype=np.int64)
    new_prob = np.empty(n)
    c_before = np.empty(n, dtype=np.int64)
    colors[0] = 1
    new_prob[0] = 1.0
    c_before[0] = 0
    c = 1
    u = rng.random(n)
    for i in range(1, n):
        p = new_color_prob(cfg, i, c)
        new_prob[i] = p
        c_before[i] = c
        if u[i] < p:
            c += 1
            colors[i] = c
        else:
            colors[i] = colors[rng.integers(i)]
    sizes = np.bincount(colors, minlength=c + 1)[1:]
    return UrnTrace(colors, sizes, new_prob, c_before)


def _check_sequence(colors: Sequence[int]) -> None:
    seen = 0
    for pos, k in enumerate(colors):
        if k < 1 or k > seen + 1:
            raise ValueError(f"invalid color sequence: color {k} at position {pos + 1} after {seen} colors")
        seen = max(seen, k)


def joint_probability(cfg: UrnConfig, colors: Sequence[int]) -> float:
    """Probability of painting exactly ``colors`` (1-based, creation-ordered)."""
    colors = list(colors)
    if not colors:
        raise ValueError("empty color sequence")
    _check_sequence(colors)
    logp = 0.0
    sizes: list[int] = [1]
    for k in colors[1:]:
        p = alloc_weights(cfg, sizes)
        logp += math.log(p[k - 1])
        if k > len(sizes):
            sizes.append(1)
        else:
            sizes[k - 1] += 1
    return math.exp(logp)


def canonical(colors: Sequence[int]) -> tuple[int, ...]:
    """Relabel colors by order of first appearance."""
    mapping: dict[int, int] = {}
    return tuple(mapping.setdefault(k, len(mapping) + 1) for k in colors)


def exchangeability_spread(cfg: UrnConfig, colors: Sequence[int]) -> float:
    """Relative spread (max - min) / max of the joint probability over all orderings.

    Every distinct permutation of ``colors`` is relabeled into creation order
    and scored; an exchangeable urn gives 0 up to rounding.
    """
    probs = [joint_probability(cfg, canonical(p)) for p in set(itertools.permutations(colors))]
    hi = max(probs)
    return (hi - min(probs)) / hi
