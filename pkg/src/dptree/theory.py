"""Computable forms of the utility analysis: gain-sensitivity bounds, the
sample-size requirements of the split strategies, the overall dataset-size
requirement, and the boosting recurrence that drives the split-count bound.

Only constants that appear explicitly in the analysis are used; nothing is
invented beyond them. "log" inside the x >= 2b log(b) device is the natural
log; lg (base 2) appears only inside entropy-style formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dp_core import InvalidParameterError, RandomSource
from .tree_learning import Criterion, gain_from_counts

ITERATION_CAP = 10**9


class CapExceededError(RuntimeError):
    """The boosting recurrence failed to reach the target within the cap."""


@dataclass
class WeakLearningParams:
    """Inputs of the dataset-size requirement.

    gamma: weak-learning advantage in (0, 1/2].
    error: target training error in (0, 1].
    delta: failure probability in (0, 1].
    max_nodes: cap M on internal nodes.
    alpha: total privacy budget.
    entities: number of data holders k (1 = single machine).
    schedule: budget schedule; its minimum B(d) over depths 1..M enters the
              per-leaf budget.
    """

    gamma: float
    error: float
    delta: float
    max_nodes: int
    alpha: float
    entities: int = 1
    schedule: object = None

    def __post_init__(self):
        if not 0.0 < self.gamma <= 0.5:
            raise InvalidParameterError(f"gamma must lie in (0, 1/2], got {self.gamma}")
        if not 0.0 < self.error <= 1.0:
            raise InvalidParameterError(f"error must lie in (0, 1], got {self.error}")
        if not 0.0 < self.delta <= 1.0:
            raise InvalidParameterError(f"delta must lie in (0, 1], got {self.delta}")
        if self.max_nodes < 1:
            raise InvalidParameterError(f"max_nodes must be >= 1, got {self.max_nodes}")
        if self.alpha <= 0:
            raise InvalidParameterError(f"alpha must be positive, got {self.alpha}")
        if self.entities < 1:
            raise InvalidParameterError(f"entities must be >= 1, got {self.entities}")
        if self.schedule is None:
            from .dp_topdown import UniformSchedule

            self.schedule = UniformSchedule(self.max_nodes)


# ---------------------------------------------------------------------------
# Sensitivity of the split gain
# ---------------------------------------------------------------------------


def sensitivity_bound(criterion: Criterion, m: int) -> float:
    """Worst-case change of J(S, h) when one of m points is replaced.

    Entropy: (2/m)(3 lg m + 1); Gini: 20/m; root Gini: 10/m. Requires m >= 3
    so that 1/m <= 1/e, which the entropy argument needs.
    """
    if m < 3:
        raise InvalidParameterError(f"m must be >= 3, got {m}")
    if criterion is Criterion.ENTROPY:
        return (2.0 / m) * (3.0 * math.log2(m) + 1.0)
    if criterion is Criterion.GINI:
        return 20.0 / m
    if criterion is Criterion.ROOT_GINI:
        return 10.0 / m
    raise InvalidParameterError(f"unknown criterion {criterion!r}")


def _neighbor_deltas(tables: np.ndarray, criterion: Criterion) -> float:
    """Max |J(S) - J(S')| over all single-point moves for each table."""
    base = gain_from_counts(tables, criterion)
    worst = 0.0
    flat = tables.reshape(tables.shape[0], 4)
    for src in range(4):
        movable = flat[:, src] >= 1.0
        if not movable.any():
            continue
        for dst in range(4):
            if dst == src:
                continue
            moved = flat.copy()
            moved[:, src] -= 1.0
            moved[:, dst] += 1.0
            deltas = np.abs(gain_from_counts(moved.reshape(tables.shape), criterion) - base)
            worst = max(worst, float(deltas[movable].max(initial=0.0)))
    return worst


def empirical_sensitivity(
    criterion: Criterion, m: int, trials: int, rng: RandomSource | None = None
) -> float:
    """Brute-force check of sensitivity_bound.

    A dataset of size m together with one split is, for gain purposes, just a
    2x2 joint count table. Samples `trials` random tables (dense and sparse
    mixes plus hand-picked near-degenerate corners) and maximizes |J - J'|
    over every single-point replacement of every table.
    """
    if m < 3:
        raise InvalidParameterError(f"m must be >= 3, got {m}")
    rng = rng if rng is not None else RandomSource(0)
    gen = rng.np
    dense = gen.dirichlet(np.ones(4), size=max(trials // 2, 1))
    sparse = gen.dirichlet(np.full(4, 0.15), size=max(trials - trials // 2, 1))
    tables = gen.multinomial(m, np.vstack([dense, sparse])).astype(float)
    corners = np.array(
        [
            [m - 1, 0, 1, 0],
            [m - 1, 1, 0, 0],
            [m - 1, 0, 0, 1],
            [m // 2, m - m // 2 - 1, 1, 0],
            [m - 2, 1, 1, 0],
        ],
        dtype=float,
    )
    tables = np.vstack([tables, corners]).reshape(-1, 2, 2)
    return _neighbor_deltas(tables, criterion)


# ---------------------------------------------------------------------------
# Sample-size requirements of the split strategies
# ---------------------------------------------------------------------------


def _two_b_log_b(b: float) -> int:
    if b <= 1.0:
        return 3
    return max(3, math.ceil(2.0 * b * math.log(b)))


def rnm_sample_bound(zeta: float, alpha: float, delta: float, h_size: int) -> int:
    """Leaf size that makes single-machine RNM return a zeta-optimal split
    w.p. >= 1-delta: m >= 2 b ln b with b = ln(|H|/delta) * 40/(alpha zeta)."""
    if zeta <= 0 or zeta > 1 or alpha <= 0 or not 0 < delta < 1 or h_size < 1:
        raise InvalidParameterError("require 0 < zeta <= 1, alpha > 0, 0 < delta < 1, |H| >= 1")
    b = math.log(h_size / delta) * 40.0 / (alpha * zeta)
    return _two_b_log_b(b)


def noisycounts_sample_bound(zeta: float, alpha: float, delta: float, k: int, h_size: int) -> int:
    """Leaf size that makes NoisyCounts return a zeta-optimal split w.p.
    >= 1-delta: m >= 2 b ln b with b = 60 ln(3k|H|/delta) k|H|/(alpha zeta)."""
    if zeta <= 0 or zeta > 1 or alpha <= 0 or not 0 < delta < 1 or h_size < 1 or k < 1:
        raise InvalidParameterError("require 0 < zeta <= 1, alpha > 0, 0 < delta < 1, k, |H| >= 1")
    b = 60.0 * math.log(3.0 * k * h_size / delta) * k * h_size / (alpha * zeta)
    return _two_b_log_b(b)


# ---------------------------------------------------------------------------
# Boosting recurrence
# ---------------------------------------------------------------------------


def boosting_recurrence(
    error: float, gamma: float, slowdown: float = 4, start: float = 1.0, cap: int = ITERATION_CAP
) -> int:
    """Splits until the potential falls to the target error, iterating
    G <- G - gamma^2 G / (slowdown * t * log2(2/G)) from G_1 = start.

    slowdown 4 is the noiseless rate, 8 the private one (half the per-step
    decrease). The count of the first t with G_t <= error is returned; the
    boundary t=1 covers targets already met by the start value. The count is
    superpolynomial in 1/error and blows up fast for small gamma, hence the
    iteration cap.
    """
    if not 0.0 < error <= 1.0:
        raise InvalidParameterError(f"error must lie in (0, 1], got {error}")
    if not 0.0 < gamma <= 0.5:
        raise InvalidParameterError(f"gamma must lie in (0, 1/2], got {gamma}")
    if slowdown <= 0:
        raise InvalidParameterError(f"slowdown must be positive, got {slowdown}")
    potential = float(start)
    rate = gamma * gamma / slowdown
    log2 = math.log2
    t = 1
    while potential > error:
        potential -= rate * potential / (t * log2(2.0 / potential))
        t += 1
        if t > cap:
            raise CapExceededError(f"recurrence did not reach {error} within {cap} iterations")
    return t


# ---------------------------------------------------------------------------
# Dataset-size requirement
# ---------------------------------------------------------------------------


@dataclass
class DatasetRequirement:
    """The three explicit size terms whose max is the overall requirement."""

    weight_term: float
    leaf_term: float
    split_term: float

    @property
    def required(self) -> int:
        return math.ceil(max(self.weight_term, self.leaf_term, self.split_term))


def theorem_zeta(params: WeakLearningParams) -> float:
    """Split-accuracy target: gamma^2 error / (48 M log2(2/error))."""
    return (
        params.gamma**2
        * params.error
        / (48.0 * params.max_nodes * math.log2(2.0 / params.error))
    )


def dataset_requirement_breakdown(
    params: WeakLearningParams, splitter: str, h_size: int
) -> DatasetRequirement:
    """Dataset size under which the private learner matches the boosting
    guarantee, split into its weight-estimation, leaf-labeling, and
    split-selection terms.

    splitter "rnm" is the single-machine analysis; "noisy-counts" the
    distributed one, whose weight and leaf terms gain a factor k inside and
    outside the logs.
    """
    zeta = theorem_zeta(params)
    m = params.max_nodes
    k = params.entities
    b_min = float(params.schedule.min_budget(m))
    alpha_leaf = params.alpha / 2.0 * b_min
    split_delta = params.delta / (2.0 * (2.0 * m + 1.0))
    if splitter == "rnm":
        weight = math.log(8.0 * m / params.delta) * 2.0 / (zeta * alpha_leaf)
        leaf = math.log(4.0 * (m + 1.0) / params.delta) * 8.0 * (m + 1.0) / (params.error * params.alpha)
        n_split = rnm_sample_bound(zeta, alpha_leaf / 2.0, split_delta, h_size)
    elif splitter == "noisy-counts":
        weight = math.log(8.0 * k * m / params.delta) * 2.0 * k / (zeta * alpha_leaf)
        leaf = (
            math.log(4.0 * k * (m + 1.0) / params.delta)
            * 8.0 * k * (m + 1.0) / (params.error * params.alpha)
        )
        n_split = noisycounts_sample_bound(zeta, alpha_leaf / 2.0, split_delta, k, h_size)
    else:
        raise InvalidParameterError(f"unknown splitter kind {splitter!r}")
    split = (2.0 * m / params.error) * n_split
    return DatasetRequirement(weight_term=weight, leaf_term=leaf, split_term=split)


def theorem2_dataset_requirement(params: WeakLearningParams, splitter: str, h_size: int) -> int:
    return dataset_requirement_breakdown(params, splitter, h_size).required
