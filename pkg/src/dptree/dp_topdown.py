"""The differentially private top-down learner: budget schedules, the private
greedy loop over a max-priority queue, noisy weight estimation, and private
leaf labeling.

The loop mirrors the non-private baseline exactly; under zero-noise mode its
output tree is node-identical to `topdown_nonprivate` run with the same node
cap, gain threshold, and weight filter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dp_core import (
    GLOBAL_SCOPE,
    DegenerateLeafError,
    InvalidParameterError,
    PrivacyLedger,
    RandomSource,
    Scope,
    report_noisy_max,
    sample_laplace,
)
from .split_strategies import (
    EntityPool,
    LeafRef,
    distributed_label_counts,
    distributed_weight_estimate,
)
from .tree_learning import Criterion, DecisionTree, LabeledDataset, MaxQueue


# ---------------------------------------------------------------------------
# Budget schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformSchedule:
    """B(d) = 1/M for depths 1..M; the M depths share the budget equally."""

    max_nodes: int

    name = "uniform"

    def at_depth(self, depth: int) -> Fraction:
        if not 1 <= depth <= self.max_nodes:
            raise InvalidParameterError(
                f"depth {depth} outside [1, {self.max_nodes}] for uniform budgeting"
            )
        return Fraction(1, self.max_nodes)

    def min_budget(self, max_nodes: int) -> Fraction:
        return Fraction(1, self.max_nodes)

    def total(self, max_nodes: int) -> Fraction:
        return Fraction(min(max_nodes, self.max_nodes), self.max_nodes)


@dataclass(frozen=True)
class DecaySchedule:
    """B(d) = 2^-d: early splits, which matter most, get the larger share."""

    name = "decay"

    def at_depth(self, depth: int) -> Fraction:
        if depth < 1:
            raise InvalidParameterError(f"depth must be >= 1, got {depth}")
        return Fraction(1, 2**depth)

    def min_budget(self, max_nodes: int) -> Fraction:
        return Fraction(1, 2**max_nodes)

    def total(self, max_nodes: int) -> Fraction:
        return 1 - Fraction(1, 2**max_nodes)


def schedule_from_name(name: str, max_nodes: int):
    if name == "uniform":
        return UniformSchedule(max_nodes)
    if name == "decay":
        return DecaySchedule()
    raise InvalidParameterError(f"unknown budget schedule {name!r}")


def budget_at_depth(schedule, depth: int) -> Fraction:
    return schedule.at_depth(depth)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class DPTopDownConfig:
    """Inputs of the private learner.

    leaf_privacy_fraction (LPF) generalizes the half/half budget division:
    LPF * alpha labels leaves, (1 - LPF) * alpha funds splits; LPF = 0.5
    reproduces the canonical division verbatim.
    """

    alpha: float
    max_nodes: int
    error: float = 0.1
    delta: float = 0.1
    leaf_privacy_fraction: float = 0.5
    schedule: object = None
    criterion: Criterion = Criterion.ENTROPY
    min_gain: float = 0.01
    strict_ledger: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise InvalidParameterError(f"alpha must be positive, got {self.alpha}")
        if self.max_nodes < 1:
            raise InvalidParameterError(f"max_nodes must be >= 1, got {self.max_nodes}")
        if not 0.0 < self.error <= 1.0:
            raise InvalidParameterError(f"error must lie in (0, 1], got {self.error}")
        if not 0.0 < self.delta <= 1.0:
            raise InvalidParameterError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0.0 < self.leaf_privacy_fraction < 1.0:
            raise InvalidParameterError(
                f"leaf_privacy_fraction must lie in (0, 1), got {self.leaf_privacy_fraction}"
            )
        if self.schedule is None:
            self.schedule = DecaySchedule()

    @property
    def split_budget(self) -> Fraction:
        return (1 - Fraction(self.leaf_privacy_fraction)) * Fraction(self.alpha)

    @property
    def leaf_budget(self) -> Fraction:
        return Fraction(self.leaf_privacy_fraction) * Fraction(self.alpha)

    @property
    def split_delta(self) -> float:
        return self.delta / (2 * (2 * self.max_nodes + 1))


@dataclass
class RunStats:
    """Per-run diagnostics recorded by dp_topdown."""

    depth: int = 0
    internal_nodes: int = 0
    iterations: int = 0
    popped_priorities: list = field(default_factory=list)
    ledger_effective_cost: float = 0.0
    pushed_weights: list = field(default_factory=list)
    degenerate_splits: int = 0
    random_local_candidates: int = 0
    within_budget: bool = True

    def to_json(self) -> str:
        return json.dumps(
            {
                "depth": self.depth,
                "internal_nodes": self.internal_nodes,
                "iterations": self.iterations,
                "popped_priorities": self.popped_priorities,
                "ledger_effective_cost": self.ledger_effective_cost,
            },
            sort_keys=True,
        )


# ---------------------------------------------------------------------------
# Weight estimation and leaf labeling
# ---------------------------------------------------------------------------


def estimate_weight(
    leaf_count: int,
    total_n: int,
    alpha_leaf,
    rng: RandomSource,
    ledger: PrivacyLedger,
    scope: Scope,
) -> float:
    """Noisy leaf weight |S_leaf|/|S| + Lap(2/(|S| alpha_leaf)).

    Charges alpha_leaf/2 (count sensitivity 1 at half the leaf budget). The
    estimate may fall outside [0, 1]; it feeds only the weight filter and the
    queue priority and is never clamped.
    """
    if total_n <= 0:
        raise InvalidParameterError("total dataset size must be positive")
    alpha_leaf = Fraction(alpha_leaf)
    if alpha_leaf <= 0:
        raise InvalidParameterError("alpha_leaf must be positive")
    noise = sample_laplace(float(2 / (alpha_leaf * total_n)), rng)
    ledger.charge(scope, alpha_leaf / 2)
    return leaf_count / total_n + float(noise)


def leaf_paths(tree: DecisionTree) -> dict:
    """(split, side) path from the root for every leaf, keyed by node id."""
    paths = {}
    stack = [(tree.root, ())]
    while stack:
        node, path = stack.pop()
        if node.is_leaf:
            paths[node.node_id] = path
        else:
            stack.append((node.left, path + ((node.split, 0),)))
            stack.append((node.right, path + ((node.split, 1),)))
    return paths


def label_leaves(
    tree: DecisionTree,
    source,
    leaf_budget,
    rng: RandomSource,
    ledger: PrivacyLedger,
    members: dict | None = None,
) -> DecisionTree:
    """Privately label every leaf with (noisy) majority vote.

    Single machine: RNM over the per-label counts with the full leaf budget;
    leaves partition the data, so the charges compose in parallel.
    Distributed: each entity publishes noisy per-label counts, the coordinator
    sums and takes the argmax. Ties and empty leaves resolve to the lowest
    label index.
    """
    leaf_budget = Fraction(leaf_budget)
    if leaf_budget <= 0:
        raise InvalidParameterError("leaf budget must be positive")
    if isinstance(source, EntityPool):
        paths = leaf_paths(tree)
        for leaf in tree.leaves():
            totals = distributed_label_counts(
                source, paths[leaf.node_id], leaf_budget, ledger, leaf_id=leaf.node_id
            )
            leaf.label = int(np.argmax(totals))
        return tree

    dataset: LabeledDataset = source
    if members is None:
        leaf_ids = tree.assign(dataset.features)
        members = {
            leaf.node_id: np.flatnonzero(leaf_ids == leaf.node_id) for leaf in tree.leaves()
        }
    for leaf in tree.leaves():
        counts = dataset.label_counts(members.get(leaf.node_id, np.array([], dtype=int)))
        index, _ = report_noisy_max(counts, 1.0, float(leaf_budget), rng)
        ledger.charge(Scope(GLOBAL_SCOPE, "label", leaf=leaf.node_id), leaf_budget)
        leaf.label = index
    return tree


# ---------------------------------------------------------------------------
# The private learner
# ---------------------------------------------------------------------------


def dp_topdown(source, config: DPTopDownConfig, splitter, rng: RandomSource):
    """Private top-down tree learning.

    source is either a LabeledDataset (single machine) or an EntityPool
    (distributed); the splitter must match. Returns (tree, ledger, stats).
    An exhausted queue before max_nodes splits is normal termination.
    """
    distributed = isinstance(source, EntityPool)
    if getattr(splitter, "distributed", distributed) != distributed:
        raise InvalidParameterError(
            "splitter does not match the data source shape (single vs distributed)"
        )
    total_n = source.total_size if distributed else source.n
    if total_n <= 0:
        raise InvalidParameterError("cannot learn from an empty data source")

    ledger = PrivacyLedger(config.alpha, strict=config.strict_ledger)
    stats = RunStats()
    tree = DecisionTree()
    queue = MaxQueue()
    members: dict = {}
    weight_rng = rng.substream("weight")
    label_rng = rng.substream("label")
    split_rng = rng.substream("split")

    def make_ref(node, indices, path) -> LeafRef:
        if distributed:
            return LeafRef(node.node_id, node.depth, max(node.depth, 1), path=path)
        members[node.node_id] = indices
        return LeafRef(node.node_id, node.depth, max(node.depth, 1), indices=indices, path=path)

    def noisy_weight(ref: LeafRef, alpha_leaf) -> float:
        if distributed:
            return distributed_weight_estimate(
                source, ref.path, alpha_leaf, total_n, ledger,
                depth=ref.budget_depth, leaf_id=ref.leaf_id,
            )
        scope = Scope(GLOBAL_SCOPE, "weight", depth=ref.budget_depth, leaf=ref.leaf_id)
        return estimate_weight(ref.indices.size, total_n, alpha_leaf, weight_rng, ledger, scope)

    # Root: PrivateSplit with the full depth-1 allowance and no weight
    # estimate; its children at depth 1 are funded by the same B(1).
    root_ref = make_ref(tree.root, None if distributed else np.arange(total_n), ())
    root_alpha = config.split_budget * config.schedule.at_depth(1)
    try:
        best_split, priority = splitter.split(root_ref, root_alpha, config.split_delta, split_rng, ledger)
        if priority > config.min_gain:
            queue.push(priority, (tree.root, root_ref, best_split))
            stats.pushed_weights.append(1.0)
    except DegenerateLeafError:
        stats.degenerate_splits += 1

    weight_floor = config.error / config.max_nodes
    for _ in range(config.max_nodes):
        if not len(queue):
            break
        priority, (leaf_node, ref, chosen) = queue.pop()
        stats.iterations += 1
        stats.popped_priorities.append(priority)

        left, right = tree.split_leaf(leaf_node, chosen)
        if distributed:
            child_rows = (None, None)
        else:
            rows = members.pop(ref.leaf_id)
            sides = chosen.evaluate(source.features, rows)
            child_rows = (rows[sides == 0], rows[sides == 1])

        for side, child in ((0, left), (1, right)):
            child_ref = make_ref(child, child_rows[side], ref.path + ((chosen, side),))
            alpha_leaf = config.split_budget * config.schedule.at_depth(child_ref.budget_depth)
            weight = noisy_weight(child_ref, alpha_leaf)
            try:
                child_split, child_gain = splitter.split(
                    child_ref, alpha_leaf / 2, config.split_delta, split_rng, ledger
                )
            except DegenerateLeafError:
                stats.degenerate_splits += 1
                continue
            if weight >= weight_floor and child_gain > config.min_gain:
                queue.push(weight * child_gain, (child, child_ref, child_split))
                stats.pushed_weights.append(weight)

    label_leaves(tree, source, config.leaf_budget, label_rng, ledger,
                 members=members if not distributed else None)

    stats.depth = tree.depth
    stats.internal_nodes = tree.internal_count
    stats.random_local_candidates = getattr(splitter, "random_local_candidates", 0)
    stats.ledger_effective_cost = float(ledger.effective_cost())
    stats.within_budget = ledger.within_budget()
    assert stats.depth <= stats.internal_nodes <= config.max_nodes
    return tree, ledger, stats
