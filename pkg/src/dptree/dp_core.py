"""Core differential privacy machinery: Laplace sampling, the Laplace
mechanism, Report Noisy Max, tail bounds, and a composition-aware budget
ledger.

All mechanisms are pure given an explicit :class:`RandomSource` and charge
nothing themselves; callers record charges against a :class:`PrivacyLedger`.
"""

from __future__ import annotations

import hashlib
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

GLOBAL_SCOPE = None  # entity id used for single-machine (coordinator-held) data


class InvalidParameterError(ValueError):
    """A mechanism or operation received an out-of-range parameter."""


class BudgetExceededError(RuntimeError):
    """A strict-mode ledger charge pushed the effective cost over budget."""

    def __init__(self, message, ledger=None):
        super().__init__(message)
        self.ledger = ledger


class DegenerateLeafError(RuntimeError):
    """A leaf is too small for the sensitivity bound to be valid (< 3 rows)."""


class ProtocolError(RuntimeError):
    """An entity failed to answer a coordinator query; no partial aggregation."""


# ---------------------------------------------------------------------------
# Zero-noise debug mode
# ---------------------------------------------------------------------------

_zero_noise = threading.local()


def zero_noise_enabled() -> bool:
    return getattr(_zero_noise, "on", False)


def set_zero_noise(enabled: bool) -> None:
    """Globally switch every mechanism to return its exact value.

    Budget charges are unaffected, so ledger behaviour is identical to a
    noised run. Intended for exact-equivalence tests against the non-private
    baseline.
    """
    _zero_noise.on = bool(enabled)


@contextmanager
def zero_noise(enabled: bool = True):
    previous = zero_noise_enabled()
    set_zero_noise(enabled)
    try:
        yield
    finally:
        set_zero_noise(previous)


# ---------------------------------------------------------------------------
# Random source
# ---------------------------------------------------------------------------


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class RandomSource:
    """A seeded noise stream.

    Identical (seed, stream) pairs reproduce identical draw sequences;
    distinct streams are statistically independent. Substreams are derived
    deterministically from hashable labels, one per run x entity x purpose.
    """

    def __init__(self, seed: int, stream: tuple = ()):
        self.seed = int(seed)
        self.stream = tuple(stream)
        words = [self.seed] + [_label_to_int(part) for part in self.stream]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))

    def substream(self, *labels) -> "RandomSource":
        return RandomSource(self.seed, self.stream + labels)

    @property
    def np(self) -> np.random.Generator:
        """The underlying generator, for distribution draws beyond uniform."""
        return self._gen

    def uniform(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n, size=None, replace=True):
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n):
        return self._gen.permutation(n)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, stream={self.stream!r})"


# ---------------------------------------------------------------------------
# Mechanisms
# ---------------------------------------------------------------------------


def _check_scale(scale: float) -> float:
    scale = float(scale)
    if not math.isfinite(scale) or scale <= 0.0:
        raise InvalidParameterError(f"Laplace scale must be positive and finite, got {scale}")
    return scale


def sample_laplace(scale: float, rng: RandomSource, size=None):
    """Draw from Lap(0, scale) by inverting the CDF on a uniform draw.

    Inverse-CDF sampling keeps the draw count deterministic per stream (no
    rejection loops). Under zero-noise mode the draw is skipped entirely.
    """
    scale = _check_scale(scale)
    if zero_noise_enabled():
        return 0.0 if size is None else np.zeros(size)
    u = rng.uniform(size) - 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def laplace_mechanism(true_value: float, sensitivity: float, budget: float, rng: RandomSource) -> float:
    """Release true_value + Lap(sensitivity / budget).

    Charges nothing itself; the caller records budget spent in its ledger.
    """
    if sensitivity <= 0:
        raise InvalidParameterError(f"sensitivity must be positive, got {sensitivity}")
    if budget <= 0:
        raise InvalidParameterError(f"budget must be positive, got {budget}")
    return float(true_value) + float(sample_laplace(float(sensitivity) / float(budget), rng))


def laplace_tail_threshold(scale: float, delta: float, k: int = 1) -> float:
    """Magnitude that k i.i.d. Lap(scale) draws all stay below w.p. >= 1-delta.

    For k=1 the bound is tight: Pr(|Y| >= ln(1/delta) * scale) = delta.
    """
    scale = _check_scale(scale)
    if not (0.0 < delta < 1.0):
        raise InvalidParameterError(f"delta must lie in (0, 1), got {delta}")
    if k < 1:
        raise InvalidParameterError(f"k must be >= 1, got {k}")
    return math.log(k / delta) * scale


def report_noisy_max(scores, sensitivity: float, budget: float, rng: RandomSource):
    """Report Noisy Max: add Lap(2 * sensitivity / budget) to every score and
    release only the argmax index and that one noised score.

    Ties break to the lowest index (reachable only in zero-noise mode).
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.size == 0:
        raise InvalidParameterError("scores must be a nonempty 1-d sequence")
    if sensitivity <= 0:
        raise InvalidParameterError(f"sensitivity must be positive, got {sensitivity}")
    if budget <= 0:
        raise InvalidParameterError(f"budget must be positive, got {budget}")
    noisy = scores + sample_laplace(2.0 * float(sensitivity) / float(budget), rng, size=scores.size)
    index = int(np.argmax(noisy))
    return index, float(noisy[index])


# ---------------------------------------------------------------------------
# Privacy ledger
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scope:
    """Identifies what a charge was spent on.

    entity: data-holder id, or GLOBAL_SCOPE (None) for single-machine data.
    purpose: "split", "weight", or "label".
    depth: tree depth the charge is budgeted under (split/weight charges).
    leaf: leaf node id; leaves at one depth are disjoint, as are all leaves
          at labeling time, which is what parallel composition keys on.
    """

    entity: int | None
    purpose: str
    depth: int | None = None
    leaf: int | None = None


@dataclass
class LedgerEntry:
    scope: Scope
    budget: Fraction


class PrivacyLedger:
    """Ledger of (scope, budget) charges enforcing composition rules.

    Effective cost follows the standard theorems: charges on overlapping
    scopes add (sequential composition), charges on disjoint data take the
    max (parallel composition). Disjointness is structural: distinct entities
    hold disjoint shards, leaves at one depth partition the data, and leaves
    partition the data at labeling time. Budgets are tracked as exact
    rationals so the end-of-run audit `effective_cost <= alpha` is exact.

    Audit mode (default) records everything and verifies post hoc; strict
    mode raises BudgetExceededError on the charge that crosses the budget.
    """

    def __init__(self, alpha, strict: bool = False):
        if alpha <= 0:
            raise InvalidParameterError(f"total budget alpha must be positive, got {alpha}")
        self.alpha = Fraction(alpha)
        self.strict = strict
        self.entries: list[LedgerEntry] = []
        self._lock = threading.Lock()

    def charge(self, scope: Scope, budget) -> None:
        budget = Fraction(budget)
        if budget <= 0:
            raise InvalidParameterError(f"charged budget must be positive, got {budget}")
        with self._lock:
            self.entries.append(LedgerEntry(scope, budget))
            if self.strict and self.effective_cost() > self.alpha:
                raise BudgetExceededError(
                    f"effective cost {float(self.effective_cost()):.6g} exceeds "
                    f"alpha={float(self.alpha):.6g}",
                    ledger=self,
                )

    def effective_cost(self) -> Fraction:
        """Total privacy cost after applying composition rules."""
        by_entity: dict[int | None, list[LedgerEntry]] = {}
        for entry in self.entries:
            by_entity.setdefault(entry.scope.entity, []).append(entry)

        def entity_cost(entity_entries) -> Fraction:
            # Construction charges: per depth, identified leaves are disjoint,
            # so sum within a leaf then max across leaves; charges without a
            # leaf id cannot be proven disjoint and add on top. Depths overlap
            # (a depth-d leaf contains its descendants), so depths sum.
            per_depth_leaf: dict[int | None, dict] = {}
            per_depth_anon: dict[int | None, Fraction] = {}
            label_per_leaf: dict = {}
            for entry in entity_entries:
                if entry.scope.purpose == "label":
                    key = entry.scope.leaf
                    label_per_leaf[key] = label_per_leaf.get(key, Fraction(0)) + entry.budget
                elif entry.scope.leaf is None:
                    d = entry.scope.depth
                    per_depth_anon[d] = per_depth_anon.get(d, Fraction(0)) + entry.budget
                else:
                    leaves = per_depth_leaf.setdefault(entry.scope.depth, {})
                    key = entry.scope.leaf
                    leaves[key] = leaves.get(key, Fraction(0)) + entry.budget
            cost = Fraction(0)
            for depth in set(per_depth_leaf) | set(per_depth_anon):
                leaves = per_depth_leaf.get(depth, {})
                cost += max(leaves.values(), default=Fraction(0))
                cost += per_depth_anon.get(depth, Fraction(0))
            if label_per_leaf:
                cost += max(label_per_leaf.values())
            return cost

        global_cost = entity_cost(by_entity.pop(GLOBAL_SCOPE, []))
        entity_costs = [entity_cost(entries) for entries in by_entity.values()]
        # Entities hold disjoint shards: parallel across entities. Global
        # charges touch all data and compose sequentially with everything.
        return global_cost + (max(entity_costs) if entity_costs else Fraction(0))

    def within_budget(self) -> bool:
        return self.effective_cost() <= self.alpha

    def report(self) -> dict:
        return {
            "alpha": float(self.alpha),
            "effective_cost": float(self.effective_cost()),
            "within_budget": self.within_budget(),
            "entries": len(self.entries),
        }
