"""Time-domain partitioning into overlapping block intervals.

A :class:`TimePartition` assigns each recurrent block a closed time interval.
Consecutive intervals overlap by the mutual length; the overlap is where both
blocks predict and their mismatch is penalized.  Inside a block's interval,
times are classified into three sub-interval classes relative to the overlap
with the *previous* block:

* ``MUTUAL`` - inside the overlap itself,
* ``NEAR`` - within ``near_width`` past the overlap's end,
* ``REMAINING`` - everything else.

The first block has no predecessor, so its whole interval is ``REMAINING``.
Conditioning policies pick, per class, the moment at which the preceding
block is evaluated to produce the hidden state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import DomainError, PartitionError

__all__ = [
    "SubIntervalClass",
    "TimePartition",
    "build_partition",
    "explicit_partition",
    "classify",
    "classify_window",
    "class_windows",
    "owning_blocks",
    "TemporalAlignment",
    "Fixed",
    "PrecedingEnd",
    "ConditioningPolicy",
    "conditioning_time",
]


class SubIntervalClass(enum.Enum):
    MUTUAL = "mutual"
    NEAR = "near"
    REMAINING = "remaining"


@dataclass(frozen=True)
class TimePartition:
    """Ordered closed block intervals ``[starts[i], ends[i]]``, 1-based blocks."""

    starts: tuple
    ends: tuple
    near_width: float = 0.05

    def __post_init__(self):
        if len(self.starts) != len(self.ends) or not self.starts:
            raise PartitionError("need one (start, end) pair per block")
        if self.near_width < 0:
            raise PartitionError("near_width must be >= 0")
        for s, e in zip(self.starts, self.ends):
            if not e > s:
                raise PartitionError(f"empty block interval [{s}, {e}]")
        for i in range(len(self.starts) - 1):
            if not self.starts[i + 1] > self.starts[i]:
                raise PartitionError("block start times must strictly increase")
            if self.starts[i + 1] > self.ends[i]:
                raise PartitionError(
                    f"gap between block {i + 1} and {i + 2}: "
                    f"{self.ends[i]} < {self.starts[i + 1]}"
                )
            if self.ends[i] >= self.ends[i + 1]:
                raise PartitionError("block end times must strictly increase")

    @property
    def n_blocks(self):
        return len(self.starts)

    @property
    def t_start(self):
        return self.starts[0]

    @property
    def t_end(self):
        return self.ends[-1]

    def interval(self, block: int):
        if not 1 <= block <= self.n_blocks:
            raise PartitionError(f"block {block} out of range 1..{self.n_blocks}")
        return self.starts[block - 1], self.ends[block - 1]

    def mutual_interval(self, pair: int):
        """Overlap of blocks ``pair`` and ``pair + 1`` (may have zero width)."""
        if not 1 <= pair <= self.n_blocks - 1:
            raise PartitionError(f"pair {pair} out of range 1..{self.n_blocks - 1}")
        return self.starts[pair], self.ends[pair - 1]

    def mutual_intervals(self):
        return [self.mutual_interval(i) for i in range(1, self.n_blocks)]


def build_partition(t_start, t_end, n_blocks, mutual_length, near_width=0.05):
    """Equal base division of ``[t_start, t_end]``, each non-final block's end
    then extended by ``mutual_length`` into its successor."""
    if n_blocks < 1:
        raise PartitionError("n_blocks must be >= 1")
    if not t_end > t_start:
        raise PartitionError(f"empty time range [{t_start}, {t_end}]")
    base = (t_end - t_start) / n_blocks
    if mutual_length < 0:
        raise PartitionError("mutual_length must be >= 0")
    if n_blocks > 1 and mutual_length >= base:
        raise PartitionError(
            f"mutual_length {mutual_length} >= base block length {base}: "
            "overlap swallows whole blocks"
        )
    starts, ends = [], []
    for i in range(n_blocks):
        starts.append(t_start + i * base)
        if i == n_blocks - 1:
            ends.append(t_end)
        else:
            ends.append(t_start + (i + 1) * base + mutual_length)
    return TimePartition(tuple(starts), tuple(ends), near_width)


def explicit_partition(intervals, near_width=0.05):
    """Partition from an explicit list of (start, end) pairs (unequal lengths ok)."""
    starts = tuple(float(s) for s, _ in intervals)
    ends = tuple(float(e) for _, e in intervals)
    return TimePartition(starts, ends, near_width)


def class_windows(partition: TimePartition, block: int):
    """The sub-interval windows present in a block, as ``{cls: (lo, hi)}``.

    Windows partition the block's interval: MUTUAL is closed, NEAR and
    REMAINING own their upper endpoints only (except REMAINING of block 1,
    which is the whole closed interval).
    """
    lo, hi = partition.interval(block)
    if block == 1:
        return {SubIntervalClass.REMAINING: (lo, hi)}
    prev_end = partition.ends[block - 2]
    windows = {}
    cursor = lo
    if prev_end > lo:
        windows[SubIntervalClass.MUTUAL] = (lo, min(prev_end, hi))
        cursor = min(prev_end, hi)
    if partition.near_width > 0 and cursor < hi:
        near_hi = min(cursor + partition.near_width, hi)
        windows[SubIntervalClass.NEAR] = (cursor, near_hi)
        cursor = near_hi
    if cursor < hi:
        windows[SubIntervalClass.REMAINING] = (cursor, hi)
    return windows


def classify(partition: TimePartition, block: int, t: float) -> SubIntervalClass:
    """Class of time ``t`` inside ``block``'s interval.

    Boundary convention: a point on the mutual interval's upper end is
    MUTUAL; a point exactly ``near_width`` past it is NEAR.
    """
    lo, hi = partition.interval(block)
    if not lo <= t <= hi:
        raise DomainError(f"t={t} outside block {block} interval [{lo}, {hi}]")
    windows = class_windows(partition, block)
    mut = windows.get(SubIntervalClass.MUTUAL)
    if mut is not None and t <= mut[1]:
        return SubIntervalClass.MUTUAL
    near = windows.get(SubIntervalClass.NEAR)
    if near is not None and t <= near[1]:
        return SubIntervalClass.NEAR
    if SubIntervalClass.REMAINING not in windows:
        # Block fully covered by mutual+near; upper rounding lands here.
        return SubIntervalClass.NEAR if near is not None else SubIntervalClass.MUTUAL
    return SubIntervalClass.REMAINING


def classify_window(partition: TimePartition, block: int, lo: float, hi: float):
    """Class containing the window ``(lo, hi]``, clamped into the block.

    Conditioning moments can land outside the block's trained interval
    (temporal alignment past the mutual region, or an out-of-range fixed
    time); those are clamped to the nearest endpoint for classification
    only.  A window straddling two classes has no single conditioning rule
    and is rejected.  Classes own their upper endpoints, so the window is
    judged by its midpoint and upper end (the lower end may sit on the
    previous class's closing boundary).
    """
    b_lo, b_hi = partition.interval(block)
    lo_c = min(max(lo, b_lo), b_hi)
    hi_c = min(max(hi, b_lo), b_hi)
    cls = classify(partition, block, hi_c)
    w_lo, _ = class_windows(partition, block)[cls]
    if lo_c < w_lo:
        raise PartitionError(
            f"window [{lo}, {hi}] spans multiple sub-interval classes "
            f"of block {block}"
        )
    return cls


def owning_blocks(partition: TimePartition, t: float):
    """All blocks whose closed interval contains ``t`` (1 or 2 for sane overlaps)."""
    if not partition.t_start <= t <= partition.t_end:
        raise DomainError(
            f"t={t} outside time domain [{partition.t_start}, {partition.t_end}]"
        )
    return [
        i + 1
        for i, (s, e) in enumerate(zip(partition.starts, partition.ends))
        if s <= t <= e
    ]


# ---------------------------------------------------------------------------
# Conditioning policies
# ---------------------------------------------------------------------------

class TemporalAlignment:
    """Evaluate the preceding block at the same time as the current query."""

    def __repr__(self):
        return "TemporalAlignment"


class PrecedingEnd:
    """Evaluate the preceding block at the end of its own interval.

    This is the multi-block generalization of conditioning on 'the last
    moment of the previous block': the fixed time resolves per block, so
    chains deeper than two blocks each condition at their own interval end.
    """

    def __repr__(self):
        return "PrecedingEnd"


@dataclass(frozen=True)
class Fixed:
    """Evaluate the preceding block at one fixed time (may lie outside its
    trained interval; legal but known to degrade accuracy)."""

    time: float


TA = TemporalAlignment()
PRECEDING_END = PrecedingEnd()


@dataclass(frozen=True)
class ConditioningPolicy:
    """Conditioning rule per sub-interval class of the querying block."""

    mutual: object = TA
    near: object = TA
    remaining: object = TA

    def rule_for(self, cls: SubIntervalClass):
        return {
            SubIntervalClass.MUTUAL: self.mutual,
            SubIntervalClass.NEAR: self.near,
            SubIntervalClass.REMAINING: self.remaining,
        }[cls]

    @staticmethod
    def temporal_alignment():
        return ConditioningPolicy(TA, TA, TA)

    @staticmethod
    def fixed(time: float):
        return ConditioningPolicy(Fixed(time), Fixed(time), Fixed(time))

    @staticmethod
    def preceding_end():
        return ConditioningPolicy(PRECEDING_END, PRECEDING_END, PRECEDING_END)


def conditioning_time(policy: ConditioningPolicy, partition: TimePartition,
                      block: int, t: float) -> float:
    """Time at which block ``block - 1`` is evaluated for a query at ``t``."""
    if block < 2:
        raise PartitionError("block 1 has no preceding block to condition on")
    cls = classify_window(partition, block, t, t)
    rule = policy.rule_for(cls)
    if isinstance(rule, TemporalAlignment):
        return t
    if isinstance(rule, Fixed):
        return rule.time
    if isinstance(rule, PrecedingEnd):
        return partition.ends[block - 2]
    raise PartitionError(f"unknown conditioning rule {rule!r}")
