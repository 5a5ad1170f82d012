import numpy as np
import pytest

from mirnn import intervals as iv
from mirnn.errors import DomainError, PartitionError


def test_four_block_partition_with_one_second_overlap():
    part = iv.build_partition(0.0, 5.0, 4, 1.0)
    assert part.starts == (0.0, 1.25, 2.5, 3.75)
    assert part.ends == (2.25, 3.5, 4.75, 5.0)


def test_two_block_partition_mutual_interval():
    part = iv.build_partition(0.0, 5.0, 2, 0.1)
    assert part.starts == (0.0, 2.5)
    assert part.ends == (2.6, 5.0)
    assert part.mutual_interval(1) == (2.5, 2.6)


def test_single_block_no_mutuals():
    part = iv.build_partition(0.0, 5.0, 1, 0.0)
    assert part.interval(1) == (0.0, 5.0)
    assert part.mutual_intervals() == []


def test_overlap_swallowing_blocks_rejected():
    with pytest.raises(PartitionError):
        iv.build_partition(0.0, 5.0, 4, 1.25)
    with pytest.raises(PartitionError):
        iv.build_partition(0.0, 5.0, 4, 2.0)


def test_explicit_partition_unequal_lengths():
    part = iv.explicit_partition([(0.0, 1.5), (1.2, 5.0)])
    assert part.n_blocks == 2
    assert part.mutual_interval(1) == (1.2, 1.5)


def test_explicit_partition_gap_rejected():
    with pytest.raises(PartitionError):
        iv.explicit_partition([(0.0, 2.0), (2.5, 5.0)])


def figure5_partition():
    # blocks [0, 2.55] and [2.5, 5.0], near band 0.05 past the overlap
    return iv.build_partition(0.0, 5.0, 2, 0.05, near_width=0.05)


def test_classify_figure5_cases():
    part = figure5_partition()
    assert iv.classify(part, 2, 2.52) is iv.SubIntervalClass.MUTUAL
    assert iv.classify(part, 2, 2.57) is iv.SubIntervalClass.NEAR
    assert iv.classify(part, 2, 4.0) is iv.SubIntervalClass.REMAINING


def test_classify_boundary_conventions():
    part = figure5_partition()
    assert iv.classify(part, 2, 2.55) is iv.SubIntervalClass.MUTUAL
    assert iv.classify(part, 2, 2.5) is iv.SubIntervalClass.MUTUAL
    assert iv.classify(part, 2, 5.0) is iv.SubIntervalClass.REMAINING
    # block 1 has no predecessor: everything is remaining-independent
    assert iv.classify(part, 1, 0.0) is iv.SubIntervalClass.REMAINING
    assert iv.classify(part, 1, 2.52) is iv.SubIntervalClass.REMAINING


def test_classify_outside_block_raises():
    part = figure5_partition()
    with pytest.raises(DomainError):
        iv.classify(part, 1, 3.0)
    with pytest.raises(DomainError):
        iv.classify(part, 2, 1.0)


def test_classes_partition_block_interval():
    part = figure5_partition()
    windows = iv.class_windows(part, 2)
    lo, hi = part.interval(2)
    # windows tile the interval: consecutive, no gaps, full coverage
    ordered = list(windows.values())
    assert ordered[0][0] == lo
    assert ordered[-1][1] == hi
    for (a, b), (c, d) in zip(ordered, ordered[1:]):
        assert b == c
    # classification agrees with the windows on a dense sweep
    for t in np.linspace(lo, hi, 400):
        cls = iv.classify(part, 2, float(t))
        w = windows[cls]
        assert w[0] <= t <= w[1]


def test_owning_blocks():
    part = iv.build_partition(0.0, 5.0, 2, 0.1)
    assert iv.owning_blocks(part, 1.0) == [1]
    assert iv.owning_blocks(part, 2.53) == [1, 2]
    assert iv.owning_blocks(part, 5.0) == [2]
    with pytest.raises(DomainError):
        iv.owning_blocks(part, 5.5)


def test_coverage_property():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        base = 5.0 / n
        m = float(rng.uniform(0.0, 0.9 * base)) if n > 1 else 0.0
        part = iv.build_partition(0.0, 5.0, n, m)
        for t in rng.uniform(0.0, 5.0, size=50):
            owners = iv.owning_blocks(part, float(t))
            assert 1 <= len(owners) <= 2
        assert len(part.mutual_intervals()) == n - 1


def test_conditioning_time_rules():
    part = figure5_partition()
    fixed = iv.ConditioningPolicy.fixed(2.55)
    assert iv.conditioning_time(fixed, part, 2, 4.0) == 2.55
    ta = iv.ConditioningPolicy.temporal_alignment()
    assert iv.conditioning_time(ta, part, 2, 2.53) == 2.53
    # fixed time beyond block 1's interval is returned as-is (legal, known bad)
    past = iv.ConditioningPolicy.fixed(2.7)
    assert iv.conditioning_time(past, part, 2, 0.9 + 2.5) == 2.7
    pe = iv.ConditioningPolicy.preceding_end()
    assert iv.conditioning_time(pe, part, 2, 4.0) == part.ends[0]


def test_conditioning_time_block_one_rejected():
    part = figure5_partition()
    with pytest.raises(PartitionError):
        iv.conditioning_time(iv.ConditioningPolicy.temporal_alignment(),
                             part, 1, 1.0)


def test_per_class_policy_selection():
    part = figure5_partition()
    policy = iv.ConditioningPolicy(mutual=iv.TA, near=iv.Fixed(2.55),
                                   remaining=iv.Fixed(0.0))
    assert iv.conditioning_time(policy, part, 2, 2.53) == 2.53
    assert iv.conditioning_time(policy, part, 2, 2.58) == 2.55
    assert iv.conditioning_time(policy, part, 2, 4.2) == 0.0


def test_classify_window_straddle_rejected():
    part = figure5_partition()
    with pytest.raises(PartitionError):
        iv.classify_window(part, 2, 2.52, 2.9)
    assert iv.classify_window(part, 2, 2.56, 2.59) is iv.SubIntervalClass.NEAR


def test_zero_mutual_partition_classes():
    part = iv.build_partition(0.0, 4.0, 2, 0.0, near_width=0.1)
    windows = iv.class_windows(part, 2)
    assert iv.SubIntervalClass.MUTUAL not in windows
    assert iv.classify(part, 2, 2.05) is iv.SubIntervalClass.NEAR
    assert iv.classify(part, 2, 3.0) is iv.SubIntervalClass.REMAINING
