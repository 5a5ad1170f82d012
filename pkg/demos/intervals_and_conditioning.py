"""How the time axis is carved up and how hidden states are conditioned.

No training here; this walks the structural machinery: overlapping block
intervals, the three sub-interval classes, conditioning policies, and the
per-query evaluation plans they produce.
"""

from mirnn import intervals as iv
from mirnn.network import ForgetFactorSchedule, evaluation_plan

print("== a 4-block partition of [0, 5] with 1 s overlaps ==")
part = iv.build_partition(0.0, 5.0, 4, 1.0)
for b in range(1, 5):
    lo, hi = part.interval(b)
    print(f"block {b}: [{lo:.2f}, {hi:.2f}]")
print("overlaps:", [f"[{a:.2f}, {b:.2f}]" for a, b in part.mutual_intervals()])

print("\n== sub-interval classes of the second block ==")
part = iv.build_partition(0.0, 5.0, 2, 0.05, near_width=0.05)
print(f"blocks: {list(zip(part.starts, part.ends))}")
for t in (2.52, 2.55, 2.57, 2.62, 4.0):
    print(f"t={t}: {iv.classify(part, 2, t).value}")

print("\n== who owns a query time ==")
for t in (1.0, 2.53, 5.0):
    print(f"t={t}: blocks {iv.owning_blocks(part, t)}")

print("\n== conditioning policies ==")
# temporal alignment: the preceding block runs at the query's own time
ta = iv.ConditioningPolicy.temporal_alignment()
print("TA at t=2.53 ->", iv.conditioning_time(ta, part, 2, 2.53))
# a fixed moment (the usual choice: the first block's final trained moment)
fx = iv.ConditioningPolicy.fixed(part.ends[0])
print("fixed-end at t=4.0 ->", iv.conditioning_time(fx, part, 2, 4.0))
# mixing per class: align in the overlap, freeze elsewhere
mixed = iv.ConditioningPolicy(mutual=iv.TA, near=iv.Fixed(part.ends[0]),
                              remaining=iv.Fixed(part.ends[0]))
for t in (2.53, 2.58, 4.0):
    print(f"mixed at t={t} -> {iv.conditioning_time(mixed, part, 2, t)}")

print("\n== evaluation plans for a 3-block chain ==")
part3 = iv.build_partition(0.0, 6.0, 3, 0.1, near_width=0.05)
sched = ForgetFactorSchedule(1.0, 0.5, 0.5)
plan = evaluation_plan(part3, iv.ConditioningPolicy.preceding_end(), sched,
                       3, (5.0, 5.0))
for link in plan:
    when = "query time" if link.time is None else f"t={link.time:.3f}"
    ff = "no hidden input" if link.ff_in is None else f"ff={link.ff_in}"
    print(f"run block {link.block} at {when} ({ff})")
