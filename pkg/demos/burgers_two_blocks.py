"""Desk-scale run of the flagship benchmark: viscous transport on [0,4]x[0,5].

Two blocks split the time axis with a 0.01 s overlap.  Both predict inside
the overlap (their mismatch is a loss term), and the second block's hidden
state is conditioned on the first block's final trained moment.  A few
thousand epochs give a qualitatively right solution; push EPOCHS to ~12000
to reach grid R^2 above 0.99.
"""

import numpy as np

from mirnn import intervals as iv
from mirnn import metrics as mx
from mirnn import network as net
from mirnn import physics as ph
from mirnn import trainer as tr

EPOCHS = 3000
SEED = 0

problem = ph.burgers_problem()
partition = iv.build_partition(0.0, 5.0, 2, mutual_length=0.01,
                               near_width=0.05)
policy = iv.ConditioningPolicy.preceding_end()
schedule = net.ForgetFactorSchedule(0.5, 0.5, 0.5)

print(f"blocks: {list(zip(partition.starts, partition.ends))}")
print(f"overlap: {partition.mutual_interval(1)}")

config = tr.TrainConfig(
    epochs=EPOCHS, seed=SEED,
    sampling=ph.SamplingSpec(interior=1500, boundary=160, initial=160,
                             mutual=160))
result = tr.train(problem, partition, policy, schedule, config,
                  log_every=max(1, EPOCHS // 10))

print("\nper-term losses at the final epoch:")
for label, value in result.history.records[-1].labeled():
    print(f"  {label:12s} {value:.3e}")

grid = tr.evaluate_grid(result.model, problem, spacing=0.02)
report = mx.grid_report(grid)
print(f"\ngrid R^2      : {report.r2:.5f}")
print(f"grid MSE      : {report.mse:.3e}")
print(f"relative error: {report.relative_err:.3e}")
print(f"per-block MSE : {report.per_block}")

# both blocks cover the overlap; how far apart are they?
gap = grid.mutual_gap(1)
print(f"max overlap disagreement: {gap['u']:.3e}")

# error over time, labeled by block and sub-interval class
print("\nMSE over time (0.5 s slices):")
for s in mx.mse_over_time(grid, 0.5):
    mse = "    gap" if s.mse is None else f"{s.mse:.2e}"
    print(f"  [{s.t_lo:4.1f}, {s.t_hi:4.1f})  {mse}   "
          f"block {s.block} ({s.sub_interval})")

# a profile at one moment inside the overlap: both blocks predict it
xs = np.linspace(0.0, 4.0, 9)
t_m = 0.5 * sum(partition.mutual_interval(1))
preds = net.predict_batch(result.model, {"x": xs, "t": np.full(9, t_m)})
exact = problem.exact({"x": xs, "t": np.full(9, t_m)})["u"]
print(f"\nprofile at t={t_m:.3f} (inside the overlap):")
print("  x      block 1    block 2    exact")
for i, x in enumerate(xs):
    print(f"  {x:4.1f}  {preds[1]['u'][i]:9.5f}  {preds[2]['u'][i]:9.5f}"
          f"  {exact[i]:9.5f}")
