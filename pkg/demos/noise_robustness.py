"""Does a corrupted hand-off poison downstream blocks?

Zero-mean Gaussian noise is added to the earlier block's predictions inside
the overlap-mismatch loss term (fresh draws every epoch), then each block's
own error is measured after training.  Robustness means the damage stays
local: later blocks should not amplify it.
"""


from mirnn import intervals as iv
from mirnn import metrics as mx
from mirnn import network as net
from mirnn import physics as ph
from mirnn import trainer as tr

EPOCHS = 1500
SEED = 0

problem = ph.burgers_problem()
partition = iv.build_partition(0.0, 5.0, 2, mutual_length=0.05,
                               near_width=0.05)
policy = iv.ConditioningPolicy.preceding_end()
schedule = net.ForgetFactorSchedule(0.5, 0.5, 0.5)
config = tr.TrainConfig(
    epochs=EPOCHS, seed=SEED,
    sampling=ph.SamplingSpec(interior=1200, boundary=160, initial=160,
                             mutual=160))

rows, reports = mx.noise_experiment(
    problem, partition, policy, schedule, config,
    mx.NoiseExperimentConfig(stds=(1.0, 0.1, 0.01), spacing=0.05,
                             time_spacing=0.05))

print("sigma    block   MSE         log10 MSE")
for r in rows:
    print(f"{r.std:<8g} {r.block:<7d} {r.mse:.3e}  {r.log10_mse:8.3f}")

base = {r.block: r.mse for r in rows if r.std == 0.0}
print("\nper-block MSE ratio vs the noiseless run:")
for std in (0.01, 0.1, 1.0):
    ratios = {r.block: r.mse / base[r.block] for r in rows if r.std == std}
    pretty = ", ".join(f"block {b}: {v:6.2f}x" for b, v in sorted(ratios.items()))
    print(f"  sigma={std:<5g} {pretty}")
