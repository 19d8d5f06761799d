"""A miniature ablation ladder.

Runs the first rungs of the loss ablation -- plain cross entropy, then
the Dice composite -- on a toy dataset, and prints the comparison table.
The full ladder (cel, dcl, dds, ovl, fpl, rrs1, rrs2) at benchmark size
is what the acceptance tests run; this is the same machinery scaled down
to finish in about a minute.
"""

from voxseg import DatasetConfig, PhantomConfig, RRSConfig, TilingConfig
from voxseg import TrainConfig, UNetConfig, benchmark_dataset, run_ablation

UNET = UNetConfig(levels=2, base_channels=4, crop_dims=(16, 16, 16))
TILING = TilingConfig(window=UNET.crop_dims, overlap=0.5)

dataset = DatasetConfig(
    n_train=6, n_test=3,
    phantom=PhantomConfig(dims=(32, 32, 32), body_semiaxes=(4.0, 6.0),
                          vein_radius=(1.0, 1.5), vein_length=(3.0, 6.0)),
    seed=0)
train, test_pairs = benchmark_dataset(dataset)
print(f"dataset: {len(train)} train / {len(test_pairs)} test cases "
      f"at {dataset.phantom.dims}")

result = run_ablation(
    train, test_pairs, UNET,
    TrainConfig(iterations=300, seed=0),
    RRSConfig(levels=0, iterations_per_level=0, tiling=TILING),
    TILING,
    rungs=("cel", "dcl"),
    progress=print)

print()
print(result.table())
row = result.row("dcl")
agg = row.report.aggregate
print(f"\ndcl rung: dice={row.mean_dice:.4f} jaccard={agg['jaccard']:.4f} "
      f"trained in {row.train_seconds:.0f}s")
