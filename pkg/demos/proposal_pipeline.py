"""The full learned-proposal loop at demo scale.

Records a few prior-proposal runs on the training scene, harvests
(features, choice class) pairs from their surviving lineages, fits the
small classifier net, then pits the learned proposal against the prior
at a deliberately starved particle count on the held-out test scene.
Expect a large gap in final log weights: with only 10 particles the
prior rarely guesses object births and data associations well, while
the trained net reads the current frame before proposing.
"""
import numpy as np

from ddsmc.engine import PriorProposal, SmcConfig, smc_run
from ddsmc.metrics import evaluate_run
from ddsmc.population import DdpmoPopulation
from ddsmc.proposals import (
    HarvestHooks,
    LearnedProposal,
    TrainingSet,
    harvest_training_data,
    nn_train,
    replay_with_hooks,
)
from ddsmc.scenes import (
    benchmark_hyper,
    default_test_scene,
    default_train_scene,
    generate_scene,
)

RECORD_PARTICLES = 200
RECORD_RUNS = 2
EPOCHS = 60
EVAL_PARTICLES = 10
EVAL_SEEDS = 5


def harvest(records, hyper, seed: int) -> TrainingSet:
    program = DdpmoPopulation(records, hyper, master_seed=seed)
    result = smc_run(program, PriorProposal(),
                     SmcConfig(particles=RECORD_PARTICLES, master_seed=seed))
    # replay the recorded trajectories so hooks see the same states
    fresh = DdpmoPopulation(records, hyper, master_seed=seed)
    hooks = HarvestHooks()
    replay_with_hooks(fresh, result, hooks)
    return harvest_training_data(hooks, result)


def evaluate(records, gt, hyper, proposal, seed: int) -> dict:
    program = DdpmoPopulation(records, hyper, master_seed=seed,
                              collect_predictions=True)
    result = smc_run(program, proposal,
                     SmcConfig(particles=EVAL_PARTICLES, master_seed=seed))
    return evaluate_run(program.snapshots, result, gt)


def main() -> None:
    hyper = benchmark_hyper()
    train_cfg, train_seed = default_train_scene()
    train_records, _ = generate_scene(train_cfg, train_seed)

    print(f"harvesting {RECORD_RUNS} prior runs at P={RECORD_PARTICLES} ...")
    parts = [harvest(train_records, hyper, seed) for seed in range(RECORD_RUNS)]
    data = TrainingSet(
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.classes for p in parts]),
        np.concatenate([p.weights for p in parts]),
    )
    share = np.bincount(data.classes, weights=data.weights, minlength=5)
    share /= share.sum()
    print(f"  {data.features.shape[0]} examples; class shares "
          f"{np.array2string(share, precision=3)}")
    print("  (classes: nearest / 2nd / 3rd cluster, other live, new)\n")

    print(f"training for {EPOCHS} epochs ...")
    net, trace = nn_train(data, epochs=EPOCHS, lr=0.5, seed=0)
    print(f"  loss {trace[0]:.4f} -> {trace[-1]:.4f}\n")

    test_cfg, test_seed = default_test_scene()
    test_records, gt = generate_scene(test_cfg, test_seed)
    print(f"head-to-head on the test scene, P={EVAL_PARTICLES}, "
          f"{EVAL_SEEDS} seeds each:")
    for name, proposal in (("prior", PriorProposal()),
                           ("learned", LearnedProposal(net))):
        rows = [evaluate(test_records, gt, hyper, proposal, seed)
                for seed in range(EVAL_SEEDS)]
        mflw = np.median([r["mean_final_log_weight"] for r in rows])
        sfda = np.median([r["sfda"] for r in rows])
        ata = np.median([r["ata"] for r in rows])
        print(f"  {name:8s} median final log weight {mflw:10.1f}   "
              f"SFDA {sfda:.3f}   ATA {ata:.3f}")


if __name__ == "__main__":
    main()
