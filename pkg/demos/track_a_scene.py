"""Run the tracker end to end on the bundled synthetic test scene.

Generates the standard four-object crossing scene, runs prior-proposal
SMC over every pixel of every frame, then scores the highest-weight
particle's tracks against ground truth and prints the recovered boxes
for a few frames next to the true ones.
"""
import numpy as np

from ddsmc.engine import PriorProposal, SmcConfig, smc_run
from ddsmc.metrics import evaluate_run, particle_tracks
from ddsmc.population import DdpmoPopulation
from ddsmc.scenes import benchmark_hyper, default_test_scene, generate_scene

PARTICLES = 100
SEED = 0


def fmt(box) -> str:
    return (f"[{box.x_min:5.1f},{box.y_min:5.1f} .. "
            f"{box.x_max:5.1f},{box.y_max:5.1f}]")


def main() -> None:
    config, scene_seed = default_test_scene()
    records, gt = generate_scene(config, scene_seed)
    print(f"scene: {config.n_frames} frames, {len(gt)} objects, "
          f"{len(records)} foreground pixels\n")

    program = DdpmoPopulation(records, benchmark_hyper(),
                              master_seed=SEED, collect_predictions=True)
    result = smc_run(program, PriorProposal(),
                     SmcConfig(particles=PARTICLES, master_seed=SEED))
    print(f"ran {PARTICLES} particles over {result.n_steps} observe steps "
          f"in {result.wall_seconds:.1f}s")
    print(f"log evidence estimate: {result.log_marginal:.1f}\n")

    scores = evaluate_run(program.snapshots, result, gt)
    print(f"MAP particle scores: SFDA {scores['sfda']:.3f}  "
          f"ATA {scores['ata']:.3f}  "
          f"({scores['n_det_tracks']} tracks vs {scores['n_gt_tracks']} true)\n")

    best = int(np.argmax(result.final_weights))
    tracks = particle_tracks(program.snapshots, result, best)
    for frame in (5, 15, 25):
        print(f"frame {frame}:")
        for oid, path in sorted(gt.items()):
            if frame in path:
                print(f"  true object {oid}:  {fmt(path[frame])}")
        for tid, path in sorted(tracks.items()):
            if frame in path:
                print(f"  detected {tid:5d}:  {fmt(path[frame])}")
        print()


if __name__ == "__main__":
    main()
