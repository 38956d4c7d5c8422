"""Command line interface.

Subcommands: gen (synthetic scenes), infer (one SMC run), train (harvest
a corpus and fit the proposal net), eval (score a saved run against
ground truth), sweep (proposal-quality comparison across particle
counts).

Option precedence is flags > config file > defaults. The config file is
key=value lines with # comments; keys are listed in CONFIG_KEYS. Errors
print a single `ddsmc: error: ...` line on stderr; usage problems exit
2, runtime failures exit 1. DDSMC_THREADS caps sweep workers (output is
identical for any worker count).
"""
from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys

import numpy as np

from . import __version__
from .engine import PriorProposal, SmcConfig, smc_run
from .errors import ArgumentError, DdsmcError, UsageError
from .metrics import DEFAULT_MIN_SIZE, evaluate_run
from .model import Hyper
from .population import DdpmoPopulation
from .proposals import (
    DEFAULT_HANDTUNED_P,
    DEFAULT_P_STAR,
    HandtunedProposal,
    HarvestHooks,
    LearnedProposal,
    TrainingSet,
    harvest_training_data,
    load_net,
    nn_train,
    replay_with_hooks,
    save_net,
    save_training_set,
)
from .runfile import load_run, save_run
from .scenes import (
    benchmark_hyper,
    default_test_scene,
    default_train_scene,
    generate_scene,
    load_dataset,
    load_truth,
    save_dataset,
    save_truth,
)

__all__ = ["main"]

SWEEP_CSV_MAGIC = "# ddsmc-sweep-v1"
EVAL_CSV_MAGIC = "# ddsmc-eval-v1"
LOSS_CSV_MAGIC = "# ddsmc-loss-v1"

REPORT_COLS = (
    "proposal_kind", "particles", "seed", "sfda", "ata",
    "mean_final_log_weight", "log_marginal",
)

DESK_PARTICLES = 500
PAPER_PARTICLES = 5000
DEFAULT_SWEEP_PARTICLES = (10, 30, 100, 300, 1000)
DEFAULT_SWEEP_SEEDS = 20

HYPER_KEYS = ("alpha", "rho", "mu0_x", "mu0_y", "k0", "nu0", "lambda0_x", "lambda0_y", "q0", "m_aux")
RUN_KEYS = (
    "particles", "seed", "p_star", "min_size", "epochs", "lr",
    "resampler", "resample_policy", "ess_threshold", "handtuned_p",
)
CONFIG_KEYS = HYPER_KEYS + RUN_KEYS


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_config_file(path: str) -> dict[str, str]:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise UsageError(f"cannot read config file: {err}")
    out: dict[str, str] = {}
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{ln}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{ln}: unknown config key {key!r}")
        out[key] = value
    return out


def _pick(flag_value, file_cfg: dict, key: str, default, convert):
    """flags > config file > defaults."""
    if flag_value is not None:
        return flag_value
    if key in file_cfg:
        try:
            return convert(file_cfg[key])
        except ValueError as err:
            raise UsageError(f"config key {key}: {err}")
    return default


def build_hyper(file_cfg: dict) -> Hyper:
    base = benchmark_hyper()
    fields = {
        "alpha": base.alpha, "rho": base.rho, "k0": base.k0, "nu0": base.nu0,
        "q0": base.q0, "m_aux": base.m_aux,
    }
    for key in ("alpha", "rho", "k0", "nu0", "q0"):
        if key in file_cfg:
            fields[key] = float(file_cfg[key])
    if "m_aux" in file_cfg:
        fields["m_aux"] = int(file_cfg["m_aux"])
    mu0 = (
        float(file_cfg.get("mu0_x", base.mu0[0])),
        float(file_cfg.get("mu0_y", base.mu0[1])),
    )
    lam = (
        float(file_cfg.get("lambda0_x", base.lambda0_diag[0])),
        float(file_cfg.get("lambda0_y", base.lambda0_diag[1])),
    )
    return Hyper(
        alpha=fields["alpha"], rho=fields["rho"], mu0=mu0, k0=fields["k0"],
        nu0=fields["nu0"], lambda0_diag=lam, q0=fields["q0"],
        m_aux=fields["m_aux"], trials=base.trials,
    ).validate()


def _hyper_dict(hyper: Hyper) -> dict:
    return {
        "alpha": hyper.alpha, "rho": hyper.rho, "mu0": list(hyper.mu0),
        "k0": hyper.k0, "nu0": hyper.nu0, "lambda0_diag": list(hyper.lambda0_diag),
        "q0": hyper.q0, "m_aux": hyper.m_aux, "trials": hyper.trials,
    }


def _hyper_from_dict(h: dict) -> Hyper:
    return Hyper(
        alpha=h["alpha"], rho=h["rho"], mu0=tuple(h["mu0"]), k0=h["k0"],
        nu0=h["nu0"], lambda0_diag=tuple(h["lambda0_diag"]), q0=h["q0"],
        m_aux=int(h["m_aux"]), trials=int(h["trials"]),
    ).validate()


def _check_out(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise UsageError(f"refusing to overwrite {path} (use --force)")


def _parse_handtuned(text: str):
    parts = text.split(",")
    if len(parts) != 5:
        raise UsageError("--handtuned-p takes 5 comma-separated probabilities")
    try:
        return tuple(float(v) for v in parts)
    except ValueError as err:
        raise UsageError(f"--handtuned-p: {err}")


def build_proposal(name: str, net_path, p_star, handtuned_p):
    if name == "prior":
        return PriorProposal()
    if name == "handtuned":
        return HandtunedProposal(class_p=handtuned_p or DEFAULT_HANDTUNED_P, p_star=p_star)
    if name == "nn":
        if not net_path:
            raise UsageError("--proposal nn requires --net")
        return LearnedProposal(load_net(net_path), p_star=p_star)
    raise UsageError(f"unknown proposal {name!r}")


def _smc_config(particles, seed, file_cfg) -> SmcConfig:
    return SmcConfig(
        particles=particles,
        master_seed=seed,
        resampler=file_cfg.get("resampler", "systematic"),
        resample_policy=file_cfg.get("resample_policy", "always"),
        ess_threshold=float(file_cfg.get("ess_threshold", 0.5)),
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    _check_out(args.out, args.force)
    if args.gt:
        _check_out(args.gt, args.force)
    config, default_seed = default_train_scene() if args.scene == "train" else default_test_scene()
    seed = args.seed if args.seed is not None else default_seed
    records, gt = generate_scene(config, seed)
    save_dataset(records, args.out)
    if args.gt:
        save_truth(gt, args.gt)
    print(f"scene={args.scene} seed={seed} pixels={len(records)} tracks={len(gt)} out={args.out}")
    return 0


def cmd_infer(args) -> int:
    file_cfg = parse_config_file(args.config) if args.config else {}
    _check_out(args.out, args.force)
    records = load_dataset(args.dataset)
    hyper = build_hyper(file_cfg)
    default_p = PAPER_PARTICLES if args.paper_scale else DESK_PARTICLES
    particles = _pick(args.particles, file_cfg, "particles", default_p, int)
    seed = _pick(args.seed, file_cfg, "seed", 0, int)
    p_star = _pick(args.p_star, file_cfg, "p_star", DEFAULT_P_STAR, float)
    handtuned_p = args.handtuned_p or (
        _parse_handtuned(file_cfg["handtuned_p"]) if "handtuned_p" in file_cfg else None
    )
    proposal = build_proposal(args.proposal, args.net, p_star, handtuned_p)
    program = DdpmoPopulation(records, hyper, master_seed=seed, collect_predictions=True)
    result = smc_run(program, proposal, _smc_config(particles, seed, file_cfg))
    extra = {
        "dataset": args.dataset,
        "proposal": args.proposal,
        "net": args.net,
        "p_star": p_star,
        "hyper": _hyper_dict(hyper),
    }
    save_run(result, program.snapshots, args.out, extra=extra)
    print(
        f"proposal={args.proposal} particles={particles} seed={seed} "
        f"log_marginal={result.log_marginal:.6f} "
        f"mean_final_log_weight={result.mean_final_log_weight:.6f} "
        f"wall_seconds={result.wall_seconds:.3f} out={args.out}"
    )
    return 0


def _harvest_run_file(run_path: str) -> TrainingSet:
    """Replay a recorded run against its dataset and harvest examples."""
    result, _, extra = load_run(run_path)
    if result.choices is None:
        raise UsageError(f"{run_path}: run was saved without trajectories")
    dataset = extra.get("dataset")
    if not dataset:
        raise UsageError(f"{run_path}: run file does not name its dataset")
    records = load_dataset(dataset)
    hyper = _hyper_from_dict(extra["hyper"]) if "hyper" in extra else benchmark_hyper()
    program = DdpmoPopulation(records, hyper, master_seed=result.config["master_seed"])
    hooks = HarvestHooks()
    replay_with_hooks(program, result, hooks)
    return harvest_training_data(hooks, result)


def cmd_train(args) -> int:
    file_cfg = parse_config_file(args.config) if args.config else {}
    _check_out(args.out, args.force)
    loss_path = args.loss_out or os.path.splitext(args.out)[0] + "_loss.csv"
    _check_out(loss_path, args.force)
    if args.training_out:
        _check_out(args.training_out, args.force)
    seed = _pick(args.seed, file_cfg, "seed", 0, int)
    epochs = _pick(args.epochs, file_cfg, "epochs", 200, int)
    lr = _pick(args.lr, file_cfg, "lr", 0.5, float)

    parts = [_harvest_run_file(path) for path in args.runs]
    data = TrainingSet(
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.classes for p in parts]),
        np.concatenate([p.weights for p in parts]),
    )
    if data.features.shape[0] == 0:
        raise ArgumentError(
            "harvest produced no training examples "
            "(no step had 3 live clusters on a surviving lineage)"
        )
    if args.training_out:
        save_training_set(data, args.training_out)
    net, trace = nn_train(data, epochs=epochs, lr=lr, seed=seed)
    save_net(net, args.out)
    with open(loss_path, "w") as fh:
        fh.write(LOSS_CSV_MAGIC + "\n")
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(trace, start=1):
            fh.write(f"{epoch},{_csv_cell(float(loss))}\n")
    print(
        f"examples={data.features.shape[0]} epochs={epochs} lr={lr} "
        f"initial_loss={trace[0]:.6f} final_loss={trace[-1]:.6f} "
        f"out={args.out} loss_curve={loss_path}"
    )
    return 0


def cmd_eval(args) -> int:
    if args.out:
        _check_out(args.out, args.force)
    result, snapshots, extra = load_run(args.run)
    gt = load_truth(args.gt)
    scores = evaluate_run(snapshots, result, gt, min_size=args.min_size, mode=args.mode)
    print(
        f"sfda={scores['sfda']:.6f} ata={scores['ata']:.6f} stda={scores['stda']:.6f} "
        f"mean_final_log_weight={scores['mean_final_log_weight']:.6f} "
        f"log_marginal={scores['log_marginal']:.6f} "
        f"gt_tracks={scores['n_gt_tracks']} det_tracks={scores['n_det_tracks']}"
    )
    if args.out:
        row = {
            "proposal_kind": extra.get("proposal", "unknown"),
            "particles": result.particles,
            "seed": result.config.get("master_seed", ""),
            "sfda": scores["sfda"],
            "ata": scores["ata"],
            "mean_final_log_weight": scores["mean_final_log_weight"],
            "log_marginal": scores["log_marginal"],
        }
        with open(args.out, "w") as fh:
            fh.write(EVAL_CSV_MAGIC + "\n")
            fh.write(",".join(REPORT_COLS) + "\n")
            fh.write(",".join(_csv_cell(row[c]) for c in REPORT_COLS) + "\n")
    return 0


def _sweep_one(task):
    """One (proposal, particles, seed) cell; independent of all others.

    A failing cell becomes an error row so the rest of the grid still
    completes; wall time stays out of the row because sweep output must
    be byte-identical for any worker count and timings are not.
    """
    records, gt, hyper, name, net_path, p_star, handtuned_p, particles, seed, file_cfg, min_size = task
    row = {"proposal_kind": name, "particles": particles, "seed": seed}
    try:
        proposal = build_proposal(name, net_path, p_star, handtuned_p)
        program = DdpmoPopulation(records, hyper, master_seed=seed, collect_predictions=True)
        result = smc_run(program, proposal, _smc_config(particles, seed, file_cfg))
        scores = evaluate_run(program.snapshots, result, gt, min_size=min_size, mode="map")
    except Exception as err:  # recorded, not fatal: the grid must finish
        reason = f"{type(err).__name__}: {err}".replace(",", ";").replace("\n", " ")
        row.update(sfda=None, ata=None, mean_final_log_weight=None,
                   log_marginal=None, status=f"error: {reason}")
        return row
    row.update(
        sfda=scores["sfda"],
        ata=scores["ata"],
        mean_final_log_weight=result.mean_final_log_weight,
        log_marginal=result.log_marginal,
        status="ok",
    )
    return row


def cmd_sweep(args) -> int:
    file_cfg = parse_config_file(args.config) if args.config else {}
    os.makedirs(args.out, exist_ok=True)
    long_path = os.path.join(args.out, "sweep.csv")
    summary_path = os.path.join(args.out, "summary.csv")
    sidecar_path = os.path.join(args.out, "sweep_config.json")
    for path in (long_path, summary_path, sidecar_path):
        if os.path.exists(path) and not args.force:
            raise UsageError(f"refusing to overwrite {path} (use --force)")

    records = load_dataset(args.dataset)
    gt = load_truth(args.gt)
    hyper = build_hyper(file_cfg)
    proposals = args.proposals.split(",")
    for name in proposals:
        if name not in ("prior", "handtuned", "nn"):
            raise UsageError(f"unknown proposal {name!r} in --proposals")
    if args.particles:
        try:
            particle_grid = tuple(int(v) for v in args.particles.split(","))
        except ValueError as err:
            raise UsageError(f"--particles: {err}")
    else:
        particle_grid = DEFAULT_SWEEP_PARTICLES
    if args.paper_scale:
        particle_grid = tuple(particle_grid) + (PAPER_PARTICLES,)
    n_seeds = args.seeds
    base_seed = _pick(args.seed, file_cfg, "seed", 0, int)
    p_star = _pick(args.p_star, file_cfg, "p_star", DEFAULT_P_STAR, float)
    min_size = _pick(args.min_size, file_cfg, "min_size", DEFAULT_MIN_SIZE, int)
    handtuned_p = args.handtuned_p or (
        _parse_handtuned(file_cfg["handtuned_p"]) if "handtuned_p" in file_cfg else None
    )
    if "nn" in proposals and not args.net:
        raise UsageError("--proposals includes nn, so --net is required")

    tasks = [
        (records, gt, hyper, name, args.net, p_star, handtuned_p, particles, base_seed + j, file_cfg, min_size)
        for name in proposals
        for particles in particle_grid
        for j in range(n_seeds)
    ]
    workers = max(1, int(os.environ.get("DDSMC_THREADS", "1")))
    if workers == 1:
        rows = [_sweep_one(t) for t in tasks]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    # deterministic order regardless of worker scheduling
    rows.sort(key=lambda r: (proposals.index(r["proposal_kind"]), r["particles"], r["seed"]))

    cols = REPORT_COLS + ("status",)
    with open(long_path, "w") as fh:
        fh.write(SWEEP_CSV_MAGIC + "\n")
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_csv_cell(r[c]) for c in cols) + "\n")

    with open(summary_path, "w") as fh:
        fh.write(SWEEP_CSV_MAGIC + "\n")
        metrics = ("log_marginal", "mean_final_log_weight", "sfda", "ata")
        head = ["proposal_kind", "particles", "n_seeds"]
        for m in metrics:
            head += [f"{m}_median", f"{m}_q25", f"{m}_q75"]
        fh.write(",".join(head) + "\n")
        for name in proposals:
            for particles in particle_grid:
                cell = [
                    r for r in rows
                    if r["proposal_kind"] == name and r["particles"] == particles
                    and r["status"] == "ok"
                ]
                if not cell:
                    continue
                vals = [name, str(particles), str(len(cell))]
                for m in metrics:
                    data = np.array([r[m] for r in cell])
                    for q in (50, 25, 75):
                        vals.append(_csv_cell(float(np.percentile(data, q))))
                fh.write(",".join(vals) + "\n")

    sidecar = {
        "version": __version__,
        "dataset": args.dataset,
        "gt": args.gt,
        "proposals": proposals,
        "particles": list(particle_grid),
        "seeds": n_seeds,
        "base_seed": base_seed,
        "net": args.net,
        "p_star": p_star,
        "min_size": min_size,
        "handtuned_p": list(handtuned_p or DEFAULT_HANDTUNED_P),
        "hyper": _hyper_dict(hyper),
    }
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"runs={len(rows)} out={long_path}")
    return 0


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="ddsmc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ddsmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene dataset")
    p.add_argument("--scene", choices=("train", "test"), default="train")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="dataset CSV path")
    p.add_argument("--gt", default=None, help="ground truth CSV path")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("infer", help="run SMC inference on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--proposal", choices=("prior", "handtuned", "nn"), default="prior")
    p.add_argument("--net", default=None)
    p.add_argument("--particles", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--p-star", dest="p_star", type=float, default=None)
    p.add_argument("--handtuned-p", dest="handtuned_p", type=_parse_handtuned, default=None)
    p.add_argument("--paper-scale", action="store_true", help=f"default to {PAPER_PARTICLES} particles")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="run archive (.npz)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="harvest recorded runs and train the proposal net")
    p.add_argument("runs", nargs="+", metavar="RUN", help="run archives from `infer` (need trajectories)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--training-out", dest="training_out", default=None, help="also save the corpus")
    p.add_argument("--loss-out", dest="loss_out", default=None, help="loss-curve CSV (default <out stem>_loss.csv)")
    p.add_argument("--out", required=True, help="net file path")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a run archive against ground truth")
    p.add_argument("--run", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--min-size", dest="min_size", type=int, default=DEFAULT_MIN_SIZE)
    p.add_argument("--mode", choices=("map", "weighted"), default="map")
    p.add_argument("--out", default=None, help="write scores as CSV")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="compare proposals across particle counts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--proposals", default="prior,handtuned,nn")
    p.add_argument("--net", default=None)
    p.add_argument("--particles", default=None, help="comma-separated particle counts")
    p.add_argument("--seeds", type=int, default=DEFAULT_SWEEP_SEEDS)
    p.add_argument("--seed", type=int, default=None, help="base seed")
    p.add_argument("--p-star", dest="p_star", type=float, default=None)
    p.add_argument("--handtuned-p", dest="handtuned_p", type=_parse_handtuned, default=None)
    p.add_argument("--min-size", dest="min_size", type=int, default=None)
    p.add_argument("--paper-scale", action="store_true", help=f"add {PAPER_PARTICLES} particles to the grid")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"ddsmc: error: {err}", file=sys.stderr)
        return 2
    except DdsmcError as err:
        print(f"ddsmc: error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"ddsmc: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
