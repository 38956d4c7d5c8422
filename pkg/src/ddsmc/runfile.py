"""Run archive: one .npz holding a RunResult plus optional end-of-frame
snapshots, bit-exact on round-trip.

Scalars that must survive exactly (evidence, weights, timings) travel as
float64 arrays; only structural metadata (config, shapes, frame ids)
goes through JSON.
"""
from __future__ import annotations

import json

import numpy as np

from .engine import RunResult
from .errors import FormatError

__all__ = ["save_run", "load_run"]

RUN_MAGIC = "ddsmc-run-v1"

_SNAP_ARRAYS = ("ms", "kcount", "mu", "Sigma", "ps")


def save_run(result: RunResult, snapshots: list[dict] | None, path: str, extra: dict | None = None) -> None:
    """`extra` holds caller context (dataset path, proposal kind, hyper
    values); it must be JSON-serializable."""
    meta = {
        "magic": RUN_MAGIC,
        "config": result.config,
        "n_steps": result.n_steps,
        "particles": result.particles,
        "has_trajectories": result.choices is not None,
        "snapshots": [
            {"t": int(s["t"]), "step": int(s["step"])} for s in (snapshots or [])
        ],
        "extra": extra or {},
    }
    arrays = {
        "scalars": np.array(
            [result.log_marginal, result.mean_final_log_weight, result.wall_seconds]
        ),
        "final_log_acc": result.final_log_acc,
        "final_weights": result.final_weights,
        "step_log_mean_w": result.step_log_mean_w,
        "ess_history": result.ess_history,
        "resampled": result.resampled,
    }
    if result.choices is not None:
        arrays["choices"] = result.choices
        arrays["ancestors"] = result.ancestors
        arrays["log_incr"] = result.log_incr
    for j, snap in enumerate(snapshots or []):
        for name in _SNAP_ARRAYS:
            arrays[f"snap{j}_{name}"] = snap[name]
    np.savez_compressed(path, meta=np.array(json.dumps(meta)), **arrays)


def load_run(path: str) -> tuple[RunResult, list[dict], dict]:
    """(result, snapshots, extra)."""
    import zipfile

    try:
        handle = np.load(path, allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as err:
        raise FormatError(path, None, f"not a readable run archive: {err}")
    with handle as z:
        try:
            meta = json.loads(str(z["meta"]))
        except (KeyError, json.JSONDecodeError) as err:
            raise FormatError(path, 1, f"missing or malformed run metadata: {err}")
        if meta.get("magic") != RUN_MAGIC:
            raise FormatError(path, 1, f"expected run archive {RUN_MAGIC!r}")
        scalars = z["scalars"]
        has_traj = meta["has_trajectories"]
        result = RunResult(
            config=meta["config"],
            n_steps=int(meta["n_steps"]),
            particles=int(meta["particles"]),
            log_marginal=float(scalars[0]),
            mean_final_log_weight=float(scalars[1]),
            final_log_acc=z["final_log_acc"],
            final_weights=z["final_weights"],
            step_log_mean_w=z["step_log_mean_w"],
            ess_history=z["ess_history"],
            resampled=z["resampled"],
            choices=z["choices"] if has_traj else None,
            ancestors=z["ancestors"] if has_traj else None,
            log_incr=z["log_incr"] if has_traj else None,
            wall_seconds=float(scalars[2]),
        )
        snapshots = []
        for j, ids in enumerate(meta["snapshots"]):
            snap = {"t": int(ids["t"]), "step": int(ids["step"])}
            for name in _SNAP_ARRAYS:
                snap[name] = z[f"snap{j}_{name}"]
            snapshots.append(snap)
    return result, snapshots, meta.get("extra", {})
