"""Command-line pipeline: synth, ingest, assign-roles, train, evaluate, rollout,
counterfactual, plot.

Every command writes its artifacts under one run directory (``--out``, or a
run-stamped directory under ``$TRAJGATE_OUTPUT_ROOT``, default ``./runs``)
plus a machine-readable ``summary.json`` naming them. Exit status is 0 iff
all declared outputs were written, 1 on missing/invalid inputs, 2 on usage
errors.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np
import torch

from . import evaluation, plotting
from .constraints import ConstraintConfig, PRESETS
from .data import Dataset, Role, export_csv, ingest_tracking, normalize_attack_direction, \
    split_windows, write_tracking
from .macrogoal import GridSpec
from .observation import ObservationOverride
from .policy import rollout as run_rollout
from .roles import assign_roles
from .synthetic import ScenarioSpec, generate_dataset, write_scenarios
from .training import TrainConfig, load_checkpoint, parse_config_file, train_policy

OUTPUT_ROOT_ENV = "TRAJGATE_OUTPUT_ROOT"


def _run_dir(out: str | None, command: str) -> Path:
    if out:
        path = Path(out)
    else:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S") + f"-{os.getpid()}"
        path = root / f"{command}-{stamp}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _finish(run_dir: Path, command: str, artifacts: list[Path], summary: dict) -> None:
    record = {
        "command": command,
        "artifacts": [str(p) for p in artifacts],
        "summary": summary,
    }
    summary_path = run_dir / "summary.json"
    summary_path.write_text(json.dumps(record, indent=2) + "\n")
    missing = [str(p) for p in artifacts if not Path(p).exists()]
    if missing:
        click.echo(f"error: declared outputs missing: {missing}", err=True)
        sys.exit(1)
    click.echo(json.dumps(record))


def _load_windows(data: str, burn_in: int, horizon: int) -> Dataset:
    ds = ingest_tracking(data)
    return split_windows(ds, burn_in, horizon)


def _role_slot(windows, role_index: int) -> int:
    defenders = windows[0].role_indices(Role.DEFENSE)
    if role_index not in range(len(defenders)):
        raise click.ClickException(f"role index {role_index} out of range")
    return defenders[role_index]


def _write_b_log_csv(path: Path, b_log: np.ndarray, role_index: int) -> Path:
    b = np.asarray(b_log)
    if b.ndim == 3:
        b = b[0]
    K = b.shape[1]
    with path.open("w") as fh:
        fh.write("t,role," + ",".join(f"b{k}" for k in range(K)) + "\n")
        for t, row in enumerate(b):
            fh.write(f"{t},{role_index}," + ",".join(f"{v:g}" for v in row) + "\n")
    return path


@click.group()
def main():
    """Multi-agent imitation pipeline with binary observation gates."""


@main.command()
@click.option("--out", default=None, help="output directory (default: run-stamped)")
@click.option("--seed", default=0, type=int)
@click.option("--defenders", default=5, type=int)
@click.option("--attackers", default=5, type=int)
@click.option("--n-train", default=20, type=int)
@click.option("--n-val", default=4, type=int)
@click.option("--n-test", default=4, type=int)
@click.option("--noise", default=0.02, type=float)
@click.option("--duration", default=8.0, type=float, help="seconds per scenario")
def synth(out, seed, defenders, attackers, n_train, n_val, n_test, noise, duration):
    """Generate synthetic scenarios with a planted observation mask."""
    run_dir = _run_dir(out, "synth")
    spec = ScenarioSpec(n_defenders=defenders, n_attackers=attackers, seed=seed,
                        noise_scale=noise, total_duration=duration)
    ds, mask = generate_dataset(spec, n_train, n_val, n_test)
    data_path, mask_path = write_scenarios(ds, mask, run_dir / "data.jsonl")
    _finish(run_dir, "synth", [data_path, mask_path], {
        "seed": seed, "sequences": len(ds.all_sequences()),
        "agents": spec.n_agents, "frames": spec.n_frames,
    })


@main.command()
@click.option("--file", "file_", required=True, type=click.Path())
@click.option("--out", default=None)
@click.option("--strict", is_flag=True, help="reject files with gaps instead of dropping")
@click.option("--normalize/--no-normalize", default=False,
              help="mirror sequences so the offense attacks leftward")
def ingest(file_, out, strict, normalize):
    """Validate a tracking file and emit its canonical copy plus a CSV mirror."""
    if not Path(file_).exists():
        click.echo(f"error: no such file: {file_}", err=True)
        sys.exit(1)
    run_dir = _run_dir(out, "ingest")
    try:
        ds = ingest_tracking(file_, strict=strict)
    except ValueError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    if normalize:
        ds = Dataset(
            train=tuple(normalize_attack_direction(s) for s in ds.train),
            val=tuple(normalize_attack_direction(s) for s in ds.val),
            test=tuple(normalize_attack_direction(s) for s in ds.test),
            dt=ds.dt)
    canonical = write_tracking(ds, run_dir / "canonical.jsonl")
    csv_path = export_csv(ds, run_dir / "tracking.csv")
    _finish(run_dir, "ingest", [canonical, csv_path],
            {"sequences": len(ds.all_sequences())})


@main.command("assign-roles")
@click.option("--data", required=True, type=click.Path())
@click.option("--out", default=None)
@click.option("--roles", default=None, type=int, help="number of roles (default: #defenders)")
@click.option("--seed", default=0, type=int)
def assign_roles_cmd(data, out, roles, seed):
    """Fit the role HMM on the training split and reindex every sequence."""
    if not Path(data).exists():
        click.echo(f"error: no such file: {data}", err=True)
        sys.exit(1)
    run_dir = _run_dir(out, "assign-roles")
    ds = ingest_tracking(data)
    assigned, model = assign_roles(ds, n_roles=roles, seed=seed)
    data_path = write_tracking(assigned, run_dir / "assigned.jsonl")
    model_path = model.to_json(run_dir / "role_model.json")
    _finish(run_dir, "assign-roles", [data_path, model_path],
            {"n_roles": model.n_roles})


@main.command()
@click.option("--data", required=True, type=click.Path())
@click.option("--out", default=None)
@click.option("--role", default=0, type=int, help="defender role index to train")
@click.option("--config", "config_file", default=None, type=click.Path(),
              help="plain-text key = value training config")
@click.option("--preset", default=None, type=click.Choice(sorted(PRESETS)),
              help="constraint ablation preset")
@click.option("--epochs", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--parallel-roles", is_flag=True, help="train every role concurrently")
@click.option("--grid-rows", default=None, type=int)
@click.option("--grid-cols", default=None, type=int)
@click.option("--grid-bounds", default=None, help="x0,y0,x1,y1 for a custom grid")
def train(data, out, role, config_file, preset, epochs, seed, parallel_roles,
          grid_rows, grid_cols, grid_bounds):
    """Train one role's policy (or all roles with --parallel-roles)."""
    if not Path(data).exists():
        click.echo(f"error: no such file: {data}", err=True)
        sys.exit(1)
    run_dir = _run_dir(out, "train")
    config = parse_config_file(config_file) if config_file else TrainConfig()
    updates: dict = {"role_index": role}
    if preset is not None:
        updates["constraints"] = ConstraintConfig.preset(preset, sport=config.sport)
    if epochs is not None:
        updates["epochs"] = epochs
    if seed is not None:
        updates["seed"] = seed
    config = dataclasses.replace(config, **updates)

    ds = _load_windows(data, config.burn_in, config.horizon)
    grid = None
    if grid_rows and grid_cols:
        if grid_bounds:
            x0, y0, x1, y1 = (float(v) for v in grid_bounds.split(","))
            bounds = ((x0, y0), (x1, y1))
        else:
            pos = np.concatenate([s.positions.reshape(-1, 2) for s in ds.train])
            bounds = ((pos[:, 0].min(), pos[:, 1].min()),
                      (pos[:, 0].max() + 1e-6, pos[:, 1].max() + 1e-6))
        grid = GridSpec.from_bounds(bounds, grid_rows, grid_cols)

    n_roles = len(ds.train[0].role_indices(Role.DEFENSE))
    roles_to_train = list(range(n_roles)) if parallel_roles else [config.role_index]
    artifacts, summaries = [], {}
    for r in roles_to_train:
        cfg_r = dataclasses.replace(config, role_index=r,
                                    out_dir=str(run_dir / f"role{r}"))
        result = train_policy(cfg_r, ds, grid=grid)
        artifacts += [result.final_checkpoint, result.metrics_path]
        summaries[f"role{r}"] = str(result.final_checkpoint)
    _finish(run_dir, "train", artifacts, {"checkpoints": summaries})


def _evaluate_windows(model, windows, role_slot, burn_in, horizon, n, seed):
    per_window, acc_pool, b_pool, agent_pool = [], [], [], []
    for i, w in enumerate(windows):
        gen = torch.Generator()
        gen.manual_seed(seed * 7919 + i)
        res = run_rollout(model, w, role_slot, burn_in=burn_in, horizon=horizon,
                          n_samples=n, generator=gen)
        per_window.append(evaluation.evaluate_rollout(res))
        acc_pool.append(res.accelerations[:, res.burn_in:])
        b_pool.append(res.b_log)
        agent_pool.append(res)
    return per_window, acc_pool, b_pool, agent_pool


@main.command()
@click.option("--model", "model_path", default=None, type=click.Path(),
              help="checkpoint to evaluate (omit with --baseline)")
@click.option("--baseline", default=None, type=click.Choice(["velocity"]))
@click.option("--data", required=True, type=click.Path())
@click.option("--out", default=None)
@click.option("--n", default=10, type=int, help="samples per window")
@click.option("--seed", default=0, type=int)
@click.option("--burn-in", default=20, type=int)
@click.option("--horizon", default=60, type=int)
def evaluate(model_path, baseline, data, out, n, seed, burn_in, horizon):
    """Roll out on the test split and report mean/best L2 plus distributions."""
    if model_path is None and baseline is None:
        click.echo("error: provide --model or --baseline", err=True)
        sys.exit(1)
    if not Path(data).exists():
        click.echo(f"error: no such file: {data}", err=True)
        sys.exit(1)
    run_dir = _run_dir(out, "evaluate")
    ds = _load_windows(data, burn_in, horizon)
    windows = list(ds.test) or list(ds.train)

    if baseline == "velocity":
        role_slot = _role_slot(windows, 0)
        per_window, acc_pool = [], []
        obs = None
        for w in windows:
            res = evaluation.velocity_baseline(w, role_slot, burn_in, horizon)
            per_window.append(evaluation.evaluate_rollout(res))
            acc_pool.append(res.accelerations[:, burn_in:])
        label = "velocity"
    else:
        model, payload = load_checkpoint(model_path)
        role_index = payload["train_config"]["role_index"]
        role_slot = _role_slot(windows, role_index)
        per_window, acc_pool, b_pool, results = _evaluate_windows(
            model, windows, role_slot, burn_in, horizon, n, seed)
        obs = _pool_observation_stats(results, role_slot) if model.cfg.use_latent else None
        label = Path(model_path).stem

    report = evaluation.aggregate_reports(per_window, acc_pool, observation=obs)
    report_path = run_dir / "report.json"
    report.to_json(report_path)
    table_path = run_dir / "report.txt"
    table_path.write_text(f"model: {label}\n" + report.to_table() + "\n")
    _finish(run_dir, "evaluate", [report_path, table_path], {
        "model": label,
        "best_pos_l2": report.best_l2["pos"][0],
        "mean_pos_l2": report.mean_l2["pos"][0],
    })


def _pool_observation_stats(results, role_slot):
    b = np.concatenate([r.b_log.reshape(-1, r.b_log.shape[-1]) for r in results])
    pos = np.concatenate([np.repeat(r.agent_positions[:-1][None], r.n_samples, axis=0)
                          .reshape(-1, *r.agent_positions.shape[1:]) for r in results])
    return evaluation.observation_stats(b[None], pos, role_slot)


@main.command("rollout")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path())
@click.option("--out", default=None)
@click.option("--n", default=10, type=int)
@click.option("--window", default=0, type=int, help="test window index")
@click.option("--seed", default=0, type=int)
@click.option("--burn-in", default=20, type=int)
@click.option("--horizon", default=60, type=int)
def rollout_cmd(model_path, data, out, n, window, seed, burn_in, horizon):
    """Sample N trajectories on one test window; dump arrays and gate logs."""
    if not Path(model_path).exists() or not Path(data).exists():
        click.echo("error: missing model or data file", err=True)
        sys.exit(1)
    run_dir = _run_dir(out, "rollout")
    ds = _load_windows(data, burn_in, horizon)
    windows = list(ds.test) or list(ds.train)
    if window not in range(len(windows)):
        click.echo(f"error: window {window} out of range ({len(windows)} available)", err=True)
        sys.exit(1)
    model, payload = load_checkpoint(model_path)
    role_index = payload["train_config"]["role_index"]
    role_slot = _role_slot(windows, role_index)
    gen = torch.Generator()
    gen.manual_seed(seed)
    res = run_rollout(model, windows[window], role_slot, burn_in=burn_in,
                      horizon=horizon, n_samples=n, generator=gen)
    npz_path = run_dir / "rollout.npz"
    np.savez(npz_path, positions=res.positions, velocities=res.velocities,
             accelerations=res.accelerations, b_log=res.b_log, g_log=res.g_log,
             truth_positions=res.truth_positions,
             truth_velocities=res.truth_velocities,
             truth_accelerations=res.truth_accelerations,
             agent_positions=res.agent_positions,
             burn_in=res.burn_in, dt=res.dt, role_slot=res.role_slot)
    b_csv = _write_b_log_csv(run_dir / "b_log.csv", res.b_log, role_index)
    _finish(run_dir, "rollout", [npz_path, b_csv], {
        "window": window, "n_samples": n,
        "mean_pos_l2": evaluation.evaluate_rollout(res)["pos"].mean,
    })


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path())
@click.option("--out", default=None)
@click.option("--mode", default="one-hot", type=click.Choice(["one-hot", "custom"]))
@click.option("--override", "override_file", default=None, type=click.Path(),
              help="JSON array: fixed gate vector or per-step schedule (custom mode)")
@click.option("--n", default=1, type=int)
@click.option("--window", default=0, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--burn-in", default=20, type=int)
@click.option("--horizon", default=60, type=int)
def counterfactual(model_path, data, out, mode, override_file, n, window, seed,
                   burn_in, horizon):
    """Force the observation gates and compare against the normal rollout."""
    if not Path(model_path).exists() or not Path(data).exists():
        click.echo("error: missing model or data file", err=True)
        sys.exit(1)
    if mode == "custom" and override_file is None:
        click.echo("error: --mode custom requires --override", err=True)
        sys.exit(1)
    run_dir = _run_dir(out, "counterfactual")
    ds = _load_windows(data, burn_in, horizon)
    windows = list(ds.test) or list(ds.train)
    model, payload = load_checkpoint(model_path)
    role_index = payload["train_config"]["role_index"]
    role_slot = _role_slot(windows, role_index)

    if mode == "one-hot":
        override = ObservationOverride.one_hot_top()
    else:
        arr = np.asarray(json.loads(Path(override_file).read_text()), dtype=np.float64)
        override = ObservationOverride.fixed(arr) if arr.ndim == 1 \
            else ObservationOverride.from_schedule(arr)

    w = windows[window]
    gen = torch.Generator(); gen.manual_seed(seed)
    normal = run_rollout(model, w, role_slot, burn_in=burn_in, horizon=horizon,
                         n_samples=n, generator=gen)
    gen = torch.Generator(); gen.manual_seed(seed)
    forced = run_rollout(model, w, role_slot, burn_in=burn_in, horizon=horizon,
                         n_samples=n, generator=gen, observation_override=override)
    divergence = float(np.linalg.norm(
        forced.positions - normal.positions, axis=-1).mean())

    npz_path = run_dir / "counterfactual.npz"
    np.savez(npz_path, normal_positions=normal.positions,
             forced_positions=forced.positions, normal_b=normal.b_log,
             forced_b=forced.b_log, burn_in=burn_in, dt=w.dt, role_slot=role_slot,
             truth_positions=forced.truth_positions,
             agent_positions=forced.agent_positions)
    b_csv = _write_b_log_csv(run_dir / "b_log.csv", forced.b_log, role_index)
    _finish(run_dir, "counterfactual", [npz_path, b_csv], {
        "mode": mode, "mean_position_divergence": divergence,
    })


@main.command("plot")
@click.option("--run", "run", required=True, type=click.Path(),
              help="a rollout or counterfactual output directory")
@click.option("--out", default=None)
def plot_cmd(run, out):
    """Render static figures from a rollout/counterfactual run (read-only)."""
    run = Path(run)
    npz = None
    for name in ("rollout.npz", "counterfactual.npz"):
        if (run / name).exists():
            npz = run / name
            break
    if npz is None:
        click.echo(f"error: no rollout.npz/counterfactual.npz under {run}", err=True)
        sys.exit(1)
    run_dir = _run_dir(out, "plot")
    data = np.load(npz)
    from .policy import RolloutResult

    if "positions" in data:
        res = RolloutResult(
            positions=data["positions"], velocities=data["velocities"],
            accelerations=data["accelerations"], b_log=data["b_log"],
            g_log=data["g_log"], truth_positions=data["truth_positions"],
            truth_velocities=data["truth_velocities"],
            truth_accelerations=data["truth_accelerations"],
            agent_positions=data["agent_positions"], burn_in=int(data["burn_in"]),
            dt=float(data["dt"]), role_slot=int(data["role_slot"]))
        artifacts = [
            plotting.plot_trajectories(res, run_dir / "trajectories.svg"),
            plotting.plot_acceleration(res, run_dir / "acceleration.svg"),
            plotting.plot_gate_sequence(res.b_log, run_dir / "gates.svg"),
        ]
    else:
        b = data["forced_b"]
        artifacts = [plotting.plot_gate_sequence(b, run_dir / "gates.svg")]
    _finish(run_dir, "plot", artifacts, {"source": str(npz)})


if __name__ == "__main__":
    main()
