"""Per-role policy optimization: Adam, teacher forcing, checkpoints, model selection.

One training run owns one defender role. The loss is the negated sequence
ELBO plus the weighted mechanical penalties plus the weighted macro-goal
cross-entropy; all terms are logged per epoch to a CSV so ablation presets
can be audited from the log alone. Runs are bit-deterministic for a fixed
seed in single-worker mode (one torch thread).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .constraints import ConstraintConfig
from .data import Dataset, PlaySequence, Role
from .evaluation import evaluate_rollout
from .macrogoal import GridSpec
from .policy import PolicyConfig, PolicyModel, WindowBatch, full_loss, make_batch, rollout

__all__ = [
    "TrainConfig",
    "TrainResult",
    "train_policy",
    "select_best",
    "save_checkpoint",
    "load_checkpoint",
    "parse_config_file",
    "write_config_file",
]

CHECKPOINT_FORMAT = "trajgate.checkpoint/1"

# TrainConfig keys routed into PolicyConfig when building the model.
_POLICY_KEYS = ("embed_dim", "latent_dim", "hidden_dim", "rnn_hidden", "rnn_layers",
                "macro_hidden", "macro_layers", "dropout", "sigma_floor", "tau",
                "variant", "dtype")


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run needs; echoed into every checkpoint."""

    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    sport: str = "basketball"
    role_index: int = 0          # defender slot the model controls
    burn_in: int = 20
    horizon: int = 60
    macro_weight: float = 1.0
    grad_clip: float = 10.0
    num_threads: int = 1
    val_every: int = 1
    val_samples: int = 3
    speed_threshold: float = 0.5
    min_hold: float = 0.5
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    policy_overrides: dict = field(default_factory=dict)
    out_dir: str = "runs/train"

    def policy_config(self, n_agents: int, n_cells: int) -> PolicyConfig:
        kwargs = dict(n_agents=n_agents, n_cells=n_cells)
        kwargs.update(self.policy_overrides)
        return PolicyConfig(**kwargs)

    def as_flat_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["constraints"] = dataclasses.asdict(self.constraints)
        return d


@dataclass
class TrainResult:
    checkpoints: list[Path]
    metrics_path: Path
    final_checkpoint: Path
    policy_config: PolicyConfig


def save_checkpoint(path: Path, model: PolicyModel, optimizer, train_config: TrainConfig,
                    epoch: int, val_score: float | None) -> Path:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "epoch": epoch,
        "val_score": val_score,
        "train_config": train_config.as_flat_dict(),
        "policy_config": dataclasses.asdict(model.cfg),
        "state_dict": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng_state": torch.get_rng_state(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[PolicyModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {payload.get('format')!r}")
    cfg = PolicyConfig(**payload["policy_config"])
    model = PolicyModel(cfg)
    model.load_state_dict(payload["state_dict"])
    return model, payload


def _batch_columns(batch: WindowBatch, idx: np.ndarray) -> WindowBatch:
    return WindowBatch(
        states=batch.states[:, idx], actions=batch.actions[:, idx],
        positions=batch.positions[:, idx], accelerations=batch.accelerations[:, idx],
        labels=batch.labels[:, idx], dt=batch.dt,
    )


def _validate(model: PolicyModel, windows, role_slot: int, config: TrainConfig,
              epoch: int) -> float:
    """Mean position L2 over validation windows; never mutates the model."""
    scores = []
    for i, w in enumerate(windows):
        gen = torch.Generator()
        gen.manual_seed(config.seed * 100003 + epoch * 1009 + i)
        res = rollout(model, w, role_slot, burn_in=config.burn_in,
                      horizon=config.horizon, n_samples=config.val_samples,
                      generator=gen)
        scores.append(evaluate_rollout(res)["pos"].mean)
    return float(np.mean(scores))


def train_policy(config: TrainConfig, dataset: Dataset,
                 grid: GridSpec | None = None) -> TrainResult:
    """Train one role's policy on prepared windows.

    Expects ``dataset.train`` (and optionally ``.val``) to hold
    role-assigned windows of length burn_in + horizon. Saves a checkpoint
    per epoch under ``out_dir/checkpoints`` and a per-epoch metrics CSV
    with one column per loss term.

    Raises:
        FloatingPointError: on a non-finite loss, after writing a
            diagnostic dump of the offending batch.
    """
    torch.set_num_threads(config.num_threads)
    if grid is None:
        grid = GridSpec.for_sport(config.sport)
    windows = list(dataset.train)
    if not windows:
        raise ValueError("training split is empty")
    defenders = windows[0].role_indices(Role.DEFENSE)
    if config.role_index not in range(len(defenders)):
        raise ValueError(f"role_index {config.role_index} out of range")
    role_slot = defenders[config.role_index]

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    metrics_path = out_dir / "metrics.csv"
    write_config_file(out_dir / "config.echo.txt", config)

    torch.manual_seed(config.seed)
    cfg = config.policy_config(n_agents=windows[0].n_agents, n_cells=grid.n_cells)
    model = PolicyModel(cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    gen = torch.Generator()
    gen.manual_seed(config.seed + 1)
    shuffle_rng = np.random.default_rng(config.seed)

    full = make_batch(windows, role_slot, cfg, grid,
                      config.speed_threshold, config.min_hold)
    n = len(windows)
    term_keys = ["recon_nll", "kl", "penalty_kl_acc", "penalty_pos_nll",
                 "penalty_jerk_nll", "penalty_acc_recon", "macro_ce", "total"]
    checkpoints: list[Path] = []

    with metrics_path.open("w") as mf:
        mf.write("epoch," + ",".join(term_keys) + ",val_pos_l2\n")
        for epoch in range(1, config.epochs + 1):
            model.train()
            order = shuffle_rng.permutation(n)
            sums = dict.fromkeys(term_keys, 0.0)
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                sub = _batch_columns(full, idx)
                try:
                    terms = full_loss(model, sub, config.constraints,
                                      macro_weight=config.macro_weight, generator=gen)
                except FloatingPointError:
                    dump = out_dir / "diagnostic.json"
                    dump.write_text(json.dumps({
                        "epoch": epoch, "batch_windows": idx.tolist(),
                        "message": "non-finite loss"}, indent=2))
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}; dump at {dump}") from None
                logged = terms.as_dict()
                parts = (logged["recon_nll"] + logged["kl"] + logged["macro_ce"]
                         * config.macro_weight
                         + logged["penalty_kl_acc"] + logged["penalty_pos_nll"]
                         + logged["penalty_jerk_nll"] + logged["penalty_acc_recon"])
                if abs(parts - logged["total"]) > 1e-6 * max(1.0, abs(logged["total"])):
                    raise AssertionError("loss decomposition identity violated")
                loss = terms.total / len(idx)
                optimizer.zero_grad()
                loss.backward()
                if config.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                for k in term_keys:
                    sums[k] += logged[k]
            val_score = float("nan")
            if dataset.val and config.val_every > 0 and epoch % config.val_every == 0:
                val_score = _validate(model, dataset.val, role_slot, config, epoch)
            row = [f"{epoch}"] + [f"{sums[k] / n:.6f}" for k in term_keys] \
                + [f"{val_score:.6f}"]
            mf.write(",".join(row) + "\n")
            mf.flush()
            ckpt = save_checkpoint(ckpt_dir / f"epoch_{epoch:04d}.pt", model, optimizer,
                                   config, epoch, None if np.isnan(val_score) else val_score)
            checkpoints.append(ckpt)

    return TrainResult(checkpoints=checkpoints, metrics_path=metrics_path,
                       final_checkpoint=checkpoints[-1], policy_config=cfg)


def select_best(checkpoints: list[str | Path], val_windows: list[PlaySequence],
                metric: str = "position_l2", n_samples: int = 3, burn_in: int = 20,
                horizon: int = 60, seed: int = 0) -> Path:
    """Pick the checkpoint with the lowest mean validation L2 (earliest epoch wins ties)."""
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    if metric not in ("position_l2", "velocity_l2", "acceleration_l2"):
        raise ValueError(f"unknown metric {metric!r}")
    dim = {"position_l2": "pos", "velocity_l2": "vel", "acceleration_l2": "acc"}[metric]
    best_path, best_score = None, float("inf")
    for path in checkpoints:
        model, payload = load_checkpoint(path)
        role_slot = payload["train_config"]["role_index"]
        defenders = val_windows[0].role_indices(Role.DEFENSE)
        slot = defenders[role_slot]
        scores = []
        for i, w in enumerate(val_windows):
            gen = torch.Generator()
            gen.manual_seed(seed * 100003 + i)
            res = rollout(model, w, slot, burn_in=burn_in, horizon=horizon,
                          n_samples=n_samples, generator=gen)
            scores.append(evaluate_rollout(res)[dim].mean)
        score = float(np.mean(scores))
        if score < best_score:
            best_path, best_score = Path(path), score
    return best_path


def parse_config_file(path: str | Path) -> TrainConfig:
    """Parse a plain-text ``key = value`` training config.

    Unknown keys matching PolicyConfig fields are routed into
    ``policy_overrides``; constraint keys (``lambda_*``, ``enable_*``,
    ``preset``) build the ConstraintConfig.
    """
    raw: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        raw[key] = value

    def coerce(value: str, typ):
        if typ is bool:
            return value.lower() in ("1", "true", "yes", "on")
        return typ(value)

    sport = raw.get("sport", "basketball")
    if "preset" in raw:
        constraints = ConstraintConfig.preset(raw.pop("preset"), sport=sport)
    else:
        constraints = ConstraintConfig()
    c_updates = {}
    for f in dataclasses.fields(ConstraintConfig):
        if f.name in raw:
            c_updates[f.name] = coerce(raw.pop(f.name), type(getattr(constraints, f.name)))
    if c_updates:
        constraints = dataclasses.replace(constraints, **c_updates)

    kwargs: dict = {"constraints": constraints}
    overrides: dict = {}
    train_fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    for key, value in raw.items():
        if key in train_fields and key not in ("constraints", "policy_overrides"):
            default = train_fields[key].default
            typ = type(default) if default is not dataclasses.MISSING else str
            kwargs[key] = coerce(value, typ)
        elif key in _POLICY_KEYS:
            field_types = {f.name: f for f in dataclasses.fields(PolicyConfig)}
            default = field_types[key].default
            overrides[key] = coerce(value, type(default))
        else:
            raise ValueError(f"unknown config key {key!r}")
    if overrides:
        kwargs["policy_overrides"] = overrides
    return TrainConfig(**kwargs)


def write_config_file(path: str | Path, config: TrainConfig) -> Path:
    """Echo a TrainConfig as the plain-text key = value document."""
    lines = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(config, f.name)
        if f.name == "constraints":
            for cf in dataclasses.fields(ConstraintConfig):
                lines.append(f"{cf.name} = {getattr(value, cf.name)}")
        elif f.name == "policy_overrides":
            for k, v in value.items():
                lines.append(f"{k} = {v}")
        else:
            lines.append(f"{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)
