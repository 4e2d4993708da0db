"""Rollout evaluation: L2 errors, acceleration plausibility, observation statistics.

Prediction error follows the mean/best-of-N convention: for each sampled
trajectory the L2 error is the Euclidean norm of the pointwise error
averaged over time (and agents, when more than one is scored); the mean
and the minimum over the N samples are then aggregated with a standard
deviation across test windows.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import PlaySequence
from .policy import RolloutResult

__all__ = [
    "DimMetrics",
    "ObservationStats",
    "MetricReport",
    "l2_per_sample",
    "l2_metrics",
    "evaluate_rollout",
    "accel_stats",
    "observation_stats",
    "velocity_baseline",
    "aggregate_reports",
]

DIMS = ("pos", "vel", "acc")


@dataclass(frozen=True)
class DimMetrics:
    """Mean/best L2 over the N samples of one window, one kinematic dimension."""

    mean: float
    best: float


def l2_per_sample(samples: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-sample L2 error: norm of the error averaged over all scored points.

    Args:
        samples: (N, T, c) or (N, T, K, c) predictions.
        truth: matching shape without the leading N axis.

    Raises:
        ValueError: on shape mismatch or empty sample set.
    """
    samples = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if samples.ndim < 2 or samples.shape[1:] != truth.shape:
        raise ValueError(f"shape mismatch: samples {samples.shape} vs truth {truth.shape}")
    if samples.shape[0] < 1:
        raise ValueError("need at least one sample")
    err = np.linalg.norm(samples - truth[None], axis=-1)  # (N, T[, K])
    return err.reshape(err.shape[0], -1).mean(axis=1)


def l2_metrics(samples: np.ndarray, truth: np.ndarray) -> DimMetrics:
    per = l2_per_sample(samples, truth)
    return DimMetrics(mean=float(per.mean()), best=float(per.min()))


def evaluate_rollout(result: RolloutResult) -> dict[str, DimMetrics]:
    """Mean/best L2 per kinematic dimension over the generated horizon."""
    sl = slice(result.burn_in, None)
    return {
        "pos": l2_metrics(result.positions[:, sl], result.truth_positions[sl]),
        "vel": l2_metrics(result.velocities[:, sl], result.truth_velocities[sl]),
        "acc": l2_metrics(result.accelerations[:, sl], result.truth_accelerations[sl]),
    }


def _box_summary(values: np.ndarray) -> dict[str, float]:
    values = np.asarray(values, dtype=np.float64).ravel()
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    lo = values[values >= q1 - 1.5 * iqr].min()
    hi = values[values <= q3 + 1.5 * iqr].max()
    return {"q1": float(q1), "median": float(med), "q3": float(q3),
            "whisker_lo": float(lo), "whisker_hi": float(hi),
            "mean": float(values.mean())}


def accel_stats(accelerations: np.ndarray) -> dict[str, dict[str, float]]:
    """Boxplot summaries of per-step ||acc|| and ||acc_t - acc_{t-1}||.

    Accepts (T, c) or (N, T, c); steps pool across samples.
    """
    acc = np.asarray(accelerations, dtype=np.float64)
    if acc.ndim == 2:
        acc = acc[None]
    norms = np.linalg.norm(acc, axis=-1)
    jerk = np.linalg.norm(np.diff(acc, axis=1), axis=-1)
    return {"acc_norm": _box_summary(norms), "jerk_norm": _box_summary(jerk)}


@dataclass(frozen=True)
class ObservationStats:
    """Gate-count and observed-distance statistics pooled over steps."""

    count_mean: float
    count_sd: float
    farthest_mean: float
    farthest_sd: float
    nearest_k_mean: float
    nearest_k_sd: float
    n_steps: int
    n_distance_steps: int


def observation_stats(b_log: np.ndarray, agent_positions: np.ndarray,
                      role_slot: int) -> ObservationStats:
    """Statistics of hard gate logs against the agent geometry.

    Per step: the gate count is the plain sum of the binary vector; the
    farthest-observed distance is the largest distance from the subject to
    a gated-on agent other than itself; the rule-based reference is the
    distance to the count-th nearest other agent (same-order nearest
    rule), the order clamped to the number of other agents. Steps whose
    gates select no other agent contribute to the count statistics only.

    Args:
        b_log: (T, K) or (N, T, K) hard gates.
        agent_positions: (T, K, 2) positions aligned with the gate steps.
        role_slot: the subject agent's slot.
    """
    b = np.asarray(b_log, dtype=np.float64)
    if b.ndim == 2:
        b = b[None]
    N, T, K = b.shape
    pos = np.asarray(agent_positions, dtype=np.float64)[:T]
    counts = b.sum(axis=-1).ravel()
    others = [k for k in range(K) if k != role_slot]
    dists = np.linalg.norm(pos[:, others] - pos[:, role_slot:role_slot + 1], axis=-1)  # (T, K-1)
    order = np.sort(dists, axis=1)
    farthest, nearest_k = [], []
    for n in range(N):
        for t in range(T):
            on = b[n, t, others] > 0.5
            if not on.any():
                continue
            farthest.append(dists[t][on].max())
            k_th = min(int(round(b[n, t].sum())), len(others))
            nearest_k.append(order[t, max(k_th, 1) - 1])
    farthest = np.asarray(farthest)
    nearest_k = np.asarray(nearest_k)
    return ObservationStats(
        count_mean=float(counts.mean()), count_sd=float(counts.std()),
        farthest_mean=float(farthest.mean()) if farthest.size else float("nan"),
        farthest_sd=float(farthest.std()) if farthest.size else float("nan"),
        nearest_k_mean=float(nearest_k.mean()) if nearest_k.size else float("nan"),
        nearest_k_sd=float(nearest_k.std()) if nearest_k.size else float("nan"),
        n_steps=int(counts.size), n_distance_steps=int(farthest.size),
    )


def velocity_baseline(window: PlaySequence, role_slot: int, burn_in: int = 20,
                      horizon: int = 60) -> RolloutResult:
    """Constant-velocity extrapolation packaged as a single-sample rollout.

    From the last burn-in frame onward the velocity is frozen at its last
    observed value, positions integrate it, and the predicted acceleration
    is zero.
    """
    if burn_in < 2:
        raise ValueError("burn_in must be >= 2 for an observed velocity")
    T = burn_in + horizon
    if window.n_frames < T:
        raise ValueError(f"window has {window.n_frames} frames; {T} required")
    dt = window.dt
    pos = window.positions[:T, role_slot].copy()
    vel = window.velocities[:T, role_slot].copy()
    acc = window.accelerations[:T, role_slot].copy()
    v_last = vel[burn_in - 1].copy()
    for t in range(burn_in, T):
        vel[t] = v_last
        acc[t] = 0.0
        pos[t] = pos[t - 1] + v_last * dt
    K = window.n_agents
    return RolloutResult(
        positions=pos[None], velocities=vel[None], accelerations=acc[None],
        b_log=np.zeros((1, T - 1, K)), g_log=np.full((1, T - 1), -1, dtype=np.int64),
        truth_positions=window.positions[:T, role_slot].copy(),
        truth_velocities=window.velocities[:T, role_slot].copy(),
        truth_accelerations=window.accelerations[:T, role_slot].copy(),
        agent_positions=np.asarray(window.positions[:T]).copy(),
        burn_in=burn_in, dt=dt, role_slot=role_slot,
    )


@dataclass(frozen=True)
class MetricReport:
    """Aggregated evaluation over a set of test windows (mean +/- sd)."""

    n_windows: int
    mean_l2: dict[str, tuple[float, float]]
    best_l2: dict[str, tuple[float, float]]
    accel: dict[str, dict[str, float]]
    observation: ObservationStats | None = None

    def to_json(self, path: str | Path | None = None) -> str:
        payload = {
            "n_windows": self.n_windows,
            "mean_l2": {d: list(v) for d, v in self.mean_l2.items()},
            "best_l2": {d: list(v) for d, v in self.best_l2.items()},
            "accel": self.accel,
            "observation": asdict(self.observation) if self.observation else None,
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def to_table(self) -> str:
        lines = [f"{'':14s}{'position':>18s}{'velocity':>18s}{'acceleration':>18s}"]
        for label, source in (("mean L2", self.mean_l2), ("best L2", self.best_l2)):
            cells = [f"{source[d][0]:.3f} +/- {source[d][1]:.3f}" for d in DIMS]
            lines.append(f"{label:14s}" + "".join(f"{c:>18s}" for c in cells))
        a = self.accel
        lines.append(f"acc norm median {a['acc_norm']['median']:.3f}  "
                     f"jerk norm median {a['jerk_norm']['median']:.3f}")
        if self.observation is not None:
            o = self.observation
            lines.append(
                f"gate count {o.count_mean:.2f} +/- {o.count_sd:.2f}; "
                f"farthest observed {o.farthest_mean:.2f} +/- {o.farthest_sd:.2f} m; "
                f"same-order nearest {o.nearest_k_mean:.2f} +/- {o.nearest_k_sd:.2f} m")
        return "\n".join(lines)


def aggregate_reports(per_window: list[dict[str, DimMetrics]],
                      accel_samples: np.ndarray | list,
                      observation: ObservationStats | None = None) -> MetricReport:
    """Aggregate per-window metrics into a report with sd over windows."""
    if not per_window:
        raise ValueError("no windows to aggregate")
    mean_l2, best_l2 = {}, {}
    for d in DIMS:
        means = np.array([m[d].mean for m in per_window])
        bests = np.array([m[d].best for m in per_window])
        mean_l2[d] = (float(means.mean()), float(means.std()))
        best_l2[d] = (float(bests.mean()), float(bests.std()))
    acc_pool = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1, *np.asarray(a).shape[-2:])
                               for a in accel_samples], axis=0) if isinstance(accel_samples, list) \
        else np.asarray(accel_samples)
    return MetricReport(n_windows=len(per_window), mean_l2=mean_l2, best_l2=best_l2,
                        accel=accel_stats(acc_pool), observation=observation)
