"""Synthetic multi-agent benchmark with known smooth dynamics and planted observation structure.

Attackers (and the ball) chain minimum-jerk segments between random
waypoints; each defender chases the midpoint of its designated attacker and
the ball, re-aimed at every segment boundary. The generator returns the
ground-truth observation mask (designated attacker, ball, self per
defender) so that gate-recovery analyses have a known target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import Dataset, PlaySequence, Role, Sport, derive_kinematics, write_tracking

__all__ = ["ScenarioSpec", "min_jerk_segment", "generate_scenario", "generate_dataset",
           "write_scenarios"]


def min_jerk_segment(x0, xf, duration: float, dt: float) -> np.ndarray:
    """Minimum-jerk position profile from x0 to xf, both endpoints at rest.

    x(tau) = x0 + (xf - x0) * (10 tau^3 - 15 tau^4 + 6 tau^5), tau = t/duration.
    Returns positions sampled at 0, dt, ..., duration inclusive
    (round(duration/dt) + 1 rows).

    Raises:
        ValueError: if duration < 2 * dt.
    """
    if duration < 2 * dt:
        raise ValueError(f"duration {duration} must be at least 2*dt = {2 * dt}")
    x0 = np.asarray(x0, dtype=np.float64)
    xf = np.asarray(xf, dtype=np.float64)
    n = int(round(duration / dt))
    tau = np.arange(n + 1, dtype=np.float64) * dt / duration
    s = 10.0 * tau**3 - 15.0 * tau**4 + 6.0 * tau**5
    return x0 + np.outer(s, xf - x0)


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one synthetic play.

    ``tracking_map[d]`` is the attacker index (0-based among attackers)
    that defender d keys on; it must assign every defender exactly one
    attacker.
    """

    n_defenders: int = 5
    n_attackers: int = 5
    bounds: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 0.0), (15.0, 15.0))
    segment_duration: tuple[float, float] = (1.0, 2.5)
    tracking_map: tuple[int, ...] = ()
    noise_scale: float = 0.02
    seed: int = 0
    total_duration: float = 8.0
    fps: int = 10
    sport: Sport = Sport.BASKETBALL

    def __post_init__(self):
        if not self.tracking_map:
            object.__setattr__(
                self, "tracking_map",
                tuple(d % self.n_attackers for d in range(self.n_defenders)))
        if len(self.tracking_map) != self.n_defenders:
            raise ValueError("tracking_map must assign every defender")
        if any(not (0 <= a < self.n_attackers) for a in self.tracking_map):
            raise ValueError("tracking_map entries must be valid attacker indices")
        lo, hi = self.segment_duration
        if not (0 < lo <= hi):
            raise ValueError("segment_duration must be an increasing positive range")

    @property
    def n_agents(self) -> int:
        return self.n_defenders + self.n_attackers + 1

    @property
    def n_frames(self) -> int:
        return int(round(self.total_duration * self.fps))


def _clamp(p: np.ndarray, bounds) -> np.ndarray:
    (x0, y0), (x1, y1) = bounds
    return np.clip(p, [x0, y0], [x1, y1])


def _chain_waypoints(start, rng, spec: ScenarioSpec, n_frames: int) -> np.ndarray:
    """Chain min-jerk segments between uniform random waypoints for n_frames."""
    dt = 1.0 / spec.fps
    lo, hi = spec.segment_duration
    (x0, y0), (x1, y1) = spec.bounds
    pos = [np.asarray(start, dtype=np.float64)]
    cur = pos[0]
    while len(pos) < n_frames:
        duration = max(rng.uniform(lo, hi), 2 * dt)
        target = _clamp(rng.uniform([x0, y0], [x1, y1]), spec.bounds)
        seg = min_jerk_segment(cur, target, round(duration / dt) * dt, dt)
        pos.extend(seg[1:])
        cur = seg[-1]
    return np.asarray(pos[:n_frames])


def _chase(targets: np.ndarray, start, rng, spec: ScenarioSpec) -> np.ndarray:
    """Min-jerk pursuit of a moving target point, re-aimed per segment."""
    dt = 1.0 / spec.fps
    lo, hi = spec.segment_duration
    n_frames = targets.shape[0]
    pos = [np.asarray(start, dtype=np.float64)]
    cur = pos[0]
    t = 0
    while len(pos) < n_frames:
        duration = max(rng.uniform(lo, hi), 2 * dt)
        n_steps = int(round(duration / dt))
        goal = _clamp(targets[min(t, n_frames - 1)], spec.bounds)
        seg = min_jerk_segment(cur, goal, n_steps * dt, dt)
        pos.extend(seg[1:])
        cur = seg[-1]
        t += n_steps
    return np.asarray(pos[:n_frames])


def generate_scenario(spec: ScenarioSpec) -> tuple[PlaySequence, np.ndarray]:
    """Generate one play and its planted observation mask.

    Agent slot order is [defenders..., attackers..., ball]. The mask is a
    (n_defenders, n_agents) 0/1 array marking {designated attacker, ball,
    self} for each defender.

    Deterministic in ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    n_frames = spec.n_frames
    (bx0, by0), (bx1, by1) = spec.bounds

    starts = rng.uniform([bx0, by0], [bx1, by1], size=(spec.n_agents, 2))
    attackers = np.stack(
        [_chain_waypoints(starts[spec.n_defenders + a], rng, spec, n_frames)
         for a in range(spec.n_attackers)], axis=1)  # (T, n_att, 2)
    ball = _chain_waypoints(starts[-1], rng, spec, n_frames)  # (T, 2)

    defenders = []
    for d in range(spec.n_defenders):
        midpoint = 0.5 * (attackers[:, spec.tracking_map[d]] + ball)
        defenders.append(_chase(midpoint, starts[d], rng, spec))
    defenders = np.stack(defenders, axis=1)  # (T, n_def, 2)

    positions = np.concatenate([defenders, attackers, ball[:, None]], axis=1)
    if spec.noise_scale > 0:
        positions = positions + rng.normal(0.0, spec.noise_scale, size=positions.shape)
        positions = _clamp(positions, spec.bounds)

    roles = ([Role.DEFENSE] * spec.n_defenders + [Role.OFFENSE] * spec.n_attackers
             + [Role.BALL])
    ids = ([f"d{i}" for i in range(spec.n_defenders)]
           + [f"o{i}" for i in range(spec.n_attackers)] + ["ball"])
    vel, acc = derive_kinematics(positions, 1.0 / spec.fps)
    seq = PlaySequence(f"synth-{spec.seed}", spec.sport, positions, vel, acc,
                       tuple(roles), tuple(ids), spec.fps,
                       metadata={"tracking_map": list(spec.tracking_map)})

    mask = np.zeros((spec.n_defenders, spec.n_agents), dtype=np.int64)
    for d in range(spec.n_defenders):
        mask[d, d] = 1                                      # self
        mask[d, spec.n_defenders + spec.tracking_map[d]] = 1  # designated attacker
        mask[d, spec.n_agents - 1] = 1                        # ball
    return seq, mask


def generate_dataset(spec: ScenarioSpec, n_train: int, n_val: int, n_test: int
                     ) -> tuple[Dataset, np.ndarray]:
    """Generate disjoint train/val/test scenarios from consecutive seeds."""
    mask = None
    splits = {"train": [], "val": [], "test": []}
    seed = spec.seed
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        for _ in range(count):
            seq, mask = generate_scenario(replace(spec, seed=seed))
            splits[split].append(replace(seq, split=split))
            seed += 1
    ds = Dataset(tuple(splits["train"]), tuple(splits["val"]), tuple(splits["test"]),
                 dt=1.0 / spec.fps)
    return ds, mask


def write_scenarios(dataset: Dataset, mask: np.ndarray, path: str | Path) -> tuple[Path, Path]:
    """Write the tracking file plus the ``*.mask.json`` sidecar."""
    path = Path(path)
    write_tracking(dataset, path)
    mask_path = path.with_suffix(path.suffix + ".mask.json") if path.suffix != ".jsonl" \
        else path.with_name(path.stem + ".mask.json")
    mask_path.write_text(json.dumps({"mask": mask.tolist()}, separators=(",", ":")) + "\n")
    return path, mask_path
