"""Canonical trajectory data model: ingestion, kinematics, normalization, windowing.

All quantities are in meters and seconds. Trajectories are stored as
``(T, K, 2)`` float64 arrays (time, agent slot, xy). Velocity and
acceleration are backward differences of position, matching the
differencing convention used by the constraint penalties:
``vel_t = (pos_t - pos_{t-1}) / dt``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "Sport",
    "Role",
    "PlaySequence",
    "Dataset",
    "TrackingParseError",
    "TrackingSchemaError",
    "COURT_BOUNDS",
    "court_bounds",
    "derive_kinematics",
    "ingest_tracking",
    "write_tracking",
    "export_csv",
    "normalize_attack_direction",
    "split_windows",
]

DEFAULT_FPS = 10
DEFAULT_BURN_IN = 20
DEFAULT_HORIZON = 60


class Sport(str, Enum):
    BASKETBALL = "basketball"
    SOCCER = "soccer"


class Role(str, Enum):
    DEFENSE = "defense"
    OFFENSE = "offense"
    BALL = "ball"


# Full-court extents (meters), origin at one corner.
COURT_BOUNDS: dict[Sport, tuple[tuple[float, float], tuple[float, float]]] = {
    Sport.BASKETBALL: ((0.0, 0.0), (28.65, 15.24)),
    Sport.SOCCER: ((0.0, 0.0), (105.0, 68.0)),
}


def court_bounds(sport: Sport | str) -> tuple[tuple[float, float], tuple[float, float]]:
    try:
        return COURT_BOUNDS[Sport(sport)]
    except (KeyError, ValueError):
        raise ValueError(f"unknown sport: {sport!r}") from None


class TrackingParseError(ValueError):
    """A tracking record could not be parsed."""


class TrackingSchemaError(ValueError):
    """A tracking record violates the file schema."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def derive_kinematics(positions: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward-difference velocity and acceleration of a position track.

    The first velocity and the first two accelerations are copied from the
    earliest computable entry so the outputs match the input length.

    Args:
        positions: (T, 2) or (T, K, 2) positions in meters.
        dt: sampling interval in seconds, > 0.

    Returns:
        (velocities, accelerations) with the same shape as ``positions``.

    Raises:
        ValueError: if T < 3 or dt <= 0.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] < 3:
        raise ValueError(f"need at least 3 frames to derive kinematics, got {positions.shape[0]}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    vel = np.empty_like(positions)
    vel[1:] = (positions[1:] - positions[:-1]) / dt
    vel[0] = vel[1]
    acc = np.empty_like(positions)
    acc[2:] = (vel[2:] - vel[1:-1]) / dt
    acc[0] = acc[1] = acc[2]
    return vel, acc


@dataclass(frozen=True)
class PlaySequence:
    """A fixed-rate multi-agent trajectory with per-slot roles.

    Arrays are read-only. Velocities/accelerations are backward differences
    of ``positions`` unless they were ingested directly.
    """

    sequence_id: str
    sport: Sport
    positions: np.ndarray  # (T, K, 2)
    velocities: np.ndarray
    accelerations: np.ndarray
    agent_roles: tuple[Role, ...]
    agent_ids: tuple[str, ...]
    fps: int = DEFAULT_FPS
    split: str = "train"
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions))
        object.__setattr__(self, "velocities", _frozen(self.velocities))
        object.__setattr__(self, "accelerations", _frozen(self.accelerations))
        object.__setattr__(self, "sport", Sport(self.sport))
        object.__setattr__(self, "agent_roles", tuple(Role(r) for r in self.agent_roles))
        object.__setattr__(self, "agent_ids", tuple(str(i) for i in self.agent_ids))
        T, K, d = self.positions.shape
        if d != 2:
            raise ValueError(f"positions must be (T, K, 2), got {self.positions.shape}")
        if self.velocities.shape != (T, K, 2) or self.accelerations.shape != (T, K, 2):
            raise ValueError("positions/velocities/accelerations shapes disagree")
        if len(self.agent_roles) != K or len(self.agent_ids) != K:
            raise ValueError("agent metadata length disagrees with agent count")
        if sum(r is Role.BALL for r in self.agent_roles) != 1:
            raise ValueError("exactly one ball slot required")
        for name in ("positions", "velocities", "accelerations"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} contain non-finite values")

    @classmethod
    def from_positions(cls, sequence_id, sport, positions, agent_roles, agent_ids=None,
                       fps=DEFAULT_FPS, split="train", metadata=None) -> "PlaySequence":
        """Build a sequence from raw positions, deriving kinematics."""
        positions = np.asarray(positions, dtype=np.float64)
        vel, acc = derive_kinematics(positions, 1.0 / fps)
        if agent_ids is None:
            agent_ids = tuple(f"a{i}" for i in range(positions.shape[1]))
        return cls(sequence_id, sport, positions, vel, acc, tuple(agent_roles),
                   tuple(agent_ids), fps, split, metadata or {})

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_agents(self) -> int:
        return self.positions.shape[1]

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    @property
    def ball_index(self) -> int:
        return next(i for i, r in enumerate(self.agent_roles) if r is Role.BALL)

    def role_indices(self, role: Role) -> list[int]:
        role = Role(role)
        return [i for i, r in enumerate(self.agent_roles) if r is role]

    def states(self) -> np.ndarray:
        """Per-agent state features: (T, K, 6) = [pos, vel, acc]."""
        return np.concatenate([self.positions, self.velocities, self.accelerations], axis=-1)


@dataclass(frozen=True)
class Dataset:
    """Train/val/test splits of play sequences sharing one sampling interval."""

    train: tuple[PlaySequence, ...] = ()
    val: tuple[PlaySequence, ...] = ()
    test: tuple[PlaySequence, ...] = ()
    dt: float = 1.0 / DEFAULT_FPS

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "val", tuple(self.val))
        object.__setattr__(self, "test", tuple(self.test))
        ids = [s.sequence_id for s in self.all_sequences()]
        if len(ids) != len(set(ids)):
            raise ValueError("sequence_ids must be unique across splits")

    def all_sequences(self) -> list[PlaySequence]:
        return [*self.train, *self.val, *self.test]

    @classmethod
    def from_sequences(cls, sequences, dt=1.0 / DEFAULT_FPS) -> "Dataset":
        splits = {"train": [], "val": [], "test": []}
        for s in sequences:
            splits.setdefault(s.split, splits["train"]).append(s)
        return cls(tuple(splits["train"]), tuple(splits["val"]), tuple(splits["test"]), dt)


def _parse_record(obj: dict, line_no: int) -> PlaySequence:
    try:
        sequence_id = obj["sequence_id"]
        sport = Sport(obj["sport"])
        fps = int(obj["fps"])
        agents = obj["agents"]
        frames = obj["frames"]
    except (KeyError, ValueError, TypeError) as e:
        raise TrackingParseError(f"line {line_no}: malformed record ({e})") from None
    split = obj.get("split", "train")
    roles = tuple(Role(a["role"]) for a in agents)
    ids = tuple(str(a["id"]) for a in agents)
    K = len(agents)
    for t, frame in enumerate(frames):
        if len(frame) != K:
            raise TrackingSchemaError(
                f"line {line_no}: frame {t} has {len(frame)} agents, expected {K}")
    positions = np.asarray(frames, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[-1] != 2:
        raise TrackingSchemaError(f"line {line_no}: frames are not (T, {K}, 2) coordinates")
    if not np.isfinite(positions).all():
        raise _FrameGap(f"line {line_no}: sequence {sequence_id!r} has missing/NaN coordinates")
    if positions.shape[0] < 3:
        raise _FrameGap(f"line {line_no}: sequence {sequence_id!r} too short ({positions.shape[0]} frames)")
    vel, acc = derive_kinematics(positions, 1.0 / fps)
    return PlaySequence(sequence_id, sport, positions, vel, acc, roles, ids, fps, split)


class _FrameGap(ValueError):
    pass


def ingest_tracking(path: str | Path, strict: bool = False) -> Dataset:
    """Read a JSON-Lines tracking file into a Dataset.

    Sequences with gaps (null/NaN coordinates) are dropped with a warning;
    in strict mode they raise instead. Malformed JSON or schema violations
    always raise.
    """
    path = Path(path)
    sequences = []
    dt = 1.0 / DEFAULT_FPS
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise TrackingParseError(f"line {line_no}: invalid JSON ({e.msg})") from None
            try:
                seq = _parse_record(obj, line_no)
            except _FrameGap as e:
                if strict:
                    raise TrackingSchemaError(str(e)) from None
                warnings.warn(f"dropping sequence: {e}", stacklevel=2)
                continue
            sequences.append(seq)
            dt = seq.dt
    return Dataset.from_sequences(sequences, dt=dt)


def _record_dict(seq: PlaySequence) -> dict:
    return {
        "sequence_id": seq.sequence_id,
        "sport": seq.sport.value,
        "fps": seq.fps,
        "split": seq.split,
        "agents": [{"id": i, "role": r.value} for i, r in zip(seq.agent_ids, seq.agent_roles)],
        "frames": [[[float(x), float(y)] for x, y in frame] for frame in seq.positions],
    }


def write_tracking(dataset: Dataset | list[PlaySequence], path: str | Path) -> Path:
    """Write sequences as canonical JSON Lines (one object per sequence)."""
    sequences = dataset.all_sequences() if isinstance(dataset, Dataset) else list(dataset)
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(json.dumps(_record_dict(seq), separators=(",", ":")) + "\n")
    return path


def export_csv(dataset: Dataset | list[PlaySequence], path: str | Path) -> Path:
    """Write a flat CSV mirror: sequence_id, t, agent_id, role, x, y."""
    sequences = dataset.all_sequences() if isinstance(dataset, Dataset) else list(dataset)
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("sequence_id,t,agent_id,role,x,y\n")
        for seq in sequences:
            for t in range(seq.n_frames):
                for k in range(seq.n_agents):
                    x, y = seq.positions[t, k]
                    fh.write(f"{seq.sequence_id},{t},{seq.agent_ids[k]},"
                             f"{seq.agent_roles[k].value},{x!r},{y!r}\n")
    return path


def normalize_attack_direction(seq: PlaySequence) -> PlaySequence:
    """Mirror the court in x so that the offense attacks leftward.

    If the offense's mean x displacement over the sequence is positive
    (moving right), all x coordinates are reflected about the court midline
    and x velocities/accelerations negated. Idempotent.
    """
    (x0, _), (x1, _) = court_bounds(seq.sport)
    offense = seq.role_indices(Role.OFFENSE)
    if not offense:
        return seq
    disp = float(np.mean(seq.positions[-1, offense, 0] - seq.positions[0, offense, 0]))
    if disp <= 0:
        return seq
    mid = 0.5 * (x0 + x1)
    pos = seq.positions.copy()
    vel = seq.velocities.copy()
    acc = seq.accelerations.copy()
    pos[..., 0] = 2.0 * mid - pos[..., 0]
    vel[..., 0] = -vel[..., 0]
    acc[..., 0] = -acc[..., 0]
    return replace(seq, positions=pos, velocities=vel, accelerations=acc)


def split_windows(dataset: Dataset, burn_in: int = DEFAULT_BURN_IN,
                  horizon: int = DEFAULT_HORIZON) -> Dataset:
    """Cut every sequence into non-overlapping windows of burn_in + horizon frames.

    Tails shorter than one window are dropped (a warning is emitted when a
    sequence yields no window at all). Kinematics are sliced from the full
    sequence, so window-initial velocities stay true backward differences.
    """
    if burn_in < 1 or horizon < 1:
        raise ValueError(f"burn_in and horizon must be >= 1, got {burn_in}, {horizon}")
    length = burn_in + horizon

    def cut(seq: PlaySequence) -> list[PlaySequence]:
        n = seq.n_frames // length
        if n == 0:
            warnings.warn(
                f"sequence {seq.sequence_id!r} shorter than one window "
                f"({seq.n_frames} < {length}); dropped", stacklevel=3)
        out = []
        for i in range(n):
            sl = slice(i * length, (i + 1) * length)
            out.append(replace(
                seq,
                sequence_id=f"{seq.sequence_id}#w{i}",
                positions=seq.positions[sl],
                velocities=seq.velocities[sl],
                accelerations=seq.accelerations[sl],
            ))
        return out

    return Dataset(
        train=tuple(w for s in dataset.train for w in cut(s)),
        val=tuple(w for s in dataset.val for w in cut(s)),
        test=tuple(w for s in dataset.test for w in cut(s)),
        dt=dataset.dt,
    )
