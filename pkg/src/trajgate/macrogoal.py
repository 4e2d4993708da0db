"""Court-grid macro-goals: weak labels from stationary segments and a recurrent predictor.

A macro-goal is a one-hot court-grid cell encoding an agent's long-term
positional intent. Labels are produced programmatically: every timestep
is labeled with the cell of the next segment where the agent stays below
a speed threshold for a minimum hold time (the tail with no future stop
takes the final position's cell).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import PlaySequence, Role, Sport

__all__ = [
    "GridSpec",
    "stationary_segments",
    "label_macro_goals",
    "MacroGoalNet",
]

FEET = 0.3048

DEFAULT_SPEED_THRESHOLD = 0.5  # m/s
DEFAULT_MIN_HOLD = 0.5         # s


@dataclass(frozen=True)
class GridSpec:
    """Row-major court grid; rows index y, cols index x."""

    rows: int
    cols: int
    cell_width: float   # x extent of one cell, meters
    cell_height: float  # y extent of one cell, meters
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one row and column")
        if self.cell_width <= 0 or self.cell_height <= 0:
            raise ValueError("cell sizes must be positive")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def extent(self) -> tuple[float, float]:
        return self.cols * self.cell_width, self.rows * self.cell_height

    @classmethod
    def basketball(cls) -> "GridSpec":
        """Half-court grid: 10 x 9 cells of 5 x 5 feet."""
        return cls(rows=10, cols=9, cell_width=5 * FEET, cell_height=5 * FEET)

    @classmethod
    def soccer(cls) -> "GridSpec":
        """Full-pitch grid: 34 x 22 cells of roughly 3 x 3 m (34 along the length)."""
        return cls(rows=22, cols=34, cell_width=105.0 / 34, cell_height=68.0 / 22)

    @classmethod
    def for_sport(cls, sport: Sport | str) -> "GridSpec":
        sport = Sport(sport)
        return cls.basketball() if sport is Sport.BASKETBALL else cls.soccer()

    @classmethod
    def from_bounds(cls, bounds, rows: int, cols: int) -> "GridSpec":
        """Grid tiling an axis-aligned rectangle with rows x cols cells."""
        (x0, y0), (x1, y1) = bounds
        return cls(rows=rows, cols=cols, cell_width=(x1 - x0) / cols,
                   cell_height=(y1 - y0) / rows, origin=(x0, y0))

    def cell_index(self, position) -> np.ndarray:
        """Row-major cell index of a point; out-of-bounds points clamp to the edge."""
        p = np.asarray(position, dtype=np.float64)
        x = p[..., 0] - self.origin[0]
        y = p[..., 1] - self.origin[1]
        c = np.clip(np.floor(x / self.cell_width).astype(np.int64), 0, self.cols - 1)
        r = np.clip(np.floor(y / self.cell_height).astype(np.int64), 0, self.rows - 1)
        return r * self.cols + c

    def cell_center(self, index) -> np.ndarray:
        """Center point of a row-major cell index (inverse of cell_index on centers)."""
        idx = np.asarray(index, dtype=np.int64)
        if (idx < 0).any() or (idx >= self.n_cells).any():
            raise ValueError("cell index out of range")
        r, c = idx // self.cols, idx % self.cols
        x = self.origin[0] + (c + 0.5) * self.cell_width
        y = self.origin[1] + (r + 0.5) * self.cell_height
        return np.stack([x, y], axis=-1)


def stationary_segments(speed: np.ndarray, min_hold_steps: int) -> list[tuple[int, int]]:
    """Maximal index runs [start, end] where speed stays below threshold-marked True.

    ``speed`` is a boolean mask here; runs shorter than ``min_hold_steps``
    are discarded.
    """
    segments = []
    start = None
    for t, flag in enumerate(speed):
        if flag and start is None:
            start = t
        elif not flag and start is not None:
            if t - start >= min_hold_steps:
                segments.append((start, t - 1))
            start = None
    if start is not None and len(speed) - start >= min_hold_steps:
        segments.append((start, len(speed) - 1))
    return segments


def label_macro_goals(seq: PlaySequence, grid: GridSpec,
                      speed_threshold: float = DEFAULT_SPEED_THRESHOLD,
                      min_hold: float = DEFAULT_MIN_HOLD) -> np.ndarray:
    """Weak macro-goal labels for every defender: (T, n_defenders) cell indices.

    Each timestep t is labeled with the cell of the mean position of the
    next stationary segment ending at or after t; timesteps after the last
    stationary segment are labeled with the final position's cell.
    """
    defenders = seq.role_indices(Role.DEFENSE)
    min_hold_steps = max(1, int(round(min_hold * seq.fps)))
    T = seq.n_frames
    labels = np.empty((T, len(defenders)), dtype=np.int64)
    for j, k in enumerate(defenders):
        speed = np.linalg.norm(seq.velocities[:, k], axis=1)
        segs = stationary_segments(speed < speed_threshold, min_hold_steps)
        fallback = int(grid.cell_index(seq.positions[-1, k]))
        col = np.full(T, fallback, dtype=np.int64)
        for start, end in reversed(segs):
            cell = int(grid.cell_index(seq.positions[start:end + 1, k].mean(axis=0)))
            col[:end + 1] = cell
        labels[:, j] = col
    return labels


class MacroGoalNet(nn.Module):
    """Recurrent macro-goal predictor: GRU over observation vectors, categorical head."""

    def __init__(self, obs_dim: int, n_cells: int, hidden: int = 100, layers: int = 2,
                 head_hidden: int = 64, dropout: float = 0.5, bias: bool = True):
        super().__init__()
        self.n_cells = n_cells
        self.hidden = hidden
        self.layers = layers
        self.gru = nn.GRU(obs_dim, hidden, num_layers=layers, bias=bias)
        if head_hidden > 0:
            self.head = nn.Sequential(
                nn.Linear(hidden, head_hidden, bias=bias),
                nn.BatchNorm1d(head_hidden),
                nn.ReLU(),
                nn.Dropout(dropout),
                nn.Linear(head_hidden, n_cells, bias=bias),
            )
        else:
            self.head = nn.Linear(hidden, n_cells, bias=bias)

    def initial_state(self, batch: int, dtype=None, device=None) -> torch.Tensor:
        p = next(self.parameters())
        return torch.zeros(self.layers, batch, self.hidden,
                           dtype=dtype or p.dtype, device=device or p.device)

    def step(self, h_g: torch.Tensor, o_prev: torch.Tensor
             ) -> tuple[torch.Tensor, torch.Tensor]:
        """One recurrent update: returns (cell logits (B, n_cells), new state)."""
        out, h_next = self.gru(o_prev.unsqueeze(0), h_g)
        return self.head(out.squeeze(0)), h_next

    def sample(self, logits: torch.Tensor, generator: torch.Generator | None = None,
               greedy: bool = False) -> torch.Tensor:
        """One-hot macro-goal sample (greedy: argmax) from head logits."""
        if greedy:
            idx = logits.argmax(dim=-1, keepdim=True)
        else:
            probs = torch.softmax(logits.detach(), dim=-1)
            idx = torch.multinomial(probs, 1, generator=generator)
        return torch.zeros_like(logits).scatter_(-1, idx, 1.0)
