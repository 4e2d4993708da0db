"""Binary partial observation: per-agent embeddings gated by Gumbel-Softmax samples.

Each agent slot's raw state is linearly projected twice: into an embedding
block (which can be masked, unlike raw coordinates) and into a dual-channel
logit pair. A Gumbel-Softmax sample across the two channels yields the
gate coefficient for that slot (channel 0 of the relaxed pair); the
observation vector is the concatenation of gate-weighted embedding blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

__all__ = [
    "gumbel_noise",
    "gumbel_softmax",
    "ObservationEncoder",
    "binary_gate",
    "observe",
    "ObservationOverride",
    "force_observation",
]

_U_EPS = 1e-12


def gumbel_noise(shape, generator: torch.Generator | None = None,
                 dtype=torch.float32) -> torch.Tensor:
    """Standard Gumbel(0,1) noise: -log(-log(u)), u uniform clamped away from {0,1}."""
    u = torch.rand(shape, generator=generator, dtype=dtype)
    u = u.clamp(_U_EPS, 1.0 - _U_EPS)
    return -torch.log(-torch.log(u))


def gumbel_softmax(logits: torch.Tensor, tau: float = 1.0, hard: bool = False,
                   generator: torch.Generator | None = None,
                   noise: torch.Tensor | None = None) -> torch.Tensor:
    """Differentiable sample from the Gumbel-Softmax relaxation of a categorical.

    softmax((logits + g) / tau) with g ~ Gumbel(0,1) i.i.d. With
    ``hard=True`` the sample is snapped to the one-hot argmax while
    gradients follow the relaxed sample (straight-through). ``noise``
    lets callers fix the Gumbel draw (finite-difference checks, replays).

    Raises:
        ValueError: if tau <= 0.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if noise is None:
        noise = gumbel_noise(logits.shape, generator=generator, dtype=logits.dtype)
    y = torch.softmax((logits + noise) / tau, dim=-1)
    if hard:
        index = y.argmax(dim=-1, keepdim=True)
        y_hard = torch.zeros_like(y).scatter_(-1, index, 1.0)
        y = y_hard - y.detach() + y
    return y


class ObservationEncoder(nn.Module):
    """Per-slot linear maps: state -> embedding block and state -> gate logits."""

    def __init__(self, n_agents: int, state_dim: int, embed_dim: int,
                 tau: float = 1.0, bias: bool = True):
        super().__init__()
        if embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.embed_dim = embed_dim
        self.tau = tau
        scale = 1.0 / np.sqrt(state_dim)
        self.embed_weight = nn.Parameter(torch.empty(n_agents, embed_dim, state_dim).uniform_(-scale, scale))
        self.gate_weight = nn.Parameter(torch.empty(n_agents, 2, state_dim).uniform_(-scale, scale))
        if bias:
            self.embed_bias = nn.Parameter(torch.zeros(n_agents, embed_dim))
            self.gate_bias = nn.Parameter(torch.zeros(n_agents, 2))
        else:
            self.register_parameter("embed_bias", None)
            self.register_parameter("gate_bias", None)

    @property
    def obs_dim(self) -> int:
        return self.n_agents * self.embed_dim

    def embed(self, states: torch.Tensor) -> torch.Tensor:
        """(..., K, d_s) -> (..., K, d_e), independent map per slot."""
        out = torch.einsum("...kd,ked->...ke", states, self.embed_weight)
        if self.embed_bias is not None:
            out = out + self.embed_bias
        return out

    def gate_logits(self, states: torch.Tensor) -> torch.Tensor:
        """(..., K, d_s) -> (..., K, 2) dual-channel logits per slot."""
        out = torch.einsum("...kd,kcd->...kc", states, self.gate_weight)
        if self.gate_bias is not None:
            out = out + self.gate_bias
        return out


def binary_gate(states: torch.Tensor, encoder: ObservationEncoder, hard: bool = False,
                generator: torch.Generator | None = None,
                noise: torch.Tensor | None = None) -> torch.Tensor:
    """Per-agent gate coefficients b in [0,1]^K ({0,1}^K when hard).

    A Gumbel-Softmax sample is taken across each slot's two channels and
    channel 0 is kept; the channels are complementary so one suffices.
    Each slot's gate depends only on that slot's features.
    """
    logits = encoder.gate_logits(states)
    pair = gumbel_softmax(logits, tau=encoder.tau, hard=hard,
                          generator=generator, noise=noise)
    return pair[..., 0]


def observe(b: torch.Tensor, states: torch.Tensor,
            encoder: ObservationEncoder) -> torch.Tensor:
    """Gated observation vector: concat_k b_k * embed(state_k), shape (..., K*d_e)."""
    f = encoder.embed(states)
    gated = b.unsqueeze(-1) * f
    return gated.reshape(*gated.shape[:-2], encoder.obs_dim)


@dataclass(frozen=True)
class ObservationOverride:
    """Forced gate values consumed verbatim by rollouts.

    Exactly one of the three modes is active:

    * ``vector``   - one fixed length-K gate used at every step,
    * ``schedule`` - per-step gates, shape (T-1, K),
    * ``top_one``  - one-hot at the model's own highest coefficient, per step.
    """

    vector: tuple[float, ...] | None = None
    schedule: tuple[tuple[float, ...], ...] | None = None
    top_one: bool = False

    def __post_init__(self):
        active = sum((self.vector is not None, self.schedule is not None, self.top_one))
        if active != 1:
            raise ValueError("exactly one override mode must be set")

    @classmethod
    def fixed(cls, b) -> "ObservationOverride":
        return cls(vector=tuple(float(x) for x in np.asarray(b).ravel()))

    @classmethod
    def from_schedule(cls, schedule) -> "ObservationOverride":
        arr = np.asarray(schedule, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("schedule must be (T-1, K)")
        return cls(schedule=tuple(tuple(row) for row in arr))

    @classmethod
    def one_hot_top(cls) -> "ObservationOverride":
        return cls(top_one=True)

    def resolve(self, step: int, model_b: torch.Tensor) -> torch.Tensor:
        """Gate to use at ``step`` given the model's own sample (..., K)."""
        K = model_b.shape[-1]
        if self.top_one:
            index = model_b.argmax(dim=-1, keepdim=True)
            return torch.zeros_like(model_b).scatter_(-1, index, 1.0)
        if self.vector is not None:
            if len(self.vector) != K:
                raise ValueError(f"override length {len(self.vector)} != K={K}")
            row = self.vector
        else:
            if step >= len(self.schedule):
                raise ValueError(f"override schedule too short for step {step}")
            row = self.schedule[step]
            if len(row) != K:
                raise ValueError(f"override row length {len(row)} != K={K}")
        out = model_b.new_tensor(row)
        return out.expand_as(model_b).clone()


def force_observation(b_override) -> ObservationOverride:
    """Wrap an explicit gate vector or (T-1, K) schedule as an override handle."""
    arr = np.asarray(b_override, dtype=np.float64)
    if arr.ndim == 1:
        return ObservationOverride.fixed(arr)
    return ObservationOverride.from_schedule(arr)
