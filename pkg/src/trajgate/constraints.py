"""Mechanical-constraint penalties linking decoder output dimensions.

The decoder emits diagonal Gaussians over velocity and acceleration.
Three physical/biomechanical penalties tie those predictions together and
to the eliminated position dimension, plus an extra acceleration
reconstruction term:

* ``kl_acc``   - KL(direct acceleration || acceleration implied by
  differencing consecutive velocity predictions).
* ``pos_nll``  - NLL of the true next position under the position implied
  by integrating the predicted velocity from the previous true position.
* ``jerk_nll`` - NLL of the true acceleration one step further ahead under
  the current direct acceleration prediction (smoothness surrogate).
* ``acc_recon`` - NLL of the true acceleration under the direct prediction.

Consecutive decoder outputs are treated as independent Gaussians when
differencing, which inflates the indirect variance; there is no joint
model of consecutive steps to do better with.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch

__all__ = [
    "ConstraintConfig",
    "PenaltyTerms",
    "gaussian_kl",
    "gaussian_nll",
    "indirect_acc_distribution",
    "indirect_pos_distribution",
    "mechanical_penalties",
    "PRESETS",
    "SPORT_LAMBDAS",
]

LOG_2PI = 1.8378770664093453

# Default regularization weights per sport: (acc, pos, jrk, rec).
SPORT_LAMBDAS = {
    "basketball": (0.1, 0.01, 0.1, 0.2),
    "soccer": (0.01, 0.001, 0.01, 0.02),
}

# Ablation presets: which penalty terms are active.
PRESETS = {
    "vrnn": (),
    "c_pos": ("pos",),
    "c_pos_acc": ("pos", "acc"),
    "c_pos_acc_jrk": ("pos", "acc", "jrk"),
    "mech": ("pos", "acc", "jrk", "rec"),
}


@dataclass(frozen=True)
class ConstraintConfig:
    """Penalty weights and per-term enable flags."""

    lambda_acc: float = 0.1
    lambda_pos: float = 0.01
    lambda_jrk: float = 0.1
    lambda_rec: float = 0.2
    enable_acc: bool = True
    enable_pos: bool = True
    enable_jrk: bool = True
    enable_rec: bool = True

    def __post_init__(self):
        for name in ("lambda_acc", "lambda_pos", "lambda_jrk", "lambda_rec"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def preset(cls, name: str, sport: str = "basketball") -> "ConstraintConfig":
        """One of the ablation presets with the sport's default weights."""
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
        lam_acc, lam_pos, lam_jrk, lam_rec = SPORT_LAMBDAS[sport]
        terms = PRESETS[name]
        return cls(
            lambda_acc=lam_acc, lambda_pos=lam_pos, lambda_jrk=lam_jrk, lambda_rec=lam_rec,
            enable_acc="acc" in terms, enable_pos="pos" in terms,
            enable_jrk="jrk" in terms, enable_rec="rec" in terms,
        )

    @property
    def weight_acc(self) -> float:
        return self.lambda_acc if self.enable_acc else 0.0

    @property
    def weight_pos(self) -> float:
        return self.lambda_pos if self.enable_pos else 0.0

    @property
    def weight_jrk(self) -> float:
        return self.lambda_jrk if self.enable_jrk else 0.0

    @property
    def weight_rec(self) -> float:
        return self.lambda_rec if self.enable_rec else 0.0

    @property
    def active_terms(self) -> tuple[str, ...]:
        return tuple(t for t, on in (("acc", self.enable_acc), ("pos", self.enable_pos),
                                     ("jrk", self.enable_jrk), ("rec", self.enable_rec)) if on)


@dataclass
class PenaltyTerms:
    """The four weighted penalty sums (zero tensors when disabled)."""

    kl_acc: torch.Tensor
    pos_nll: torch.Tensor
    jerk_nll: torch.Tensor
    acc_recon: torch.Tensor

    def total(self) -> torch.Tensor:
        return self.kl_acc + self.pos_nll + self.jerk_nll + self.acc_recon

    def as_dict(self) -> dict[str, float]:
        return {
            "penalty_kl_acc": float(self.kl_acc.detach()),
            "penalty_pos_nll": float(self.pos_nll.detach()),
            "penalty_jerk_nll": float(self.jerk_nll.detach()),
            "penalty_acc_recon": float(self.acc_recon.detach()),
        }


def gaussian_kl(mu_p: torch.Tensor, sigma_p: torch.Tensor,
                mu_q: torch.Tensor, sigma_q: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(p || q) between diagonal Gaussians, summed over the last dim.

    Raises:
        ValueError: on non-positive standard deviations.
    """
    if (sigma_p <= 0).any() or (sigma_q <= 0).any():
        raise ValueError("standard deviations must be positive")
    var_ratio = (sigma_p / sigma_q) ** 2
    term = (mu_p - mu_q) ** 2 / sigma_q**2
    return 0.5 * (var_ratio + term - 1.0 - torch.log(var_ratio)).sum(dim=-1)


def gaussian_nll(x: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Diagonal-Gaussian negative log-likelihood, summed over the last dim."""
    return 0.5 * (((x - mu) / sigma) ** 2 + 2.0 * torch.log(sigma) + LOG_2PI).sum(dim=-1)


def indirect_acc_distribution(mu_vel_t, sigma_vel_t, mu_vel_prev, sigma_vel_prev, dt: float):
    """Acceleration implied by differencing two independent velocity Gaussians.

    mean = (mu_t - mu_prev)/dt, variance = (sigma_t^2 + sigma_prev^2)/dt^2.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    mu = (mu_vel_t - mu_vel_prev) / dt
    sigma = torch.sqrt(sigma_vel_t**2 + sigma_vel_prev**2) / dt
    return mu, sigma


def indirect_pos_distribution(prev_pos, mu_vel, sigma_vel, dt: float):
    """Position implied by integrating a velocity Gaussian from a known point.

    mean = prev_pos + mu_vel * dt, variance = sigma_vel^2 * dt^2.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    return prev_pos + mu_vel * dt, sigma_vel * dt


def mechanical_penalties(action_mu: torch.Tensor, action_sigma: torch.Tensor,
                         positions: torch.Tensor, accelerations: torch.Tensor,
                         config: ConstraintConfig, dt: float) -> PenaltyTerms:
    """The four weighted penalty sums for one teacher-forced window.

    Model step tau (0-based, 0..T-2) predicts the action of frame tau+1;
    the decoder's action layout is [velocity, acceleration] over ``c``
    coordinates each. Sums run over model steps tau >= 1, the jerk term
    additionally stopping one step early (it needs the true acceleration
    two frames ahead).

    Args:
        action_mu: (T-1, B, 2c) decoder means.
        action_sigma: (T-1, B, 2c) decoder standard deviations.
        positions: (T, B, c) true positions of the controlled agent.
        accelerations: (T, B, c) true accelerations of the controlled agent.
        config: weights and term toggles.
        dt: sampling interval.

    Returns:
        PenaltyTerms with each entry summed over batch and time.

    Raises:
        ValueError: if the window is shorter than 3 frames.
    """
    T = positions.shape[0]
    if T < 3:
        raise ValueError(f"window must have at least 3 frames, got {T}")
    if action_mu.shape[0] != T - 1:
        raise ValueError("decoder outputs must cover T-1 model steps")
    c = positions.shape[-1]
    mu_vel, mu_acc = action_mu[..., :c], action_mu[..., c:]
    sig_vel, sig_acc = action_sigma[..., :c], action_sigma[..., c:]
    zero = action_mu.new_zeros(())

    kl_acc = zero
    if config.weight_acc > 0:
        ind_mu, ind_sigma = indirect_acc_distribution(
            mu_vel[1:], sig_vel[1:], mu_vel[:-1], sig_vel[:-1], dt)
        kl_acc = config.weight_acc * gaussian_kl(
            mu_acc[1:], sig_acc[1:], ind_mu, ind_sigma).sum()

    pos_nll = zero
    if config.weight_pos > 0:
        ind_mu, ind_sigma = indirect_pos_distribution(
            positions[1:-1], mu_vel[1:], sig_vel[1:], dt)
        pos_nll = config.weight_pos * gaussian_nll(positions[2:], ind_mu, ind_sigma).sum()

    jerk_nll = zero
    if config.weight_jrk > 0 and T >= 4:
        jerk_nll = config.weight_jrk * gaussian_nll(
            accelerations[3:], mu_acc[1:-1], sig_acc[1:-1]).sum()

    acc_recon = zero
    if config.weight_rec > 0:
        acc_recon = config.weight_rec * gaussian_nll(
            accelerations[2:], mu_acc[1:], sig_acc[1:]).sum()

    return PenaltyTerms(kl_acc=kl_acc + zero, pos_nll=pos_nll + zero,
                        jerk_nll=jerk_nll + zero, acc_recon=acc_recon + zero)
