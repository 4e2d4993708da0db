"""Per-role trajectory policy: a hierarchical VRNN over gated observations.

One model owns one defender role. Each step it embeds and gates the full
multi-agent state (observation module), advances a recurrent macro-goal
head, and runs the VRNN cycle: prior and posterior over a latent, a
diagonal-Gaussian decoder over the action (velocity and acceleration), and
a GRU recurrence over (action, latent). Positions are reconstructed by
integrating predicted velocity. The ``rnn_gauss`` variant drops the
latent, KL and macro-goal head: a GRU plus Gaussian decoder over the
ungated embedded state, trained by NLL only.

Input layouts (fixed, relied on by tests that graft weights):
    prior   <- cat(o, h_top, g)
    encoder <- cat(a, o, h_top, g)
    decoder <- cat(o, z, h_top, g)      (rnn_gauss: cat(o, h_top))
    gru     <- cat(a, z)                 (rnn_gauss: a)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .constraints import ConstraintConfig, PenaltyTerms, gaussian_kl, gaussian_nll, \
    mechanical_penalties
from .data import PlaySequence, Role
from .macrogoal import GridSpec, MacroGoalNet, label_macro_goals
from .observation import ObservationEncoder, ObservationOverride, binary_gate, \
    gumbel_noise, observe

__all__ = [
    "PolicyConfig",
    "PolicyModel",
    "WindowBatch",
    "ElboNoise",
    "ElboTerms",
    "LossTerms",
    "make_batch",
    "sequence_elbo",
    "full_loss",
    "RolloutResult",
    "rollout",
]


@dataclass(frozen=True)
class PolicyConfig:
    """Architecture and sampling configuration of one role model."""

    n_agents: int
    n_cells: int = 90
    state_dim: int = 6
    coord_dim: int = 2
    embed_dim: int = 32
    latent_dim: int = 64
    hidden_dim: int = 64     # MLP hidden width; 0 = plain linear heads
    rnn_hidden: int = 100
    rnn_layers: int = 2
    macro_hidden: int = 100
    macro_layers: int = 2
    dropout: float = 0.5
    sigma_floor: float = 1e-4
    tau: float = 1.0
    bias: bool = True
    sigma_mode: str = "head"   # "head" (amortized) or "global" (free parameter)
    variant: str = "vrnn"      # "vrnn" or "rnn_gauss"
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in ("vrnn", "rnn_gauss"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.sigma_mode not in ("head", "global"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")

    @property
    def action_dim(self) -> int:
        return 2 * self.coord_dim

    @property
    def obs_dim(self) -> int:
        return self.n_agents * self.embed_dim

    @property
    def torch_dtype(self) -> torch.dtype:
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    @property
    def use_latent(self) -> bool:
        return self.variant == "vrnn"


class DiagGaussianHead(nn.Module):
    """Feed-forward trunk emitting a diagonal Gaussian (mu, sigma > floor)."""

    def __init__(self, in_dim: int, out_dim: int, cfg: PolicyConfig):
        super().__init__()
        self.sigma_floor = cfg.sigma_floor
        if cfg.hidden_dim > 0:
            self.trunk = nn.Sequential(
                nn.Linear(in_dim, cfg.hidden_dim, bias=cfg.bias),
                nn.BatchNorm1d(cfg.hidden_dim),
                nn.ReLU(),
                nn.Dropout(cfg.dropout),
            )
            feat = cfg.hidden_dim
        else:
            self.trunk = nn.Identity()
            feat = in_dim
        self.mu = nn.Linear(feat, out_dim, bias=cfg.bias)
        if cfg.sigma_mode == "head":
            self.sigma_raw = nn.Linear(feat, out_dim, bias=cfg.bias)
        else:
            self.sigma_param = nn.Parameter(torch.zeros(out_dim))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.trunk(x)
        mu = self.mu(h)
        raw = self.sigma_raw(h) if hasattr(self, "sigma_raw") else self.sigma_param
        return mu, F.softplus(raw) + self.sigma_floor


class PolicyModel(nn.Module):
    """One role's policy (VRNN or RNN-Gauss variant)."""

    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.obs = ObservationEncoder(cfg.n_agents, cfg.state_dim, cfg.embed_dim,
                                      tau=cfg.tau, bias=cfg.bias)
        ctx = cfg.obs_dim + cfg.rnn_hidden
        if cfg.use_latent:
            self.macro = MacroGoalNet(cfg.obs_dim, cfg.n_cells, hidden=cfg.macro_hidden,
                                      layers=cfg.macro_layers, head_hidden=cfg.hidden_dim,
                                      dropout=cfg.dropout, bias=cfg.bias)
            self.prior = DiagGaussianHead(ctx + cfg.n_cells, cfg.latent_dim, cfg)
            self.encoder = DiagGaussianHead(cfg.action_dim + ctx + cfg.n_cells,
                                            cfg.latent_dim, cfg)
            self.decoder = DiagGaussianHead(cfg.obs_dim + cfg.latent_dim + cfg.rnn_hidden
                                            + cfg.n_cells, cfg.action_dim, cfg)
            gru_in = cfg.action_dim + cfg.latent_dim
        else:
            self.decoder = DiagGaussianHead(ctx, cfg.action_dim, cfg)
            gru_in = cfg.action_dim
        self.gru = nn.GRU(gru_in, cfg.rnn_hidden, num_layers=cfg.rnn_layers, bias=cfg.bias)
        self.to(cfg.torch_dtype)

    # --- single-step operations ---------------------------------------

    def initial_state(self, batch: int) -> torch.Tensor:
        p = next(self.parameters())
        return torch.zeros(self.cfg.rnn_layers, batch, self.cfg.rnn_hidden,
                           dtype=p.dtype, device=p.device)

    def prior_step(self, h_top, o_prev, g):
        return self.prior(torch.cat([o_prev, h_top, g], dim=-1))

    def posterior_step(self, action, h_top, o_prev, g):
        return self.encoder(torch.cat([action, o_prev, h_top, g], dim=-1))

    def decode_action(self, z, h_top, o_prev, g=None):
        if self.cfg.use_latent:
            return self.decoder(torch.cat([o_prev, z, h_top, g], dim=-1))
        return self.decoder(torch.cat([o_prev, h_top], dim=-1))

    def recurrence(self, action, z, h):
        x = torch.cat([action, z], dim=-1) if self.cfg.use_latent else action
        _, h_next = self.gru(x.unsqueeze(0), h)
        return h_next

    def gated_observation(self, states, hard, generator=None, noise=None):
        """Gate + observe in one call: returns (o, b)."""
        b = binary_gate(states, self.obs, hard=hard, generator=generator, noise=noise)
        if not self.cfg.use_latent:
            b = torch.ones_like(b)  # baseline: full observation
        return observe(b, states, self.obs), b

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


@dataclass
class WindowBatch:
    """Teacher-forcing tensors for a batch of fixed-length windows.

    ``actions[t]`` / ``labels[t]`` belong to frame t; index 0 is never a
    prediction target. States hold all agents; positions/accelerations
    are the controlled agent's ground truth.
    """

    states: torch.Tensor         # (T, B, K, d_s)
    actions: torch.Tensor        # (T, B, 2c)
    positions: torch.Tensor      # (T, B, c)
    accelerations: torch.Tensor  # (T, B, c)
    labels: torch.Tensor         # (T, B) long
    dt: float

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def batch_size(self) -> int:
        return self.states.shape[1]


def make_batch(windows: list[PlaySequence], role_slot: int, cfg: PolicyConfig,
               grid: GridSpec, speed_threshold: float = 0.5, min_hold: float = 0.5,
               ) -> WindowBatch:
    """Stack windows into teacher-forcing tensors for one defender slot."""
    states, actions, positions, accs, labels = [], [], [], [], []
    dt = windows[0].dt
    for w in windows:
        defenders = w.role_indices(Role.DEFENSE)
        col = defenders.index(role_slot)
        lab = label_macro_goals(w, grid, speed_threshold, min_hold)[:, col]
        states.append(w.states())
        actions.append(np.concatenate(
            [w.velocities[:, role_slot], w.accelerations[:, role_slot]], axis=1))
        positions.append(w.positions[:, role_slot])
        accs.append(w.accelerations[:, role_slot])
        labels.append(lab)
    dtype = cfg.torch_dtype
    return WindowBatch(
        states=torch.as_tensor(np.stack(states, axis=1), dtype=dtype),
        actions=torch.as_tensor(np.stack(actions, axis=1), dtype=dtype),
        positions=torch.as_tensor(np.stack(positions, axis=1), dtype=dtype),
        accelerations=torch.as_tensor(np.stack(accs, axis=1), dtype=dtype),
        labels=torch.as_tensor(np.stack(labels, axis=1), dtype=torch.long),
        dt=dt,
    )


@dataclass
class ElboNoise:
    """Pre-drawn stochasticity for one teacher-forced pass (fixed-noise replays)."""

    gumbel: torch.Tensor  # (T-1, B, K, 2)
    z_eps: torch.Tensor   # (T-1, B, latent)

    @classmethod
    def draw(cls, cfg: PolicyConfig, n_steps: int, batch: int,
             generator: torch.Generator | None = None) -> "ElboNoise":
        dtype = cfg.torch_dtype
        return cls(
            gumbel=gumbel_noise((n_steps, batch, cfg.n_agents, 2), generator, dtype),
            z_eps=torch.randn(n_steps, batch, cfg.latent_dim,
                              generator=generator, dtype=dtype),
        )


@dataclass
class StepOutputs:
    """Stacked per-step distributions from a teacher-forced pass."""

    action_mu: torch.Tensor
    action_sigma: torch.Tensor
    prior_mu: torch.Tensor | None
    prior_sigma: torch.Tensor | None
    post_mu: torch.Tensor | None
    post_sigma: torch.Tensor | None
    macro_logits: torch.Tensor | None
    gates: torch.Tensor


@dataclass
class ElboTerms:
    recon_nll: torch.Tensor
    kl: torch.Tensor

    @property
    def elbo(self) -> torch.Tensor:
        return -self.recon_nll - self.kl


@dataclass
class LossTerms:
    """Everything the optimizer and the metrics log need from one pass."""

    recon_nll: torch.Tensor
    kl: torch.Tensor
    penalties: PenaltyTerms
    macro_ce: torch.Tensor
    macro_weight: float = 1.0

    @property
    def elbo(self) -> torch.Tensor:
        return -self.recon_nll - self.kl

    @property
    def total(self) -> torch.Tensor:
        return (self.recon_nll + self.kl + self.penalties.total()
                + self.macro_weight * self.macro_ce)

    def as_dict(self) -> dict[str, float]:
        d = {
            "recon_nll": float(self.recon_nll.detach()),
            "kl": float(self.kl.detach()),
            "macro_ce": float(self.macro_ce.detach()),
            "total": float(self.total.detach()),
        }
        d.update(self.penalties.as_dict())
        return d


def teacher_forced_pass(model: PolicyModel, batch: WindowBatch,
                        generator: torch.Generator | None = None,
                        noise: ElboNoise | None = None) -> StepOutputs:
    """Run the model across a window with ground-truth actions (training mode).

    Gates are relaxed Gumbel-Softmax samples; the latent is drawn from the
    posterior by reparameterization; the macro-goal fed to the policy is
    the true weak label (teacher forcing).
    """
    cfg = model.cfg
    T, B = batch.states.shape[:2]
    if T < 2:
        raise ValueError("window must have at least 2 frames")
    if noise is None:
        noise = ElboNoise.draw(cfg, T - 1, B, generator)
    h = model.initial_state(B)
    h_g = model.macro.initial_state(B) if cfg.use_latent else None
    outs = {k: [] for k in ("amu", "asig", "pmu", "psig", "qmu", "qsig", "mlog", "b")}
    for t in range(T - 1):
        s = batch.states[t]
        o, b = model.gated_observation(s, hard=False, noise=noise.gumbel[t])
        outs["b"].append(b)
        a_next = batch.actions[t + 1]
        if cfg.use_latent:
            logits, h_g = model.macro.step(h_g, o)
            outs["mlog"].append(logits)
            g = F.one_hot(batch.labels[t + 1], cfg.n_cells).to(o.dtype)
            pmu, psig = model.prior_step(h[-1], o, g)
            qmu, qsig = model.posterior_step(a_next, h[-1], o, g)
            z = qmu + qsig * noise.z_eps[t]
            amu, asig = model.decode_action(z, h[-1], o, g)
            outs["pmu"].append(pmu); outs["psig"].append(psig)
            outs["qmu"].append(qmu); outs["qsig"].append(qsig)
        else:
            z = None
            amu, asig = model.decode_action(None, h[-1], o)
        outs["amu"].append(amu); outs["asig"].append(asig)
        h = model.recurrence(a_next, z, h)
    stack = lambda key: torch.stack(outs[key]) if outs[key] else None
    return StepOutputs(
        action_mu=stack("amu"), action_sigma=stack("asig"),
        prior_mu=stack("pmu"), prior_sigma=stack("psig"),
        post_mu=stack("qmu"), post_sigma=stack("qsig"),
        macro_logits=stack("mlog"), gates=stack("b"),
    )


def sequence_elbo(model: PolicyModel, batch: WindowBatch,
                  generator: torch.Generator | None = None,
                  noise: ElboNoise | None = None,
                  outputs: StepOutputs | None = None) -> ElboTerms:
    """Teacher-forced sequence ELBO terms, summed over time and batch.

    Returns the reconstruction NLL and the KL sum separately; the ELBO is
    their negated sum. The RNN-Gauss variant has an identically-zero KL.
    """
    if outputs is None:
        outputs = teacher_forced_pass(model, batch, generator, noise)
    recon = gaussian_nll(batch.actions[1:], outputs.action_mu, outputs.action_sigma).sum()
    if outputs.post_mu is not None:
        kl = gaussian_kl(outputs.post_mu, outputs.post_sigma,
                         outputs.prior_mu, outputs.prior_sigma).sum()
    else:
        kl = recon.new_zeros(())
    return ElboTerms(recon_nll=recon, kl=kl)


def full_loss(model: PolicyModel, batch: WindowBatch, constraints: ConstraintConfig,
              macro_weight: float = 1.0, generator: torch.Generator | None = None,
              noise: ElboNoise | None = None) -> LossTerms:
    """-ELBO + weighted mechanical penalties + weighted macro cross-entropy."""
    outputs = teacher_forced_pass(model, batch, generator, noise)
    elbo = sequence_elbo(model, batch, outputs=outputs)
    penalties = mechanical_penalties(outputs.action_mu, outputs.action_sigma,
                                     batch.positions, batch.accelerations,
                                     constraints, batch.dt)
    if outputs.macro_logits is not None:
        logits = outputs.macro_logits.reshape(-1, model.cfg.n_cells)
        macro_ce = F.cross_entropy(logits, batch.labels[1:].reshape(-1), reduction="sum")
    else:
        macro_ce = elbo.recon_nll.new_zeros(())
    if not torch.isfinite(elbo.recon_nll + elbo.kl + penalties.total() + macro_ce):
        raise FloatingPointError("non-finite loss; check inputs and learning rate")
    return LossTerms(recon_nll=elbo.recon_nll, kl=elbo.kl, penalties=penalties,
                     macro_ce=macro_ce, macro_weight=macro_weight)


@dataclass
class RolloutResult:
    """N sampled trajectories plus per-step gate and macro-goal logs.

    Frames 0..burn_in-1 reproduce the ground truth; from frame burn_in on,
    velocity/acceleration are model samples and positions integrate the
    sampled velocity: pos[t+1] = pos[t] + vel[t+1] * dt.
    """

    positions: np.ndarray       # (N, T, c)
    velocities: np.ndarray      # (N, T, c)
    accelerations: np.ndarray   # (N, T, c)
    b_log: np.ndarray           # (N, T-1, K)
    g_log: np.ndarray           # (N, T-1) cell index, -1 when no macro head
    truth_positions: np.ndarray      # (T, c)
    truth_velocities: np.ndarray     # (T, c)
    truth_accelerations: np.ndarray  # (T, c)
    agent_positions: np.ndarray      # (T, K, 2) ground-truth court state
    burn_in: int
    dt: float
    role_slot: int

    @property
    def n_samples(self) -> int:
        return self.positions.shape[0]


def rollout(model: PolicyModel, window: PlaySequence, role_slot: int,
            burn_in: int = 20, horizon: int = 60, n_samples: int = 10,
            generator: torch.Generator | None = None, seed: int | None = None,
            observation_override: ObservationOverride | None = None,
            deterministic: bool = False) -> RolloutResult:
    """Sample N long-horizon trajectories for one role on one window.

    The first ``burn_in`` frames consume ground-truth states and actions
    (latents from the posterior); afterwards latents come from the prior,
    actions from the decoder, and the controlled agent's slot in the state
    is replaced by its own prediction while every other agent is replayed
    from ground truth. Gates are hard samples; ``observation_override``
    replaces them verbatim (and is what gets logged). ``deterministic``
    uses means/argmaxes everywhere, collapsing all N samples.
    """
    cfg = model.cfg
    T = burn_in + horizon
    if window.n_frames < T:
        raise ValueError(f"window has {window.n_frames} frames; "
                         f"burn_in + horizon = {T} required")
    if burn_in < 1:
        raise ValueError("burn_in must be >= 1")
    if generator is None:
        generator = torch.Generator()
        generator.manual_seed(0 if seed is None else seed)
    dtype = cfg.torch_dtype
    N, K, c = n_samples, cfg.n_agents, cfg.coord_dim
    dt = window.dt

    states_true = torch.as_tensor(window.states()[:T], dtype=dtype)       # (T, K, d_s)
    own_true = states_true[:, role_slot]                                   # (T, d_s)
    actions_true = own_true[:, c:3 * c]                                    # (T, 2c) vel+acc

    pos = own_true[:, :c].clone().expand(N, T, c).clone()
    vel = own_true[:, c:2 * c].clone().expand(N, T, c).clone()
    acc = own_true[:, 2 * c:3 * c].clone().expand(N, T, c).clone()
    b_log = torch.zeros(N, T - 1, K, dtype=dtype)
    g_log = torch.full((N, T - 1), -1, dtype=torch.long)

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            h = model.initial_state(N)
            h_g = model.macro.initial_state(N) if cfg.use_latent else None
            for t in range(T - 1):
                s = states_true[t].expand(N, K, cfg.state_dim).clone()
                if t >= burn_in:
                    s[:, role_slot, :c] = pos[:, t]
                    s[:, role_slot, c:2 * c] = vel[:, t]
                    s[:, role_slot, 2 * c:3 * c] = acc[:, t]
                if deterministic:
                    logits = model.obs.gate_logits(s)
                    b_model = (logits[..., 0] >= logits[..., 1]).to(dtype)
                else:
                    noise = gumbel_noise((N, K, 2), generator, dtype)
                    b_model = binary_gate(s, model.obs, hard=True, noise=noise)
                if not cfg.use_latent:
                    b_model = torch.ones_like(b_model)
                b = observation_override.resolve(t, b_model) \
                    if observation_override is not None else b_model
                b_log[:, t] = b
                o = observe(b, s, model.obs)

                if cfg.use_latent:
                    logits_g, h_g = model.macro.step(h_g, o)
                    g = model.macro.sample(logits_g, generator=generator,
                                           greedy=deterministic)
                    g_log[:, t] = g.argmax(dim=-1)
                    if t + 1 < burn_in:
                        a_known = actions_true[t + 1].expand(N, 2 * c)
                        zmu, zsig = model.posterior_step(a_known, h[-1], o, g)
                    else:
                        zmu, zsig = model.prior_step(h[-1], o, g)
                    z_eps = torch.zeros(N, cfg.latent_dim, dtype=dtype) if deterministic \
                        else torch.randn(N, cfg.latent_dim, generator=generator, dtype=dtype)
                    z = zmu + zsig * z_eps
                    amu, asig = model.decode_action(z, h[-1], o, g)
                else:
                    z = None
                    amu, asig = model.decode_action(None, h[-1], o)

                if t + 1 < burn_in:
                    a = actions_true[t + 1].expand(N, 2 * c)
                else:
                    a_eps = torch.zeros(N, 2 * c, dtype=dtype) if deterministic \
                        else torch.randn(N, 2 * c, generator=generator, dtype=dtype)
                    a = amu + asig * a_eps
                    vel[:, t + 1] = a[:, :c]
                    acc[:, t + 1] = a[:, c:]
                    prev = pos[:, t] if t >= burn_in else own_true[t, :c].expand(N, c)
                    pos[:, t + 1] = prev + a[:, :c] * dt
                h = model.recurrence(a, z, h)
    finally:
        model.train(was_training)

    return RolloutResult(
        positions=pos.numpy(), velocities=vel.numpy(), accelerations=acc.numpy(),
        b_log=b_log.numpy(), g_log=g_log.numpy(),
        truth_positions=own_true[:, :c].numpy().copy(),
        truth_velocities=own_true[:, c:2 * c].numpy().copy(),
        truth_accelerations=own_true[:, 2 * c:3 * c].numpy().copy(),
        agent_positions=np.asarray(window.positions[:T]).copy(),
        burn_in=burn_in, dt=dt, role_slot=role_slot,
    )
