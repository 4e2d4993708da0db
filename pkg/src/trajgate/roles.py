"""Role assignment: Gaussian-HMM over per-agent features plus optimal matching.

Unstructured defender tracks are mapped to consistent role indices by
fitting an unsupervised diagonal-Gaussian HMM to per-agent feature
sequences and solving a linear assignment between agents and the HMM's
emission components, with emission negative log-likelihood summed over
time as the cost.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import Dataset, PlaySequence, Role

__all__ = [
    "RoleModel",
    "fit_role_hmm",
    "agent_features",
    "role_cost",
    "solve_assignment",
    "reindex",
    "assign_roles",
]

COV_FLOOR = 1e-4
# Per-step log emission densities are clamped below at this value.
LOG_DENSITY_FLOOR = -1e6

ROLE_MODEL_FORMAT = "trajgate.role_model/1"


@dataclass(frozen=True)
class RoleModel:
    """Fitted diagonal-Gaussian HMM over agent features."""

    startprob: np.ndarray   # (n_roles,)
    transmat: np.ndarray    # (n_roles, n_roles), row-stochastic
    means: np.ndarray       # (n_roles, D)
    variances: np.ndarray   # (n_roles, D), diagonal covariances

    def __post_init__(self):
        for name in ("startprob", "transmat", "means", "variances"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not np.allclose(self.transmat.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition matrix rows must sum to 1")
        if (self.variances < COV_FLOOR - 1e-12).any():
            raise ValueError(f"variances must respect the floor {COV_FLOOR}")

    @property
    def n_roles(self) -> int:
        return self.means.shape[0]

    def log_emission(self, feats: np.ndarray) -> np.ndarray:
        """Per-role log density of each feature row: (T, n_roles)."""
        x = np.asarray(feats, dtype=np.float64)[:, None, :]        # (T, 1, D)
        diff2 = (x - self.means[None]) ** 2 / self.variances[None]  # (T, R, D)
        logdet = np.log(2.0 * np.pi * self.variances).sum(axis=1)   # (R,)
        ll = -0.5 * (diff2.sum(axis=2) + logdet[None])
        return np.maximum(ll, LOG_DENSITY_FLOOR)

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        payload = {
            "format": ROLE_MODEL_FORMAT,
            "startprob": self.startprob.tolist(),
            "transmat": self.transmat.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }
        path.write_text(json.dumps(payload, indent=2) + "\n")
        return path

    @classmethod
    def from_json(cls, path: str | Path) -> "RoleModel":
        payload = json.loads(Path(path).read_text())
        if payload.get("format") != ROLE_MODEL_FORMAT:
            raise ValueError(f"unsupported role model format: {payload.get('format')!r}")
        return cls(payload["startprob"], payload["transmat"],
                   payload["means"], payload["variances"])


def agent_features(seq: PlaySequence, include_ball_relative: bool = False) -> list[np.ndarray]:
    """Per-defender feature sequences: position + velocity (+ ball-relative position)."""
    feats = []
    ball = seq.positions[:, seq.ball_index]
    for k in seq.role_indices(Role.DEFENSE):
        cols = [seq.positions[:, k], seq.velocities[:, k]]
        if include_ball_relative:
            cols.append(seq.positions[:, k] - ball)
        feats.append(np.concatenate(cols, axis=1))
    return feats


def _forward_backward(log_b: np.ndarray, startprob, transmat):
    """Scaled forward-backward. Returns (gamma, xi_sum, loglik)."""
    T, R = log_b.shape
    b = np.exp(log_b - log_b.max(axis=1, keepdims=True))
    alpha = np.empty((T, R))
    scale = np.empty(T)
    alpha[0] = startprob * b[0]
    scale[0] = alpha[0].sum()
    alpha[0] /= scale[0]
    for t in range(1, T):
        alpha[t] = (alpha[t - 1] @ transmat) * b[t]
        scale[t] = alpha[t].sum()
        alpha[t] /= scale[t]
    beta = np.empty((T, R))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (transmat @ (b[t + 1] * beta[t + 1])) / scale[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi_sum = np.zeros((R, R))
    for t in range(T - 1):
        xi = transmat * np.outer(alpha[t], b[t + 1] * beta[t + 1]) / scale[t + 1]
        xi_sum += xi
    loglik = float(np.log(scale).sum() + log_b.max(axis=1).sum())
    return gamma, xi_sum, loglik


def fit_role_hmm(features: list[np.ndarray], n_roles: int, max_iters: int = 100,
                 tol: float = 1e-4, seed: int = 0) -> tuple[RoleModel, list[float]]:
    """Fit a diagonal-Gaussian HMM to feature sequences by Baum-Welch EM.

    Iterates until the total log-likelihood improves by less than ``tol``
    or ``max_iters`` is reached. The per-iteration log-likelihood trace is
    returned alongside the model; it is checked to be non-decreasing.

    Args:
        features: list of (T_i, D) float arrays, one per agent sequence.
        n_roles: number of hidden states (defender roles).
    """
    if n_roles < 1:
        raise ValueError("n_roles must be >= 1")
    features = [np.asarray(f, dtype=np.float64) for f in features]
    if not features:
        raise ValueError("at least one feature sequence required")
    for f in features:
        if not np.isfinite(f).all():
            raise ValueError("features must be finite")
    D = features[0].shape[1]
    stacked = np.concatenate(features, axis=0)
    rng = np.random.default_rng(seed)

    means = stacked[rng.choice(len(stacked), size=n_roles, replace=False)].copy()
    variances = np.maximum(np.tile(stacked.var(axis=0), (n_roles, 1)), COV_FLOOR)
    startprob = np.full(n_roles, 1.0 / n_roles)
    transmat = np.full((n_roles, n_roles), 1.0 / n_roles)

    trace: list[float] = []
    for it in range(max_iters):
        model = RoleModel(startprob, transmat, means, variances)
        gsum = np.zeros(n_roles)
        gstart = np.zeros(n_roles)
        xi_total = np.zeros((n_roles, n_roles))
        mean_acc = np.zeros((n_roles, D))
        sq_acc = np.zeros((n_roles, D))
        loglik = 0.0
        for f in features:
            log_b = model.log_emission(f)
            gamma, xi_sum, ll = _forward_backward(log_b, startprob, transmat)
            loglik += ll
            gstart += gamma[0]
            gsum += gamma.sum(axis=0)
            xi_total += xi_sum
            mean_acc += gamma.T @ f
            sq_acc += gamma.T @ (f ** 2)
        if trace and loglik < trace[-1] - 1e-8 * max(1.0, abs(trace[-1])):
            raise AssertionError(
                f"EM log-likelihood decreased at iteration {it}: {trace[-1]} -> {loglik}")
        converged = trace and (loglik - trace[-1]) < tol
        trace.append(loglik)
        if converged:
            break
        startprob = gstart / gstart.sum()
        if n_roles == 1:
            transmat = np.ones((1, 1))
        else:
            transmat = xi_total / np.maximum(xi_total.sum(axis=1, keepdims=True), 1e-300)
        means = mean_acc / gsum[:, None]
        variances = sq_acc / gsum[:, None] - means ** 2
        if (variances < COV_FLOOR).any():
            warnings.warn("emission covariance hit the floor; clamping", stacklevel=2)
        variances = np.maximum(variances, COV_FLOOR)
    return RoleModel(startprob, transmat, means, variances), trace


def role_cost(features: list[np.ndarray], model: RoleModel) -> np.ndarray:
    """Agent-to-role cost matrix: summed emission NLL per (agent, role)."""
    K = len(features)
    cost = np.empty((K, model.n_roles))
    for k, f in enumerate(features):
        cost[k] = -model.log_emission(f).sum(axis=0)
    return cost


def _optimal_total(cost: np.ndarray) -> float:
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].sum())


def solve_assignment(cost: np.ndarray) -> tuple[int, ...]:
    """Minimum-total-cost perfect matching of agent slots to roles.

    Returns perm with ``perm[slot] = role``. Ties are broken toward the
    lexicographically smallest permutation.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix entries must be finite")
    K = cost.shape[0]
    best = _optimal_total(cost)
    eps = 1e-9 * max(1.0, abs(best))
    perm: list[int] = []
    free = list(range(K))
    prefix = 0.0
    for slot in range(K):
        for r in free:
            rest_rows = np.arange(slot + 1, K)
            rest_cols = [c for c in free if c != r]
            rest = _optimal_total(cost[np.ix_(rest_rows, rest_cols)]) if rest_cols else 0.0
            if prefix + cost[slot, r] + rest <= best + eps:
                perm.append(r)
                prefix += cost[slot, r]
                free.remove(r)
                break
        else:  # pragma: no cover - unreachable for finite costs
            raise RuntimeError("assignment refinement failed")
    return tuple(perm)


def reindex(seq: PlaySequence, perm: tuple[int, ...]) -> PlaySequence:
    """Reorder defender slots so slot r holds the agent assigned role r.

    Offense and ball slots are untouched. The permutation is recorded in
    the sequence metadata and the operation is invertible.
    """
    defenders = seq.role_indices(Role.DEFENSE)
    if sorted(perm) != list(range(len(defenders))):
        raise ValueError(f"permutation {perm} is not a bijection on {len(defenders)} defenders")
    order = np.arange(seq.n_agents)
    for i, r in enumerate(perm):
        order[defenders[r]] = defenders[i]
    meta = dict(seq.metadata)
    meta["role_permutation"] = list(perm)
    return replace(
        seq,
        positions=seq.positions[:, order],
        velocities=seq.velocities[:, order],
        accelerations=seq.accelerations[:, order],
        agent_ids=tuple(seq.agent_ids[i] for i in order),
        agent_roles=tuple(seq.agent_roles[i] for i in order),
        metadata=meta,
    )


def assign_roles(dataset: Dataset, n_roles: int | None = None, max_iters: int = 50,
                 tol: float = 1e-3, seed: int = 0, include_ball_relative: bool = False,
                 ) -> tuple[Dataset, RoleModel]:
    """Fit the role HMM on the training split and reindex every sequence."""
    train_feats = [f for s in dataset.train for f in agent_features(s, include_ball_relative)]
    if n_roles is None:
        n_roles = len(dataset.train[0].role_indices(Role.DEFENSE))
    model, _ = fit_role_hmm(train_feats, n_roles, max_iters=max_iters, tol=tol, seed=seed)

    def fix(seq: PlaySequence) -> PlaySequence:
        feats = agent_features(seq, include_ball_relative)
        perm = solve_assignment(role_cost(feats, model))
        return reindex(seq, perm)

    out = Dataset(
        train=tuple(fix(s) for s in dataset.train),
        val=tuple(fix(s) for s in dataset.val),
        test=tuple(fix(s) for s in dataset.test),
        dt=dataset.dt,
    )
    return out, model
