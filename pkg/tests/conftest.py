import numpy as np
import pytest
import torch

from trajgate.data import PlaySequence, Role, Sport
from trajgate.macrogoal import GridSpec
from trajgate.policy import PolicyConfig, PolicyModel
from trajgate.synthetic import ScenarioSpec, generate_scenario

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_scenario():
    spec = ScenarioSpec(n_defenders=2, n_attackers=2, seed=7, total_duration=8.0,
                        noise_scale=0.01)
    seq, mask = generate_scenario(spec)
    return spec, seq, mask


@pytest.fixture(scope="session")
def tiny_grid(tiny_scenario):
    spec, _, _ = tiny_scenario
    return GridSpec.from_bounds(spec.bounds, 4, 4)


@pytest.fixture()
def tiny_cfg(tiny_scenario, tiny_grid):
    _, seq, _ = tiny_scenario
    return PolicyConfig(n_agents=seq.n_agents, n_cells=tiny_grid.n_cells,
                        embed_dim=4, latent_dim=4, hidden_dim=8, rnn_hidden=6,
                        rnn_layers=1, macro_hidden=6, macro_layers=1, dropout=0.0)


@pytest.fixture()
def tiny_model(tiny_cfg):
    torch.manual_seed(0)
    return PolicyModel(tiny_cfg)


def make_straight_sequence(n_frames=90, n_defenders=2, n_offense=2, speed=(1.0, 0.0),
                           sport=Sport.BASKETBALL, sequence_id="straight", split="train",
                           start=None):
    """Constant-velocity multi-agent sequence (exactly integrable)."""
    K = n_defenders + n_offense + 1
    t = np.arange(n_frames)[:, None] * 0.1
    if start is None:
        start = np.arange(K)[:, None] * np.array([[1.0, 0.5]])
    pos = start[None] + t[:, :, None] * np.array(speed)[None, None, :]
    roles = [Role.DEFENSE] * n_defenders + [Role.OFFENSE] * n_offense + [Role.BALL]
    return PlaySequence.from_positions(sequence_id, sport, pos, roles, split=split)


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central finite differences of a deterministic scalar loss over torch params."""
    grads = []
    for p in params:
        g = torch.zeros_like(p)
        flat = p.data.view(-1)
        gf = g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            step = h * max(1.0, abs(orig))
            flat[i] = orig + step
            hi = loss_fn()
            flat[i] = orig - step
            lo = loss_fn()
            flat[i] = orig
            gf[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads
