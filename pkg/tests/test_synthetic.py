import numpy as np
import pytest

from trajgate.data import write_tracking
from trajgate.synthetic import ScenarioSpec, generate_scenario, min_jerk_segment, \
    write_scenarios


def discrete_jerk_cost(positions, dt):
    """Independent oracle: C = 1/2 * sum ||x'''||^2 dt with rest padding.

    Three rest samples are prepended/appended so boundary jerk of
    trajectories that do not start or stop at rest is counted.
    """
    padded = np.concatenate([np.repeat(positions[:1], 3, axis=0), positions,
                             np.repeat(positions[-1:], 3, axis=0)])
    jerk = np.diff(padded, n=3, axis=0) / dt**3
    return 0.5 * float((jerk**2).sum()) * dt


class TestMinJerk:
    def test_midpoint_symmetry(self):
        pos = min_jerk_segment((0, 0), (1, 0), 1.0, 0.1)
        mid = pos[len(pos) // 2]
        assert np.allclose(mid, [0.5, 0.0], atol=1e-12)

    def test_endpoints_exact(self):
        pos = min_jerk_segment((2, -1), (5, 3), 2.0, 0.1)
        assert np.allclose(pos[0], [2, -1]) and np.allclose(pos[-1], [5, 3])

    def test_duration_too_short(self):
        with pytest.raises(ValueError, match="at least"):
            min_jerk_segment((0, 0), (1, 1), 0.15, 0.1)

    def test_quintic_beats_linear_and_cubic_on_jerk_cost(self):
        dt, duration = 0.02, 1.0
        n = int(round(duration / dt))
        tau = np.arange(n + 1) * dt / duration
        x0, xf = np.array([0.0, 0.0]), np.array([3.0, 1.0])
        quintic = min_jerk_segment(x0, xf, duration, dt)
        linear = x0 + np.outer(tau, xf - x0)
        cubic = x0 + np.outer(3 * tau**2 - 2 * tau**3, xf - x0)
        c_q = discrete_jerk_cost(quintic, dt)
        c_l = discrete_jerk_cost(linear, dt)
        c_c = discrete_jerk_cost(cubic, dt)
        assert c_q <= c_c <= c_l

    def test_rest_boundary_conditions(self):
        dt = 0.01
        pos = min_jerk_segment((0, 0), (1, 0), 1.0, dt)
        vel = np.diff(pos, axis=0) / dt
        acc = np.diff(vel, axis=0) / dt
        assert np.linalg.norm(vel[0]) < 0.01 and np.linalg.norm(vel[-1]) < 0.01
        assert np.linalg.norm(acc[0]) < 0.7 and np.linalg.norm(acc[-1]) < 0.7


class TestScenario:
    def test_deterministic(self, tmp_path):
        spec = ScenarioSpec(seed=11)
        seq1, m1 = generate_scenario(spec)
        seq2, m2 = generate_scenario(spec)
        p1 = write_tracking([seq1], tmp_path / "a.jsonl")
        p2 = write_tracking([seq2], tmp_path / "b.jsonl")
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(m1, m2)

    def test_mask_rows_have_three_ones(self, tiny_scenario):
        spec, _, mask = tiny_scenario
        assert mask.shape == (spec.n_defenders, spec.n_agents)
        assert (mask.sum(axis=1) == 3).all()

    def test_positions_within_bounds(self):
        spec = ScenarioSpec(seed=3, noise_scale=0.5)
        seq, _ = generate_scenario(spec)
        (x0, y0), (x1, y1) = spec.bounds
        assert seq.positions[..., 0].min() >= x0 and seq.positions[..., 0].max() <= x1
        assert seq.positions[..., 1].min() >= y0 and seq.positions[..., 1].max() <= y1

    def test_noiseless_jerk_bounded(self):
        # peak continuous jerk of a rest-to-rest quintic is 60*d/T^3; the
        # per-step acceleration change is bounded by that times dt
        spec = ScenarioSpec(seed=5, noise_scale=0.0)
        seq, _ = generate_scenario(spec)
        dt = seq.dt
        (x0, y0), (x1, y1) = spec.bounds
        diag = np.hypot(x1 - x0, y1 - y0)
        min_dur = spec.segment_duration[0]
        bound = 60.0 * diag / min_dur**3 * dt * 2.0  # factor 2: discretization slack
        dacc = np.linalg.norm(np.diff(seq.accelerations, axis=0), axis=-1)
        assert dacc[3:].max() <= bound

    def test_tracking_map_validation(self):
        with pytest.raises(ValueError, match="assign every defender"):
            ScenarioSpec(n_defenders=3, tracking_map=(0, 1))
        with pytest.raises(ValueError, match="valid attacker"):
            ScenarioSpec(n_defenders=2, n_attackers=2, tracking_map=(0, 5))

    def test_mask_sidecar(self, tmp_path, tiny_scenario):
        _, seq, mask = tiny_scenario
        from trajgate.data import Dataset
        data_path, mask_path = write_scenarios(Dataset(train=(seq,)), mask,
                                               tmp_path / "scen.jsonl")
        assert data_path.exists()
        assert mask_path.name == "scen.mask.json"
        import json
        assert json.loads(mask_path.read_text())["mask"] == mask.tolist()
