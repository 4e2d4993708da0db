import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajgate.data import (Dataset, PlaySequence, Role, Sport, TrackingParseError,
                           TrackingSchemaError, court_bounds, derive_kinematics,
                           export_csv, ingest_tracking, normalize_attack_direction,
                           split_windows, write_tracking)

from conftest import make_straight_sequence


class TestDeriveKinematics:
    def test_linear_motion(self):
        pos = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        vel, acc = derive_kinematics(pos, 0.1)
        assert np.allclose(vel, [[10.0, 0.0]] * 3)
        assert np.allclose(acc, 0.0)

    def test_constant_positions(self):
        pos = np.ones((5, 2)) * 3.0
        vel, acc = derive_kinematics(pos, 0.1)
        assert np.all(vel == 0.0) and np.all(acc == 0.0)

    def test_quadratic_track_matches_analytic_second_derivative(self):
        # oracle: x(t) = t^2 has d2x/dt2 = 2 everywhere
        dt = 0.01
        t = np.arange(50) * dt
        pos = np.stack([t**2, np.zeros_like(t)], axis=1)
        _, acc = derive_kinematics(pos, dt)
        assert np.allclose(acc[2:, 0], 2.0, atol=10 * dt)

    def test_too_short(self):
        with pytest.raises(ValueError, match="at least 3"):
            derive_kinematics(np.zeros((2, 2)), 0.1)

    def test_bad_dt(self):
        with pytest.raises(ValueError, match="positive"):
            derive_kinematics(np.zeros((5, 2)), 0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_integration_roundtrip(self, seed):
        # derive_kinematics o (cumulative integration) recovers velocities
        rng = np.random.default_rng(seed)
        vel_true = rng.normal(size=(12, 2))
        dt = 0.1
        pos = np.concatenate([np.zeros((1, 2)), np.cumsum(vel_true * dt, axis=0)])
        vel, _ = derive_kinematics(pos, dt)
        assert np.allclose(vel[1:], vel_true, atol=1e-9)


class TestIngest:
    def test_roundtrip_writer_output(self, tmp_path):
        seqs = [make_straight_sequence(sequence_id="a", split="train"),
                make_straight_sequence(sequence_id="b", split="test")]
        path = write_tracking(seqs, tmp_path / "data.jsonl")
        ds = ingest_tracking(path)
        assert len(ds.train) == 1 and len(ds.test) == 1
        assert np.allclose(ds.train[0].positions, seqs[0].positions)

    def test_byte_equivalent_roundtrip(self, tmp_path):
        seqs = [make_straight_sequence(sequence_id="x", speed=(0.37, -1.21))]
        p1 = write_tracking(seqs, tmp_path / "one.jsonl")
        ds = ingest_tracking(p1)
        p2 = write_tracking(ds, tmp_path / "two.jsonl")
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_agent_schema_error(self, tmp_path):
        record = {"sequence_id": "s", "sport": "basketball", "fps": 10,
                  "agents": [{"id": "a", "role": "defense"}, {"id": "b", "role": "ball"}],
                  "frames": [[[0, 0], [1, 1]], [[0, 0]], [[0, 0], [1, 1]]]}
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(TrackingSchemaError, match="frame 1"):
            ingest_tracking(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        ds = ingest_tracking(path)
        assert ds.all_sequences() == []

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "malformed.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(TrackingParseError, match="line 1"):
            ingest_tracking(path)

    def test_nan_gap_dropped_with_warning(self, tmp_path):
        good = make_straight_sequence(sequence_id="good")
        record = {"sequence_id": "gap", "sport": "basketball", "fps": 10,
                  "agents": [{"id": "a", "role": "defense"}, {"id": "b", "role": "ball"}],
                  "frames": [[[0, 0], [1, 1]], [[None, 0], [1, 1]], [[0, 0], [1, 1]]]}
        path = tmp_path / "gap.jsonl"
        with path.open("w") as fh:
            fh.write(json.dumps(record) + "\n")
        write_tracking([good], tmp_path / "good.jsonl")
        with path.open("a") as fh:
            fh.write((tmp_path / "good.jsonl").read_text())
        with pytest.warns(UserWarning, match="dropping"):
            ds = ingest_tracking(path)
        assert [s.sequence_id for s in ds.all_sequences()] == ["good"]
        with pytest.raises(TrackingSchemaError):
            ingest_tracking(path, strict=True)

    def test_csv_export_columns(self, tmp_path):
        seq = make_straight_sequence(n_frames=3)
        path = export_csv([seq], tmp_path / "out.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "sequence_id,t,agent_id,role,x,y"
        assert len(lines) == 1 + 3 * seq.n_agents


class TestPlaySequence:
    def test_one_ball_required(self):
        pos = np.zeros((5, 2, 2))
        with pytest.raises(ValueError, match="ball"):
            PlaySequence.from_positions("s", Sport.BASKETBALL, pos,
                                        [Role.DEFENSE, Role.DEFENSE])

    def test_arrays_read_only(self):
        seq = make_straight_sequence()
        with pytest.raises(ValueError):
            seq.positions[0, 0, 0] = 9.9

    def test_split_ids_disjoint(self):
        a = make_straight_sequence(sequence_id="dup", split="train")
        b = make_straight_sequence(sequence_id="dup", split="val")
        with pytest.raises(ValueError, match="unique"):
            Dataset(train=(a,), val=(b,))


class TestNormalize:
    def test_left_moving_unchanged(self):
        seq = make_straight_sequence(speed=(-1.0, 0.2))
        out = normalize_attack_direction(seq)
        assert np.array_equal(out.positions, seq.positions)

    def test_mirror_involution(self):
        left = make_straight_sequence(speed=(-1.0, 0.0))
        (x0, _), (x1, _) = court_bounds(left.sport)
        mirrored_pos = left.positions.copy()
        mirrored_pos[..., 0] = (x0 + x1) - mirrored_pos[..., 0]
        right = PlaySequence.from_positions("m", left.sport, mirrored_pos, left.agent_roles)
        out = normalize_attack_direction(right)
        assert np.allclose(out.positions, left.positions, atol=1e-9)

    def test_idempotent(self):
        seq = make_straight_sequence(speed=(1.0, 0.0))
        once = normalize_attack_direction(seq)
        twice = normalize_attack_direction(once)
        assert np.array_equal(once.positions, twice.positions)

    def test_preserves_pairwise_distances(self):
        rng = np.random.default_rng(0)
        pos = rng.uniform(0, 10, size=(20, 4, 2))
        pos[:, 1, 0] += np.linspace(0, 5, 20)  # make offense move right
        seq = PlaySequence.from_positions(
            "d", Sport.BASKETBALL, pos,
            [Role.DEFENSE, Role.OFFENSE, Role.OFFENSE, Role.BALL])
        out = normalize_attack_direction(seq)
        for t in range(seq.n_frames):
            d_in = np.linalg.norm(seq.positions[t, :, None] - seq.positions[t, None], axis=-1)
            d_out = np.linalg.norm(out.positions[t, :, None] - out.positions[t, None], axis=-1)
            assert np.allclose(d_in, d_out, atol=1e-9)

    def test_unknown_sport(self):
        with pytest.raises(ValueError, match="unknown sport"):
            court_bounds("hockey")


class TestSplitWindows:
    def _dataset(self, n_frames):
        return Dataset(train=(make_straight_sequence(n_frames=n_frames),))

    def test_exact_one_window(self):
        out = split_windows(self._dataset(80), 20, 60)
        assert len(out.train) == 1 and out.train[0].n_frames == 80

    def test_two_windows(self):
        out = split_windows(self._dataset(160), 20, 60)
        assert len(out.train) == 2

    def test_short_sequence_warns(self):
        with pytest.warns(UserWarning, match="shorter"):
            out = split_windows(self._dataset(79), 20, 60)
        assert len(out.train) == 0

    def test_zero_horizon_rejected(self):
        with pytest.raises(ValueError):
            split_windows(self._dataset(80), 20, 0)

    def test_window_ids_unique(self):
        out = split_windows(self._dataset(240), 20, 60)
        ids = [w.sequence_id for w in out.train]
        assert len(set(ids)) == 3
