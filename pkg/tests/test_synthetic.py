"""Synthetic scene generator and the closed-form residual."""

import numpy as np
import pytest

from lidarmos import range_view as rv
from lidarmos import synthetic as sy
from lidarmos.errors import ConfigError, DegenerateInputError
from lidarmos.scan_io import apply_transform, load_sequence


class TestGenerate:
    def test_static_world_identical_frames(self):
        seq = sy.generate_sequence(sy.SceneSpec(frame_count=3, static_boxes=sy.static_scene().static_boxes))
        first = seq.frames[0].cloud.points
        for f in seq.frames[1:]:
            np.testing.assert_array_equal(f.cloud.points, first)
        assert not any(f.labels.moving.any() for f in seq.frames)

    def test_mover_kinematics(self):
        seq = sy.generate_sequence(sy.mover_scene(frame_count=4, mover_density=100))
        ids = seq.mover_ids[0]
        v = np.asarray(sy.default_mover().velocity)
        for a, b in zip(seq.frames[:-1], seq.frames[1:]):
            wa = apply_transform(a.cloud.xyz, a.pose.transform)
            wb = apply_transform(b.cloud.xyz, b.pose.transform)
            np.testing.assert_allclose(wb[ids] - wa[ids], np.tile(v, (ids.sum(), 1)), atol=1e-12)
            np.testing.assert_array_equal(wb[~ids], wa[~ids])

    def test_labels_mark_mover_points(self):
        seq = sy.generate_sequence(sy.mover_scene(frame_count=2, mover_density=100))
        np.testing.assert_array_equal(seq.frames[0].labels.moving, seq.mover_ids[0])
        assert set(np.unique(seq.frames[0].labels.class_id)) == {sy.GROUND_CLASS, sy.STATIC_CLASS, sy.MOVING_CLASS}

    def test_ego_motion(self):
        spec = sy.static_scene(frame_count=3, ego_speed=0.5)
        seq = sy.generate_sequence(spec)
        np.testing.assert_allclose(seq.frames[2].pose.t, [1.0, 0.0, 0.0])
        w0 = apply_transform(seq.frames[0].cloud.xyz, seq.frames[0].pose.transform)
        w2 = apply_transform(seq.frames[2].cloud.xyz, seq.frames[2].pose.transform)
        np.testing.assert_allclose(w0, w2, atol=1e-12)

    def test_deterministic(self):
        spec = sy.mover_scene(frame_count=3, mover_density=300, seed=9)
        a, b = sy.generate_sequence(spec), sy.generate_sequence(spec)
        for fa, fb in zip(a.frames, b.frames):
            assert fa.cloud.points.tobytes() == fb.cloud.points.tobytes()
            assert fa.labels.encode().tobytes() == fb.labels.encode().tobytes()

    def test_seed_changes_samples(self):
        a = sy.generate_sequence(sy.static_scene(frame_count=2, seed=0)).frames[0]
        b = sy.generate_sequence(sy.static_scene(frame_count=2, seed=1)).frames[0]
        assert not np.array_equal(a.cloud.points, b.cloud.points)

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            sy.SceneSpec(frame_count=1)
        with pytest.raises(ConfigError):
            sy.SceneSpec(mover_density=0.0)

    def test_write_round_trip(self, tmp_path):
        seq = sy.generate_sequence(sy.mover_scene(frame_count=3, mover_density=100))
        seq.write(tmp_path)
        back = load_sequence(tmp_path)
        assert len(back) == 3
        for f, g in zip(seq.frames, back):
            np.testing.assert_array_equal(g.cloud.points, f.cloud.points.astype(np.float32))
            np.testing.assert_array_equal(g.labels.moving, f.labels.moving)
            np.testing.assert_allclose(g.pose.transform, f.pose.transform, atol=1e-9)


class TestAnalyticResidual:
    def test_equal(self):
        assert sy.analytic_rv_residual(7.0, 7.0) == 0.0

    def test_arithmetic(self):
        assert sy.analytic_rv_residual(10.0, 11.0) == pytest.approx(0.1, abs=1e-15)

    @pytest.mark.parametrize("r0", [0.0, -1.0])
    def test_degenerate(self, r0):
        with pytest.raises(DegenerateInputError):
            sy.analytic_rv_residual(r0, 1.0)

    def test_pipeline_matches_on_front_face(self, kernel_backend):
        # Front face of the default mover sits at x = 8 + t; along any ray the
        # range scales with that distance, so the past range is r0 * 8 / 9.
        seq = sy.generate_sequence(sy.mover_scene(frame_count=2))
        past, cur = seq.frames
        img, idx = rv.build_range_image(cur.cloud)
        res = rv.build_rv_residual(cur, [past], current_image=img).values[..., 0]
        past_idx, _ = kernel_backend.range_index(past.cloud.points, 64, 2048, rv.RvConfig().fov_up,
                                                 rv.RvConfig().fov_down)
        xyz_c, xyz_p = cur.cloud.xyz, past.cloud.xyz

        def on_face(points, ids, x):
            hit = ids >= 0
            out = np.zeros(ids.shape, bool)
            p = points[ids[hit]]
            out[hit] = seq.mover_ids[0][ids[hit]] & (np.abs(p[:, 0] - x) < 1e-9)
            return out

        both = on_face(xyz_c, idx.idx, 9.0) & on_face(xyz_p, past_idx, 8.0)
        assert both.sum() > 100
        r0 = img.range[both]
        want = np.array([sy.analytic_rv_residual(r, r * 8.0 / 9.0) for r in r0])
        rel = np.abs(res[both] - want) / want
        assert rel.max() < 0.05
