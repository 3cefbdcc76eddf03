import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgplan.errors import ContractError, DataError
from mgplan.geometry import ego_to_world, world_to_ego
from mgplan.scene.camera import CameraModel, default_rig, lift_waypoints, project, project_points
from mgplan.scene.families import generate_scenarios, make_scenario
from mgplan.scene.render import BASE_CHANNELS, SIGMAS, render_features, render_frame
from mgplan.scene.world import FAMILIES, Agent, Scenario, make_frame


def axis_camera(f=100.0, c=(50.0, 50.0), size=(100, 100)):
    return CameraModel(f, f, c[0], c[1], np.eye(3), np.zeros(3), size[0], size[1])


class TestProject:
    def test_hand_evaluated(self):
        assert project((1.0, 0.0, 10.0), axis_camera()) == pytest.approx((60.0, 50.0))

    def test_optical_axis_hits_principal_point(self):
        assert project((0.0, 0.0, 7.0), axis_camera()) == pytest.approx((50.0, 50.0))

    @pytest.mark.parametrize("z", [0.0, 1e-7, -3.0])
    def test_behind_or_on_plane_is_absent(self, z):
        assert project((0.0, 0.0, z), axis_camera()) is None

    def test_outside_image_is_absent(self):
        assert project((100.0, 0.0, 1.0), axis_camera()) is None

    def test_rejects_bad_rotation(self):
        with pytest.raises(ContractError):
            CameraModel(1, 1, 0, 0, np.diag([1, 1, 2.0]), np.zeros(3), 4, 4)

    def test_rig_front_camera_sees_road_ahead(self):
        front = default_rig()[0]
        uv = project((10.0, 0.0, 0.0), front)
        assert uv is not None
        assert uv[0] == pytest.approx(front.cx)
        assert uv[1] > front.cy  # ground ahead sits below the principal point

    @settings(max_examples=50, deadline=None)
    @given(st.floats(3, 30), st.floats(-5, 5), st.floats(0, 1.0))
    def test_small_moves_move_pixels_a_little(self, x, y, z):
        cam = default_rig()[0]
        eps = 1e-5
        p = np.array([[x, y, z], [x + eps, y - eps, z]])
        uv, vis = project_points(p, cam)
        if vis.all():
            # depth is at least ~1.5 m here, so the Jacobian is bounded by ~f/1.5
            assert np.linalg.norm(uv[1] - uv[0]) < 60 * eps


class TestLift:
    def test_product_count_and_xy(self):
        w = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        p = lift_waypoints(w, [0.0, 0.5, 1.0])
        assert p.shape == (9, 3)
        np.testing.assert_array_equal(p[:, :2], np.repeat(w, 3, axis=0))
        np.testing.assert_array_equal(p[::3, 2], 0.0)

    def test_empty_heights(self):
        with pytest.raises(ContractError):
            lift_waypoints(np.zeros((2, 2)), [])


def _bare_scenario(agents=(), obstacles=()):
    scn = make_scenario("pedestrian_yield", 3)
    scn.agents = list(agents)
    scn.obstacles = np.asarray(obstacles, dtype=float).reshape(-1, 5)
    return scn


class TestRender:
    def test_shapes_halve(self):
        g = render_features(make_scenario("merge", 0), 0.0)
        (v, h, w, c), (v1, h1, w1, c1) = g.maps[0].shape, g.maps[1].shape
        assert (v, c) == (3, len(BASE_CHANNELS) * len(SIGMAS)) == (v1, c1)
        assert (h1, w1) == (h // 2, w // 2)

    def test_empty_scene_has_zero_occupancy(self):
        g = render_features(_bare_scenario(), 0.0)
        for m in g.maps:
            assert np.all(m[..., : 2 * len(SIGMAS)] == 0.0)

    def test_agent_peak_at_projected_centroid(self):
        scn = _bare_scenario()
        pose = scn.expert_pose(0.0)
        center = ego_to_world(np.array([12.0, 0.0]), pose)
        states = np.tile([center[0], center[1], pose[2]], (scn.n_steps, 1))
        scn.agents = [Agent("vehicle", 4.0, 2.0, states)]
        g = render_features(scn, 0.0)
        front = scn.cameras[0]
        blurred = g.maps[0][0][..., SIGMAS.index(2.0)]
        v, u = np.unravel_index(np.argmax(blurred), blurred.shape)
        expected = project((12.0, 0.0, 0.0), front)
        assert abs(u - expected[0]) <= 1.0 and abs(v - expected[1]) <= 1.5

    def test_deterministic(self):
        a = render_features(make_scenario("overtake", 5), 1.5)
        b = render_features(make_scenario("overtake", 5), 1.5)
        for x, y in zip(a.maps, b.maps):
            assert x.tobytes() == y.tobytes()

    def test_rigid_motion_of_everything_changes_nothing(self):
        scn = make_scenario("emergency_brake", 2)
        pose = np.array([3.0, -1.0, 0.2])
        frame = make_frame(scn, 1.0, pose=pose)
        ref = render_frame(frame, scn.cameras)
        # move the world and the ego by the same rigid transform
        shift = np.array([7.0, 4.0, 0.9])

        def move(xy):
            return ego_to_world(np.asarray(xy), shift)

        moved = make_scenario("emergency_brake", 2)
        for a in moved.agents:
            a.states[:, :2] = move(a.states[:, :2])
            a.states[:, 2] += shift[2]
        moved.map_polylines = [move(p) for p in moved.map_polylines]
        moved.route = move(moved.route)
        new_pose = np.concatenate([move(pose[:2]), [pose[2] + shift[2]]])
        out = render_frame(make_frame(moved, 1.0, pose=new_pose), moved.cameras)
        for x, y in zip(ref.maps, out.maps):
            np.testing.assert_allclose(x, y, atol=1e-9)


class TestScenarios:
    def test_generation_covers_families_and_is_reproducible(self):
        a = generate_scenarios(6, 11)
        b = generate_scenarios(6, 11)
        assert sorted(s.family for s in a) == sorted(FAMILIES)
        assert [s.dumps() for s in a] == [s.dumps() for s in b]

    @pytest.mark.parametrize("family", FAMILIES)
    def test_expert_starts_at_ego_and_reaches_goal(self, family):
        scn = make_scenario(family, 7)
        s, d = scn.route_progress((scn.expert["x"][-1], scn.expert["y"][-1]))
        assert s >= scn.goal_s
        assert scn.expert["speed"].min() >= 0.0

    def test_roundtrip(self, tmp_path):
        scn = make_scenario("unprotected_left", 4)
        scn.save(tmp_path / "s.json")
        back = Scenario.load(tmp_path / "s.json")
        assert back.dumps() == scn.dumps()

    def test_bad_file(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"schema": "mgplan.scenario/1",\n "name": }')
        with pytest.raises(DataError) as e:
            Scenario.load(p)
        assert "line 2" in str(e.value)

    def test_frame_is_ego_centric(self):
        scn = make_scenario("emergency_brake", 1)
        f = make_frame(scn, 2.0)
        assert f.future.points[0] == pytest.approx([0.0, 0.0])
        lead = scn.agents[0].state_at(2.0, scn.dt)
        np.testing.assert_allclose(f.agent_boxes[0, :2], world_to_ego(lead[:2], f.pose))
