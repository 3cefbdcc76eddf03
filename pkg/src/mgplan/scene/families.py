"""Scripted scenario families and the rule-based expert that drives them.

The expert follows the route with an intelligent-driver-model speed law and
treats agents that occupy, or are about to cross, the route corridor as
leaders. Scenarios whose expert would collide are redrawn.
"""
import numpy as np

from mgplan.geometry import boxes_overlap, project_to_polyline
from mgplan.scene.camera import default_rig
from mgplan.scene.world import EGO_LENGTH, EGO_WIDTH, FAMILIES, Agent, Scenario

DT = 0.1
DURATION = 40.0
LANE = 3.5
COLLISION_MARGIN = 0.1


def _polyline(xs, ys):
    return np.stack([np.asarray(xs, float), np.asarray(ys, float)], -1)


def _resample(route, step=0.5):
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(route, axis=0), axis=1))])
    s = np.arange(0.0, cum[-1], step)
    s = np.append(s, cum[-1])
    return np.stack([np.interp(s, cum, route[:, 0]), np.interp(s, cum, route[:, 1])], -1)


def shifted_route(x0, x1, y_from, y_to, x_start=0.0, x_end=120.0):
    """Straight route along +x that shifts laterally from ``y_from`` to ``y_to`` over ``[x0, x1]``."""
    xs = np.arange(x_start, x_end + 1e-9, 0.5)
    f = np.clip((xs - x0) / (x1 - x0), 0.0, 1.0)
    ys = y_from + (y_to - y_from) * 0.5 * (1 - np.cos(np.pi * f))
    return _polyline(xs, ys)


def detour_route(x_obs, y_lane, offset, ramp=12.0, clear=5.0):
    xs = np.arange(0.0, 120.5, 0.5)
    up = np.clip((xs - (x_obs - clear - ramp)) / ramp, 0, 1)
    down = np.clip((xs - (x_obs + clear)) / ramp, 0, 1)
    ys = y_lane + offset * 0.5 * ((1 - np.cos(np.pi * up)) - (1 - np.cos(np.pi * down)))
    return _polyline(xs, ys)


def straight_road():
    xs = np.array([-20.0, 130.0])
    return [_polyline(xs, [-LANE / 2] * 2), _polyline(xs, [LANE / 2] * 2), _polyline(xs, [1.5 * LANE] * 2)]


def _constant_agent(kind, length, width, x0, y0, heading, speed, n):
    t = np.arange(n) * DT
    return Agent(kind, length, width, np.stack(
        [x0 + np.cos(heading) * speed * t, y0 + np.sin(heading) * speed * t, np.full(n, heading)], -1))


def _speed_profile_agent(kind, length, width, x0, y0, speeds):
    x = x0 + np.concatenate([[0.0], np.cumsum(speeds[:-1] * DT)])
    return Agent(kind, length, width, np.stack([x, np.full_like(x, y0), np.zeros_like(x)], -1))


# --- expert ---------------------------------------------------------------------

class Expert:
    v_max_accel = 2.0
    comfort_decel = 3.0
    headway = 1.0
    min_gap = 2.0
    predict = np.arange(0.5, 3.01, 0.5)

    def __init__(self, route, agents, obstacles, desired_speed):
        self.route = route
        self.cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(route, axis=0), axis=1))])
        self.agents = agents
        self.obstacles = obstacles
        self.v0 = desired_speed

    def _leaders(self, s, v, t):
        """Yield ``(gap, leader_speed)`` for everything blocking the corridor ahead."""
        for a in self.agents:
            half = a.width / 2 + EGO_WIDTH / 2 + 0.7
            reach = a.length / 2 + EGO_LENGTH / 2
            cur = a.state_at(t, DT)
            sp, d = project_to_polyline(cur[:2], self.route, self.cum)
            if abs(d) < half and s < sp < s + 50:
                nxt = a.state_at(t + DT, DT)
                sn, _ = project_to_polyline(nxt[:2], self.route, self.cum)
                yield sp - s - reach, max((sn - sp) / DT, 0.0)
                continue
            for tau in self.predict:
                p = a.state_at(t + tau, DT)
                sp, d = project_to_polyline(p[:2], self.route, self.cum)
                if abs(d) < half and s - reach < sp < s + 50:
                    if (sp - s) / max(v, 1.0) < tau + 2.5:
                        yield sp - s - reach - 1.0, 0.0
                    break
        for x, y, l, w, h in self.obstacles:
            sp, d = project_to_polyline((x, y), self.route, self.cum)
            if abs(d) < w / 2 + EGO_WIDTH / 2 + 0.5 and sp > s:
                yield sp - s - (l / 2 + EGO_LENGTH / 2), 0.0
        end = self.cum[-1]
        yield end - s + self.min_gap, 0.0

    def accel(self, s, v, t):
        a = self.v_max_accel * (1 - (v / self.v0) ** 4)
        for gap, vl in self._leaders(s, v, t):
            gap = max(gap, 0.05)
            star = self.min_gap + v * self.headway + v * (v - vl) / (2 * np.sqrt(self.v_max_accel * self.comfort_decel))
            a = min(a, self.v_max_accel * (1 - (v / self.v0) ** 4 - (max(star, 0.0) / gap) ** 2))
        return float(np.clip(a, -8.0, self.v_max_accel))

    def drive(self, v_init, n):
        s, v = 0.0, v_init
        ss, vs = [], []
        for k in range(n):
            ss.append(s)
            vs.append(v)
            a = self.accel(s, v, k * DT)
            v_new = max(0.0, v + a * DT)
            s = min(s + 0.5 * (v + v_new) * DT, self.cum[-1])
            v = v_new
        ss, vs = np.array(ss), np.array(vs)
        x = np.interp(ss, self.cum, self.route[:, 0])
        y = np.interp(ss, self.cum, self.route[:, 1])
        # heading from the route tangent at each arc length
        ds = 0.25
        xa = np.interp(np.minimum(ss + ds, self.cum[-1]), self.cum, self.route[:, 0])
        ya = np.interp(np.minimum(ss + ds, self.cum[-1]), self.cum, self.route[:, 1])
        xb = np.interp(np.maximum(ss - ds, 0.0), self.cum, self.route[:, 0])
        yb = np.interp(np.maximum(ss - ds, 0.0), self.cum, self.route[:, 1])
        heading = np.arctan2(ya - yb, xa - xb)
        return dict(t=np.arange(n) * DT, x=x, y=y, heading=heading, speed=vs)


def expert_collides(expert, agents, obstacles):
    for k in range(len(expert["t"])):
        ego = (expert["x"][k], expert["y"][k], EGO_LENGTH, EGO_WIDTH, expert["heading"][k])
        for a in agents:
            if boxes_overlap(ego, a.box_at(expert["t"][k], DT), COLLISION_MARGIN):
                return True
        for ob in obstacles:
            if boxes_overlap(ego, ob, COLLISION_MARGIN):
                return True
    return False


# --- families ----------------------------------------------------------------------

def _emergency_brake(rng, n):
    x0 = rng.uniform(14, 22)
    speeds = np.full(n, 5.0)
    t = np.arange(n) * DT
    t_brake = rng.uniform(2.0, 4.0)
    hold = rng.uniform(2.0, 3.5)
    v = 5.0
    for k in range(n):
        if t[k] < t_brake:
            v = 5.0
        elif v > 0 and t[k] < t_brake + 5.0 / 4.0 + 0.1:
            v = max(0.0, v - 4.0 * DT)
        elif t[k] < t_brake + 5.0 / 4.0 + hold:
            v = 0.0
        else:
            v = min(5.0, v + 2.0 * DT)
        speeds[k] = v
    agents = [_speed_profile_agent("vehicle", 4.5, 2.0, x0, 0.0, speeds)]
    return dict(route=_polyline([0.0, 120.0], [0.0, 0.0]), goal_s=60.0, command="straight",
                agents=agents, obstacles=[], map_polylines=straight_road())


def _obstacle_detour(rng, n):
    x_obs = rng.uniform(24, 32)
    obstacles = [[x_obs, rng.uniform(-0.3, 0.3), 4.5, 2.0, rng.uniform(-0.1, 0.1)]]
    return dict(route=detour_route(x_obs, 0.0, LANE), goal_s=60.0, command="lane_change_left",
                agents=[], obstacles=obstacles, map_polylines=straight_road())


def _unprotected_left(rng, n):
    xi = rng.uniform(26, 34)
    radius = 6.0
    xs = np.arange(0.0, xi - 3 + 1e-9, 0.5)
    straight = _polyline(xs, np.zeros_like(xs))
    ang = np.linspace(-np.pi / 2, 0.0, 20)
    cx, cy = xi - 3.0, radius
    arc = _polyline(cx + radius * np.cos(ang), cy + radius * np.sin(ang))
    ys = np.arange(radius + 0.5, 80.0, 0.5)
    north = _polyline(np.full_like(ys, xi - 3 + radius), ys)
    route = _resample(np.vstack([straight, arc[1:], north]))
    x_on = xi + rng.uniform(20, 45)
    oncoming = _constant_agent("vehicle", 4.5, 2.0, x_on, LANE, np.pi, rng.uniform(5.0, 7.0), n)
    e = xi + 1.25
    road = [
        _polyline([-20, xi - 2.25 - 1], [-LANE / 2] * 2), _polyline([-20, xi - 2.25 - 1], [1.5 * LANE] * 2),
        _polyline([xi + 4.75 + 1, 130], [-LANE / 2] * 2), _polyline([xi + 4.75 + 1, 130], [1.5 * LANE] * 2),
        _polyline([-20, 130], [LANE / 2] * 2),
        _polyline([e - LANE, e - LANE], [1.5 * LANE + 1, 90]), _polyline([e + LANE, e + LANE], [1.5 * LANE + 1, 90]),
        _polyline([e, e], [-30, 90]),
    ]
    goal = float(np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(route, axis=0), axis=1))])[-1]) - 25.0
    return dict(route=route, goal_s=goal, command="left", agents=[oncoming], obstacles=[],
                map_polylines=road)


def _merge(rng, n):
    x_end = rng.uniform(30, 40)
    route = shifted_route(x_end - 14, x_end - 2, 0.0, -LANE)
    other = _constant_agent("vehicle", 4.5, 2.0, rng.uniform(12, 22), -LANE, 0.0, rng.uniform(3.5, 5.0), n)
    road = [_polyline([-20, 130], [-1.5 * LANE] * 2), _polyline([-20, x_end], [-LANE / 2] * 2),
            _polyline([-20, x_end, x_end + 10], [LANE / 2, LANE / 2, -LANE / 2])]
    return dict(route=route, goal_s=60.0, command="lane_change_right", agents=[other], obstacles=[],
                map_polylines=road)


def _overtake(rng, n):
    x0 = rng.uniform(14, 20)
    v_slow = rng.uniform(1.0, 2.0)
    slow = _constant_agent("vehicle", 4.5, 2.0, x0, 0.0, 0.0, v_slow, n)
    x_up = x0 - rng.uniform(4, 8)
    route = detour_route(x_up + 17.0, 0.0, LANE, ramp=12.0, clear=5.0)
    # stay in the passing lane long enough to clear the slow car
    xs = route[:, 0]
    back_start = x0 + v_slow * 12.0 + 10.0
    f_up = np.clip((xs - x_up) / 10.0, 0, 1)
    f_dn = np.clip((xs - back_start) / 12.0, 0, 1)
    route[:, 1] = LANE * 0.5 * ((1 - np.cos(np.pi * f_up)) - (1 - np.cos(np.pi * f_dn)))
    return dict(route=route, goal_s=70.0, command="lane_change_left", agents=[slow], obstacles=[],
                map_polylines=straight_road())


def _pedestrian_yield(rng, n):
    xp = rng.uniform(18, 28)
    t0 = rng.uniform(0.5, 3.0)
    speed = rng.uniform(1.1, 1.5)
    t = np.arange(n) * DT
    y = -6.0 + speed * np.clip(t - t0, 0, None)
    ped = Agent("pedestrian", 0.6, 0.6, np.stack([np.full(n, xp), y, np.full(n, np.pi / 2)], -1))
    return dict(route=_polyline([0.0, 120.0], [0.0, 0.0]), goal_s=60.0, command="straight",
                agents=[ped], obstacles=[], map_polylines=straight_road())


BUILDERS = {
    "emergency_brake": _emergency_brake,
    "obstacle_detour": _obstacle_detour,
    "unprotected_left": _unprotected_left,
    "merge": _merge,
    "overtake": _overtake,
    "pedestrian_yield": _pedestrian_yield,
}


def make_scenario(family, seed, name=None, duration=DURATION, cameras=None):
    if family not in BUILDERS:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    rng = np.random.default_rng(seed)
    n = int(round(duration / DT)) + 1
    for _ in range(50):
        spec = BUILDERS[family](rng, n)
        route = _resample(spec["route"])
        v_init = float(rng.choice([0.0, 2.0, 4.0]))
        v0 = float(rng.uniform(4.5, 6.0))
        obstacles = np.asarray(spec["obstacles"], dtype=float).reshape(-1, 5)
        expert = Expert(route, spec["agents"], obstacles, v0).drive(v_init, n)
        if not expert_collides(expert, spec["agents"], obstacles):
            break
    else:
        raise RuntimeError(f"could not draw a collision-free {family} scenario for seed {seed}")
    ego = dict(x=float(expert["x"][0]), y=float(expert["y"][0]), heading=float(expert["heading"][0]),
               speed=v_init)
    return Scenario(
        name=name or f"{family}_{seed}", family=family, seed=int(seed), dt=DT, duration=duration,
        command=spec["command"], route=route, goal_s=float(spec["goal_s"]), ego=ego,
        agents=spec["agents"], obstacles=obstacles, map_polylines=spec["map_polylines"],
        cameras=cameras or default_rig(), expert=expert,
    )


def generate_scenarios(count, seed):
    """``count`` scenarios cycling through the families in order, each with its own derived seed."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [make_scenario(FAMILIES[i % len(FAMILIES)], int(seeds[i]), name=f"scn{i:04d}_{FAMILIES[i % len(FAMILIES)]}")
            for i in range(count)]
