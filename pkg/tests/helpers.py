from __future__ import annotations

import numpy as np

from drlsl.agent import QNetwork

from drlsl.road import EGO_ID, EnvSnapshot, TrackConfig, VehicleState

TRACK = TrackConfig()


def car(id_, lane, x, speed=None, length=4.5, width=1.9, dy=0.0, vy=0.0, track=TRACK):
    d = track.direction_of_lane(lane)
    v = track.speed_limit(lane) if speed is None else speed
    return VehicleState(id_, lane, x, track.lane_center(lane) + dy, length, width, d.heading * v, vy, d)


def ego(lane=5, x=400.0, speed=None, **kw):
    return car(EGO_ID, lane, x, speed, **kw)


def scene(ego_state, *traffic, frame=0):
    return EnvSnapshot(ego_state, tuple(traffic), frame)


def numeric_grads(net, s, a, y, h=1e-6):
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up, _ = net.loss_and_grads(s, a, y)
            p[i] = old - h
            down, _ = net.loss_and_grads(s, a, y)
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def grad_rel_error(seed):
    rng = np.random.default_rng(seed)
    sizes = (int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 6)), 3)
    net = QNetwork(sizes, "relu", rng)
    n = int(rng.integers(1, 6))
    s = rng.normal(size=(n, sizes[0]))
    a = rng.integers(0, 3, size=n)
    y = rng.normal(size=n)
    _, analytic = net.loss_and_grads(s, a, y)
    numeric = numeric_grads(net, s, a, y)
    da = np.concatenate([g.ravel() for g in analytic])
    dn = np.concatenate([g.ravel() for g in numeric])
    return np.linalg.norm(da - dn) / max(np.linalg.norm(da) + np.linalg.norm(dn), 1e-12)
