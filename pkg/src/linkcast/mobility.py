"""Waypoint mobility, two-ray ground propagation, and message-event sampling.

Two dataset flavors: ``rwp`` scatters independent random-waypoint walkers over
the arena; ``grouped`` moves platoon-style clusters along a shared convoy
route, each node doing small waypoint excursions around its group anchor.  A
run is single-threaded and fully determined by its seed; run several seeds in
parallel if you need throughput.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .graph import STEP_SECONDS, EdgeRecord, NodeState, Snapshot, DEFAULT_THRESHOLD_DB

# Propagation formulas use the round constant; delays use the measured one so
# a 3 km link shows the familiar ~10 us figure.
RADIO_C = 3.0e8
PROP_DELAY_C = 2.998e8

# Emission never evaluates path loss below this separation.
MIN_RADIO_DISTANCE_M = 1e-3

MOBILITY_KINDS = ("rwp", "grouped")


@dataclass
class SimConfig:
    n_nodes: int = 24
    n_steps: int = 600
    mobility: str = "rwp"
    v_max: float = 10.0
    arena_m: float = 3000.0
    n_groups: int = 3
    group_radius_m: float = 200.0
    anchor_speed_frac: float = 0.4
    frequency_hz: float = 3.0e8
    ht_m: float = 1.5
    hr_m: float = 1.5
    messages_per_pair_rate: float = 1.2
    label_threshold_db: float = DEFAULT_THRESHOLD_DB
    emit_margin_db: float = 6.0
    pause_max_s: float = 0.0
    rng_seed: int = 0

    def validate(self) -> "SimConfig":
        if self.n_nodes < 2:
            raise ValueError(f"n_nodes must be >= 2, got {self.n_nodes}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.mobility not in MOBILITY_KINDS:
            raise ValueError(f"mobility must be one of {MOBILITY_KINDS}, got {self.mobility!r}")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        if self.arena_m <= 0:
            raise ValueError("arena_m must be positive")
        if self.ht_m <= 0 or self.hr_m <= 0:
            raise ValueError("antenna heights must be positive")
        if self.messages_per_pair_rate < 0:
            raise ValueError("messages_per_pair_rate must be >= 0")
        if self.n_groups < 1 or self.n_groups > self.n_nodes:
            raise ValueError("n_groups must be in [1, n_nodes]")
        if not (0.0 < self.anchor_speed_frac < 1.0):
            raise ValueError("anchor_speed_frac must be in (0, 1)")
        if self.pause_max_s < 0:
            raise ValueError("pause_max_s must be >= 0")
        return self


def crossover_distance_m(frequency_hz: float = 3.0e8, ht_m: float = 1.5, hr_m: float = 1.5) -> float:
    """Distance where the far-field two-ray branch takes over from free space."""
    return 4.0 * np.pi * ht_m * hr_m * frequency_hz / RADIO_C


def path_loss_db(distance_m, frequency_hz: float = 3.0e8, ht_m: float = 1.5, hr_m: float = 1.5):
    """Two-ray ground-reflection path loss with a free-space near field.

    Below the crossover distance this is the Friis loss
    20*log10(4*pi*d*f/c); beyond it the ground-reflection asymptote
    40*log10(d) - 20*log10(ht*hr).  The two branches agree at the crossover.
    Accepts scalars or arrays; every distance must be positive.
    """
    d = np.asarray(distance_m, dtype=np.float64)
    if (d <= 0).any():
        raise ValueError("path_loss_db: distance must be positive")
    d_c = crossover_distance_m(frequency_hz, ht_m, hr_m)
    free = 20.0 * np.log10(4.0 * np.pi * d * frequency_hz / RADIO_C)
    far = 40.0 * np.log10(d) - 20.0 * np.log10(ht_m * hr_m)
    out = np.where(d < d_c, free, far)
    return float(out) if np.isscalar(distance_m) else out


def _fresh_speed(rng: np.random.Generator, v_cap: float) -> float:
    # uniform on (0, v_cap]; excludes the zero-speed degenerate walker
    return v_cap * (1.0 - rng.random())


@dataclass
class WaypointState:
    """Per-node waypoint bookkeeping: target point, travel speed, pause timer."""

    target: np.ndarray
    speed: np.ndarray
    pause: np.ndarray


def _step_walkers(
    pos: np.ndarray,
    state: WaypointState,
    rng: np.random.Generator,
    dt: float,
    v_cap: float,
    draw_target,
) -> None:
    """Advance waypoint walkers in place; renew target/speed/pause on arrival."""
    for i in range(pos.shape[0]):
        if state.pause[i] > 0:
            state.pause[i] = max(0.0, state.pause[i] - dt)
            continue
        delta = state.target[i] - pos[i]
        dist = float(np.hypot(delta[0], delta[1]))
        reach = state.speed[i] * dt
        if dist <= reach:
            pos[i] = state.target[i]
            state.target[i] = draw_target(i)
            state.speed[i] = _fresh_speed(rng, v_cap)
            state.pause[i] = 0.0
        else:
            pos[i] += delta * (reach / dist)


class _RandomWaypointMobility:
    def __init__(self, cfg: SimConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        n = cfg.n_nodes
        self.pos = rng.random((n, 2)) * cfg.arena_m
        self.state = WaypointState(
            target=rng.random((n, 2)) * cfg.arena_m,
            speed=np.array([_fresh_speed(rng, cfg.v_max) for _ in range(n)]),
            pause=np.zeros(n),
        )

    def _draw_target(self, i: int) -> np.ndarray:
        if self.cfg.pause_max_s > 0:
            self.state.pause[i] = self.rng.random() * self.cfg.pause_max_s
        return self.rng.random(2) * self.cfg.arena_m

    def step(self, dt: float) -> None:
        _step_walkers(self.pos, self.state, self.rng, dt, self.cfg.v_max, self._draw_target)


class _GroupedMobility:
    """Convoy motion: group anchors trace a shared route while members make
    bounded waypoint excursions around their anchor.

    Node position is anchor + offset by construction, so |node - anchor| never
    exceeds the group radius, and the anchor/offset speed split keeps total
    per-step displacement within v_max * dt.
    """

    N_ROUTE_POINTS = 8

    def __init__(self, cfg: SimConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        n, g = cfg.n_nodes, cfg.n_groups
        self.group_of = np.array([i * g // n for i in range(n)])
        self.anchor_speed = cfg.anchor_speed_frac * cfg.v_max
        offset_cap = (1.0 - cfg.anchor_speed_frac) * cfg.v_max

        lo, hi = 0.12 * cfg.arena_m, 0.88 * cfg.arena_m
        base = np.linspace([lo, lo], [hi, hi], self.N_ROUTE_POINTS)
        jitter = (rng.random((self.N_ROUTE_POINTS, 2)) - 0.5) * 0.22 * cfg.arena_m
        jitter[0] = jitter[-1] = 0.0
        self.route = np.clip(base + jitter, lo, hi)

        # platoon lanes: constant per-group shift perpendicular to the diagonal
        spacing = 2.2 * cfg.group_radius_m
        perp = np.array([1.0, -1.0]) / np.sqrt(2.0)
        self.group_shift = np.array([(k - (g - 1) / 2.0) * spacing * perp for k in range(g)])
        # stagger departure so the convoy forms a column
        self.anchor_pos = self.route[0] + self.group_shift - np.outer(
            np.arange(g) * 0.6 * spacing, np.array([1.0, 1.0]) / np.sqrt(2.0)
        )
        self.anchor_leg = np.zeros(g, dtype=int)

        self.offset = np.stack([self._disc_point() for _ in range(n)])
        self.offset_state = WaypointState(
            target=np.stack([self._disc_point() for _ in range(n)]),
            speed=np.array([_fresh_speed(rng, offset_cap) for _ in range(n)]),
            pause=np.zeros(n),
        )
        self.offset_cap = offset_cap
        self.pos = self.anchor_pos[self.group_of] + self.offset

    def _disc_point(self) -> np.ndarray:
        r = self.cfg.group_radius_m * np.sqrt(self.rng.random())
        theta = 2.0 * np.pi * self.rng.random()
        return np.array([r * np.cos(theta), r * np.sin(theta)])

    def _advance_anchors(self, dt: float) -> None:
        for k in range(self.cfg.n_groups):
            budget = self.anchor_speed * dt
            while budget > 1e-12:
                goal = self.route[self.anchor_leg[k]] + self.group_shift[k]
                delta = goal - self.anchor_pos[k]
                dist = float(np.hypot(delta[0], delta[1]))
                if dist <= budget:
                    self.anchor_pos[k] = goal
                    budget -= dist
                    self.anchor_leg[k] = (self.anchor_leg[k] + 1) % len(self.route)
                else:
                    self.anchor_pos[k] += delta * (budget / dist)
                    budget = 0.0

    def step(self, dt: float) -> None:
        self._advance_anchors(dt)
        _step_walkers(
            self.offset,
            self.offset_state,
            self.rng,
            dt,
            self.offset_cap,
            lambda i: self._disc_point(),
        )
        self.pos = self.anchor_pos[self.group_of] + self.offset


def _make_mobility(cfg: SimConfig, rng: np.random.Generator):
    if cfg.mobility == "rwp":
        return _RandomWaypointMobility(cfg, rng)
    return _GroupedMobility(cfg, rng)


def emit_snapshot(
    positions: np.ndarray,
    velocities: np.ndarray,
    cfg: SimConfig,
    t: int,
    rng: np.random.Generator,
) -> Snapshot:
    """Sample message records for every radio-eligible ordered pair.

    Pairs whose path loss is within ``emit_margin_db`` above the label
    threshold still emit records, so the features contain near-threshold
    negatives; each eligible pair draws a Poisson message count with uniform
    sub-second timestamps.
    """
    n = positions.shape[0]
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    radio_dist = np.maximum(dist, MIN_RADIO_DISTANCE_M)
    loss = path_loss_db(radio_dist, cfg.frequency_hz, cfg.ht_m, cfg.hr_m)
    eligible = loss <= cfg.label_threshold_db + cfg.emit_margin_db
    np.fill_diagonal(eligible, False)

    edges: list[EdgeRecord] = []
    src_idx, dst_idx = np.nonzero(eligible)
    counts = rng.poisson(cfg.messages_per_pair_rate * STEP_SECONDS, size=src_idx.size)
    for i, j, k in zip(src_idx, dst_idx, counts):
        for _ in range(k):
            edges.append(
                EdgeRecord(
                    src=int(i),
                    dst=int(j),
                    distance_m=float(dist[i, j]),
                    path_loss_db=float(loss[i, j]),
                    prop_delay_s=float(dist[i, j] / PROP_DELAY_C),
                    timestamp_s=float(rng.random() * STEP_SECONDS),
                )
            )
    nodes = tuple(
        NodeState(
            id=i,
            x=float(positions[i, 0]),
            y=float(positions[i, 1]),
            vx=float(velocities[i, 0]),
            vy=float(velocities[i, 1]),
        )
        for i in range(n)
    )
    return Snapshot(t=t, nodes=nodes, edges=tuple(edges))


def simulate(cfg: SimConfig) -> list[Snapshot]:
    """Run the full generator: ``n_steps`` validated snapshots, seed-determined.

    Reported node velocity is the realized displacement over the previous
    step, i.e. what an observer of positions could actually measure.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    mob = _make_mobility(cfg, rng)
    velocities = np.zeros((cfg.n_nodes, 2))
    speed_cap = cfg.v_max * STEP_SECONDS + 1e-9

    snapshots = []
    for t in range(cfg.n_steps):
        snapshots.append(emit_snapshot(mob.pos.copy(), velocities, cfg, t, rng))
        previous = mob.pos.copy()
        mob.step(STEP_SECONDS)
        moved = np.sqrt(((mob.pos - previous) ** 2).sum(axis=1))
        if (moved > speed_cap).any():
            raise AssertionError(f"step {t}: node displacement exceeded v_max * dt")
        velocities = (mob.pos - previous) / STEP_SECONDS
    return snapshots
