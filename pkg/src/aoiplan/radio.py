"""C-V2X uplink channel: mobility, fading, interference, rates and AoI.

Units follow the usual link-budget conventions: powers in dBm or mW,
gains in dB or linear power ratio, distances in metres (path loss takes
kilometres), time in milliseconds for AoI and seconds for mobility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class InvalidParameter(ValueError):
    """A physical parameter lies outside its domain."""


def db_to_linear(x_db):
    return np.power(10.0, np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


def dbm_to_mw(x_dbm):
    return db_to_linear(x_dbm)


@dataclass
class ChannelParams:
    carrier_ghz: float = 2.0
    num_subchannels: int = 3
    subchannel_bandwidth_hz: float = 180e3
    noise_power_dbm: float = -114.0
    bs_height_m: float = 25.0
    cv_height_m: float = 1.5
    bs_antenna_gain_db: float = 8.0
    cv_antenna_gain_db: float = 3.0
    bs_noise_figure_db: float = 5.0
    cv_noise_figure_db: float = 9.0
    shadowing_std_db: float = 8.0
    decorrelation_distance_m: float = 50.0
    max_power_dbm: float = 30.0
    rate_floor_bps: float = 200e3
    slot_ms: float = 1.0
    budget_ms: float = 100.0
    aoi_max_ms: float = 100.0
    speed_range_mps: tuple[float, float] = (10.0, 14.0)
    large_scale_update_ms: float = 100.0
    fast_fading_update_ms: float = 1.0

    def __post_init__(self):
        positive = ("carrier_ghz", "subchannel_bandwidth_hz", "bs_height_m", "cv_height_m",
                    "shadowing_std_db", "decorrelation_distance_m", "rate_floor_bps",
                    "slot_ms", "budget_ms", "aoi_max_ms", "large_scale_update_ms",
                    "fast_fading_update_ms")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"{name} must be > 0, got {getattr(self, name)!r}")
        if int(self.num_subchannels) < 1:
            raise InvalidParameter("num_subchannels must be >= 1")
        lo, hi = self.speed_range_mps
        if not 0 < lo <= hi:
            raise InvalidParameter(f"speed_range_mps must satisfy 0 < lo <= hi, got {self.speed_range_mps}")
        self.speed_range_mps = (float(lo), float(hi))

    @property
    def noise_mw(self) -> float:
        return float(dbm_to_mw(self.noise_power_dbm))

    @property
    def max_power_mw(self) -> float:
        return float(dbm_to_mw(self.max_power_dbm))

    @property
    def slots_per_episode(self) -> int:
        return int(round(self.budget_ms / self.slot_ms))

    @property
    def fixed_gain_db(self) -> float:
        # Uplink budget: both antennas plus the BS receiver noise figure.
        return self.bs_antenna_gain_db + self.cv_antenna_gain_db - self.bs_noise_figure_db


@dataclass
class GridGeometry:
    """Manhattan grid of roads wrapped onto a torus, BS at the centre.

    With ``nx`` intersections per row the wrap period is ``(nx - 1) * dx``,
    so the last column of intersections coincides with the first one.
    """

    nx: int = 4
    ny: int = 4
    dx: float = 250.0
    dy: float = 433.0

    @property
    def width(self) -> float:
        return (self.nx - 1) * self.dx

    @property
    def height(self) -> float:
        return (self.ny - 1) * self.dy

    @property
    def bs_position(self) -> np.ndarray:
        return np.array([self.width / 2.0, self.height / 2.0])


# headings: 0=east, 1=north, 2=west, 3=south
HEADINGS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
TURN_PROBS = (0.25, 0.5, 0.25)  # left, straight, right


@dataclass
class CvRadioState:
    position: np.ndarray
    speed: float
    heading: int
    shadowing_db: float = 0.0
    large_scale_gain: float = 1.0
    fast_fading: np.ndarray = field(default_factory=lambda: np.ones(1))
    aoi_ms: float = 0.0

    def copy(self) -> "CvRadioState":
        return CvRadioState(self.position.copy(), self.speed, self.heading, self.shadowing_db,
                            self.large_scale_gain, self.fast_fading.copy(), self.aoi_ms)


@dataclass
class AllocationDecision:
    """One-hot subchannel choice (or none) and transmit power in mW."""

    subchannel: int | None
    power_mw: float

    def rho(self, num_subchannels: int) -> np.ndarray:
        out = np.zeros(num_subchannels)
        if self.subchannel is not None:
            out[self.subchannel] = 1.0
        return out


def path_loss_db(distance_km):
    """Macro-cell path loss 128.1 + 37.6 log10(d), d in km."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise InvalidParameter("distance must be > 0")
    out = 128.1 + 37.6 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def distance_3d_km(position, bs_position, bs_height, cv_height):
    pos = np.asarray(position, dtype=float)
    horiz = np.linalg.norm(pos - np.asarray(bs_position), axis=-1)
    return np.sqrt(horiz ** 2 + (bs_height - cv_height) ** 2) / 1000.0


def update_shadowing(prev_shadowing_db, displacement_m, rng, std_db=8.0, decorrelation_m=50.0):
    """Gudmundson-correlated log-normal shadowing step."""
    displacement_m = np.asarray(displacement_m, dtype=float)
    if np.any(displacement_m < 0):
        raise InvalidParameter("displacement must be >= 0")
    corr = np.exp(-displacement_m / decorrelation_m)
    innovation = rng.normal(0.0, std_db, size=np.shape(prev_shadowing_db))
    out = corr * prev_shadowing_db + np.sqrt(1.0 - corr ** 2) * innovation
    return float(out) if np.ndim(out) == 0 else out


def large_scale_gain(distance_km, shadowing_db, params: ChannelParams):
    """Linear large-scale gain alpha from path loss, shadowing and fixed gains."""
    gain_db = -path_loss_db(distance_km) - np.asarray(shadowing_db) + params.fixed_gain_db
    return db_to_linear(gain_db)


def rayleigh_power_gain(rng, size):
    """Unit-mean exponential power gain of a Rayleigh-faded channel."""
    return rng.exponential(1.0, size=size)


def channel_gain(state: CvRadioState, subchannel: int | None = None):
    """h = alpha * g for one subchannel, or for all of them."""
    if subchannel is None:
        return state.large_scale_gain * state.fast_fading
    return state.large_scale_gain * state.fast_fading[subchannel]


def instantaneous_rate(rho, power_mw, gain, interference_mw, params: ChannelParams):
    """Shannon rate per subchannel in bit/s; zero where rho is 0."""
    rho = np.asarray(rho, dtype=float)
    gain = np.asarray(gain, dtype=float)
    interference_mw = np.asarray(interference_mw, dtype=float)
    if np.any(gain < 0) or np.any(interference_mw < 0):
        raise InvalidParameter("gain and interference must be >= 0")
    sinr = rho * power_mw * gain / (interference_mw + params.noise_mw)
    return params.subchannel_bandwidth_hz * np.log2(1.0 + sinr)


def received_powers(subchannels, powers_mw, gains, num_subchannels):
    """Matrix rx[v, n] of power received at the BS from vehicle v on subchannel n.

    ``subchannels`` holds an index per vehicle, or -1 for no allocation;
    ``gains`` is the (V, N) channel gain matrix.
    """
    subchannels = np.asarray(subchannels)
    V = len(subchannels)
    rx = np.zeros((V, num_subchannels))
    active = subchannels >= 0
    idx = np.nonzero(active)[0]
    rx[idx, subchannels[idx]] = np.asarray(powers_mw, dtype=float)[idx] * np.asarray(gains)[idx, subchannels[idx]]
    return rx


def aggregate_interference(subchannels, powers_mw, gains, subchannel):
    """Interference at the BS on ``subchannel`` for each vehicle, from all others."""
    gains = np.asarray(gains, dtype=float)
    rx = received_powers(subchannels, powers_mw, gains, gains.shape[1])[:, subchannel]
    return rx.sum() - rx


def update_aoi(current_aoi, achieved_rate, allocated, rate_floor, slot_ms=1.0, aoi_max=None):
    """Age recurrence: reset to one slot on a delivered update, else grow by one slot."""
    current_aoi = np.asarray(current_aoi, dtype=float)
    ok = np.asarray(allocated, dtype=bool) & (np.asarray(achieved_rate) >= rate_floor)
    out = np.where(ok, slot_ms, current_aoi + slot_ms)
    if aoi_max is not None:
        out = np.minimum(out, aoi_max)
    return float(out) if out.ndim == 0 else out


def _turn(heading: int, rng) -> int:
    u = rng.random()
    if u < TURN_PROBS[0]:
        return (heading + 1) % 4
    if u < TURN_PROBS[0] + TURN_PROBS[1]:
        return heading
    return (heading - 1) % 4


def mobility_step(state: CvRadioState, dt_s: float, grid: GridGeometry, rng) -> CvRadioState:
    """Advance a vehicle along its lane, turning at every intersection it crosses."""
    new = state.copy()
    pos = new.position
    remaining = new.speed * dt_s
    heading = new.heading
    while remaining > 0:
        axis = 0 if heading in (0, 2) else 1
        spacing = grid.dx if axis == 0 else grid.dy
        sign = HEADINGS[heading][axis]
        coord = pos[axis]
        # distance to the next intersection ahead along the heading
        if sign > 0:
            nxt = (math.floor(coord / spacing + 1e-9) + 1) * spacing
            gap = nxt - coord
        else:
            nxt = (math.ceil(coord / spacing - 1e-9) - 1) * spacing
            gap = coord - nxt
        if gap > remaining:
            pos[axis] = coord + sign * remaining
            remaining = 0.0
        else:
            pos[axis] = nxt
            remaining -= gap
            heading = _turn(heading, rng)
    pos[0] %= grid.width
    pos[1] %= grid.height
    new.position = pos
    new.heading = heading
    return new


def random_placement(grid: GridGeometry, rng, speed_range=(10.0, 14.0)) -> CvRadioState:
    """Uniform position on the road network, random direction of travel."""
    horiz_len = grid.width * (grid.ny - 1)
    vert_len = grid.height * (grid.nx - 1)
    if rng.random() < horiz_len / (horiz_len + vert_len):
        y = rng.integers(grid.ny - 1) * grid.dy
        pos = np.array([rng.random() * grid.width, float(y)])
        heading = int(rng.choice([0, 2]))
    else:
        x = rng.integers(grid.nx - 1) * grid.dx
        pos = np.array([float(x), rng.random() * grid.height])
        heading = int(rng.choice([1, 3]))
    speed = float(rng.uniform(*speed_range))
    return CvRadioState(position=pos, speed=speed, heading=heading)


class RadioChannel:
    """Channel state of a whole fleet for one simulation run.

    Owns one RNG substream per vehicle so that each vehicle's draws are
    independent of fleet size and of the other vehicles' behaviour.
    """

    def __init__(self, params: ChannelParams, num_cvs: int, grid: GridGeometry | None = None,
                 seed: int | None = 0):
        self.params = params
        self.grid = grid or GridGeometry()
        self.num_cvs = int(num_cvs)
        root = np.random.SeedSequence(seed)
        self.rngs = [np.random.default_rng(s) for s in root.spawn(self.num_cvs)]
        self.states: list[CvRadioState] = []
        self.place_all()

    def place_all(self):
        p = self.params
        self.states = []
        for rng in self.rngs:
            st = random_placement(self.grid, rng, p.speed_range_mps)
            st.shadowing_db = float(rng.normal(0.0, p.shadowing_std_db))
            st.fast_fading = np.ones(p.num_subchannels)
            self.states.append(st)
        self._refresh_large_scale()

    def move_all(self, dt_s: float):
        p = self.params
        for i, (st, rng) in enumerate(zip(self.states, self.rngs)):
            new = mobility_step(st, dt_s, self.grid, rng)
            new.shadowing_db = update_shadowing(st.shadowing_db, st.speed * dt_s, rng,
                                                p.shadowing_std_db, p.decorrelation_distance_m)
            self.states[i] = new
        self._refresh_large_scale()

    def _refresh_large_scale(self):
        p = self.params
        pos = np.array([s.position for s in self.states]).reshape(-1, 2)
        d = distance_3d_km(pos, self.grid.bs_position, p.bs_height_m, p.cv_height_m)
        shadow = np.array([s.shadowing_db for s in self.states])
        alpha = large_scale_gain(d, shadow, p)
        for st, a in zip(self.states, np.atleast_1d(alpha)):
            st.large_scale_gain = float(a)

    def refresh_fast_fading(self):
        n = self.params.num_subchannels
        for st, rng in zip(self.states, self.rngs):
            st.fast_fading = rayleigh_power_gain(rng, n)

    def gains(self) -> np.ndarray:
        """(V, N) linear channel gains h = alpha * g."""
        return np.array([channel_gain(s) for s in self.states]).reshape(self.num_cvs, -1)

    def resolve_slot(self, subchannels, powers_mw):
        """Rates and interference for one slot given every vehicle's decision.

        Returns ``(rates, interference, rx)`` where ``rates[v]`` is the rate on
        the chosen subchannel (0 if none), ``interference[v, n]`` is what the BS
        sees from the other vehicles on subchannel ``n`` and ``rx`` the (V, N)
        received-power matrix.
        """
        p = self.params
        subchannels = np.asarray(subchannels, dtype=int)
        powers_mw = np.clip(np.asarray(powers_mw, dtype=float), 0.0, p.max_power_mw)
        h = self.gains()
        rx = received_powers(subchannels, powers_mw, h, p.num_subchannels)
        interference = rx.sum(axis=0, keepdims=True) - rx
        rates = np.zeros(self.num_cvs)
        active = np.nonzero(subchannels >= 0)[0]
        ch = subchannels[active]
        sinr = rx[active, ch] / (interference[active, ch] + p.noise_mw)
        rates[active] = p.subchannel_bandwidth_hz * np.log2(1.0 + sinr)
        return rates, interference, rx
