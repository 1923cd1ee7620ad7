"""Grid-world MDP for receive-antenna positioning under estimated CSI.

Each episode draws a fresh channel realization (one coherence block), runs
the configured estimator once on a noisy pilot frame, and exposes the
position-dependent gain computed from the estimated coefficients as the
reward.  True-channel gains are tracked separately for scoring; the agent
never sees them.  The antenna moves one grid cell per step; moves that
would leave the grid keep the current cell, so every visited position stays
strictly inside the allowed square and per-step displacement never exceeds
the grid pitch.
"""

import logging
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import channel as chan
from . import estimation as est
from . import otfs

log = logging.getLogger(__name__)


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4


# cell offsets (dx, dy) per action; UP/DOWN move along y, LEFT/RIGHT along x
_MOVES = {
    Action.UP: (0, 1),
    Action.DOWN: (0, -1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
    Action.STAY: (0, 0),
}

_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass
class MdpState:
    x: float                  # position / wavelength, in (-1, 1)
    y: float
    gain: float               # estimated gain at the current cell, normalized
    neighborhood_gain: float  # mean recorded gain of visited 8-neighbors, 0 if none
    visit_rate: float         # visits of the current cell / current step index
    center_distance: float    # euclidean distance to grid center / (lambda*sqrt(2))
    progress: float           # step / steps_per_episode
    remaining: float          # 1 - progress

    def to_vector(self) -> np.ndarray:
        return np.array(
            [self.x, self.y, self.gain, self.neighborhood_gain,
             self.visit_rate, self.center_distance, self.progress, self.remaining],
            dtype=np.float64,
        )


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class AntennaPositioningEnv:
    """Episodic antenna-positioning environment on the wavelength grid."""

    def __init__(
        self,
        frame_cfg,
        channel_cfg,
        pilot_cfg: est.PilotConfig,
        estimator: str = "sblvi",
        grid_side: int = 101,
        steps_per_episode: int = 100,
        normalize_rewards: bool = True,
        data_frames: bool = True,
        record_trajectories: bool = False,
        fixed_realization=None,
    ):
        self.frame_cfg = frame_cfg
        self.channel_cfg = channel_cfg
        self.pilot_cfg = pilot_cfg
        self.estimator = estimator
        self.grid = chan.AntennaGrid(channel_cfg.wavelength, grid_side)
        self.steps_per_episode = steps_per_episode
        self.normalize_rewards = normalize_rewards
        self.data_frames = data_frames
        self.record_trajectories = record_trajectories
        self.fixed_realization = fixed_realization

        self.trajectories = []          # one list of (x, y) per episode when recording
        self.true_realization = None
        self.estimated_realization = None
        self.episode_true_gains = []
        self.episode_estimated_gains = []
        self._positions = self.grid.positions()
        self._ix = self._iy = None
        self._step = 0
        self._visits = {}
        self._recorded = {}
        self._gain_norm = 1.0

    # -- episode control ----------------------------------------------------

    def reset(self, rng: np.random.Generator, realization=None) -> MdpState:
        """Start a coherence block: new channel, one estimation pass, random start."""
        m, n = self.frame_cfg.num_delay_bins, self.frame_cfg.num_doppler_bins
        ch = realization or self.fixed_realization
        if ch is None:
            ch = chan.sample_environment(self.channel_cfg, n, rng)
        self.true_realization = ch
        self.estimated_realization = self._estimate_csi(ch, rng)

        amps = np.abs(self.estimated_realization.coeffs())
        total = float(np.sum(amps) ** 2)
        self._gain_norm = total if total > 0 else 1.0

        self._ix = int(rng.integers(self.grid.side_count))
        self._iy = int(rng.integers(self.grid.side_count))
        self._step = 0
        self._visits = {(self._ix, self._iy): 1}
        x, y = self._xy()
        self._recorded = {(self._ix, self._iy): self._estimated_gain(x, y)}
        self.episode_true_gains = []
        self.episode_estimated_gains = []
        if self.record_trajectories:
            self.trajectories.append([(x, y)])
        return self._observe()

    def step(self, action):
        """Move one cell (clamped at the borders) and collect the gain reward."""
        action = Action(action)
        dx, dy = _MOVES[action]
        nix, niy = self._ix + dx, self._iy + dy
        if 0 <= nix < self.grid.side_count and 0 <= niy < self.grid.side_count:
            self._ix, self._iy = nix, niy
        self._step += 1

        x, y = self._xy()
        gain_norm = self._estimated_gain(x, y)
        raw_gain = gain_norm * self._gain_norm
        cell = (self._ix, self._iy)
        self._visits[cell] = self._visits.get(cell, 0) + 1
        self._recorded[cell] = gain_norm
        self.episode_true_gains.append(chan.channel_gain(x, y, self.true_realization))
        self.episode_estimated_gains.append(raw_gain)
        if self.record_trajectories:
            self.trajectories[-1].append((x, y))

        reward = gain_norm if self.normalize_rewards else raw_gain
        terminal = self._step >= self.steps_per_episode
        return self._observe(), float(reward), terminal

    # -- internals ----------------------------------------------------------

    def _xy(self):
        return float(self._positions[self._ix]), float(self._positions[self._iy])

    def _estimated_gain(self, x, y) -> float:
        return chan.channel_gain(x, y, self.estimated_realization) / self._gain_norm

    def _observe(self) -> MdpState:
        x, y = self._xy()
        lam = self.channel_cfg.wavelength
        neighbor_gains = [
            self._recorded[(self._ix + di, self._iy + dj)]
            for di, dj in _NEIGHBORS
            if (self._ix + di, self._iy + dj) in self._recorded
        ]
        progress = self._step / self.steps_per_episode
        return MdpState(
            x=x / lam,
            y=y / lam,
            gain=self._recorded[(self._ix, self._iy)],
            neighborhood_gain=float(np.mean(neighbor_gains)) if neighbor_gains else 0.0,
            visit_rate=self._visits[(self._ix, self._iy)] / max(self._step, 1),
            center_distance=math.hypot(x, y) / (lam * math.sqrt(2.0)),
            progress=progress,
            remaining=1.0 - progress,
        )

    def _estimate_csi(self, ch, rng) -> chan.ChannelRealization:
        """One pilot-frame estimation pass; falls back to raw peak reads on failure."""
        m, n = self.frame_cfg.num_delay_bins, self.frame_cfg.num_doppler_bins
        frame = est.build_pilot_frame(m, n, self.pilot_cfg, rng, with_data=self.data_frames)
        s = otfs.otfs_modulate(frame)
        r = chan.apply_channel(s, ch, m, rng=rng, add_noise=True)
        y_frame = otfs.otfs_demodulate(r, m, n)

        p = ch.num_paths
        try:
            result = _run_estimator(self.estimator, y_frame, p, self.pilot_cfg, ch.noise_variance)
            if result.h_max.size == 0:
                raise est.NumericalFailure("no paths detected")
        except (est.NumericalFailure, np.linalg.LinAlgError) as exc:
            log.warning("estimator %s failed (%s); using raw peak coefficients", self.estimator, exc)
            result = _peak_read_fallback(y_frame, p, self.pilot_cfg)

        return _match_to_known_angles(result, ch)


def _run_estimator(name, y_frame, p, pilot_cfg, noise_variance) -> est.EstimateResult:
    if name == "sblvi":
        return est.sblvi_estimate(y_frame, p, pilot_cfg)
    if name == "lmmse":
        return est.lmmse_estimate(y_frame, p, pilot_cfg, noise_variance)
    if name == "ep":
        return est.ep_threshold_estimate(y_frame, pilot_cfg, noise_variance)
    raise ValueError(f"unknown estimator {name!r}")


def _peak_read_fallback(y_frame, p, pilot_cfg) -> est.EstimateResult:
    """Read coefficients directly at the strongest window cells."""
    m, n = y_frame.shape
    l0, k0 = est.initial_peak_search(y_frame, p, pilot_cfg)
    values = y_frame[l0, k0] / pilot_cfg.amplitude
    k_off = k0.astype(float) - pilot_cfg.doppler_index
    l_off = l0.astype(float) - pilot_cfg.delay_index
    h = values * np.exp(-2j * np.pi * k_off * pilot_cfg.delay_index / (m * n))
    return est.EstimateResult(
        h_dd=est.reconstruct_dd(values, l0.astype(float), k0.astype(float), m, n),
        h_max=h, l_est=l_off, k_est=k_off, iterations=0, final_eps=np.inf,
    )


def _match_to_known_angles(result: est.EstimateResult, ch: chan.ChannelRealization):
    """Pair estimated paths with the true angle pairs by index proximity.

    Angle information is an input (acquired separately); estimated paths are
    assigned to the known paths by minimizing total |delta delay| +
    |delta Doppler|.
    """
    n_est = result.h_max.size
    true_l = ch.delays()
    true_k = ch.dopplers()
    cost = np.abs(result.l_est[:, None] - true_l[None, :]) + np.abs(
        result.k_est[:, None] - true_k[None, :]
    )
    rows, cols = linear_sum_assignment(cost)
    paths = []
    for r, c in zip(rows, cols):
        src = ch.paths[c]
        paths.append(
            chan.ChannelPath(
                delay_index=float(result.l_est[r]),
                doppler_index=float(result.k_est[r]),
                coeff=complex(result.h_max[r]),
                elevation=src.elevation,
                azimuth=src.azimuth,
            )
        )
    return chan.ChannelRealization(paths, ch.noise_variance, ch.wavelength)
