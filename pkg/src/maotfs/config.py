"""Experiment configuration with JSON round-tripping and content hashing.

The zero-argument defaults reproduce the reference setup: 64 x 64 frames,
a 101 x 101 receive-position grid, 28 GHz carrier with 15 kHz subcarrier
spacing, discount 0.99, exploration 1.0 decaying by 0.997 per episode,
batch 128, 100 steps per episode, 1000 episodes.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .channel import SPEED_OF_LIGHT
from .estimation import PilotConfig

ESTIMATORS = ("sblvi", "lmmse", "ep")


@dataclass
class FrameConfig:
    num_delay_bins: int = 64
    num_doppler_bins: int = 64


@dataclass
class ChannelConfig:
    num_paths: int = 4
    speed_kmh: float = 70.0
    carrier_hz: float = 28e9
    subcarrier_hz: float = 15e3
    max_delay: int = 8
    snr_db: float = 10.0

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    def doppler_hz(self) -> float:
        return (self.speed_kmh / 3.6) * self.carrier_hz / SPEED_OF_LIGHT

    def kappa_max(self, num_doppler_bins: int) -> float:
        """Largest normalized Doppler shift in bins for this speed."""
        return self.doppler_hz() * num_doppler_bins / self.subcarrier_hz

    def noise_variance(self) -> float:
        """Per-sample complex noise variance for unit-energy data symbols."""
        return 10.0 ** (-self.snr_db / 10.0)


@dataclass
class PilotSettings:
    """Raw pilot settings; None fields are derived from the frame and channel."""

    delay_index: int = None
    doppler_index: int = None
    amplitude: float = None
    guard_delay: int = None
    guard_doppler: int = None


@dataclass
class AgentConfig:
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.997
    epsilon_min: float = 0.05
    batch_size: int = 128
    steps_per_episode: int = 100
    episodes: int = 1000
    learning_rate: float = 1e-5
    target_sync: int = 100
    buffer_capacity: int = 50_000
    normalize_rewards: bool = True


@dataclass
class ExperimentConfig:
    frame: FrameConfig = field(default_factory=FrameConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    pilot: PilotSettings = field(default_factory=PilotSettings)
    agent: AgentConfig = field(default_factory=AgentConfig)
    estimator: str = "sblvi"
    grid_side: int = 101
    data_frames: bool = True

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(
                f"unknown estimator {self.estimator!r}, expected one of {ESTIMATORS}"
            )

    def pilot_config(self) -> PilotConfig:
        """Concrete pilot layout with derived guards.

        Defaults: pilot at the frame center, amplitude sqrt(10) (pilot power
        10 dB above unit-energy data), delay guard covering the maximum
        delay, Doppler guard covering ceil(kappa_max) + 1 bins.
        """
        m, n = self.frame.num_delay_bins, self.frame.num_doppler_bins
        p = self.pilot
        guard_doppler = p.guard_doppler
        if guard_doppler is None:
            guard_doppler = int(math.ceil(self.channel.kappa_max(n))) + 1
        cfg = PilotConfig(
            delay_index=p.delay_index if p.delay_index is not None else m // 2,
            doppler_index=p.doppler_index if p.doppler_index is not None else n // 2,
            amplitude=p.amplitude if p.amplitude is not None else math.sqrt(10.0),
            guard_delay=p.guard_delay if p.guard_delay is not None else self.channel.max_delay,
            guard_doppler=guard_doppler,
        )
        cfg.validate(m, n)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        sections = {
            "frame": FrameConfig,
            "channel": ChannelConfig,
            "pilot": PilotSettings,
            "agent": AgentConfig,
        }
        kwargs = {}
        for key, section_cls in sections.items():
            if key in data:
                section = data.pop(key)
                _check_keys(section, section_cls, key)
                kwargs[key] = section_cls(**section)
        _check_keys(data, cls, "config", skip=set(sections))
        kwargs.update(data)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_file(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _check_keys(section: dict, section_cls, name: str, skip=()):
    known = {f.name for f in fields(section_cls)} - set(skip)
    unknown = set(section) - known
    if unknown:
        raise ValueError(f"unknown {name} settings: {sorted(unknown)}")


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
