"""Multipath delay-Doppler channel simulation and receive-position gain maps.

A channel realization is a set of P paths, each with an integer delay
index, a (possibly fractional) Doppler index, a complex coefficient, and
an elevation/azimuth angle pair describing how the receive position
shifts the path phase.  Time-domain propagation follows

    r(q) = sum_l g(l, q) * s(q - l) + w(q),
    g(l, q) = sum_{paths with delay l} h * z^(kappa * (q - l)),

with z = exp(j*2*pi/(N*M)) and s(q) = 0 for q < 0 (zero-prefix, no
cyclic wrap).  Position-dependent gain uses the field-response vector
f(x, y)[i] = exp(j*(2*pi/lambda) * rho_i(x, y)) with
rho_i = x*cos(zeta)*sin(eta) + y*sin(zeta); the scalar gain at (x, y) is
|f(x, y)^H diag(h) 1|^2, i.e. |sum_i conj(f_i) h_i|^2.
"""

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ChannelPath:
    delay_index: float      # normalized delay in bins (sampler draws integers)
    doppler_index: float    # normalized Doppler in bins, may be fractional
    coeff: complex
    elevation: float        # radians, in [-pi/2, pi/2]
    azimuth: float          # radians, in [-pi/2, pi/2]


@dataclass
class ChannelRealization:
    paths: list
    noise_variance: float
    wavelength: float

    @property
    def num_paths(self) -> int:
        return len(self.paths)

    def delays(self) -> np.ndarray:
        return np.array([p.delay_index for p in self.paths], dtype=float)

    def dopplers(self) -> np.ndarray:
        return np.array([p.doppler_index for p in self.paths], dtype=float)

    def coeffs(self) -> np.ndarray:
        return np.array([p.coeff for p in self.paths], dtype=np.complex128)

    def path_response_matrix(self) -> np.ndarray:
        """Diagonal matrix of the path coefficients."""
        return np.diag(self.coeffs())


@dataclass(frozen=True)
class AntennaGrid:
    """Cell-centered square grid of candidate receive positions.

    Positions along each axis are x_j = lambda * (-1 + (2j + 1)/side_count),
    which keeps every cell strictly inside (-lambda, lambda) and makes the
    cell pitch exactly 2*lambda/side_count.
    """

    wavelength: float
    side_count: int = 101

    @property
    def spacing(self) -> float:
        return 2.0 * self.wavelength / self.side_count

    def positions(self) -> np.ndarray:
        j = np.arange(self.side_count)
        return self.wavelength * (-1.0 + (2.0 * j + 1.0) / self.side_count)

    def position(self, i: int, j: int):
        xs = self.positions()
        return xs[i], xs[j]

    @property
    def center_index(self) -> int:
        return self.side_count // 2


def sample_environment(cfg, num_doppler_bins: int, rng: np.random.Generator) -> ChannelRealization:
    """Draw a random channel realization.

    Sampling law: integer delays uniform on [0, max_delay]; Doppler
    kappa_i = kappa_max * cos(theta_i) with theta_i uniform on [0, 2pi);
    coefficients circularly symmetric complex Gaussian with per-path power
    1/P; elevation and azimuth uniform on [-pi/2, pi/2].  Deterministic
    given the generator state.
    """
    p = int(cfg.num_paths)
    if p < 1:
        raise ValueError(f"number of paths must be >= 1, got {p}")
    if cfg.speed_kmh < 0:
        raise ValueError(f"speed must be nonnegative, got {cfg.speed_kmh}")

    kmax = cfg.kappa_max(num_doppler_bins)
    if cfg.speed_kmh == 0 and p > cfg.max_delay + 1:
        raise ValueError(
            "zero speed forces distinct integer delays; "
            f"cannot place {p} paths on {cfg.max_delay + 1} delay bins"
        )

    for _ in range(100):
        if cfg.speed_kmh == 0:
            delays = rng.choice(cfg.max_delay + 1, size=p, replace=False).astype(float)
            dopplers = np.zeros(p)
        else:
            delays = rng.integers(0, cfg.max_delay + 1, size=p).astype(float)
            dopplers = kmax * np.cos(rng.uniform(0.0, 2.0 * np.pi, size=p))
        pairs = set(zip(delays.tolist(), dopplers.tolist()))
        if len(pairs) == p:
            break
    else:
        raise ValueError("could not draw distinct (delay, Doppler) pairs")

    scale = np.sqrt(1.0 / (2.0 * p))
    coeffs = scale * (rng.standard_normal(p) + 1j * rng.standard_normal(p))
    elevations = rng.uniform(-np.pi / 2, np.pi / 2, size=p)
    azimuths = rng.uniform(-np.pi / 2, np.pi / 2, size=p)

    paths = [
        ChannelPath(delays[i], dopplers[i], complex(coeffs[i]), float(elevations[i]), float(azimuths[i]))
        for i in range(p)
    ]
    return ChannelRealization(paths, cfg.noise_variance(), cfg.wavelength)


def apply_channel(
    samples,
    realization: ChannelRealization,
    num_delay_bins: int,
    rng: np.random.Generator = None,
    add_noise: bool = False,
) -> np.ndarray:
    """Propagate a time-domain vector through the multipath channel.

    Zero-prefix convention: delayed samples with q - l < 0 contribute
    nothing (plain linear sum, no cyclic wrap).  Noise is i.i.d. complex
    Gaussian with the realization's variance when add_noise is set.
    """
    s = np.asarray(samples, dtype=np.complex128).ravel()
    total = s.size
    q = np.arange(total)
    r = np.zeros(total, dtype=np.complex128)
    for path in realization.paths:
        l = int(round(path.delay_index))
        if l >= num_delay_bins:
            raise ValueError(
                f"path delay index {l} exceeds delay grid of {num_delay_bins} bins"
            )
        shifted = np.zeros(total, dtype=np.complex128)
        shifted[l:] = s[: total - l]
        phase = np.exp(2j * np.pi * path.doppler_index * (q - l) / total)
        r += path.coeff * phase * shifted
    if add_noise and realization.noise_variance > 0:
        if rng is None:
            raise ValueError("add_noise requires a random generator")
        sigma = np.sqrt(realization.noise_variance / 2.0)
        r += sigma * (rng.standard_normal(total) + 1j * rng.standard_normal(total))
    return r


def field_response(x: float, y: float, realization: ChannelRealization) -> np.ndarray:
    """Per-path phase vector at receive position (x, y)."""
    zeta = np.array([p.elevation for p in realization.paths])
    eta = np.array([p.azimuth for p in realization.paths])
    rho = x * np.cos(zeta) * np.sin(eta) + y * np.sin(zeta)
    return np.exp(2j * np.pi * rho / realization.wavelength)


def channel_gain(x: float, y: float, realization: ChannelRealization) -> float:
    """Coherent-sum power |f(x, y)^H diag(h) 1|^2 at the receive position."""
    f = field_response(x, y, realization)
    u = np.vdot(f, realization.coeffs())
    return float(np.abs(u) ** 2)


def gain_heatmap(realization: ChannelRealization, grid: AntennaGrid) -> np.ndarray:
    """Gain over the full position grid; entry (i, j) is the gain at (x_i, y_j)."""
    xs = grid.positions()
    zeta = np.array([p.elevation for p in realization.paths])
    eta = np.array([p.azimuth for p in realization.paths])
    h = realization.coeffs()
    # rho[i, j, p] = xs[i]*cos(zeta_p)*sin(eta_p) + xs[j]*sin(zeta_p)
    rho = (
        xs[:, None, None] * (np.cos(zeta) * np.sin(eta))[None, None, :]
        + xs[None, :, None] * np.sin(zeta)[None, None, :]
    )
    u = np.exp(-2j * np.pi * rho / realization.wavelength) @ h
    return np.abs(u) ** 2
