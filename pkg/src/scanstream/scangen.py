"""Synthetic ring-structured LiDAR scans from a procedural environment.

The environment is a vertical enclosure whose horizontal radius is a seeded
sum of azimuth harmonics, phase-shifted by sensor position so motion changes
what each ray hits, plus a flat ground plane below the sensor.  Rays follow
a spinning-sensor layout (rings x azimuth steps); each return is the nearer
of wall and ground along the ray, range-clamped and perturbed by clipped
Gaussian noise.

Scans are deterministic per (seed, t): environment shape derives from the
seed alone, per-scan noise from a child stream keyed by the exact bit
pattern of t, so no call order or history affects any scan.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import PointCloudScan


@dataclass(frozen=True)
class SensorProfile:
    rings: int = 32
    azimuth_steps: int = 1024
    elev_min_deg: float = -30.0
    elev_max_deg: float = 15.0
    sensor_height: float = 1.5  # meters above ground
    max_range: float = 45.0  # keeps every return inside the codec's default box
    min_range: float = 0.5
    noise_sigma: float = 0.01

    def __post_init__(self) -> None:
        if self.rings < 1 or self.azimuth_steps < 1:
            raise ValueError("rings and azimuth_steps must be >= 1")
        if self.elev_min_deg >= self.elev_max_deg:
            raise ValueError("need elev_min_deg < elev_max_deg")
        if not (0 < self.min_range < self.max_range):
            raise ValueError("need 0 < min_range < max_range")
        if self.sensor_height <= 0 or self.noise_sigma < 0:
            raise ValueError("sensor_height must be positive, noise_sigma nonnegative")

    @property
    def n_points(self) -> int:
        return self.rings * self.azimuth_steps


def _time_key(t: float) -> int:
    # exact bit pattern, so 0.1 and 0.1000000001 seed different streams
    return int(np.float64(t).view(np.uint64))


class ScanGenerator:
    """Procedural scan source; see the module docstring."""

    N_HARMONICS = 6

    def __init__(
        self,
        profile: SensorProfile = SensorProfile(),
        seed: int = 0,
        velocity: tuple[float, float] = (1.0, 0.3),
    ):
        self.profile = profile
        self.seed = int(seed)
        self.velocity = (float(velocity[0]), float(velocity[1]))
        env = np.random.default_rng(np.random.SeedSequence([self.seed, 0xE417]))
        self._r0 = env.uniform(14.0, 24.0)
        self._amps = env.uniform(0.5, 2.5, self.N_HARMONICS)
        self._freqs = env.integers(1, 9, self.N_HARMONICS)  # integer harmonics: continuous wrap
        self._phases = env.uniform(0.0, 2.0 * np.pi, self.N_HARMONICS)
        self._kx = env.uniform(0.05, 0.35, self.N_HARMONICS)
        self._ky = env.uniform(0.05, 0.35, self.N_HARMONICS)
        p = profile
        elev = np.deg2rad(np.linspace(p.elev_min_deg, p.elev_max_deg, p.rings))
        azim = 2.0 * np.pi * np.arange(p.azimuth_steps) / p.azimuth_steps
        self._cos_e = np.cos(elev)[:, None]
        self._sin_e = np.sin(elev)[:, None]
        self._cos_a = np.cos(azim)[None, :]
        self._sin_a = np.sin(azim)[None, :]
        self._azim = azim

    def _wall_radius(self, pos: tuple[float, float]) -> np.ndarray:
        r = np.full_like(self._azim, self._r0)
        for a, f, ph, kx, ky in zip(self._amps, self._freqs, self._phases, self._kx, self._ky):
            r += a * np.sin(f * self._azim + ph + kx * pos[0] + ky * pos[1])
        return np.clip(r, 4.0, self.profile.max_range - 1.0)

    def generate(self, t: float, scan_id: int) -> PointCloudScan:
        p = self.profile
        pos = (self.velocity[0] * t, self.velocity[1] * t)
        slant_wall = self._wall_radius(pos)[None, :] / self._cos_e
        with np.errstate(divide="ignore"):
            slant_ground = np.where(
                self._sin_e < 0, p.sensor_height / np.maximum(-self._sin_e, 1e-12), np.inf
            )
        rng_range = np.minimum(slant_wall, slant_ground)
        rng_range = np.clip(rng_range, p.min_range, p.max_range)
        if p.noise_sigma > 0:
            noise_rng = np.random.default_rng(np.random.SeedSequence([self.seed, _time_key(t)]))
            noise = noise_rng.normal(0.0, p.noise_sigma, rng_range.shape)
            np.clip(noise, -3.0 * p.noise_sigma, 3.0 * p.noise_sigma, out=noise)
            rng_range = np.clip(rng_range + noise, p.min_range, p.max_range)
        pts = np.empty((p.rings, p.azimuth_steps, 3))
        pts[:, :, 0] = rng_range * self._cos_e * self._cos_a
        pts[:, :, 1] = rng_range * self._cos_e * self._sin_a
        pts[:, :, 2] = rng_range * self._sin_e
        return PointCloudScan(
            points=pts.reshape(-1, 3), scan_id=scan_id, timestamp=float(t)
        )


def generate_corpus(
    profile: SensorProfile,
    seed: int,
    n_scans: int,
    scan_hz: float = 10.0,
    velocity: tuple[float, float] = (1.0, 0.3),
) -> list[PointCloudScan]:
    gen = ScanGenerator(profile, seed, velocity)
    return [gen.generate(k / scan_hz, scan_id=k) for k in range(n_scans)]
